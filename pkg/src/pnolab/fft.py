"""Real FFT and its inverse on power-of-two grids.

All transforms act on the last axis and broadcast over leading axes.  Two
interchangeable backends compute the complex DFT: ``"numpy"`` (pocketfft,
the default) and ``"radix2"``, the iterative Cooley-Tukey transform below.
"""
from contextlib import contextmanager
from functools import lru_cache

import numpy as np

from .errors import ConfigurationError

BACKENDS = ("numpy", "radix2")
_backend = "numpy"


def set_backend(name):
    global _backend
    if name not in BACKENDS:
        raise ConfigurationError(f"unknown FFT backend {name!r}; use one of {BACKENDS}")
    _backend = name


def get_backend():
    return _backend


@contextmanager
def backend(name):
    previous = _backend
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def check_length(n):
    if n < 2 or n & (n - 1):
        raise ConfigurationError(f"FFT length must be a power of two >= 2, got {n}")


@lru_cache(maxsize=None)
def _bit_reversal(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


@lru_cache(maxsize=None)
def _twiddles(size):
    return np.exp(-2j * np.pi * np.arange(size // 2) / size)


def fft(x):
    """Forward complex DFT, X_k = sum_n x_n exp(-2 pi i k n / N)."""
    x = np.asarray(x, dtype=np.complex128)
    check_length(x.shape[-1])
    if _backend == "numpy":
        return np.fft.fft(x, axis=-1)
    return fft_radix2(x)


def fft_radix2(x):
    """Iterative radix-2 decimation-in-time FFT."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    check_length(n)
    lead = x.shape[:-1]
    y = x[..., _bit_reversal(n)]
    size = 2
    while size <= n:
        half = size // 2
        y = y.reshape(*lead, n // size, size)
        even = y[..., :half]
        odd = y[..., half:] * _twiddles(size)
        y = np.concatenate([even + odd, even - odd], axis=-1)
        size *= 2
    return y.reshape(*lead, n)


def fft_real(x):
    """Half spectrum of a real signal: bins 0..N/2 of the DFT."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    check_length(n)
    if _backend == "numpy":
        return np.fft.rfft(x, axis=-1)
    return fft_radix2(x)[..., : n // 2 + 1]


def _hermitian_weights(n):
    c = np.full(n // 2 + 1, 2.0)
    c[0] = 1.0
    c[-1] = 1.0
    return c


def ifft_real(spectrum, n):
    """Inverse of :func:`fft_real`.

    The imaginary parts of the DC and Nyquist bins do not contribute
    (they are discarded, as for any real signal).
    """
    spectrum = np.asarray(spectrum, dtype=np.complex128)
    check_length(n)
    if spectrum.shape[-1] != n // 2 + 1:
        raise ConfigurationError(
            f"spectrum has {spectrum.shape[-1]} bins, expected {n // 2 + 1} for N={n}"
        )
    if _backend == "numpy":
        # pocketfft's c2r also discards the DC / Nyquist imaginary parts
        return np.fft.irfft(spectrum, n=n, axis=-1)
    full = np.zeros(spectrum.shape[:-1] + (n,), dtype=np.complex128)
    full[..., : n // 2 + 1] = spectrum * _hermitian_weights(n)
    # sum_k c_k X_k e^{+2 pi i k n/N} == conj(FFT(conj(.)))
    return np.real(fft_radix2(np.conj(full))) / n


def fft_real_adjoint(grad_spectrum, n):
    """Gradient of a real loss w.r.t. the input of :func:`fft_real`.

    ``grad_spectrum`` holds dL/dRe + i dL/dIm for every bin.
    """
    if _backend == "numpy":
        # Re(sum_k G_k e^{+2 pi i k n/N}) == n * irfft of G with unit Hermitian weights
        g = grad_spectrum / _hermitian_weights(n)
        return n * np.fft.irfft(g, n=n, axis=-1)
    full = np.zeros(grad_spectrum.shape[:-1] + (n,), dtype=np.complex128)
    full[..., : n // 2 + 1] = grad_spectrum
    return np.real(fft_radix2(np.conj(full)))


def ifft_real_adjoint(grad_signal, n):
    """Gradient of a real loss w.r.t. the spectrum fed to :func:`ifft_real`."""
    return fft_real(grad_signal) * (_hermitian_weights(n) / n)


def naive_dft(x):
    """O(N^2) reference DFT, used as an independent oracle."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    k = np.arange(n)
    mat = np.exp(-2j * np.pi * np.outer(k, k) / n)
    return x @ mat.T
