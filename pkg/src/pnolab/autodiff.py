"""Tape-based reverse-mode automatic differentiation over numpy arrays.

A :class:`Tape` records primitive applications in execution order.  Values are
plain ``float64`` / ``complex128`` arrays.  For a complex node the adjoint is
stored as ``dL/dRe + 1j * dL/dIm``, i.e. a pair of real partials packed into
one complex array; a real input feeding a complex op receives the real part.

Typical use::

    tape = Tape()
    w = tape.leaf(weights)
    x = tape.constant(inputs)
    loss = reduce_sum(multiply(w, x))
    grads = tape.backward(loss)
    grads[w]
"""
import numpy as np
from scipy.special import erf, expit

from . import fft as _fft
from .errors import ConfigurationError

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


class Var:
    """Handle to one node on a tape."""

    __slots__ = ("tape", "index")

    def __init__(self, tape, index):
        self.tape = tape
        self.index = index

    @property
    def value(self):
        return self.tape.values[self.index]

    @property
    def shape(self):
        return self.value.shape

    @property
    def requires_grad(self):
        return self.tape.requires[self.index]

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __neg__(self):
        return multiply(self, -1.0)

    def __hash__(self):
        return hash((id(self.tape), self.index))

    def __eq__(self, other):
        return isinstance(other, Var) and other.tape is self.tape and other.index == self.index

    def __repr__(self):
        return f"Var(#{self.index}, op={self.tape.ops[self.index]}, shape={self.shape})"


class Gradients(dict):
    """Mapping of node index to adjoint; also indexable by :class:`Var`."""

    def __getitem__(self, key):
        if isinstance(key, Var):
            key = key.index
        return super().__getitem__(key)

    def __contains__(self, key):
        if isinstance(key, Var):
            key = key.index
        return super().__contains__(key)


class Tape:
    """Ordered record of primitive applications.

    Node ``i`` only ever depends on nodes ``< i``, so a single reverse sweep
    visits every node once.
    """

    def __init__(self):
        self.ops = []
        self.inputs = []
        self.values = []
        self.attrs = []
        self.requires = []

    def __len__(self):
        return len(self.ops)

    def _append(self, op, inputs, value, attrs, requires):
        self.ops.append(op)
        self.inputs.append(inputs)
        self.values.append(value)
        self.attrs.append(attrs)
        self.requires.append(requires)
        return Var(self, len(self.ops) - 1)

    def leaf(self, value, requires_grad=True):
        value = _as_array(value)
        return self._append("leaf", (), value, {}, requires_grad)

    def constant(self, value):
        """A leaf that never receives a gradient (data, masks, noise)."""
        return self.leaf(value, requires_grad=False)

    def record(self, op, *inputs, **attrs):
        """Apply primitive ``op`` to ``inputs`` and append the result."""
        try:
            forward, _ = PRIMITIVES[op]
        except KeyError:
            raise ConfigurationError(
                f"unknown primitive {op!r}; known: {sorted(PRIMITIVES)}"
            ) from None
        nodes = tuple(self._lift(x) for x in inputs)
        args = [self.values[i] for i in nodes]
        value = forward(*args, **attrs)
        requires = any(self.requires[i] for i in nodes)
        return self._append(op, nodes, value, attrs, requires)

    def _lift(self, x):
        if isinstance(x, Var):
            if x.tape is not self:
                raise ConfigurationError("cannot mix nodes from different tapes")
            return x.index
        return self.constant(x).index

    def backward(self, root):
        """Adjoints of ``root`` w.r.t. every leaf that requires a gradient."""
        if not isinstance(root, Var) or root.tape is not self:
            raise ConfigurationError("root must be a node of this tape")
        if np.ndim(root.value) != 0:
            raise ConfigurationError(f"backward needs a scalar root, got shape {root.shape}")
        adjoint = {root.index: np.ones((), dtype=root.value.dtype)}
        grads = Gradients()
        for i in range(root.index, -1, -1):
            g = adjoint.pop(i, None)
            if g is None or not self.requires[i]:
                continue
            op = self.ops[i]
            if op == "leaf":
                grads[i] = g
                continue
            _, backward = PRIMITIVES[op]
            args = [self.values[j] for j in self.inputs[i]]
            parts = backward(g, self.values[i], *args, **self.attrs[i])
            for j, part in zip(self.inputs[i], parts):
                if part is None or not self.requires[j]:
                    continue
                if not np.iscomplexobj(self.values[j]) and np.iscomplexobj(part):
                    part = part.real
                if j in adjoint:
                    adjoint[j] = adjoint[j] + part
                else:
                    adjoint[j] = part
        return grads


def _as_array(value):
    arr = np.asarray(value)
    if np.iscomplexobj(arr):
        return arr.astype(np.complex128, copy=False)
    return arr.astype(np.float64, copy=False)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# primitive table: name -> (forward(*values, **attrs), backward(g, out, *values, **attrs))


def _add_bwd(g, out, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _sub_bwd(g, out, a, b):
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def _mul_bwd(g, out, a, b):
    return _unbroadcast(g * np.conj(b), a.shape), _unbroadcast(g * np.conj(a), b.shape)


def _channel_linear(x, w):
    return np.matmul(w.T, x)


def _channel_linear_bwd(g, out, x, w):
    gx = np.matmul(w, g)
    c_in, c_out = w.shape
    gw = np.tensordot(
        x.reshape(-1, c_in, x.shape[-1]), g.reshape(-1, c_out, g.shape[-1]), axes=([0, 2], [0, 2])
    )
    return gx, gw


def _by_mode(x):
    # (..., C, K) -> (K, B, C)
    return x.reshape(-1, x.shape[-2], x.shape[-1]).transpose(2, 0, 1)


def _mode_multiply(x, r):
    out = np.matmul(_by_mode(x), r.transpose(2, 0, 1))
    return out.transpose(1, 2, 0).reshape(x.shape[:-2] + (r.shape[1], x.shape[-1]))


def _mode_multiply_bwd(g, out, x, r):
    gk = _by_mode(g)
    rk = r.transpose(2, 0, 1)
    gx = np.matmul(gk, np.conj(rk).transpose(0, 2, 1))
    gx = gx.transpose(1, 2, 0).reshape(x.shape)
    gr = np.matmul(np.conj(_by_mode(x)).transpose(0, 2, 1), gk).transpose(1, 2, 0)
    return gx, gr


def _fft_real_bwd(g, out, x):
    return (_fft.fft_real_adjoint(g, x.shape[-1]),)


def _ifft_real(spec, n):
    return _fft.ifft_real(spec, n)


def _ifft_real_bwd(g, out, spec, n):
    return (_fft.ifft_real_adjoint(g, n),)


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def _gelu_bwd(g, out, x):
    cdf = 0.5 * (1.0 + erf(x / _SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return (g * (cdf + x * pdf),)


def _truncate(x, k):
    if k > x.shape[-1]:
        raise ConfigurationError(f"cannot keep {k} modes out of {x.shape[-1]}")
    return x[..., :k].copy()


def _truncate_bwd(g, out, x, k):
    full = np.zeros(x.shape, dtype=g.dtype)
    full[..., :k] = g
    return (full,)


def _pad(x, n_bins):
    if n_bins < x.shape[-1]:
        raise ConfigurationError(f"cannot pad {x.shape[-1]} modes to {n_bins}")
    full = np.zeros(x.shape[:-1] + (n_bins,), dtype=x.dtype)
    full[..., : x.shape[-1]] = x
    return full


def _pad_bwd(g, out, x, n_bins):
    return (g[..., : x.shape[-1]],)


def _reduce_sum(x, axis=None):
    return np.sum(x, axis=axis)


def _reduce_sum_bwd(g, out, x, axis=None):
    if axis is not None:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        axes = tuple(a % x.ndim for a in axes)
        g = np.expand_dims(g, axes)
    return (np.broadcast_to(g, x.shape).copy(),)


def _sqrt_bwd(g, out, x):
    return (g * 0.5 / out,)


def _l2_norm(x, weight, axes):
    return np.sqrt(weight * np.sum(x * x, axis=axes))


def _l2_norm_bwd(g, out, x, weight, axes):
    # zero norm: use the zero subgradient
    safe = np.where(out > 0.0, out, 1.0)
    scale = np.where(out > 0.0, g * weight / safe, 0.0)
    return (np.expand_dims(scale, axes) * x,)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _softplus_bwd(g, out, x):
    return (g * expit(x),)


def _reshape(x, shape):
    return x.reshape(shape)


def _reshape_bwd(g, out, x, shape):
    return (g.reshape(x.shape),)


PRIMITIVES = {
    "add": (np.add, _add_bwd),
    "subtract": (np.subtract, _sub_bwd),
    "multiply": (np.multiply, _mul_bwd),
    "channel_linear": (_channel_linear, _channel_linear_bwd),
    "mode_multiply": (_mode_multiply, _mode_multiply_bwd),
    "fft_real": (_fft.fft_real, _fft_real_bwd),
    "ifft_real": (_ifft_real, _ifft_real_bwd),
    "gelu": (_gelu, _gelu_bwd),
    "truncate_modes": (_truncate, _truncate_bwd),
    "pad_modes": (_pad, _pad_bwd),
    "reduce_sum": (_reduce_sum, _reduce_sum_bwd),
    "sqrt": (np.sqrt, _sqrt_bwd),
    "l2_norm": (_l2_norm, _l2_norm_bwd),
    "softplus": (_softplus, _softplus_bwd),
    "reshape": (_reshape, _reshape_bwd),
}


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise ConfigurationError("at least one argument must be a tape node")


def add(a, b):
    return _tape_of(a, b).record("add", a, b)


def subtract(a, b):
    return _tape_of(a, b).record("subtract", a, b)


def multiply(a, b):
    return _tape_of(a, b).record("multiply", a, b)


def channel_linear(x, w):
    """Per-point matrix across channels: (..., C_in, N) x (C_in, C_out)."""
    return _tape_of(x, w).record("channel_linear", x, w)


def mode_multiply(x, r):
    """Per-mode complex weights: (..., C_in, K) x (C_in, C_out, K)."""
    return _tape_of(x, r).record("mode_multiply", x, r)


def fft_real(x):
    return x.tape.record("fft_real", x)


def ifft_real(x, n):
    return x.tape.record("ifft_real", x, n=n)


def gelu(x):
    return x.tape.record("gelu", x)


def truncate_modes(x, k):
    return x.tape.record("truncate_modes", x, k=k)


def pad_modes(x, n_bins):
    return x.tape.record("pad_modes", x, n_bins=n_bins)


def reduce_sum(x, axis=None):
    return x.tape.record("reduce_sum", x, axis=axis)


def sqrt(x):
    return x.tape.record("sqrt", x)


def l2_norm(x, weight, axes):
    """sqrt(weight * sum(x**2)) over ``axes``; gradient 0 where the norm is 0."""
    return x.tape.record("l2_norm", x, weight=weight, axes=tuple(axes))


def softplus(x):
    return x.tape.record("softplus", x)


def reshape(x, shape):
    return x.tape.record("reshape", x, shape=tuple(shape))


def mean(x, axis=None):
    n = x.value.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return multiply(reduce_sum(x, axis), 1.0 / n)
