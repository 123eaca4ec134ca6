"""1-D multi-channel Fourier neural operator with stochastic heads.

Layout conventions: inputs are ``(B, C, N)`` arrays (channel axis holds the
time history), spectral weights are ``(C_in, C_out, K)`` complex arrays and
pointwise maps are ``(C_in, C_out)``.  Ensembles carry the member axis first,
``(M, B, C, N)``.
"""
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DegenerateEnsembleError
from .fft import check_length
from .scoring import PredictiveEnsemble

HEADS = ("deterministic", "reparam")


@dataclass
class ModelConfig:
    in_channels: int
    out_channels: int
    width: int = 16
    modes: int = 12
    layers: int = 4
    head: str = "deterministic"
    weight_dropout: float = 0.0
    fourier_dropout: float = 0.0
    std_floor: float = 1e-6

    def __post_init__(self):
        if self.head not in HEADS:
            raise ConfigurationError(f"head must be one of {HEADS}, got {self.head!r}")
        for name in ("weight_dropout", "fourier_dropout"):
            p = getattr(self, name)
            if not 0.0 <= p < 1.0:
                raise ConfigurationError(f"{name} must lie in [0, 1), got {p}")
        for name in ("in_channels", "out_channels", "width", "modes", "layers"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")

    @property
    def stochastic(self):
        return self.weight_dropout > 0 or self.fourier_dropout > 0 or self.head == "reparam"

    def to_dict(self):
        return asdict(self)


@dataclass
class SpectralLayer:
    """One Fourier block: spectral convolution plus pointwise bypass and bias."""

    spectral: object
    weight: object
    bias: object
    activation: bool = True

    @property
    def modes(self):
        return self.spectral.shape[-1]


def spectral_conv_forward(layer, v, fourier_mask=None):
    """Apply one Fourier block to the node ``v`` of shape (B, C_in, N).

    ``fourier_mask`` (already rescaled) multiplies the retained modes after the
    channel contraction; it broadcasts against ``(B, C_out, K)``.
    """
    n = v.shape[-1]
    check_length(n)
    k = layer.modes
    if k > n // 2 + 1:
        raise ConfigurationError(f"layer keeps {k} modes but N={n} only has {n // 2 + 1}")
    c_in = v.shape[-2]
    if layer.spectral.shape[0] != c_in or layer.weight.shape[0] != c_in:
        raise ConfigurationError(
            f"layer expects {layer.spectral.shape[0]} input channels, got {c_in}"
        )
    modes = ad.truncate_modes(ad.fft_real(v), k)
    modes = ad.mode_multiply(modes, layer.spectral)
    if fourier_mask is not None:
        modes = ad.multiply(modes, fourier_mask)
    spatial = ad.ifft_real(ad.pad_modes(modes, n // 2 + 1), n)
    bypass = ad.channel_linear(v, layer.weight)
    out = ad.add(ad.add(spatial, bypass), _column(layer.bias))
    return ad.gelu(out) if layer.activation else out


def _column(bias):
    if isinstance(bias, ad.Var):
        return ad.reshape(bias, (-1, 1))
    return np.reshape(bias, (-1, 1))


def dropout_mask(shape, p, rng):
    """Inverted Bernoulli mask: 0 with probability p, else 1/(1-p)."""
    if p == 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def fourier_dropout_mask(shape, p, rng):
    """Mask over the mode axis (last) shared by the channel axis (-2).

    ``shape`` is the shape of the mode array ``(..., C, K)``; the returned mask
    has shape ``(..., 1, K)``.  The DC mode is always kept.
    """
    mask_shape = tuple(shape[:-2]) + (1, shape[-1])
    mask = dropout_mask(mask_shape, p, rng)
    mask[..., 0] = 1.0
    return mask


def apply_weight_dropout(activations, p, rng):
    """Inverted dropout on an activation array."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {p}")
    activations = np.asarray(activations, dtype=np.float64)
    return activations * dropout_mask(activations.shape, p, rng)


def apply_fourier_dropout(modes, p, rng, mask=None):
    """Drop whole retained modes (shared across channels) with inverted scaling.

    ``modes`` has shape ``(..., C, K)``.  Pass ``mask`` (boolean keep-flags of
    shape ``(K,)``) to force a particular pattern; DC is kept regardless.
    """
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout rate must lie in [0, 1), got {p}")
    modes = np.asarray(modes, dtype=np.complex128)
    if mask is None:
        scale = fourier_dropout_mask(modes.shape, p, rng)
    else:
        keep = np.array(mask, dtype=bool)
        keep[0] = True
        scale = keep / (1.0 - p)
        scale[0] = 1.0
    return modes * scale


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


class OperatorModel:
    """Lifting -> Fourier blocks -> projection head(s).

    Parameters live in ``self.params`` (name -> array) in a fixed order, which
    is also the checkpoint order.
    """

    def __init__(self, config, params):
        self.config = config
        self.params = dict(params)

    @classmethod
    def initialize(cls, config, rng):
        c = config
        params = {}
        params["lift.weight"] = _uniform(rng, (c.in_channels, c.width), 1 / np.sqrt(c.in_channels))
        params["lift.bias"] = _uniform(rng, (c.width,), 1 / np.sqrt(c.in_channels))
        scale = 1.0 / (c.width * c.width)
        for i in range(c.layers):
            shape = (c.width, c.width, c.modes)
            params[f"layers.{i}.spectral"] = scale * (rng.random(shape) + 1j * rng.random(shape))
            params[f"layers.{i}.weight"] = _uniform(rng, (c.width, c.width), 1 / np.sqrt(c.width))
            params[f"layers.{i}.bias"] = _uniform(rng, (c.width,), 1 / np.sqrt(c.width))
        heads = ["mean", "prestd"] if c.head == "reparam" else ["mean"]
        for h in heads:
            params[f"head.{h}.weight"] = _uniform(rng, (c.width, c.out_channels), 1 / np.sqrt(c.width))
            params[f"head.{h}.bias"] = _uniform(rng, (c.out_channels,), 1 / np.sqrt(c.width))
        if c.head == "reparam":
            # start the std input-independent; only a real signal should make it vary
            params["head.prestd.weight"][:] = 0.0
        return cls(config, params)

    def bind(self, tape, requires_grad=True):
        """Put every parameter on ``tape`` as a leaf; returns name -> node."""
        return {name: tape.leaf(value, requires_grad) for name, value in self.params.items()}

    def layer(self, i, leaves):
        return SpectralLayer(
            leaves[f"layers.{i}.spectral"],
            leaves[f"layers.{i}.weight"],
            leaves[f"layers.{i}.bias"],
            activation=i < self.config.layers - 1,
        )

    def copy(self):
        return OperatorModel(self.config, {k: v.copy() for k, v in self.params.items()})

    def num_parameters(self):
        return int(sum(v.size * (2 if np.iscomplexobj(v) else 1) for v in self.params.values()))


def _pointwise(x, weight, bias):
    return ad.add(ad.channel_linear(x, weight), _column(bias))


def model_forward(model, a, mode="eval", rng=None, tape=None, leaves=None):
    """Run the operator on ``a`` of shape (B, C_a, N) or (C_a, N).

    In ``train`` mode the configured dropout is active and ``rng`` is
    required.  Returns the output node, or ``(mean, std)`` nodes for the
    reparameterization head.  Without ``tape`` a fresh one is created.
    """
    cfg = model.config
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"mode must be 'train' or 'eval', got {mode!r}")
    dropout = mode == "train" and (cfg.weight_dropout > 0 or cfg.fourier_dropout > 0)
    if dropout and rng is None:
        raise ConfigurationError("dropout is active but no rng was supplied")
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3 or a.shape[1] != cfg.in_channels:
        raise ConfigurationError(
            f"expected input of shape (B, {cfg.in_channels}, N), got {a.shape}"
        )
    if tape is None:
        tape = ad.Tape()
    if leaves is None:
        leaves = model.bind(tape, requires_grad=False)
    x = tape.constant(a)
    h = _pointwise(x, leaves["lift.weight"], leaves["lift.bias"])
    for i in range(cfg.layers):
        layer = model.layer(i, leaves)
        mask = None
        if dropout and cfg.fourier_dropout > 0:
            shape = (a.shape[0], cfg.width, layer.modes)
            mask = tape.constant(fourier_dropout_mask(shape, cfg.fourier_dropout, rng))
        h = spectral_conv_forward(layer, h, fourier_mask=mask)
        if dropout and cfg.weight_dropout > 0:
            h = ad.multiply(h, tape.constant(dropout_mask(h.shape, cfg.weight_dropout, rng)))
    mean = _pointwise(h, leaves["head.mean.weight"], leaves["head.mean.bias"])
    if cfg.head == "deterministic":
        return mean
    pre = _pointwise(h, leaves["head.prestd.weight"], leaves["head.prestd.bias"])
    std = ad.add(ad.softplus(pre), cfg.std_floor)
    return mean, std


def _batched(a):
    """Return (batched input, whether the caller passed a single input)."""
    a = np.asarray(a, dtype=np.float64)
    return (a[None], True) if a.ndim == 2 else (a, False)


def draw_members(model, a, m, rng, method, tape=None, leaves=None):
    """Ensemble node of shape (M, B, C_u, N) for ``method`` in {dropout, reparam}.

    Dropout sampling runs the M stochastic passes as one batched pass with an
    independent mask per replica, which is equivalent to M separate passes.
    """
    a, _ = _batched(a)
    b = a.shape[0]
    if tape is None:
        tape = ad.Tape()
    if leaves is None:
        leaves = model.bind(tape, requires_grad=False)
    if method == "dropout":
        tiled = np.broadcast_to(a, (m,) + a.shape).reshape((m * b,) + a.shape[1:])
        out = model_forward(model, tiled, "train", rng, tape, leaves)
        if isinstance(out, tuple):
            out = out[0]
        return ad.reshape(out, (m, b) + out.shape[1:])
    if method == "reparam":
        if model.config.head != "reparam":
            raise ConfigurationError("reparameterized sampling needs a reparam head")
        mean, std = model_forward(model, a, "train", rng, tape, leaves)
        eps = tape.constant(rng.standard_normal((m,) + mean.shape))
        return ad.add(mean, ad.multiply(std, eps))
    raise ConfigurationError(f"unknown sampling method {method!r}")


def _ensemble(model, a, members, length):
    _, single = _batched(a)
    values = members[:, 0] if single else members
    return PredictiveEnsemble(values, length)


def sample_pno_d(model, a, m, rng, length=1.0, allow_degenerate=False):
    """M dropout-driven forward passes for one input (C_a, N) or a batch (B, C_a, N)."""
    cfg = model.config
    if cfg.weight_dropout == 0 and cfg.fourier_dropout == 0 and not allow_degenerate:
        raise DegenerateEnsembleError(
            "both dropout rates are zero, so every member would be identical"
        )
    if cfg.weight_dropout == 0 and cfg.fourier_dropout == 0:
        out = model_forward(model, a, "eval")
        out = out[0] if isinstance(out, tuple) else out
        members = np.broadcast_to(out.value, (m,) + out.shape).copy()
    else:
        members = draw_members(model, a, m, rng, "dropout").value
    return _ensemble(model, a, members, length)


def sample_pno_r(model, a, m, rng, length=1.0, mode="eval"):
    """Mean + std * eps members from one backbone pass."""
    if model.config.head != "reparam":
        raise ConfigurationError("sample_pno_r needs a model with a reparam head")
    tape = ad.Tape()
    a_b, _ = _batched(a)
    if mode == "train":
        members = draw_members(model, a_b, m, rng, "reparam", tape).value
    else:
        mean, std = model_forward(model, a_b, "eval", None, tape)
        eps = rng.standard_normal((m,) + mean.shape)
        members = mean.value + std.value * eps
    return _ensemble(model, a, members, length)


def predict_mean_std(model, a):
    """Deterministic (mean, std) arrays of a reparam model, dropout off."""
    mean, std = model_forward(model, a, "eval")
    return mean.value, std.value
