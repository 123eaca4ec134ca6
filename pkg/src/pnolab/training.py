"""Energy-score and L2 training with Adam, global-norm clipping and early stopping."""
import json
import logging
import time
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, TrainingDivergedError
from .operator import ModelConfig, OperatorModel, draw_members, model_forward
from .scoring import energy_score_tape, l2_loss_tape

log = logging.getLogger(__name__)

METHODS = ("pno_d", "pno_r", "mcd")


@dataclass
class TrainConfig:
    method: str = "pno_r"
    m_train: int = 3
    m_eval: int = 100
    lr: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 200
    patience: int = 10
    clip_norm: float = 1.0
    seed: int = 0
    weight_dropout: float = 0.0
    fourier_dropout: float = 0.0
    modes: int = 12
    width: int = 16
    layers: int = 4
    lr_plateau_halving: bool = False
    lr_plateau_patience: int = 5

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.method in ("pno_d", "pno_r") and self.m_train < 2:
            raise ConfigurationError(
                f"{self.method} needs m_train >= 2 for the unbiased energy score, got {self.m_train}"
            )
        if self.method in ("pno_d", "mcd") and self.weight_dropout == 0 and self.fourier_dropout == 0:
            raise ConfigurationError(f"{self.method} needs a positive dropout rate")
        if self.patience < 1:
            raise ConfigurationError("patience must be >= 1")
        if self.clip_norm <= 0:
            raise ConfigurationError("clip_norm must be positive")
        if self.m_eval < 2:
            raise ConfigurationError("m_eval must be >= 2")
        if self.batch_size < 1 or self.max_epochs < 1 or self.lr <= 0:
            raise ConfigurationError("batch_size, max_epochs and lr must be positive")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"cannot read config {path}: {exc}") from None

    def to_dict(self):
        return asdict(self)

    def model_config(self, in_channels, out_channels):
        return ModelConfig(
            in_channels=in_channels,
            out_channels=out_channels,
            width=self.width,
            modes=self.modes,
            layers=self.layers,
            head="reparam" if self.method == "pno_r" else "deterministic",
            weight_dropout=self.weight_dropout,
            fourier_dropout=self.fourier_dropout,
        )


@dataclass
class OptimizerState:
    m: dict
    v: dict
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params, **kw):
        m = {k: np.zeros_like(p) for k, p in params.items()}
        v = {k: np.zeros_like(p) for k, p in params.items()}
        return cls(m, v, **kw)


def _real_view(a):
    # complex arrays are updated as interleaved (re, im) pairs
    return a.view(np.float64) if np.iscomplexobj(a) else a


def global_norm(grads):
    return float(np.sqrt(sum(np.sum(_real_view(np.ascontiguousarray(g)) ** 2) for g in grads.values())))


def clip_gradients(grads, max_norm):
    """Scale every gradient by max_norm / g when the global norm g exceeds max_norm."""
    if max_norm <= 0:
        raise ConfigurationError("max_norm must be positive")
    g = global_norm(grads)
    if g <= max_norm:
        return dict(grads), g
    scale = max_norm / g
    return {k: v * scale for k, v in grads.items()}, g


def adam_step(state, params, grads, lr):
    """In-place bias-corrected Adam update of ``params``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = _real_view(np.ascontiguousarray(grads[name]))
        m = _real_view(state.m[name])
        v = _real_view(state.v[name])
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        _real_view(p)[...] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def loss_pno(model, a, u, m_train, rng, weight, tape=None, leaves=None):
    """Batch-mean energy score of sampled ensembles against targets ``u``."""
    if m_train < 2:
        raise ConfigurationError(f"the energy-score loss needs m_train >= 2, got {m_train}")
    if tape is None:
        tape = ad.Tape()
    if leaves is None:
        leaves = model.bind(tape)
    method = "reparam" if model.config.head == "reparam" else "dropout"
    members = draw_members(model, a, m_train, rng, method, tape, leaves)
    return energy_score_tape(members, tape.constant(u), weight)


def loss_l2(model, a, u, rng, weight, tape=None, leaves=None):
    """Batch-mean L2 error of one dropout-active forward pass."""
    if tape is None:
        tape = ad.Tape()
    if leaves is None:
        leaves = model.bind(tape)
    pred = model_forward(model, a, "train", rng, tape, leaves)
    if isinstance(pred, tuple):
        pred = pred[0]
    return l2_loss_tape(pred, tape.constant(u), weight)


def batch_loss(model, config, a, u, rng, weight, tape=None, leaves=None):
    if config.method == "mcd":
        return loss_l2(model, a, u, rng, weight, tape, leaves)
    return loss_pno(model, a, u, config.m_train, rng, weight, tape, leaves)


def loss_and_grads(model, config, a, u, rng, weight):
    tape = ad.Tape()
    leaves = model.bind(tape)
    loss = batch_loss(model, config, a, u, rng, weight, tape, leaves)
    grads = tape.backward(loss)
    return float(loss.value), {name: grads[leaf] for name, leaf in leaves.items()}


def evaluate_loss(model, config, a, u, seed, weight, batch_size=None):
    """Mean loss over a split with a fixed noise stream (comparable across epochs)."""
    rng = np.random.default_rng(seed)
    batch_size = batch_size or config.batch_size
    total, count = 0.0, 0
    for start in range(0, len(a), batch_size):
        tape = ad.Tape()
        leaves = model.bind(tape, requires_grad=False)
        loss = batch_loss(model, config, a[start : start + batch_size], u[start : start + batch_size], rng, weight, tape, leaves)
        n = len(a[start : start + batch_size])
        total += float(loss.value) * n
        count += n
    return total / count


@dataclass
class FitResult:
    model: OperatorModel
    history: list
    best_epoch: int
    epochs_run: int
    seconds: float


def fit(dataset, config, model=None, on_epoch=None):
    """Train on the dataset's train split, early-stopping on its val split.

    Returns the parameters with the best validation loss.
    """
    seeds = np.random.SeedSequence(config.seed).spawn(4)
    init_rng, shuffle_rng, noise_rng = (np.random.default_rng(s) for s in seeds[:3])
    val_seed = int(seeds[3].generate_state(1)[0])
    a_train, u_train = dataset.normalized("train")
    a_val, u_val = dataset.normalized("val")
    weight = dataset.length / dataset.n
    if model is None:
        model = OperatorModel.initialize(
            config.model_config(a_train.shape[1], u_train.shape[1]), init_rng
        )
    state = OptimizerState.zeros_like(model.params)
    lr = config.lr
    best_val, best_epoch, best_params = np.inf, 0, None
    since_best, since_lr_best = 0, 0
    history = []
    start = time.perf_counter()
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(a_train))
        losses, max_clipped = [], 0.0
        for b, lo in enumerate(range(0, len(order), config.batch_size)):
            idx = order[lo : lo + config.batch_size]
            loss, grads = loss_and_grads(model, config, a_train[idx], u_train[idx], noise_rng, weight)
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch, b, loss)
            grads, _ = clip_gradients(grads, config.clip_norm)
            max_clipped = max(max_clipped, global_norm(grads))
            adam_step(state, model.params, grads, lr)
            losses.append(loss * len(idx))
        train_loss = float(np.sum(losses) / len(order))
        val_loss = evaluate_loss(model, config, a_val, u_val, val_seed, weight)
        if not np.isfinite(val_loss):
            raise TrainingDivergedError(epoch, "validation", val_loss)
        improved = val_loss < best_val
        if improved:
            best_val, best_epoch = val_loss, epoch
            best_params = {k: v.copy() for k, v in model.params.items()}
            since_best = since_lr_best = 0
        else:
            since_best += 1
            since_lr_best += 1
        if config.lr_plateau_halving and since_lr_best >= config.lr_plateau_patience:
            lr *= 0.5
            since_lr_best = 0
        row = {
            "epoch": epoch,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "lr": lr,
            "max_grad_norm": max_clipped,
            "seconds": time.perf_counter() - t0,
        }
        history.append(row)
        log.debug("epoch %d train %.6f val %.6f", epoch, train_loss, val_loss)
        if on_epoch is not None:
            on_epoch(row)
        if since_best >= config.patience:
            break
    model.params = best_params if best_params is not None else model.params
    return FitResult(model, history, best_epoch, epoch, time.perf_counter() - start)
