"""Finite-difference verification of the autodiff primitives and the training losses."""
import numpy as np

from . import autodiff as ad
from .operator import ModelConfig, OperatorModel
from .training import TrainConfig, batch_loss

PRIMITIVE_TOL = 1e-5
END_TO_END_TOL = 1e-4


def _perturb_views(value):
    """Real views whose coordinates are perturbed one at a time."""
    return value.view(np.float64) if np.iscomplexobj(value) else value


def finite_difference(fn, params, step=1e-6, coords=None, rng=None):
    """Central differences of scalar ``fn(params)`` for every (or a random subset of) coordinate.

    Returns name -> (flat real indices, derivatives).
    """
    out = {}
    for name, value in params.items():
        flat = _perturb_views(value).reshape(-1)
        idx = np.arange(flat.size)
        if coords is not None and flat.size > coords:
            idx = np.sort(rng.choice(flat.size, coords, replace=False))
        d = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = fn(params)
            flat[i] = orig - step
            down = fn(params)
            flat[i] = orig
            d[j] = (up - down) / (2 * step)
        out[name] = (idx, d)
    return out


def relative_error(analytic, numeric):
    a = np.concatenate([np.ravel(x) for x in analytic])
    n = np.concatenate([np.ravel(x) for x in numeric])
    return float(np.max(np.abs(a - n)) / max(np.max(np.abs(n)), 1e-8))


def check_function(build, params, step=1e-6, coords=None, rng=None):
    """Compare tape gradients of ``build(tape, leaves) -> scalar node`` against central differences."""
    params = {k: np.array(v, copy=True) for k, v in params.items()}

    def value(p):
        tape = ad.Tape()
        leaves = {k: tape.leaf(v) for k, v in p.items()}
        return float(np.real(build(tape, leaves).value))

    tape = ad.Tape()
    leaves = {k: tape.leaf(v) for k, v in params.items()}
    grads = tape.backward(build(tape, leaves))
    fd = finite_difference(value, params, step, coords, rng)
    analytic, numeric = [], []
    for name, (idx, d) in fd.items():
        g = grads[leaves[name]] if leaves[name] in grads else np.zeros_like(params[name])
        g = np.ascontiguousarray(np.broadcast_to(g, params[name].shape).astype(params[name].dtype))
        analytic.append(_perturb_views(g).reshape(-1)[idx])
        numeric.append(d)
    return relative_error(analytic, numeric)


def _project(node, rng):
    """Scalar root: sum(node * c) with a fixed random c (real part for complex nodes)."""
    shape = node.shape
    c = rng.standard_normal(shape)
    if np.iscomplexobj(node.value):
        c = c + 1j * rng.standard_normal(shape)
        c = np.conj(c)
    return ad.reduce_sum(ad.multiply(node, c))


def _complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def primitive_cases(rng):
    """One (build, params) pair per primitive; builders draw their projection from a fixed seed."""
    b, c, n, k = 2, 3, 16, 5
    seed = int(rng.integers(2**31))

    def case(fn, **params):
        def build(tape, leaves):
            return _project(fn(leaves), np.random.default_rng(seed))

        return build, params

    x = rng.standard_normal((b, c, n))
    cases = {
        "add": case(lambda L: ad.add(L["x"], L["y"]), x=x, y=rng.standard_normal((c, 1))),
        "subtract": case(lambda L: ad.subtract(L["x"], L["y"]), x=x, y=rng.standard_normal(n)),
        "multiply": case(lambda L: ad.multiply(L["x"], L["y"]), x=_complex(rng, (b, c, k)), y=rng.standard_normal((b, 1, k))),
        "channel_linear": case(lambda L: ad.channel_linear(L["x"], L["w"]), x=x, w=rng.standard_normal((c, 4))),
        "mode_multiply": case(lambda L: ad.mode_multiply(L["x"], L["r"]), x=_complex(rng, (b, c, k)), r=_complex(rng, (c, 4, k))),
        "fft_real": case(lambda L: ad.fft_real(L["x"]), x=x),
        "ifft_real": case(lambda L: ad.ifft_real(L["s"], n), s=_complex(rng, (b, c, n // 2 + 1))),
        "gelu": case(lambda L: ad.gelu(L["x"]), x=x),
        "truncate_modes": case(lambda L: ad.truncate_modes(L["s"], k), s=_complex(rng, (b, c, n // 2 + 1))),
        "pad_modes": case(lambda L: ad.pad_modes(L["s"], n // 2 + 1), s=_complex(rng, (b, c, k))),
        "reduce_sum": case(lambda L: ad.reduce_sum(L["x"], axis=1), x=x),
        "sqrt": case(lambda L: ad.sqrt(L["x"]), x=rng.uniform(0.5, 2.0, (b, c, n))),
        "l2_norm": case(lambda L: ad.l2_norm(L["x"], 1.0 / n, (1, 2)), x=x),
        "softplus": case(lambda L: ad.softplus(L["x"]), x=3 * x),
        "reshape": case(lambda L: ad.reshape(L["x"], (b, c * n)), x=x),
    }
    return cases


def random_composition(rng):
    """A random chain of shape-preserving blocks built from the primitives, reduced by a norm."""
    b, c, n = 2, 3, 16
    k = int(rng.integers(2, n // 2 + 2))
    params = {
        "x": rng.standard_normal((b, c, n)),
        "w": rng.standard_normal((c, c)) / np.sqrt(c),
        "r": _complex(rng, (c, c, k)) / c,
        "s": rng.standard_normal((c, 1)),
    }
    blocks = rng.choice(["linear", "spectral", "gelu", "softplus", "scale", "shift"], size=int(rng.integers(3, 7)))
    final = rng.choice(["norm", "sum", "sqrt"])

    def build(tape, L):
        h = L["x"]
        for blk in blocks:
            if blk == "linear":
                h = ad.channel_linear(h, L["w"])
            elif blk == "spectral":
                s = ad.mode_multiply(ad.truncate_modes(ad.fft_real(h), k), L["r"])
                h = ad.add(h, ad.ifft_real(ad.pad_modes(s, n // 2 + 1), n))
            elif blk == "gelu":
                h = ad.gelu(h)
            elif blk == "softplus":
                h = ad.softplus(h)
            elif blk == "scale":
                h = ad.multiply(h, L["s"])
            else:
                h = ad.subtract(h, L["s"])
        if final == "norm":
            return ad.reduce_sum(ad.l2_norm(h, 1.0 / n, (1, 2)))
        if final == "sqrt":
            return ad.reduce_sum(ad.sqrt(ad.add(ad.multiply(h, h), 1.0)))
        return ad.reduce_sum(ad.multiply(h, h))

    return build, params, list(blocks) + [str(final)]


def end_to_end_case(method, seed, width=4, modes=4, n=16, m=3, batch=2, layers=2):
    """Loss of a tiny model as a function of its parameters, with frozen noise."""
    rng = np.random.default_rng(seed)
    dropout = 0.0 if method == "pno_r" else 0.2
    cfg = TrainConfig(method=method, m_train=m, width=width, modes=modes, layers=layers,
                      weight_dropout=dropout, fourier_dropout=dropout)
    mcfg = cfg.model_config(2, 1)
    model = OperatorModel.initialize(mcfg, rng)
    a = rng.standard_normal((batch, 2, n))
    u = rng.standard_normal((batch, 1, n))
    noise_seed = int(rng.integers(2**31))

    def build(tape, leaves):
        shadow = OperatorModel(mcfg, {k: v.value for k, v in leaves.items()})
        return batch_loss(shadow, cfg, a, u, np.random.default_rng(noise_seed), 1.0 / n, tape, leaves)

    return build, model.params


def run_suite(seed=0, compositions=20, methods=("pno_r", "pno_d", "mcd"), coords=None):
    """Max relative error per primitive, for random compositions and per end-to-end loss."""
    rng = np.random.default_rng(seed)
    report = {"primitives": {}, "compositions": 0.0, "end_to_end": {}}
    for name, (build, params) in primitive_cases(rng).items():
        report["primitives"][name] = check_function(build, params)
    for _ in range(compositions):
        build, params, _ = random_composition(rng)
        report["compositions"] = max(report["compositions"], check_function(build, params))
    for method in methods:
        build, params = end_to_end_case(method, int(rng.integers(2**31)))
        report["end_to_end"][method] = check_function(build, params, coords=coords, rng=rng)
    report["ok"] = (
        max(report["primitives"].values()) < PRIMITIVE_TOL
        and report["compositions"] < PRIMITIVE_TOL
        and max(report["end_to_end"].values(), default=0.0) < END_TO_END_TOL
    )
    return report
