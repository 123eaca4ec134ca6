"""Synthetic PDE data: Kuramoto-Sivashinsky trajectories, heat-equation
solutions and a linear-Gaussian functional benchmark, plus windowing,
normalization and on-disk datasets."""
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import BlowUpError, ConfigurationError
from .fft import check_length
from .scoring import GridFunction
from .tensorio import load_tensor, save_tensor

GENERATORS = ("ks", "gaussian", "heat")
STD_FLOOR = 1e-12


@dataclass
class Trajectory:
    """Saved frames ``u`` of shape (T+1, N) (or (B, T+1, N) for a batch)."""

    u: np.ndarray
    dt: float
    length: float
    frame_every: int = 1
    t0: int = 0

    @property
    def frame_dt(self):
        return self.dt * self.frame_every

    @property
    def times(self):
        return self.frame_dt * np.arange(self.u.shape[-2])


class KSSolver:
    """ETDRK4 integrator for u_t = -u u_x - u_xx - u_xxxx on [0, L) periodic.

    Coefficients follow the contour-integral evaluation of the phi-functions
    (``contour_points`` points on the unit circle around each h*lambda).
    """

    def __init__(self, n, length, dt, contour_points=32):
        check_length(n)
        if dt <= 0 or length <= 0:
            raise ConfigurationError("dt and domain length must be positive")
        self.n, self.length, self.dt = n, length, dt
        k = np.arange(n // 2 + 1)
        q = 2.0 * np.pi * k / length
        lam = q**2 - q**4
        self.E = np.exp(dt * lam)
        self.E2 = np.exp(dt * lam / 2.0)
        r = np.exp(1j * np.pi * (np.arange(1, contour_points + 1) - 0.5) / (contour_points / 2))
        lr = dt * lam[:, None] + r[None, :]
        elr = np.exp(lr)
        self.Q = dt * np.real(np.mean((np.exp(lr / 2.0) - 1.0) / lr, axis=1))
        self.f1 = dt * np.real(np.mean((-4.0 - lr + elr * (4.0 - 3.0 * lr + lr**2)) / lr**3, axis=1))
        self.f2 = dt * np.real(np.mean((2.0 + lr + elr * (lr - 2.0)) / lr**3, axis=1))
        self.f3 = dt * np.real(np.mean((-4.0 - 3.0 * lr - lr**2 + elr * (4.0 - lr)) / lr**3, axis=1))
        qd = q.copy()
        qd[-1] = 0.0  # Nyquist carries no odd derivative
        dealias = k < n / 3.0
        self.g = -0.5j * qd * dealias

    def nonlinear(self, v):
        u = np.fft.irfft(v, n=self.n)
        return self.g * np.fft.rfft(u * u)

    def step(self, v):
        nv = self.nonlinear(v)
        a = self.E2 * v + self.Q * nv
        na = self.nonlinear(a)
        b = self.E2 * v + self.Q * na
        nb = self.nonlinear(b)
        c = self.E2 * a + self.Q * (2.0 * nb - nv)
        nc = self.nonlinear(c)
        return self.E * v + nv * self.f1 + 2.0 * (na + nb) * self.f2 + nc * self.f3


def simulate_ks(u0, n_steps, dt, length=100.0, save_every=1, burn_in_steps=0):
    """Integrate from ``u0`` ((N,) or (B, N)); keeps every ``save_every``-th step.

    ``burn_in_steps`` are integrated first and discarded.
    """
    u0 = np.asarray(getattr(u0, "values", u0), dtype=np.float64)
    solver = KSSolver(u0.shape[-1], length, dt)
    v = np.fft.rfft(u0)
    for s in range(burn_in_steps):
        v = solver.step(v)
        if not np.all(np.isfinite(v)):
            raise BlowUpError(s + 1)
    frames = [np.fft.irfft(v, n=u0.shape[-1])]
    for s in range(1, n_steps + 1):
        v = solver.step(v)
        if not np.all(np.isfinite(v)):
            raise BlowUpError(burn_in_steps + s)
        if s % save_every == 0:
            frames.append(np.fft.irfft(v, n=u0.shape[-1]))
    u = np.stack(frames, axis=-2)
    return Trajectory(u, dt, length, save_every, burn_in_steps)


def grid(n, length):
    return length * np.arange(n) / n


def heat_analytic(k, t, n, length):
    """exp(-(2 pi k / L)^2 t) sin(2 pi k x / L) on the grid."""
    if not 0 <= k < n // 2:
        raise ConfigurationError(f"wavenumber must satisfy 0 <= k < N/2, got {k}")
    q = 2.0 * np.pi * k / length
    return GridFunction(np.exp(-q * q * t) * np.sin(q * grid(n, length)), length)


def random_bandlimited(rng, n_samples, n, k_max):
    """Fields with i.i.d. standard-normal Fourier coefficients for modes < k_max,
    scaled to unit pointwise variance."""
    if not 1 <= k_max <= n // 2:
        raise ConfigurationError(f"band limit must satisfy 1 <= K <= N/2, got {k_max}")
    spec = np.zeros((n_samples, n // 2 + 1), dtype=np.complex128)
    spec[:, :k_max] = rng.standard_normal((n_samples, k_max)) + 1j * rng.standard_normal(
        (n_samples, k_max)
    )
    spec[:, 0] = spec[:, 0].real
    # n * irfft = X_0 + 2 sum_k Re(X_k e^{i theta}): variance 1 + 4 (k_max - 1)
    return np.fft.irfft(spec, n=n) * n / np.sqrt(1.0 + 4.0 * (k_max - 1))


def lowpass_halve(a, k_smooth):
    """Keep modes < k_smooth / 2 and multiply by one half."""
    spec = np.fft.rfft(a, axis=-1)
    spec[..., int(np.ceil(k_smooth / 2)) :] = 0.0
    return 0.5 * np.fft.irfft(spec, n=a.shape[-1], axis=-1)


@dataclass
class Normalizer:
    """Per-channel z-score statistics; channel axis is -2."""

    mean: np.ndarray
    std: np.ndarray
    floored: list = field(default_factory=list)

    @classmethod
    def fit(cls, x):
        mean = x.mean(axis=(0, 2))
        std = x.std(axis=(0, 2))
        floored = [int(i) for i in np.nonzero(std < STD_FLOOR)[0]]
        std = np.where(std < STD_FLOOR, 1.0, std)
        return cls(mean, std, floored)

    def normalize(self, x):
        return (x - self.mean[:, None]) / self.std[:, None]

    def denormalize(self, z):
        return z * self.std[:, None] + self.mean[:, None]

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "floored": self.floored}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["mean"]), np.array(d["std"]), list(d.get("floored", [])))


def split_sizes(n, fractions=(0.8, 0.1, 0.1)):
    n_train = int(round(n * fractions[0]))
    n_val = int(round(n * fractions[1]))
    return {"train": n_train, "val": n_val, "test": n - n_train - n_val}


@dataclass
class Dataset:
    """Input/target pairs in physical units with training-split normalization.

    Samples are split contiguously into train / val / test in that order.
    """

    inputs: np.ndarray
    targets: np.ndarray
    length: float
    splits: dict
    input_norm: Normalizer = None
    target_norm: Normalizer = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.inputs.shape[0] != self.targets.shape[0]:
            raise ConfigurationError("inputs and targets must have equal sample counts")
        if sum(self.splits.values()) != self.inputs.shape[0]:
            raise ConfigurationError("split sizes must add up to the sample count")
        if self.input_norm is None:
            train = self.indices("train")
            self.input_norm = Normalizer.fit(self.inputs[train])
            self.target_norm = Normalizer.fit(self.targets[train])

    @property
    def n_samples(self):
        return self.inputs.shape[0]

    @property
    def n(self):
        return self.inputs.shape[-1]

    def indices(self, split):
        if split == "all":
            return slice(0, self.n_samples)
        start = 0
        for name in ("train", "val", "test"):
            if name == split:
                return slice(start, start + self.splits[name])
            start += self.splits[name]
        raise ConfigurationError(f"unknown split {split!r}")

    def normalized(self, split):
        """(inputs, targets) of ``split`` in normalized units."""
        idx = self.indices(split)
        return (
            self.input_norm.normalize(self.inputs[idx]),
            self.target_norm.normalize(self.targets[idx]),
        )

    def raw(self, split):
        idx = self.indices(split)
        return self.inputs[idx], self.targets[idx]

    def manifest(self):
        return {
            "n_samples": int(self.n_samples),
            "input_shape": list(self.inputs.shape),
            "target_shape": list(self.targets.shape),
            "length": float(self.length),
            "splits": dict(self.splits),
            "normalization": {
                "inputs": self.input_norm.to_dict(),
                "targets": self.target_norm.to_dict(),
            },
            **self.meta,
        }


def make_dataset(trajectories, t_in, t_out, stride=1, fractions=(0.8, 0.1, 0.1), meta=None, length=None):
    """Sliding windows of ``t_in`` input frames followed by ``t_out`` target frames.

    ``trajectories`` is a :class:`Trajectory` (single or batched) or a list of
    them.  ``length`` overrides the domain length used by the norms.
    """
    if isinstance(trajectories, Trajectory):
        trajectories = [trajectories]
    if not trajectories:
        raise ConfigurationError("no trajectories given")
    if t_in < 1 or t_out < 1 or stride < 1:
        raise ConfigurationError("t_in, t_out and stride must be positive")
    frames = []
    for traj in trajectories:
        u = traj.u if traj.u.ndim == 3 else traj.u[None]
        frames.extend(u)
    inputs, targets = [], []
    for u in frames:
        n_frames = u.shape[0]
        if n_frames < t_in + t_out:
            raise ConfigurationError(
                f"trajectory has {n_frames} frames, windows need {t_in + t_out}"
            )
        for start in range(0, n_frames - t_in - t_out + 1, stride):
            inputs.append(u[start : start + t_in])
            targets.append(u[start + t_in : start + t_in + t_out])
    inputs = np.stack(inputs)
    targets = np.stack(targets)
    return Dataset(
        inputs,
        targets,
        trajectories[0].length if length is None else length,
        split_sizes(len(inputs), fractions),
        meta=dict(meta or {}),
    )


def gaussian_functional_benchmark(n_samples, n, k_smooth, sigma_eta, rng, length=1.0, fractions=(0.8, 0.1, 0.1)):
    """u = A a + eta with A the low-pass-and-halve operator and eta ~ N(0, sigma_eta^2) pointwise."""
    check_length(n)
    if sigma_eta < 0:
        raise ConfigurationError("sigma_eta must be non-negative")
    a = random_bandlimited(rng, n_samples, n, k_smooth)
    mean = lowpass_halve(a, k_smooth)
    u = mean + sigma_eta * rng.standard_normal(mean.shape)
    meta = {"k_smooth": int(k_smooth), "sigma_eta": float(sigma_eta)}
    return Dataset(a[:, None, :], u[:, None, :], length, split_sizes(n_samples, fractions), meta=meta)


def heat_benchmark(n_samples, n, k_max, t, rng, length=1.0, fractions=(0.8, 0.1, 0.1)):
    """Band-limited initial fields mapped to their exact heat-equation solution at time t."""
    a = random_bandlimited(rng, n_samples, n, k_max)
    q = 2.0 * np.pi * np.arange(n // 2 + 1) / length
    u = np.fft.irfft(np.fft.rfft(a, axis=-1) * np.exp(-q * q * t), n=n, axis=-1)
    meta = {"k_max": int(k_max), "t": float(t)}
    return Dataset(a[:, None, :], u[:, None, :], length, split_sizes(n_samples, fractions), meta=meta)


DEFAULT_GENERATOR_CONFIG = {
    "ks": {
        "n": 128,
        "length": 100.0,
        "dt": 0.05,
        "frame_dt": 2.0,
        "burn_in": 50.0,
        "n_trajectories": 250,
        "frames": 50,
        "t_in": 10,
        "t_out": 10,
        "stride": 10,
    },
    "gaussian": {"n": 128, "n_samples": 1250, "k_smooth": 16, "sigma_eta": 0.1, "length": 1.0},
    "heat": {"n": 64, "n_samples": 500, "k_max": 8, "t": 0.002, "length": 1.0},
}


def resolve_generator_config(config):
    name = config.get("generator")
    if name not in GENERATORS:
        raise ConfigurationError(
            f"unknown generator {name!r}; valid generators: {', '.join(GENERATORS)}"
        )
    defaults = DEFAULT_GENERATOR_CONFIG[name]
    unknown = set(config) - set(defaults) - {"generator", "seed"}
    if unknown:
        raise ConfigurationError(f"unknown {name} generator keys: {sorted(unknown)}")
    resolved = {"generator": name, "seed": int(config.get("seed", 0))}
    resolved.update(defaults)
    resolved.update({k: v for k, v in config.items() if k in defaults})
    return resolved


def generate(config):
    """Build a :class:`Dataset` from a generator config dict."""
    cfg = resolve_generator_config(config)
    rng = np.random.default_rng(cfg["seed"])
    meta = {"generator": cfg["generator"], "config": cfg, "seed": cfg["seed"]}
    if cfg["generator"] == "ks":
        save_every = int(round(cfg["frame_dt"] / cfg["dt"]))
        burn = int(round(cfg["burn_in"] / cfg["dt"]))
        if not np.isclose(save_every * cfg["dt"], cfg["frame_dt"]):
            raise ConfigurationError("frame_dt must be a multiple of dt")
        u0 = rng.uniform(-1.0, 1.0, size=(cfg["n_trajectories"], cfg["n"]))
        traj = simulate_ks(
            u0,
            (cfg["frames"] - 1) * save_every,
            cfg["dt"],
            cfg["length"],
            save_every=save_every,
            burn_in_steps=burn,
        )
        # norms live on the normalized domain L = 1
        return make_dataset(traj, cfg["t_in"], cfg["t_out"], cfg["stride"], meta=meta, length=1.0)
    if cfg["generator"] == "gaussian":
        ds = gaussian_functional_benchmark(
            cfg["n_samples"], cfg["n"], cfg["k_smooth"], cfg["sigma_eta"], rng, cfg["length"]
        )
    else:
        ds = heat_benchmark(cfg["n_samples"], cfg["n"], cfg["k_max"], cfg["t"], rng, cfg["length"])
    ds.meta.update(meta)
    return ds


def save_dataset(dataset, directory, force=False):
    if os.path.exists(directory) and os.listdir(directory) and not force:
        raise ConfigurationError(f"{directory} exists and is not empty (use --force)")
    os.makedirs(directory, exist_ok=True)
    save_tensor(os.path.join(directory, "inputs.pnot"), dataset.inputs)
    save_tensor(os.path.join(directory, "targets.pnot"), dataset.targets)
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(dataset.manifest(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dataset(directory):
    path = os.path.join(directory, "manifest.json")
    if not os.path.exists(path):
        raise ConfigurationError(f"no dataset manifest at {path}")
    with open(path) as fh:
        manifest = json.load(fh)
    inputs = load_tensor(os.path.join(directory, "inputs.pnot"))
    targets = load_tensor(os.path.join(directory, "targets.pnot"))
    norm = manifest["normalization"]
    reserved = {"n_samples", "input_shape", "target_shape", "length", "splits", "normalization"}
    meta = {k: v for k, v in manifest.items() if k not in reserved}
    return Dataset(
        inputs,
        targets,
        manifest["length"],
        manifest["splits"],
        Normalizer.from_dict(norm["inputs"]),
        Normalizer.from_dict(norm["targets"]),
        meta,
    )
