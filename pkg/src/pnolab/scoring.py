"""Proper scoring rules and verification metrics for functional ensembles.

Grid functions are arrays whose last axis is the periodic spatial grid; any
leading axes (e.g. output time channels) belong to the same function and are
summed in the discrete L2 norm ``||f|| = sqrt(w * sum f**2)`` with ``w = L/N``.

Every ``*_tape`` function builds the same quantity on an autodiff tape.
"""
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import autodiff as ad
from .errors import ConfigurationError, EstimatorUndefinedError

NLL_VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class GridFunction:
    """Real function sampled on a uniform periodic grid of length ``length``."""

    values: np.ndarray
    length: float = 1.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim == 0:
            values = values.reshape(1)
        object.__setattr__(self, "values", values)
        if self.length <= 0:
            raise ConfigurationError(f"domain length must be positive, got {self.length}")

    @property
    def n(self):
        return self.values.shape[-1]

    @property
    def weight(self):
        return self.length / self.n

    def norm(self):
        return l2_norm(self.values, self.weight)


@dataclass(frozen=True)
class PredictiveEnsemble:
    """``M`` sampled functions on a common grid; ``members`` has shape (M, ..., N)."""

    members: np.ndarray
    length: float = 1.0

    def __post_init__(self):
        members = np.asarray(self.members, dtype=np.float64)
        if members.ndim == 1:
            members = members[:, None]
        if members.shape[0] < 1:
            raise ConfigurationError("an ensemble needs at least one member")
        object.__setattr__(self, "members", members)
        if self.length <= 0:
            raise ConfigurationError(f"domain length must be positive, got {self.length}")

    @property
    def size(self):
        return self.members.shape[0]

    @property
    def n(self):
        return self.members.shape[-1]

    @property
    def weight(self):
        return self.length / self.n

    def mean(self):
        return GridFunction(self.members.mean(axis=0), self.length)


@dataclass(frozen=True)
class DiscreteMeasure:
    """Finitely supported probability measure on R^d."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=np.float64)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        weights = np.asarray(self.weights, dtype=np.float64)
        if weights.shape != (atoms.shape[0],):
            raise ConfigurationError("need one weight per atom")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ConfigurationError("weights must be non-negative and sum to 1")
        if not np.all(np.isfinite(atoms)):
            raise ConfigurationError("atoms must be finite")
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def point_mass(cls, x):
        return cls(np.atleast_1d(np.asarray(x, dtype=np.float64))[None, :], [1.0])

    @classmethod
    def uniform(cls, atoms):
        atoms = np.asarray(atoms, dtype=np.float64)
        n = atoms.shape[0]
        return cls(atoms, np.full(n, 1.0 / n))

    @property
    def dim(self):
        return self.atoms.shape[1]

    def canonical(self, tol=1e-12):
        """Merge coincident atoms and drop zero weights; returns (atoms, weights)."""
        keep = self.weights > 0
        atoms, weights = self.atoms[keep], self.weights[keep]
        order = np.lexsort(atoms.T[::-1])
        atoms, weights = atoms[order], weights[order]
        merged_a, merged_w = [], []
        for a, w in zip(atoms, weights):
            if merged_a and np.max(np.abs(merged_a[-1] - a)) <= tol:
                merged_w[-1] += w
            else:
                merged_a.append(a)
                merged_w.append(w)
        return np.array(merged_a), np.array(merged_w)

    def same_as(self, other, tol=1e-12):
        a1, w1 = self.canonical(tol)
        a2, w2 = other.canonical(tol)
        return (
            a1.shape == a2.shape
            and np.max(np.abs(a1 - a2), initial=0.0) <= tol
            and np.max(np.abs(w1 - w2), initial=0.0) <= tol
        )


def l2_norm(values, weight, axes=None):
    """Discrete L2 norm over ``axes`` (default: all axes)."""
    values = np.asarray(values, dtype=np.float64)
    return np.sqrt(weight * np.sum(values * values, axis=axes))


def relative_l2(pred, obs, weight=1.0):
    """Relative L2 error; reporting only, never part of a loss."""
    denom = l2_norm(obs, weight)
    return l2_norm(np.asarray(pred) - obs, weight) / denom if denom > 0 else np.inf


def _check_grids(ensemble, obs):
    if ensemble.members.shape[1:] != obs.values.shape:
        raise ConfigurationError(
            f"grid mismatch: members {ensemble.members.shape[1:]} vs obs {obs.values.shape}"
        )
    if not np.isclose(ensemble.length, obs.length):
        raise ConfigurationError("ensemble and observation use different domain lengths")


def _event_axes(ndim):
    return tuple(range(1, ndim))


def energy_score_terms(members, obs, weight):
    """Return (mean distance to obs, mean pairwise distance over j != h)."""
    members = np.asarray(members, dtype=np.float64)
    m = members.shape[0]
    axes = _event_axes(members.ndim)
    to_obs = l2_norm(members - obs, weight, axes).mean()
    if m < 2:
        return to_obs, np.nan
    total = 0.0
    for j in range(m - 1):
        total += l2_norm(members[j + 1 :] - members[j], weight, axes).sum()
    return to_obs, 2.0 * total / (m * (m - 1))


def energy_score(members, obs, weight):
    """Unbiased energy-score estimator on raw arrays (members: (M, ..., N))."""
    members = np.asarray(members, dtype=np.float64)
    if members.shape[0] < 2:
        raise EstimatorUndefinedError(
            f"the unbiased energy score needs M >= 2 members, got {members.shape[0]}"
        )
    to_obs, spread = energy_score_terms(members, obs, weight)
    return to_obs - 0.5 * spread


def energy_score_estimator(ensemble, obs):
    """Energy score of an ensemble forecast against one observed function.

    (1/M) sum_j ||u_j - u|| - 1/(2M(M-1)) sum_{j != h} ||u_j - u_h||
    """
    _check_grids(ensemble, obs)
    return energy_score(ensemble.members, obs.values, ensemble.weight)


def energy_score_tape(members, obs, weight):
    """Batch-mean energy score on a tape.

    ``members`` is a node of shape (M, B, ..., N); ``obs`` has shape (B, ..., N).
    """
    shape = members.shape
    m, b = shape[0], shape[1]
    if m < 2:
        raise EstimatorUndefinedError(f"the unbiased energy score needs M >= 2 members, got {m}")
    axes = tuple(range(2, len(shape)))
    to_obs = ad.l2_norm(ad.subtract(members, obs), weight, axes)
    a = ad.reshape(members, (m, 1) + shape[1:])
    c = ad.reshape(members, (1, m) + shape[1:])
    pair_axes = tuple(range(3, len(shape) + 1))
    # diagonal pairs have zero norm and contribute nothing
    pairs = ad.l2_norm(ad.subtract(a, c), weight, pair_axes)
    term1 = ad.multiply(ad.reduce_sum(to_obs), 1.0 / (m * b))
    term2 = ad.multiply(ad.reduce_sum(pairs), 1.0 / (2.0 * m * (m - 1) * b))
    return ad.subtract(term1, term2)


def l2_loss_tape(pred, obs, weight):
    """Batch mean of ||pred_i - obs_i|| for pred of shape (B, ..., N)."""
    axes = tuple(range(1, len(pred.shape)))
    norms = ad.l2_norm(ad.subtract(pred, obs), weight, axes)
    return ad.multiply(ad.reduce_sum(norms), 1.0 / pred.shape[0])


def _pairwise_distances(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


def energy_score_population(measure, x):
    """Exact E||X - x|| - 1/2 E||X - X'|| for a discrete measure (X, X' i.i.d.)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    w = measure.weights
    to_x = np.linalg.norm(measure.atoms - x, axis=1)
    within = _pairwise_distances(measure.atoms, measure.atoms)
    return float(w @ to_x - 0.5 * w @ within @ w)


def induced_kernel(x, y, z0):
    """Distance-induced kernel d(x, z0) + d(y, z0) - d(x, y) (batched over rows)."""
    x = np.atleast_2d(x)
    y = np.atleast_2d(y)
    dx = np.linalg.norm(x - z0, axis=1)
    dy = np.linalg.norm(y - z0, axis=1)
    return dx[:, None] + dy[None, :] - _pairwise_distances(x, y)


def kernel_score_induced(measure, x, z0):
    """Kernel score 1/2 E k(X,X') - E k(X,x) + 1/2 k(x,x) with the induced kernel."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    z0 = np.atleast_1d(np.asarray(z0, dtype=np.float64))
    w = measure.weights
    k_xx = induced_kernel(measure.atoms, measure.atoms, z0)
    k_x = induced_kernel(measure.atoms, x[None, :], z0)[:, 0]
    k_self = induced_kernel(x[None, :], x[None, :], z0)[0, 0]
    return float(0.5 * w @ k_xx @ w - w @ k_x + 0.5 * k_self)


def expected_score(forecast, truth, score=energy_score_population):
    """S(Q, P) = sum_i P(x_i) S(Q, x_i) with Q = ``forecast``, P = ``truth``."""
    return float(sum(p * score(forecast, x) for x, p in zip(truth.atoms, truth.weights)))


def _sorted_spread(samples):
    """sum_{j,h} |x_j - x_h| along axis 0 in O(M log M)."""
    m = samples.shape[0]
    xs = np.sort(samples, axis=0)
    coeff = 2.0 * np.arange(1, m + 1) - m - 1
    coeff = coeff.reshape((m,) + (1,) * (samples.ndim - 1))
    return 2.0 * np.sum(coeff * xs, axis=0)


def crps_ensemble(samples, obs, kind="fair"):
    """Ensemble CRPS along axis 0; broadcasts over trailing axes.

    ``fair`` divides the spread term by 2M(M-1) (unbiased for the forecast
    distribution); ``nrg`` divides by 2M^2 and equals the CRPS of the
    empirical distribution itself.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim == 0:
        samples = samples.reshape(1)
    m = samples.shape[0]
    if kind == "fair":
        if m < 2:
            raise EstimatorUndefinedError(f"fair CRPS needs M >= 2 samples, got {m}")
        denom = 2.0 * m * (m - 1)
    elif kind == "nrg":
        if m < 1:
            raise EstimatorUndefinedError("CRPS needs at least one sample")
        denom = 2.0 * m * m
    else:
        raise ConfigurationError(f"unknown CRPS kind {kind!r}; use 'fair' or 'nrg'")
    to_obs = np.mean(np.abs(samples - obs), axis=0)
    return to_obs - _sorted_spread(samples) / denom


def quantile_score(q, obs, alpha):
    """2 (alpha - 1{obs < q}) (obs - q)."""
    if np.any((np.asarray(alpha) <= 0.0) | (np.asarray(alpha) >= 1.0)):
        raise ConfigurationError(f"quantile level must lie in (0, 1), got {alpha}")
    q = np.asarray(q, dtype=np.float64)
    return 2.0 * (alpha - (obs < q)) * (obs - q)


def empirical_quantile(samples, p, method="linear"):
    """Empirical quantile along axis 0.

    ``linear`` interpolates between order statistics at h = p(M-1) + 1;
    ``inverted_cdf`` is the step inverse of the empirical CDF. ``p`` may be
    an array of levels, which become the leading output axis.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0 or samples.shape[0] == 0:
        raise ConfigurationError("cannot take a quantile of an empty sample")
    if np.any((np.asarray(p) < 0.0) | (np.asarray(p) > 1.0)):
        raise ConfigurationError(f"quantile level must lie in [0, 1], got {p}")
    if method not in ("linear", "inverted_cdf"):
        raise ConfigurationError(f"unknown quantile method {method!r}")
    return np.quantile(samples, p, axis=0, method=method)


def coverage_and_width(ensemble, obs, alpha=0.05):
    """Fraction of grid points inside the central (1 - alpha) interval, and its mean width."""
    _check_grids(ensemble, obs)
    if ensemble.size < 2:
        raise EstimatorUndefinedError("coverage needs M >= 2 members")
    return interval_coverage(ensemble.members, obs.values, alpha)


def interval_coverage(members, obs, alpha=0.05):
    lo = empirical_quantile(members, alpha / 2)
    hi = empirical_quantile(members, 1 - alpha / 2)
    inside = (obs >= lo) & (obs <= hi)
    return float(np.mean(inside)), float(np.mean(hi - lo))


def l2_metric(ensemble, obs):
    """L2 distance between the ensemble mean and the observation."""
    _check_grids(ensemble, obs)
    return float(l2_norm(ensemble.members.mean(axis=0) - obs.values, ensemble.weight))


def gaussian_nll(mean, var, obs, floor=NLL_VARIANCE_FLOOR):
    """Mean pointwise Gaussian negative log-likelihood.

    Returns ``(nll, n_floored)``; variances at or below ``floor`` are raised
    to it and counted.
    """
    mean = np.asarray(getattr(mean, "values", mean), dtype=np.float64)
    var = np.asarray(getattr(var, "values", var), dtype=np.float64)
    obs = np.asarray(getattr(obs, "values", obs), dtype=np.float64)
    floored = var <= floor
    var = np.where(floored, floor, var)
    nll = 0.5 * np.mean(np.log(2.0 * np.pi * var) + (mean - obs) ** 2 / var)
    return float(nll), int(floored.sum())


def ensemble_nll(members, obs, floor=NLL_VARIANCE_FLOOR):
    """NLL of the Gaussian with the ensemble mean and (unbiased) ensemble variance."""
    members = np.asarray(members, dtype=np.float64)
    ddof = 1 if members.shape[0] > 1 else 0
    return gaussian_nll(members.mean(axis=0), members.var(axis=0, ddof=ddof), obs, floor)


def gaussian_crps(mu, sigma, y):
    """Closed-form CRPS of N(mu, sigma^2) at y."""
    z = (np.asarray(y) - mu) / sigma
    return sigma * (z * (2 * norm.cdf(z) - 1) + 2 * norm.pdf(z) - 1 / np.sqrt(np.pi))
