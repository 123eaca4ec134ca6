"""Brute-force checks of energy-score propriety on discrete measures."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .scoring import DiscreteMeasure, energy_score_population, expected_score, kernel_score_induced


def random_measure(rng, dim, max_atoms):
    k = int(rng.integers(1, max_atoms + 1))
    atoms = rng.standard_normal((k, dim))
    weights = rng.dirichlet(np.ones(k))
    weights /= weights.sum()
    return DiscreteMeasure(atoms, weights)


def propriety_gap(forecast, truth):
    """S(Q, P) - S(P, P) with Q = ``forecast`` and P = ``truth``; >= 0 for a proper score."""
    return expected_score(forecast, truth) - expected_score(truth, truth)


def kernel_identity_error(measure, x, z0s):
    """Max |S_k(P, x; z0) - ES(P, x)| over the given z0, and the spread of S_k across z0."""
    es = energy_score_population(measure, x)
    ks = np.array([kernel_score_induced(measure, x, z0) for z0 in z0s])
    return float(np.max(np.abs(ks - es))), float(np.ptp(ks))


@dataclass
class ProprietyReport:
    trials: int
    min_gap: float = np.inf
    violations: list = field(default_factory=list)
    near_ties: int = 0
    max_equal_gap: float = 0.0
    max_identity_error: float = 0.0
    max_z0_spread: float = 0.0

    @property
    def ok(self):
        return not self.violations

    def to_dict(self):
        return {
            "trials": self.trials,
            "min_gap": self.min_gap,
            "violations": len(self.violations),
            "near_ties": self.near_ties,
            "max_equal_gap": self.max_equal_gap,
            "max_identity_error": self.max_identity_error,
            "max_z0_spread": self.max_z0_spread,
            "ok": self.ok,
        }


def _dump(measure):
    return {"atoms": measure.atoms.tolist(), "weights": measure.weights.tolist()}


def check_propriety(trials=10_000, dims=3, atoms=5, seed=0, equal_trials=None,
                    gap_tol=1e-12, identity_tol=1e-12, equal_tol=1e-9):
    """Fuzz the propriety inequality and the kernel-score identity.

    Dimensions are drawn from 1..``dims`` and supports from 1..``atoms`` points.
    """
    if trials < 1 or not 1 <= dims <= 3 or not 1 <= atoms <= 5:
        raise ConfigurationError("need trials >= 1, 1 <= dims <= 3 and 1 <= atoms <= 5")
    rng = np.random.default_rng(seed)
    report = ProprietyReport(trials)
    for _ in range(trials):
        d = int(rng.integers(1, dims + 1))
        p = random_measure(rng, d, atoms)
        q = random_measure(rng, d, atoms)
        gap = propriety_gap(q, p)
        report.min_gap = min(report.min_gap, gap)
        if gap < -gap_tol:
            report.violations.append({"kind": "gap", "gap": gap, "P": _dump(p), "Q": _dump(q)})
        if gap < equal_tol and not p.same_as(q):
            report.near_ties += 1
        x = rng.standard_normal(d)
        z0s = rng.standard_normal((3, d))
        err, spread = kernel_identity_error(p, x, z0s)
        report.max_identity_error = max(report.max_identity_error, err)
        report.max_z0_spread = max(report.max_z0_spread, spread)
        if err > identity_tol:
            report.violations.append({"kind": "identity", "error": err, "P": _dump(p), "x": x.tolist()})
    for _ in range(trials // 10 if equal_trials is None else equal_trials):
        d = int(rng.integers(1, dims + 1))
        p = random_measure(rng, d, atoms)
        gap = propriety_gap(p, p)
        report.max_equal_gap = max(report.max_equal_gap, abs(gap))
        if abs(gap) > equal_tol:
            report.violations.append({"kind": "equal", "gap": gap, "P": _dump(p)})
    return report
