"""Ensemble evaluation, metric records and CSV/JSON reporting."""
import csv
import json
import math
from dataclasses import asdict, dataclass, fields

import numpy as np

from .operator import draw_members, model_forward
from .scoring import crps_ensemble, energy_score, ensemble_nll, interval_coverage, l2_norm

METRICS = ("l2", "es", "crps", "nll", "coverage_95", "width_95")


@dataclass
class MetricsRecord:
    method: str
    seed: int
    dataset: str
    l2: float
    es: float
    crps: float
    nll: float
    coverage_95: float
    width_95: float
    wall_clock_s: float = float("nan")
    epochs: int = 0
    item: str = "mean"
    nll_floored: int = 0

    def to_dict(self):
        return asdict(self)


def item_metrics(members, obs, weight, alpha=0.05):
    """All six metrics for one item; ``members`` is (M, ..., N) in physical units."""
    cov, width = interval_coverage(members, obs, alpha)
    nll, floored = ensemble_nll(members, obs)
    return {
        "l2": float(l2_norm(members.mean(axis=0) - obs, weight)),
        "es": float(energy_score(members, obs, weight)),
        "crps": float(np.mean(crps_ensemble(members, obs, "fair"))),
        "nll": nll,
        "coverage_95": cov,
        "width_95": width,
        "nll_floored": floored,
    }


def sample_ensemble(model, method, a, m, rng):
    """Members (M, B, C_u, N) in normalized units, sampler chosen by training method."""
    if method == "pno_r":
        mean, std = model_forward(model, a, "eval")
        eps = rng.standard_normal((m,) + mean.shape)
        return mean.value + std.value * eps
    return draw_members(model, a, m, rng, "dropout").value


def evaluate_model(model, method, dataset, m_eval=100, seed=0, split="test", chunk_members=2000):
    """Per-item metric dicts in physical units, plus their mean."""
    rng = np.random.default_rng(seed)
    a, _ = dataset.normalized(split)
    _, u_raw = dataset.raw(split)
    weight = dataset.length / dataset.n
    chunk = max(1, chunk_members // m_eval)
    rows = []
    for lo in range(0, len(a), chunk):
        z = sample_ensemble(model, method, a[lo : lo + chunk], m_eval, rng)
        members = dataset.target_norm.denormalize(z)
        for b in range(members.shape[1]):
            rows.append(item_metrics(members[:, b], u_raw[lo + b], weight))
    mean = {k: float(np.mean([r[k] for r in rows])) for k in METRICS}
    mean["nll_floored"] = int(sum(r["nll_floored"] for r in rows))
    return rows, mean


def records_from_rows(rows, mean, method, seed, dataset_id, epochs=0, wall_clock_s=float("nan")):
    out = []
    for i, r in enumerate(rows):
        out.append(MetricsRecord(method, seed, dataset_id, epochs=epochs, wall_clock_s=wall_clock_s, item=str(i), **r))
    out.append(MetricsRecord(method, seed, dataset_id, epochs=epochs, wall_clock_s=wall_clock_s, item="mean", **mean))
    return out


def aggregate(records):
    """Mean and sample standard deviation over seeds of the ``item == 'mean'`` rows,
    grouped by (method, dataset)."""
    groups = {}
    for r in records:
        if r.item == "mean":
            groups.setdefault((r.method, r.dataset), []).append(r)
    out = []
    for (method, dataset), rs in groups.items():
        row = {"method": method, "dataset": dataset, "n_seeds": len(rs)}
        for k in METRICS + ("wall_clock_s", "epochs"):
            vals = np.array([getattr(r, k) for r in rs], dtype=float)
            row[f"{k}_mean"] = float(vals.mean())
            row[f"{k}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out.append(row)
    return out


def format_value(v):
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".16e")
    return str(v)


def write_csv(path, rows, columns=None):
    """Write dict rows; floats use 17 significant digits so they parse back exactly."""
    rows = [r.to_dict() if hasattr(r, "to_dict") else dict(r) for r in rows]
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([format_value(r.get(c, "")) for c in columns])


def _parse(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def read_csv(path):
    with open(path, newline="") as fh:
        return [{k: _parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def read_records(path):
    names = {f.name for f in fields(MetricsRecord)}
    out = []
    for row in read_csv(path):
        row = {k: v for k, v in row.items() if k in names}
        row["item"] = str(row["item"])
        row["dataset"] = str(row["dataset"])
        out.append(MetricsRecord(**row))
    return out


def write_json(path, payload):
    def clean(x):
        if isinstance(x, float) and not math.isfinite(x):
            return None
        if isinstance(x, dict):
            return {k: clean(v) for k, v in x.items()}
        if isinstance(x, list):
            return [clean(v) for v in x]
        if isinstance(x, (np.floating, np.integer)):
            return clean(x.item())
        return x

    with open(path, "w") as fh:
        json.dump(clean(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
