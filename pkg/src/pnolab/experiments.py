"""File-level experiment steps shared by the CLI: train, evaluate, sweep."""
import json
import logging
import os

import numpy as np

from .data import load_dataset
from .errors import ConfigurationError, PNOError
from .evaluation import (
    METRICS,
    MetricsRecord,
    aggregate,
    evaluate_model,
    records_from_rows,
    write_csv,
    write_json,
)
from .operator import ModelConfig, OperatorModel
from .tensorio import load_checkpoint, save_checkpoint
from .training import TrainConfig, fit

log = logging.getLogger(__name__)

DROPOUT_GRID = (0.01, 0.02, 0.05, 0.1, 0.2)
SAMPLE_GRID = (3, 5, 10, 20, 50)
SAMPLE_METHODS = ("pno_d", "pno_r")

# deterministic columns only; wall-clock goes to the JSON report
METRIC_COLUMNS = ["method", "seed", "dataset", "item", "epochs"] + list(METRICS) + ["nll_floored"]
HISTORY_COLUMNS = ["epoch", "train_loss", "val_loss", "lr", "max_grad_norm"]


def dataset_id(dataset):
    return f"{dataset.meta.get('generator', 'data')}-{dataset.meta.get('seed', 0)}"


def _prepare_out(out_dir, force):
    if os.path.exists(out_dir) and os.listdir(out_dir) and not force:
        raise ConfigurationError(f"{out_dir} exists and is not empty (use --force)")
    os.makedirs(out_dir, exist_ok=True)


def save_model(path, model, config, result, dataset):
    header = {
        "model": model.config.to_dict(),
        "train": config.to_dict(),
        "epochs_run": result.epochs_run,
        "best_epoch": result.best_epoch,
        "dataset": {
            "id": dataset_id(dataset),
            "n": int(dataset.n),
            "in_channels": int(dataset.inputs.shape[1]),
            "out_channels": int(dataset.targets.shape[1]),
            "length": float(dataset.length),
        },
    }
    save_checkpoint(path, header, model.params)


def load_model(path):
    header, params = load_checkpoint(path)
    return OperatorModel(ModelConfig(**header["model"]), params), header


def train_run(dataset, config, out_dir=None, force=False):
    """Fit and (optionally) write checkpoint, history and resolved config to ``out_dir``."""
    if out_dir is not None:
        _prepare_out(out_dir, force)
    result = fit(dataset, config)
    if out_dir is not None:
        save_model(os.path.join(out_dir, "checkpoint.pnoc"), result.model, config, result, dataset)
        write_csv(os.path.join(out_dir, "history.csv"), result.history, HISTORY_COLUMNS)
        write_json(os.path.join(out_dir, "config.json"), config.to_dict())
        write_json(
            os.path.join(out_dir, "summary.json"),
            {
                "wall_clock_s": result.seconds,
                "epochs_run": result.epochs_run,
                "best_epoch": result.best_epoch,
                "seconds_per_epoch": result.seconds / max(result.epochs_run, 1),
                "epoch_seconds": [h["seconds"] for h in result.history],
            },
        )
    return result


def cmd_train(config_path, dataset_dir, out_dir, seed=None, force=False):
    config = TrainConfig.load(config_path)
    if seed is not None:
        config = TrainConfig.from_dict(dict(config.to_dict(), seed=seed))
    dataset = load_dataset(dataset_dir)
    return train_run(dataset, config, out_dir, force)


def check_compatible(header, dataset):
    d = header["dataset"]
    if (d["n"], d["in_channels"], d["out_channels"]) != (
        dataset.n,
        dataset.inputs.shape[1],
        dataset.targets.shape[1],
    ):
        raise ConfigurationError(
            f"checkpoint grid (N={d['n']}, channels {d['in_channels']}->{d['out_channels']}) does not "
            f"match dataset (N={dataset.n}, channels {dataset.inputs.shape[1]}->{dataset.targets.shape[1]})"
        )


def evaluate_checkpoint(path, dataset, m_eval=100, seed=0, split="test"):
    model, header = load_model(path)
    check_compatible(header, dataset)
    method = header["train"]["method"]
    rows, mean = evaluate_model(model, method, dataset, m_eval, seed, split)
    wall = float("nan")
    summary = os.path.join(os.path.dirname(path), "summary.json")
    if os.path.exists(summary):
        with open(summary) as fh:
            wall = json.load(fh).get("wall_clock_s", wall)
    return records_from_rows(
        rows, mean, method, header["train"]["seed"], dataset_id(dataset), header["epochs_run"], wall
    )


def cmd_evaluate(checkpoints, dataset_dir, out_dir, m_eval=100, seed=0, force=False):
    """Evaluate one or more checkpoints; writes per-item, per-seed and aggregate reports."""
    if m_eval < 2:
        raise ConfigurationError("--m-eval must be at least 2")
    dataset = load_dataset(dataset_dir)
    _prepare_out(out_dir, force)
    records = []
    for path in checkpoints:
        records.extend(evaluate_checkpoint(path, dataset, m_eval, seed))
    items = [r for r in records if r.item != "mean"]
    means = [r for r in records if r.item == "mean"]
    write_csv(os.path.join(out_dir, "metrics_items.csv"), items, METRIC_COLUMNS)
    write_csv(os.path.join(out_dir, "metrics.csv"), means, METRIC_COLUMNS)
    summary = aggregate(records)
    if summary:
        columns = [c for c in summary[0] if not c.startswith("wall_clock")]
        write_csv(os.path.join(out_dir, "aggregate.csv"), summary, columns)
    write_json(
        os.path.join(out_dir, "metrics.json"),
        {"m_eval": m_eval, "records": [r.to_dict() for r in means], "aggregate": summary},
    )
    return records


def sweep_cells(kind, base):
    """Training configs for each sweep cell, in report order."""
    cells = []
    if kind == "dropout":
        for pw in DROPOUT_GRID:
            for pf in DROPOUT_GRID:
                cells.append(dict(base, method="pno_d", weight_dropout=pw, fourier_dropout=pf))
    elif kind == "samples":
        for method in SAMPLE_METHODS:
            for m in SAMPLE_GRID:
                cell = dict(base, method=method, m_train=m)
                if method == "pno_d" and not (cell.get("weight_dropout") or cell.get("fourier_dropout")):
                    cell.update(weight_dropout=0.05, fourier_dropout=0.05)
                if method == "pno_r":
                    cell.update(weight_dropout=0.0, fourier_dropout=0.0)
                cells.append(cell)
    else:
        raise ConfigurationError(f"unknown sweep kind {kind!r}; use 'dropout' or 'samples'")
    return cells


def run_sweep(kind, base, dataset, m_eval=100, seed=0, out_dir=None, force=False):
    """Train and evaluate every cell; failures are recorded per cell and do not stop the sweep."""
    cells = sweep_cells(kind, dict(base))
    if out_dir is not None:
        _prepare_out(out_dir, force)
    rows = []
    for cell in cells:
        row = {
            "kind": kind,
            "method": cell["method"],
            "weight_dropout": float(cell.get("weight_dropout", 0.0)),
            "fourier_dropout": float(cell.get("fourier_dropout", 0.0)),
            "m_train": int(cell.get("m_train", 3)),
            "error": "",
        }
        try:
            config = TrainConfig.from_dict(cell)
            result = fit(dataset, config)
            _, mean = evaluate_model(result.model, config.method, dataset, m_eval, seed)
            row.update(mean)
            row["epochs"] = result.epochs_run
            row["seconds_per_epoch"] = float(np.mean([h["seconds"] for h in result.history]))
        except PNOError as exc:
            log.warning("sweep cell %s failed: %s", row, exc)
            row["error"] = str(exc)
        rows.append(row)
    if out_dir is not None:
        columns = ["kind", "method", "weight_dropout", "fourier_dropout", "m_train", "epochs",
                   "seconds_per_epoch", *METRICS, "nll_floored", "error"]
        write_csv(os.path.join(out_dir, f"sweep_{kind}.csv"), rows, columns)
    return rows


def cmd_sweep(kind, config_path, dataset_dir, out_dir, m_eval=100, seed=None, force=False):
    try:
        with open(config_path) as fh:
            base = json.load(fh)
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot read config {config_path}: {exc}") from None
    if seed is not None:
        base["seed"] = seed
    TrainConfig.from_dict({**base, "method": "pno_r", "weight_dropout": 0.0, "fourier_dropout": 0.0})
    dataset = load_dataset(dataset_dir)
    return run_sweep(kind, base, dataset, m_eval, base.get("seed", 0), out_dir, force)



__all__ = [
    "DROPOUT_GRID",
    "SAMPLE_GRID",
    "MetricsRecord",
    "cmd_evaluate",
    "cmd_sweep",
    "cmd_train",
    "evaluate_checkpoint",
    "load_model",
    "run_sweep",
    "train_run",
]
