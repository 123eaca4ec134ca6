"""Acceptance checks, one test per criterion.

Each test records a short detail string; the terminal summary prints one
PASS/FAIL line per criterion. The two training criteria take minutes.
"""
import time

import numpy as np
import pytest
from scipy.stats import norm

from pnolab.autodiff import PRIMITIVES
from pnolab.cli import build_parser, main
from pnolab.data import generate, grid, simulate_ks
from pnolab.evaluation import evaluate_model, read_csv
from pnolab.experiments import DROPOUT_GRID, SAMPLE_GRID, run_sweep, sweep_cells
from pnolab.gradcheck import END_TO_END_TOL, PRIMITIVE_TOL, run_suite
from pnolab.propriety import kernel_identity_error, propriety_gap, random_measure
from pnolab.scoring import crps_ensemble, empirical_quantile, energy_score, quantile_score
from pnolab.training import TrainConfig, fit

pytestmark = pytest.mark.slow


def _random_pair(rng):
    d = int(rng.integers(1, 4))
    return d, random_measure(rng, d, 5), random_measure(rng, d, 5)


@pytest.mark.criterion(1, "kernel-score identity")
def test_kernel_score_identity(record_property):
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst_err = worst_spread = 0.0
    for _ in range(10_000):
        d, p, _ = _random_pair(rng)
        err, spread = kernel_identity_error(p, rng.standard_normal(d), rng.standard_normal((3, d)))
        worst_err, worst_spread = max(worst_err, err), max(worst_spread, spread)
    seconds = time.perf_counter() - t0
    record_property("detail", f"max error {worst_err:.2e}, max z0 spread {worst_spread:.2e}, {seconds:.1f} s")
    assert worst_err < 1e-12
    assert worst_spread < 1e-12
    assert seconds < 10


@pytest.mark.criterion(2, "strict propriety fuzz")
def test_propriety_fuzz(record_property):
    rng = np.random.default_rng(102)
    t0 = time.perf_counter()
    gaps = []
    for _ in range(10_000):
        _, p, q = _random_pair(rng)
        gaps.append(propriety_gap(q, p))
    equal = []
    for _ in range(1000):
        _, p, _ = _random_pair(rng)
        equal.append(abs(propriety_gap(p, p)))
    seconds = time.perf_counter() - t0
    record_property("detail", f"min gap {min(gaps):.2e}, max |equal gap| {max(equal):.2e}, {seconds:.1f} s")
    assert min(gaps) >= -1e-12
    assert max(equal) < 1e-9
    assert seconds < 30


@pytest.mark.criterion(3, "estimator unbiasedness")
def test_estimator_unbiasedness(record_property):
    # analytic energy score of N(0, 1) at 0: 2 phi(0) - 1/sqrt(pi)
    target = 2 * norm.pdf(0.0) - 1 / np.sqrt(np.pi)
    assert target == pytest.approx(0.23369, abs=1e-5)
    rng = np.random.default_rng(103)
    t0 = time.perf_counter()
    draws = rng.standard_normal((100_000, 3, 1))
    mean = float(np.mean([energy_score(members, 0.0, 1.0) for members in draws]))
    seconds = time.perf_counter() - t0
    record_property("detail", f"mean {mean:.5f} vs {target:.5f}, {seconds:.1f} s")
    assert abs(mean - target) <= 0.003
    assert seconds < 10


@pytest.mark.criterion(4, "gradient suite")
def test_gradient_suite(record_property):
    t0 = time.perf_counter()
    worst_prim = worst_e2e = 0.0
    for seed in range(5):
        report = run_suite(seed)
        assert set(report["primitives"]) == set(PRIMITIVES)
        worst_prim = max(worst_prim, max(report["primitives"].values()), report["compositions"])
        worst_e2e = max(worst_e2e, max(report["end_to_end"].values()))
    seconds = time.perf_counter() - t0
    record_property("detail", f"primitives {worst_prim:.1e}, end-to-end {worst_e2e:.1e}, {seconds:.1f} s")
    assert worst_prim < PRIMITIVE_TOL == 1e-5
    assert worst_e2e < END_TO_END_TOL == 1e-4
    assert seconds < 60


@pytest.mark.criterion(5, "CRPS quantile-integral identity")
def test_crps_quantile_identity(record_property):
    rng = np.random.default_rng(105)
    alphas = (np.arange(10_000) + 0.5) / 10_000
    divisors = [1, 2, 4, 5, 8, 10, 16, 20, 25, 40, 50, 80, 100]
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        m = int(rng.choice(divisors))
        x = rng.standard_normal(m) * rng.uniform(0.1, 3)
        y = float(rng.standard_normal())
        q = empirical_quantile(x, alphas, "inverted_cdf")
        integral = float(np.mean(quantile_score(q, y, alphas)))
        worst = max(worst, abs(integral - float(crps_ensemble(x, y, "nrg"))))
    seconds = time.perf_counter() - t0
    record_property("detail", f"max difference {worst:.1e}, {seconds:.1f} s")
    assert worst < 1e-4
    assert seconds < 10


@pytest.mark.criterion(6, "KS solver physics")
def test_ks_physics(record_property):
    t0 = time.perf_counter()
    length = 100.0
    x = grid(128, length)
    u0 = np.random.default_rng(106).uniform(-1, 1, (4, 128))
    u = simulate_ks(u0, 200, 0.05, length).u
    drift = float(np.max(np.abs(u.mean(axis=-1) - u0.mean(axis=-1, keepdims=True))))

    worst_rate = 0.0
    for k in (2, 5, 8, 12, 16, 18):
        q = 2 * np.pi * k / length
        amp = simulate_ks(1e-6 * np.cos(q * x), 20, 0.05, length).u[-1]
        measured = np.log(np.max(np.abs(amp)) / 1e-6) / 1.0
        worst_rate = max(worst_rate, abs(measured - (q**2 - q**4)) / abs(q**2 - q**4))

    length = 32 * np.pi
    x = grid(128, length)
    u0 = np.cos(x / 16) * (1 + np.sin(x / 16))
    ends = [simulate_ks(u0, int(round(5 / dt)), dt, length, save_every=int(round(5 / dt))).u[-1]
            for dt in (0.1, 0.05, 0.025)]
    order = float(np.log2(np.max(np.abs(ends[0] - ends[1])) / np.max(np.abs(ends[1] - ends[2]))))
    seconds = time.perf_counter() - t0
    record_property("detail", f"mean drift {drift:.1e}, worst rate error {worst_rate:.2%}, "
                              f"order {order:.2f}, {seconds:.1f} s")
    assert drift < 1e-8
    assert worst_rate < 0.02
    assert order >= 3.5
    assert seconds < 60


@pytest.mark.criterion(7, "calibration on the Gaussian benchmark")
def test_gaussian_calibration(record_property):
    t0 = time.perf_counter()
    ds = generate({"generator": "gaussian", "seed": 0})
    assert ds.n == 128 and ds.splits["train"] == 1000
    config = TrainConfig(method="pno_r", seed=0)
    result = fit(ds, config)
    _, mean = evaluate_model(result.model, "pno_r", ds, m_eval=100, seed=0)
    optimum = ds.meta["sigma_eta"] / np.sqrt(np.pi)
    rel = mean["crps"] / optimum - 1
    seconds = time.perf_counter() - t0
    record_property("detail", f"coverage {mean['coverage_95']:.3f}, CRPS {mean['crps']:.5f} vs optimum "
                              f"{optimum:.5f} ({rel:+.1%}), {result.epochs_run} epochs, {seconds:.0f} s")
    assert config.max_epochs <= 200
    assert 0.90 <= mean["coverage_95"] <= 0.98
    assert abs(rel) <= 0.10
    assert seconds < 15 * 60


KS_SEEDS = range(5)
KS_DROPOUT = 0.05
KS_EPOCHS = 40


@pytest.mark.criterion(8, "PNO beats MC dropout on KS")
def test_ks_directional(record_property):
    t0 = time.perf_counter()
    ds = generate({"generator": "ks", "seed": 0})
    assert ds.n_samples == 1000
    scores = {m: {"es": [], "crps": []} for m in ("pno_r", "pno_d", "mcd")}
    for seed in KS_SEEDS:
        for method in scores:
            p = 0.0 if method == "pno_r" else KS_DROPOUT
            config = TrainConfig(method=method, seed=seed, max_epochs=KS_EPOCHS,
                                 weight_dropout=p, fourier_dropout=p)
            _, mean = evaluate_model(fit(ds, config).model, method, ds, m_eval=100, seed=seed)
            for k in ("es", "crps"):
                scores[method][k].append(mean[k])
    seconds = time.perf_counter() - t0

    verdicts, parts = [], []
    for method in ("pno_r", "pno_d"):
        for k in ("es", "crps"):
            ours, base = np.array(scores[method][k]), np.array(scores["mcd"][k])
            # ties within one seed-std go to PNO
            tol = max(ours.std(ddof=1), base.std(ddof=1))
            verdicts.append(ours.mean() <= base.mean() + tol)
            parts.append(f"{method} {k} {ours.mean():.4f}")
    parts += [f"mcd es {np.mean(scores['mcd']['es']):.4f}", f"mcd crps {np.mean(scores['mcd']['crps']):.4f}"]
    record_property("detail", ", ".join(parts) + f", {seconds / 60:.1f} min")
    assert all(verdicts)
    assert seconds < 60 * 60


@pytest.mark.criterion(9, "protocol fidelity")
def test_protocol(record_property):
    cfg = TrainConfig()
    assert cfg.m_train == 3 and cfg.m_eval == 100
    assert build_parser().parse_args(["evaluate"]).m_eval == 100
    dropout = sweep_cells("dropout", {})
    assert len(dropout) == 25
    assert {(c["weight_dropout"], c["fourier_dropout"]) for c in dropout} == {
        (a, b) for a in (0.01, 0.02, 0.05, 0.1, 0.2) for b in (0.01, 0.02, 0.05, 0.1, 0.2)}
    assert DROPOUT_GRID == (0.01, 0.02, 0.05, 0.1, 0.2) and SAMPLE_GRID == (3, 5, 10, 20, 50)
    samples = sweep_cells("samples", {})
    for method in ("pno_d", "pno_r"):
        assert [c["m_train"] for c in samples if c["method"] == method] == [3, 5, 10, 20, 50]

    ds = generate({"generator": "gaussian", "n_samples": 250, "n": 64, "k_smooth": 8, "seed": 9})
    base = {"width": 16, "modes": 8, "layers": 2, "max_epochs": 2, "patience": 5, "seed": 0}
    rows = run_sweep("samples", base, ds, m_eval=10)
    per_epoch = [r["seconds_per_epoch"] for r in rows if r["method"] == "pno_d"]
    record_property("detail", "PNO_D s/epoch " + " ".join(f"{s:.2f}" for s in per_epoch))
    assert all(not r["error"] for r in rows)
    assert all(a < b for a, b in zip(per_epoch, per_epoch[1:]))


@pytest.mark.criterion(10, "determinism")
def test_determinism(tmp_path, record_property):
    data = tmp_path / "data.json"
    data.write_text('{"generator": "ks", "n": 32, "length": 30.0, "n_trajectories": 12, "frames": 12, '
                    '"t_in": 2, "t_out": 2, "stride": 2, "burn_in": 10.0, "seed": 4}')
    train = tmp_path / "train.json"
    train.write_text('{"method": "pno_d", "weight_dropout": 0.1, "fourier_dropout": 0.1, "width": 8, '
                     '"modes": 6, "layers": 2, "max_epochs": 3, "seed": 2}')
    for run in ("a", "b"):
        root = tmp_path / run
        assert main(["generate-data", "--config", str(data), "--out", str(root / "ds")]) == 0
        assert main(["train", "--config", str(train), "--dataset", str(root / "ds"), "--out", str(root / "run")]) == 0
        assert main(["evaluate", "--checkpoint", str(root / "run" / "checkpoint.pnoc"),
                     "--dataset", str(root / "ds"), "--out", str(root / "eval")]) == 0
    files = ["ds/manifest.json", "ds/inputs.pnot", "ds/targets.pnot", "run/checkpoint.pnoc",
             "run/history.csv", "eval/metrics.csv", "eval/metrics_items.csv", "eval/aggregate.csv"]
    same = [f for f in files if (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()]
    record_property("detail", f"{len(same)}/{len(files)} files byte-identical")
    assert same == files
    assert len(read_csv(tmp_path / "a" / "eval" / "metrics.csv")) == 1
