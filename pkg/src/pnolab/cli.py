"""Command-line tools for training and scoring probabilistic neural operators.

Exit codes: 0 success, 1 verification failure, 2 configuration error.
"""
import argparse
import json
import logging
import os
import sys

from . import experiments
from .data import generate, save_dataset
from .errors import ConfigurationError, PNOError, VerificationError
from .evaluation import write_json
from .gradcheck import END_TO_END_TOL, PRIMITIVE_TOL, run_suite
from .propriety import check_propriety

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG = 0, 1, 2

log = logging.getLogger("pnolab")


def _read_json(path):
    if path is None:
        raise ConfigurationError("--config is required")
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse {path}: {exc}") from None


def _require(args, *names):
    for name in names:
        if getattr(args, name) is None:
            raise ConfigurationError(f"--{name.replace('_', '-')} is required")


def generate_data(args):
    _require(args, "out")
    config = _read_json(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    dataset = generate(config)
    save_dataset(dataset, args.out, args.force)
    print(f"wrote {len(dataset.inputs)} samples to {args.out}")


def train(args):
    _require(args, "config", "dataset", "out")
    result = experiments.cmd_train(args.config, args.dataset, args.out, args.seed, args.force)
    last = result.history[-1]
    print(
        f"trained {result.epochs_run} epochs (best {result.best_epoch}); "
        f"final train {last['train_loss']:.6g}, val {last['val_loss']:.6g}"
    )


def evaluate(args):
    _require(args, "dataset", "out")
    if not args.checkpoint:
        raise ConfigurationError("--checkpoint is required")
    records = experiments.cmd_evaluate(
        args.checkpoint, args.dataset, args.out, args.m_eval, args.seed or 0, args.force
    )
    for r in records:
        if r.item == "mean":
            print(f"{r.method} seed {r.seed}: ES {r.es:.6g} CRPS {r.crps:.6g} L2 {r.l2:.6g} "
                  f"coverage {r.coverage_95:.3f}")


def propriety(args):
    report = check_propriety(args.trials, args.dims, args.atoms, args.seed or 0)
    out = report.to_dict()
    print(json.dumps(out, indent=2))
    if args.out:
        write_json(args.out, dict(out, violation_details=report.violations))
    if not report.ok:
        for v in report.violations[:10]:
            print(json.dumps(v), file=sys.stderr)
        raise VerificationError(f"{len(report.violations)} propriety violations")


def grad_check(args):
    report = run_suite(args.seed or 0)
    print(json.dumps(report, indent=2))
    if args.out:
        write_json(args.out, report)
    if not report["ok"]:
        raise VerificationError(
            f"gradient check above tolerance (primitives {PRIMITIVE_TOL}, end-to-end {END_TO_END_TOL})"
        )


def sweep(args):
    _require(args, "config", "dataset", "out")
    rows = experiments.cmd_sweep(
        args.kind, args.config, args.dataset, args.out, args.m_eval, args.seed, args.force
    )
    failed = sum(1 for r in rows if r["error"])
    print(f"{len(rows)} cells written to {os.path.join(args.out, f'sweep_{args.kind}.csv')}"
          f" ({failed} failed)")


def build_parser():
    parser = argparse.ArgumentParser(prog="pnolab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *flags):
        if "config" in flags:
            p.add_argument("--config", help="JSON config file")
        if "dataset" in flags:
            p.add_argument("--dataset", help="dataset directory")
        if "out" in flags:
            p.add_argument("--out", help="output path")
        p.add_argument("--seed", type=int, default=None)
        if "force" in flags:
            p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
        if "m_eval" in flags:
            p.add_argument("--m-eval", type=int, default=100, help="ensemble size at evaluation")

    p = sub.add_parser("generate-data", help="simulate and write a dataset directory")
    common(p, "config", "out", "force")
    p.set_defaults(func=generate_data)

    p = sub.add_parser("train", help="train one model")
    common(p, "config", "dataset", "out", "force")
    p.set_defaults(func=train)

    p = sub.add_parser("evaluate", help="score checkpoints on the test split")
    common(p, "dataset", "out", "force", "m_eval")
    p.add_argument("--checkpoint", action="append", default=[], help="checkpoint file (repeatable)")
    p.set_defaults(func=evaluate)

    p = sub.add_parser("check-propriety", help="fuzz energy-score propriety")
    common(p, "out")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--dims", type=int, default=3)
    p.add_argument("--atoms", type=int, default=5)
    p.set_defaults(func=propriety)

    p = sub.add_parser("grad-check", help="finite-difference gradient suite")
    common(p, "out")
    p.set_defaults(func=grad_check)

    p = sub.add_parser("sweep", help="dropout-rate or sample-size sweep")
    common(p, "config", "dataset", "out", "force", "m_eval")
    p.add_argument("--kind", choices=("dropout", "samples"), required=True)
    p.set_defaults(func=sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except VerificationError as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERIFY
    except PNOError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
