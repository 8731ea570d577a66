"""Command-line entry point: ``dpadv run|audit|calibrate``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from . import accountant, checkpoint, config, experiment, report

OUTPUT_ENV = "DPADV_OUTPUT_DIR"

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 2, 3


def _output_dir(cfg) -> Path:
    return Path(os.environ.get(OUTPUT_ENV) or cfg.output_dir)


def cmd_run(args) -> int:
    cfg = config.load(args.config)
    bundle = experiment.run(cfg, jobs=args.jobs, output_dir=_output_dir(cfg))
    sys.stdout.write(Path(bundle.files["report.txt"]).read_text())
    if bundle.failed:
        print(f"diverged: {', '.join(bundle.failed)}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


def cmd_audit(args) -> int:
    cfg = config.load(args.config)
    try:
        model = checkpoint.load(args.model)
    except (OSError, checkpoint.CheckpointError) as exc:
        raise config.ConfigError(f"cannot load model: {exc}") from None
    rows, reports = experiment.audit(model, cfg)
    out = _output_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"audit_{Path(args.model).stem}.csv").write_text(report.mia_csv(rows))
    sys.stdout.write(report.mia_csv(rows))
    return EXIT_OK


def cmd_calibrate(args) -> int:
    try:
        sigma = accountant.calibrate_sigma(args.eps, args.delta, args.q, args.steps)
    except accountant.PrivacyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    eps = accountant.epsilon(args.q, sigma, args.steps, args.delta)
    print(f"noise_multiplier={sigma!r}")
    print(f"epsilon={eps!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpadv", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train and audit every configured regime")
    p.add_argument("config")
    p.add_argument("--jobs", type=int, default=1, help="regimes trained in parallel")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("audit", help="membership-inference audit of a saved model")
    p.add_argument("model")
    p.add_argument("config")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("calibrate", help="noise multiplier for a target epsilon")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--delta", type=float, default=1e-5)
    p.add_argument("--q", type=float, required=True)
    p.add_argument("--steps", type=int, required=True)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except config.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
