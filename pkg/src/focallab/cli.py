"""Command-line entry point: ``focallab {generate,run,sweep,plot,report}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiments
from .config import ExperimentConfig, load_config, with_overrides
from .evaluator import read_histogram_csv
from .plotting import plot_focal_curves, plot_histogram

log = logging.getLogger("focallab")

LOSS_CHOICES = ("ce", "focal", "dfl", "poe")


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return with_overrides(
        cfg,
        loss=getattr(args, "loss", None),
        early_stopping=False if getattr(args, "no_early_stopping", False) else None,
        workers=getattr(args, "workers", None),
        output_dir=args.out,
    )


def _cmd_generate(args) -> int:
    cfg = _config(args)
    out = experiments.cmd_generate(cfg)
    print(out / "corpus")
    return 0


def _cmd_run(args) -> int:
    cfg = _config(args)
    result = experiments.cmd_run(cfg, args.gamma, args.inject, args.seed)
    print(json.dumps({"run": result.name, "status": result.status, **result.metrics}, sort_keys=True))
    return 0 if result.status == "ok" else 3


def _cmd_sweep(args) -> int:
    cfg = _config(args)
    results = experiments.cmd_sweep(cfg)
    failed = [r.name for r in results if r.status != "ok"]
    print(f"{len(results) - len(failed)}/{len(results)} runs completed; tables in {cfg.experiment_dir}")
    return 0 if not failed else 3


def _cmd_plot(args) -> int:
    cfg = _config(args)
    target = Path(args.target) if args.target else cfg.experiment_dir
    if not target.exists():
        raise FileNotFoundError(f"missing artifacts: {target}")
    run_dirs = [target] if (target / "prob_hist.csv").exists() else sorted((target / "runs").glob("*"))
    if (target / "runs").exists() or not run_dirs:
        plot_focal_curves(cfg.gamma_grid, target / "focal_curves.svg")
    if not run_dirs and not (target / "focal_curves.svg").exists():
        raise FileNotFoundError(f"missing artifacts: no runs under {target}")
    for run_dir in run_dirs:
        for stem in ("prob_hist", "loss_hist"):
            csv_path = run_dir / f"{stem}.csv"
            if not csv_path.exists():
                raise FileNotFoundError(f"missing run artifact: {csv_path}")
            plot_histogram(read_histogram_csv(csv_path), run_dir / f"{stem}.svg", title=run_dir.name)
    print(target)
    return 0


def _cmd_report(args) -> int:
    print(experiments.format_report(_config(args)))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment INI file (defaults apply when omitted)")
    common.add_argument("--out", help="override [experiment] output_dir")
    common.add_argument("-v", "--verbose", action="store_true")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--loss", choices=LOSS_CHOICES, help="override [train] loss")
    training.add_argument("--no-early-stopping", action="store_true",
                          help="keep the final-epoch parameters instead of the best-validation ones")

    parser = argparse.ArgumentParser(prog="focallab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write the synthetic corpus").set_defaults(func=_cmd_generate)

    p = sub.add_parser("run", parents=[common, training], help="train and evaluate one grid cell")
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--inject", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", parents=[common, training], help="run the full gamma x injection x seed grid")
    p.add_argument("--workers", type=int, help="parallel worker processes (default from config, 1)")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("plot", parents=[common], help="write SVG figures for a run or a whole experiment")
    p.add_argument("target", nargs="?", help="run directory or experiment directory")
    p.set_defaults(func=_cmd_plot)

    sub.add_parser("report", parents=[common], help="print mean ± std tables").set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:
        # One line on stderr so wrappers can parse failures.
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
