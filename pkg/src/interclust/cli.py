"""Command-line driver.

Every pipeline setting has a flag; flags override the ``--config`` file,
which overrides the built-in defaults. Stage subcommands work on an existing
run directory (``--run``); ``prepare`` and ``run`` create a new one under
``--out`` when ``--run`` is not given.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import __version__
from .config import STAGES, PipelineConfig
from .pipeline import CONFIG_NAME, StageError, load_run_config, new_run_dir, run_pipeline, run_stage
from .synthetic import SyntheticSpec, generate_synthetic, write_truth

_HELP = {
    "input": "raw survey CSV (one column per item, optional 'id' column)",
    "features": "factor-score CSV with header 'id,<factor>,...' (skips item scoring)",
    "schema": "factor schema JSON (default: bundled six-factor schema)",
    "missing_token": "cell text that marks a missing response",
    "missing_threshold": "drop rows with more than this fraction of items missing",
    "k_min": "smallest k in the k sweeps",
    "k_max": "largest k in the k sweeps",
    "kdist_k": "neighbour rank for the k-distance curve (0 = 2 x features)",
    "knee_window": "moving-average width for knee detection (0 = max(3, N/100))",
    "eps": "DBSCAN radius (0 = knee of the k-distance curve)",
    "min_pts_min": "smallest DBSCAN min_pts in the sweep",
    "min_pts_max": "largest DBSCAN min_pts in the sweep",
    "bandwidth_min": "smallest mean-shift bandwidth",
    "bandwidth_max": "largest mean-shift bandwidth",
    "bandwidth_step": "mean-shift bandwidth step",
    "birch_threshold": "BIRCH subcluster radius threshold",
    "birch_branching": "BIRCH branching factor",
    "split": "training fraction of the stratified split",
    "learning_rate": "boosting learning rate",
    "max_depth": "maximum tree depth",
    "trees": "boosting rounds",
    "grid_size": "grid points per feature for PDP/ICE",
    "epsilon": "smoothing constant in the KL divergence",
    "pfi_repeats": "permutations per feature",
    "shap_samples": "test rows explained by Shapley values",
    "shap_background": "training rows in the Shapley background",
    "shap_mode": "single-model or retrain",
    "ice_max_lines": "ICE lines drawn per panel (0 = all)",
    "seed": "root random seed",
    "out": "directory that holds run-NNN directories",
}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline settings")
    g.add_argument("--config", type=Path, help="key = value configuration file")
    for f in fields(PipelineConfig):
        kind = {"int": int, "float": float}.get(f.type, str)
        default = f.default
        help_text = f"{_HELP.get(f.name, f.name)} (default: {default!r})"
        extra = {"choices": ["single-model", "retrain"]} if f.name == "shap_mode" else {}
        g.add_argument("--" + f.name.replace("_", "-"), dest=f.name, type=kind, default=None,
                       help=help_text, metavar=f.name.upper(), **extra)


def _overrides(args) -> dict:
    return {f.name: getattr(args, f.name) for f in fields(PipelineConfig) if getattr(args, f.name, None) is not None}


def _resolve(args, base: PipelineConfig | None = None) -> PipelineConfig:
    cfg = base or PipelineConfig()
    if args.config is not None:
        cfg = PipelineConfig.from_file(args.config, cfg)
    cfg = cfg.with_overrides(_overrides(args))
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="interclust",
                                     description="Cluster survey factor scores and explain the clusters.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run every stage into a new run directory")
    _add_config_flags(p)

    for stage in STAGES:
        p = sub.add_parser(stage, help=f"run the '{stage}' stage")
        p.add_argument("--run", type=Path, default=None,
                       help="run directory" + (" (default: create a new one)" if stage == "prepare" else ""))
        _add_config_flags(p)

    p = sub.add_parser("synth", help="write a seeded synthetic factor-score dataset")
    p.add_argument("--dest", type=Path, required=True, help="output directory")
    d = SyntheticSpec()
    p.add_argument("--n", type=int, nargs="+", default=list(d.n_per_cluster), help="samples per cluster")
    p.add_argument("--separation", type=float, default=d.separation, help="mean shift on ordinary features")
    p.add_argument("--dominant", type=int, default=d.dominant, help="index of the dominant feature")
    p.add_argument("--dominant-separation", type=float, default=d.dominant_separation)
    p.add_argument("--noise", type=float, default=d.noise, help="noise standard deviation")
    p.add_argument("--seed", type=int, default=d.seed)
    return parser


def _cmd_synth(args) -> int:
    spec = SyntheticSpec(tuple(args.n), separation=args.separation, dominant=args.dominant,
                         dominant_separation=args.dominant_separation, noise=args.noise, seed=args.seed)
    fm, truth = generate_synthetic(spec)
    args.dest.mkdir(parents=True, exist_ok=True)
    fm.to_csv(args.dest / "features.csv")
    write_truth(args.dest / "truth.csv", fm.respondent_ids, truth)
    (args.dest / "spec.json").write_text(spec.to_json(), encoding="utf-8")
    print(args.dest / "features.csv")
    return 0


def _cmd_stage(args) -> int:
    stage = args.command
    if args.run is None:
        if stage != "prepare":
            raise SystemExit(f"interclust {stage}: --run is required")
        cfg = _resolve(args)
        run = new_run_dir(cfg.out)
        cfg.save(run / CONFIG_NAME)
    else:
        run = args.run
        run.mkdir(parents=True, exist_ok=True)
        if (run / CONFIG_NAME).exists():
            cfg = _resolve(args, load_run_config(run))
        else:
            cfg = _resolve(args)
            cfg.save(run / CONFIG_NAME)
    run_stage(run, stage, cfg)
    print(run)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "synth":
            return _cmd_synth(args)
        if args.command == "run":
            run = run_pipeline(_resolve(args))
            print(run)
            return 0
        return _cmd_stage(args)
    except StageError as exc:
        print(f"interclust: error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, OSError) as exc:
        print(f"interclust: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
