"""The staged pipeline: prepare, select, cluster, vote, fit, explain, report.

Every stage reads its inputs from the run directory and writes into its own
subdirectory, so stages can be run one at a time. A stage refuses to
overwrite an existing output directory.
"""

from __future__ import annotations

import logging
import re
from pathlib import Path

import numpy as np

from . import boosted_predictor as bp
from . import cluster_engine as ce
from . import consensus, explainers, model_select, report
from ._io import read_json, write_csv, write_json
from .config import STAGES, PipelineConfig, stage_seed
from .dataset import FeatureMatrix, load_schema, prepare as prepare_survey
from .report import load_model_data, model_data

logger = logging.getLogger(__name__)

ALGORITHMS = ce.ALGORITHMS
CONFIG_NAME = "config.ini"


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


def new_run_dir(out: str | Path) -> Path:
    """Create ``out/run-NNN`` with the next free number."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    taken = [int(m.group(1)) for p in out.iterdir() if (m := re.fullmatch(r"run-(\d+)", p.name))]
    path = out / f"run-{max(taken, default=0) + 1:03d}"
    path.mkdir()
    return path


def _stage_dir(run: Path, stage: str) -> Path:
    d = run / stage
    if d.exists():
        raise FileExistsError(f"{d} already exists; stage outputs are never overwritten, start a new run")
    d.mkdir()
    return d


def _require(run: Path, stage: str) -> Path:
    d = run / stage
    if not d.is_dir():
        raise FileNotFoundError(f"missing output of stage '{stage}' in {run}; run it first")
    return d


def load_run_config(run: Path) -> PipelineConfig:
    path = run / CONFIG_NAME
    return PipelineConfig.from_file(path) if path.exists() else PipelineConfig()


def load_features(run: Path) -> FeatureMatrix:
    return FeatureMatrix.from_csv(_require(run, "prepare") / "features.csv")


def load_labelings(run: Path) -> dict[str, ce.Labeling]:
    d = _require(run, "cluster")
    return {alg: ce.Labeling.load(d / f"{alg}.csv")[0] for alg in ALGORITHMS}


# ------------------------------------------------------------------ stages

def stage_prepare(run: Path, cfg: PipelineConfig) -> dict:
    if cfg.features:
        features = FeatureMatrix.from_csv(cfg.features)
        summary = {"source": "features", "rows_loaded": features.n_samples, "rows_dropped": 0,
                   "rows_retained": features.n_samples, "cells_imputed": 0, "invalid_responses": 0}
    elif cfg.input:
        schema = load_schema(cfg.schema or None)
        features, summary = prepare_survey(cfg.input, schema, cfg.missing_token, cfg.missing_threshold)
        summary["source"] = "survey"
    else:
        raise ValueError("no input: give a survey CSV (input) or a factor-score CSV (features)")
    d = _stage_dir(run, "prepare")
    features.to_csv(d / "features.csv")
    summary["feature_names"] = features.feature_names
    write_json(d / "summary.json", summary)
    return summary


def stage_select(run: Path, cfg: PipelineConfig) -> dict:
    fm = load_features(run)
    X = fm.values
    d = _stage_dir(run, "select")
    k_max = min(cfg.k_max, X.shape[0] - 1)
    selection = {}
    for i, alg in enumerate(("kmeans", "agglomerative", "birch")):
        res = model_select.sweep_k(X, alg, cfg.k_min, k_max, seed=stage_seed(cfg.seed, "select", i),
                                   birch_threshold=cfg.birch_threshold, birch_branching=cfg.birch_branching)
        res.to_csv(d / f"{alg}_sweep.csv")
        selection[alg] = res.summary()
    knee = model_select.kdist_knee(X, cfg.kdist_k or None, cfg.knee_window or None)
    write_csv(d / "kdistance.csv", ["rank", "distance"],
              [[str(i), v] for i, v in enumerate(knee.distances)])
    eps = cfg.eps if cfg.eps > 0 else knee.eps
    res = model_select.sweep_min_samples(X, eps, range(cfg.min_pts_min, cfg.min_pts_max + 1))
    res.to_csv(d / "dbscan_sweep.csv")
    res.groups_to_csv(d / "dbscan_groups.csv")
    selection["dbscan"] = {**res.summary(), "knee_index": knee.knee_index, "knee_eps": knee.eps,
                           "kdist_k": knee.k, "knee_window": knee.window,
                           "eps_source": "config" if cfg.eps > 0 else "knee"}
    grid = model_select.bandwidth_grid(cfg.bandwidth_min, cfg.bandwidth_max, cfg.bandwidth_step)
    res = model_select.sweep_bandwidth(X, grid)
    res.to_csv(d / "mean_shift_sweep.csv")
    res.groups_to_csv(d / "mean_shift_groups.csv")
    selection["mean_shift"] = res.summary()
    write_json(d / "selection.json", selection)
    bad = [a for a in ALGORITHMS if selection[a]["chosen"] is None]
    if bad:
        raise ValueError(f"no parameter value produced 2 or more clusters for: {', '.join(bad)}")
    return selection


def stage_cluster(run: Path, cfg: PipelineConfig) -> dict[str, ce.Labeling]:
    fm = load_features(run)
    X = fm.values
    sel = read_json(_require(run, "select") / "selection.json")
    d = _stage_dir(run, "cluster")
    out = {}
    for i, alg in enumerate(ALGORITHMS):
        seed = stage_seed(cfg.seed, "cluster", i)
        if alg == "kmeans":
            lab, _ = ce.kmeans(X, int(sel[alg]["chosen"]), seed=seed)
        elif alg == "dbscan":
            lab = ce.dbscan(X, float(sel[alg]["eps"]), int(sel[alg]["chosen"]))
        elif alg == "agglomerative":
            lab = ce.agglomerative_ward(X, int(sel[alg]["chosen"]))
        elif alg == "mean_shift":
            lab, _ = ce.mean_shift(X, float(sel[alg]["chosen"]))
        else:
            lab = ce.birch(X, int(sel[alg]["chosen"]), cfg.birch_threshold, cfg.birch_branching, seed=seed)
        lab.save(d / f"{alg}.csv", fm.respondent_ids)
        out[alg] = lab
    return out


def stage_vote(run: Path, cfg: PipelineConfig) -> dict:
    fm = load_features(run)
    labs = load_labelings(run)
    aligned, cons = consensus.vote([labs[a] for a in ALGORITHMS], fm.values, fm.respondent_ids)
    d = _stage_dir(run, "vote")
    write_csv(d / "aligned.csv", ["id", *ALGORITHMS],
              [[rid, *map(str, row)] for rid, row in zip(fm.respondent_ids, aligned.matrix.tolist())])
    cons.to_csv(d / "consensus.csv", fm.respondent_ids)
    summary = {"rule": aligned.rule,
               "orientation": {a: {"cluster_1": o[0], "cluster_2": o[1]}
                               for a, o in zip(aligned.algorithms, aligned.orientation)},
               "sizes": np.bincount(cons.labels, minlength=3)[1:].tolist(),
               "n_tiebreak": int(cons.tiebreak.sum()),
               "noise_policy": "noise labels abstain"}
    write_json(d / "summary.json", summary)
    return summary


def stage_fit(run: Path, cfg: PipelineConfig) -> list[dict]:
    fm = load_features(run)
    labs = load_labelings(run)
    d = _stage_dir(run, "fit")
    metrics = []
    for i, alg in enumerate(ALGORITHMS):
        X, y, ids = model_data(fm, labs[alg])
        seed = stage_seed(cfg.seed, "fit", i)
        split = bp.train_test_split(y, cfg.split, seed)
        model = bp.fit(X[split.train], y[split.train], cfg.learning_rate, cfg.max_depth, cfg.trees, seed,
                       fm.feature_names)
        model.save(d / f"{alg}_model.json")
        side = np.zeros(y.size, dtype=bool)
        side[split.train] = True
        write_csv(d / f"{alg}_split.csv", ["id", "set"],
                  [[rid, "train" if s else "test"] for rid, s in zip(ids, side)])
        metrics.append({"model": alg, "accuracy": bp.accuracy(model, X[split.test], y[split.test]),
                        "n_train": int(split.train.size), "n_test": int(split.test.size), "seed": seed})
    bp.metrics_to_csv(metrics, d / "metrics.csv")
    return metrics


def stage_explain(run: Path, cfg: PipelineConfig) -> dict:
    fm = load_features(run)
    labs = load_labelings(run)
    d = _stage_dir(run, "explain")
    out = {}
    for i, alg in enumerate(ALGORITHMS):
        model, X, y, tr, te = load_model_data(run, fm, labs[alg], alg)
        seed = stage_seed(cfg.seed, "explain", i)
        q = explainers.qpdp(model, X, fm.feature_names, cfg.grid_size, cfg.epsilon)
        if cfg.shap_mode == "retrain":
            rng = np.random.default_rng(seed)
            idx = explainers.sample_rows(te.size, cfg.shap_samples, rng)
            fit_fn = lambda Xs, ys: bp.fit(Xs, ys, cfg.learning_rate, cfg.max_depth, cfg.trees, seed)  # noqa: E731
            att = explainers.shapley_retrain(fit_fn, X[tr], y[tr], X[te][idx])
        else:
            ms = explainers.mean_abs_shap(model, X[te], X[tr], cfg.shap_samples, cfg.shap_background, seed)
            att, idx = ms.attribution, ms.sample_index
        perm = explainers.pfi(model, X[te], y[te], cfg.pfi_repeats, seed)
        record = {
            "algorithm": alg,
            "response": explainers.RESPONSE,
            "epsilon": q.epsilon,
            "kl_orientation": q.orientation,
            "pdp": [{"feature": name, "grid": c.grid, "pd": c.pd, "nppd": f.nppd.mass}
                    for name, c, f in zip(fm.feature_names, q.curves, q.fits)],
            "qpdp": [{"feature": name, "kl": f.kl, "kl_direction": f.kl_direction,
                      "kl_truncation": f.kl_truncation, "mse": f.mse, "mse_direction": f.mse_direction,
                      "mse_truncation": f.mse_truncation} for name, f in zip(fm.feature_names, q.fits)],
            "shap": {"mode": att.mode, "background": att.background, "rows": te[idx],
                     "values": att.values, "mean_abs": np.abs(att.values).mean(axis=0),
                     "baseline": att.baseline, "efficiency_gap":
                         float(np.abs(att.values.sum(axis=1) - (att.prediction - att.baseline)).max())},
            "pfi": {"mean": perm.mean, "std": perm.std, "baseline_accuracy": perm.baseline,
                    "repeats": cfg.pfi_repeats, "drops": perm.drops},
        }
        write_json(d / f"{alg}.json", record)
        out[alg] = record
    return out


def stage_report(run: Path, cfg: PipelineConfig) -> dict:
    for s in STAGES[:-1]:
        _require(run, s)
    d = _stage_dir(run, "report")
    return report.emit(run, d, cfg)


STAGE_FUNCS = {"prepare": stage_prepare, "select": stage_select, "cluster": stage_cluster,
               "vote": stage_vote, "fit": stage_fit, "explain": stage_explain, "report": stage_report}


def run_stage(run: Path, stage: str, cfg: PipelineConfig):
    logger.info("stage %s", stage)
    try:
        return STAGE_FUNCS[stage](Path(run), cfg)
    except Exception as exc:  # reported with the stage name by the caller
        raise StageError(stage, exc) from exc


def run_pipeline(cfg: PipelineConfig, run: Path | None = None) -> Path:
    """Run every stage into a fresh run directory and return it."""
    cfg.validate()
    run = new_run_dir(cfg.out) if run is None else Path(run)
    cfg.save(run / CONFIG_NAME)
    for stage in STAGES:
        run_stage(run, stage, cfg)
    return run
