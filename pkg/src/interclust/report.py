"""Tables (CSV) and figures (SVG) assembled from a finished run directory."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import cluster_engine as ce
from . import explainers, svg
from .boosted_predictor import BoostedModel
from ._io import read_csv, read_json, write_csv, write_json
from .dataset import FeatureMatrix

ALGORITHMS = ce.ALGORITHMS
METHODS = ("qpdp_kl", "qpdp_mse", "shap", "pfi")


class MissingArtifactError(FileNotFoundError):
    pass


def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"missing {path.name} from stage '{stage}'")
    return path


def load_artifacts(run: Path) -> dict:
    run = Path(run)
    fm = FeatureMatrix.from_csv(_need(run / "prepare" / "features.csv", "prepare"))
    art = {"features": fm,
           "prepare": read_json(_need(run / "prepare" / "summary.json", "prepare")),
           "selection": read_json(_need(run / "select" / "selection.json", "select")),
           "labelings": {a: ce.Labeling.load(_need(run / "cluster" / f"{a}.csv", "cluster"))[0]
                         for a in ALGORITHMS}}
    _, rows = read_csv(_need(run / "vote" / "aligned.csv", "vote"))
    art["aligned"] = np.array([[int(v) for v in r[1:]] for r in rows], dtype=np.intp).reshape(len(rows), -1)
    _, rows = read_csv(_need(run / "vote" / "consensus.csv", "vote"))
    art["consensus"] = np.array([int(r[1]) for r in rows], dtype=np.intp)
    _, rows = read_csv(_need(run / "fit" / "metrics.csv", "fit"))
    art["metrics"] = rows
    art["explain"] = {a: read_json(_need(run / "explain" / f"{a}.json", "explain")) for a in ALGORITHMS}
    for a in ALGORITHMS:
        for key in ("qpdp", "shap", "pfi", "pdp"):
            if not art["explain"][a].get(key):
                raise MissingArtifactError(f"explanations for {a} lack '{key}' (stage 'explain')")
    return art


def _group_means(X, labels, c):
    m = labels == c
    if not m.any():
        return 0, np.full(X.shape[1], np.nan), float("nan")
    mu = X[m].mean(axis=0)
    return int(m.sum()), mu, float(X[m].mean())


def importance_columns(explain: dict, feature_names) -> dict:
    cols = {}
    for a in ALGORITHMS:
        e = explain[a]
        cols[("qpdp_kl", a)] = [q["kl"] for q in e["qpdp"]]
        cols[("qpdp_mse", a)] = [q["mse"] for q in e["qpdp"]]
        cols[("shap", a)] = e["shap"]["mean_abs"]
        cols[("pfi", a)] = e["pfi"]["mean"]
    return cols


def emit_tables(art: dict, outdir: Path) -> dict:
    fm = art["features"]
    X, names = fm.values, fm.feature_names
    rows = []
    for j, a in enumerate(ALGORITHMS):
        for c in (1, 2):
            n, mu, g = _group_means(X, art["aligned"][:, j], c)
            rows.append([a, str(c), n, *mu, g])
    write_csv(outdir / "cluster_means.csv", ["method", "cluster", "size", *names, "grand_mean"], rows)

    rows = []
    for j, a in enumerate(ALGORITHMS):
        col = art["aligned"][:, j]
        rows.append([a, int((col == 1).sum()), int((col == 2).sum()), int((col == 0).sum())])
    cons = art["consensus"]
    rows.append(["consensus", int((cons == 1).sum()), int((cons == 2).sum()), 0])
    write_csv(outdir / "cluster_sizes.csv", ["method", "cluster_1", "cluster_2", "noise"], rows)

    write_csv(outdir / "accuracy.csv", ["method", "accuracy", "n_train", "n_test", "seed"], art["metrics"])

    ex = art["explain"]
    write_csv(outdir / "qpdp_kl.csv", ["method", *names], [[a, *(q["kl"] for q in ex[a]["qpdp"])] for a in ALGORITHMS])
    write_csv(outdir / "qpdp_mse.csv", ["method", *names], [[a, *(q["mse"] for q in ex[a]["qpdp"])] for a in ALGORITHMS])
    write_csv(outdir / "shap_mean_abs.csv", ["method", *names], [[a, *ex[a]["shap"]["mean_abs"]] for a in ALGORITHMS])
    write_csv(outdir / "pfi_mean.csv", ["method", *names], [[a, *ex[a]["pfi"]["mean"]] for a in ALGORITHMS])
    write_csv(outdir / "pfi_std.csv", ["method", *names], [[a, *ex[a]["pfi"]["std"]] for a in ALGORITHMS])

    rows, grand = [], {}
    for c in (1, 2):
        n, mu, g = _group_means(X, cons, c)
        rows.append([str(c), n, *mu, g])
        grand[c] = g
    write_csv(outdir / "consensus_means.csv", ["cluster", "size", *names, "grand_mean"], rows)

    table = explainers.importance_consensus(importance_columns(ex, names), names)
    table.to_csv(outdir / "importance_ranks.csv")
    top = {f"{m}:{a}": names[int(np.argmin(table.ranks[:, i]))] for i, (m, a) in enumerate(table.columns)}
    return {"consensus_grand_mean": grand, "top_feature": top,
            "importance_order": [names[j] for j in table.order], "importance_ties": table.ties}


def model_data(fm: FeatureMatrix, lab: ce.Labeling):
    """Rows a classifier is trained on: everything except noise."""
    keep = lab.labels != ce.NOISE
    return fm.values[keep], lab.labels[keep], [r for r, k in zip(fm.respondent_ids, keep) if k]


def load_model_data(run: Path, fm: FeatureMatrix, lab: ce.Labeling, alg: str):
    """``(model, X, y, train_index, test_index)`` for one algorithm's classifier."""
    d = Path(run) / "fit"
    model = BoostedModel.load(_need(d / f"{alg}_model.json", "fit"))
    X, y, ids = model_data(fm, lab)
    _, rows = read_csv(_need(d / f"{alg}_split.csv", "fit"))
    if [r[0] for r in rows] != ids:
        raise ValueError(f"{alg}: split file does not match the labeling")
    is_train = np.array([r[1] == "train" for r in rows])
    return model, X, y, np.flatnonzero(is_train), np.flatnonzero(~is_train)


# ------------------------------------------------------------------ figures

def _sweep_k_figure(path, alg, sweep_rows):
    k = [float(r[0]) for r in sweep_rows]
    sil = [float(r[2]) if r[2] else np.nan for r in sweep_rows]
    ch = [float(r[3]) if r[3] else np.nan for r in sweep_rows]
    p1 = svg.Panel("Silhouette", "k", "score", data={"k": k, "silhouette": sil})
    p1.line(k, sil, markers=True)
    p2 = svg.Panel("Calinski-Harabasz", "k", "score", data={"k": k, "calinski_harabasz": ch})
    p2.line(k, ch, color=svg.PALETTE[1], markers=True)
    svg.figure([p1, p2], path, f"{alg}: validity scores by cluster count", columns=2)


def _grouped_figure(path, alg, param, sweep_rows):
    v = [float(r[0]) for r in sweep_rows]
    k = [float(r[1]) for r in sweep_rows]
    sil = [float(r[2]) if r[2] else np.nan for r in sweep_rows]
    p1 = svg.Panel("Cluster count", param, "clusters", data={param: v, "k": k})
    p1.line(v, k, markers=True)
    p2 = svg.Panel("Silhouette", param, "score", data={param: v, "silhouette": sil})
    p2.line(v, sil, color=svg.PALETTE[1], markers=True)
    svg.figure([p1, p2], path, f"{alg}: sweep over {param}", columns=2)


def _ice_subset(n: int, max_lines: int) -> np.ndarray:
    if max_lines <= 0 or n <= max_lines:
        return np.arange(n)
    return np.unique(np.linspace(0, n - 1, max_lines).round().astype(np.intp))


def emit_figures(art: dict, outdir: Path, run: Path, cfg) -> dict:
    fm = art["features"]
    names = fm.feature_names
    sel_dir = Path(run) / "select"
    for a in ("kmeans", "agglomerative", "birch"):
        _, rows = read_csv(sel_dir / f"{a}_sweep.csv")
        _sweep_k_figure(outdir / f"sweep_{a}.svg", a, rows)
    _, rows = read_csv(sel_dir / "dbscan_sweep.csv")
    _grouped_figure(outdir / "sweep_dbscan.svg", "dbscan", "min_pts", rows)
    _, rows = read_csv(sel_dir / "mean_shift_sweep.csv")
    _grouped_figure(outdir / "sweep_mean_shift.svg", "mean_shift", "bandwidth", rows)

    _, rows = read_csv(sel_dir / "kdistance.csv")
    dist = [float(r[1]) for r in rows]
    knee = art["selection"]["dbscan"]["knee_index"]
    p = svg.Panel("Sorted k-distance", "sample rank", "distance", width=520, height=320,
                  data={"distance": dist, "knee_index": knee})
    p.line(np.arange(len(dist)), dist)
    p.vline(knee, label=f"knee, eps={dist[knee]:.4f}")
    svg.figure([p], outdir / "kdistance.svg")

    max_gap = 0.0
    for a in ALGORITHMS:
        e = art["explain"][a]
        model, X, _, _, _ = load_model_data(Path(run), fm, art["labelings"][a], a)
        keep = _ice_subset(X.shape[0], cfg.ice_max_lines)
        panels = []
        for j, name in enumerate(names):
            bundle = explainers.ice(model, X, j, len(e["pdp"][j]["grid"]))
            pd = np.array(e["pdp"][j]["pd"])
            max_gap = max(max_gap, float(np.abs(bundle.lines.mean(axis=0) - pd).max()))
            pn = svg.Panel(name, name, "P(cluster 2)", ylim=(-0.02, 1.02),
                           data={"grid": bundle.grid, "pd": pd, "n_lines": X.shape[0], "n_drawn": keep.size})
            for i in keep:
                pn.line(bundle.grid, bundle.lines[i], color="#6baed6", width=0.6, opacity=0.25)
            pn.line(bundle.grid, pd, color="#d62728", width=2.5, label="PDP")
            panels.append(pn)
        svg.figure(panels, outdir / f"pdp_ice_{a}.svg", f"{a}: ICE lines and partial dependence")

        panels = []
        for j, name in enumerate(names):
            q = e["qpdp"][j]
            u = np.linspace(0, 1, len(e["pdp"][j]["nppd"]))
            kl_step = explainers.step_pdf(q["kl_direction"], q["kl_truncation"], u).mass
            se_step = explainers.step_pdf(q["mse_direction"], q["mse_truncation"], u).mass
            pn = svg.Panel(f"{name}  KL={q['kl']:.3g}  MSE={q['mse']:.3g}", "normalized value", "mass",
                           data={"u": u, "nppd": e["pdp"][j]["nppd"], "kl_step": kl_step, "mse_step": se_step})
            pn.line(u, e["pdp"][j]["nppd"], color=svg.PALETTE[0], label="nppd")
            pn.line(u, kl_step, color=svg.PALETTE[1], label="step (KL)")
            pn.line(u, se_step, color=svg.PALETTE[2], dash="5 3", label="step (MSE)")
            panels.append(pn)
        svg.figure(panels, outdir / f"qpdp_{a}.svg", f"{a}: normalized partial dependence and best step fits")

        vals = np.array(e["shap"]["values"], dtype=np.float64).reshape(-1, len(names))
        rows_idx = np.array(e["shap"]["rows"], dtype=np.intp)
        order = np.argsort(-np.abs(vals).mean(axis=0), kind="stable")
        pn = svg.Panel("SHAP values", "Shapley value", "feature (by mean |value|)", width=620,
                       height=60 + 45 * len(names),
                       data={"features": [names[j] for j in order], "values": vals[:, order]})
        for pos, j in enumerate(order):
            v = vals[:, j]
            high = X[rows_idx, j] > np.median(X[:, j]) if rows_idx.size else np.zeros(0, bool)
            rank = np.argsort(np.argsort(v, kind="stable"), kind="stable")
            jitter = ((rank * 0.618034) % 1.0 - 0.5) * 0.6 if v.size else v
            y = len(names) - 1 - pos + jitter
            pn.points(v[~high], y[~high], color=svg.PALETTE[0], r=1.6, label="low value" if pos == 0 else None)
            pn.points(v[high], y[high], color=svg.PALETTE[1], r=1.6, label="high value" if pos == 0 else None)
        svg.figure([pn], outdir / f"shap_{a}.svg", f"{a}: Shapley values per sample")
    return {"ice_pdp_max_abs_diff": max_gap}


def emit(run: Path, outdir: Path, cfg) -> dict:
    art = load_artifacts(run)
    summary = emit_tables(art, outdir)
    summary.update(emit_figures(art, outdir, run, cfg))
    summary["n_clusters"] = {a: int(art["labelings"][a].n_clusters) for a in ALGORITHMS}
    summary["selection"] = {a: {"chosen": art["selection"][a]["chosen"], "k": art["selection"][a]["chosen_k"]}
                            for a in ALGORITHMS}
    summary["accuracy"] = {r[0]: float(r[1]) for r in art["metrics"]}
    summary["prepare"] = art["prepare"]
    write_json(outdir / "summary.json", summary)
    return summary
