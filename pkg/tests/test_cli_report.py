import filecmp
import json

import numpy as np
import pytest

import oracles
from interclust import cli, svg
from interclust._io import read_csv, write_csv
from interclust.cluster_engine import kmeans
from interclust.config import STAGES, PipelineConfig, stage_seed
from interclust.dataset import FeatureMatrix
from interclust.pipeline import StageError, run_pipeline, run_stage
from interclust.report import MissingArtifactError, load_artifacts
from interclust.synthetic import SyntheticSpec, generate_synthetic

SMALL = ["--k-max", "5", "--min-pts-max", "20", "--bandwidth-min", "0.6", "--bandwidth-max", "1.6",
         "--bandwidth-step", "0.25", "--trees", "10", "--pfi-repeats", "3", "--shap-samples", "20",
         "--shap-background", "10", "--grid-size", "10"]


def tree_equal(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(tree_equal(a / d, b / d) for d in cmp.common_dirs)


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    assert cli.main(["synth", "--dest", str(base / "data"), "--n", "60", "60"]) == 0
    args = ["run", "--features", str(base / "data" / "features.csv"), "--out", str(base / "runs"), *SMALL]
    assert cli.main(args) == 0
    assert cli.main(args) == 0
    return base


# -- configuration --------------------------------------------------------------

def test_defaults_follow_reported_settings():
    c = PipelineConfig()
    assert (c.k_min, c.k_max, c.kdist_k, c.min_pts_min, c.min_pts_max) == (2, 11, 0, 1, 200)
    assert (c.bandwidth_min, c.bandwidth_max, c.split, c.learning_rate, c.max_depth, c.trees) == (0.1, 0.3, 0.7, 1.0, 10, 100)
    assert (c.pfi_repeats, c.shap_samples) == (30, 1000)


def test_config_round_trip(tmp_path):
    c = PipelineConfig(k_max=7, eps=0.25, shap_mode="retrain", out="x y")
    c.save(tmp_path / "c.ini")
    assert PipelineConfig.from_file(tmp_path / "c.ini") == c


def test_config_errors(tmp_path):
    (tmp_path / "bad.ini").write_text("nonsense = 3\n")
    with pytest.raises(KeyError):
        PipelineConfig.from_file(tmp_path / "bad.ini")
    (tmp_path / "bad2.ini").write_text("k_max = many\n")
    with pytest.raises(ValueError):
        PipelineConfig.from_file(tmp_path / "bad2.ini")
    with pytest.raises(ValueError):
        PipelineConfig(k_min=1).validate()


def test_flags_override_config_file(tmp_path):
    (tmp_path / "c.ini").write_text("k_max = 6\ntrees = 7  # comment\n")
    args = cli.build_parser().parse_args(["run", "--config", str(tmp_path / "c.ini"), "--trees", "9"])
    cfg = cli._resolve(args)
    assert (cfg.k_max, cfg.trees, cfg.max_depth) == (6, 9, 10)


def test_stage_seeds_distinct_and_stable():
    seeds = {stage_seed(0, s, i) for s in STAGES for i in range(5)}
    assert len(seeds) == 35
    assert stage_seed(3, "fit", 1) == stage_seed(3, "fit", 1) != stage_seed(4, "fit", 1)


# -- synthetic generator -------------------------------------------------------------

def test_synthetic_deterministic_and_bounded():
    a, ya = generate_synthetic(SyntheticSpec(n_per_cluster=(50, 40), seed=2))
    b, yb = generate_synthetic(SyntheticSpec(n_per_cluster=(50, 40), seed=2))
    assert np.array_equal(a.values, b.values) and np.array_equal(ya, yb)
    assert a.values.min() >= 1 and a.values.max() <= 5
    assert np.bincount(ya)[1:].tolist() == [50, 40]


def test_synthetic_kmeans_recovers_truth():
    fm, y = generate_synthetic(SyntheticSpec(n_per_cluster=(300, 300), seed=1))
    lab, _ = kmeans(fm.values, 2, seed=0)
    assert oracles.same_partition(lab.labels, y)


def test_synthetic_dominant_feature_has_largest_gap():
    spec = SyntheticSpec()
    gap = spec.means()[0] - spec.means()[1]
    assert np.argmax(gap) == spec.dominant and np.sum(gap == gap.max()) == 1


def test_synthetic_spec_validation_and_json():
    with pytest.raises(ValueError):
        SyntheticSpec(base=4.9, dominant_separation=4.5).validate()
    with pytest.raises(ValueError):
        SyntheticSpec(noise=0).validate()
    s = SyntheticSpec(n_per_cluster=(3, 4), seed=5)
    assert SyntheticSpec.from_json(s.to_json()) == s


# -- CSV and SVG helpers -------------------------------------------------------------

def test_csv_round_trip(tmp_path):
    rows = [["a", 1, 0.5, 1.25], ["b,c", 2, -3.0, 1e-7]]
    write_csv(tmp_path / "t.csv", ["name", "n", "x", "y"], rows)
    header, back = read_csv(tmp_path / "t.csv")
    assert header == ["name", "n", "x", "y"]
    assert back == [["a", "1", "0.500000", "1.250000"], ["b,c", "2", "-3.000000", "0.000000"]]
    write_csv(tmp_path / "u.csv", header, back)
    assert (tmp_path / "u.csv").read_text() == (tmp_path / "t.csv").read_text()


def test_svg_embeds_data(tmp_path):
    p = svg.Panel("curve", data={"x": np.arange(3.0), "bad": float("nan")})
    p.line([0, 1, 2], [0, 1, 4])
    svg.figure([p], tmp_path / "f.svg", title="a < b & c")
    meta = svg.read_metadata(tmp_path / "f.svg")
    assert meta == {"curve": {"x": [0.0, 1.0, 2.0], "bad": None}}
    assert (tmp_path / "f.svg").read_text().startswith("<svg")


def test_nice_ticks():
    assert svg.nice_ticks(0, 1) == [0.0, 0.25, 0.5, 0.75, 1.0]
    assert svg.nice_ticks(2, 2) == [2]


# -- pipeline ---------------------------------------------------------------------------

def test_run_directory_contents(small_run):
    run = small_run / "runs" / "run-001"
    for stage in STAGES:
        assert (run / stage).is_dir()
    labs = sorted(p.name for p in (run / "cluster").glob("*.csv"))
    assert labs == ["agglomerative.csv", "birch.csv", "dbscan.csv", "kmeans.csv", "mean_shift.csv"]
    for name in ("qpdp_kl", "qpdp_mse", "shap_mean_abs", "pfi_mean"):
        header, rows = read_csv(run / "report" / f"{name}.csv")
        assert header == ["method", "OSC1", "OSC2", "OSC3", "GSC1", "GSC2", "GSC3"] and len(rows) == 5


def test_consensus_table_and_orientation(small_run):
    header, rows = read_csv(small_run / "runs" / "run-001" / "report" / "consensus_means.csv")
    assert len(rows) == 2 and len(header) == 9
    assert float(rows[0][-1]) > float(rows[1][-1])


def test_figures_have_one_panel_per_feature(small_run):
    rep = small_run / "runs" / "run-001" / "report"
    meta = svg.read_metadata(rep / "pdp_ice_kmeans.svg")
    assert sorted(meta) == sorted(["OSC1", "OSC2", "OSC3", "GSC1", "GSC2", "GSC3"])
    assert meta["OSC1"]["n_drawn"] == meta["OSC1"]["n_lines"]
    sweep = svg.read_metadata(rep / "sweep_kmeans.svg")
    assert any(len(v.get("k", [])) == 4 for v in sweep.values())


def test_report_summary(small_run):
    s = json.loads((small_run / "runs" / "run-001" / "report" / "summary.json").read_text())
    assert s["importance_order"][0] == "OSC3"
    assert s["ice_pdp_max_abs_diff"] <= 1e-12
    assert set(s["n_clusters"].values()) == {2}


def test_two_runs_identical(small_run):
    assert tree_equal(small_run / "runs" / "run-001", small_run / "runs" / "run-002")


def test_artifacts_load(small_run):
    art = load_artifacts(small_run / "runs" / "run-001")
    assert art["aligned"].shape == (120, 5)
    fm = FeatureMatrix.from_csv(small_run / "runs" / "run-001" / "prepare" / "features.csv")
    assert fm.n_samples == 120


def test_stages_one_at_a_time_match_full_run(small_run, tmp_path):
    run = tmp_path / "staged"
    feats = str(small_run / "data" / "features.csv")
    for stage in STAGES:
        assert cli.main([stage, "--run", str(run), "--features", feats, "--out", str(small_run / "runs"), *SMALL]) == 0
    assert tree_equal(run, small_run / "runs" / "run-001")


def test_stage_refuses_to_overwrite(small_run, capsys):
    run = small_run / "runs" / "run-001"
    assert cli.main(["vote", "--run", str(run)]) == 1
    assert "stage 'vote' failed" in capsys.readouterr().err


def test_missing_prerequisite_stage(tmp_path, capsys):
    assert cli.main(["fit", "--run", str(tmp_path / "empty")]) == 1
    err = capsys.readouterr().err
    assert "stage 'fit'" in err and "prepare" in err


def test_missing_input_names_stage(tmp_path):
    cfg = PipelineConfig(out=str(tmp_path))
    with pytest.raises(StageError) as e:
        run_pipeline(cfg)
    assert e.value.stage == "prepare"
    assert (tmp_path / "run-001" / "config.ini").exists()


def test_report_on_partial_run_names_missing_artifact(small_run, tmp_path):
    import shutil
    run = tmp_path / "partial"
    shutil.copytree(small_run / "runs" / "run-001", run)
    shutil.rmtree(run / "report")
    (run / "explain" / "kmeans.json").unlink()
    with pytest.raises(MissingArtifactError, match="explain"):
        load_artifacts(run)
    with pytest.raises(StageError):
        run_stage(run, "report", PipelineConfig())


def test_bad_flag_value_exit_code(tmp_path, capsys):
    assert cli.main(["run", "--features", "x.csv", "--split", "1.5", "--out", str(tmp_path)]) == 2
    assert "split" in capsys.readouterr().err


def test_survey_input_end_to_end(tmp_path):
    rng = np.random.default_rng(0)
    n, items = 80, ["a1", "a2", "b1", "b2"]
    grp = np.repeat([0, 1], n // 2)
    vals = np.clip(np.rint(np.where(grp[:, None] == 0, 4.5, 1.5) + rng.normal(0, 0.4, (n, 4))), 1, 5)
    lines = ["id," + ",".join(items)]
    for i in range(n):
        cells = [str(int(v)) for v in vals[i]]
        if i == 0:
            cells[1] = ""
        lines.append(f"r{i:03d}," + ",".join(cells))
    (tmp_path / "survey.csv").write_text("\n".join(lines) + "\n")
    (tmp_path / "schema.json").write_text(json.dumps({"factors": [
        {"name": "A", "items": ["a1", "a2"]}, {"name": "B", "items": ["b1", {"name": "b2", "reverse": False}]}]}))
    args = ["run", "--input", str(tmp_path / "survey.csv"), "--schema", str(tmp_path / "schema.json"),
            "--out", str(tmp_path / "runs"), "--missing-threshold", "0.3", *SMALL,
            "--bandwidth-min", "0.5", "--bandwidth-max", "1.5"]
    assert cli.main(args) == 0
    s = json.loads((tmp_path / "runs" / "run-001" / "prepare" / "summary.json").read_text())
    assert s["cells_imputed"] == 1 and s["rows_retained"] == 80
