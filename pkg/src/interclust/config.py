"""Pipeline configuration: defaults, ``key = value`` files and overrides."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

STAGES = ("prepare", "select", "cluster", "vote", "fit", "explain", "report")


@dataclass(frozen=True)
class PipelineConfig:
    # inputs
    input: str = ""  # raw survey CSV
    features: str = ""  # already-scored factor CSV (skips item scoring)
    schema: str = ""  # factor schema JSON; empty = bundled default
    missing_token: str = ""
    missing_threshold: float = 0.10
    # model selection
    k_min: int = 2
    k_max: int = 11
    kdist_k: int = 0  # 0 = twice the feature count
    knee_window: int = 0  # 0 = max(3, N // 100)
    eps: float = 0.0  # 0 = take the knee of the k-distance curve
    min_pts_min: int = 1
    min_pts_max: int = 200
    bandwidth_min: float = 0.1
    bandwidth_max: float = 0.3
    bandwidth_step: float = 0.01
    birch_threshold: float = 0.5
    birch_branching: int = 50
    # classifier
    split: float = 0.7
    learning_rate: float = 1.0
    max_depth: int = 10
    trees: int = 100
    # explainers
    grid_size: int = 50
    epsilon: float = 1e-8
    pfi_repeats: int = 30
    shap_samples: int = 1000
    shap_background: int = 200
    shap_mode: str = "single-model"
    ice_max_lines: int = 1000  # 0 = draw every ICE line
    # run
    seed: int = 0
    out: str = "runs"

    def validate(self) -> None:
        if not 2 <= self.k_min <= self.k_max:
            raise ValueError("need 2 <= k_min <= k_max")
        if not 1 <= self.min_pts_min <= self.min_pts_max:
            raise ValueError("need 1 <= min_pts_min <= min_pts_max")
        if not 0 < self.bandwidth_min <= self.bandwidth_max or self.bandwidth_step <= 0:
            raise ValueError("need 0 < bandwidth_min <= bandwidth_max and bandwidth_step > 0")
        if not 0 < self.split < 1:
            raise ValueError("split must lie in (0, 1)")
        if self.learning_rate <= 0 or self.trees < 1 or self.max_depth < 1:
            raise ValueError("need learning_rate > 0, trees >= 1, max_depth >= 1")
        if self.shap_mode not in ("single-model", "retrain"):
            raise ValueError("shap_mode must be 'single-model' or 'retrain'")
        if self.pfi_repeats < 1 or self.shap_samples < 1 or self.shap_background < 1 or self.grid_size < 2:
            raise ValueError("explainer sample counts must be positive and grid_size >= 2")
        if self.eps < 0 or self.epsilon <= 0 or self.seed < 0:
            raise ValueError("eps must be >= 0, epsilon > 0 and seed >= 0")

    def to_text(self) -> str:
        lines = ["# interclust pipeline configuration"]
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_text(), encoding="utf-8")

    def with_overrides(self, values: dict) -> "PipelineConfig":
        known = {f.name: f for f in fields(self)}
        clean = {}
        for key, value in values.items():
            name = key.replace("-", "_")
            if name not in known:
                raise KeyError(f"unknown configuration key {key!r}")
            if value is not None:
                clean[name] = _coerce(known[name].type, value, name)
        return replace(self, **clean)

    @classmethod
    def from_file(cls, path: str | Path, base: "PipelineConfig | None" = None) -> "PipelineConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        text = Path(path).read_text(encoding="utf-8")
        parser.read_string("[pipeline]\n" + text)
        return (base or cls()).with_overrides(dict(parser["pipeline"]))


def _format(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(type_name, value, name):
    if not isinstance(value, str):
        return value
    try:
        if type_name in ("int", int):
            return int(value)
        if type_name in ("float", float):
            return float(value)
    except ValueError as exc:
        raise ValueError(f"{name}: cannot parse {value!r}") from exc
    return value


def stage_seed(root: int, stage: str, *sub: int) -> int:
    """Seed for ``stage`` (and optional sub-task indices) derived from the root seed.

    The stage's position in :data:`STAGES` is the counter, so any stage can be
    rerun alone with the randomness it had in the full pipeline.
    """
    ss = np.random.SeedSequence([root, STAGES.index(stage), *sub])
    return int(ss.generate_state(1, dtype=np.uint32)[0])
