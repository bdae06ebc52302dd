"""Seeded synthetic Likert-style factor scores with known cluster structure."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataset import SCALE_MAX, SCALE_MIN, FeatureMatrix

DEFAULT_NAMES = ("OSC1", "OSC2", "OSC3", "GSC1", "GSC2", "GSC3")


@dataclass(frozen=True)
class SyntheticSpec:
    """Clusters share ``base`` on every feature; cluster ``c`` is shifted down by
    ``separation[c]`` per feature, except cluster 0 which sits at ``base``.

    Noise is Gaussian with sd ``noise`` truncated at ``noise_bound`` sds, then
    scores are clamped to the Likert range.
    """

    n_per_cluster: tuple[int, ...] = (1000, 1000)
    n_features: int = 6
    base: float = 4.0
    separation: float = 0.5
    dominant: int = 2
    dominant_separation: float = 2.0
    noise: float = 0.3
    noise_bound: float = 2.5
    seed: int = 0
    feature_names: tuple[str, ...] = field(default=DEFAULT_NAMES)

    def means(self) -> np.ndarray:
        k = len(self.n_per_cluster)
        shift = np.full(self.n_features, self.separation)
        shift[self.dominant] = self.dominant_separation
        return np.array([self.base - c * shift for c in range(k)])

    def validate(self) -> None:
        if len(self.n_per_cluster) < 2 or min(self.n_per_cluster) < 1:
            raise ValueError("need at least two non-empty clusters")
        if not 0 <= self.dominant < self.n_features:
            raise ValueError("dominant feature index out of range")
        if len(self.feature_names) != self.n_features:
            raise ValueError("one feature name per feature")
        if self.noise <= 0 or self.noise_bound <= 0:
            raise ValueError("noise scale and bound must be positive")
        if self.dominant_separation <= self.separation:
            raise ValueError("dominant separation must exceed the other features'")
        m = self.means()
        if m.min() < SCALE_MIN or m.max() > SCALE_MAX:
            raise ValueError(f"cluster means fall outside [{SCALE_MIN}, {SCALE_MAX}]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSpec":
        d = json.loads(text)
        d["n_per_cluster"] = tuple(d["n_per_cluster"])
        d["feature_names"] = tuple(d["feature_names"])
        return cls(**d)


def generate_synthetic(spec: SyntheticSpec) -> tuple[FeatureMatrix, np.ndarray]:
    """Return the feature matrix and ground-truth labels ``1..k`` (rows shuffled)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    means = spec.means()
    labels = np.repeat(np.arange(1, len(spec.n_per_cluster) + 1), spec.n_per_cluster)
    z = np.clip(rng.standard_normal((labels.size, spec.n_features)), -spec.noise_bound, spec.noise_bound)
    X = np.clip(means[labels - 1] + spec.noise * z, SCALE_MIN, SCALE_MAX)
    order = rng.permutation(labels.size)
    X, labels = X[order], labels[order]
    ids = [f"s{i + 1:05d}" for i in range(labels.size)]
    return FeatureMatrix(ids, list(spec.feature_names), X), labels


def write_truth(path: str | Path, ids, labels) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("id,label\n")
        for rid, lab in zip(ids, labels):
            fh.write(f"{rid},{int(lab)}\n")
