"""Label alignment across algorithms and the majority-vote labeling."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .cluster_engine import NOISE, Labeling, as_array

ABSTAIN = 0


class UnassignableError(ValueError):
    """Raised when every algorithm abstains on some sample."""

    def __init__(self, ids):
        self.ids = list(ids)
        shown = ", ".join(map(str, self.ids[:20]))
        more = f" (+{len(self.ids) - 20} more)" if len(self.ids) > 20 else ""
        super().__init__(f"{len(self.ids)} samples have no non-abstaining vote: {shown}{more}")


@dataclass(frozen=True)
class AlignedLabelings:
    """N x A votes in ``{0, 1, 2}``; 0 is an abstention (noise)."""

    matrix: np.ndarray
    algorithms: tuple[str, ...]
    # per algorithm: the original label that became 1 and the one that became 2
    orientation: tuple[tuple[int | None, int | None], ...]
    rule: str = "grand-mean ordering: higher mean factor score -> cluster 1"


@dataclass(frozen=True)
class ConsensusLabeling:
    labels: np.ndarray
    votes: np.ndarray  # N x 2 counts for labels 1 and 2
    abstains: np.ndarray
    tiebreak: np.ndarray  # True where the nearer-centroid rule decided

    def to_labeling(self) -> Labeling:
        return Labeling("consensus", self.labels.copy(), {"rule": "majority vote"})

    def to_csv(self, path: str | Path, ids: Sequence[str]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", "label", "votes_1", "votes_2", "abstains", "tiebreak"])
            for i, rid in enumerate(ids):
                w.writerow([rid, int(self.labels[i]), int(self.votes[i, 0]), int(self.votes[i, 1]),
                            int(self.abstains[i]), int(self.tiebreak[i])])


def _labels(lab) -> np.ndarray:
    return np.asarray(lab.labels if isinstance(lab, Labeling) else lab, dtype=np.intp)


def orient(labels, X) -> tuple[np.ndarray, tuple[int | None, int | None]]:
    """Rename a labeling's (at most two) clusters so the higher grand mean is 1."""
    labels = np.asarray(labels, dtype=np.intp)
    X = as_array(X)
    present = [int(c) for c in np.unique(labels) if c != NOISE]
    if len(present) > 2:
        raise ValueError(f"voting needs at most 2 clusters per labeling, got {len(present)}")
    out = np.zeros_like(labels)
    if not present:
        return out, (None, None)
    if len(present) == 1:
        out[labels == present[0]] = 1
        return out, (present[0], None)
    means, sizes = [], []
    for c in present:
        m = labels == c
        means.append(float(X[m].mean()))
        sizes.append(int(m.sum()))
    a, b = present
    if means[1] > means[0] or (means[1] == means[0] and sizes[1] > sizes[0]):
        a, b = b, a
    out[labels == a] = 1
    out[labels == b] = 2
    return out, (a, b)


def align_labels(labelings: Sequence, X, algorithms: Sequence[str] | None = None) -> AlignedLabelings:
    X = as_array(X)
    if not labelings:
        raise ValueError("no labelings to align")
    cols, orients = [], []
    for lab in labelings:
        v = _labels(lab)
        if v.shape != (X.shape[0],):
            raise ValueError("every labeling must cover the same samples as X")
        col, o = orient(v, X)
        cols.append(col)
        orients.append(o)
    if algorithms is None:
        algorithms = [lab.algorithm if isinstance(lab, Labeling) else f"m{j + 1}"
                      for j, lab in enumerate(labelings)]
    return AlignedLabelings(np.column_stack(cols), tuple(algorithms), tuple(orients))


def pooled_centroids(aligned: AlignedLabelings, X) -> np.ndarray:
    """Centroid of each aligned label pooled over all algorithms' assignments (2 x p)."""
    X = as_array(X)
    out = np.full((2, X.shape[1]), np.nan)
    for c in (1, 2):
        counts = (aligned.matrix == c).sum(axis=1).astype(np.float64)
        if counts.sum() > 0:
            out[c - 1] = counts @ X / counts.sum()
    return out


def majority_vote(aligned: AlignedLabelings, X, ids: Sequence[str] | None = None) -> ConsensusLabeling:
    """Mode of the non-abstaining votes; ties go to the nearer pooled centroid."""
    X = as_array(X)
    M = aligned.matrix
    votes = np.column_stack([(M == 1).sum(axis=1), (M == 2).sum(axis=1)])
    abstains = (M == ABSTAIN).sum(axis=1)
    empty = np.flatnonzero(votes.sum(axis=1) == 0)
    if empty.size:
        raise UnassignableError([ids[i] for i in empty] if ids is not None else empty.tolist())
    labels = np.where(votes[:, 0] > votes[:, 1], 1, 2).astype(np.intp)
    tie = votes[:, 0] == votes[:, 1]
    if tie.any():
        cent = pooled_centroids(aligned, X)
        d1 = ((X[tie] - cent[0]) ** 2).sum(axis=1)
        d2 = ((X[tie] - cent[1]) ** 2).sum(axis=1)
        # equal distance keeps cluster 1
        labels[tie] = np.where(d2 < d1, 2, 1)
    return ConsensusLabeling(labels, votes, abstains, tie)


def vote(labelings: Sequence, X, ids: Sequence[str] | None = None) -> tuple[AlignedLabelings, ConsensusLabeling]:
    aligned = align_labels(labelings, X)
    return aligned, majority_vote(aligned, X, ids)
