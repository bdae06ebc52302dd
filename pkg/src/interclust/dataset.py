"""Survey ingestion, missing-data policy and factor scoring."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

logger = logging.getLogger(__name__)

SCALE_MIN = 1
SCALE_MAX = 5


class EmptyResultError(ValueError):
    """Raised when a filtering step leaves no rows."""


@dataclass
class SurveyTable:
    """Raw Likert responses; ``NaN`` marks a missing cell."""

    respondent_ids: list[str]
    item_names: list[str]
    items: np.ndarray
    n_out_of_range: int = 0

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=np.float64)
        if self.items.ndim != 2 or self.items.shape != (len(self.respondent_ids), len(self.item_names)):
            raise ValueError("items must be a respondents x items matrix")
        if len(set(self.item_names)) != len(self.item_names):
            raise ValueError("item names must be unique")
        if len(self.respondent_ids) == 0:
            raise EmptyResultError("survey table has no rows")

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.items)

    def subset(self, rows) -> "SurveyTable":
        rows = np.asarray(rows)
        ids = [self.respondent_ids[i] for i in np.flatnonzero(rows)] if rows.dtype == bool \
            else [self.respondent_ids[i] for i in rows]
        return SurveyTable(ids, list(self.item_names), self.items[rows], self.n_out_of_range)


@dataclass(frozen=True)
class Factor:
    name: str
    items: tuple[str, ...]
    reverse: tuple[bool, ...]


@dataclass(frozen=True)
class FactorSchema:
    factors: tuple[Factor, ...]
    scale_min: int = SCALE_MIN
    scale_max: int = SCALE_MAX

    def __post_init__(self):
        names = [f.name for f in self.factors]
        if len(set(names)) != len(names):
            raise ValueError("factor names must be unique")
        seen: set[str] = set()
        for f in self.factors:
            if not f.items:
                raise ValueError(f"factor {f.name!r} has no items")
            if len(f.items) != len(f.reverse):
                raise ValueError(f"factor {f.name!r}: one reverse flag per item")
            dup = seen.intersection(f.items)
            if dup or len(set(f.items)) != len(f.items):
                raise ValueError(f"items assigned to more than one factor: {sorted(dup) or f.items}")
            seen.update(f.items)

    @property
    def factor_names(self) -> list[str]:
        return [f.name for f in self.factors]

    @classmethod
    def from_dict(cls, data: dict) -> "FactorSchema":
        factors = []
        for entry in data["factors"]:
            names, flags = [], []
            for item in entry["items"]:
                if isinstance(item, str):
                    names.append(item)
                    flags.append(False)
                else:
                    names.append(item["name"])
                    flags.append(bool(item.get("reverse", False)))
            factors.append(Factor(entry["name"], tuple(names), tuple(flags)))
        return cls(tuple(factors), int(data.get("scale_min", SCALE_MIN)),
                   int(data.get("scale_max", SCALE_MAX)))

    def to_dict(self) -> dict:
        return {
            "scale_min": self.scale_min,
            "scale_max": self.scale_max,
            "factors": [
                {"name": f.name,
                 "items": [{"name": i, "reverse": r} for i, r in zip(f.items, f.reverse)]}
                for f in self.factors
            ],
        }


def load_schema(path: str | Path | None = None) -> FactorSchema:
    """Read a factor schema from JSON; ``None`` gives the bundled six-factor default."""
    if path is None:
        text = resources.files("interclust").joinpath("data/default_schema.json").read_text()
    else:
        text = Path(path).read_text(encoding="utf-8")
    return FactorSchema.from_dict(json.loads(text))


@dataclass
class FeatureMatrix:
    """Per-respondent factor scores, the input of every later stage."""

    respondent_ids: list[str]
    feature_names: list[str]
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.respondent_ids), len(self.feature_names)):
            raise ValueError("values must be N x p matching ids and feature names")
        if np.isnan(self.values).any():
            raise ValueError("feature matrix may not contain missing values")

    @property
    def n_samples(self) -> int:
        return self.values.shape[0]

    @property
    def n_features(self) -> int:
        return self.values.shape[1]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", *self.feature_names])
            for rid, row in zip(self.respondent_ids, self.values):
                w.writerow([rid, *(repr(float(v)) for v in row)])

    @classmethod
    def from_csv(cls, path: str | Path) -> "FeatureMatrix":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][0] != "id":
            raise ValueError(f"{path}: expected header starting with 'id'")
        body = rows[1:]
        return cls([r[0] for r in body], rows[0][1:],
                   np.array([[float(v) for v in r[1:]] for r in body]).reshape(len(body), len(rows[0]) - 1))


def load_survey(path: str | Path, missing_token: str = "", id_column: str = "id",
                scale_min: int = SCALE_MIN, scale_max: int = SCALE_MAX) -> SurveyTable:
    """Parse a survey CSV.

    Cells equal to ``missing_token``, unparseable cells and responses outside
    ``[scale_min, scale_max]`` become missing; the latter two are counted in
    ``n_out_of_range``. Without an ``id_column`` header, respondents are
    numbered from 1.
    """
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise OSError(f"cannot read survey file {path}: {exc}") from exc
    if not rows:
        raise EmptyResultError(f"{path}: empty file")
    header, body = rows[0], [r for r in rows[1:] if r]
    if not body:
        raise EmptyResultError(f"{path}: no data rows")
    if id_column in header:
        id_pos = header.index(id_column)
        ids = [r[id_pos] for r in body]
    else:
        id_pos = None
        ids = [str(i) for i in range(1, len(body) + 1)]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise ValueError(f"duplicate respondent ids: {dup[:10]}")
    item_cols = [j for j in range(len(header)) if j != id_pos]
    items = np.full((len(body), len(item_cols)), np.nan)
    bad = 0
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise ValueError(f"{path}: row {i + 2} has {len(row)} cells, header has {len(header)}")
        for c, j in enumerate(item_cols):
            cell = row[j].strip()
            if cell == missing_token or (missing_token != "" and cell == ""):
                continue
            try:
                v = float(cell)
            except ValueError:
                bad += 1
                continue
            if v != int(v) or not scale_min <= v <= scale_max:
                bad += 1
                continue
            items[i, c] = v
    if bad:
        logger.warning("%d invalid or out-of-range responses recorded as missing", bad)
    return SurveyTable(ids, [header[j] for j in item_cols], items, bad)


def filter_incomplete(table: SurveyTable, threshold: float = 0.10) -> tuple[SurveyTable, int]:
    """Drop rows whose missing fraction is strictly above ``threshold``.

    Returns the retained table and the number of dropped rows.
    """
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    n_items = table.items.shape[1]
    n_missing = table.missing.sum(axis=1)
    # integer comparison guards the boundary (10 of 100 is kept, 10 of 94 is not)
    keep = n_missing <= np.floor(threshold * n_items + 1e-9)
    if not keep.any():
        raise EmptyResultError("every row exceeds the missing-value threshold")
    dropped = int((~keep).sum())
    logger.info("dropped %d of %d rows with more than %.0f%% missing", dropped, keep.size, 100 * threshold)
    return table.subset(keep), dropped


def lower_median(values: np.ndarray) -> float:
    v = np.sort(values)
    return float(v[(v.size - 1) // 2])


def impute_median(table: SurveyTable) -> SurveyTable:
    """Fill missing cells with the per-item lower median of present responses."""
    items = table.items.copy()
    miss = np.isnan(items)
    for j in np.flatnonzero(miss.any(axis=0)):
        present = items[~miss[:, j], j]
        if present.size == 0:
            raise ValueError(f"item {table.item_names[j]!r} has no responses to impute from")
        items[miss[:, j], j] = lower_median(present)
    return SurveyTable(list(table.respondent_ids), list(table.item_names), items, table.n_out_of_range)


def reverse_code(responses, scale_min: int = SCALE_MIN, scale_max: int = SCALE_MAX):
    return scale_min + scale_max - np.asarray(responses)


def score_factors(table: SurveyTable, schema: FactorSchema) -> FeatureMatrix:
    """Average each factor's (reverse-coded where flagged) items per respondent."""
    if table.missing.any():
        raise ValueError("impute missing cells before scoring")
    col = {name: j for j, name in enumerate(table.item_names)}
    unknown = [i for f in schema.factors for i in f.items if i not in col]
    if unknown:
        raise KeyError(f"schema references items absent from the survey: {unknown[:10]}")
    out = np.empty((table.items.shape[0], len(schema.factors)))
    for k, factor in enumerate(schema.factors):
        cols = table.items[:, [col[i] for i in factor.items]]
        flip = np.array(factor.reverse)
        cols = np.where(flip, reverse_code(cols, schema.scale_min, schema.scale_max), cols)
        out[:, k] = cols.mean(axis=1)
    return FeatureMatrix(list(table.respondent_ids), schema.factor_names, out)


def prepare(path: str | Path, schema: FactorSchema, missing_token: str = "",
            threshold: float = 0.10) -> tuple[FeatureMatrix, dict]:
    """Load, filter, impute and score in one go; returns features and a count summary."""
    raw = load_survey(path, missing_token, scale_min=schema.scale_min, scale_max=schema.scale_max)
    kept, dropped = filter_incomplete(raw, threshold)
    features = score_factors(impute_median(kept), schema)
    summary = {
        "rows_loaded": len(raw.respondent_ids),
        "rows_dropped": dropped,
        "rows_retained": len(kept.respondent_ids),
        "cells_imputed": int(kept.missing.sum()),
        "invalid_responses": raw.n_out_of_range,
    }
    return features, summary


def feature_matrix(values: np.ndarray, feature_names: Sequence[str] | None = None,
                   ids: Sequence[str] | None = None) -> FeatureMatrix:
    values = np.asarray(values, dtype=np.float64)
    names = list(feature_names) if feature_names is not None else [f"x{j + 1}" for j in range(values.shape[1])]
    rid = list(ids) if ids is not None else [str(i + 1) for i in range(values.shape[0])]
    return FeatureMatrix(rid, names, values)
