import json

import numpy as np
import pytest

from interclust.dataset import (EmptyResultError, FactorSchema, FeatureMatrix, SurveyTable, filter_incomplete,
                                impute_median, load_schema, load_survey, lower_median, prepare, reverse_code,
                                score_factors)


def _table(items, ids=None):
    items = np.asarray(items, dtype=float)
    ids = ids or [str(i) for i in range(items.shape[0])]
    return SurveyTable(ids, [f"q{j:02d}" for j in range(1, items.shape[1] + 1)], items)


def test_filter_boundary_94_items():
    items = np.full((3, 94), 3.0)
    items[0, :9] = np.nan  # 9/94 = 9.6% -> kept
    items[1, :10] = np.nan  # 10/94 = 10.6% -> dropped
    kept, dropped = filter_incomplete(_table(items, ["a", "b", "c"]))
    assert kept.respondent_ids == ["a", "c"]
    assert dropped == 1


def test_filter_exactly_ten_percent_is_kept():
    items = np.full((2, 100), 2.0)
    items[0, :10] = np.nan
    items[1, :11] = np.nan
    kept, dropped = filter_incomplete(_table(items, ["x", "y"]))
    assert kept.respondent_ids == ["x"] and dropped == 1


def test_filter_everything_dropped_raises():
    with pytest.raises(EmptyResultError):
        filter_incomplete(_table([[np.nan, np.nan, 1.0]]))


def test_lower_median_even_and_odd():
    assert lower_median(np.array([1.0, 2.0, 4.0, 5.0])) == 2.0
    assert lower_median(np.array([5.0, 1.0, 3.0])) == 3.0
    assert lower_median(np.array([4.0])) == 4.0


def test_impute_uses_lower_median_of_present_cells():
    t = _table([[1, 5], [2, np.nan], [4, 3], [np.nan, 4], [5, 1]])
    out = impute_median(t)
    # column 1 present {1,2,4,5} -> 2; column 2 present {5,3,4,1} -> 3
    assert out.items[3, 0] == 2.0
    assert out.items[1, 1] == 3.0
    assert not np.isnan(out.items).any()
    assert np.isnan(t.items).sum() == 2  # input untouched


def test_impute_all_missing_column_raises():
    with pytest.raises(ValueError, match="no responses"):
        impute_median(_table([[1, np.nan], [2, np.nan]]))


def test_reverse_code():
    assert np.array_equal(reverse_code(np.array([1, 2, 3, 4, 5])), [5, 4, 3, 2, 1])


def test_score_factors_with_reverse_item():
    schema = FactorSchema.from_dict({"factors": [
        {"name": "F1", "items": ["q01", {"name": "q02", "reverse": True}]},
        {"name": "F2", "items": ["q03"]}]})
    t = _table([[5, 1, 2], [1, 5, 4]])
    fm = score_factors(t, schema)
    assert fm.feature_names == ["F1", "F2"]
    assert np.array_equal(fm.values, [[5.0, 2.0], [1.0, 4.0]])


def test_schema_rejects_shared_items():
    with pytest.raises(ValueError, match="more than one factor"):
        FactorSchema.from_dict({"factors": [{"name": "A", "items": ["q1"]}, {"name": "B", "items": ["q1"]}]})


def test_default_schema_covers_94_items():
    s = load_schema()
    assert len(s.factors) == 6
    assert sum(len(f.items) for f in s.factors) == 94


def test_schema_round_trip():
    s = load_schema()
    assert FactorSchema.from_dict(json.loads(json.dumps(s.to_dict()))) == s


def test_load_survey_marks_invalid_cells(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("id,q1,q2,q3\nr1,1,5,\nr2,7,2.5,x\n")
    t = load_survey(p)
    assert t.respondent_ids == ["r1", "r2"]
    assert np.isnan(t.items[0, 2])
    assert np.isnan(t.items[1]).all()
    assert t.n_out_of_range == 3


def test_load_survey_custom_missing_token_and_no_id(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("q1,q2\n1,NA\n3,4\n")
    t = load_survey(p, missing_token="NA")
    assert t.respondent_ids == ["1", "2"]
    assert np.isnan(t.items[0, 1]) and t.n_out_of_range == 0


def test_load_survey_errors(tmp_path):
    p = tmp_path / "dup.csv"
    p.write_text("id,q1\na,1\na,2\n")
    with pytest.raises(ValueError, match="duplicate"):
        load_survey(p)
    p2 = tmp_path / "ragged.csv"
    p2.write_text("id,q1\na,1,2\n")
    with pytest.raises(ValueError, match="cells"):
        load_survey(p2)
    p3 = tmp_path / "empty.csv"
    p3.write_text("id,q1\n")
    with pytest.raises(EmptyResultError):
        load_survey(p3)
    with pytest.raises(OSError):
        load_survey(tmp_path / "nope.csv")


def test_prepare_end_to_end(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("id,a,b,c\nr1,5,,1\nr2,,,4\nr3,3,4,2\nr4,1,2,5\n")
    schema = FactorSchema.from_dict({"factors": [{"name": "F", "items": ["a", "b"]}, {"name": "G", "items": ["c"]}]})
    fm, summary = prepare(p, schema, threshold=0.4)
    # r2 has 2/3 missing -> dropped; r1's b imputed with lower median of {4, 2} = 2
    assert fm.respondent_ids == ["r1", "r3", "r4"]
    assert np.array_equal(fm.values[:, 0], [3.5, 3.5, 1.5])
    assert summary == {"rows_loaded": 4, "rows_dropped": 1, "rows_retained": 3, "cells_imputed": 1,
                       "invalid_responses": 0}


def test_feature_matrix_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    fm = FeatureMatrix(["a", "b"], ["F1", "F2"], rng.normal(size=(2, 2)))
    fm.to_csv(tmp_path / "f.csv")
    back = FeatureMatrix.from_csv(tmp_path / "f.csv")
    assert back.respondent_ids == fm.respondent_ids and back.feature_names == fm.feature_names
    assert np.array_equal(back.values, fm.values)


def test_feature_matrix_rejects_nan():
    with pytest.raises(ValueError):
        FeatureMatrix(["a"], ["x"], [[np.nan]])
