import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coxsel.data import (
    ConstantColumnWarning,
    CsvSchema,
    SurvivalDataset,
    build_risk_index,
    ingest_csv,
    standardize_covariates,
    write_csv,
)
from coxsel.exceptions import (
    CsvParseError,
    NoEventsError,
    SchemaError,
    ValidationError,
)

from conftest import make_survival


def test_dataset_validation():
    with pytest.raises(ValidationError):
        SurvivalDataset([1.0, 2.0], [1, 0, 1], [0.1, 0.2], np.zeros((2, 1)))
    with pytest.raises(ValidationError):
        SurvivalDataset([1.0, -2.0], [1, 0], [0.1, 0.2], np.zeros((2, 1)))
    with pytest.raises(ValidationError):
        SurvivalDataset([1.0, 2.0], [1, 2], [0.1, 0.2], np.zeros((2, 1)))
    with pytest.raises(ValidationError):
        SurvivalDataset([1.0, np.nan], [1, 0], [0.1, 0.2], np.zeros((2, 1)))
    with pytest.raises(ValidationError):
        SurvivalDataset([], [], [], np.zeros((0, 1)))
    with pytest.raises(ValidationError):
        SurvivalDataset([1.0], [1.0], [0.5], np.zeros((1, 0)), tau=0.0)


def test_dataset_p_zero_allowed():
    d = SurvivalDataset([1.0, 2.0], [1, 0], [0.1, 0.2], np.zeros((2, 0)))
    assert d.p == 0 and d.n == 2


def test_tau_cutoff_drops_late_events():
    d = SurvivalDataset([1.0, 2.0, 3.0], [1, 1, 1], [0.0, 0.0, 0.0],
                        np.zeros((3, 0)), tau=2.0)
    assert list(d.truncated_status()) == [1.0, 1.0, 0.0]
    ix = build_risk_index(d)
    assert ix.n_events == 2
    with pytest.raises(NoEventsError):
        build_risk_index(
            SurvivalDataset([1.0, 2.0], [1, 1], [0.0, 0.0], np.zeros((2, 0)), tau=0.5)
        )


def test_risk_index_hand_example():
    # times (2, 1, 1, 3), events (1, 1, 0, 1): distinct event times 1, 2, 3
    d = SurvivalDataset([2.0, 1.0, 1.0, 3.0], [1, 1, 0, 1], np.zeros(4), np.zeros((4, 0)))
    ix = build_risk_index(d)
    assert list(ix.event_times) == [1.0, 2.0, 3.0]
    assert list(ix.event_count) == [1, 1, 1]
    assert list(ix.order) == [1, 2, 0, 3]
    assert list(ix.event_start) == [0, 2, 3]
    assert list(ix.event_rows) == [1, 0, 3]
    assert list(ix.event_time_idx) == [0, 1, 2]
    assert list(ix.nevt_le) == [1, 1, 2, 3]


@settings(max_examples=40, deadline=None)
@given(st.integers(5, 60), st.integers(0, 10_000), st.booleans())
def test_risk_index_properties(n, seed, ties):
    d = make_survival(n=n, p=2, seed=seed, ties=ties)
    try:
        ix = build_risk_index(d)
    except NoEventsError:
        assert d.truncated_status().sum() == 0
        return
    t_sorted = d.time[ix.order]
    assert np.all(np.diff(t_sorted) >= 0)
    # each event row really is an event and sits at its distinct time
    assert np.all(d.truncated_status()[ix.event_rows] == 1.0)
    assert np.allclose(d.time[ix.event_rows], ix.event_times[ix.event_time_idx])
    # counts add up, risk sets shrink with time
    assert ix.event_count.sum() == ix.n_events
    assert np.all(np.diff(ix.event_start) > 0)
    # nevt_le counts distinct event times at or before each sorted time
    for i in (0, len(t_sorted) // 2, len(t_sorted) - 1):
        assert ix.nevt_le[i] == np.sum(ix.event_times <= t_sorted[i])


def test_csv_round_trip(tmp_path):
    d = make_survival(n=40, p=3, seed=9)
    path = tmp_path / "d.csv"
    write_csv(d, path)
    schema = CsvSchema(time="time", status="status", exposure="exposure")
    back = ingest_csv(path, schema)
    assert np.array_equal(back.time, d.time)
    assert np.array_equal(back.status, d.status)
    assert np.array_equal(back.exposure, d.exposure)
    assert np.array_equal(back.covariates, d.covariates)


def test_ingest_explicit_columns_and_order(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("t,s,a,z,y\n1.0,1,0.5,2.0,3.0\n2.0,0,0.1,4.0,5.0\n")
    schema = CsvSchema(time="t", status="s", exposure="a", covariates=["y", "z"])
    d = ingest_csv(path, schema)
    assert d.names == ("y", "z")
    assert np.array_equal(d.covariates, [[3.0, 2.0], [5.0, 4.0]])


def test_ingest_categorical_dummy_coding(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text(
        "t,s,a,grp\n1.0,1,0.5,low\n2.0,0,0.1,high\n3.0,1,0.3,mid\n4.0,1,0.2,low\n"
    )
    d = ingest_csv(path, CsvSchema(time="t", status="s", exposure="a"))
    # 'high' is the reference level (lexicographically first)
    assert d.names == ("grp=low", "grp=mid")
    assert np.array_equal(d.covariates, [[1, 0], [0, 0], [0, 1], [1, 0]])


def test_ingest_errors(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("t,s,a\n1.0,1,x\n")
    with pytest.raises(CsvParseError):
        ingest_csv(path, CsvSchema(time="t", status="s", exposure="a"))
    path.write_text("t,s,a\n1.0,,0.5\n")
    with pytest.raises(ValidationError):
        ingest_csv(path, CsvSchema(time="t", status="s", exposure="a"))
    path.write_text("t,s,a\n1.0,1,0.5\n")
    with pytest.raises(SchemaError, match="missing"):
        ingest_csv(path, CsvSchema(time="missing", status="s", exposure="a"))
    path.write_text("t,s,a,z\n1.0,1,0.5\n")
    with pytest.raises(CsvParseError, match="row 2"):
        ingest_csv(path, CsvSchema(time="t", status="s", exposure="a"))


def test_standardize_covariates():
    d = make_survival(n=60, p=3, seed=2)
    out, info = standardize_covariates(d)
    assert np.allclose(out.covariates.mean(axis=0), 0.0, atol=1e-12)
    assert np.allclose(out.covariates.std(axis=0), 1.0, atol=1e-12)
    # exposure untouched
    assert np.array_equal(out.exposure, d.exposure)
    back = out.covariates * info.scales + info.means
    assert np.allclose(back, d.covariates, atol=1e-12)


def test_standardize_flags_constant_column():
    d = make_survival(n=30, p=2, seed=3)
    cov = d.covariates.copy()
    cov[:, 1] = 7.0
    flat = SurvivalDataset(d.time, d.status, d.exposure, cov, names=("a", "b"))
    with pytest.warns(ConstantColumnWarning, match="b"):
        out, info = standardize_covariates(flat)
    assert info.constant.tolist() == [False, True]
    assert np.all(out.covariates[:, 1] == 0.0)
