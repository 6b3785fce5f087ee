import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dp_ipw.core import Dataset, validate_unit_ball
from dp_ipw.ingest import (
    CsvSchema,
    ParseError,
    ResampleProtocol,
    SizeError,
    StagedTable,
    load_csv,
    normalize_unit_ball,
    resample,
    resample_indices,
    write_csv,
)
from dp_ipw.rng import RngStream

from conftest import make_dataset


def _write(tmp_path, text, name="d.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def _staged(x, t=None, y=None):
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    t = np.zeros(n) if t is None else np.asarray(t, float)
    y = np.zeros(n) if y is None else np.asarray(y, float)
    return StagedTable(x, t, y, CsvSchema())


def test_load_well_formed(tmp_path):
    p = _write(tmp_path, "t,y,a,b\n1,2.5,0.1,0.2\n0,-1,3,4\n1,0,0,0\n")
    tbl = load_csv(p)
    assert tbl.n_rows == 3
    assert tbl.schema.covariate_columns == ("a", "b")
    assert np.array_equal(tbl.treatments, [1, 0, 1])
    assert np.array_equal(tbl.covariates[1], [3, 4])


def test_load_explicit_schema_and_column_order(tmp_path):
    p = _write(tmp_path, "x2,treat,x1,out\n5,1,6,7\n")
    tbl = load_csv(p, CsvSchema("treat", "out", ("x1", "x2")))
    assert np.array_equal(tbl.covariates, [[6, 5]])
    assert tbl.outcomes[0] == 7


def test_bad_treatment_names_row(tmp_path):
    rows = "".join(f"{i % 2},1,0.1\n" for i in range(4)) + "2,1,0.1\n"
    with pytest.raises(ParseError, match=r"row 5.*'t'"):
        load_csv(_write(tmp_path, "t,y,x\n" + rows))


@pytest.mark.parametrize(
    "text, pattern",
    [
        ("t,y,x\n", "no data rows"),
        ("", "empty file"),
        ("t,x\n1,0.2\n", "missing column"),
        ("t,y,x\n1,abc,0.2\n", r"row 1, column 'y': not a number"),
        ("t,y,x\n1,1,nan\n", "non-finite"),
        ("t,y,x\n1,1\n", "expected 3 fields"),
        ("t,y\n1,1\n", "no covariate"),
    ],
)
def test_parse_errors(tmp_path, text, pattern):
    with pytest.raises(ParseError, match=pattern):
        load_csv(_write(tmp_path, text))


def test_schema_names_distinct():
    with pytest.raises(ValueError):
        CsvSchema("t", "t")
    s = CsvSchema("a", "b", ("c",), "r")
    assert CsvSchema.from_dict(s.to_dict()) == s


def test_normalize_examples():
    data, f = normalize_unit_ball(_staged([[3.0, 4.0]]))
    assert f == 5.0
    assert np.allclose(data.covariates, [[0.6, 0.8]], rtol=0, atol=1e-16)
    data, f = normalize_unit_ball(_staged([[0.1, 0.0], [0.0, 0.5]]))
    assert f == 0.5 and np.max(np.linalg.norm(data.covariates, axis=1)) == 1.0
    data, f = normalize_unit_ball(_staged(np.zeros((2, 3))))
    assert f == 1.0 and np.all(data.covariates == 0)


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32), n=st.integers(1, 30), d=st.integers(1, 6), scale=st.floats(1e-6, 1e6))
def test_normalized_always_in_ball(seed, n, d, scale):
    x = scale * np.random.default_rng(seed).standard_normal((n, d))
    data, _ = normalize_unit_ball(_staged(x))
    assert validate_unit_ball(data).passed


def test_write_csv_round_trip(tmp_path, gen):
    data = make_dataset(gen, 15, 3)
    p = tmp_path / "out.csv"
    schema = write_csv(p, data)
    tbl = load_csv(p, schema)
    assert np.array_equal(tbl.covariates, data.covariates)
    assert np.array_equal(tbl.outcomes, data.outcomes)
    assert np.array_equal(tbl.treatments, data.treatments)


def test_realizations(tmp_path):
    p = _write(tmp_path, "r,t,y,x\n0,1,1,0.1\n1,0,2,0.2\n0,0,3,0.3\n")
    parts = load_csv(p, CsvSchema(realization_column="r")).by_realization()
    assert sorted(parts) == [0, 1]
    assert np.array_equal(parts[0].outcomes, [1, 3])


def _arms(n_treated, n_control):
    n = n_treated + n_control
    x = np.linspace(0, 1, n)[:, None]
    t = np.r_[np.ones(n_treated), np.zeros(n_control)]
    return Dataset(x, t, np.arange(n, dtype=float))


def test_lalonde_balanced_sizes():
    data = _arms(297, 425)
    r = resample_indices(data, ResampleProtocol("lalonde_balanced"), RngStream(1))
    assert (r.fit.n_rows, r.estimate.n_rows) == (500, 200)
    assert len(set(r.estimate_indices)) == 200
    assert not set(r.fit_indices) & set(r.estimate_indices)
    assert r.estimate.treatments.sum() == 100 and r.fit.treatments.sum() == 250


def test_ihdp_balanced_sizes(gen):
    train_set, test_set = _arms(80, 300), _arms(20, 60)
    d_m, d_n = resample(train_set, ResampleProtocol("ihdp_balanced"), RngStream(1), test_set)
    assert (d_m.n_rows, d_n.n_rows) == (500, 200)
    assert set(d_n.outcomes) <= set(test_set.outcomes)


def test_without_replacement_exhausted():
    proto = ResampleProtocol("lalonde_balanced", estimate_per_arm=100)
    with pytest.raises(SizeError, match="treated"):
        resample(_arms(50, 400), proto, RngStream(1))


def test_resample_deterministic():
    data = _arms(297, 425)
    proto = ResampleProtocol("lalonde_balanced")
    a = resample_indices(data, proto, RngStream(4, 4))
    b = resample_indices(data, proto, RngStream(4, 4))
    assert np.array_equal(a.fit_indices, b.fit_indices)
    assert np.array_equal(a.estimate_indices, b.estimate_indices)


def test_protocol_validation():
    with pytest.raises(ValueError):
        ResampleProtocol("other")
    with pytest.raises(ValueError):
        ResampleProtocol(fit_per_arm=0)
    assert ResampleProtocol("ihdp_balanced").replacement_estimate is True
    assert ResampleProtocol("lalonde_balanced").replacement_estimate is False
