import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dp_ipw.core import (
    BudgetError,
    Dataset,
    OutcomeBounds,
    PrivacyBudget,
    Split,
    UnitBallError,
    recombine,
    split_dataset,
    validate_unit_ball,
)
from dp_ipw.rng import RngStream

from conftest import make_dataset


def test_dataset_is_read_only_copy():
    x = np.array([[0.5, 0.5]])
    d = Dataset(x, [1], [2.0])
    x[0, 0] = 9.0
    assert d.covariates[0, 0] == 0.5
    with pytest.raises(ValueError):
        d.covariates[0, 0] = 0.1


@pytest.mark.parametrize(
    "x, t, y",
    [
        ([[0.1]], [1, 0], [1.0, 2.0]),
        ([[0.1], [0.2]], [1, 2], [1.0, 2.0]),
        ([[0.1], [np.nan]], [1, 0], [1.0, 2.0]),
        ([[0.1], [0.2]], [1, 0], [1.0, np.inf]),
        ([0.1, 0.2], [1, 0], [1.0, 2.0]),
    ],
)
def test_dataset_rejects_malformed(x, t, y):
    with pytest.raises(ValueError):
        Dataset(x, t, y)


def test_dataset_unit_ball_tolerance():
    Dataset([[1.0 + 0.5e-12]], [1], [0.0])
    with pytest.raises(UnitBallError, match="row 1"):
        Dataset([[0.0], [1.0 + 1e-11]], [1, 0], [0.0, 0.0])


def test_validate_unit_ball_examples():
    assert validate_unit_ball(np.zeros((3, 2))).passed
    r = validate_unit_ball(np.array([[0.1, 0.0], [0.9, 1.2], [0.0, 0.3]]))
    assert not r.passed and r.worst_row == 1 and r.worst_norm == pytest.approx(1.5)
    assert validate_unit_ball(np.array([[0.6, 0.8]])).passed
    assert validate_unit_ball(Dataset([[1.0, 0.0]], [0], [1.0]))


@pytest.mark.parametrize("eps, delta", [(0.0, 0.1), (1.0, 0.1), (0.5, 0.0), (0.5, 1.0), (-1, 0.5)])
def test_budget_open_intervals(eps, delta):
    with pytest.raises(BudgetError):
        PrivacyBudget(eps, delta)


def test_outcome_bounds_validation():
    OutcomeBounds(0.0)
    for kw in ({"c_y": -1.0}, {"c_y": 1, "omega_lo": 0.6, "omega_hi": 0.5}, {"c_y": 1, "xi_exp": 0.5}):
        with pytest.raises(ValueError):
            OutcomeBounds(**kw)


def test_split_validation():
    with pytest.raises(ValueError):
        Split([0, 1], [1, 2])
    with pytest.raises(ValueError):
        Split([], [0, 1])
    with pytest.raises(ValueError):
        Split([0], [2])


def test_split_cardinality_and_determinism(gen):
    data = make_dataset(gen, 10, 3)
    d_m, d_n, s = split_dataset(data, 4, 7)
    assert (d_m.n_rows, d_n.n_rows) == (4, 6)
    assert not set(s.fit_indices) & set(s.estimate_indices)
    _, _, s2 = split_dataset(data, 4, 7)
    assert np.array_equal(s.fit_indices, s2.fit_indices)
    assert np.array_equal(s.estimate_indices, s2.estimate_indices)


@pytest.mark.parametrize("m", [0, 10, -1])
def test_split_range(gen, m):
    with pytest.raises(ValueError):
        split_dataset(make_dataset(gen, 10, 2), m, 1)


def test_split_two_rows_uniform():
    data = Dataset([[0.1], [0.2]], [1, 0], [0.0, 0.0])
    first = sum(int(split_dataset(data, 1, s)[2].fit_indices[0] == 0) for s in range(10_000))
    # binomial(1e4, 1/2): 4 standard deviations is 200
    assert abs(first - 5000) <= 200


def test_stratified_split_keeps_arm_shares(gen):
    data = make_dataset(gen, 200, 2)
    d_m, d_n, s = split_dataset(data, 100, RngStream(3), stratify=True)
    share = data.treatments.mean()
    assert abs(d_m.treatments.mean() - share) <= 0.01
    assert recombine(d_m, d_n, s).equals(data)


@settings(max_examples=200, deadline=None)
@given(n=st.integers(2, 40), frac=st.floats(0.01, 0.99), seed=st.integers(0, 2**32))
def test_recombine_inverts_split(n, frac, seed):
    data = make_dataset(np.random.default_rng(seed), n, 3)
    m = min(max(1, int(frac * n)), n - 1)
    d_m, d_n, s = split_dataset(data, m, seed)
    assert recombine(d_m, d_n, s).equals(data)
