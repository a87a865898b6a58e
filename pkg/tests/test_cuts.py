import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sddpreg import errors
from sddpreg.cuts import CutPool, write_cuts_csv


def test_flat_cut_dominates_lower_bound():
    pool = CutPool(stage=2, lower_bound=-10.0, state_dim=1)
    pool.add_cut(5.0, np.zeros(1), np.zeros(1), 1)
    for x in (-3.0, 0.0, 7.0):
        assert pool.evaluate([x]) == 5.0


def test_adding_same_cut_twice_is_idempotent():
    pool = CutPool(stage=2, lower_bound=-10.0, state_dim=2)
    pool.add_cut(1.5, [1.0, -2.0], [0.5, 0.5], 1)
    before = [pool.evaluate([x, y]) for x in (-1, 0, 2) for y in (-1, 0, 2)]
    pool.add_cut(1.5, [1.0, -2.0], [0.5, 0.5], 2)
    after = [pool.evaluate([x, y]) for x in (-1, 0, 2) for y in (-1, 0, 2)]
    assert before == after


def test_vee_from_two_cuts():
    # {theta=1, beta=+1 at 0} and {theta=1, beta=-1 at 0} -> 1 + |x|
    pool = CutPool(stage=2, lower_bound=-100.0, state_dim=1)
    pool.add_cut(1.0, [1.0], [0.0], 1)
    pool.add_cut(1.0, [-1.0], [0.0], 2)
    for x in (-2.0, -0.5, 0.0, 0.25, 3.0):
        assert pool.evaluate([x]) == pytest.approx(1.0 + abs(x), abs=1e-14)


def test_empty_pool_returns_lower_bound():
    pool = CutPool(stage=3, lower_bound=-7.5, state_dim=4)
    assert pool.evaluate(np.zeros(4)) == -7.5


def test_single_affine_evaluation():
    pool = CutPool(stage=2, lower_bound=-100.0, state_dim=1)
    pool.add_cut(6.0, [2.0], [3.0], 1)  # a = 6 - 2*3 = 0
    assert pool.evaluate([3.0]) == 6.0
    assert pool.evaluate([0.0]) == 0.0


def test_evaluate_matches_brute_force_max():
    rng = np.random.default_rng(5)
    pool = CutPool(stage=2, lower_bound=-1e6, state_dim=3)
    thetas, betas, trials = [], [], []
    for k in range(100):
        theta, beta, xt = rng.normal(), rng.normal(size=3), rng.normal(size=3)
        pool.add_cut(theta, beta, xt, k)
        thetas.append(theta)
        betas.append(beta)
        trials.append(xt)
    for _ in range(100):
        x = rng.normal(size=3)
        brute = max(
            (t - b @ xt) + b @ x for t, b, xt in zip(thetas, betas, trials)
        )
        assert pool.evaluate(x) == brute


def test_post_add_cut_is_tight_at_trial_point():
    rng = np.random.default_rng(8)
    pool = CutPool(stage=2, lower_bound=-1e9, state_dim=2)
    for k in range(50):
        theta, beta, xt = rng.normal(), rng.normal(size=2), rng.normal(size=2)
        pool.add_cut(theta, beta, xt, k)
        assert pool.evaluate(xt) >= theta - 1e-12


def test_dimension_mismatch():
    pool = CutPool(stage=2, lower_bound=0.0, state_dim=2)
    with pytest.raises(errors.DimensionMismatch):
        pool.add_cut(1.0, [1.0], [0.0, 0.0], 1)


def test_non_finite_cut():
    pool = CutPool(stage=2, lower_bound=0.0, state_dim=1)
    with pytest.raises(errors.NonFiniteCut):
        pool.add_cut(float("nan"), [1.0], [0.0], 1)
    with pytest.raises(errors.NonFiniteCut):
        CutPool(stage=2, lower_bound=float("-inf"), state_dim=1)


@given(st.data())
@settings(max_examples=60, deadline=None)
def test_appending_cuts_never_decreases_evaluation(data):
    dim = data.draw(st.integers(min_value=1, max_value=3))
    pool = CutPool(stage=2, lower_bound=-100.0, state_dim=dim)
    points = [
        np.array(data.draw(st.lists(
            st.floats(min_value=-10, max_value=10), min_size=dim, max_size=dim)))
        for _ in range(5)
    ]
    values = [pool.evaluate(p) for p in points]
    for k in range(data.draw(st.integers(min_value=1, max_value=6))):
        theta = data.draw(st.floats(min_value=-50, max_value=50))
        beta = np.array(data.draw(st.lists(
            st.floats(min_value=-5, max_value=5), min_size=dim, max_size=dim)))
        xt = np.array(data.draw(st.lists(
            st.floats(min_value=-10, max_value=10), min_size=dim, max_size=dim)))
        pool.add_cut(theta, beta, xt, k)
        new_values = [pool.evaluate(p) for p in points]
        assert all(nv >= v for nv, v in zip(new_values, values))
        values = new_values


def test_cuts_csv_export(tmp_path):
    pool = CutPool(stage=2, lower_bound=-1.0, state_dim=2)
    pool.add_cut(1.0, [0.5, -0.25], [1.0, 2.0], 3)
    path = tmp_path / "cuts_stage2.csv"
    write_cuts_csv(pool, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "iteration,intercept,slope_1,slope_2,trial_1,trial_2"
    row = lines[1].split(",")
    assert row[0] == "3"
    assert float(row[2]) == 0.5
    assert float(row[5]) == 2.0
