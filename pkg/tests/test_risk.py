import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sddpreg import errors
from sddpreg.risk import (
    RiskSpec,
    aggregate,
    avar_value_oracle,
    expectation,
    mean_avar,
    risk_value_oracle,
)


def random_distribution(rng, max_atoms=10):
    n = rng.integers(1, max_atoms + 1)
    values = rng.normal(size=n) * 10
    probs = rng.random(n) + 0.05
    probs /= probs.sum()
    return values, probs


def test_expectation_example():
    rho, w = aggregate([1.0, 3.0], [0.5, 0.5], expectation())
    assert rho == 2.0
    assert np.array_equal(w, [0.5, 0.5])


def test_degenerate_parameters_reduce_to_expectation():
    values, probs = [5.0, -1.0, 2.0], [0.2, 0.5, 0.3]
    base, wbase = aggregate(values, probs, expectation())
    for spec in (mean_avar(0.0, 0.25), mean_avar(0.7, 1.0)):
        rho, w = aggregate(values, probs, spec)
        assert rho == base
        assert np.array_equal(w, wbase)


def test_quarter_tail_example():
    # grid oracle confirms AV@R_{0.25} of uniform {1,2,3,4} is 4
    assert abs(avar_value_oracle([1, 2, 3, 4], [0.25] * 4, 0.25) - 4.0) < 1e-12
    rho, w = aggregate([1, 2, 3, 4], [0.25] * 4, mean_avar(0.5, 0.25))
    assert abs(rho - 3.25) < 1e-12
    assert np.allclose(w, [0.125, 0.125, 0.125, 0.625])


def test_half_tail_two_point_example():
    assert abs(avar_value_oracle([0.0, 10.0], [0.5, 0.5], 0.5) - 10.0) < 1e-12
    rho, w = aggregate([0.0, 10.0], [0.5, 0.5], mean_avar(1.0, 0.5))
    assert rho == 10.0
    assert np.allclose(w, [0.0, 1.0])


def test_avar_oracle_alpha_one_is_mean():
    values, probs = [3.0, -2.0, 5.0], [0.5, 0.25, 0.25]
    assert avar_value_oracle(values, probs, 1.0) == np.dot(values, probs)


def test_avar_oracle_single_atom():
    assert avar_value_oracle([7.5], [1.0], 0.3) == 7.5


def test_aggregate_matches_oracle_on_random_distributions():
    rng = np.random.default_rng(7)
    for _ in range(40):
        values, probs = random_distribution(rng)
        for alpha in (0.05, 0.25, 0.5):
            rho, w = aggregate(values, probs, mean_avar(1.0, alpha))
            assert abs(rho - avar_value_oracle(values, probs, alpha)) < 1e-8
            assert abs(rho - w @ values) < 1e-12


def test_invalid_distribution():
    with pytest.raises(errors.InvalidDistribution):
        aggregate([1.0, 2.0], [0.5, 0.6], expectation())
    with pytest.raises(errors.InvalidDistribution):
        aggregate([1.0], [0.5, 0.5], expectation())


def test_parameter_out_of_range():
    with pytest.raises(errors.ParameterOutOfRange):
        RiskSpec("mean_avar", lam=1.5, alpha=0.5)
    with pytest.raises(errors.ParameterOutOfRange):
        RiskSpec("mean_avar", lam=0.5, alpha=0.0)


probs_strategy = st.lists(
    st.floats(min_value=0.01, max_value=1.0), min_size=1, max_size=8
).map(lambda ws: [w / sum(ws) for w in ws])


@given(
    data=st.data(),
    lam=st.sampled_from([0.0, 0.3, 0.7, 1.0]),
    alpha=st.sampled_from([0.1, 0.4, 1.0]),
)
@settings(max_examples=120, deadline=None)
def test_weights_are_a_distribution(data, lam, alpha):
    probs = data.draw(probs_strategy)
    values = data.draw(
        st.lists(
            st.floats(min_value=-1e4, max_value=1e4),
            min_size=len(probs),
            max_size=len(probs),
        )
    )
    rho, w = aggregate(values, probs, mean_avar(lam, alpha))
    assert np.all(w >= -1e-15)
    assert abs(w.sum() - 1.0) < 1e-12
    assert abs(rho - w @ np.asarray(values)) < 1e-9


@given(data=st.data(), c=st.floats(min_value=-100, max_value=100))
@settings(max_examples=80, deadline=None)
def test_translation_equivariance(data, c):
    probs = data.draw(probs_strategy)
    values = np.array(
        data.draw(
            st.lists(
                st.floats(min_value=-1e3, max_value=1e3),
                min_size=len(probs),
                max_size=len(probs),
            )
        )
    )
    spec = mean_avar(0.5, 0.3)
    base, _ = aggregate(values, probs, spec)
    shifted, _ = aggregate(values + c, probs, spec)
    assert abs(shifted - (base + c)) < 1e-9


@given(data=st.data())
@settings(max_examples=80, deadline=None)
def test_monotonicity(data):
    probs = data.draw(probs_strategy)
    values = np.array(
        data.draw(
            st.lists(
                st.floats(min_value=-1e3, max_value=1e3),
                min_size=len(probs),
                max_size=len(probs),
            )
        )
    )
    spec = mean_avar(0.6, 0.25)
    base, _ = aggregate(values, probs, spec)
    bump = values.copy()
    idx = data.draw(st.integers(min_value=0, max_value=len(probs) - 1))
    bump[idx] += data.draw(st.floats(min_value=0.0, max_value=100.0))
    bumped, _ = aggregate(bump, probs, spec)
    assert bumped >= base - 1e-9


def test_mean_avar_mix_matches_composed_oracle():
    rng = np.random.default_rng(11)
    for _ in range(20):
        values, probs = random_distribution(rng)
        spec = mean_avar(0.5, 0.25)
        rho, _ = aggregate(values, probs, spec)
        assert abs(rho - risk_value_oracle(values, probs, spec)) < 1e-8
