import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tailguard.empirical import ceil_index, sort_sample
from tailguard.risk_measures import (
    WeightMeasure,
    estimate_risk,
    lstat_weights,
    ucb,
    variance_cvar,
    variance_general,
    variance_var_bootstrap,
)

unit = st.floats(0.0, 1.0, allow_nan=False)
samples = st.lists(unit, min_size=1, max_size=80)
betas = st.floats(0.01, 0.99)


def brute_variance(values, psi):
    """Spacing-weighted double sum, evaluated term by term."""
    r = np.sort(np.asarray(values, dtype=float))
    n = r.size
    dens = psi.grid_density(n)
    total = 0.0
    for i in range(1, n):
        for j in range(1, n):
            k = min(i, j) / n - i * j / n**2
            total += dens[i - 1] * dens[j - 1] * k * (r[i] - r[i - 1]) * (r[j] - r[j - 1])
    return total


def resample_bootstrap(values, beta, B, seed):
    """Literal bootstrap: B resamples with replacement, n * var of their quantiles."""
    r = np.sort(np.asarray(values, dtype=float))
    n = r.size
    rng = np.random.default_rng(seed)
    k = ceil_index(n, beta)
    qs = np.array([np.sort(rng.choice(r, n))[k - 1] for _ in range(B)])
    return n * qs.var()


# -- weights and point estimates ---------------------------------------------


def test_weights_examples():
    assert lstat_weights(WeightMeasure.mean(), 4).tolist() == [0.25] * 4
    assert lstat_weights(WeightMeasure.cvar(0.5), 4).tolist() == [0, 0, 0.5, 0.5]
    assert lstat_weights(WeightMeasure.var(0.5), 4).tolist() == [0, 1, 0, 0]


def test_estimate_examples():
    s = sort_sample([0.1, 0.2, 0.3, 0.4])
    assert estimate_risk(s, WeightMeasure.cvar(0.5)) == pytest.approx(0.35)
    assert estimate_risk(s, WeightMeasure.mean()) == pytest.approx(0.25)
    c = sort_sample([0.37] * 7)
    for psi in (WeightMeasure.mean(), WeightMeasure.cvar(0.3), WeightMeasure.var(0.8)):
        assert estimate_risk(c, psi) == pytest.approx(0.37)


def test_piecewise_validation():
    with pytest.raises(ValueError):
        WeightMeasure.piecewise([0, 0.5, 1], [1.0, 0.5])
    with pytest.raises(ValueError):
        WeightMeasure.piecewise([0, 0.5, 1], [-1.0, 3.0])
    with pytest.raises(ValueError):
        WeightMeasure.piecewise([0.1, 1], [1 / 0.9])
    WeightMeasure.piecewise([0, 0.5, 1], [0.5, 1.5])


def test_piecewise_reproduces_cvar(rng):
    s = sort_sample(rng.beta(0.4, 3, 97))
    pw = WeightMeasure.piecewise([0, 0.75, 1], [0, 4])
    cv = WeightMeasure.cvar(0.75)
    assert estimate_risk(s, pw) == pytest.approx(estimate_risk(s, cv), abs=1e-14)
    assert variance_general(s, pw) == pytest.approx(variance_cvar(s, 0.75), abs=1e-12)


def test_measure_roundtrip():
    for psi in (WeightMeasure.mean(), WeightMeasure.cvar(0.9), WeightMeasure.var(0.75),
                WeightMeasure.piecewise([0, 0.2, 1], [0.25, 1.1875])):
        assert WeightMeasure.from_dict(psi.to_dict()) == psi


# -- variances ---------------------------------------------------------------


def test_variance_examples():
    z = sort_sample([0, 0, 1, 1])
    assert variance_general(z, WeightMeasure.cvar(0.5)) == pytest.approx(1.0)
    assert variance_general(z, WeightMeasure.mean()) == pytest.approx(0.25)
    assert variance_cvar(z, 0.5) == pytest.approx(1.0)
    s = sort_sample([0.1, 0.2, 0.3, 0.4])
    assert variance_cvar(s, 0.5) == pytest.approx(0.0275, abs=1e-15)
    assert variance_general(s, WeightMeasure.cvar(0.5)) == pytest.approx(0.0275, abs=1e-15)
    c = sort_sample([0.2] * 5)
    assert variance_general(c, WeightMeasure.mean()) == 0
    assert variance_cvar(c, 0.9) == 0


def test_variance_general_rejects_var():
    with pytest.raises(ValueError, match="use bootstrap variance for point-mass measures"):
        variance_general(sort_sample([0.1, 0.2]), WeightMeasure.var(0.5))


@pytest.mark.parametrize("n", [2, 3, 7, 31])
def test_variance_general_matches_double_sum(rng, n):
    values = rng.beta(0.4, 3, n)
    s = sort_sample(values)
    for psi in (WeightMeasure.mean(), WeightMeasure.cvar(0.6), WeightMeasure.piecewise([0, 0.3, 1], [0.5, 17 / 14])):
        assert variance_general(s, psi) == pytest.approx(brute_variance(values, psi), rel=1e-10, abs=1e-14)


def test_singleton_is_degenerate():
    s = sort_sample([0.4])
    assert variance_general(s, WeightMeasure.cvar(0.5)) == 0
    assert variance_cvar(s, 0.5) == 0
    assert variance_var_bootstrap(s, 0.5) == 0
    assert ucb(0.4, 0.0, 1, 0.05) == 0.4


def test_bootstrap_constant_and_deterministic(rng):
    assert variance_var_bootstrap(sort_sample([0.3] * 50), 0.75, 200, seed=3) == 0
    s = sort_sample(rng.random(300))
    assert variance_var_bootstrap(s, 0.75, 500, seed=(4, 2)) == variance_var_bootstrap(s, 0.75, 500, seed=(4, 2))
    assert variance_var_bootstrap(s, 0.75, 500, seed=1) != variance_var_bootstrap(s, 0.75, 500, seed=2)


def test_bootstrap_uniform_grid_oracle():
    s = sort_sample((np.arange(2000) + 0.5) / 2000)
    assert variance_var_bootstrap(s, 0.5, 1000, seed=0) == pytest.approx(0.25, rel=0.15)


def test_bootstrap_agrees_with_literal_resampling(rng):
    # same bootstrap law, different sampling route: compare averages over seeds
    values = rng.beta(0.4, 3, 120)
    s = sort_sample(values)
    fast = np.mean([variance_var_bootstrap(s, 0.75, 400, seed=k) for k in range(40)])
    slow = np.mean([resample_bootstrap(values, 0.75, 400, seed=1000 + k) for k in range(40)])
    assert fast == pytest.approx(slow, rel=0.08)


# -- ucb ---------------------------------------------------------------------


def test_ucb_examples():
    assert ucb(0.2, 1.0, 100, 0.05) == pytest.approx(0.36449, abs=5e-6)
    assert ucb(0.2, 0.0, 100, 0.05) == 0.2
    assert ucb(0.2, 3.0, 100, 0.5) == 0.2
    for bad in (0.0, 0.6, -0.1):
        with pytest.raises(ValueError):
            ucb(0.2, 1.0, 10, bad)


@given(st.floats(-1, 1), st.floats(0, 5), st.integers(1, 10_000), st.floats(1e-6, 0.5))
def test_ucb_dominates_point(point, sd, n, delta):
    assert ucb(point, sd, n, delta) >= point


# -- properties --------------------------------------------------------------


@given(samples, betas)
def test_cvar_closed_form_equals_general(values, beta):
    s = sort_sample(values)
    assert variance_cvar(s, beta) == pytest.approx(variance_general(s, WeightMeasure.cvar(beta)), abs=1e-10)


@given(samples, st.lists(unit, min_size=80, max_size=80), betas)
def test_estimate_monotone_under_domination(values, bumps, beta):
    s = sort_sample(values)
    bumped = sort_sample(np.minimum(s.values + np.asarray(bumps[: s.n]) * 0.5, 1.0))
    for psi in (WeightMeasure.mean(), WeightMeasure.cvar(beta), WeightMeasure.var(beta)):
        assert estimate_risk(bumped, psi) >= estimate_risk(s, psi) - 1e-12


@given(samples, betas)
def test_cvar_dominates_mean(values, beta):
    s = sort_sample(values)
    mean = estimate_risk(s, WeightMeasure.mean())
    assert estimate_risk(s, WeightMeasure.cvar(beta)) >= mean - 1e-12
    assert mean >= 0


@given(samples, betas, st.floats(0.01, 1.0))
def test_scaling(values, beta, c):
    s = sort_sample(values)
    t = sort_sample(np.asarray(values) * c)
    for psi in (WeightMeasure.mean(), WeightMeasure.cvar(beta), WeightMeasure.var(beta)):
        assert estimate_risk(t, psi) == pytest.approx(c * estimate_risk(s, psi), rel=1e-9, abs=1e-12)
    for psi in (WeightMeasure.mean(), WeightMeasure.cvar(beta)):
        assert variance_general(t, psi) == pytest.approx(c**2 * variance_general(s, psi), rel=1e-8, abs=1e-14)
    assert variance_cvar(t, beta) == pytest.approx(c**2 * variance_cvar(s, beta), rel=1e-8, abs=1e-14)
    # identical bootstrap indices, so the scaling is exact up to rounding
    assert variance_var_bootstrap(t, beta, 50, seed=1) == pytest.approx(
        c**2 * variance_var_bootstrap(s, beta, 50, seed=1), rel=1e-8, abs=1e-14)


@given(st.integers(1, 200), betas)
def test_weights_sum_to_one(n, beta):
    for psi in (WeightMeasure.mean(), WeightMeasure.cvar(beta), WeightMeasure.var(beta)):
        w = lstat_weights(psi, n)
        assert w.min() >= 0
        assert math.isclose(w.sum(), 1.0, abs_tol=1e-12)
