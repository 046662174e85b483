"""Property-based checks of the algebraic structure of the bounds."""
import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from steinbound import CategoricalDistribution
from steinbound.concentration import es_radius_logy, es_radius_scale_free, select_y
from steinbound.opl import FinitePolicyClass, assemble, policy_statistics, posterior_value
from steinbound.pac_bayes import kl_categorical, pb_radius_logy
from steinbound.wis import (
    LoggedData,
    WeightMoments,
    WeightPmf,
    effective_n,
    vwa_bound_global,
    vwa_bound_perk,
    vwa_bruteforce,
    wis_estimate,
)

pos = st.floats(1e-6, 1e3, allow_nan=False)
nonneg = st.floats(0, 1e3, allow_nan=False)
xs = st.floats(2, 50, allow_nan=False)


def simplex(m):
    return st.lists(st.floats(0.01, 1), min_size=m, max_size=m).map(lambda v: np.array(v) / sum(v))


@given(nonneg, nonneg, xs, pos)
def test_logy_radius_monotone_in_proxy(v1, v2, x, y):
    lo, hi = sorted((v1, v2))
    assert es_radius_logy(lo, x, y) <= es_radius_logy(hi, x, y)


@given(nonneg, xs, xs, pos)
def test_logy_radius_monotone_in_x(v, x1, x2, y):
    lo, hi = sorted((x1, x2))
    assert es_radius_logy(v, lo, y) <= es_radius_logy(v, hi, y)


@given(nonneg, nonneg, nonneg, st.floats(0, 50))
def test_scale_free_monotone(v, extra, vm, x):
    assert es_radius_scale_free(v, vm, x) <= es_radius_scale_free(v + extra, vm, x)


@given(nonneg, st.floats(0, 20), st.floats(0, 20), xs, pos)
def test_pac_bayes_radius_monotone_in_kl(v, k1, k2, x, y):
    lo, hi = sorted((k1, k2))
    assert pb_radius_logy(v, lo, x, y) <= pb_radius_logy(v, hi, x, y)


@given(nonneg, xs, pos)
def test_pac_bayes_radius_reduces_bitwise(v, x, y):
    assert pb_radius_logy(v, 0.0, x, y) == es_radius_logy(v, x, y)


@given(nonneg, xs, st.lists(pos, min_size=1, max_size=6))
def test_select_y_is_grid_minimum(v, x, grid):
    _, radius, fp = select_y(v, x, grid)
    assert radius == min(es_radius_logy(v, x, y) for y in grid)
    assert fp == len(grid) * math.exp(-x)


@given(st.integers(2, 6).flatmap(lambda m: st.tuples(simplex(m), simplex(m))))
def test_kl_nonnegative(pq):
    p, q = pq
    assert kl_categorical(p, q) >= 0
    assert kl_categorical(p, p) == 0


@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=30), st.floats(0.01, 100))
def test_wis_invariant_to_weight_scale(w, c):
    rng = np.random.default_rng(len(w))
    r = rng.random(len(w))
    w = np.array(w)
    assert math.isclose(wis_estimate(w, r), wis_estimate(c * w, r), rel_tol=1e-12)


@given(st.lists(st.floats(0.01, 10), min_size=1, max_size=30))
def test_normalized_weights_sum_to_one(w):
    w = np.array(w)
    # with rewards equal to one, the estimate is the sum of normalized weights
    assert math.isclose(wis_estimate(w, np.ones_like(w)), 1.0, rel_tol=1e-12)


@given(st.integers(1, 500), st.floats(0.01, 20), st.floats(0.01, 20), st.floats(1, 10))
def test_effective_n_decreasing_in_x(n, x1, x2, m2):
    lo, hi = sorted((x1, x2))
    m = WeightMoments(1.0, m2)
    assert effective_n(n, hi, m) <= effective_n(n, lo, m) <= n


@given(st.lists(st.floats(0.1, 5), min_size=1, max_size=25), st.floats(0.01, 3), st.floats(0.01, 3),
       st.floats(1, 4))
def test_closed_form_proxies_nondecreasing_in_x(w, x1, x2, m2):
    lo, hi = sorted((x1, x2))
    m = WeightMoments(1.0, m2)
    assert vwa_bound_perk(w, m, lo).value <= vwa_bound_perk(w, m, hi).value
    assert vwa_bound_global(w, m, lo).value <= vwa_bound_global(w, m, hi).value


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from([0.5, 1.0, 2.5]), min_size=1, max_size=5), simplex(3))
def test_exact_proxy_invariant_to_common_scale(w, probs):
    pmf = WeightPmf([0.5, 1.0, 2.5], probs)
    scaled = WeightPmf([1.5, 3.0, 7.5], probs)
    a = vwa_bruteforce(w, pmf)
    b = vwa_bruteforce(3 * np.array(w), scaled)
    assert math.isclose(a, b, rel_tol=1e-10)
    assert a >= 0


@settings(max_examples=30, deadline=None)
@given(simplex(3), simplex(3), st.integers(0, 10_000))
def test_value_and_proxy_affine_in_posterior(p, q, seed):
    rng = np.random.default_rng(seed)
    cls = FinitePolicyClass(np.array([[0.6, 0.2, 0.2], [0.2, 0.6, 0.2], [0.3, 0.3, 0.4]]))
    behavior = np.full(3, 1 / 3)
    data = LoggedData(rng.integers(0, 3, 60), rng.random(60))
    stats = policy_statistics(data, cls, behavior, 2.0, "global")
    prior = CategoricalDistribution.uniform(3)
    mix = CategoricalDistribution.from_unnormalized(0.5 * p + 0.5 * q)
    a, b, c = (assemble(stats, CategoricalDistribution.from_unnormalized(r), prior, 0.01)
               for r in (p, q, mix.weights))
    assert math.isclose(c["value"], 0.5 * a["value"] + 0.5 * b["value"], rel_tol=1e-9)
    assert math.isclose(c["proxy"], 0.5 * a["proxy"] + 0.5 * b["proxy"], rel_tol=1e-9)
    assert math.isclose(c["value"], posterior_value(data, cls, mix, behavior), rel_tol=1e-12)
