import math

import numpy as np
import pytest

from steinbound import PreconditionError
from steinbound.sim import (
    BanditEnv,
    BoundSpec,
    binomial_3sigma,
    canonical_pairs,
    coverage,
    default_policy_class,
    generate_logs,
    loss_table,
    pac_bayes_mgf_triples,
    run_trials,
    standard_environments,
    true_value,
    worker_count,
)
from steinbound.wis import weight_moments, weight_pmf

SUITE = standard_environments()


class TestEnvironment:
    def test_uniform_value(self):
        assert true_value(BanditEnv(2, [0, 1], "bernoulli"), [0.5, 0.5]) == 0.5

    def test_point_policy(self):
        env = BanditEnv(3, [0.1, 0.4, 0.9], "bernoulli")
        assert true_value(env, [0, 1, 0]) == 0.4

    def test_dot_product(self):
        assert true_value(BanditEnv(2, [0.5, 0.25], "bernoulli"), [0.2, 0.8]) == pytest.approx(0.3, rel=1e-15)

    def test_true_value_matches_simulation(self):
        s = SUITE["mismatched"]
        rng = np.random.default_rng(0)
        a = rng.choice(5, size=10**6, p=s.target)
        r = (rng.random(10**6) < s.env.reward_means[a]).astype(float)
        se = r.std() / math.sqrt(r.size)
        assert abs(r.mean() - true_value(s.env, s.target)) <= 4 * se

    def test_validation(self):
        with pytest.raises(PreconditionError):
            BanditEnv(2, [0.5], "bernoulli")
        with pytest.raises(PreconditionError):
            BanditEnv(1, [1.5], "bernoulli")
        with pytest.raises(PreconditionError):
            BanditEnv(1, [0.5], "gaussian")


class TestLogs:
    def test_reproducible(self):
        env = SUITE["heavy"].env
        a = generate_logs(env, SUITE["heavy"].behavior, 50, 3)
        b = generate_logs(env, SUITE["heavy"].behavior, 50, 3)
        assert np.array_equal(a.actions, b.actions) and np.array_equal(a.rewards, b.rewards)

    def test_point_mass_rewards(self):
        env = BanditEnv(3, [0.2, 0.5, 0.9], "point_mass")
        data = generate_logs(env, [0.3, 0.3, 0.4], 200, 1)
        assert np.array_equal(data.rewards, env.reward_means[data.actions])

    def test_frequencies(self):
        n = 10**5
        data = generate_logs(BanditEnv(4, [0.5] * 4, "bernoulli"), [0.25] * 4, n, 8)
        freq = np.bincount(data.actions, minlength=4) / n
        assert np.all(np.abs(freq - 0.25) <= 3 * math.sqrt(0.25 * 0.75 / n))

    def test_empty(self):
        with pytest.raises(PreconditionError):
            generate_logs(SUITE["coin"].env, [1.0], 0, 0)


class TestSuite:
    def test_mismatched_second_moment(self):
        s = SUITE["mismatched"]
        m = weight_moments(s.target, s.behavior)
        assert m.m2 == pytest.approx(2.99975, rel=1e-12)
        assert weight_pmf(s.target, s.behavior).size == 3

    def test_matched_weights(self):
        s = SUITE["matched"]
        assert weight_moments(s.target, s.behavior).m2 == pytest.approx(1.0)

    def test_default_class_full_support(self):
        cls = default_policy_class(5)
        assert cls.m == 5 and np.all(cls.policies > 0)


class TestCoverage:
    def test_infinite_radius_never_violated(self):
        s = SUITE["heavy"]
        res = coverage(BoundSpec("opev_lower_bound", {"x": 3, "proxy_mode": "perk"}), s.env,
                       s.behavior, s.target, n=5, trials=30, seed=0)
        assert res.violation_rate == 0.0
        assert all(r.sub_event_flags["proxy_infinite"] for r in res.records)

    def test_point_mass_environment(self):
        env = BanditEnv(1, [0.4], "point_mass")
        res = coverage(BoundSpec("es_radius_logy", {"x": 3}), env, [1.0], n=20, trials=50, seed=2)
        assert res.violation_rate == 0.0
        assert all(r.target_quantity < 1e-15 for r in res.records)

    def test_unknown_bound(self):
        with pytest.raises(PreconditionError):
            BoundSpec("hoeffding")

    def test_unknown_parameter(self):
        s = SUITE["coin"]
        with pytest.raises(PreconditionError, match="temprature"):
            coverage(BoundSpec("es_radius_logy", {"temprature": 1}), s.env, s.behavior, n=5, trials=2)

    def test_errors_counted_separately(self):
        # target only plays arm 2, which the behavior logs 1% of the time
        s = SUITE["heavy"]
        res = coverage(BoundSpec("opev_lower_bound", {"x": 2, "proxy_mode": "global"}), s.env,
                       s.behavior, [0, 0, 1], n=3, trials=40, seed=0)
        assert res.n_errors > 0
        assert res.n_valid + res.n_errors == 40
        assert all(r.error_flag == "DegenerateSampleError" for r in res.records if r.error_flag)

    def test_thread_count_does_not_change_records(self):
        s = SUITE["mismatched"]
        spec = BoundSpec("opev_lower_bound", {"x": 4, "proxy_mode": "mc", "inner_reps": 16})
        one = coverage(spec, s.env, s.behavior, s.target, n=40, trials=25, seed=7, threads=1)
        four = coverage(spec, s.env, s.behavior, s.target, n=40, trials=25, seed=7, threads=4)
        assert [(r.bound_value, r.target_quantity) for r in one.records] == \
               [(r.bound_value, r.target_quantity) for r in four.records]

    def test_logy_coverage(self):
        s = SUITE["coin"]
        res = coverage(BoundSpec("es_radius_logy", {"x": 3}), s.env, s.behavior, n=50, trials=2000, seed=1)
        assert res.within_budget

    def test_y_grid_budget(self):
        s = SUITE["coin"]
        res = coverage(BoundSpec("es_radius_logy", {"x": 3, "y_grid": [0.001, 0.01, 0.1]}), s.env,
                       s.behavior, n=30, trials=200, seed=1)
        assert res.failure_budget == pytest.approx(3 * math.exp(-3))

    @pytest.mark.parametrize("name,params", [
        ("es_radius_scale_free", {"x": 3}),
        ("wis_concentration", {"x": 3, "y": 0.01, "proxy_mode": "mc", "inner_reps": 16}),
        ("effective_n", {"x": 2}),
        ("vwa_perk", {"x": 2}),
        ("vwa_global", {"x": 2}),
        ("gen_bound", {"x": 3, "posterior": "softmax"}),
        ("empirical_bernstein", {"x": 2}),
        ("opl_lower_bound", {"x": 3, "proxy_mode": "mc", "inner_reps": 16}),
    ])
    def test_every_bound_runs(self, name, params):
        s = SUITE["mismatched"]
        n = 6 if name.startswith("vwa") else 60
        res = coverage(BoundSpec(name, params), s.env, s.behavior, s.target, n=n, trials=20, seed=3)
        assert res.n_valid == 20
        assert 0.0 <= res.violation_rate <= 1.0
        assert res.failure_budget > 0


def test_binomial_half_width():
    assert binomial_3sigma(0.05, 10_000) == pytest.approx(3 * math.sqrt(0.05 * 0.95 / 10_000))
    assert binomial_3sigma(2.0, 100) == 0.0


def test_worker_count_env(monkeypatch):
    monkeypatch.setenv("STEINBOUND_THREADS", "3")
    assert worker_count() == 3
    assert worker_count(1) == 1


def test_run_trials_order():
    assert [r for r in run_trials(lambda t: t * t, 10, threads=4)] == [t * t for t in range(10)]


def test_canonical_pairs_exact_proxy():
    s = SUITE["coin"]
    pairs = canonical_pairs(s.env, s.behavior, 50, 100, 0)
    # every fair-coin coordinate has E[(X - X')^2 | X] = 1/2
    assert np.allclose(pairs[:, 1], 50 * 0.5 / 2500)


def test_mgf_triples_shape():
    s = SUITE["mismatched"]
    t = pac_bayes_mgf_triples(s.env, s.behavior, 30, 10, 0, "softmax")
    assert t.shape == (10, 3) and np.all(t[:, 1] >= 0) and np.all(t[:, 2] >= 0)


def test_loss_table():
    from steinbound.wis import LoggedData

    tab = loss_table(LoggedData([0, 1], [1.0, 0.25]), 2, 2.0)
    assert tab.tolist() == [[0.0, 0.0], [0.0, 1.5]]
