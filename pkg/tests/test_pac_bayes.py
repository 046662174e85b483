import math

import numpy as np
import pytest

from steinbound import AbsoluteContinuityError, CategoricalDistribution, PreconditionError
from steinbound.concentration import es_radius_logy
from steinbound.pac_bayes import (
    LossTable,
    bernstein_capacity,
    empirical_bernstein_bound,
    gen_bound,
    kl_categorical,
    pb_mgf_check,
    pb_radius_logy,
    pb_radius_scale_free,
    posterior_mean,
)

# [DERIVED] mpmath evaluations, frozen
KL_HALF_QUARTER = 0.143841036225890464
PB_LOGY_3_1_2_1 = 5.92371124287461576
EB_CAPACITY = 6.60517018598809137
EB_U = 0.171452241911002905
EB_RADIUS = 0.217035181431016022


class TestKL:
    def test_self_divergence(self):
        p = [0.2, 0.3, 0.5]
        assert kl_categorical(p, p) == 0.0

    def test_hand_value(self):
        assert kl_categorical([0.5, 0.5], [0.25, 0.75]) == pytest.approx(KL_HALF_QUARTER, rel=1e-14)

    def test_absolute_continuity(self):
        with pytest.raises(AbsoluteContinuityError):
            kl_categorical([1, 0], [0, 1])

    def test_zero_posterior_mass_is_fine(self):
        assert kl_categorical([1, 0], [0.5, 0.5]) == pytest.approx(math.log(2))

    def test_length_mismatch(self):
        with pytest.raises(PreconditionError):
            kl_categorical([1.0], [0.5, 0.5])


class TestRadii:
    @pytest.mark.parametrize("args,expected", [((1, 1, 0, 1), 2 * math.sqrt(2)), ((0, 0, 5, 5), 0.0),
                                               ((2, 1, 0.5, 2), math.sqrt(27))])
    def test_scale_free(self, args, expected):
        assert pb_radius_scale_free(*args) == pytest.approx(expected, rel=1e-14)

    def test_logy_reduces_at_zero(self):
        assert pb_radius_logy(0, 0, 2, 1) == pytest.approx(2.0)

    def test_logy_hand_value(self):
        assert pb_radius_logy(3, 1, 2, 1) == pytest.approx(PB_LOGY_3_1_2_1, rel=1e-14)

    def test_logy_kl_zero_identity(self):
        assert pb_radius_logy(3, 0, 2, 1) == es_radius_logy(3, 2, 1)

    def test_logy_precondition(self):
        with pytest.raises(PreconditionError):
            pb_radius_logy(1, 0, 1.9, 1)


class TestMixtureCheck:
    def test_boundary(self):
        est, se = pb_mgf_check(np.zeros((20, 3)), 0.3)
        assert est == 1.0 and se == 0.0

    def test_deterministic_value(self):
        est, se = pb_mgf_check([(0, 0.5, 0)] * 10, 0.5)
        assert est == pytest.approx(0.5 / math.sqrt(0.25 + 0.5))
        assert est < 1 and se < 1e-15


class TestGenBound:
    def test_zero_losses(self):
        table = LossTable(np.zeros((10, 2)), "unit_interval")
        prior = CategoricalDistribution.uniform(2)
        post = CategoricalDistribution([0.9, 0.1])
        rep = gen_bound(table, [0, 0], post, prior, 3, 0.01)
        assert rep.proxy == 0
        assert rep.value == pb_radius_logy(0, kl_categorical(post, prior), 3, 0.01)
        assert rep.kind == "radius"
        assert rep.failure_probability == pytest.approx(math.exp(-3))

    def test_constant_losses(self):
        table = LossTable(np.full((4, 1), 0.5))
        rep = gen_bound(table, lambda j: 0.25, [1.0], [1.0], 2, 1.0)
        assert rep.proxy == pytest.approx(0.125, rel=1e-15)
        assert rep.details["kl"] == 0

    def test_absolute_continuity(self):
        with pytest.raises(AbsoluteContinuityError):
            gen_bound(LossTable(np.zeros((3, 2))), [0, 0], [0.5, 0.5], [1, 0], 2, 1)

    def test_oracle_shape(self):
        with pytest.raises(PreconditionError):
            gen_bound(LossTable(np.zeros((3, 2))), [0], [0.5, 0.5], [0.5, 0.5], 2, 1)


class TestEmpiricalBernstein:
    def test_hand_value(self):
        table = LossTable(np.zeros((99, 1)), "unit_interval")
        rep = empirical_bernstein_bound(table, [1.0], [1.0], 2)
        assert rep.proxy == 0
        assert rep.details["capacity"] == pytest.approx(EB_CAPACITY, rel=1e-14)
        assert rep.details["u_s"] == pytest.approx(EB_U, rel=1e-13)
        assert rep.value == pytest.approx(EB_RADIUS, rel=1e-13)
        assert rep.failure_probability == pytest.approx(2 * math.exp(-2))

    def test_x_precondition(self):
        with pytest.raises(PreconditionError):
            empirical_bernstein_bound(LossTable(np.zeros((5, 1)), "unit_interval"), [1.0], [1.0], 1)

    def test_monotone_in_second_moment(self):
        lo = empirical_bernstein_bound(LossTable(np.zeros((30, 1)), "unit_interval"), [1.0], [1.0], 3)
        hi = empirical_bernstein_bound(LossTable(np.ones((30, 1)), "unit_interval"), [1.0], [1.0], 3)
        assert lo.value < hi.value

    def test_rejects_out_of_range(self):
        with pytest.raises(PreconditionError):
            empirical_bernstein_bound(LossTable(np.full((5, 1), 2.0)), [1.0], [1.0], 2)

    def test_capacity_formula(self):
        assert bernstein_capacity(0.5, 2, 99) == pytest.approx(0.5 + 2 + math.log(100))


def test_loss_table_validation():
    with pytest.raises(PreconditionError):
        LossTable(np.array([[-1.0]]))
    with pytest.raises(PreconditionError):
        LossTable(np.array([[1.5]]), "unit_interval")


def test_posterior_mean_skips_zero_weights():
    assert posterior_mean(CategoricalDistribution([1.0, 0.0]), [0.3, math.inf]) == 0.3


def test_mixture_check_on_bandit_harness():
    from steinbound.sim import pac_bayes_mgf_triples, standard_environments

    s = standard_environments()["mismatched"]
    triples = pac_bayes_mgf_triples(s.env, s.behavior, 40, 10_000, 21, "prior")
    est, se = pb_mgf_check(triples, 1 / 40)
    assert est <= 1 + 3 * se
