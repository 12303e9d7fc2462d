import math
import warnings

import numpy as np
import pytest

from gmctail.errors import DomainError, EmptySetError, RegimeError, UnsupportedError
from gmctail.field import GridSpec, field_sampler, sample_field
from gmctail.gmc import (DensitySpec, SetSpec, cbar_subcritical, critical_mass, critical_tail_coeff,
                         derivative_approx_check, mass_table, q_param, subcritical_mass,
                         subcritical_tail_coeff)
from gmctail.kernels import KernelDescriptor
from gmctail.rng import RngPolicy

K0 = KernelDescriptor.l_exact(0.0, 1)
ONE = DensitySpec.constant(1.0)
UNIT = SetSpec.box([0.0], [1.0])

# 40-digit evaluations of the closed forms (mpmath)
CBAR_1_1 = 1.911955189944499981
CBAR_1_2 = 527.9906387131023047
COEF_1_1_F03 = 1.2904347764186166


def _sampler(eps, seed=0, L=0.0):
    return field_sampler(KernelDescriptor.l_exact(L, 1), GridSpec.box([0.0], [1.0], 2 * eps), eps,
                         RngPolicy(seed))


class TestMasses:
    def test_zero_density(self):
        s = sample_field(K0, GridSpec.box([0.0], [1.0], 0.1), 0.05, RngPolicy(1), 2)
        assert critical_mass(s[0], UNIT, DensitySpec.constant(0.0)).value == 0.0

    def test_critical_record(self):
        eps = math.exp(-4)
        s = sample_field(K0, GridSpec.box([0.0], [1.0], 2 * eps), eps, RngPolicy(1), 3)
        out = critical_mass(s, UNIT, ONE)
        assert [m.replica for m in out] == [0, 1, 2]
        assert out[0].normalisation == pytest.approx(2.0)
        assert out[0].regime == "critical" and out[0].gamma is None

    def test_critical_mean(self):
        eps = math.exp(-4)
        v = mass_table(_sampler(eps, 2), [(UNIT, ONE)], 10_000)[:, 0]
        assert abs(v.mean() - 2.0) <= 3 * v.std() / math.sqrt(v.size)

    def test_critical_mean_growth(self):
        for k in (2, 3, 4):
            v = mass_table(_sampler(math.exp(-k), k), [(UNIT, ONE)], 10_000)[:, 0]
            assert abs(v.mean() - math.sqrt(k)) <= 3 * v.std() / math.sqrt(v.size)

    def test_epsilon_one_rejected(self):
        g = GridSpec.box([0.0], [1.0], 0.5)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            s = sample_field(K0, g, 1.0, 0, 1)[0]
        with pytest.raises(DomainError):
            critical_mass(s, UNIT, ONE)

    def test_empty_set(self):
        s = sample_field(K0, GridSpec.box([0.0], [1.0], 0.1), 0.05, 0, 1)[0]
        with pytest.raises(EmptySetError):
            critical_mass(s, SetSpec.box([2.0], [3.0]), ONE)

    def test_subcritical_gamma_zero(self):
        s = sample_field(K0, GridSpec.box([0.0], [1.0], 0.1), 0.05, 0, 1)[0]
        g = DensitySpec.affine(1.0, [2.0])
        cells = s.grid.points[:, 0]
        assert subcritical_mass(s, 0.0, UNIT, g).value == pytest.approx(np.sum(1 + 2 * cells) * 0.1)

    def test_subcritical_regime(self):
        s = sample_field(K0, GridSpec.box([0.0], [1.0], 0.1), 0.05, 0, 1)[0]
        with pytest.raises(RegimeError):
            subcritical_mass(s, math.sqrt(2), UNIT, ONE)

    def test_subcritical_second_moment(self):
        gamma = 0.5
        for k, eps in enumerate([math.exp(-3), math.exp(-5)]):
            s = _sampler(eps, 10 + k)
            v = mass_table(s, [(UNIT, ONE)], 20_000, gamma=gamma)[:, 0]
            w = np.full(s.grid.n_points, s.grid.cell_volume)
            exact = w @ np.exp(gamma ** 2 * s.cov.repaired()) @ w
            assert abs(np.mean(v ** 2) - exact) <= 3 * np.std(v ** 2) / math.sqrt(v.size)
            assert abs(v.mean() - 1.0) <= 3 * v.std() / math.sqrt(v.size)

    def test_subcritical_second_moment_converges(self):
        # exact discrete second moment; increments shrink like eps^(1 - gamma^2)
        gamma = 0.5
        seconds = []
        for k in range(3, 8):
            s = _sampler(math.exp(-k))
            w = np.full(s.grid.n_points, s.grid.cell_volume)
            seconds.append(w @ np.exp(gamma ** 2 * s.cov.repaired()) @ w)
        inc = np.abs(np.diff(seconds))
        assert np.all(np.diff(inc) < 0)
        assert inc[-1] < 0.01

    def test_monotone_in_set(self):
        s = _sampler(math.exp(-4), 3).batch(np.arange(50))
        small = critical_mass(s, SetSpec.box([0.2], [0.5]), ONE)
        big = critical_mass(s, SetSpec.box([0.1], [0.7]), ONE)
        assert all(a.value <= b.value for a, b in zip(small, big))

    def test_mass_table_matches(self):
        s = _sampler(math.exp(-3), 4)
        tab = mass_table(s, [(UNIT, ONE)], 10, chunk=4)
        direct = [m.value for m in critical_mass(s.batch(np.arange(10)), UNIT, ONE)]
        np.testing.assert_allclose(tab[:, 0], direct, rtol=1e-13)

    def test_moments_stable(self):
        eps_list = [math.exp(-3), math.exp(-5)]
        for q in (0.25, 0.5):
            m = []
            for k, eps in enumerate(eps_list):
                v = mass_table(_sampler(eps, 20 + k), [(UNIT, ONE)], 20_000)[:, 0]
                m.append(np.mean(v ** q))
            assert m[1] == pytest.approx(m[0], rel=0.1)

    def test_kahane_ordering(self):
        eps = math.exp(-4)
        n = 20_000
        v0 = mass_table(_sampler(eps, 30, 0.0), [(UNIT, ONE)], n)[:, 0]
        v1 = mass_table(_sampler(eps, 31, 1.0), [(UNIT, ONE)], n)[:, 0]

        def diff(F):
            a, b = F(v0), F(v1)
            return b.mean() - a.mean(), math.hypot(a.std(), b.std()) / math.sqrt(n)

        d, se = diff(lambda x: np.maximum(x - 3.0, 0.0))
        assert d >= -2 * se
        d, se = diff(np.sqrt)
        assert d <= 2 * se


class TestConstants:
    def test_q(self):
        assert q_param(1.0, 1) == 1.5

    @pytest.mark.parametrize("d", [1, 2])
    def test_limit_near_critical(self, d):
        assert cbar_subcritical(math.sqrt(2 * d) - 1e-6, d) == pytest.approx(1.0, abs=1e-4)
        assert cbar_subcritical(math.sqrt(2 * d) - 1e-4, d) == pytest.approx(1.0, abs=1e-2)

    def test_frozen_values(self):
        assert cbar_subcritical(1.0, 1) == pytest.approx(CBAR_1_1, rel=1e-12)
        assert cbar_subcritical(1.0, 2) == pytest.approx(CBAR_1_2, rel=1e-12)

    def test_errors(self):
        with pytest.raises(RegimeError):
            cbar_subcritical(2.0, 1)
        with pytest.raises(RegimeError):
            cbar_subcritical(0.0, 1)
        with pytest.raises(UnsupportedError):
            cbar_subcritical(1.0, 3)

    def test_tail_coeff_unit(self):
        gamma = 1.0
        coef, p = subcritical_tail_coeff(gamma, 1, lambda v: np.zeros(len(v)), ONE, UNIT)
        b = (2 / gamma) * (q_param(gamma, 1) - gamma)
        assert p == 2.0
        assert coef == pytest.approx(b / (b + 1) * CBAR_1_1, rel=1e-10)

    def test_tail_coeff_frozen(self):
        coef, _ = subcritical_tail_coeff(1.0, 1, lambda v: np.full(len(v), 0.3), ONE, UNIT)
        assert coef == pytest.approx(COEF_1_1_F03, rel=1e-10)

    def test_weight_integral_near_critical(self):
        gamma = math.sqrt(2) - 1e-7
        g = DensitySpec.affine(0.5, [1.0])
        coef, _ = subcritical_tail_coeff(gamma, 1, lambda v: np.full(len(v), 0.3), g, UNIT)
        b = (2 / gamma) * (q_param(gamma, 1) - gamma)
        weight = coef / (b / (b + 1) * cbar_subcritical(gamma, 1))
        assert weight == pytest.approx(1.0, rel=1e-5)

    def test_critical_coeff(self):
        sq = SetSpec.box([0.0, 0.0], [1.0, 1.0])
        assert critical_tail_coeff(2, ONE, sq) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-10)
        assert critical_tail_coeff(1, ONE, UNIT) == pytest.approx(1 / math.sqrt(math.pi), rel=1e-12)
        g = DensitySpec.affine(0.0, [1.0])
        assert critical_tail_coeff(1, g, UNIT) == pytest.approx(1 / (2 * math.sqrt(math.pi)), rel=1e-12)


class TestDerivative:
    def test_far_gamma_flagged(self):
        s = _sampler(math.exp(-4), 40).batch(np.arange(2000))
        rep = derivative_approx_check(s, math.sqrt(2) - 0.19, UNIT)
        assert rep.flagged

    def test_out_of_range(self):
        s = _sampler(math.exp(-3), 41).batch(np.arange(10))
        with pytest.raises(RegimeError):
            derivative_approx_check(s, 1.0, UNIT)

    def test_empty(self):
        with pytest.raises(EmptySetError):
            derivative_approx_check([], math.sqrt(2) - 0.1, UNIT)

    def test_trend_reported(self):
        s = _sampler(math.exp(-5), 42).batch(np.arange(2000))
        far = derivative_approx_check(s, math.sqrt(2) - 0.15, UNIT)
        near = derivative_approx_check(s, math.sqrt(2) - 0.02, UNIT)
        assert np.all(np.isfinite(near.q_sub)) and np.all(np.isfinite(far.q_sub))
        assert near.median_ratio > far.median_ratio
