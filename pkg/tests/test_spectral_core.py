import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracmhd import spectral_core as sc

kappas = st.floats(min_value=0.05, max_value=1.0)
lams = st.floats(min_value=1e-6, max_value=1e6)


def sqrt_density(lam):
    return lam ** -0.5


class TestMultipliers:
    def test_power_examples(self):
        assert sc.fractional_power_multiplier(1, 2.5) == 2.5
        assert sc.fractional_power_multiplier(0.5, 4) == pytest.approx(2.0, rel=1e-15)
        # mpmath, 30 digits
        assert sc.fractional_power_multiplier(0.8, 3) == pytest.approx(
            2.40822468528069216, rel=1e-14)

    def test_power_domain(self):
        with pytest.raises(sc.DomainError):
            sc.fractional_power_multiplier(0.5, 0.0)
        with pytest.raises(sc.DomainError):
            sc.fractional_power_multiplier(1.5, 1.0)
        with pytest.raises(sc.DomainError):
            sc.FractionalExponent(0)

    def test_semigroup_examples(self):
        assert sc.semigroup_multiplier(1, 0, 7) == 1.0
        assert sc.semigroup_multiplier(1, 1, math.log(2)) == pytest.approx(0.5, rel=1e-15)
        assert sc.semigroup_multiplier(0.9, 2, 1.5) == pytest.approx(
            0.0560902374342534989, rel=1e-14)
        with pytest.raises(sc.DomainError):
            sc.semigroup_multiplier(1, -1e-3, 1.0)

    def test_mollifier_examples(self):
        assert sc.mollifier_multiplier(1, 1) == 0.5
        assert sc.mollifier_multiplier(3, 2) == pytest.approx(0.6, rel=1e-15)
        assert sc.mollifier_multiplier(10 ** 6, 1) == pytest.approx(0.999999000001, rel=1e-12)
        with pytest.raises(sc.DomainError):
            sc.mollifier_multiplier(0, 1.0)

    @given(kappas, lams, lams)
    def test_power_monotone(self, k, a, b):
        lo, hi = sorted((a, b))
        assert sc.fractional_power_multiplier(k, lo) <= sc.fractional_power_multiplier(k, hi)

    @given(kappas, lams)
    def test_identity_recovery(self, k, lam):
        if k == 1.0:
            return
        prod = sc.fractional_power_multiplier(k, lam) * sc.fractional_power_multiplier(1 - k, lam)
        assert prod == pytest.approx(lam, rel=1e-12)

    @given(kappas, st.floats(0, 1e3), st.floats(1e-3, 1e3), lams)
    def test_semigroup_decreasing_in_t(self, k, t, dt, lam):
        assert sc.semigroup_multiplier(k, t + dt, lam) <= sc.semigroup_multiplier(k, t, lam)

    @given(kappas, st.floats(1e-6, 1e6), lams)
    def test_pointwise_smoothing(self, k, t, lam):
        s = t * sc.fractional_power_multiplier(k, lam)
        assert s * math.exp(-s) <= 1.0


class TestWeightedNorm:
    def test_total_mass(self):
        m = sc.DiscreteMeasure([1.0], [4.0])
        assert sc.weighted_norm_sq(m, lambda lam: np.ones_like(lam)) == 4.0
        assert m.total_mass == 4.0

    def test_two_terms(self):
        m = sc.DiscreteMeasure([1.0, 4.0], [1.0, 1.0])
        assert sc.weighted_norm_sq(m, np.sqrt) == 5.0

    def test_gamma_integral(self):
        # 30-digit mpmath quadrature of int_0^1 exp(-200 x) x^{-1/2} dx
        m = sc.ContinuousMeasure(sqrt_density, lam_max=1.0)
        val = sc.weighted_norm_sq(m, lambda lam: np.exp(-100 * lam))
        assert val == pytest.approx(0.125331413731550025, rel=1e-10)
        assert val == pytest.approx(math.sqrt(math.pi / 200), rel=1e-9)

    def test_degenerate_measure(self):
        m = sc.DiscreteMeasure([], [])
        assert sc.weighted_norm_sq(m, np.sqrt) == 0.0
        z = sc.DiscreteMeasure([1.0, 2.0], [0.0, 0.0])
        assert sc.audit_smoothing_bounds(z, 1.0, [1.0]).passed

    def test_invalid_measures(self):
        with pytest.raises(sc.DomainError):
            sc.DiscreteMeasure([0.0], [1.0])
        with pytest.raises(sc.DomainError):
            sc.DiscreteMeasure([1.0], [-1.0])

    def test_nonconvergence_flagged(self):
        m = sc.ContinuousMeasure(lambda lam: np.ones_like(lam), lam_max=1e4, lam_min=1.0,
                                 panels_per_decade=1, order=2, rtol=1e-14)
        with pytest.raises(sc.QuadratureError):
            sc.weighted_norm_sq(m, lambda lam: np.cos(lam))

    def test_panel_doubling_converges(self):
        m = sc.ContinuousMeasure(lambda lam: lam ** 0.5, lam_max=1.0)
        for t in (1.0, 1e2, 1e4):
            f = lambda lam: np.exp(-t * lam)
            a = sc.weighted_norm_sq(m, f)
            b = sc.weighted_norm_sq(m.refined(), f)
            assert abs(a - b) <= 1e-10 * b

    def test_sampled_discrete_matches_continuous(self):
        cont = sc.ContinuousMeasure(lambda lam: lam ** 0.5, lam_max=1.0, lam_min=1e-12)
        edges = np.geomspace(1e-12, 1.0, 200001)
        mid = np.sqrt(edges[1:] * edges[:-1])
        disc = sc.DiscreteMeasure(mid, mid ** 0.5 * np.diff(edges))
        for t in (0.0, 1.0, 30.0):
            f = lambda lam: np.exp(-t * lam)
            assert sc.weighted_norm_sq(disc, f) == pytest.approx(
                sc.weighted_norm_sq(cont, f), rel=1e-6)

    def test_for_horizon_head_mass(self):
        m = sc.ContinuousMeasure.for_horizon(sqrt_density, 1.0, 1.0, 1e4)
        tail = sc.weighted_norm_sq(m, lambda lam: np.exp(-1e4 * lam))
        assert m.head_mass() <= 1e-12 * tail
        # head of x^{-1/2} is 2 sqrt(lam_min)
        assert m.head_mass() == pytest.approx(2 * math.sqrt(m.lam_min), rel=1e-9)

    @settings(max_examples=60)
    @given(st.lists(st.tuples(st.floats(1e-6, 1e6), st.floats(0, 1e3)), min_size=1,
                    max_size=30), st.integers(1, 10 ** 6))
    def test_mollifier_contraction(self, pairs, n):
        lam, w = zip(*pairs)
        m = sc.DiscreteMeasure(lam, w)
        assert sc.weighted_norm_sq(m, lambda x: sc.mollifier_multiplier(n, x)) <= m.total_mass

    @settings(max_examples=60)
    @given(st.lists(st.tuples(st.floats(1e-6, 1e6), st.floats(0, 1e3)), min_size=1,
                    max_size=30), kappas)
    def test_semigroup_contraction_monotone(self, pairs, k):
        lam, w = zip(*pairs)
        m = sc.DiscreteMeasure(lam, w)
        vals = [sc.weighted_norm_sq(m, lambda x: sc.semigroup_multiplier(k, t, x))
                for t in np.geomspace(1e-3, 1e3, 25)]
        assert all(b <= a for a, b in zip(vals, vals[1:]))
        assert vals[0] <= m.total_mass


class TestSmoothingAudit:
    def test_single_mode(self):
        m = sc.DiscreteMeasure([1.0], [1.0])
        rep = sc.audit_smoothing_bounds(m, 1.0, [2.0])
        assert rep.passed
        assert rep.ratios["analytic"] == pytest.approx(2 * math.exp(-2), rel=1e-14)

    @pytest.mark.parametrize("kappa", [0.3, 0.8, 1.0])
    def test_worst_mode_hits_inverse_e(self, kappa):
        t = 3.0
        m = sc.DiscreteMeasure([t ** (-1 / kappa)], [1.0])
        rep = sc.audit_smoothing_bounds(m, kappa, [t])
        assert rep.ratios["analytic"] == pytest.approx(math.exp(-1), rel=1e-12)

    @pytest.mark.parametrize("kappa", [0.3, 0.8, 1.0])
    def test_gradient_constant(self, kappa):
        m = 1 / (2 * kappa)
        assert sc.gradient_smoothing_constant(kappa) == pytest.approx(
            m ** m * math.exp(-m), rel=1e-12)

    def test_gradient_bound_sharp_mode(self):
        kappa, t = 0.8, 2.0
        x = 1 / (2 * kappa)            # maximiser of x^m e^{-x}
        lam = (x / t) ** (1 / kappa)
        rep = sc.audit_smoothing_bounds(sc.DiscreteMeasure([lam], [1.0]), kappa, [t])
        assert rep.passed
        assert rep.ratios["gradient"] == pytest.approx(1.0, abs=1e-9)

    def test_continuous_tail_decreasing(self):
        m = sc.ContinuousMeasure(sqrt_density, lam_max=1.0)
        ts = np.geomspace(1, 1e6, 30)
        vals = [sc.weighted_norm_sq(m, lambda x: np.exp(-t * x)) for t in ts]
        assert all(b < a for a, b in zip(vals, vals[1:]))
        assert vals[-1] < 1e-2 * vals[0]
        assert sc.audit_smoothing_bounds(m, 1.0, ts).passed

    def test_rejects_bad_grid(self):
        with pytest.raises(sc.DomainError):
            sc.audit_smoothing_bounds(sc.DiscreteMeasure([1.0], [1.0]), 1.0, [])
        with pytest.raises(sc.DomainError):
            sc.audit_smoothing_bounds(sc.DiscreteMeasure([1.0], [1.0]), 1.0, [0.0])


class TestTextFormat:
    def test_discrete_round_trip(self):
        rng = np.random.default_rng(0)
        m = sc.DiscreteMeasure(rng.uniform(0.1, 10, 20), rng.uniform(0, 1, 20))
        back = sc.load_measure(sc.dump_measure(m))
        np.testing.assert_array_equal(back.lambdas, m.lambdas)
        np.testing.assert_array_equal(back.weights, m.weights)

    def test_continuous_round_trip(self):
        m = sc.ContinuousMeasure(sqrt_density, lam_max=1.0, lam_min=1e-20)
        text = sc.dump_measure(m)
        assert text.startswith("continuous\n")
        back = sc.load_measure(text)
        again = sc.dump_measure(back)
        for r1, r2 in zip(text.splitlines()[1:], again.splitlines()[1:]):
            a, b = (np.array(r.split(","), dtype=float) for r in (r1, r2))
            np.testing.assert_allclose(a, b, rtol=5e-15)  # 15 significant digits
        f = lambda x: np.exp(-10 * x)
        assert sc.weighted_norm_sq(back, f) == pytest.approx(sc.weighted_norm_sq(m, f),
                                                             rel=1e-9)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            sc.load_measure("histogram\n1,2\n")
