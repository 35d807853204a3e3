from __future__ import annotations

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import quad_h, random_corr
from kronfit import kalg
from kronfit.design import build_design, factors_to_theta
from kronfit.errors import NotOveridentified, RankDeficientContrast
from kronfit.mc import DgpSpec, kronecker_theta, simulate_panel
from kronfit.mdest import WeightSpec, md_estimate
from kronfit.moments import MomentSet, Regime, compute_moments
from kronfit.infer import (
    EstimateReport,
    chi2_sf,
    contrast_interval,
    normal_sf,
    overid_test,
    s_matrix,
    wald_joint,
)


def mp_chi2_sf(x, k):
    return float(mpmath.gammainc(mpmath.mpf(k) / 2, mpmath.mpf(x) / 2, mpmath.inf,
                                 regularized=True))


def kron_sigma(rng, dims=(2, 2), d=(1.0, 2.0, 0.5, 3.0)):
    factors = [random_corr(rng, k) for k in dims]
    theta = kalg.kron_all(factors)
    sd = np.sqrt(np.asarray(d))
    return factors_to_theta(dims, factors), theta * np.outer(sd, sd), np.asarray(d)


class TestDistributions:
    @pytest.mark.parametrize("k", [1, 2, 5, 13, 29, 127])
    def test_chi2_matches_mpmath(self, k):
        for x in [0.01, 0.5, 1.0, k * 0.5, float(k), 2.0 * k, 3.0 * k + 10]:
            assert abs(chi2_sf(x, k) - mp_chi2_sf(x, k)) < 1e-10

    def test_chi2_at_zero(self):
        for k in (1, 5, 40):
            assert chi2_sf(0.0, k) == 1.0

    def test_chi2_near_normal_for_large_df(self):
        p = chi2_sf(200.0, 200)
        assert abs(p - mp_chi2_sf(200.0, 200)) < 1e-10
        assert normal_sf(0.0) == 0.5
        assert abs(p - 0.5) < 0.02

    def test_normal_reference(self):
        assert normal_sf(1.959964) == pytest.approx(0.025, abs=1e-6)
        assert normal_sf(-1.0) == pytest.approx(1 - normal_sf(1.0), abs=1e-15)
        assert abs(normal_sf(1.0) - float(mpmath.ncdf(-1))) < 1e-14

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 60), st.floats(0.0, 200.0), st.floats(0.01, 20.0))
    def test_chi2_strictly_decreasing(self, k, x, dx):
        hi = chi2_sf(x + dx, k)
        lo = chi2_sf(x, k)
        assert 0.0 <= hi <= lo <= 1.0
        # strict wherever the tail is representable away from 0 and 1
        if 1e-300 < hi and lo < 1.0 - 1e-15:
            assert hi < lo

    def test_normal_gap_shrinks_along_dims_ladder(self):
        gaps = []
        for dims in [(2, 2), (2, 2, 2), (2, 2, 2, 2)]:
            df = build_design(dims).df
            gaps.append(abs(chi2_sf(df, df) - normal_sf(0.0)))
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[1] <= gaps[0] / 2 and gaps[2] <= gaps[1] / 2


class TestSMatrix:
    def test_two_by_two_hand_case(self, rng):
        theta = random_corr(rng, 2)
        d = np.array([2.0, 3.0])
        sigma = theta * np.sqrt(np.outer(d, d))
        mom = MomentSet.population(sigma, T=10, d_known=d)
        s = s_matrix(mom, Regime.KNOWN_D, v_kind="gaussian")
        assert s.shape == (3, 3)
        dup = np.array([[1, 0, 0], [0, 1, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
        dplus = np.linalg.solve(dup.T @ dup, dup.T)
        h = quad_h(theta)
        expected = 2 * dplus @ h @ np.kron(theta, theta) @ h @ dplus.T
        np.testing.assert_allclose(s, expected, atol=1e-10)

    def test_identity_estimated_d_assembly(self):
        # Theta = I, D = I, Gaussian V: H = I and P removes the diagonal
        n = 3
        mom = MomentSet.population(np.eye(n), T=10)
        s = s_matrix(mom, Regime.ESTIMATED_D, v_kind="gaussian")
        dup = kalg.duplication(n)
        dplus = np.linalg.pinv(dup)
        md_sel = np.diag(kalg.vec(np.eye(n)))
        p = np.eye(n * n) - dup @ dplus @ md_sel
        v = 2 * dup @ dplus
        expected = dplus @ p @ v @ p.T @ dplus.T
        np.testing.assert_allclose(s, expected, atol=1e-10)
        # only the off-diagonal correlations fluctuate
        assert np.linalg.matrix_rank(s, tol=1e-10) == n * (n - 1) // 2

    def test_psd_on_samples(self):
        for seed in range(5):
            spec = DgpSpec((2, 2), kronecker_theta((2, 2), [0.4, -0.3]), 1.0, 200, seed)
            mom = compute_moments(simulate_panel(spec)).with_known_d(spec.d0)
            for regime in Regime:
                s = s_matrix(mom, regime)
                assert np.array_equal(s, s.T)
                assert np.linalg.eigvalsh(s)[0] >= -1e-10 * np.abs(s).max()


class TestOveridTest:
    def test_population_idempotence(self, rng):
        th0, sigma, d = kron_sigma(rng)
        mom = MomentSet.population(sigma, T=100, d_known=d)
        e = build_design((2, 2)).E
        s = s_matrix(mom, Regime.KNOWN_D, v_kind="gaussian")
        vals, vecs = np.linalg.eigh(s)
        s_inv_half = (vecs / np.sqrt(vals)) @ vecs.T
        x = s_inv_half @ e
        m = np.eye(10) - x @ np.linalg.solve(x.T @ x, x.T)
        np.testing.assert_allclose(m @ m, m, atol=1e-8)
        assert np.trace(m) == pytest.approx(5.0, abs=1e-8)

    @pytest.mark.parametrize("regime", list(Regime))
    def test_exact_kronecker_gives_zero(self, rng, regime):
        th0, sigma, d = kron_sigma(rng)
        mom = MomentSet.population(sigma, T=500, d_known=d)
        res = overid_test(None, mom, (2, 2), regime, v_kind="gaussian")
        assert res.statistic < 1e-16
        assert res.p_chi2 == 1.0
        np.testing.assert_allclose(res.theta, th0, atol=1e-9)

    def test_degrees_of_freedom(self):
        spec = DgpSpec((2, 2), kronecker_theta((2, 2), [0.5, 0.3]), [1.0, 2.0, 3.0, 4.0], 400, 1)
        mom = compute_moments(simulate_panel(spec)).with_known_d(spec.d0)
        known = overid_test(None, mom, (2, 2), Regime.KNOWN_D)
        assert known.df == 10 - 5 and known.clipped == 0
        est = overid_test(None, mom, (2, 2), Regime.ESTIMATED_D)
        # the four diagonal moments carry no sampling variation
        assert est.clipped == 4 and est.df == 4
        for res in (known, est):
            assert 0.0 <= res.p_chi2 <= 1.0 and 0.0 <= res.p_normal <= 1.0
            assert res.z_diag == pytest.approx((res.statistic - res.df) / np.sqrt(2 * res.df))
            assert res.p_normal_two_sided == pytest.approx(2 * normal_sf(abs(res.z_diag)))

    def test_uses_optimal_weight_regardless_of_input(self):
        spec = DgpSpec((2, 2), kronecker_theta((2, 2), [0.5, 0.3]), 1.0, 300, 2)
        mom = compute_moments(simulate_panel(spec)).with_known_d(spec.d0)
        md = md_estimate(mom, (2, 2), WeightSpec.identity(), Regime.KNOWN_D)
        a = overid_test(md, mom)
        b = overid_test(None, mom, (2, 2), Regime.KNOWN_D)
        assert a == b
        opt = md_estimate(mom, (2, 2), WeightSpec.optimal(), Regime.KNOWN_D)
        np.testing.assert_allclose(a.theta, opt.theta, atol=1e-12)

    def test_not_overidentified(self):
        mom = compute_moments(simulate_panel(DgpSpec((4,), np.zeros(10), 1.0, 100, 0)))
        with pytest.raises(NotOveridentified):
            overid_test(None, mom, (4,))


class TestWald:
    def sample_md(self, seed=4):
        spec = DgpSpec((2, 2), kronecker_theta((2, 2), [0.5, 0.3]), 1.0, 500, seed)
        return md_estimate(compute_moments(simulate_panel(spec)), (2, 2)), spec

    def test_single_contrast_is_squared_t(self):
        md, spec = self.sample_md()
        c = np.array([1.0, 0.0, 0.5, -1.0, 0.0])
        t = (c @ md.theta - c @ spec.theta0) / md.contrast_se(c)
        res = wald_joint(md, c, c @ spec.theta0)
        assert res.statistic == pytest.approx(t ** 2, rel=1e-12)
        assert res.df == 1

    def test_identity_on_exact_data(self, rng):
        th0, sigma, _ = kron_sigma(rng)
        md = md_estimate(MomentSet.population(sigma, T=100), (2, 2))
        assert wald_joint(md, np.eye(5), th0).statistic < 1e-16

    def test_rank_deficient(self):
        md, _ = self.sample_md()
        a = np.zeros((5, 2))
        a[0, 0] = a[0, 1] = 1.0
        with pytest.raises(RankDeficientContrast):
            wald_joint(md, a)
        with pytest.raises(RankDeficientContrast):
            wald_joint(md, np.ones(4))

    def test_interval_and_report(self):
        md, _ = self.sample_md()
        c = np.eye(5)[1]
        point, se, lo, hi = contrast_interval(md, c)
        assert point == md.theta[1] and se == pytest.approx(md.se[1])
        assert (hi - point) == pytest.approx(1.959964 * se, rel=1e-6)
        rows = EstimateReport.build(md).rows()
        assert [r["parameter"] for r in rows] == list(md.design.labels())
        assert rows[1]["md_lo"] == pytest.approx(lo)


@pytest.mark.slow
def test_wald_size_two_contrasts():
    th0 = kronecker_theta((2, 2), [0.5, 0.3])
    spec = DgpSpec((2, 2), th0, 1.0, 2000, seed=77)
    a = np.eye(5)[:, [0, 3]]
    rejections = 0
    for r in range(1000):
        md = md_estimate(compute_moments(simulate_panel(spec, r)), (2, 2))
        rejections += wald_joint(md, a, a.T @ th0).p_value < 0.05
    assert 0.03 <= rejections / 1000 <= 0.07
