import math

import numpy as np
import pytest
from scipy import integrate

from gsclink import channel as ch
from gsclink.rng import stream

TABLE = dict(m=2, b=0.063, omega=0.0005)


def table_budget(d_m=600e3):
    return ch.LinkBudget(
        p_t=1.0, p_s=30.0,
        g_t=10**0.3, g_s=1e5, g_r=1e5,
        lambda_c=0.028, alpha=2.0,
        d_ts=d_m, d_sr=d_m,
        sigma2_s=1e-3 * 10**-9.8, sigma2_r=1e-3 * 10**-9.8,
    )


class TestFadingParams:
    def test_derived_coefficients(self):
        fp = ch.FadingParams(**TABLE)
        two_b = 2 * 0.063
        assert fp.beta == pytest.approx(1 / two_b)
        assert fp.delta == pytest.approx(0.0005 / (two_b * (two_b * 2 + 0.0005)))
        assert fp.lam == pytest.approx(((two_b * 2) / (two_b * 2 + 0.0005)) ** 2 / two_b)
        assert fp.zeta[0] == 1.0

    @pytest.mark.parametrize("bad", [dict(m=0, b=0.1, omega=0.1),
                                     dict(m=1.5, b=0.1, omega=0.1),
                                     dict(m=2, b=0.0, omega=0.1),
                                     dict(m=2, b=-1.0, omega=0.1),
                                     dict(m=2, b=0.1, omega=-0.1)])
    def test_invalid_params_rejected(self, bad):
        with pytest.raises(ValueError):
            ch.FadingParams(**bad)


class TestPdfGain:
    def test_normalizes_to_one(self):
        fp = ch.FadingParams(**TABLE)
        total, _ = integrate.quad(lambda z: ch.pdf_gain(fp, 1.0, z), 0, np.inf, limit=200)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_mean_matches_physical_model(self):
        # quadrature of the series density against E[|h|^2] = 2b + omega
        fp = ch.FadingParams(**TABLE)
        mean, _ = integrate.quad(lambda z: z * ch.pdf_gain(fp, 1.0, z), 0, np.inf, limit=200)
        assert mean == pytest.approx(2 * 0.063 + 0.0005, abs=1e-4)

    def test_value_at_zero(self):
        fp = ch.FadingParams(**TABLE)
        for eta in (1.0, 2.5):
            assert ch.pdf_gain(fp, eta, 0.0) == pytest.approx(fp.lam / eta)

    @pytest.mark.parametrize("m", [1, 2, 3, 5])
    @pytest.mark.parametrize("b", [0.01, 0.2, 1.0])
    @pytest.mark.parametrize("omega", [0.0, 0.3, 1.0])
    def test_normalization_sweep(self, m, b, omega):
        fp = ch.FadingParams(m=m, b=b, omega=omega)
        total, _ = integrate.quad(lambda z: ch.pdf_gain(fp, 1.0, z), 0, np.inf, limit=300)
        assert total == pytest.approx(1.0, abs=1e-6)

    def test_cdf_matches_quadrature(self):
        fp = ch.FadingParams(**TABLE)
        for z in (0.05, 0.1265, 0.4):
            by_quad, _ = integrate.quad(lambda t: ch.pdf_gain(fp, 1.0, t), 0, z)
            assert ch.cdf_gain(fp, 1.0, z) == pytest.approx(by_quad, abs=1e-9)


class TestSampleGain:
    def test_zero_los_is_exponential(self):
        # omega = 0 degenerates to eta*|Z|^2, exponential with mean 2*b*eta
        fp = ch.FadingParams(m=2, b=0.063, omega=0.0)
        g = ch.sample_gain(fp, 2.0, rng_seed=3, n=200_000)
        assert g.mean() == pytest.approx(2 * 0.063 * 2.0, rel=0.01)
        # exponential: var = mean^2
        assert g.var() == pytest.approx(g.mean() ** 2, rel=0.05)

    def test_ks_distance_against_series_cdf(self):
        fp = ch.FadingParams(**TABLE)
        n = 100_000
        g = np.sort(ch.sample_gain(fp, 1.0, rng_seed=11, n=n))
        emp_hi = np.arange(1, n + 1) / n
        emp_lo = np.arange(0, n) / n
        model = ch.cdf_gain(fp, 1.0, g)
        ks = max(np.abs(emp_hi - model).max(), np.abs(emp_lo - model).max())
        assert ks < 0.01

    def test_sample_mean_matches_quadrature(self):
        fp = ch.FadingParams(**TABLE)
        eta = 3.0
        g = ch.sample_gain(fp, eta, rng_seed=5, n=400_000)
        assert g.mean() == pytest.approx(eta * 0.1265, rel=0.01)

    def test_deterministic_per_seed(self):
        fp = ch.FadingParams(**TABLE)
        a = ch.sample_gain(fp, 1.0, rng_seed=9, n=100)
        b = ch.sample_gain(fp, 1.0, rng_seed=9, n=100)
        assert np.array_equal(a, b)


class TestAmplificationRatio:
    def test_no_received_power(self):
        budget = table_budget()
        assert ch.amplification_ratio(budget, 0.0) == pytest.approx(
            math.sqrt(budget.p_s / budget.sigma2_s))

    def test_direct_substitution(self):
        budget = table_budget()
        fp = ch.FadingParams(**TABLE)
        h_bar = ch.mean_gain(fp, budget.eta_t)
        expected = math.sqrt(
            budget.p_s / (h_bar * budget.d_ts**-2.0 * budget.sigma2_s + budget.sigma2_s))
        assert ch.amplification_ratio(budget, h_bar) == pytest.approx(expected, rel=1e-12)

    def test_scaling_with_satellite_power(self):
        budget = table_budget()
        doubled = ch.LinkBudget(budget.p_t, 2 * budget.p_s, budget.g_t, budget.g_s,
                                budget.g_r, budget.lambda_c, budget.alpha,
                                budget.d_ts, budget.d_sr,
                                budget.sigma2_s, budget.sigma2_r)
        assert ch.amplification_ratio(doubled, 0.5) == pytest.approx(
            math.sqrt(2) * ch.amplification_ratio(budget, 0.5))

    def test_negative_mean_rejected(self):
        with pytest.raises(ValueError):
            ch.amplification_ratio(table_budget(), -1.0)


class TestEndToEndSnr:
    def test_zero_uplink_gain(self):
        assert ch.end_to_end_snr(table_budget(), 0.0, 0.5, psi=1e6) == 0.0

    def test_strong_downlink_limit(self):
        # huge H_sr: relay noise dominates, gamma -> d_ts^-alpha * H_ts
        budget = table_budget()
        h_ts = 7.9e11
        got = ch.end_to_end_snr(budget, h_ts, 1e36, psi=1.0)
        assert got == pytest.approx(budget.d_ts**-2.0 * h_ts, rel=1e-6)

    def test_high_precision_substitution(self):
        # independent evaluation with 50-digit arithmetic
        import mpmath
        mpmath.mp.dps = 50
        budget = table_budget()
        fp = ch.FadingParams(**TABLE)
        psi = ch.amplification_ratio(budget, ch.mean_gain(fp, budget.eta_t))
        h = 0.1265
        got = float(ch.end_to_end_snr(budget, h, h, psi))
        m = mpmath.mpf
        dts = m(budget.d_ts) ** m(-budget.alpha)
        dsr = m(budget.d_sr) ** m(-budget.alpha)
        fwd = dsr * m(h) * m(psi) ** 2 * m(budget.sigma2_s) * m(budget.sigma2_r) / m(budget.p_s)
        expected = (dts * m(h) * fwd) / (fwd + m(budget.sigma2_r))
        assert got == pytest.approx(float(expected), rel=1e-12)

    def test_monotone_in_both_gains(self):
        budget = table_budget()
        rng = stream(4, "mono")
        psi = 1e6
        for _ in range(200):
            h1, h2 = np.sort(rng.uniform(0, 1e12, 2))
            hs = rng.uniform(0, 1e18)
            assert ch.end_to_end_snr(budget, h1, hs, psi) <= ch.end_to_end_snr(budget, h2, hs, psi)
            g1, g2 = np.sort(rng.uniform(0, 1e18, 2))
            ht = rng.uniform(0, 1e12)
            assert ch.end_to_end_snr(budget, ht, g1, psi) <= ch.end_to_end_snr(budget, ht, g2, psi)


class TestSnrCdf:
    def test_degenerate_point_mass(self):
        # zero-fading-variance surrogate: large LOS power, vanishing scatter,
        # high shadowing order (the LOS fluctuation shrinks as 1/sqrt(m); the
        # series coefficients overflow beyond m of a few tens, so this is the
        # steepest step the closed form supports)
        fp = ch.FadingParams(m=25, b=1e-6, omega=1.0)
        table = ch.snr_cdf(table_budget(), fp, 2000, rng_seed=2)
        central = table[100:1900, 0]
        assert central[-1] - central[0] < 1.5  # dB: step-like
        assert table[-1, 1] == 1.0

    def test_distance_dominance(self):
        fp = ch.FadingParams(**TABLE)
        near = ch.snr_cdf(table_budget(400e3), fp, 4000, rng_seed=6)
        far = ch.snr_cdf(table_budget(1000e3), fp, 4000, rng_seed=6)
        # common random numbers: the far CDF lies entirely left of the near one
        assert (far[:, 0] <= near[:, 0]).all()

    def test_median_monotone_over_sweep(self):
        fp = ch.FadingParams(**TABLE)
        medians = []
        for d in (400e3, 600e3, 800e3, 1000e3):
            t = ch.snr_cdf(table_budget(d), fp, 2000, rng_seed=8)
            medians.append(t[1000, 0])
        assert all(b < a for a, b in zip(medians, medians[1:]))

    def test_sorted_and_deterministic(self):
        fp = ch.FadingParams(**TABLE)
        a = ch.snr_cdf(table_budget(), fp, 300, rng_seed=1)
        b = ch.snr_cdf(table_budget(), fp, 300, rng_seed=1)
        assert np.array_equal(a, b)
        assert (np.diff(a[:, 0]) >= 0).all()
        assert (np.diff(a[:, 1]) > 0).all()
