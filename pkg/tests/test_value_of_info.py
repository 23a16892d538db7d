import math

import mpmath as mp
import numpy as np
import pytest

from insider_rates.errors import BoundViolation, DomainError
from insider_rates.portfolio import MarketModel, QuadratureConfig
from insider_rates.stochastic_core import RngStream
from insider_rates.value_of_info import (
    VoIReport,
    appendix_I,
    appendix_I_bar,
    appendix_I_integrand,
    expected_squared_correction,
    finiteness_certificate,
    psi_function,
    psi_integral,
    value_of_information,
    variance_divergence,
)
from insider_rates.vasicek import HalfLine, Interval, NoInfo, OUModel, Terminal, indicator_probability

import oracles

OU = OUModel(k=1.0, mu=0.0, sigma=1.0, y0=0.0, T=1.0)
MARKET = MarketModel(eta=0.05, xi=0.3, rho=0.5)
FLAT = MarketModel(eta=0.05, xi=0.3, rho=0.0)
EPS = [1e-1, 1e-2, 1e-3, 1e-4]

# first verified run; agrees with rho^2 * ln 2 from the entropy oracle
HALFLINE_DELTA_V = 0.1732867951399919
I_CONSTANT = 1.8063945711372507


# -- reports -----------------------------------------------------------------------


def test_report_rejects_negative_stderr():
    with pytest.raises(DomainError):
        VoIReport(0.0, 0.0, 0.0, -1.0, None, 0, "analytic")


def test_noinfo_gap_is_exactly_zero():
    r = value_of_information(MARKET, OU, NoInfo())
    assert r.delta_v == 0.0 and r.v_h == r.v_f
    mc = value_of_information(MARKET, OU, NoInfo(), method="monte-carlo", n_paths=500, n_steps=20)
    assert mc.delta_v == 0.0


def test_terminal_requires_truncation():
    with pytest.raises(DomainError):
        value_of_information(MARKET, OU, Terminal())
    with pytest.raises(DomainError):
        value_of_information(MARKET, OU, Terminal(), epsilon=1.5)


def test_unknown_method_rejected():
    with pytest.raises(DomainError):
        value_of_information(MARKET, OU, HalfLine(0.0), method="guess")


@pytest.mark.parametrize("info,eps", [(HalfLine(0.0), None), (Interval(-0.5, 0.5), None), (Terminal(), 0.05)])
def test_uncorrelated_insider_gains_nothing(info, eps):
    r = value_of_information(FLAT, OU, info, epsilon=eps)
    assert abs(r.delta_v) < 1e-9


# -- entropy oracle ----------------------------------------------------------------


def test_halfline_value_pinned_and_matches_entropy():
    r = value_of_information(MARKET, OU, HalfLine(0.0))
    assert r.delta_v == pytest.approx(HALFLINE_DELTA_V, rel=1e-9)
    gain = MARKET.rho ** 2 / (2 * OU.sigma ** 2)
    assert r.delta_v == pytest.approx(gain * float(oracles.indicator_square_integral(OU.sigma, 0.5)), rel=1e-8)


@pytest.mark.parametrize("eta,xi", [(0.0, 0.2), (0.1, 0.5)])
def test_halfline_value_independent_of_stock_parameters(eta, xi):
    r = value_of_information(MarketModel(eta, xi, 0.5), OU, HalfLine(0.0))
    assert r.delta_v == pytest.approx(HALFLINE_DELTA_V, rel=1e-8)


def test_interval_value_matches_entropy():
    info = Interval(-0.5, 0.5)
    p = float(indicator_probability(OU, info))
    ref = MARKET.rho ** 2 / 2 * float(oracles.indicator_square_integral(OU.sigma, p))
    assert value_of_information(MARKET, OU, info).delta_v == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("eps", [0.1, 0.01])
def test_truncated_terminal_value_matches_mutual_information(eps):
    r = value_of_information(MARKET, OU, Terminal(), epsilon=eps)
    assert r.t_max == pytest.approx(1.0 - eps)
    assert r.delta_v == pytest.approx(float(oracles.terminal_gap(1, 1, 1, 0.5, eps)), rel=1e-8)


def test_expected_squared_correction_vanishes_at_start():
    # Y_0 is deterministic, so the indicator branch carries the whole signal
    v = expected_squared_correction(OU, HalfLine(0.0), 0.5)
    assert v > 0
    assert expected_squared_correction(OU, HalfLine(0.0), 0.0) > 0


# -- Monte Carlo ---------------------------------------------------------------------


@pytest.mark.slow
def test_paired_monte_carlo_beats_independent_batches():
    kw = dict(method="monte-carlo", n_paths=6000, n_steps=200, stream=RngStream(21))
    paired = value_of_information(MARKET, OU, HalfLine(0.0), paired=True, **kw)
    indep = value_of_information(MARKET, OU, HalfLine(0.0), paired=False, **kw)
    assert paired.mc_stderr < indep.mc_stderr
    for r in (paired, indep):
        assert abs(r.delta_v - HALFLINE_DELTA_V) < 3 * r.mc_stderr + 0.01


def test_monte_carlo_reproducible_across_seeds():
    kw = dict(method="monte-carlo", n_paths=3000, n_steps=100)
    a = value_of_information(MARKET, OU, HalfLine(0.0), stream=RngStream(1), **kw)
    b = value_of_information(MARKET, OU, HalfLine(0.0), stream=RngStream(2), **kw)
    assert abs(a.delta_v - b.delta_v) < 3 * math.hypot(a.mc_stderr, b.mc_stderr)


# -- divergence of exact information ---------------------------------------------------


@pytest.fixture(scope="module")
def study():
    return variance_divergence(MARKET, OU, EPS)


def test_divergence_values_match_closed_form(study):
    ref = [float(oracles.terminal_gap(1, 1, 1, 0.5, e)) for e in EPS]
    assert np.allclose(study.values, ref, rtol=1e-8)


def test_divergence_fit(study):
    assert study.fitted_slope > 0 and study.fit_r2 > 0.99
    # log(sigma^2(T)/sigma^2(eps)) ~ log(1/eps) + const, so the slope tends to rho^2 / 2
    assert study.fitted_slope == pytest.approx(MARKET.rho ** 2 / 2, rel=0.02)
    assert np.all(np.diff(study.values) > 0)
    assert not study.degenerate


def test_divergence_weight_variance_grows_and_mean_settles(study):
    assert np.all(np.diff(study.variance_integrals) > 0)
    assert study.limit_gap < 1e-2


def test_divergence_uncorrelated_is_flat():
    s = variance_divergence(FLAT, OU, EPS)
    assert np.allclose(s.values, 0.0, atol=1e-9)
    assert abs(s.fitted_slope) < 1e-9
    assert math.isnan(s.fit_r2)


def test_two_point_divergence_is_flagged():
    s = variance_divergence(MARKET, OU, [1e-2, 1e-3])
    assert s.degenerate and s.fit_r2 == pytest.approx(1.0)


@pytest.mark.parametrize("eps", [[1e-2], [1e-3, 1e-2], [0.5, 2.0], [1e-2, -1e-3]])
def test_divergence_rejects_bad_epsilons(eps):
    with pytest.raises(DomainError):
        variance_divergence(MARKET, OU, eps)


# -- psi and the constants -------------------------------------------------------------


def test_psi_integral_matches_mpmath():
    assert psi_integral(OU) == pytest.approx(float(oracles.psi_integral(1, 1, 1)), rel=1e-10)
    # for k = sigma = T = 1 the integral is exactly pi
    assert psi_integral(OU) == pytest.approx(math.pi, rel=1e-10)


def test_psi_integral_stable_under_refinement():
    assert abs(psi_integral(OU, 2) - psi_integral(OU, 1)) < 1e-6


@pytest.mark.parametrize("k,T", [(1.0, 1.0), (0.4, 2.5)])
def test_psi_integral_scales_with_sigma_squared(k, T):
    base = psi_integral(OUModel(k, 0.0, 1.0, 0.0, T))
    doubled = psi_integral(OUModel(k, 0.0, 2.0, 0.0, T))
    assert doubled / base == pytest.approx(4.0, rel=1e-10)


def test_psi_endpoint_behaviour():
    t = np.array([1e-8, 1e-6, 1e-4])
    scaled = psi_function(OU, t) * np.sqrt(t)
    assert np.all(np.isfinite(scaled)) and np.ptp(scaled) < 1e-3


def test_I_constant():
    assert appendix_I() == pytest.approx(I_CONSTANT, rel=1e-13)
    assert appendix_I() == pytest.approx(float(oracles.universal_I()), rel=1e-12)
    assert abs(appendix_I(2) - appendix_I(1)) / appendix_I(1) < 1e-6
    assert appendix_I(symmetric=False) == pytest.approx(appendix_I(), rel=1e-9)


@pytest.mark.parametrize("z", [-30.0, -3.0, 0.5, 7.0, 30.0])
def test_I_integrand_matches_mpmath_and_is_even(z):
    mp.mp.dps = 40
    ref = mp.npdf(z) ** 2 * (1 / mp.ncdf(z) + 1 / mp.ncdf(-z))
    assert appendix_I_integrand(z) == pytest.approx(float(ref), rel=1e-12)
    assert appendix_I_integrand(-z) == appendix_I_integrand(z)


def test_I_bar_positive_and_tends_to_twice_I():
    narrow = appendix_I_bar(OU, 0.5, -0.2, 0.2)
    wide = appendix_I_bar(OU, 0.5, -40.0, 40.0)
    assert 0 < narrow < wide
    assert wide == pytest.approx(2 * I_CONSTANT, rel=1e-8)
    with pytest.raises(DomainError):
        appendix_I_bar(OU, 0.5, 0.2, -0.2)
    with pytest.raises(DomainError):
        appendix_I_bar(OU, 1.0, -0.2, 0.2)


# -- certificates ------------------------------------------------------------------------


@pytest.fixture(scope="module")
def halfline_cert():
    return finiteness_certificate(MARKET, OU, HalfLine(0.0))


def test_halfline_certificate(halfline_cert):
    c = halfline_cert
    assert c.passed and c.verdict == "PASS"
    assert c.direct_integral == pytest.approx(2 * math.log(2), rel=1e-9)
    assert c.bound == pytest.approx(psi_integral(OU) * I_CONSTANT / math.sqrt(2 * math.pi), rel=1e-12)
    assert c.margin > 0
    assert c.delta_v == pytest.approx(HALFLINE_DELTA_V, rel=1e-9)
    assert c.tower_residual < 1e-12


def test_certificate_far_halfline_collapses():
    c = finiteness_certificate(MARKET, OU, HalfLine(6.0 * math.sqrt(OU.var(1.0))))
    assert c.passed and c.direct_integral < 1e-6


def test_certificate_vacuous_interval_collapses():
    s = 10.0 * math.sqrt(OU.var(1.0))
    c = finiteness_certificate(MARKET, OU, Interval(-s, s))
    assert c.passed and c.direct_integral < 1e-12


def test_certificate_catches_wrong_sign():
    from insider_rates.vasicek import drift_correction

    def flipped(t, y, a):
        v = drift_correction(OU, HalfLine(0.0, a), t, y)
        return -v if a == 0 else v

    with pytest.raises(BoundViolation) as info:
        finiteness_certificate(MARKET, OU, HalfLine(0.0), correction=flipped)
    assert info.value.certificate.verdict == "FAIL"
    cert = finiteness_certificate(MARKET, OU, HalfLine(0.0), correction=flipped, raise_on_failure=False)
    assert cert.tower_residual > 0.1


def test_certificate_guards():
    with pytest.raises(DomainError):
        finiteness_certificate(MARKET, OU, Terminal())
    with pytest.raises(DomainError):
        finiteness_certificate(MARKET, OU, HalfLine(0.0), levels=2)
    with pytest.raises(DomainError):
        psi_integral(OU.to_affine())
