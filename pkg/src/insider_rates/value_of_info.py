"""Value of insider information: estimators, divergence study and bounds.

The value of information ``H`` is ``V^H - V^F``, the gap between optimal
expected log-wealths. Because the cross term between the Merton weight and
the information drift has zero mean,

    V^H - V^F = rho^2 / (2 vol^2) * int_0^t_max E[corr_t^2] dt.

For exact terminal information ``E[corr_t^2]`` grows like ``1/(T - t)``, so
the value is only finite once the horizon is truncated at ``T - eps`` and
grows like ``log(1/eps)``. For indicator information it is finite and the
certificate below checks it against an explicit upper bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import BoundViolation, DomainError, NonConvergence
from .portfolio import (
    MarketModel,
    QuadratureConfig,
    RateModel,
    Strategy,
    _gaussian_expectation,
    _rate_marginal,
    _terminal_given,
    _thresholds,
    analytic_log_utility,
    informed_weight,
    rate_vol,
    simulate_strategies,
    simulate_wealth,
    strategy_grid,
)
from .stochastic_core import INV_SQRT_2PI, RngStream, gauss_hermite, mills_ratio_inverse, normal_pdf, quadrature
from .vasicek import (
    HalfLine,
    InfoKind,
    Interval,
    NoInfo,
    OUModel,
    Terminal,
    drift_correction,
    indicator_probability,
    interval_hazard,
    interval_outer_hazard,
)

__all__ = [
    "VoIReport",
    "DivergenceStudy",
    "FinitenessCertificate",
    "value_of_information",
    "variance_divergence",
    "psi_function",
    "psi_integral",
    "appendix_I",
    "appendix_I_integrand",
    "appendix_I_bar",
    "interval_bound_integrand",
    "expected_squared_correction",
    "finiteness_certificate",
]


def _label(info: InfoKind) -> str:
    return type(info).__name__


# ---------------------------------------------------------------------------
# Value of information
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VoIReport:
    v_f: float
    v_h: float
    delta_v: float
    mc_stderr: float
    epsilon: float | None
    n_paths: int
    method: str
    info: str = ""
    t_max: float = math.nan
    paired: bool = True

    def __post_init__(self) -> None:
        if not self.mc_stderr >= 0:
            raise DomainError("mc_stderr must be non-negative")
        if self.method not in ("analytic", "monte-carlo"):
            raise DomainError(f"unknown method {self.method!r}")


def _horizon(rate_model: RateModel, info: InfoKind, epsilon: float | None) -> float:
    T = rate_model.T
    if epsilon is None:
        if isinstance(info, Terminal):
            raise DomainError("exact terminal information has infinite value; supply a truncation epsilon")
        return T
    if not 0 < epsilon < T:
        raise DomainError(f"epsilon must lie in (0, T), got {epsilon}")
    return T - epsilon


def value_of_information(
    market: MarketModel,
    rate_model: RateModel,
    info: InfoKind,
    *,
    method: str = "analytic",
    epsilon: float | None = None,
    n_paths: int = 100_000,
    n_steps: int = 2000,
    stream: RngStream | None = None,
    paired: bool = True,
    threads: int | None = None,
    quad: QuadratureConfig | None = None,
) -> VoIReport:
    """Optimal value with and without ``info`` and their difference.

    ``method="analytic"`` integrates both values by quadrature.
    ``method="monte-carlo"`` simulates; with ``paired=True`` both strategies
    trade on the same paths (drawn under ``info``), otherwise the uninformed
    value uses an independent stream.
    """
    t_max = _horizon(rate_model, info, epsilon)
    s_f = Strategy.optimal(NoInfo())
    s_h = Strategy.optimal(info)
    if method == "analytic":
        v_f = analytic_log_utility(market, rate_model, s_f, t_max, quad)
        v_h = v_f if isinstance(info, NoInfo) else analytic_log_utility(market, rate_model, s_h, t_max, quad)
        return VoIReport(v_f, v_h, v_h - v_f, 0.0, epsilon, 0, "analytic", _label(info), t_max, paired)
    if method != "monte-carlo":
        raise DomainError(f"unknown method {method!r}")

    stream = stream or RngStream(0)
    grid = strategy_grid(rate_model, info, t_max, n_steps)
    if isinstance(info, NoInfo):
        b = simulate_wealth(market, rate_model, s_f, grid, n_paths, stream, threads=threads)
        return VoIReport(b.mean_log_growth, b.mean_log_growth, 0.0, 0.0, epsilon, n_paths,
                         "monte-carlo", _label(info), t_max, paired)
    if paired:
        b_f, b_h = simulate_strategies(market, rate_model, [s_f, s_h], grid, n_paths, stream,
                                       law=info, threads=threads)
        diff = b_h.log_growth - b_f.log_growth
        stderr = float(np.std(diff, ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else math.nan
    else:
        grid_f = strategy_grid(rate_model, NoInfo(), t_max, n_steps)
        b_f = simulate_wealth(market, rate_model, s_f, grid_f, n_paths, stream.child(stream.stream_id + 1),
                              threads=threads)
        b_h = simulate_wealth(market, rate_model, s_h, grid, n_paths, stream, threads=threads)
        stderr = math.hypot(b_f.stderr_log_growth, b_h.stderr_log_growth)
    v_f, v_h = b_f.mean_log_growth, b_h.mean_log_growth
    return VoIReport(v_f, v_h, v_h - v_f, stderr, epsilon, n_paths, "monte-carlo", _label(info), t_max, paired)


# ---------------------------------------------------------------------------
# Exact terminal information: divergence as eps -> 0
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DivergenceStudy:
    """Truncated values ``Delta V(eps)`` and their fit against ``log(1/eps)``.

    ``variance_integrals`` holds ``int_0^{T-eps} Var[pi_t] dt`` for the
    informed weight; ``terminal_means`` holds ``E[pi_{T-eps}]``, whose
    finite limit is checked by ``limit_gap`` (relative change between the two
    smallest ``eps``).
    """

    epsilons: np.ndarray
    values: np.ndarray
    fitted_slope: float
    intercept: float
    fit_r2: float
    variance_integrals: np.ndarray = field(repr=False)
    terminal_means: np.ndarray = field(repr=False)
    limit_gap: float = math.nan
    degenerate: bool = False

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.values)):
            raise NonConvergence("divergence study produced non-finite values")


def _fit_log(eps: np.ndarray, values: np.ndarray) -> tuple[float, float, float]:
    x = np.log(1.0 / eps)
    xm, ym = x.mean(), values.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (values - ym)) / sxx)
    intercept = float(ym - slope * xm)
    ss_tot = float(np.sum((values - ym) ** 2))
    ss_res = float(np.sum((values - intercept - slope * x) ** 2))
    scale = max(float(np.max(np.abs(values))), 1.0)
    if ss_tot <= (1e-13 * scale) ** 2 * len(values):
        return slope, intercept, math.nan
    return slope, intercept, 1.0 - ss_res / ss_tot


def _weight_moments(market, rate_model, t: float, order: int) -> tuple[float, float]:
    """Mean and variance of the exact-information weight at ``t``."""
    x, w = gauss_hermite(order)
    marg = _rate_marginal(rate_model, t)
    y = float(marg.mean) + float(marg.std) * x
    mean_T, sd_T = _terminal_given(rate_model, t, y)
    y_T = np.asarray(mean_T)[:, None] + sd_T * x[None, :]
    yy = np.broadcast_to(y[:, None], y_T.shape)
    pi = np.asarray(informed_weight(market, rate_model, Terminal(y_T.ravel()), t, yy.ravel())).reshape(y_T.shape)
    m1 = float(w @ pi @ w)
    m2 = float(w @ (pi * pi) @ w)
    return m1, max(m2 - m1 * m1, 0.0)


def variance_divergence(
    market: MarketModel,
    rate_model: RateModel,
    epsilons: Sequence[float],
    config: QuadratureConfig | None = None,
) -> DivergenceStudy:
    """Value of exact terminal information truncated at ``T - eps``.

    Both the value gap and the integrated variance of the informed weight are
    computed by quadrature over the joint Gaussian law of ``(Y_t, Y_T)``.
    """
    cfg = config or QuadratureConfig()
    eps = np.asarray(list(epsilons), dtype=float)
    T = rate_model.T
    if eps.size < 2:
        raise DomainError("need at least two truncation levels")
    if not (np.all(eps > 0) and np.all(eps < T)):
        raise DomainError("every epsilon must lie in (0, T)")
    if not np.all(np.diff(eps) < 0):
        raise DomainError("epsilons must be strictly decreasing")

    s_f = Strategy.optimal(NoInfo())
    s_g = Strategy.optimal(Terminal())
    order = cfg.gh_order * cfg.refinement
    values, var_ints, means = [], [], []
    for e in eps:
        t_max = T - float(e)
        v_g = analytic_log_utility(market, rate_model, s_g, t_max, cfg)
        v_f = analytic_log_utility(market, rate_model, s_f, t_max, cfg)
        values.append(v_g - v_f)

        def var_t(ts):
            return np.array([_weight_moments(market, rate_model, float(t), order)[1] for t in ts])
        breaks, tau = [], 2.0 * float(e)
        while tau < T:
            breaks.append(T - tau)
            tau *= 2.0
        var_ints.append(quadrature(var_t, 0.0, t_max, cfg.refinement, tol=cfg.tol, rtol=cfg.rtol,
                                   breakpoints=breaks, max_intervals=20000))
        means.append(_weight_moments(market, rate_model, t_max, order)[0])

    values = np.array(values)
    slope, intercept, r2 = _fit_log(eps, values)
    m_prev, m_last = means[-2], means[-1]
    gap = abs(m_last - m_prev) / max(abs(m_last), 1e-12)
    return DivergenceStudy(eps, values, slope, intercept, r2, np.array(var_ints), np.array(means),
                           gap, eps.size == 2)


# ---------------------------------------------------------------------------
# Bounds for indicator information
# ---------------------------------------------------------------------------


def _require_ou(rate_model) -> OUModel:
    if not isinstance(rate_model, OUModel):
        raise DomainError("this bound is stated for the Vasicek model")
    return rate_model


def psi_function(model: OUModel, t):
    """``sigma^4 e^{-k (T-t)} / (sigma(t) sigma(T-t))``, the scale of ``E[corr_t^2]``."""
    model = _require_ou(model)
    t = np.asarray(t, dtype=float)
    tau = model.T - t
    with np.errstate(divide="ignore"):
        out = model.sigma ** 4 * np.exp(-model.k * tau) / np.sqrt(model.var(t) * model.var(tau))
    return out if out.ndim else float(out)


def psi_integral(model: OUModel, refinement: int = 1, *, tol: float = 1e-13) -> float:
    """``int_0^T psi(t) dt``; both endpoints carry an integrable ``1/sqrt`` singularity."""
    model = _require_ou(model)
    return quadrature(lambda t: psi_function(model, t), 0.0, model.T, refinement, tol=tol, rtol=1e-13)


def appendix_I_integrand(z):
    """``phi(z)^2 (1/Phi(z) + 1/(1 - Phi(z)))``, written with Mills ratios."""
    z = np.asarray(z, dtype=float)
    out = normal_pdf(z) * (mills_ratio_inverse(z) + mills_ratio_inverse(-z))
    return out if np.ndim(out) else float(out)


@lru_cache(maxsize=None)
def appendix_I(refinement: int = 1, *, symmetric: bool = True, tol: float = 1e-15) -> float:
    """Universal constant ``I = int phi^2 (1/Phi + 1/(1 - Phi)) dz``.

    The integrand is even; ``symmetric=True`` integrates the half line and
    doubles.
    """
    if symmetric:
        return 2.0 * quadrature(appendix_I_integrand, 0.0, math.inf, refinement, tol=tol, rtol=1e-14)
    return quadrature(appendix_I_integrand, -math.inf, math.inf, refinement, tol=tol, rtol=1e-14,
                      breakpoints=(0.0,))


def interval_bound_integrand(u, width: float):
    """``(phi(u) - phi(u+w))^2 / (P_in P_out)`` for the interval ``(u, u + w)``."""
    u = np.asarray(u, dtype=float)
    out = -interval_hazard(u, u + width) * interval_outer_hazard(u, u + width)
    return out if np.ndim(out) else float(out)


def _interval_width(model: OUModel, t: float, c1: float, c2: float) -> float:
    tau = model.T - t
    if not tau > 0:
        raise DomainError("t must be before T")
    if not c1 < c2:
        raise DomainError(f"interval needs c1 < c2, got ({c1}, {c2})")
    return (c2 - c1) / math.sqrt(model.var(tau))


def appendix_I_bar(model: OUModel, t: float, c1: float, c2: float, refinement: int = 1,
                   *, tol: float = 1e-14) -> float:
    """Interval analogue of :func:`appendix_I` at time ``t``.

    Depends on ``(t, c1, c2)`` only through the standardised width
    ``(c2 - c1) / sigma(T - t)``; grows to ``2 I`` as the width diverges.
    """
    model = _require_ou(model)
    w = _interval_width(model, t, c1, c2)
    return quadrature(lambda u: interval_bound_integrand(u, w), -math.inf, math.inf, refinement,
                      tol=tol, rtol=1e-13, breakpoints=sorted({-w, -0.5 * w, 0.0}), max_intervals=20000)


def _interval_bound_integral(model: OUModel, c1: float, c2: float, refinement: int) -> float:
    def f(ts):
        return np.array([psi_function(model, t) * appendix_I_bar(model, float(t), c1, c2, refinement)
                         for t in ts])
    return quadrature(f, 0.0, model.T, refinement, tol=1e-12, rtol=1e-11)


# ---------------------------------------------------------------------------
# Finiteness certificate
# ---------------------------------------------------------------------------


CorrectionFn = Callable[[float, np.ndarray, int], np.ndarray]


def _default_correction(model: OUModel, info) -> CorrectionFn:
    def corr(t, y, a):
        return drift_correction(model, replace(info, a=a), t, y)
    return corr


def _branch_moments(model: OUModel, info, correction: CorrectionFn, t: float, cfg: QuadratureConfig):
    """``(E[corr^2], E[|E[corr | Y_t]|], E[|corr|])`` at time ``t``."""
    marg = model.marginal(t)
    m, sd = float(marg.mean), float(marg.std)
    tau = model.T - t
    width = math.sqrt(model.var(tau)) * math.exp(model.k * tau)

    def parts(y):
        p1 = indicator_probability(model, info, t, y)
        f1 = correction(t, y, 1)
        f0 = correction(t, y, 0)
        return p1, f1, f0

    def square(y):
        p1, f1, f0 = parts(y)
        return p1 * f1 * f1 + (1.0 - p1) * f0 * f0

    def tower(y):
        p1, f1, f0 = parts(y)
        return np.abs(p1 * f1 + (1.0 - p1) * f0)

    def size(y):
        p1, f1, f0 = parts(y)
        return p1 * np.abs(f1) + (1.0 - p1) * np.abs(f0)

    centres = _thresholds(model, info, t)
    if sd == 0.0:
        y = np.array([m])
        return float(square(y)[0]), float(tower(y)[0]), float(size(y)[0])
    return tuple(_gaussian_expectation(g, m, sd, centres, cfg, width=width) for g in (square, tower, size))


def expected_squared_correction(rate_model: OUModel, info, t: float, *, correction: CorrectionFn | None = None,
                                config: QuadratureConfig | None = None) -> float:
    """``E[corr(Y_t, A)^2]`` over the law of ``Y_t`` and the indicator branches."""
    model = _require_ou(rate_model)
    corr = correction or _default_correction(model, info)
    return _branch_moments(model, info, corr, t, config or QuadratureConfig())[0]


@dataclass(frozen=True)
class FinitenessCertificate:
    """Direct integral of ``E[corr^2]`` against its explicit upper bound.

    ``refinement_values`` are the direct integral on successively doubled
    fixed panel counts, ``refinement_deltas`` their successive gaps.
    ``tower_residual`` is ``int E|E[corr | Y_t]| dt`` relative to the larger
    of ``int E|corr| dt`` and ``sqrt(T * bound)``; it vanishes for a correct
    correction.
    """

    info: str
    direct_integral: float
    bound: float
    refinement_values: tuple[float, ...]
    refinement_deltas: tuple[float, ...]
    panels: tuple[int, ...]
    tower_residual: float
    i_constant: float
    delta_v: float
    delta_v_bound: float
    tolerance: float
    converged: bool
    reasons: tuple[str, ...] = ()

    @property
    def margin(self) -> float:
        return self.bound - self.direct_integral

    @property
    def passed(self) -> bool:
        return not self.reasons

    @property
    def verdict(self) -> str:
        return "PASS" if self.passed else "FAIL"


def _gaps_shrink(deltas: Sequence[float], value: float, floor: float) -> bool:
    """Each gap is at least 4x smaller than the previous, or already at the floor."""
    tiny = floor * max(abs(value), 1e-300)
    for prev, nxt in zip(deltas[:-1], deltas[1:]):
        if nxt > tiny and nxt * 4.0 > prev:
            return False
    return True


def finiteness_certificate(
    market: MarketModel,
    rate_model: OUModel,
    info: HalfLine | Interval,
    *,
    levels: int = 4,
    base_panels: int = 2,
    tolerance: float = 1e-9,
    tower_tolerance: float = 1e-9,
    floor: float = 1e-11,
    correction: CorrectionFn | None = None,
    config: QuadratureConfig | None = None,
    raise_on_failure: bool = True,
) -> FinitenessCertificate:
    """Certify that indicator information has finite value.

    The direct integral ``int_0^T E[corr_t^2] dt`` is evaluated with a fixed
    Gauss-Kronrod rule on ``base_panels * 2^j`` panels for ``j < levels``
    (inner expectations adaptive). The bound is
    ``psi-integral * I / sqrt(2 pi)`` for a half-line and
    ``int psi(t) Ibar(t) dt / sqrt(2 pi)`` for an interval.

    Raises :class:`BoundViolation` (carrying the certificate) when the
    direct value exceeds the bound or the tower identity fails, unless
    ``raise_on_failure`` is false.
    """
    model = _require_ou(rate_model)
    if not isinstance(info, (HalfLine, Interval)):
        raise DomainError("a finiteness certificate needs HalfLine or Interval information")
    if info.a is not None:
        info = replace(info, a=None)
    if levels < 3:
        raise DomainError("need at least three refinement levels to judge convergence")
    cfg = config or QuadratureConfig(inner_tol=1e-15)
    corr = correction or _default_correction(model, info)

    cache: dict[float, tuple[float, float, float]] = {}

    def moments(t: float):
        if t not in cache:
            cache[t] = _branch_moments(model, info, corr, t, cfg)
        return cache[t]

    def column(idx):
        def f(ts):
            return np.array([moments(float(t))[idx] for t in ts])
        return f

    panels = tuple(base_panels * 2 ** j for j in range(levels))
    values = tuple(quadrature(column(0), 0.0, model.T, n, adaptive=False) for n in panels)
    deltas = tuple(abs(b - a) for a, b in zip(values[:-1], values[1:]))
    direct = values[-1]

    i_const = appendix_I()
    if isinstance(info, HalfLine):
        bound = INV_SQRT_2PI * psi_integral(model) * i_const
    else:
        bound = INV_SQRT_2PI * _interval_bound_integral(model, info.c1, info.c2, 1)
    # gaps far below the bound are rounding noise once the value itself is negligible
    converged = _gaps_shrink(deltas, max(abs(direct), bound), floor)

    finest = panels[-1]
    tower = quadrature(column(1), 0.0, model.T, finest, adaptive=False)
    size = quadrature(column(2), 0.0, model.T, finest, adaptive=False)
    # Cauchy-Schwarz: int E|corr| <= sqrt(T * bound), the largest size the correction may have
    scale = max(size, math.sqrt(model.T * bound))
    tower_rel = tower / scale if scale > 0 else 0.0

    gain = market.rho ** 2 / (2.0 * model.sigma ** 2)
    reasons = []
    if direct > bound * (1.0 + tolerance):
        reasons.append(f"direct integral {direct:.12g} exceeds bound {bound:.12g}")
    if tower_rel > tower_tolerance:
        reasons.append(f"tower identity residual {tower_rel:.3g} exceeds {tower_tolerance:g}")
    if not converged:
        reasons.append("refinement gaps do not shrink by 4x per doubling")
    cert = FinitenessCertificate(
        _label(info), direct, bound, values, deltas, panels, tower_rel, i_const,
        gain * direct, gain * bound, tolerance, converged, tuple(reasons),
    )
    if raise_on_failure and reasons:
        raise BoundViolation("; ".join(reasons), certificate=cert)
    return cert
