"""Vasicek (Ornstein-Uhlenbeck) rate and the insider drift corrections.

``dY = k (mu - Y) dt + sigma dB``. Given ``Y_t = y`` the terminal value is
``N(mu(T-t, y), sigma^2(T-t))`` with

    mu(t, y)   = mu + (y - mu) exp(-k t)
    sigma^2(t) = sigma^2 (1 - exp(-2 k t)) / (2 k).

An insider who knows something about ``Y_T`` sees an extra drift in ``Y``:

* exact value ``Y_T``           -> :func:`f_hat`
* ``A = 1{Y_T >= c}``           -> :func:`f_tilde`
* ``A = 1{c1 < Y_T < c2}``      -> :func:`f_bar`

Each correction is the conditional mean of :func:`f_hat` given the coarser
information, so it averages to zero against the branch probabilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np
from scipy import stats

from .affine_diffusion import AffineModel, CoefficientFn
from .errors import DomainError, SingularTime
from .stochastic_core import (
    GaussianLaw,
    RngStream,
    log_normal_sf,
    mills_ratio_inverse,
    normal_cdf,
    normal_pdf,
    normal_sf,
)

_TAIL = 8.0


@dataclass(frozen=True)
class OUModel:
    k: float
    mu: float
    sigma: float
    y0: float
    T: float

    def __post_init__(self) -> None:
        if not self.k > 0:
            raise DomainError(f"mean reversion k must be positive, got {self.k}")
        if not self.sigma > 0:
            raise DomainError(f"volatility sigma must be positive, got {self.sigma}")
        if not self.T > 0:
            raise DomainError(f"horizon T must be positive, got {self.T}")

    def mean(self, t, y):
        """``mu(t, y)``; ``t`` may be negative (backward extrapolation)."""
        return self.mu + (np.asarray(y, dtype=float) - self.mu) * np.exp(-self.k * np.asarray(t, dtype=float))

    def var(self, t):
        """``sigma^2(t)``."""
        t = np.asarray(t, dtype=float)
        out = -self.sigma ** 2 * np.expm1(-2.0 * self.k * t) / (2.0 * self.k)
        return out if out.ndim else float(out)

    def std(self, t):
        return np.sqrt(self.var(t))

    def marginal(self, t: float) -> GaussianLaw:
        """Law of ``Y_t`` given ``Y_0 = y0``."""
        return GaussianLaw(float(self.mean(t, self.y0)), self.var(t))

    def to_affine(self) -> AffineModel:
        return AffineModel(
            CoefficientFn.constant(-self.k),
            CoefficientFn.constant(self.k * self.mu),
            CoefficientFn.constant(self.sigma),
            self.y0,
            self.T,
        )


# ---------------------------------------------------------------------------
# Insider information
# ---------------------------------------------------------------------------


def _check_indicator(a) -> None:
    if a is None:
        return
    a = np.asarray(a)
    if not np.all((a == 0) | (a == 1)):
        raise DomainError("indicator must take values in {0, 1}")


@dataclass(frozen=True)
class NoInfo:
    pass


@dataclass(frozen=True)
class Terminal:
    """Exact knowledge of ``Y_T`` (``y_T`` may hold one value per path)."""

    y_T: float | np.ndarray | None = None


@dataclass(frozen=True)
class HalfLine:
    """Knowledge of ``A = 1{Y_T >= c}``."""

    c: float
    a: int | np.ndarray | None = None

    def __post_init__(self) -> None:
        _check_indicator(self.a)


@dataclass(frozen=True)
class Interval:
    """Knowledge of ``A = 1{c1 < Y_T < c2}``."""

    c1: float
    c2: float
    a: int | np.ndarray | None = None

    def __post_init__(self) -> None:
        if not self.c1 < self.c2:
            raise DomainError(f"interval needs c1 < c2, got ({self.c1}, {self.c2})")
        _check_indicator(self.a)


InfoKind = Union[NoInfo, Terminal, HalfLine, Interval]


# ---------------------------------------------------------------------------
# Conditioned laws and drift corrections
# ---------------------------------------------------------------------------


def _tau(model: OUModel, t: float) -> float:
    tau = model.T - t
    if tau <= 0 or tau < 1e-12 * model.T:
        raise SingularTime(f"t={t} is at or numerically on the horizon T={model.T}")
    return tau


def ou_bridge_law(model: OUModel, t: float, delta: float, y_t, y_T) -> GaussianLaw:
    """Law of ``Y_{t+delta}`` given ``Y_t`` and ``Y_T``."""
    tau = _tau(model, t)
    if delta < 0 or delta >= tau:
        raise DomainError(f"need 0 <= delta < T - t, got delta={delta}, T-t={tau}")
    if delta == 0:
        return GaussianLaw(np.asarray(y_t, dtype=float) * 1.0, 0.0)
    rest = tau - delta
    v_full = model.var(tau)
    v_step = model.var(delta)
    v_rest = model.var(rest)
    w_T = v_step * math.exp(-2.0 * model.k * rest) / v_full
    mean = w_T * model.mean(-rest, y_T) + (v_rest / v_full) * model.mean(delta, y_t)
    return GaussianLaw(mean if np.ndim(mean) else float(mean), v_rest * v_step / v_full)


def _kappa(model: OUModel, tau: float) -> float:
    """``sigma^2 exp(-k tau)``: numerator shared by all corrections."""
    return model.sigma ** 2 * math.exp(-model.k * tau)


def f_hat(model: OUModel, t: float, y_t, y_T):
    """Drift correction for exact terminal knowledge."""
    tau = _tau(model, t)
    out = _kappa(model, tau) * (np.asarray(y_T, dtype=float) - model.mean(tau, y_t)) / model.var(tau)
    return out if np.ndim(out) else float(out)


def f_hat_hyperbolic(model: OUModel, t: float, y_t, y_T):
    """Same as :func:`f_hat`, written with ``k / sinh(k (T-t))``."""
    tau = _tau(model, t)
    k, mu = model.k, model.mu
    out = k / math.sinh(k * tau) * ((mu - np.asarray(y_t, dtype=float)) * math.exp(-k * tau)
                                    - (mu - np.asarray(y_T, dtype=float)))
    return out if np.ndim(out) else float(out)


def halfline_z(model: OUModel, t: float, y, c: float):
    """Standardised distance ``(mu(T-t, y) - c) / sigma(T-t)``."""
    tau = _tau(model, t)
    return (model.mean(tau, y) - c) / math.sqrt(model.var(tau))


def halfline_probability(model: OUModel, t: float, y, c: float):
    """``P(Y_T >= c | Y_t = y)``."""
    return normal_cdf(halfline_z(model, t, y, c))


def f_tilde(model: OUModel, t: float, y, c: float, a):
    """Drift correction when only ``1{Y_T >= c}`` is known.

    ``a = 1`` gives ``kappa f(c|y) / P(Y_T >= c | y)`` (positive) and ``a = 0``
    gives ``-kappa f(c|y) / P(Y_T < c | y)`` (negative), so that the two
    branches average to zero.
    """
    _check_indicator(a)
    tau = _tau(model, t)
    z = np.asarray(halfline_z(model, t, y, c), dtype=float)
    scale = _kappa(model, tau) / math.sqrt(model.var(tau))
    sign = np.where(np.asarray(a) == 1, 1.0, -1.0)
    out = sign * scale * mills_ratio_inverse(-sign * z)
    return out if out.ndim else float(out)


def _interval_z(model: OUModel, t: float, y, c1: float, c2: float):
    tau = _tau(model, t)
    m = model.mean(tau, y)
    s = math.sqrt(model.var(tau))
    return np.asarray((c1 - m) / s, dtype=float), np.asarray((c2 - m) / s, dtype=float), tau, s


def _interval_masses(z1: np.ndarray, z2: np.ndarray):
    """``(P_in, P_out)`` for the standard normal and ``(z1, z2)``.

    ``P_in`` is a difference of upper tails when the interval lies right of
    zero and of lower tails otherwise, so neither tail cancels against 1.
    """
    lo1, lo2 = np.asarray(normal_cdf(z1)), np.asarray(normal_cdf(z2))
    up1, up2 = np.asarray(normal_sf(z1)), np.asarray(normal_sf(z2))
    p_in = np.where(z1 > 0, up1 - up2, lo2 - lo1)
    return p_in, lo1 + up2


def _upper_tail_ratio(w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """``(phi(w1) - phi(w2)) / (Phi(w2) - Phi(w1))`` for ``0 <= w1 < w2``, in log space."""
    num = -np.expm1(-0.5 * (w2 - w1) * (w2 + w1))
    den = -np.expm1(log_normal_sf(w2) - log_normal_sf(w1))
    return mills_ratio_inverse(w1) * num / den


def _outer_tail_ratio(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``(phi(v) - phi(u)) / (Phi(-u) + Phi(-v))`` for ``u, v > 0``.

    Both densities are scaled by the larger one before dividing, which keeps
    the quotient finite when everything underflows.
    """
    mu_, mv = mills_ratio_inverse(u), mills_ratio_inverse(v)
    first = u <= v
    d = np.exp(-0.5 * (np.maximum(v, u) - np.minimum(v, u)) * (u + v))
    return np.where(first, (d - 1.0) / (1.0 / mu_ + d / mv), (1.0 - d) / (d / mu_ + 1.0 / mv))


def interval_probability(model: OUModel, t: float, y, c1: float, c2: float):
    """``(P(c1 < Y_T < c2 | y), P(Y_T outside | y))``."""
    z1, z2, _, _ = _interval_z(model, t, y, c1, c2)
    p_in, p_out = _interval_masses(z1, z2)
    if p_in.ndim == 0:
        return float(p_in), float(p_out)
    return p_in, p_out


def _hazard_from(z1, z2, phi1, phi2, p_in):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.asarray((phi1 - phi2) / p_in, dtype=float)
    hi = z1 > _TAIL
    if np.any(hi):
        out = np.array(out, copy=True)
        out[hi] = _upper_tail_ratio(z1[hi], z2[hi])
    lo = z2 < -_TAIL
    if np.any(lo):
        out = np.array(out, copy=True)
        out[lo] = -_upper_tail_ratio(-z2[lo], -z1[lo])
    return out


def interval_hazard(z1, z2):
    """``(phi(z1) - phi(z2)) / (Phi(z2) - Phi(z1))`` for ``z1 < z2``.

    In the far tails densities and mass underflow together, so the ratio is
    rebuilt from log-survival differences and the Mills ratio instead.
    """
    z1, z2 = np.broadcast_arrays(np.asarray(z1, dtype=float), np.asarray(z2, dtype=float))
    p_in, _ = _interval_masses(z1, z2)
    out = _hazard_from(z1, z2, np.asarray(normal_pdf(z1)), np.asarray(normal_pdf(z2)), p_in)
    return out if out.ndim else float(out)


def interval_outer_hazard(z1, z2):
    """``(phi(z2) - phi(z1)) / (Phi(z1) + 1 - Phi(z2))`` for ``z1 < z2``."""
    z1, z2 = np.broadcast_arrays(np.asarray(z1, dtype=float), np.asarray(z2, dtype=float))
    _, p_out = _interval_masses(z1, z2)
    out = _outer_from(z1, z2, np.asarray(normal_pdf(z1)), np.asarray(normal_pdf(z2)), p_out)
    return out if out.ndim else float(out)


def _outer_from(z1, z2, phi1, phi2, p_out):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.asarray((phi2 - phi1) / p_out, dtype=float)
    both = (z1 < -_TAIL) & (z2 > _TAIL)
    if np.any(both):
        out = np.array(out, copy=True)
        out[both] = _outer_tail_ratio(-z1[both], z2[both])
    return out


def f_bar(model: OUModel, t: float, y, c1: float, c2: float, a):
    """Drift correction when only ``1{c1 < Y_T < c2}`` is known.

    ``a = 1``: ``kappa (f(c1|y) - f(c2|y)) / P_in``;
    ``a = 0``: ``kappa (f(c2|y) - f(c1|y)) / P_out``.
    """
    if not c1 < c2:
        raise DomainError(f"interval needs c1 < c2, got ({c1}, {c2})")
    _check_indicator(a)
    z1, z2, tau, s = _interval_z(model, t, y, c1, c2)
    z1, z2 = np.broadcast_arrays(z1, z2)
    scale = _kappa(model, tau) / s
    phi1, phi2 = np.asarray(normal_pdf(z1)), np.asarray(normal_pdf(z2))
    p_in, p_out = _interval_masses(z1, z2)
    ratio_in = _hazard_from(z1, z2, phi1, phi2, p_in)
    ratio_out = _outer_from(z1, z2, phi1, phi2, p_out)
    out = np.where(np.asarray(a) == 1, scale * ratio_in, scale * ratio_out)
    return out if out.ndim else float(out)


def drift_correction(model: OUModel, info: InfoKind, t: float, y_t):
    """Extra drift of ``Y`` seen by an agent holding ``info``."""
    if isinstance(info, NoInfo):
        out = np.zeros_like(np.asarray(y_t, dtype=float))
        return out if out.ndim else 0.0
    if isinstance(info, Terminal):
        if info.y_T is None:
            raise DomainError("Terminal info needs a realised y_T")
        return f_hat(model, t, y_t, info.y_T)
    if isinstance(info, HalfLine):
        if info.a is None:
            raise DomainError("HalfLine info needs a realised indicator")
        return f_tilde(model, t, y_t, info.c, info.a)
    if isinstance(info, Interval):
        if info.a is None:
            raise DomainError("Interval info needs a realised indicator")
        return f_bar(model, t, y_t, info.c1, info.c2, info.a)
    raise DomainError(f"unknown information kind {info!r}")


def indicator_probability(model: OUModel, info: InfoKind, t: float = 0.0, y=None):
    """``P(A = 1 | Y_t = y)`` (defaults to the time-0 state)."""
    y = model.y0 if y is None else y
    if isinstance(info, HalfLine):
        return halfline_probability(model, t, y, info.c)
    if isinstance(info, Interval):
        return interval_probability(model, t, y, info.c1, info.c2)[0]
    raise DomainError("indicator probability needs HalfLine or Interval information")


def sample_indicator(model: OUModel, info: InfoKind, stream: RngStream, size=None):
    """Draw the insider indicator ``A`` from the time-0 law of ``Y_T``."""
    p = indicator_probability(model, info)
    u = stream.generator().random(size)
    out = (u < p).astype(np.int8)
    return out if np.ndim(out) else int(out)


def sample_terminal(model: OUModel, info: InfoKind, rng: np.random.Generator, size: int):
    """Draw the insider datum and a terminal value consistent with it.

    Returns ``(datum, y_T)``: for Terminal the datum is ``y_T`` itself, for
    indicator information it is ``A`` and ``y_T`` comes from the law of
    ``Y_T`` truncated to the event ``{A = a}``.
    """
    law = model.marginal(model.T)
    m, s = float(law.mean), float(law.std)
    if isinstance(info, (NoInfo, Terminal)):
        y_T = m + s * rng.standard_normal(size)
        return (None if isinstance(info, NoInfo) else y_T), y_T

    p = float(indicator_probability(model, info))
    u_event = rng.random(size)
    u_value = rng.random(size)
    a = (u_event < p).astype(np.int8)
    x = np.empty(size)
    if isinstance(info, HalfLine):
        w = (info.c - m) / s
        hit = a == 1
        x[hit] = stats.truncnorm.ppf(u_value[hit], w, np.inf)
        x[~hit] = stats.truncnorm.ppf(u_value[~hit], -np.inf, w)
    else:
        w1, w2 = (info.c1 - m) / s, (info.c2 - m) / s
        hit = a == 1
        x[hit] = stats.truncnorm.ppf(u_value[hit], w1, w2)
        p_low = normal_cdf(w1)
        p_high = normal_sf(w2)
        # Split the outer event between its two tails using a fresh uniform.
        u_side = rng.random(size)
        low = (~hit) & (u_side * (p_low + p_high) < p_low)
        high = (~hit) & ~low
        x[low] = stats.truncnorm.ppf(u_value[low], -np.inf, w1)
        x[high] = stats.truncnorm.ppf(u_value[high], w2, np.inf)
    return a, m + s * x
