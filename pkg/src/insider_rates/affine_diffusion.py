"""Gaussian affine short-rate diffusion and its terminal-conditioned law.

The rate follows ``dR = (a1(t) R + a2(t)) dt + b2(t) dB``. With
``Psi_{s,t} = exp(int_s^t a1)`` and ``Psi_t = Psi_{0,t}`` the solution is

    R_t = Psi_t [R_0 + int_0^t (a2/Psi) dx + int_0^t (b2/Psi) dB_x],

so every law below is Gaussian and is written through three integrals:
``Psi``, ``delta_integral`` (int (b2/Psi)^2) and ``nabla_integral``
(int a2/Psi). Coefficients come from a small closed-form registry so that
those integrals are exact whenever the coefficients are piecewise constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DomainError, SingularTime
from .grid import PathGrid
from .stochastic_core import GaussianLaw, RngStream, quadrature

# Relative distance to the horizon below which conditioned quantities are refused.
SINGULAR_REL = 1e-12


@dataclass(frozen=True)
class CoefficientFn:
    """Deterministic coefficient on ``[0, T]``.

    ``kind`` is ``"constant"``, ``"piecewise"`` or ``"polynomial"``. For a
    piecewise coefficient ``values[i]`` holds on ``[breakpoints[i-1],
    breakpoints[i])``; polynomial coefficients are stored lowest order first.
    """

    kind: str
    values: tuple[float, ...]
    breakpoints: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        bps = tuple(float(b) for b in self.breakpoints)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "breakpoints", bps)
        if not all(math.isfinite(v) for v in vals):
            raise DomainError("coefficient values must be finite")
        if self.kind == "constant":
            if len(vals) != 1 or bps:
                raise DomainError("constant coefficient takes exactly one value")
        elif self.kind == "piecewise":
            if len(vals) != len(bps) + 1:
                raise DomainError("piecewise coefficient needs len(values) == len(breakpoints) + 1")
            if any(b2 <= b1 for b1, b2 in zip(bps, bps[1:])):
                raise DomainError("breakpoints must be strictly increasing")
        elif self.kind == "polynomial":
            if not vals or bps:
                raise DomainError("polynomial coefficient needs at least one coefficient")
        else:
            raise DomainError(f"unknown coefficient kind {self.kind!r}")

    @classmethod
    def constant(cls, c: float) -> "CoefficientFn":
        return cls("constant", (c,))

    @classmethod
    def piecewise(cls, breakpoints: Sequence[float], values: Sequence[float]) -> "CoefficientFn":
        return cls("piecewise", tuple(values), tuple(breakpoints))

    @classmethod
    def polynomial(cls, coeffs: Sequence[float]) -> "CoefficientFn":
        return cls("polynomial", tuple(coeffs))

    @classmethod
    def coerce(cls, value) -> "CoefficientFn":
        if isinstance(value, CoefficientFn):
            return value
        return cls.constant(float(value))

    @property
    def is_piecewise_constant(self) -> bool:
        return self.kind != "polynomial" or len(self.values) == 1

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            out = np.full_like(t, self.values[0])
        elif self.kind == "piecewise":
            idx = np.searchsorted(self.breakpoints, t, side="right")
            out = np.asarray(self.values)[idx]
        else:
            out = np.polynomial.polynomial.polyval(t, self.values)
        return out if out.ndim else float(out)

    def pieces(self, lo: float, hi: float) -> list[tuple[float, float, float]]:
        """Constant pieces ``(left, right, value)`` covering ``[lo, hi]``."""
        if not self.is_piecewise_constant:
            raise DomainError("coefficient is not piecewise constant")
        cuts = [b for b in self.breakpoints if lo < b < hi]
        edges = [lo, *cuts, hi]
        return [(l, r, float(self(0.5 * (l + r)))) for l, r in zip(edges[:-1], edges[1:])]

    def antiderivative(self, t):
        """``int_0^t`` of the coefficient (exact for every kind)."""
        t = np.asarray(t, dtype=float)
        if self.kind == "constant":
            out = self.values[0] * t
        elif self.kind == "piecewise":
            out = np.zeros_like(t)
            edges = (0.0, *(b for b in self.breakpoints if b > 0.0))
            for i, left in enumerate(edges):
                right = edges[i + 1] if i + 1 < len(edges) else math.inf
                v = float(self(left))
                out = out + v * np.clip(t - left, 0.0, right - left)
        else:
            anti = np.polynomial.polynomial.polyint(self.values)
            out = np.polynomial.polynomial.polyval(t, anti)
        return out if out.ndim else float(out)

    def integral(self, a: float, b: float) -> float:
        return float(self.antiderivative(b) - self.antiderivative(a))

    def minimum(self, lo: float, hi: float) -> float:
        if self.is_piecewise_constant:
            return min(v for _, _, v in self.pieces(lo, hi))
        deriv = np.polynomial.polynomial.polyder(self.values)
        cands = [lo, hi]
        if len(deriv):
            for root in np.roots(deriv[::-1]):
                if abs(root.imag) < 1e-12 and lo < root.real < hi:
                    cands.append(root.real)
        return float(min(self(c) for c in cands))


@dataclass(frozen=True)
class AffineModel:
    """Affine Gaussian rate ``dR = (a1 R + a2) dt + b2 dB`` on ``[0, T]``."""

    a1: CoefficientFn
    a2: CoefficientFn
    b2: CoefficientFn
    r0: float
    T: float

    def __post_init__(self) -> None:
        for name in ("a1", "a2", "b2"):
            object.__setattr__(self, name, CoefficientFn.coerce(getattr(self, name)))
        if not self.T > 0:
            raise DomainError(f"horizon T must be positive, got {self.T}")
        if not self.b2.minimum(0.0, self.T) > 0:
            raise DomainError("b2 must be strictly positive on [0, T]")

    @property
    def exact(self) -> bool:
        return all(c.is_piecewise_constant for c in (self.a1, self.a2, self.b2))


@dataclass(frozen=True)
class BridgeCondition:
    """Knowledge of the terminal value ``R_T``; may be an array (one per path)."""

    terminal_value: float | np.ndarray
    terminal_time: float


# ---------------------------------------------------------------------------
# Integrals
# ---------------------------------------------------------------------------


def _check_interval(u: float, s: float) -> None:
    if u > s:
        raise DomainError(f"interval is reversed: {u} > {s}")


def _weighted_integral(model: AffineModel, coef: CoefficientFn, power: int, m: int,
                       u: float, s: float) -> float:
    """``int_u^s coef(x)^power * Psi_x^(-m) dx``."""
    _check_interval(u, s)
    if u == s:
        return 0.0
    a1 = model.a1
    if coef.is_piecewise_constant and a1.is_piecewise_constant:
        cuts = sorted({b for b in (*coef.breakpoints, *a1.breakpoints) if u < b < s})
        edges = [u, *cuts, s]
        total = 0.0
        for left, right in zip(edges[:-1], edges[1:]):
            mid = 0.5 * (left + right)
            c = float(coef(mid)) ** power
            rate = m * float(a1(mid))
            w = right - left
            base = math.exp(-m * a1.antiderivative(left))
            if rate == 0.0:
                span = w
            else:
                span = -math.expm1(-rate * w) / rate
            total += c * base * span
        return total

    def integrand(x):
        return coef(x) ** power * np.exp(-m * a1.antiderivative(x))
    cuts = [b for b in (*coef.breakpoints, *a1.breakpoints) if u < b < s]
    return quadrature(integrand, u, s, tol=0.0, rtol=1e-14, breakpoints=cuts)


def psi(model: AffineModel, s: float, t: float) -> float:
    """``Psi_{s,t} = exp(int_s^t a1)``."""
    _check_interval(s, t)
    return math.exp(model.a1.integral(s, t))


def psi0(model: AffineModel, t: float) -> float:
    return math.exp(model.a1.antiderivative(t))


def delta_integral(model: AffineModel, u: float, s: float) -> float:
    """``int_u^s (b2 / Psi)^2 dx``."""
    return _weighted_integral(model, model.b2, 2, 2, u, s)


def nabla_integral(model: AffineModel, u: float, s: float) -> float:
    """``int_u^s a2 / Psi dx``."""
    return _weighted_integral(model, model.a2, 1, 1, u, s)


def driver_integral(model: AffineModel, u: float, s: float) -> float:
    """``int_u^s b2 / Psi dx``; gives the covariance of a rate step with its driver."""
    return _weighted_integral(model, model.b2, 1, 1, u, s)


# ---------------------------------------------------------------------------
# Laws
# ---------------------------------------------------------------------------


def transition_law(model: AffineModel, u: float, s: float, r_u) -> GaussianLaw:
    """Law of ``R_s`` given ``R_u = r_u``."""
    _check_interval(u, s)
    ps = psi0(model, s)
    mean = psi(model, u, s) * np.asarray(r_u, dtype=float) + ps * nabla_integral(model, u, s)
    var = ps * ps * delta_integral(model, u, s)
    return GaussianLaw(mean if np.ndim(mean) else float(mean), var)


def _guard_singular(model: AffineModel, t: float) -> None:
    if t >= model.T or model.T - t < SINGULAR_REL * model.T:
        raise SingularTime(f"t={t} is at or numerically on the horizon T={model.T}")


def _check_condition(model: AffineModel, cond: BridgeCondition) -> None:
    if not math.isclose(cond.terminal_time, model.T, rel_tol=1e-14, abs_tol=0.0):
        raise DomainError("bridge terminal_time must equal the model horizon")


def bridge_coefficients(model: AffineModel, t: float, delta: float) -> tuple[float, float, float, float]:
    """Coefficients ``(w_t, w_T, shift, var)`` of the bridge step.

    ``E[R_{t+delta} | R_t, R_T] = w_t R_t + w_T R_T + shift`` and the
    conditional variance is ``var``.
    """
    _guard_singular(model, t)
    if delta < 0:
        raise DomainError("delta must be non-negative")
    s = t + delta
    if s >= model.T:
        raise DomainError(f"t + delta = {s} must be strictly before T = {model.T}")
    if delta == 0:
        return 1.0, 0.0, 0.0, 0.0
    d_ts = delta_integral(model, t, s)
    d_sT = delta_integral(model, s, model.T)
    d_tT = d_ts + d_sT
    p_s = psi0(model, s)
    p_T = psi0(model, model.T)
    p_ts = psi(model, t, s)
    p_sT = psi(model, s, model.T)
    keep = d_sT / d_tT
    pull = d_ts / d_tT
    w_t = keep * p_ts
    w_T = pull / p_sT
    shift = keep * p_s * nabla_integral(model, t, s) - pull * p_T * nabla_integral(model, s, model.T) / p_sT
    var = keep * p_s * p_s * d_ts
    return w_t, w_T, shift, var


def bridge_law(model: AffineModel, t: float, delta: float, r_t, cond: BridgeCondition) -> GaussianLaw:
    """Law of ``R_{t+delta}`` given ``R_t = r_t`` and ``R_T = cond.terminal_value``."""
    _check_condition(model, cond)
    w_t, w_T, shift, var = bridge_coefficients(model, t, delta)
    mean = w_t * np.asarray(r_t, dtype=float) + w_T * np.asarray(cond.terminal_value, dtype=float) + shift
    return GaussianLaw(mean if np.ndim(mean) else float(mean), var)


def _drift_gain(model: AffineModel, t: float) -> tuple[float, float, float]:
    """``(K_t, Psi_{t,T}, Psi_T nabla_t^T)`` with ``K_t = (b2/Psi)^2(t) / (Psi_{t,T} delta_t^T)``."""
    _guard_singular(model, t)
    scale = float(model.b2(t)) / psi0(model, t)
    p_tT = psi(model, t, model.T)
    gain = scale * scale / (p_tT * delta_integral(model, t, model.T))
    return gain, p_tT, psi0(model, model.T) * nabla_integral(model, t, model.T)


def g_hat(model: AffineModel, t: float, r_t, r_T):
    """Extra drift of the rate once its terminal value is known."""
    gain, p_tT, offset = _drift_gain(model, t)
    out = gain * (np.asarray(r_T, dtype=float) - p_tT * np.asarray(r_t, dtype=float) - offset)
    return out if np.ndim(out) else float(out)


@dataclass(frozen=True)
class ConditionedCoefficients:
    """Affine coefficients of the rate conditioned on ``R_T``.

    ``a1_hat`` and ``a2_hat`` blow up like ``1/(T-t)``; evaluation at the
    horizon raises :class:`SingularTime`.
    """

    model: AffineModel
    cond: BridgeCondition = field(repr=False)

    def a1_hat(self, t: float) -> float:
        _guard_singular(self.model, t)
        scale = float(self.model.b2(t)) / psi0(self.model, t)
        return float(self.model.a1(t)) - scale * scale / delta_integral(self.model, t, self.model.T)

    def a2_hat(self, t: float):
        gain, _, offset = _drift_gain(self.model, t)
        out = float(self.model.a2(t)) + gain * (np.asarray(self.cond.terminal_value, dtype=float) - offset)
        return out if np.ndim(out) else float(out)

    def b2_hat(self, t: float) -> float:
        return float(self.model.b2(t))

    def drift(self, t: float, r):
        return self.a1_hat(t) * np.asarray(r, dtype=float) + self.a2_hat(t)


def conditioned_coefficients(model: AffineModel, cond: BridgeCondition) -> ConditionedCoefficients:
    _check_condition(model, cond)
    return ConditionedCoefficients(model, cond)


def bridge_square_residuals(model: AffineModel, t: float, delta: float, a: float, c: float) -> tuple[float, float, float]:
    """Residuals of the coefficient matching behind the bridge law.

    The log of ``f(b|a) f(c|b) / f(c|a)`` times the bridge variance is a
    quadratic in ``b``. Its ``b^2``, ``b`` and constant coefficients must be
    ``1``, ``-2 mean`` and ``mean^2`` for the bridge law to be the stated
    Gaussian. Returns the three (scale-relative) residuals.
    """
    T = model.T
    s = t + delta
    d_ts = delta_integral(model, t, s)
    d_sT = delta_integral(model, s, T)
    d_tT = delta_integral(model, t, T)
    p_s, p_T = psi0(model, s), psi0(model, T)
    p_ts, p_sT, p_tT = psi(model, t, s), psi(model, s, T), psi(model, t, T)
    n_ts, n_sT, n_tT = nabla_integral(model, t, s), nabla_integral(model, s, T), nabla_integral(model, t, T)

    left = a * p_ts + n_ts * p_s          # mean of R_s given R_t = a
    right = c - n_sT * p_T                # terminal value net of drift after s
    full = c - a * p_tT - n_tT * p_T      # terminal innovation seen from t
    w1 = d_sT / d_tT
    w2 = (d_ts / d_tT) * (p_s / p_T) ** 2
    w3 = (d_ts * d_sT / d_tT ** 2) * (p_s / p_T) ** 2

    quad = w1 + w2 * p_sT ** 2
    lin = w1 * left + w2 * p_sT * right
    const = w1 * left ** 2 + w2 * right ** 2 - w3 * full ** 2

    mean = bridge_law(model, t, delta, a, BridgeCondition(c, T)).mean
    scale = max(1.0, abs(mean))
    return quad - 1.0, (lin - mean) / scale, (const - mean ** 2) / scale ** 2


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def _grid_times(grid) -> np.ndarray:
    return grid.times if isinstance(grid, PathGrid) else PathGrid(np.asarray(grid, dtype=float)).times


def simulate_rate(
    model: AffineModel,
    grid,
    stream: RngStream,
    cond: BridgeCondition | None = None,
    *,
    n_paths: int = 1,
    pin: bool = False,
) -> np.ndarray:
    """Exact Gaussian stepping of the rate on ``grid``.

    Unconditioned paths step with :func:`transition_law`; conditioned paths
    with :func:`bridge_law`, so neither carries discretisation bias. With
    ``pin=True`` a conditioned path gets an extra column holding ``R_T``.
    Returns an array of shape ``(n_paths, len(grid) [+1])``.
    """
    times = _grid_times(grid)
    if times[-1] > model.T * (1 + 1e-14):
        raise DomainError("grid extends past the model horizon")
    if cond is not None:
        _check_condition(model, cond)
        _guard_singular(model, float(times[-1]))
    rng = stream.generator()
    out = np.empty((n_paths, times.size))
    out[:, 0] = model.r0
    r_T = None if cond is None else np.broadcast_to(np.asarray(cond.terminal_value, dtype=float), (n_paths,))
    for i in range(times.size - 1):
        t, s = float(times[i]), float(times[i + 1])
        z = rng.standard_normal(n_paths)
        if cond is None:
            law = transition_law(model, t, s, out[:, i])
        else:
            law = bridge_law(model, t, s - t, out[:, i], BridgeCondition(r_T, model.T))
        out[:, i + 1] = law.mean + math.sqrt(law.variance) * z
    if cond is not None and pin:
        out = np.column_stack((out, r_T))
    return out
