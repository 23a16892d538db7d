"""Numerical substrate: random streams, Gaussian tails and adaptive quadrature.

Everything here is a pure function of its inputs. Random numbers come from
counter-based Philox streams keyed by ``(seed, stream_id)`` so that blocks of
Monte Carlo paths can be generated independently and in any order.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .errors import DomainError, NonConvergence

SQRT_2PI = math.sqrt(2.0 * math.pi)
INV_SQRT_2PI = 1.0 / SQRT_2PI
_SQRT2 = math.sqrt(2.0)
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)

_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RngStream:
    """Reproducible, independently splittable source of random numbers.

    The Philox key is built from ``seed`` (low 64 bits) and ``stream_id``
    (high 64 bits). ``block`` offsets the third counter word, which gives each
    block 2**128 draws before it could touch its neighbour.
    """

    seed: int
    stream_id: int = 0
    block: int = 0

    def __post_init__(self) -> None:
        if self.stream_id < 0 or self.block < 0:
            raise DomainError("stream_id and block must be non-negative")
        if self.stream_id > _MASK64 or self.block > _MASK64:
            raise DomainError("stream_id and block must fit in 64 bits")

    def generator(self) -> np.random.Generator:
        key = (int(self.seed) & _MASK64) | (int(self.stream_id) << 64)
        bitgen = np.random.Philox(key=key, counter=[0, 0, int(self.block), 0])
        return np.random.Generator(bitgen)

    def substream(self, block: int) -> "RngStream":
        return RngStream(self.seed, self.stream_id, block)

    def child(self, stream_id: int) -> "RngStream":
        return RngStream(self.seed, stream_id, 0)


@dataclass(frozen=True)
class GaussianLaw:
    """Normal law ``N(mean, variance)``; fields may be arrays of equal shape."""

    mean: float | np.ndarray
    variance: float | np.ndarray

    def __post_init__(self) -> None:
        if np.any(np.asarray(self.variance) < 0):
            raise DomainError("variance must be non-negative")

    @property
    def std(self) -> float | np.ndarray:
        return np.sqrt(self.variance)

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        return self.mean + self.std * rng.standard_normal(size)


def correlated_increments(stream: RngStream, rho: float, h: float, n: int) -> np.ndarray:
    """Draw ``n`` Brownian increment pairs ``(dB^R, dB^S)`` over a step ``h``.

    ``dB^S = rho dB^R + sqrt(1 - rho^2) dW`` with ``dW`` independent of
    ``dB^R``. Returns an array of shape ``(n, 2)``.
    """
    if not -1.0 <= rho <= 1.0:
        raise DomainError(f"rho must lie in [-1, 1], got {rho}")
    if h <= 0:
        raise DomainError(f"step must be positive, got {h}")
    z = stream.generator().standard_normal((n, 2))
    sq = math.sqrt(h)
    d_br = sq * z[:, 0]
    d_bs = rho * d_br + math.sqrt(1.0 - rho * rho) * sq * z[:, 1]
    return np.column_stack((d_br, d_bs))


# ---------------------------------------------------------------------------
# Standard normal functions
# ---------------------------------------------------------------------------


def normal_pdf(z):
    """Standard normal density, ``exp(-z^2/2) / sqrt(2 pi)``."""
    z = np.asarray(z, dtype=float)
    out = INV_SQRT_2PI * np.exp(-0.5 * z * z)
    return out if out.ndim else float(out)


def normal_cdf(z):
    """Standard normal distribution function."""
    out = special.ndtr(np.asarray(z, dtype=float))
    return out if np.ndim(out) else float(out)


def normal_sf(z):
    """Survival function ``1 - Phi(z)``, evaluated as ``Phi(-z)``.

    ``ndtr`` switches to ``erfc`` for negative arguments, so the upper tail
    keeps full relative accuracy instead of cancelling against 1.
    """
    out = special.ndtr(-np.asarray(z, dtype=float))
    return out if np.ndim(out) else float(out)


def log_normal_cdf(z):
    out = special.log_ndtr(np.asarray(z, dtype=float))
    return out if np.ndim(out) else float(out)


def log_normal_sf(z):
    out = special.log_ndtr(-np.asarray(z, dtype=float))
    return out if np.ndim(out) else float(out)


def mills_ratio_inverse(z):
    """Hazard of the standard normal, ``Phi'(z) / (1 - Phi(z))``.

    For ``z >= 0`` the ratio equals ``sqrt(2/pi) / erfcx(z/sqrt(2))``, which is
    a ratio of two scaled quantities and therefore free of both underflow and
    overflow. For negative ``z`` the denominator is at least one half and the
    direct quotient is exact to rounding.
    """
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = _SQRT_2_OVER_PI / special.erfcx(z[pos] / _SQRT2)
    neg = ~pos
    zn = z[neg]
    out[neg] = INV_SQRT_2PI * np.exp(-0.5 * zn * zn) / special.ndtr(-zn)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# Quadrature
# ---------------------------------------------------------------------------

# Gauss-Kronrod 7/15 abscissae and weights (non-negative half, QUADPACK qk15).
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

_NODES = np.concatenate((-_XGK[:-1], _XGK[::-1]))  # 15 nodes, ascending
_KW = np.concatenate((_WGK[:-1], _WGK[::-1]))
_GW = np.zeros(15)
# Gauss nodes are the odd-indexed Kronrod nodes (xgk[1], xgk[3], xgk[5], xgk[7]).
_GW[[1, 3, 5]] = _WG[:3]
_GW[[9, 11, 13]] = _WG[2::-1]
_GW[7] = _WG[3]


@dataclass(frozen=True)
class QuadResult:
    value: float
    error: float
    n_intervals: int


def _gk15(g: Callable[[np.ndarray], np.ndarray], lo: np.ndarray, hi: np.ndarray):
    """Apply the G7/K15 pair to every panel ``[lo[i], hi[i]]`` at once."""
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = mid[:, None] + half[:, None] * _NODES[None, :]
    fx = np.asarray(g(x.ravel()), dtype=float).reshape(x.shape)
    if not np.all(np.isfinite(fx)):
        raise NonConvergence("integrand returned non-finite values")
    k = half * (fx @ _KW)
    gauss = half * (fx @ _GW)
    return k, np.abs(k - gauss)


def _transformed(f, a: float, b: float):
    """Map ``[a, b]`` onto a finite parameter interval with a smooth integrand.

    Finite intervals use ``x = a + (b-a)(3u^2 - 2u^3)``, whose Jacobian
    vanishes linearly at both ends and so cancels inverse-square-root endpoint
    singularities. Infinite ends use a tangent substitution.
    """
    if a == -math.inf and b == math.inf:
        def g(th):
            return f(np.tan(th)) / np.cos(th) ** 2
        return g, -0.5 * math.pi, 0.5 * math.pi
    if b == math.inf:
        def g(th):
            return f(a + np.tan(th)) / np.cos(th) ** 2
        return g, 0.0, 0.5 * math.pi
    if a == -math.inf:
        def g(th):
            return f(b - np.tan(th)) / np.cos(th) ** 2
        return g, 0.0, 0.5 * math.pi
    width = b - a

    def g(u):
        return f(a + width * u * u * (3.0 - 2.0 * u)) * (6.0 * width * u * (1.0 - u))
    return g, 0.0, 1.0


def quadrature(
    f: Callable[[np.ndarray], np.ndarray],
    a: float,
    b: float,
    refinement: int = 1,
    *,
    tol: float = 1e-9,
    rtol: float = 0.0,
    breakpoints: Sequence[float] = (),
    adaptive: bool = True,
    max_intervals: int = 4000,
    full_output: bool = False,
):
    """Integrate a vectorised function over ``[a, b]`` (ends may be infinite).

    Parameters
    ----------
    f
        Callable accepting and returning numpy arrays.
    refinement
        Number of equal panels each piece starts with (in the transformed
        variable). With ``adaptive=False`` this is the whole rule, which is what
        refinement studies use.
    tol, rtol
        Global stopping rule ``error <= max(tol, rtol * |value|)``.
    breakpoints
        Interior points where the integrand changes character; the interval
        is split there before transformation.

    Returns the integral, or a :class:`QuadResult` when ``full_output``.
    """
    if not a < b:
        raise DomainError(f"quadrature needs a < b, got [{a}, {b}]")
    if refinement < 1:
        raise DomainError("refinement must be a positive integer")
    cuts = sorted(x for x in breakpoints if a < x < b)
    edges = [a, *cuts, b]

    pieces = []
    for lo_x, hi_x in zip(edges[:-1], edges[1:]):
        g, lo_u, hi_u = _transformed(f, lo_x, hi_x)
        grid = np.linspace(lo_u, hi_u, refinement + 1)
        vals, errs = _gk15(g, grid[:-1], grid[1:])
        pieces.append((g, list(zip(grid[:-1], grid[1:], vals, errs))))

    heap = []
    for idx, (_, panels) in enumerate(pieces):
        for lo, hi, v, e in panels:
            heap.append((-e, lo, hi, v, idx))
    heapq.heapify(heap)
    total = math.fsum(item[3] for item in heap)
    err = math.fsum(-item[0] for item in heap)

    if adaptive:
        while err > max(tol, rtol * abs(total)):
            if len(heap) >= max_intervals:
                raise NonConvergence(
                    f"no convergence after {len(heap)} intervals: "
                    f"value={total:.6g}, error={err:.3g}"
                )
            neg_e, lo, hi, v, idx = heapq.heappop(heap)
            mid = 0.5 * (lo + hi)
            if not lo < mid < hi:
                raise NonConvergence("interval width reached machine resolution")
            g = pieces[idx][0]
            vals, errs = _gk15(g, np.array([lo, mid]), np.array([mid, hi]))
            heapq.heappush(heap, (-errs[0], lo, mid, vals[0], idx))
            heapq.heappush(heap, (-errs[1], mid, hi, vals[1], idx))
            total += vals[0] + vals[1] - v
            err += errs[0] + errs[1] + neg_e
            if err < 0.0:
                err = math.fsum(-item[0] for item in heap)
        total = math.fsum(item[3] for item in heap)
        err = math.fsum(-item[0] for item in heap)

    if full_output:
        return QuadResult(float(total), float(err), len(heap))
    return float(total)


def gauss_hermite(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights for ``E[g(Z)]``, ``Z ~ N(0, 1)`` (probabilists' rule)."""
    x, w = np.polynomial.hermite_e.hermegauss(n)
    return x, w / SQRT_2PI
