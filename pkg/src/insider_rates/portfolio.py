"""Market, log-optimal strategies, wealth simulation and expected log-utility.

The investor splits wealth between a bank account paying the short rate
``Y`` and a risky asset ``dS = S (eta dt + xi dB^S)`` whose driver is
correlated with the rate driver, ``dB^S = rho dB^R + sqrt(1 - rho^2) dW``.
With weight ``pi`` in the risky asset,

    d ln X = [(1 - pi) Y + pi eta - pi^2 xi^2 / 2] dt + pi xi dB^S.

Log-optimal weights are the Merton ratio ``(eta - Y) / xi^2`` plus, for an
insider, ``rho / (vol xi)`` times the information drift of the rate.

Simulation is exact in distribution for the rate, its time integral and both
drivers; only the piecewise-constant freezing of the weight on each step is
an approximation.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, Sequence, Union

import numpy as np

from .affine_diffusion import (
    AffineModel,
    CoefficientFn,
    bridge_coefficients,
    delta_integral,
    driver_integral,
    g_hat,
    nabla_integral,
    psi,
    psi0,
    SINGULAR_REL,
)
from .errors import DomainError, NonFinite, SingularTime
from .grid import PathGrid
from .stochastic_core import GaussianLaw, RngStream, gauss_hermite, normal_pdf, quadrature
from .vasicek import (
    HalfLine,
    InfoKind,
    Interval,
    NoInfo,
    OUModel,
    Terminal,
    drift_correction,
    indicator_probability,
    sample_terminal,
)

__all__ = [
    "MarketModel",
    "PathGrid",
    "Filtration",
    "Strategy",
    "SimBatch",
    "QuadratureConfig",
    "ConcavityWitness",
    "merton_weight",
    "informed_weight",
    "information_drift",
    "strategy_grid",
    "simulate_wealth",
    "simulate_strategies",
    "analytic_log_utility",
    "log_utility_integrand",
    "concavity_check",
]

RateModel = Union[OUModel, AffineModel]
DEFAULT_BLOCK = 16384


# ---------------------------------------------------------------------------
# Models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarketModel:
    """Risky asset coefficients and the correlation of its driver with the rate."""

    eta: CoefficientFn
    xi: CoefficientFn
    rho: float
    x0: float = 1.0
    s0: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "eta", CoefficientFn.coerce(self.eta))
        object.__setattr__(self, "xi", CoefficientFn.coerce(self.xi))
        if not -1.0 <= self.rho <= 1.0:
            raise DomainError(f"rho must lie in [-1, 1], got {self.rho}")
        if not self.x0 > 0:
            raise DomainError(f"initial wealth x0 must be positive, got {self.x0}")
        if not self.s0 > 0:
            raise DomainError(f"initial price s0 must be positive, got {self.s0}")

    def validate(self, T: float) -> None:
        """Check that the volatility stays away from zero on ``[0, T]``."""
        if not self.xi.minimum(0.0, T) > 0:
            raise DomainError("risky volatility xi must be bounded away from zero on [0, T]")


def as_affine(rate_model: RateModel) -> AffineModel:
    if isinstance(rate_model, OUModel):
        return rate_model.to_affine()
    if isinstance(rate_model, AffineModel):
        return rate_model
    raise DomainError(f"unsupported rate model {type(rate_model).__name__}")


def _initial_rate(rate_model: RateModel) -> float:
    return rate_model.y0 if isinstance(rate_model, OUModel) else rate_model.r0


def rate_vol(rate_model: RateModel, t: float) -> float:
    if isinstance(rate_model, OUModel):
        return rate_model.sigma
    return float(rate_model.b2(t))


def _rate_marginal(rate_model: RateModel, t: float) -> GaussianLaw:
    """Law of the rate at ``t`` seen from time 0."""
    if isinstance(rate_model, OUModel):
        return rate_model.marginal(t)
    m = as_affine(rate_model)
    if t == 0:
        return GaussianLaw(m.r0, 0.0)
    return GaussianLaw(
        psi0(m, t) * (m.r0 + nabla_integral(m, 0.0, t)),
        psi0(m, t) ** 2 * delta_integral(m, 0.0, t),
    )


def _terminal_given(rate_model: RateModel, t: float, y):
    """Mean and std of the terminal rate given the rate at ``t``."""
    if isinstance(rate_model, OUModel):
        tau = rate_model.T - t
        return rate_model.mean(tau, y), math.sqrt(rate_model.var(tau))
    m = rate_model
    T = m.T
    mean = psi(m, t, T) * np.asarray(y, dtype=float) + psi0(m, T) * nabla_integral(m, t, T)
    return mean, psi0(m, T) * math.sqrt(delta_integral(m, t, T))


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------


class Filtration(str, Enum):
    F = "F"
    G = "G"
    GTILDE = "Gtilde"
    GBAR = "Gbar"


_FILTRATION_OF = {NoInfo: Filtration.F, Terminal: Filtration.G,
                  HalfLine: Filtration.GTILDE, Interval: Filtration.GBAR}


@dataclass(frozen=True)
class Strategy:
    """Trading rule tied to an information set.

    ``fixed_weight`` overrides the optimal weight with a constant; the
    information still determines the law the paths are drawn from.
    """

    filtration: Filtration
    info: InfoKind = field(default_factory=NoInfo)
    fixed_weight: float | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "filtration", Filtration(self.filtration))
        expected = _FILTRATION_OF.get(type(self.info))
        if expected is None:
            raise DomainError(f"unknown information kind {self.info!r}")
        if expected is not self.filtration:
            raise DomainError(
                f"filtration {self.filtration.value} does not match {type(self.info).__name__} information"
            )

    @classmethod
    def optimal(cls, info: InfoKind) -> "Strategy":
        return cls(_FILTRATION_OF[type(info)], info)

    @property
    def label(self) -> str:
        return self.filtration.value if self.fixed_weight is None else f"{self.filtration.value}[pi={self.fixed_weight:g}]"


def merton_weight(market: MarketModel, t: float, y_t):
    """Uninformed log-optimal weight ``(eta_t - y_t) / xi_t^2``."""
    xi = float(market.xi(t))
    out = (float(market.eta(t)) - np.asarray(y_t, dtype=float)) / (xi * xi)
    return out if np.ndim(out) else float(out)


def information_drift(rate_model: RateModel, info: InfoKind, t: float, y_t):
    """Extra drift of the rate under ``info`` (zero without information)."""
    if isinstance(rate_model, OUModel):
        return drift_correction(rate_model, info, t, y_t)
    if isinstance(info, NoInfo):
        out = np.zeros_like(np.asarray(y_t, dtype=float))
        return out if out.ndim else 0.0
    if isinstance(info, Terminal):
        if info.y_T is None:
            raise DomainError("Terminal info needs a realised y_T")
        return g_hat(rate_model, t, y_t, info.y_T)
    raise DomainError("indicator information is only available for the Vasicek model")


def informed_weight(market: MarketModel, rate_model: RateModel, info: InfoKind, t: float, y_t):
    """Log-optimal weight for an agent holding ``info``."""
    base = merton_weight(market, t, y_t)
    if isinstance(info, NoInfo):
        return base
    corr = information_drift(rate_model, info, t, y_t)
    out = base + market.rho / (rate_vol(rate_model, t) * float(market.xi(t))) * corr
    return out if np.ndim(out) else float(out)


def _weight(market, rate_model, strategy: Strategy, info: InfoKind, t: float, y):
    if strategy.fixed_weight is not None:
        return np.full(np.shape(y), float(strategy.fixed_weight)) if np.ndim(y) else float(strategy.fixed_weight)
    return informed_weight(market, rate_model, info, t, y)


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass
class SimBatch:
    """Result of a wealth simulation.

    Per-time sums are kept for every batch so that batches merge by
    addition; full paths are stored only on request. Log-wealth is reported
    relative to ``x0``.
    """

    grid: PathGrid
    strategy: Strategy
    n_paths: int
    seed: int
    stream_id: int
    x0: float
    sum_y: np.ndarray
    sum_y2: np.ndarray
    sum_lnx: np.ndarray
    sum_lnx2: np.ndarray
    log_growth: np.ndarray
    terminal_rate: np.ndarray
    datum: np.ndarray | None = None
    y_paths: np.ndarray | None = None
    lnx_paths: np.ndarray | None = None
    d_br: np.ndarray | None = None
    d_bs: np.ndarray | None = None
    rate_integral: np.ndarray | None = None

    def merge(self, other: "SimBatch") -> "SimBatch":
        def cat(a, b):
            return None if a is None or b is None else np.concatenate((a, b))
        return replace(
            self,
            n_paths=self.n_paths + other.n_paths,
            sum_y=self.sum_y + other.sum_y,
            sum_y2=self.sum_y2 + other.sum_y2,
            sum_lnx=self.sum_lnx + other.sum_lnx,
            sum_lnx2=self.sum_lnx2 + other.sum_lnx2,
            log_growth=np.concatenate((self.log_growth, other.log_growth)),
            terminal_rate=np.concatenate((self.terminal_rate, other.terminal_rate)),
            datum=cat(self.datum, other.datum),
            y_paths=cat(self.y_paths, other.y_paths),
            lnx_paths=cat(self.lnx_paths, other.lnx_paths),
            d_br=cat(self.d_br, other.d_br),
            d_bs=cat(self.d_bs, other.d_bs),
            rate_integral=cat(self.rate_integral, other.rate_integral),
        )

    @property
    def times(self) -> np.ndarray:
        return self.grid.times

    def _stderr(self, s1, s2):
        n = self.n_paths
        if n < 2:
            return np.full_like(s1, np.nan)
        var = np.maximum(s2 - s1 * s1 / n, 0.0) / (n - 1)
        return np.sqrt(var / n)

    @property
    def mean_y(self) -> np.ndarray:
        return self.sum_y / self.n_paths

    @property
    def stderr_y(self) -> np.ndarray:
        return self._stderr(self.sum_y, self.sum_y2)

    @property
    def mean_log_wealth(self) -> np.ndarray:
        return self.sum_lnx / self.n_paths

    @property
    def stderr_log_wealth(self) -> np.ndarray:
        return self._stderr(self.sum_lnx, self.sum_lnx2)

    @property
    def mean_log_growth(self) -> float:
        """Batch mean of ``ln(X_end / x0)``."""
        return float(np.mean(self.log_growth))

    @property
    def stderr_log_growth(self) -> float:
        if self.n_paths < 2:
            return math.nan
        return float(np.std(self.log_growth, ddof=1) / math.sqrt(self.n_paths))

    @property
    def terminal_log_wealth(self) -> np.ndarray:
        return math.log(self.x0) + self.log_growth


def strategy_grid(rate_model: RateModel, info: InfoKind, t_max: float, n_steps: int, *,
                  ratio: float | None = None, floor: float = 1e-5) -> PathGrid:
    """Default simulation grid for a strategy holding ``info``.

    ``n_steps`` uniform steps on ``[0, T]``, cut at ``t_max``. With
    information about ``Y_T`` the steps also shrink like ``ratio (T - t)``
    because the weight steepens near ``T``: like ``1/(T - t)`` everywhere
    for exact information (default ratio 0.005), and only in a shrinking
    band around the threshold for indicators (default ratio 0.05).
    """
    if isinstance(info, NoInfo):
        n = max(1, int(math.ceil(n_steps * t_max / rate_model.T - 1e-9)))
        return PathGrid.uniform(t_max, n)
    if ratio is None:
        ratio = 0.005 if isinstance(info, Terminal) else 0.05
    return PathGrid.geometric(rate_model.T, n_steps, t_max, ratio=ratio, floor=floor)


def _law_info(strategies: Sequence[Strategy], law: InfoKind | None) -> InfoKind:
    infos = [s.info for s in strategies if not isinstance(s.info, NoInfo)]
    if law is None:
        terminal = [i for i in infos if isinstance(i, Terminal)]
        law = terminal[0] if terminal else (infos[0] if infos else NoInfo())
    for info in infos:
        if isinstance(law, Terminal):
            if isinstance(info, Terminal) and info.y_T is not None:
                raise DomainError("strategies under a Terminal law take y_T from the simulation")
            if isinstance(info, (HalfLine, Interval)) and info.a is not None:
                raise DomainError("indicators are derived from the simulated y_T")
        elif info != law:
            raise DomainError(f"{type(info).__name__} strategy cannot be evaluated on paths drawn under {law!r}")
    return law


def _path_info(strategy_info: InfoKind, law: InfoKind, y_T: np.ndarray, datum) -> InfoKind:
    """Information object holding one realised datum per path."""
    if isinstance(strategy_info, NoInfo):
        return strategy_info
    if isinstance(strategy_info, Terminal):
        return Terminal(y_T)
    if isinstance(law, Terminal):
        if isinstance(strategy_info, HalfLine):
            return HalfLine(strategy_info.c, (y_T >= strategy_info.c).astype(np.int8))
        return Interval(strategy_info.c1, strategy_info.c2,
                        ((y_T > strategy_info.c1) & (y_T < strategy_info.c2)).astype(np.int8))
    return replace(strategy_info, a=datum)


def _draw_terminal(rate_model: RateModel, law: InfoKind, rng: np.random.Generator, n: int):
    """Insider datum and terminal rate for ``n`` paths."""
    if isinstance(law, Terminal) and law.y_T is not None:
        y_T = np.broadcast_to(np.asarray(law.y_T, dtype=float), (n,)).copy()
        return y_T, y_T
    if isinstance(rate_model, OUModel):
        if isinstance(law, (HalfLine, Interval)) and law.a is not None:
            a = np.broadcast_to(np.asarray(law.a, dtype=np.int8), (n,)).copy()
            _, y_T = _truncated_terminal(rate_model, law, a, rng)
            return a, y_T
        return sample_terminal(rate_model, law, rng, n)
    if isinstance(law, Terminal):
        marg = _rate_marginal(rate_model, rate_model.T)
        y_T = marg.mean + marg.std * rng.standard_normal(n)
        return y_T, y_T
    raise DomainError("indicator information is only available for the Vasicek model")


def _truncated_terminal(model: OUModel, law, a: np.ndarray, rng: np.random.Generator):
    """Terminal values conditioned on a prescribed indicator per path."""
    from scipy import stats

    marg = model.marginal(model.T)
    m, s = float(marg.mean), float(marg.std)
    u = rng.random(a.size)
    x = np.empty(a.size)
    hit = a == 1
    if isinstance(law, HalfLine):
        w = (law.c - m) / s
        x[hit] = stats.truncnorm.ppf(u[hit], w, np.inf)
        x[~hit] = stats.truncnorm.ppf(u[~hit], -np.inf, w)
    else:
        w1, w2 = (law.c1 - m) / s, (law.c2 - m) / s
        x[hit] = stats.truncnorm.ppf(u[hit], w1, w2)
        p_low, p_high = stats.norm.cdf(w1), stats.norm.sf(w2)
        side = rng.random(a.size) * (p_low + p_high) < p_low
        low, high = (~hit) & side, (~hit) & ~side
        x[low] = stats.truncnorm.ppf(u[low], -np.inf, w1)
        x[high] = stats.truncnorm.ppf(u[high], w2, np.inf)
    return a, m + s * x


@dataclass(frozen=True)
class _Step:
    t: float
    s: float
    h: float
    trans_w: float        # E[Y_s | Y_t] = trans_w Y_t + trans_shift
    trans_shift: float
    trans_sd: float
    beta: float           # E[dB | Y_t, Y_s] = beta (Y_s - E[Y_s | Y_t])
    resid_sd: float
    bridge: tuple | None  # (w_t, w_T, shift, sd) or None when pinned at T
    a1: float | None      # constant drift slope on the step, if any
    a2_int: float
    b2: float


def _constant_on(coef: CoefficientFn, t: float, s: float) -> float | None:
    if not coef.is_piecewise_constant:
        return None
    if any(t < b < s for b in coef.breakpoints):
        return None
    return float(coef(0.5 * (t + s)))


def _prepare_steps(model: AffineModel, times: np.ndarray, conditioned: bool) -> list[_Step]:
    steps = []
    T = model.T
    for t, s in zip(times[:-1], times[1:]):
        t, s = float(t), float(s)
        h = s - t
        p_s = psi0(model, s)
        var = p_s * p_s * delta_integral(model, t, s)
        cov = p_s * driver_integral(model, t, s)
        beta = cov / var
        resid = max(h - cov * beta, 0.0)
        bridge = None
        if conditioned and s < T * (1.0 - SINGULAR_REL):
            w_t, w_T, shift, bvar = bridge_coefficients(model, t, h)
            bridge = (w_t, w_T, shift, math.sqrt(bvar))
        a1 = _constant_on(model.a1, t, s)
        b2 = _constant_on(model.b2, t, s)
        if a1 == 0.0 or b2 is None:
            a1 = None
        steps.append(_Step(
            t, s, h,
            psi(model, t, s), p_s * nabla_integral(model, t, s), math.sqrt(var),
            beta, math.sqrt(resid), bridge,
            a1, model.a2.integral(t, s), 0.0 if b2 is None else b2,
        ))
    return steps


def _simulate_block(market, rate_model, strategies, law, steps, times, n, rng, keep_paths):
    rho = market.rho
    rho_c = math.sqrt(max(1.0 - rho * rho, 0.0))
    y0 = _initial_rate(rate_model)
    conditioned = not isinstance(law, NoInfo)
    datum, y_T = (None, None)
    if conditioned:
        datum, y_T = _draw_terminal(rate_model, law, rng, n)
    infos = [_path_info(s.info, law, y_T, datum) for s in strategies]

    n_t = times.size
    n_s = len(strategies)
    y = np.full(n, float(y0))
    lnx = np.zeros((n_s, n))
    sum_y = np.zeros(n_t)
    sum_y2 = np.zeros(n_t)
    sum_lnx = np.zeros((n_s, n_t))
    sum_lnx2 = np.zeros((n_s, n_t))
    sum_y[0] = n * y0
    sum_y2[0] = n * y0 * y0
    y_paths = lnx_paths = d_br_all = d_bs_all = None
    if keep_paths:
        y_paths = np.empty((n, n_t))
        y_paths[:, 0] = y0
        lnx_paths = np.zeros((n_s, n, n_t))
        d_br_all = np.empty((n, n_t - 1))
        d_bs_all = np.empty((n, n_t - 1))
    rate_int = np.zeros(n)

    for i, st in enumerate(steps):
        z = rng.standard_normal((3, n))
        uncond = st.trans_w * y + st.trans_shift
        if not conditioned:
            y_next = uncond + st.trans_sd * z[0]
        elif st.bridge is None:
            y_next = y_T.copy()
        else:
            w_t, w_T, shift, sd = st.bridge
            y_next = w_t * y + w_T * y_T + shift + sd * z[0]
        d_br = st.beta * (y_next - uncond) + st.resid_sd * z[1]
        d_bs = rho * d_br + rho_c * math.sqrt(st.h) * z[2]
        if st.a1 is not None:
            integral = (y_next - y - st.a2_int - st.b2 * d_br) / st.a1
        else:
            integral = 0.5 * st.h * (y + y_next)
        eta = float(market.eta(st.t))
        xi = float(market.xi(st.t))
        for j, strat in enumerate(strategies):
            pi = _weight(market, rate_model, strat, infos[j], st.t, y)
            lnx[j] += (1.0 - pi) * integral + st.h * (pi * eta - 0.5 * (pi * xi) ** 2) + pi * xi * d_bs
        y = y_next
        rate_int += integral
        sum_y[i + 1] = y.sum()
        sum_y2[i + 1] = (y * y).sum()
        sum_lnx[:, i + 1] = lnx.sum(axis=1)
        sum_lnx2[:, i + 1] = (lnx * lnx).sum(axis=1)
        if keep_paths:
            y_paths[:, i + 1] = y
            lnx_paths[:, :, i + 1] = lnx
            d_br_all[:, i] = d_br
            d_bs_all[:, i] = d_bs

    return dict(
        sum_y=sum_y, sum_y2=sum_y2, sum_lnx=sum_lnx, sum_lnx2=sum_lnx2,
        lnx=lnx, y_end=y, datum=None if datum is None else np.asarray(datum),
        y_paths=y_paths, lnx_paths=lnx_paths, d_br=d_br_all, d_bs=d_bs_all,
        rate_integral=rate_int if keep_paths else None,
    )


def _resolve_threads(threads: int | None) -> int:
    if threads is None:
        return 1
    if threads < 1:
        raise DomainError("threads must be a positive integer")
    return int(threads)


def simulate_strategies(
    market: MarketModel,
    rate_model: RateModel,
    strategies: Sequence[Strategy],
    grid: PathGrid,
    n_paths: int,
    stream: RngStream,
    *,
    law: InfoKind | None = None,
    keep_paths: bool = False,
    threads: int | None = None,
    block_size: int = DEFAULT_BLOCK,
) -> list[SimBatch]:
    """Simulate several strategies on one common set of paths.

    The paths are drawn under ``law`` (by default the most informative
    information among the strategies): first the insider datum and a terminal
    rate consistent with it, then exact bridge steps towards that terminal
    rate. Rate-driver increments are drawn from their exact conditional law
    given the two rate endpoints of each step. Coarser strategies see the
    same paths, which makes their differences common-random-number
    estimates.

    Blocks of ``block_size`` paths use their own substream and are merged in
    block order, so the result does not depend on ``threads``.
    """
    if n_paths < 1:
        raise DomainError("n_paths must be at least 1")
    if not strategies:
        raise DomainError("need at least one strategy")
    T = rate_model.T
    market.validate(T)
    law = _law_info(strategies, law)
    times = grid.times if isinstance(grid, PathGrid) else PathGrid(grid).times
    if times[-1] > T * (1.0 + 1e-14):
        raise DomainError("grid extends past the model horizon")
    uses_terminal = isinstance(law, Terminal) or any(
        isinstance(s.info, Terminal) and s.fixed_weight is None for s in strategies)
    if uses_terminal and T - times[-1] < SINGULAR_REL * T:
        raise SingularTime("exact terminal information needs a grid that stops before T")
    grid = grid if isinstance(grid, PathGrid) else PathGrid(times)

    model = as_affine(rate_model)
    steps = _prepare_steps(model, times, not isinstance(law, NoInfo))
    sizes = [block_size] * (n_paths // block_size)
    if n_paths % block_size:
        sizes.append(n_paths % block_size)

    def run(b):
        rng = stream.substream(b).generator()
        return _simulate_block(market, rate_model, strategies, law, steps, times, sizes[b], rng, keep_paths)

    n_threads = _resolve_threads(threads)
    if n_threads == 1 or len(sizes) == 1:
        results = [run(b) for b in range(len(sizes))]
    else:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            results = list(pool.map(run, range(len(sizes))))

    def gather(key):
        parts = [r[key] for r in results]
        return None if parts[0] is None else np.concatenate(parts)

    batches = []
    for j, strat in enumerate(strategies):
        def total(key):
            acc = results[0][key] if results[0][key].ndim == 1 else results[0][key][j]
            acc = acc.copy()
            for r in results[1:]:
                acc += r[key] if r[key].ndim == 1 else r[key][j]
            return acc
        log_growth = np.concatenate([r["lnx"][j] for r in results])
        if not np.all(np.isfinite(log_growth)):
            raise NonFinite(f"strategy {strat.label} produced non-finite log-wealth; refine the grid near T")
        batches.append(SimBatch(
            grid=grid, strategy=strat, n_paths=n_paths, seed=stream.seed, stream_id=stream.stream_id,
            x0=market.x0,
            sum_y=total("sum_y"), sum_y2=total("sum_y2"),
            sum_lnx=total("sum_lnx"), sum_lnx2=total("sum_lnx2"),
            log_growth=log_growth,
            terminal_rate=gather("y_end"),
            datum=gather("datum"),
            y_paths=gather("y_paths"),
            lnx_paths=None if not keep_paths else np.concatenate([r["lnx_paths"][j] for r in results]),
            d_br=gather("d_br"), d_bs=gather("d_bs"),
            rate_integral=gather("rate_integral"),
        ))
    return batches


def simulate_wealth(
    market: MarketModel,
    rate_model: RateModel,
    strategy: Strategy,
    grid: PathGrid,
    n_paths: int,
    stream: RngStream,
    **kwargs,
) -> SimBatch:
    """Simulate one strategy on paths drawn under its own information."""
    return simulate_strategies(market, rate_model, [strategy], grid, n_paths, stream, **kwargs)[0]


# ---------------------------------------------------------------------------
# Expected log-utility
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureConfig:
    """Accuracy settings for expected-utility integrals.

    ``refinement`` multiplies the starting panel count of every adaptive
    integral and the Gauss-Hermite order, so two levels give an
    independent-ish self-consistency check.
    """

    tol: float = 1e-11
    rtol: float = 1e-10
    gh_order: int = 24
    refinement: int = 1
    inner_tol: float = 1e-13


def log_utility_integrand(market, rate_model, strategy: Strategy, info: InfoKind, t: float, y, weight=None):
    """Expected instantaneous log-growth given the state.

    ``y + pi (eta - y) + pi xi (rho / vol) corr - (pi xi)^2 / 2``, where
    ``corr`` is the information drift seen by the holder of ``info``. At
    the optimal weight it equals ``y + (pi xi)^2 / 2``.
    """
    y = np.asarray(y, dtype=float)
    pi = _weight(market, rate_model, strategy, info, t, y) if weight is None else weight
    xi = float(market.xi(t))
    eta = float(market.eta(t))
    out = y + pi * (eta - y) - 0.5 * (pi * xi) ** 2
    if not isinstance(info, NoInfo):
        corr = information_drift(rate_model, info, t, y)
        out = out + pi * xi * market.rho / rate_vol(rate_model, t) * corr
    return out


def _expected_integrand(market, rate_model, strategy, t: float, cfg: QuadratureConfig) -> float:
    info = strategy.info
    marg = _rate_marginal(rate_model, t)
    m, sd = float(marg.mean), float(marg.std)
    order = cfg.gh_order * cfg.refinement

    if isinstance(info, NoInfo):
        x, w = gauss_hermite(order)
        return float(w @ log_utility_integrand(market, rate_model, strategy, info, t, m + sd * x))

    if isinstance(info, Terminal):
        x, w = gauss_hermite(order)
        y = m + sd * x
        mean_T, sd_T = _terminal_given(rate_model, t, y)
        y_T = np.asarray(mean_T)[:, None] + sd_T * x[None, :]
        yy = np.broadcast_to(y[:, None], y_T.shape)
        vals = log_utility_integrand(market, rate_model, strategy, Terminal(y_T.ravel()), t, yy.ravel())
        return float(w @ vals.reshape(y_T.shape) @ w)

    if not isinstance(rate_model, OUModel):
        raise DomainError("indicator information is only available for the Vasicek model")

    def branches(y):
        p1 = indicator_probability(rate_model, info, t, y)
        one = log_utility_integrand(market, rate_model, strategy, replace(info, a=1), t, y)
        zero = log_utility_integrand(market, rate_model, strategy, replace(info, a=0), t, y)
        return p1 * one + (1.0 - p1) * zero

    if sd == 0.0:
        return float(branches(np.array([m]))[0])
    return _gaussian_expectation(branches, m, sd, _thresholds(rate_model, info, t), cfg)


def _thresholds(model: OUModel, info, t: float) -> list[float]:
    """Current-rate values at which the indicator's conditional law is centred."""
    tau = model.T - t
    cuts = [info.c] if isinstance(info, HalfLine) else [info.c1, info.c2]
    # mean(tau, y) = c  <=>  y = mu + (c - mu) e^{k tau}
    return [model.mu + (c - model.mu) * math.exp(model.k * tau) for c in cuts]


def _gaussian_expectation(g: Callable, m: float, sd: float, centres: Sequence[float], cfg: QuadratureConfig,
                          width: float | None = None) -> float:
    """``E[g(m + sd X)]`` for standard normal ``X`` by adaptive quadrature.

    ``centres`` mark rate values where ``g`` changes quickly; ``width`` is the
    scale of that change in rate units.
    """
    breaks = []
    for c in centres:
        xc = (c - m) / sd
        if not math.isfinite(xc):
            continue
        breaks.append(xc)
        if width is not None and width > 0:
            for f in (0.5, 2.0, 8.0):
                breaks.extend((xc - f * width / sd, xc + f * width / sd))
    breaks.extend((-12.0, 12.0))

    def f(x):
        return normal_pdf(x) * g(m + sd * x)

    return quadrature(f, -math.inf, math.inf, cfg.refinement, tol=cfg.inner_tol, rtol=1e-12,
                      breakpoints=[b for b in breaks if -40 < b < 40], max_intervals=20000)


def analytic_log_utility(
    market: MarketModel,
    rate_model: RateModel,
    strategy: Strategy,
    t_max: float,
    config: QuadratureConfig | None = None,
) -> float:
    """Expected ``ln(X_{t_max} / x0)`` of a strategy, by quadrature.

    The time integral of the expected instantaneous log-growth is computed
    adaptively. At each time the expectation is Gauss-Hermite over the joint
    Gaussian law of ``(Y_t, Y_T)`` for exact or no information, and adaptive
    quadrature over ``Y_t`` with indicator branches weighted by
    ``P(A | Y_t)`` otherwise.
    """
    cfg = config or QuadratureConfig()
    T = rate_model.T
    market.validate(T)
    if not 0 < t_max <= T * (1 + 1e-14):
        raise DomainError(f"t_max must lie in (0, T], got {t_max}")
    if isinstance(strategy.info, Terminal) and T - t_max < SINGULAR_REL * T:
        raise SingularTime("exact terminal information diverges at T; truncate t_max")

    def f(ts):
        return np.array([_expected_integrand(market, rate_model, strategy, float(t), cfg) for t in ts])

    breaks = []
    gap = T - t_max
    if isinstance(strategy.info, Terminal):
        # integrand grows like 1/(T - t): split on a geometric ladder
        tau = 2.0 * gap
        while tau < T:
            breaks.append(T - tau)
            tau *= 2.0
    t_end = min(t_max, T)
    return quadrature(f, 0.0, t_end, cfg.refinement, tol=cfg.tol, rtol=cfg.rtol,
                      breakpoints=breaks, max_intervals=20000)


# ---------------------------------------------------------------------------
# Concavity
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConcavityWitness:
    weight: float
    delta: float
    lower: float
    center: float
    upper: float

    @property
    def holds(self) -> bool:
        return self.center > self.lower and self.center > self.upper


def concavity_check(market, rate_model, strategy: Strategy, t: float, y_t: float, delta: float) -> ConcavityWitness:
    """Evaluate the log-growth integrand at ``pi* - delta``, ``pi*`` and ``pi* + delta``."""
    if not delta > 0:
        raise DomainError("delta must be positive")
    info = strategy.info
    pi = float(informed_weight(market, rate_model, info, t, y_t))
    vals = [float(log_utility_integrand(market, rate_model, strategy, info, t, y_t, weight=pi + d))
            for d in (-delta, 0.0, delta)]
    return ConcavityWitness(pi, delta, *vals)
