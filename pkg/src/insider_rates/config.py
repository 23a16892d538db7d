"""JSON experiment configuration: parsing, validation and defaults.

Every block is checked for unknown keys, and every error names the offending
field together with its line in the source document.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from .affine_diffusion import AffineModel, CoefficientFn
from .errors import ConfigError, InsiderRatesError
from .portfolio import MarketModel, QuadratureConfig
from .vasicek import HalfLine, Interval, NoInfo, OUModel, Terminal

_SCHEMA: dict[str, Any] = {
    "rate": {"model", "k", "mu", "sigma", "y0", "T", "a1", "a2", "b2", "r0"},
    "market": {"eta", "xi", "rho", "x0", "s0"},
    "info": {"kind", "c", "c1", "c2"},
    "strategy": {"fixed_weight"},
    "grid": {"n_steps", "refinement", "ratio", "epsilon"},
    "mc": {"n_paths", "seed", "block_size"},
    "voi": {"method", "epsilon", "epsilons", "paired", "n_steps"},
    "divergence": {"epsilons"},
    "quadrature": {"tol", "rtol", "gh_order", "refinement"},
    "certify": {"levels", "base_panels", "tolerance"},
    "test_hooks": {"corrupt_sign"},
    "output": None,
}


@dataclass(frozen=True)
class GridSpec:
    n_steps: int = 2000
    refinement: str = "geometric"
    ratio: float | None = None
    epsilon: float | None = None


@dataclass(frozen=True)
class MCSpec:
    n_paths: int = 100_000
    seed: int = 0
    block_size: int = 16384


@dataclass(frozen=True)
class VoISpec:
    method: str = "analytic"
    epsilon: float | None = None
    epsilons: tuple[float, ...] | None = None
    paired: bool = True
    n_steps: int | None = None


@dataclass(frozen=True)
class CertifySpec:
    levels: int = 4
    base_panels: int = 2
    tolerance: float = 1e-9


@dataclass(frozen=True)
class ExperimentConfig:
    rate: OUModel | AffineModel
    market: MarketModel
    info: NoInfo | Terminal | HalfLine | Interval
    grid: GridSpec
    mc: MCSpec
    voi: VoISpec
    divergence_epsilons: tuple[float, ...] | None
    quadrature: QuadratureConfig
    certify: CertifySpec
    fixed_weight: float | None = None
    corrupt_sign: bool = False
    output: str = "."
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    def resolved(self) -> dict:
        """Plain-data echo of the configuration with defaults filled in."""
        return {
            "rate": _describe_rate(self.rate),
            "market": {
                "eta": _describe_coef(self.market.eta),
                "xi": _describe_coef(self.market.xi),
                "rho": self.market.rho,
                "x0": self.market.x0,
                "s0": self.market.s0,
            },
            "info": _describe_info(self.info),
            "strategy": {"fixed_weight": self.fixed_weight},
            "grid": asdict(self.grid),
            "mc": asdict(self.mc),
            "voi": {**asdict(self.voi), "epsilons": None if self.voi.epsilons is None else list(self.voi.epsilons)},
            "divergence": {"epsilons": None if self.divergence_epsilons is None else list(self.divergence_epsilons)},
            "quadrature": asdict(self.quadrature),
            "certify": asdict(self.certify),
            "test_hooks": {"corrupt_sign": self.corrupt_sign},
            "output": self.output,
        }


# ---------------------------------------------------------------------------
# Error location
# ---------------------------------------------------------------------------


class _Locator:
    """Maps a dotted key path to the line of its first appearance in the text."""

    def __init__(self, text: str, source: str) -> None:
        self.text = text
        self.source = source

    def line(self, path: tuple[str, ...]) -> int | None:
        pos = 0
        found = None
        for key in path:
            m = re.compile(r'"%s"\s*:' % re.escape(key)).search(self.text, pos)
            if m is None:
                break
            pos = m.start()
            found = pos
        if found is None:
            return None
        return self.text.count("\n", 0, found) + 1

    def error(self, path: tuple[str, ...], message: str) -> ConfigError:
        line = self.line(path)
        where = f"{self.source}:{line}" if line is not None else self.source
        return ConfigError(f"{where}: {'.'.join(path)}: {message}")


# ---------------------------------------------------------------------------
# Field parsers
# ---------------------------------------------------------------------------


def _number(loc: _Locator, path, value, *, positive=False, nonneg=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise loc.error(path, f"expected a number, got {value!r}")
    if not math.isfinite(value):
        raise loc.error(path, "must be finite")
    if integer and not float(value).is_integer():
        raise loc.error(path, f"expected an integer, got {value!r}")
    if positive and not value > 0:
        raise loc.error(path, f"must be positive, got {value!r}")
    if nonneg and not value >= 0:
        raise loc.error(path, f"must be non-negative, got {value!r}")
    return int(value) if integer else float(value)


def _block(loc: _Locator, path, value, allowed) -> dict:
    if not isinstance(value, dict):
        raise loc.error(path, "expected an object")
    unknown = sorted(set(value) - set(allowed))
    if unknown:
        raise loc.error(path + (unknown[0],), "unknown key")
    return value


def _coef(loc: _Locator, path, value) -> CoefficientFn:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return CoefficientFn.constant(_number(loc, path, value))
    if isinstance(value, dict):
        _block(loc, path, value, {"constant", "piecewise", "polynomial"})
        if len(value) != 1:
            raise loc.error(path, "give exactly one of constant, piecewise, polynomial")
        kind, spec = next(iter(value.items()))
        try:
            if kind == "constant":
                return CoefficientFn.constant(_number(loc, path + (kind,), spec))
            if kind == "polynomial":
                if not isinstance(spec, list) or not spec:
                    raise loc.error(path + (kind,), "expected a non-empty list of coefficients")
                return CoefficientFn.polynomial([_number(loc, path + (kind,), c) for c in spec])
            _block(loc, path + (kind,), spec, {"breakpoints", "values"})
            bps = [_number(loc, path + (kind, "breakpoints"), b) for b in spec.get("breakpoints", [])]
            vals = [_number(loc, path + (kind, "values"), v) for v in spec.get("values", [])]
            return CoefficientFn.piecewise(bps, vals)
        except InsiderRatesError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise loc.error(path + (kind,), str(exc)) from None
    raise loc.error(path, f"expected a number or coefficient object, got {value!r}")


def _rate(loc: _Locator, raw) -> OUModel | AffineModel:
    path = ("rate",)
    _block(loc, path, raw, _SCHEMA["rate"])
    model = raw.get("model", "vasicek")
    if model == "vasicek":
        extra = sorted(set(raw) & {"a1", "a2", "b2", "r0"})
        if extra:
            raise loc.error(path + (extra[0],), "not a Vasicek parameter")
        vals = {}
        for key, default in (("k", None), ("mu", 0.0), ("sigma", None), ("y0", 0.0), ("T", None)):
            if key not in raw:
                if default is None:
                    raise loc.error(path + (key,), "required")
                vals[key] = default
            else:
                vals[key] = _number(loc, path + (key,), raw[key], positive=key in ("k", "sigma", "T"))
        return OUModel(**vals)
    if model == "affine":
        extra = sorted(set(raw) & {"k", "mu", "sigma", "y0"})
        if extra:
            raise loc.error(path + (extra[0],), "not an affine-model parameter")
        for key in ("a1", "a2", "b2", "T"):
            if key not in raw:
                raise loc.error(path + (key,), "required")
        coefs = {key: _coef(loc, path + (key,), raw[key]) for key in ("a1", "a2", "b2")}
        T = _number(loc, path + ("T",), raw["T"], positive=True)
        r0 = _number(loc, path + ("r0",), raw.get("r0", 0.0))
        try:
            return AffineModel(coefs["a1"], coefs["a2"], coefs["b2"], r0, T)
        except InsiderRatesError as exc:
            raise loc.error(path + ("b2",), str(exc)) from None
    raise loc.error(path + ("model",), f"expected 'vasicek' or 'affine', got {model!r}")


def _market(loc: _Locator, raw, T: float) -> MarketModel:
    path = ("market",)
    _block(loc, path, raw, _SCHEMA["market"])
    for key in ("eta", "xi", "rho"):
        if key not in raw:
            raise loc.error(path + (key,), "required")
    eta = _coef(loc, path + ("eta",), raw["eta"])
    xi = _coef(loc, path + ("xi",), raw["xi"])
    rho = _number(loc, path + ("rho",), raw["rho"])
    if not -1.0 <= rho <= 1.0:
        raise loc.error(path + ("rho",), f"must lie in [-1, 1], got {rho}")
    x0 = _number(loc, path + ("x0",), raw.get("x0", 1.0), positive=True)
    s0 = _number(loc, path + ("s0",), raw.get("s0", 1.0), positive=True)
    market = MarketModel(eta, xi, rho, x0, s0)
    try:
        market.validate(T)
    except InsiderRatesError as exc:
        raise loc.error(path + ("xi",), str(exc)) from None
    return market


def _info(loc: _Locator, raw):
    path = ("info",)
    if raw is None:
        return NoInfo()
    _block(loc, path, raw, _SCHEMA["info"])
    kind = raw.get("kind", "none")
    allowed = {"none": set(), "terminal": set(), "halfline": {"c"}, "interval": {"c1", "c2"}}
    if kind not in allowed:
        raise loc.error(path + ("kind",), f"expected one of {sorted(allowed)}, got {kind!r}")
    extra = sorted(set(raw) - {"kind"} - allowed[kind])
    if extra:
        raise loc.error(path + (extra[0],), f"not used by {kind} information")
    for key in allowed[kind]:
        if key not in raw:
            raise loc.error(path + (key,), "required")
    if kind == "none":
        return NoInfo()
    if kind == "terminal":
        return Terminal()
    if kind == "halfline":
        return HalfLine(_number(loc, path + ("c",), raw["c"]))
    c1 = _number(loc, path + ("c1",), raw["c1"])
    c2 = _number(loc, path + ("c2",), raw["c2"])
    if not c1 < c2:
        raise loc.error(path + ("c2",), f"interval needs c1 < c2, got ({c1}, {c2})")
    return Interval(c1, c2)


def _epsilons(loc: _Locator, path, value, T: float) -> tuple[float, ...]:
    if not isinstance(value, list) or not value:
        raise loc.error(path, "expected a non-empty list")
    eps = tuple(_number(loc, path, e, positive=True) for e in value)
    if any(e >= T for e in eps):
        raise loc.error(path, "every epsilon must be smaller than T")
    if any(b >= a for a, b in zip(eps[:-1], eps[1:])):
        raise loc.error(path, "epsilons must be strictly decreasing")
    return eps


def parse_config(data: dict, text: str | None = None, source: str = "<config>") -> ExperimentConfig:
    """Validate a decoded JSON document."""
    loc = _Locator(text if text is not None else json.dumps(data, indent=2), source)
    if not isinstance(data, dict):
        raise loc.error((), "top level must be an object")
    unknown = sorted(set(data) - set(_SCHEMA))
    if unknown:
        raise loc.error((unknown[0],), "unknown key")
    for key in ("rate", "market"):
        if key not in data:
            raise loc.error((key,), "required block missing")

    rate = _rate(loc, data["rate"])
    T = rate.T
    market = _market(loc, data["market"], T)
    info = _info(loc, data.get("info"))
    if isinstance(rate, AffineModel) and isinstance(info, (HalfLine, Interval)):
        raise loc.error(("info", "kind"), "indicator information needs the Vasicek rate model")

    fixed = None
    if "strategy" in data:
        blk = _block(loc, ("strategy",), data["strategy"], _SCHEMA["strategy"])
        if blk.get("fixed_weight") is not None:
            fixed = _number(loc, ("strategy", "fixed_weight"), blk["fixed_weight"])

    g = _block(loc, ("grid",), data.get("grid", {}), _SCHEMA["grid"])
    refinement = g.get("refinement", "geometric")
    if refinement not in ("uniform", "geometric"):
        raise loc.error(("grid", "refinement"), f"expected 'uniform' or 'geometric', got {refinement!r}")
    ratio = g.get("ratio")
    if ratio is not None:
        ratio = _number(loc, ("grid", "ratio"), ratio, positive=True)
        if ratio >= 1:
            raise loc.error(("grid", "ratio"), "must be below 1")
    g_eps = g.get("epsilon")
    if g_eps is not None:
        g_eps = _number(loc, ("grid", "epsilon"), g_eps, positive=True)
        if g_eps >= T:
            raise loc.error(("grid", "epsilon"), "must be smaller than T")
    grid = GridSpec(_number(loc, ("grid", "n_steps"), g.get("n_steps", 2000), positive=True, integer=True),
                    refinement, ratio, g_eps)

    m = _block(loc, ("mc",), data.get("mc", {}), _SCHEMA["mc"])
    seed = _number(loc, ("mc", "seed"), m.get("seed", 0), nonneg=True, integer=True)
    if seed >= 2 ** 64:
        raise loc.error(("mc", "seed"), "must fit in 64 bits")
    mc = MCSpec(_number(loc, ("mc", "n_paths"), m.get("n_paths", 100_000), positive=True, integer=True),
                seed,
                _number(loc, ("mc", "block_size"), m.get("block_size", 16384), positive=True, integer=True))

    v = _block(loc, ("voi",), data.get("voi", {}), _SCHEMA["voi"])
    method = v.get("method", "analytic")
    if method not in ("analytic", "monte-carlo"):
        raise loc.error(("voi", "method"), f"expected 'analytic' or 'monte-carlo', got {method!r}")
    v_eps = v.get("epsilon")
    if v_eps is not None:
        v_eps = _number(loc, ("voi", "epsilon"), v_eps, positive=True)
        if v_eps >= T:
            raise loc.error(("voi", "epsilon"), "must be smaller than T")
    v_list = None if v.get("epsilons") is None else _epsilons(loc, ("voi", "epsilons"), v["epsilons"], T)
    paired = v.get("paired", True)
    if not isinstance(paired, bool):
        raise loc.error(("voi", "paired"), "expected true or false")
    v_steps = v.get("n_steps")
    if v_steps is not None:
        v_steps = _number(loc, ("voi", "n_steps"), v_steps, positive=True, integer=True)
    voi = VoISpec(method, v_eps, v_list, paired, v_steps)

    d = _block(loc, ("divergence",), data.get("divergence", {}), _SCHEMA["divergence"])
    d_list = None if d.get("epsilons") is None else _epsilons(loc, ("divergence", "epsilons"), d["epsilons"], T)

    q = _block(loc, ("quadrature",), data.get("quadrature", {}), _SCHEMA["quadrature"])
    base = QuadratureConfig()
    quad = QuadratureConfig(
        tol=_number(loc, ("quadrature", "tol"), q.get("tol", base.tol), positive=True),
        rtol=_number(loc, ("quadrature", "rtol"), q.get("rtol", base.rtol), nonneg=True),
        gh_order=_number(loc, ("quadrature", "gh_order"), q.get("gh_order", base.gh_order), positive=True, integer=True),
        refinement=_number(loc, ("quadrature", "refinement"), q.get("refinement", base.refinement),
                           positive=True, integer=True),
    )

    c = _block(loc, ("certify",), data.get("certify", {}), _SCHEMA["certify"])
    levels = _number(loc, ("certify", "levels"), c.get("levels", 4), positive=True, integer=True)
    if levels < 3:
        raise loc.error(("certify", "levels"), "need at least 3 levels")
    cert = CertifySpec(levels,
                       _number(loc, ("certify", "base_panels"), c.get("base_panels", 2), positive=True, integer=True),
                       _number(loc, ("certify", "tolerance"), c.get("tolerance", 1e-9), nonneg=True))

    h = _block(loc, ("test_hooks",), data.get("test_hooks", {}), _SCHEMA["test_hooks"])
    corrupt = h.get("corrupt_sign", False)
    if not isinstance(corrupt, bool):
        raise loc.error(("test_hooks", "corrupt_sign"), "expected true or false")

    output = data.get("output", ".")
    if not isinstance(output, str) or not output:
        raise loc.error(("output",), "expected a directory path")

    return ExperimentConfig(rate, market, info, grid, mc, voi, d_list, quad, cert, fixed, corrupt, output, data)


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a JSON experiment file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}: invalid JSON: {exc.msg}") from None
    return parse_config(data, text, str(path))


# ---------------------------------------------------------------------------
# Echo helpers
# ---------------------------------------------------------------------------


def _describe_coef(c: CoefficientFn):
    if c.kind == "constant":
        return float(c.values[0])
    if c.kind == "polynomial":
        return {"polynomial": [float(v) for v in c.values]}
    return {"piecewise": {"breakpoints": [float(b) for b in c.breakpoints], "values": [float(v) for v in c.values]}}


def _describe_rate(rate) -> dict:
    if isinstance(rate, OUModel):
        return {"model": "vasicek", "k": rate.k, "mu": rate.mu, "sigma": rate.sigma, "y0": rate.y0, "T": rate.T}
    return {"model": "affine", "a1": _describe_coef(rate.a1), "a2": _describe_coef(rate.a2),
            "b2": _describe_coef(rate.b2), "r0": rate.r0, "T": rate.T}


def _describe_info(info) -> dict:
    if isinstance(info, Terminal):
        return {"kind": "terminal"}
    if isinstance(info, HalfLine):
        return {"kind": "halfline", "c": info.c}
    if isinstance(info, Interval):
        return {"kind": "interval", "c1": info.c1, "c2": info.c2}
    return {"kind": "none"}
