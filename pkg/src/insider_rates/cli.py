"""Command-line front end.

``insider-rates <simulate|voi|divergence|certify> --config FILE [--out DIR]
[--seed N] [--threads N]``

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 certificate failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__
from .config import ExperimentConfig, load_config
from .errors import BoundViolation, ConfigError, DomainError, NonConvergence, NonFinite, SingularTime
from .grid import PathGrid
from .portfolio import Strategy, analytic_log_utility, simulate_wealth, strategy_grid
from .stochastic_core import RngStream
from .value_of_info import (
    FinitenessCertificate,
    finiteness_certificate,
    value_of_information,
    variance_divergence,
)
from .vasicek import HalfLine, Interval, NoInfo, OUModel, Terminal, drift_correction

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_CERTIFICATE = 4

DEFAULT_TERMINAL_EPS = 1e-3


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, str)):
        return str(x)
    x = float(x)
    if math.isnan(x):
        return "nan"
    return repr(x)


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    """RFC-4180 output with CRLF line ends and locale-free numbers."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n", quoting=csv.QUOTE_MINIMAL)
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise ValueError("ragged result table")
            w.writerow([_fmt(v) for v in row])


def _write_manifest(out: Path, command: str, cfg: ExperimentConfig, outputs: list[str]) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "seed": cfg.mc.seed,
        "config": cfg.resolved(),
        "outputs": outputs,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _info_label(info) -> str:
    return {NoInfo: "none", Terminal: "terminal", HalfLine: "halfline", Interval: "interval"}[type(info)]


def _horizon(cfg: ExperimentConfig) -> float:
    T = cfg.rate.T
    if isinstance(cfg.info, Terminal):
        eps = cfg.grid.epsilon if cfg.grid.epsilon is not None else DEFAULT_TERMINAL_EPS * T
        return T - eps
    return T if cfg.grid.epsilon is None else T - cfg.grid.epsilon


def _grid(cfg: ExperimentConfig, t_max: float) -> PathGrid:
    if cfg.grid.refinement == "uniform":
        return PathGrid.uniform(t_max, cfg.grid.n_steps)
    return strategy_grid(cfg.rate, cfg.info, t_max, cfg.grid.n_steps, ratio=cfg.grid.ratio)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(cfg: ExperimentConfig, out: Path, threads: int) -> list[str]:
    strategy = Strategy.optimal(cfg.info)
    if cfg.fixed_weight is not None:
        strategy = replace(strategy, fixed_weight=cfg.fixed_weight)
    t_max = _horizon(cfg)
    grid = _grid(cfg, t_max)
    batch = simulate_wealth(cfg.market, cfg.rate, strategy, grid, cfg.mc.n_paths, RngStream(cfg.mc.seed),
                            threads=threads, block_size=cfg.mc.block_size)
    write_csv(out / "paths.csv", ["t", "mean_Y", "stderr_Y", "mean_lnX", "stderr_lnX"],
              zip(batch.times, batch.mean_y, batch.stderr_y, batch.mean_log_wealth, batch.stderr_log_wealth))
    analytic = analytic_log_utility(cfg.market, cfg.rate, strategy, t_max, cfg.quadrature)
    write_csv(out / "summary.csv",
              ["strategy", "filtration", "info", "fixed_weight", "n_paths", "seed", "n_steps", "t_end",
               "mean_lnX_T", "stderr", "mean_log_growth", "analytic_log_growth"],
              [[strategy.label, strategy.filtration.value, _info_label(cfg.info), cfg.fixed_weight,
                cfg.mc.n_paths, cfg.mc.seed, len(batch.times) - 1, t_max,
                float(batch.mean_log_wealth[-1]), float(batch.stderr_log_wealth[-1]),
                batch.mean_log_growth, analytic]])
    return ["paths.csv", "summary.csv"]


def cmd_voi(cfg: ExperimentConfig, out: Path, threads: int) -> list[str]:
    v = cfg.voi
    if isinstance(cfg.info, Terminal):
        if v.epsilons is None:
            raise ConfigError("voi.epsilons: exact terminal information has infinite value; "
                              "give a list of truncation levels")
        eps_list: list[float | None] = list(v.epsilons)
    else:
        eps_list = [v.epsilon if v.epsilons is None else e for e in (v.epsilons or [None])]
    n_steps = v.n_steps or cfg.grid.n_steps
    rows = []
    for i, eps in enumerate(eps_list):
        rep = value_of_information(cfg.market, cfg.rate, cfg.info, method=v.method, epsilon=eps,
                                   n_paths=cfg.mc.n_paths, n_steps=n_steps,
                                   stream=RngStream(cfg.mc.seed, 2 * i), paired=v.paired,
                                   threads=threads, quad=cfg.quadrature)
        rows.append([rep.info, rep.method, eps, rep.t_max, rep.v_f, rep.v_h, rep.delta_v, rep.mc_stderr,
                     rep.n_paths])
    write_csv(out / "voi.csv",
              ["info", "method", "epsilon", "t_max", "v_f", "v_h", "delta_v", "stderr", "n_paths"], rows)
    return ["voi.csv"]


def cmd_divergence(cfg: ExperimentConfig, out: Path, threads: int) -> list[str]:
    eps = cfg.divergence_epsilons
    if eps is None:
        raise ConfigError("divergence.epsilons: required for the divergence study")
    if len(eps) < 2:
        raise ConfigError("divergence.epsilons: need at least two truncation levels")
    study = variance_divergence(cfg.market, cfg.rate, eps, cfg.quadrature)
    write_csv(out / "divergence.csv",
              ["epsilon", "value", "log_inv_eps", "variance_integral", "terminal_mean_weight"],
              zip(study.epsilons, study.values, (math.log(1.0 / e) for e in study.epsilons),
                  study.variance_integrals, study.terminal_means))
    degenerate = bool(study.degenerate or math.isnan(study.fit_r2))
    write_csv(out / "fit.csv",
              ["slope", "intercept", "r2", "degenerate", "n_points", "limit_gap"],
              [[study.fitted_slope, study.intercept, study.fit_r2, degenerate, len(study.epsilons),
                study.limit_gap]])
    return ["divergence.csv", "fit.csv"]


def _write_certificate(out: Path, cert: FinitenessCertificate) -> None:
    write_csv(out / "certificate.csv",
              ["info", "direct_integral", "bound", "margin", "i_constant", "refinement_values",
               "refinement_gaps", "panels", "tower_residual", "delta_v", "delta_v_bound", "verdict"],
              [[cert.info, cert.direct_integral, cert.bound, cert.margin, cert.i_constant,
                ";".join(_fmt(v) for v in cert.refinement_values),
                ";".join(_fmt(v) for v in cert.refinement_deltas),
                ";".join(str(p) for p in cert.panels),
                cert.tower_residual, cert.delta_v, cert.delta_v_bound, cert.verdict]])


def _corrupted_correction(model: OUModel, info):
    def corr(t, y, a):
        f = drift_correction(model, replace(info, a=a), t, y)
        return -f if a == 0 else f
    return corr


def cmd_certify(cfg: ExperimentConfig, out: Path, threads: int) -> list[str]:
    if not isinstance(cfg.info, (HalfLine, Interval)):
        raise ConfigError("info.kind: certify needs halfline or interval information")
    if not isinstance(cfg.rate, OUModel):
        raise ConfigError("rate.model: certify needs the Vasicek rate model")
    correction = _corrupted_correction(cfg.rate, cfg.info) if cfg.corrupt_sign else None
    c = cfg.certify
    try:
        cert = finiteness_certificate(cfg.market, cfg.rate, cfg.info, levels=c.levels,
                                      base_panels=c.base_panels, tolerance=c.tolerance,
                                      correction=correction)
    except BoundViolation as exc:
        if exc.certificate is not None:
            _write_certificate(out, exc.certificate)
        raise
    _write_certificate(out, cert)
    return ["certificate.csv"]


COMMANDS = {
    "simulate": cmd_simulate,
    "voi": cmd_voi,
    "divergence": cmd_divergence,
    "certify": cmd_certify,
}


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="insider-rates",
                                description="Insider portfolio experiments on a stochastic short rate.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", required=True, help="JSON experiment file")
    p.add_argument("--out", help="output directory (overrides the config's output entry)")
    p.add_argument("--seed", type=int, help="64-bit seed (overrides mc.seed)")
    p.add_argument("--threads", type=int, help="worker threads (default: $INSIDER_RATES_THREADS or 1)")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def _threads(arg: int | None) -> int:
    if arg is not None:
        value, source = arg, "--threads"
    else:
        env = os.environ.get("INSIDER_RATES_THREADS")
        if not env:
            return 1
        source = "INSIDER_RATES_THREADS"
        try:
            value = int(env)
        except ValueError:
            raise ConfigError(f"{source}: expected a positive integer, got {env!r}") from None
    if value < 1:
        raise ConfigError(f"{source}: expected a positive integer, got {value}")
    return value


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        threads = _threads(args.threads)
        cfg = load_config(args.config)
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigError("--seed: must be an unsigned 64-bit integer")
            cfg = replace(cfg, mc=replace(cfg.mc, seed=args.seed))
        out = Path(args.out if args.out is not None else cfg.output)
        out.mkdir(parents=True, exist_ok=True)
        outputs = COMMANDS[args.command](cfg, out, threads)
        _write_manifest(out, args.command, cfg, outputs)
    except ConfigError as exc:
        print(f"insider-rates: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except BoundViolation as exc:
        print(f"insider-rates: certificate FAIL: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE
    except (NonFinite, NonConvergence, SingularTime) as exc:
        print(f"insider-rates: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DomainError as exc:
        print(f"insider-rates: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
