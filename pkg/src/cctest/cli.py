"""Command-line interface.

Exit status: 0 success, 2 configuration/usage error, 3 data validation error.
"""
from __future__ import annotations

import argparse
import itertools
import json
import math
import os
import sys
import warnings
from pathlib import Path

import numpy as np

from . import corr, mc, svg
from .errors import ConfigurationError, DomainError, ValidationError
from .rng import RngStream
from .stats import (
    Calibration,
    CombinedResult,
    Method,
    PValueVector,
    cct_combine,
    minp_pvalue_independent,
    statistic,
)

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3
DIGITS = 12


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _num(x) -> str:
    return f"{x:.{DIGITS}g}"


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    return mc.default_threads()


# ---------------------------------------------------------------------------
# combine
# ---------------------------------------------------------------------------

def _tokens(line: str) -> list:
    return line.replace(",", " ").split()


def read_pvalue_file(path, clamp: bool = False):
    """Parse ``p [weight]`` lines; '#' starts a comment. Returns (values, weights|None)."""
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror or e}") from None
    values, weights = [], []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = _tokens(line)
        if len(tok) > 2:
            raise DataError(f"{path}:{lineno}: expected 'p' or 'p weight', got {line!r}")
        try:
            p = float(tok[0])
        except ValueError:
            raise DataError(f"{path}:{lineno}: not a number: {tok[0]!r}") from None
        if not math.isfinite(p) or (not clamp and not 0.0 < p < 1.0):
            raise DataError(f"{path}:{lineno}: p-value {tok[0]} is outside (0, 1)")
        values.append(p)
        if len(tok) == 2:
            try:
                weights.append((lineno, float(tok[1])))
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad weight {tok[1]!r}") from None
    if not values:
        raise DataError(f"{path}: no p-values found")
    if weights and len(weights) != len(values):
        raise DataError(f"{path}: weights given on {len(weights)} of {len(values)} lines")
    return values, ([w for _, w in weights] if weights else None)


def read_weights_file(path):
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror or e}") from None
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            out.append(float(line))
        except ValueError:
            raise DataError(f"{path}:{lineno}: bad weight {line!r}") from None
    return out


def _normalize_weights(w):
    w = np.asarray(w, dtype=float)
    if not np.all(np.isfinite(w)) or np.any(w < 0) or w.sum() <= 0:
        raise DataError("weights must be nonnegative with a positive sum")
    return w / math.fsum(w)


def combine(values, weights, method: Method, clamp: bool, sigma=None,
            n_samples: int = 100_000, seed: int = 0, threads=None) -> CombinedResult:
    """CombinedResult for the CLI, including Monte Carlo calibration where needed."""
    pv = PValueVector(values, None if weights is None else _normalize_weights(weights), clamp=clamp)
    if method is Method.CCT:
        return cct_combine(pv)
    stat = statistic(method, pv)
    if method is Method.MINP and sigma is None:
        return CombinedResult(stat, minp_pvalue_independent(stat, pv.d), method, pv.d,
                              Calibration.ANALYTIC, {"reference": "independence"})
    if sigma is None:
        sigma = corr.identity(pv.d)
    if sigma.dim != pv.d:
        raise ConfigurationError(f"matrix dimension {sigma.dim} != number of p-values {pv.d}")
    est = mc.mc_pvalue_oracle(method, sigma, stat, n_samples, RngStream(seed, 0), threads)
    p = (est.exceed + 1) / (est.n_samples + 1)
    return CombinedResult(stat, p, method, pv.d, Calibration.MONTE_CARLO,
                          {"n_samples": est.n_samples, "std_error": est.std_error})


def format_result(res: CombinedResult, fmt: str) -> str:
    fields = [("method", res.method.value), ("d", res.d), ("statistic", _num(res.statistic)),
              ("p_value", _num(res.p_value)), ("calibration", res.calibration.value)]
    if fmt == "plain":
        return "".join(f"{k}: {v}\n" for k, v in fields)
    if fmt == "csv":
        return ",".join(k for k, _ in fields) + "\n" + ",".join(str(v) for _, v in fields) + "\n"
    row = {"method": res.method.value, "d": res.d, "statistic": float(_num(res.statistic)),
           "p_value": float(_num(res.p_value)), "calibration": res.calibration.value}
    return json.dumps(row) + "\n"


def cmd_combine(args) -> int:
    method = Method.parse(args.method)
    values, weights = read_pvalue_file(args.input, clamp=args.clamp)
    if args.weights and weights is None:
        weights = read_weights_file(args.weights)
    if weights is not None and len(weights) != len(values):
        raise DataError(f"{len(weights)} weights for {len(values)} p-values")
    sigma = corr.load_correlation(args.matrix) if args.matrix else None
    try:
        res = combine(values, weights, method, args.clamp, sigma, args.n, args.seed or 0,
                      _threads(args))
    except DomainError as e:
        raise DataError(str(e)) from None
    _emit(format_result(res, args.format), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# experiment configs
# ---------------------------------------------------------------------------

def _load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except OSError as e:
        raise UsageError(f"cannot read {path}: {e.strerror or e}") from None
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    return cfg


def _check_keys(cfg: dict, allowed, what: str) -> None:
    extra = sorted(set(cfg) - set(allowed))
    if extra:
        raise ConfigurationError(f"unknown {what} config key(s): {', '.join(extra)}")


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


SIZE_KEYS = ("model", "d", "rho", "bandwidth", "matrix", "cells", "n_samples", "alphas",
             "noise", "nu", "variance_deflation", "weights_mode", "seed")


def size_cells(cfg: dict) -> list:
    """Expand the matrix part of a size config into cell specs."""
    if "cells" in cfg:
        return [dict(c) for c in cfg["cells"]]
    if cfg.get("matrix"):
        return [{"matrix": cfg["matrix"]}]
    if "model" not in cfg:
        raise ConfigurationError("size config needs 'model', 'matrix' or 'cells'")
    out = []
    for m, d, rho in itertools.product(_as_list(cfg["model"]), _as_list(cfg.get("d")),
                                       _as_list(cfg.get("rho"))):
        out.append({"model": m, "d": d, "rho": rho, "bandwidth": cfg.get("bandwidth")})
    return out


def run_size(cfg: dict, seed=None, threads=None) -> list:
    _check_keys(cfg, SIZE_KEYS, "size")
    seed = int(cfg.get("seed", 0) if seed is None else seed)
    reports = []
    for i, cell in enumerate(size_cells(cfg)):
        sigma = corr.resolve_matrix(cell)
        sc = mc.SizeConfig(
            sigma,
            n_samples=int(cfg.get("n_samples", 1_000_000)),
            alphas=tuple(cfg.get("alphas", (0.1, 0.01, 0.001))),
            noise=cfg.get("noise", "gaussian"),
            nu=cfg.get("nu"),
            variance_deflation=cfg.get("variance_deflation"),
            weights_mode=cfg.get("weights_mode", "equal"),
            seed=seed,
            experiment_id=i,
        )
        reports.append(mc.empirical_size(sc, threads))
    return reports


def size_csv(reports) -> str:
    rows = [r for rep in reports for r in rep.rows()]
    return mc._write_csv(mc.SizeReport.HEADER, rows)


def size_svg(reports) -> str:
    groups = {}
    for rep in reports:
        for c in rep.cells:
            groups.setdefault(f"{c.alpha:g}", []).append(c.ratio)
    return svg.boxplot(groups, title="Empirical size / alpha", xlabel="alpha",
                       ylabel="size / alpha", reference=1.0)


def cmd_size_sim(args) -> int:
    cfg = _load_config(args.config)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        reports = run_size(cfg, args.seed, _threads(args))
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    _emit(size_csv(reports), args.out)
    if args.svg:
        Path(args.svg).write_text(size_svg(reports))
    return EXIT_OK


POWER_KEYS = ("d", "signal_fraction", "rho_grid", "alpha", "n_crit_samples", "n_power_samples",
              "methods", "signal_strength_rule", "r", "mu0", "placement", "seed", "experiment_id")


def run_power(cfg: dict, seed=None, threads=None) -> mc.PowerReport:
    _check_keys(cfg, POWER_KEYS, "power")
    cfg = dict(cfg)
    if seed is not None:
        cfg["seed"] = seed
    if "d" not in cfg or "signal_fraction" not in cfg:
        raise ConfigurationError("power config needs 'd' and 'signal_fraction'")
    if "methods" in cfg:
        cfg["methods"] = tuple(Method.parse(m) for m in cfg["methods"])
    return mc.power_grid(mc.PowerConfig(**cfg), threads)


def power_svg(rep: mc.PowerReport) -> str:
    rhos = sorted({c.rho for c in rep.cells})
    series = {}
    for c in rep.cells:
        series.setdefault(c.method, {})[c.rho] = c.power
    series = {m: [v[r] for r in rhos] for m, v in series.items()}
    return svg.line_chart(rhos, series, title="Power vs correlation", xlabel="rho",
                          ylabel="power")


def cmd_power_sim(args) -> int:
    cfg = _load_config(args.config)
    rep = run_power(cfg, args.seed, _threads(args))
    _emit(rep.to_csv(), args.out)
    if args.svg:
        Path(args.svg).write_text(power_svg(rep))
    return EXIT_OK


# ---------------------------------------------------------------------------
# crit, gen-corr
# ---------------------------------------------------------------------------

def _matrix_from_args(args) -> corr.CorrelationMatrix:
    if args.matrix:
        return corr.load_correlation(args.matrix)
    if args.model is None or args.d is None:
        raise UsageError("give --matrix PATH or --model NAME --d D [--rho R]")
    return corr.build_model(args.model, args.d, args.rho, args.bandwidth)


def cmd_crit(args) -> int:
    method = Method.parse(args.method)
    if args.analytic:
        if method is not Method.CCT:
            raise UsageError("--analytic is only available for CCT")
        c, se = mc.analytic_cct_critical_value(args.alpha), 0.0
    else:
        sigma = _matrix_from_args(args)
        c, se = mc.critical_value(method, sigma, args.alpha, args.n,
                                  RngStream(args.seed or 0, 0), _threads(args), with_se=True)
    _emit(f"critical_value: {_num(c)}\nstd_error: {_num(se)}\n", args.out)
    return EXIT_OK


def cmd_gen_corr(args) -> int:
    sigma = corr.build_model(args.model, args.d, args.rho, args.bandwidth)
    _emit(corr.format_correlation(sigma), args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed (u64)")
    common.add_argument("--threads", type=int,
                        default=int(os.environ["CCT_THREADS"]) if os.environ.get("CCT_THREADS") else None,
                        help="worker threads (default: CCT_THREADS or all cores)")
    common.add_argument("--out", default=None, help="output path (default: stdout)")
    common.add_argument("--svg", default=None, help="write an SVG chart here")

    p = argparse.ArgumentParser(prog="cctest", description="Cauchy combination test toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("combine", parents=[common], help="combine a file of p-values")
    c.add_argument("input")
    c.add_argument("--weights", default=None)
    c.add_argument("--method", default="CCT")
    c.add_argument("--clamp", action="store_true",
                   help="map p <= 0 / p >= 1 to [2^-53, 1 - 2^-53] instead of failing")
    c.add_argument("--format", choices=("plain", "json-lines", "csv"), default="plain")
    c.add_argument("--matrix", default=None, help="correlation CSV for Monte Carlo calibration")
    c.add_argument("--n", type=int, default=100_000, help="Monte Carlo samples")
    c.set_defaults(func=cmd_combine)

    s = sub.add_parser("size-sim", parents=[common], help="empirical size study")
    s.add_argument("config")
    s.set_defaults(func=cmd_size_sim)

    w = sub.add_parser("power-sim", parents=[common], help="power comparison")
    w.add_argument("config")
    w.set_defaults(func=cmd_power_sim)

    k = sub.add_parser("crit", parents=[common], help="critical value of a test")
    k.add_argument("method")
    k.add_argument("--matrix", default=None)
    k.add_argument("--model", default=None)
    k.add_argument("--d", type=int, default=None)
    k.add_argument("--rho", type=float, default=0.0)
    k.add_argument("--bandwidth", type=int, default=None)
    k.add_argument("--alpha", type=float, default=0.05)
    k.add_argument("--n", type=int, default=100_000)
    k.add_argument("--analytic", action="store_true", help="closed form (CCT only)")
    k.set_defaults(func=cmd_crit)

    g = sub.add_parser("gen-corr", parents=[common], help="write a model correlation matrix")
    g.add_argument("model", help=f"one of {', '.join(corr.MODELS)}")
    g.add_argument("--d", type=int, required=True)
    g.add_argument("--rho", type=float, required=True)
    g.add_argument("--bandwidth", type=int, default=None)
    g.set_defaults(func=cmd_gen_corr)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, DomainError) as e:
        # domain errors reaching here come from parameters, not data files
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ValidationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
