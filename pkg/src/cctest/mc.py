"""Monte Carlo engine: empirical size, critical values, power.

Replicates are generated in blocks, but every replicate reads only its own
counter-based stream, so block size and worker count never change a
result.  Blocks are reduced in replicate order and only integer counts are
summed, which keeps reports bit-identical across ``threads`` settings.
"""
from __future__ import annotations

import csv
import io
import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import rng as _rng
from .corr import CorrelationMatrix, SamplerFactor, banded_from_ar1, exchangeable_correlation
from .corr import factorize, mvn_batch, mvt_batch
from .errors import ConfigurationError, UnstableEstimateWarning
from .rng import RngStream, derive_key, sub_experiment
from .stats import (
    TINY,
    ONE_MINUS_EPS,
    Method,
    cct_pvalue,
    cct_statistic_batch,
    extremeness,
    statistics_batch,
    zscores_to_pvalues_batch,
)

log = logging.getLogger(__name__)

ALL_METHODS = (Method.CCT, Method.MINP, Method.HC, Method.BJ)


def default_threads() -> int:
    env = os.environ.get("CCT_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _block_rows(d: int) -> int:
    return int(max(1024, min(65536, 2**21 // max(d, 1))))


def _run_blocks(fn, n: int, d: int, threads: int | None):
    """Apply ``fn(replicate_indices)`` to consecutive blocks; results in order."""
    rows = _block_rows(d)
    blocks = [np.arange(a, min(a + rows, n), dtype=np.uint64) for a in range(0, n, rows)]
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(blocks) == 1:
        return [fn(b) for b in blocks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, blocks))


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _write_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# null draws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class NullModel:
    """How null p-value vectors are generated from a correlation matrix."""

    factor: SamplerFactor
    noise: str = "gaussian"
    nu: float | None = None
    variance_deflation: float | None = None
    weights_mode: str = "equal"

    def pvalues(self, key, reps, mu=None) -> np.ndarray:
        if self.noise == "gaussian":
            x = mvn_batch(self.factor, key, reps, mu)
            if self.variance_deflation is not None:
                x *= math.sqrt(self.variance_deflation)
            return zscores_to_pvalues_batch(x)
        x = mvt_batch(self.factor, self.nu, key, reps)
        if mu is not None:
            x += mu
        # marginal t_nu tail keeps individual p-values uniform under the null
        return np.clip(2.0 * special.stdtr(self.nu, -np.abs(x)), TINY, ONE_MINUS_EPS)

    def weights(self, key, reps):
        if self.weights_mode == "equal":
            return None
        e = -np.log(_rng.uniforms(key, reps, self.factor.dim, _rng.WEIGHTS))
        return e / e.sum(axis=1, keepdims=True)


def _null_model(sigma, noise="gaussian", nu=None, variance_deflation=None, weights_mode="equal"):
    f = sigma if isinstance(sigma, SamplerFactor) else factorize(sigma)
    return NullModel(f, noise, nu, variance_deflation, weights_mode)


def null_statistics(methods, sigma, n_samples: int, stream: RngStream, threads=None,
                    model: NullModel | None = None) -> dict:
    """Null statistic values for each method, shared draws, replicate order."""
    methods = [Method.parse(m) for m in methods]
    model = model or _null_model(sigma)
    key = stream.key

    def block(reps):
        p = model.pvalues(key, reps)
        return statistics_batch(p, methods, model.weights(key, reps))

    parts = _run_blocks(block, n_samples, model.factor.dim, threads)
    return {m: np.concatenate([p[m] for p in parts]) for m in methods}


# ---------------------------------------------------------------------------
# empirical size
# ---------------------------------------------------------------------------

NOISES = ("gaussian", "student_t")
WEIGHT_MODES = ("equal", "random_dirichlet")


@dataclass
class SizeConfig:
    """Null simulation of the analytic CCT p-value under ``sigma``.

    ``variance_deflation`` is the variance (not standard deviation) of the
    z-scores; values below 1 make individual p-values conservative.
    """

    sigma: CorrelationMatrix
    n_samples: int = 1_000_000
    alphas: tuple = (1e-1, 1e-2, 1e-3)
    noise: str = "gaussian"
    nu: float | None = None
    variance_deflation: float | None = None
    weights_mode: str = "equal"
    seed: int = 0
    experiment_id: int = 0
    labels: dict = field(default_factory=dict)

    def __post_init__(self):
        self.alphas = tuple(float(a) for a in self.alphas)
        if not self.alphas or any(not 0 < a < 0.5 for a in self.alphas):
            raise ConfigurationError(f"alphas must lie in (0, 0.5), got {self.alphas}")
        if int(self.n_samples) < 1:
            raise ConfigurationError("n_samples must be positive")
        self.n_samples = int(self.n_samples)
        if self.noise not in NOISES:
            raise ConfigurationError(f"noise must be one of {NOISES}, got {self.noise!r}")
        if self.noise == "student_t" and not (self.nu and self.nu >= 1):
            raise ConfigurationError("student_t noise needs nu >= 1")
        if self.variance_deflation is not None and not 0 < self.variance_deflation <= 1:
            raise ConfigurationError("variance_deflation must lie in (0, 1]")
        if self.weights_mode not in WEIGHT_MODES:
            raise ConfigurationError(f"weights_mode must be one of {WEIGHT_MODES}")
        if self.n_samples * min(self.alphas) < 100:
            warnings.warn(
                f"n_samples * min(alpha) = {self.n_samples * min(self.alphas):g} < 100; "
                "tail size estimate is unstable",
                UnstableEstimateWarning,
                stacklevel=2,
            )


@dataclass(frozen=True)
class SizeCell:
    alpha: float
    method: str
    count: int
    n_samples: int

    @property
    def empirical_size(self) -> float:
        return self.count / self.n_samples

    @property
    def ratio(self) -> float:
        return self.empirical_size / self.alpha

    @property
    def std_error(self) -> float:
        """Binomial standard error of ``ratio``."""
        return math.sqrt(self.alpha * (1 - self.alpha) / self.n_samples) / self.alpha


@dataclass
class SizeReport:
    cells: list
    n_samples: int
    seed: int
    labels: dict = field(default_factory=dict)

    HEADER = ("model", "d", "rho", "noise", "alpha", "method", "empirical_size",
              "ratio", "std_error", "n_samples", "seed")

    def cell(self, alpha, method=Method.CCT) -> SizeCell:
        for c in self.cells:
            if c.alpha == alpha and c.method == Method.parse(method).value:
                return c
        raise KeyError((alpha, method))

    def rows(self):
        lab = self.labels
        for c in self.cells:
            yield (lab.get("model", ""), lab.get("d", ""), lab.get("rho", ""),
                   lab.get("noise", ""), c.alpha, c.method, c.empirical_size,
                   c.ratio, c.std_error, c.n_samples, self.seed)

    def to_csv(self) -> str:
        return _write_csv(self.HEADER, self.rows())


def empirical_size(cfg: SizeConfig, threads: int | None = None) -> SizeReport:
    """Fraction of null replicates with analytic CCT p-value <= alpha."""
    model = _null_model(cfg.sigma, cfg.noise, cfg.nu, cfg.variance_deflation, cfg.weights_mode)
    key = derive_key(cfg.seed, cfg.experiment_id)
    alphas = np.array(cfg.alphas)

    def block(reps):
        p = model.pvalues(key, reps)
        pc = cct_pvalue(cct_statistic_batch(p, model.weights(key, reps)))
        return (pc[:, None] <= alphas[None, :]).sum(axis=0).astype(np.int64)

    counts = np.zeros(alphas.size, dtype=np.int64)
    for part in _run_blocks(block, cfg.n_samples, model.factor.dim, threads):
        counts += part
    cells = [SizeCell(float(a), Method.CCT.value, int(c), cfg.n_samples)
             for a, c in zip(cfg.alphas, counts)]
    labels = {"d": cfg.sigma.dim, "model": cfg.sigma.name,
              "rho": "" if cfg.sigma.rho is None else cfg.sigma.rho,
              "noise": cfg.noise if cfg.noise == "gaussian" else f"t{cfg.nu:g}"}
    labels.update(cfg.labels)
    return SizeReport(cells, cfg.n_samples, cfg.seed, labels)


# ---------------------------------------------------------------------------
# critical values and the brute-force p-value oracle
# ---------------------------------------------------------------------------

def _upper_index(alpha: float, n: int) -> int:
    """0-based position of the ceil((1 - alpha) n)-th order statistic."""
    return n - int(math.floor(alpha * n + 1e-9)) - 1


def quantile_from_null(method, null_stats: np.ndarray, alpha: float):
    """Upper-alpha critical value and a sectioning standard error.

    Returned in the method's natural units: for MinP the threshold is a
    p-value and rejection means ``pmin < c``.
    """
    score = np.sort(extremeness(method, np.asarray(null_stats)))
    n = score.size
    k = _upper_index(alpha, n)
    m = max(1, int(math.ceil(math.sqrt(n * alpha * (1 - alpha)))))
    se = 0.5 * (score[min(n - 1, k + m)] - score[max(0, k - m)])
    c = float(score[k])
    return float(extremeness(method, c)), float(se)


def critical_value(method, sigma, alpha: float, n_samples: int, stream: RngStream,
                   threads: int | None = None, with_se: bool = False):
    """Simulated upper-alpha null quantile of ``method`` under ``sigma``."""
    method = Method.parse(method)
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha!r}")
    if n_samples * alpha < 50:
        raise ConfigurationError(
            f"n_samples * alpha = {n_samples * alpha:g} < 50; too few samples for the quantile"
        )
    stats = null_statistics([method], sigma, int(n_samples), stream, threads)[method]
    c, se = quantile_from_null(method, stats, alpha)
    return (c, se) if with_se else c


def analytic_cct_critical_value(alpha: float) -> float:
    return math.tan((0.5 - alpha) * math.pi)


@dataclass(frozen=True)
class OracleEstimate:
    p_value: float
    std_error: float
    exceed: int
    n_samples: int


def mc_pvalue_oracle(method, sigma, observed_statistic: float, n_samples: int,
                     stream: RngStream, threads: int | None = None) -> OracleEstimate:
    """Fraction of null draws at least as extreme as ``observed_statistic``."""
    method = Method.parse(method)
    if n_samples < 10_000:
        raise ConfigurationError(f"oracle needs n_samples >= 1e4, got {n_samples}")
    model = _null_model(sigma)
    key = stream.key
    obs = extremeness(method, float(observed_statistic))

    def block(reps):
        p = model.pvalues(key, reps)
        s = extremeness(method, statistics_batch(p, [method])[method])
        return int(np.count_nonzero(s >= obs))

    k = sum(_run_blocks(block, int(n_samples), model.factor.dim, threads))
    phat = k / n_samples
    return OracleEstimate(phat, math.sqrt(phat * (1 - phat) / n_samples), k, int(n_samples))


# ---------------------------------------------------------------------------
# power
# ---------------------------------------------------------------------------

RULES = ("cube_root", "boundary", "fixed")


def signal_count(signal_fraction: float, d: int) -> int:
    return max(1, int(math.floor(signal_fraction * d + 0.5)))


def signal_strength(rule: str, d: int, s: int, r: float | None = None,
                    mu0: float | None = None) -> float:
    if rule == "cube_root":
        return math.sqrt(3.0 * math.log(d)) / s ** (1.0 / 3.0)
    if rule == "boundary":
        if r is None:
            raise ConfigurationError("boundary rule needs parameter r")
        return math.sqrt(2.0 * r * math.log(d))
    if rule == "fixed":
        if mu0 is None:
            raise ConfigurationError("fixed rule needs parameter mu0")
        return float(mu0)
    raise ConfigurationError(f"unknown signal_strength_rule {rule!r}; valid: {', '.join(RULES)}")


def _signal_means(d, s, mu0, key, reps, placement) -> np.ndarray:
    n = len(reps)
    mu = np.zeros((n, d))
    if placement == "first_s":
        mu[:, :s] = mu0
    elif placement == "random":
        u = _rng.uniforms(key, reps, d, _rng.PLACEMENT)
        pos = np.argsort(u, axis=1, kind="stable")[:, :s]
        np.put_along_axis(mu, pos, mu0, axis=1)
    else:
        raise ConfigurationError(f"placement must be 'random' or 'first_s', got {placement!r}")
    return mu


def signal_mean_vector(d: int, s: int, mu0: float, stream: RngStream,
                       placement: str = "random") -> np.ndarray:
    """Length-d mean with ``s`` entries equal to ``mu0`` and the rest zero."""
    if not 1 <= s <= d:
        raise ConfigurationError(f"need 1 <= s <= d, got s={s}, d={d}")
    return _signal_means(d, s, mu0, stream.key, [stream.replicate_index], placement)[0]


@dataclass
class PowerConfig:
    d: int
    signal_fraction: float
    rho_grid: tuple = tuple(round(0.05 * k, 2) for k in range(9))
    alpha: float = 0.05
    n_crit_samples: int = 100_000
    n_power_samples: int = 10_000
    methods: tuple = ALL_METHODS
    signal_strength_rule: str = "cube_root"
    r: float | None = None
    mu0: float | None = None
    placement: str = "random"
    seed: int = 0
    experiment_id: int = 0

    def __post_init__(self):
        self.methods = tuple(Method.parse(m) for m in self.methods)
        if not self.methods:
            raise ConfigurationError("no methods requested")
        if int(self.d) < 2:
            raise ConfigurationError("power study needs d >= 2")
        self.d = int(self.d)
        if not 0 < self.signal_fraction < 1 + 1e-12:
            raise ConfigurationError("signal_fraction must lie in (0, 1]")
        if not 0 < self.alpha < 0.5:
            raise ConfigurationError("alpha must lie in (0, 0.5)")
        if self.signal_strength_rule not in RULES:
            raise ConfigurationError(
                f"unknown signal_strength_rule {self.signal_strength_rule!r}; valid: {', '.join(RULES)}"
            )
        self.rho_grid = tuple(float(r) for r in self.rho_grid)
        self.s  # validates the rule parameters early
        self.mu_0

    @property
    def s(self) -> int:
        return signal_count(self.signal_fraction, self.d)

    @property
    def mu_0(self) -> float:
        return signal_strength(self.signal_strength_rule, self.d, self.s, self.r, self.mu0)


@dataclass(frozen=True)
class PowerCell:
    rho: float
    method: str
    rejections: int
    n_samples: int
    critical_value: float
    d: int
    s: int
    mu0: float
    alpha: float

    @property
    def power(self) -> float:
        return self.rejections / self.n_samples

    @property
    def std_error(self) -> float:
        p = self.power
        return math.sqrt(p * (1 - p) / self.n_samples)


@dataclass
class PowerReport:
    cells: list
    seed: int
    notes: list = field(default_factory=list)

    HEADER = ("d", "s", "mu0", "rho", "alpha", "method", "power", "std_error",
              "critical_value", "n_samples", "seed")

    def cell(self, method, rho=None, d=None) -> PowerCell:
        method = Method.parse(method).value
        for c in self.cells:
            if c.method == method and (rho is None or c.rho == rho) and (d is None or c.d == d):
                return c
        raise KeyError((method, rho, d))

    def rows(self):
        for c in self.cells:
            yield (c.d, c.s, c.mu0, c.rho, c.alpha, c.method, c.power, c.std_error,
                   c.critical_value, c.n_samples, self.seed)

    def to_csv(self) -> str:
        return _write_csv(self.HEADER, self.rows())


def _rejects(method, stat, crit):
    return np.count_nonzero(extremeness(method, stat) > extremeness(method, crit))


def power_grid(cfg: PowerConfig, threads: int | None = None) -> PowerReport:
    """Power of each method across exchangeable correlation levels.

    Critical values come from ``n_crit_samples`` null draws; power is the
    rejection rate over ``n_power_samples`` alternative draws.  All methods
    see the same draws, and the draw streams do not depend on ``mu0``.
    """
    d, s, mu0 = cfg.d, cfg.s, cfg.mu_0
    cells = []
    for i, rho in enumerate(cfg.rho_grid):
        factor = factorize(exchangeable_correlation(d, rho))
        model = NullModel(factor)
        crit_stream = RngStream(cfg.seed, sub_experiment(cfg.experiment_id, "crit", i))
        null = null_statistics(cfg.methods, factor, cfg.n_crit_samples, crit_stream,
                               threads, model)
        crit = {m: quantile_from_null(m, null[m], cfg.alpha)[0] for m in cfg.methods}
        key = derive_key(cfg.seed, sub_experiment(cfg.experiment_id, "power", i))

        def block(reps):
            mu = _signal_means(d, s, mu0, key, reps, cfg.placement)
            st = statistics_batch(model.pvalues(key, reps, mu), cfg.methods)
            return np.array([_rejects(m, st[m], crit[m]) for m in cfg.methods], dtype=np.int64)

        hits = np.zeros(len(cfg.methods), dtype=np.int64)
        for part in _run_blocks(block, cfg.n_power_samples, d, threads):
            hits += part
        for m, h in zip(cfg.methods, hits):
            cells.append(PowerCell(rho, m.value, int(h), cfg.n_power_samples, crit[m],
                                   d, s, mu0, cfg.alpha))
        log.debug("rho=%g done: %s", rho, hits)
    return PowerReport(cells, cfg.seed)


def power_trend_sparse(gamma: float, r: float, d_list, bandwidth: int = 3,
                       alpha: float = 0.05, n_samples: int = 10_000, rho: float = 0.5,
                       seed: int = 0, experiment_id: int = 0,
                       threads: int | None = None) -> PowerReport:
    """CCT power under banded AR(1) correlation as d grows.

    ``s = ceil(d ** gamma)`` signals of strength ``sqrt(2 r log d)`` occupy
    the leading coordinates; rejection uses the analytic Cauchy critical
    value.  Below the detection boundary ``r <= (1 - sqrt(gamma))**2`` the
    run proceeds with a warning note.
    """
    if not 0 < gamma < 0.5:
        raise ConfigurationError(f"gamma must lie in (0, 1/2), got {gamma!r}")
    notes = []
    boundary = (1 - math.sqrt(gamma)) ** 2
    if r <= boundary:
        msg = f"r={r:g} is at or below the detection boundary {boundary:.4f}"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    crit = analytic_cct_critical_value(alpha)
    cells = []
    for d in d_list:
        d = int(d)
        s = int(math.ceil(d**gamma - 1e-12))
        mu0 = math.sqrt(2.0 * r * math.log(d))
        model = NullModel(factorize(banded_from_ar1(d, rho, bandwidth)))
        key = derive_key(seed, sub_experiment(experiment_id, "trend", d))

        def block(reps, d=d, s=s, mu0=mu0, model=model, key=key):
            mu = _signal_means(d, s, mu0, key, reps, "first_s")
            t = cct_statistic_batch(model.pvalues(key, reps, mu))
            return int(np.count_nonzero(t > crit))

        hits = sum(_run_blocks(block, int(n_samples), d, threads))
        cells.append(PowerCell(rho, Method.CCT.value, hits, int(n_samples), crit, d, s, mu0, alpha))
    return PowerReport(cells, seed, notes)
