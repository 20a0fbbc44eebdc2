"""Cauchy combination test and the sparse-alternative competitors.

Scalar operations take a :class:`PValueVector`; the ``*_batch`` variants
take an ``(n, d)`` array with one replicate per row and are what the Monte
Carlo engine uses.  Both paths share the same arithmetic.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ConfigurationError, DomainError

ONE_MINUS_EPS = 1.0 - 2.0**-53
EPS_CLAMP = 2.0**-53
TINY = np.finfo(np.float64).tiny

_SPLIT = 134217729.0  # 2**27 + 1
_SQRT_HALF = math.sqrt(0.5)


class Method(str, enum.Enum):
    CCT = "CCT"
    MINP = "MinP"
    HC = "HC"
    BJ = "BJ"

    @classmethod
    def parse(cls, name) -> "Method":
        if isinstance(name, cls):
            return name
        for m in cls:
            if str(name).lower() == m.value.lower():
                return m
        valid = ", ".join(m.value for m in cls)
        raise ConfigurationError(f"unknown method {name!r}; valid methods: {valid}")


class Calibration(str, enum.Enum):
    ANALYTIC = "analytic"
    MONTE_CARLO = "monte_carlo"


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PValueVector:
    """Validated p-values with nonnegative weights summing to one.

    Parameters
    ----------
    values : array_like
        Individual p-values, each strictly inside (0, 1).
    weights : array_like, optional
        Nonnegative weights summing to 1 (within 1e-12). Defaults to 1/d.
    clamp : bool
        Map values outside (0, 1) onto ``[2**-53, 1 - 2**-53]`` instead of
        raising. Non-finite values are always rejected.
    """

    values: np.ndarray
    weights: np.ndarray = None
    clamp: bool = field(default=False, compare=False)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if v.size == 0:
            raise DomainError("p-value vector is empty")
        bad = ~np.isfinite(v)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DomainError(f"p-value at index {i} is not finite: {v[i]!r}")
        if self.clamp:
            v = np.clip(v, EPS_CLAMP, ONE_MINUS_EPS)
        else:
            _check_open_unit(v)
        if self.weights is None:
            w = np.full(v.size, 1.0 / v.size)
        else:
            w = np.array(self.weights, dtype=np.float64).reshape(-1)
            if w.size != v.size:
                raise ConfigurationError(
                    f"weights have length {w.size} but there are {v.size} p-values"
                )
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise ConfigurationError("weights must be finite and nonnegative")
            total = math.fsum(w)
            if abs(total - 1.0) > 1e-12:
                raise ConfigurationError(f"weights sum to {total!r}, expected 1")
        v.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "weights", w)

    @property
    def d(self) -> int:
        return int(self.values.size)

    def __len__(self) -> int:
        return self.d


@dataclass(frozen=True)
class CombinedResult:
    statistic: float
    p_value: float
    method: Method
    d: int
    calibration: Calibration = Calibration.ANALYTIC
    diagnostics: dict = field(default_factory=dict, compare=False)

    def as_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "method": self.method.value,
            "d": self.d,
            "calibration": self.calibration.value,
            **self.diagnostics,
        }


def _check_open_unit(p: np.ndarray) -> None:
    bad = ~((p > 0.0) & (p < 1.0))
    if bad.any():
        i = int(np.flatnonzero(bad.reshape(-1))[0])
        raise DomainError(
            f"p-value at index {i} is outside (0, 1): {p.reshape(-1)[i]!r}"
        )


def _as_pvector(pv) -> PValueVector:
    return pv if isinstance(pv, PValueVector) else PValueVector(pv)


# ---------------------------------------------------------------------------
# special functions
# ---------------------------------------------------------------------------

def cauchy_transform(p):
    """Map p-values to standard Cauchy variates, ``tan((0.5 - p) * pi)``.

    Folded onto ``q = min(p, 1 - p)`` (exact for p > 0.5) and evaluated as
    ``cot(pi q)`` for q < 0.25, where ``0.5 - q`` would cancel, and as
    ``tan((0.5 - q) pi)`` otherwise; the sign is restored afterwards.
    """
    scalar = np.ndim(p) == 0
    p = np.asarray(p, dtype=np.float64)
    _check_open_unit(p)
    upper = p > 0.5
    q = np.where(upper, 1.0 - p, p)
    small = q < 0.25
    t = np.tan(np.where(small, np.pi * q, (0.5 - q) * np.pi))
    with np.errstate(divide="ignore"):
        t = np.where(small, 1.0 / t, t)
    t = np.where(upper, -t, t)
    return float(t) if scalar else t


def cct_pvalue(t):
    """Standard Cauchy upper-tail probability ``1/2 - arctan(t)/pi``.

    Uses ``arctan(1/t)/pi`` for ``t > 1`` (and the mirrored form for
    ``t < -1``) so tiny tail probabilities keep their relative precision.
    """
    scalar = np.ndim(t) == 0
    t = np.asarray(t, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise DomainError("Cauchy p-value requires a finite statistic")
    with np.errstate(divide="ignore", over="ignore"):
        inv = np.arctan(1.0 / t) / np.pi
    p = np.where(t > 1.0, inv, np.where(t < -1.0, 1.0 + inv, 0.5 - np.arctan(t) / np.pi))
    return float(p) if scalar else p


def norm_sf2(x):
    """Two-sided normal tail ``2 * (1 - Phi(|x|)) = erfc(|x| / sqrt 2)``.

    Computed as ``erfcx(z) * exp(-x**2 / 2)`` with ``x**2`` split exactly
    into a double-double, so no rounding of the exponent argument leaks
    into the result.  Relative error stays below 1e-15 while the result
    is a normal float (``|x| <~ 37.5``); beyond that the result is within
    one subnormal ulp.
    """
    scalar = np.ndim(x) == 0
    x = np.abs(np.asarray(x, dtype=np.float64))
    hi = x * x
    c = _SPLIT * x
    xh = c - (c - x)
    xl = x - xh
    lo = ((xh * xh - hi) + 2.0 * xh * xl) + xl * xl
    hi *= 0.5
    lo *= 0.5
    # hi - 40 is exact for hi >= 40; defers underflow to a single rounding
    big = hi > 700.0
    with np.errstate(over="ignore", under="ignore"):
        core = np.exp(-(hi - np.where(big, 40.0, 0.0))) * special.erfcx(x * _SQRT_HALF)
        core *= np.exp(-lo)
        out = np.where(big, core * math.exp(-40.0), core)
    return float(out) if scalar else out


def zscores_to_pvalues(x) -> PValueVector:
    """Two-sided p-values of z-scores, with equal weights attached.

    ``x = 0`` gives p = 1, which is clamped to ``1 - 2**-53``; results that
    underflow are clamped to the smallest normal float.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size == 0 or not np.all(np.isfinite(x)):
        raise DomainError("z-scores must be a nonempty vector of finite values")
    return PValueVector(zscores_to_pvalues_batch(x))


def zscores_to_pvalues_batch(x: np.ndarray) -> np.ndarray:
    return np.clip(norm_sf2(x), TINY, ONE_MINUS_EPS)


# ---------------------------------------------------------------------------
# Cauchy combination test
# ---------------------------------------------------------------------------

def cct_statistic(pv) -> float:
    """Weighted sum of Cauchy-transformed p-values (exactly rounded sum)."""
    pv = _as_pvector(pv)
    t = cauchy_transform(pv.values)
    return math.fsum(pv.weights * t)


def cct_combine(pv) -> CombinedResult:
    pv = _as_pvector(pv)
    stat = cct_statistic(pv)
    return CombinedResult(stat, cct_pvalue(stat), Method.CCT, pv.d, Calibration.ANALYTIC)


def neumaier_rowsum(a: np.ndarray) -> np.ndarray:
    """Compensated (Neumaier) summation across columns, vectorized over rows."""
    s = a[:, 0].copy()
    comp = np.zeros_like(s)
    for j in range(1, a.shape[1]):
        x = a[:, j]
        t = s + x
        big = np.abs(s) >= np.abs(x)
        comp += np.where(big, (s - t) + x, (x - t) + s)
        s = t
    return s + comp


def cct_statistic_batch(p: np.ndarray, weights=None) -> np.ndarray:
    """Row-wise CCT statistic of an ``(n, d)`` array of p-values.

    ``weights`` is either None (equal), a length-d vector, or an
    ``(n, d)`` array of per-row weights.
    """
    p = np.atleast_2d(p)
    t = cauchy_transform(p)
    if weights is None:
        t *= 1.0 / p.shape[1]
    else:
        t *= weights
    return neumaier_rowsum(t)


# ---------------------------------------------------------------------------
# minimum p-value
# ---------------------------------------------------------------------------

def minp_statistic(pv) -> float:
    """Smallest p-value; weights are ignored."""
    return float(_as_pvector(pv).values.min())


def minp_pvalue_independent(pmin: float, d: int) -> float:
    """``1 - (1 - pmin)**d``, the exact calibration under independence."""
    if not 0.0 < pmin < 1.0:
        raise DomainError(f"pmin must lie in (0, 1), got {pmin!r}")
    if int(d) < 1:
        raise ConfigurationError(f"d must be >= 1, got {d!r}")
    return -math.expm1(int(d) * math.log1p(-pmin))


def minp_batch(p: np.ndarray) -> np.ndarray:
    return np.atleast_2d(p).min(axis=1)


# ---------------------------------------------------------------------------
# higher criticism and Berk-Jones
# ---------------------------------------------------------------------------

def _check_d(d: int, name: str) -> None:
    if d < 2:
        raise ConfigurationError(f"{name} needs at least 2 p-values, got {d}")


def hc_batch(p: np.ndarray, sorted_: bool = False) -> np.ndarray:
    """Higher criticism over the first half of the order statistics.

    For ``i <= d // 2`` the standardized gap
    ``sqrt(d) (i/d - p_(i)) / sqrt(p_(i) (1 - p_(i)))`` is maximized over
    indices with ``1/d <= p_(i) <= 1/2``; rows where no index qualifies
    use every ``i <= d // 2``.
    """
    p = np.atleast_2d(p)
    d = p.shape[1]
    _check_d(d, "higher criticism")
    m = d // 2
    ps = (p if sorted_ else np.sort(p, axis=1))[:, :m]
    i = np.arange(1, m + 1) / d
    z = math.sqrt(d) * (i - ps) / np.sqrt(ps * (1.0 - ps))
    ok = (ps >= 1.0 / d) & (ps <= 0.5)
    restricted = np.where(ok, z, -np.inf).max(axis=1)
    return np.where(ok.any(axis=1), restricted, z.max(axis=1))


def bj_batch(p: np.ndarray, sorted_: bool = False) -> np.ndarray:
    """One-sided Berk-Jones: ``max d * KL(i/d || p_(i))`` over ``i <= d // 2``
    with ``p_(i) < i/d``; zero when no index qualifies."""
    p = np.atleast_2d(p)
    d = p.shape[1]
    _check_d(d, "Berk-Jones")
    m = d // 2
    ps = (p if sorted_ else np.sort(p, axis=1))[:, :m]
    a = np.arange(1, m + 1) / d
    kl = a * np.log(a / ps) + (1.0 - a) * (np.log1p(-a) - np.log1p(-ps))
    return np.where(ps < a, d * kl, 0.0).max(axis=1)


def hc_statistic(pv) -> float:
    pv = _as_pvector(pv)
    _check_d(pv.d, "higher criticism")
    return float(hc_batch(pv.values[None, :])[0])


def bj_statistic(pv) -> float:
    pv = _as_pvector(pv)
    _check_d(pv.d, "Berk-Jones")
    return float(bj_batch(pv.values[None, :])[0])


# ---------------------------------------------------------------------------
# dispatch used by the Monte Carlo engine
# ---------------------------------------------------------------------------

def statistic(method, pv) -> float:
    method = Method.parse(method)
    return {
        Method.CCT: cct_statistic,
        Method.MINP: minp_statistic,
        Method.HC: hc_statistic,
        Method.BJ: bj_statistic,
    }[method](pv)


def statistics_batch(p: np.ndarray, methods, weights=None) -> dict:
    """All requested statistics from one ``(n, d)`` p-value array."""
    methods = [Method.parse(m) for m in methods]
    out = {}
    ps = None
    for m in methods:
        if m is Method.CCT:
            out[m] = cct_statistic_batch(p, weights)
        elif m is Method.MINP:
            out[m] = minp_batch(p)
        else:
            if ps is None:
                ps = np.sort(p, axis=1)
            out[m] = (hc_batch if m is Method.HC else bj_batch)(ps, sorted_=True)
    return out


def extremeness(method, stat):
    """Orient a statistic so larger always means stronger evidence."""
    return -stat if Method.parse(method) is Method.MINP else stat
