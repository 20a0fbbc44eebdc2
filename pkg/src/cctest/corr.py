"""Correlation matrices for the simulation models, factorization, samplers."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng as _rng
from .errors import (
    ConfigurationError,
    DegenerateMatrixError,
    DomainError,
    NotCorrelationMatrixError,
    ValidationError,
)

SYM_TOL = 1e-12
PSD_TOL = 1e-10
FILE_TOL = 1e-8
REJECT_EIG = -1e-6


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Dense symmetric unit-diagonal PSD matrix.

    The stored array has an exactly unit diagonal and is exactly symmetric;
    construction fails if the input is further than the stated tolerances
    from either property or has an eigenvalue below ``-psd_tol``.
    """

    entries: np.ndarray
    name: str = "custom"
    rho: float | None = None

    def __post_init__(self):
        a = np.array(self.entries, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
            raise ValidationError(f"correlation matrix must be square, got shape {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ValidationError("correlation matrix has non-finite entries")
        if np.max(np.abs(a - a.T)) > SYM_TOL:
            raise ValidationError("correlation matrix is not symmetric")
        if np.max(np.abs(np.diag(a) - 1.0)) > SYM_TOL:
            raise ValidationError("correlation matrix diagonal is not 1")
        a = 0.5 * (a + a.T)
        np.fill_diagonal(a, 1.0)
        a.setflags(write=False)
        object.__setattr__(self, "entries", a)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __array__(self, dtype=None, copy=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])

    def check_psd(self, tol: float = PSD_TOL) -> None:
        lam = self.min_eigenvalue()
        if lam < -tol:
            raise NotCorrelationMatrixError(
                f"smallest eigenvalue {lam:.3e} is below -{tol:g}; not positive semidefinite"
            )


def _distance(d: int) -> np.ndarray:
    idx = np.arange(d)
    return np.abs(idx[:, None] - idx[None, :])


def _check_d(d) -> int:
    if int(d) != d or d < 1:
        raise ConfigurationError(f"dimension must be a positive integer, got {d!r}")
    return int(d)


def ar1_correlation(d: int, rho: float) -> CorrelationMatrix:
    """AR(1) structure ``rho ** |i - j|``."""
    d = _check_d(d)
    if not abs(rho) < 1:
        raise DomainError(f"AR(1) correlation needs |rho| < 1, got {rho!r}")
    with np.errstate(under="ignore"):
        m = float(rho) ** _distance(d).astype(np.float64)
    return CorrelationMatrix(m, name="ar1", rho=float(rho))


def polydecay_correlation(d: int, rho: float) -> CorrelationMatrix:
    """Polynomial decay ``1 / (0.7 + |i - j| ** rho)`` off the diagonal."""
    d = _check_d(d)
    if not rho > 0:
        raise DomainError(f"polynomial-decay exponent must be positive, got {rho!r}")
    m = 1.0 / (0.7 + _distance(d).astype(np.float64) ** float(rho))
    np.fill_diagonal(m, 1.0)
    return CorrelationMatrix(m, name="polydecay", rho=float(rho))


def singular_correlation(d: int, rho: float) -> CorrelationMatrix:
    """Rank-deficient ``D A^T A D`` with ``A`` of shape ``(d/5, d)``.

    ``a_ij = rho ** |i - j|`` and ``D`` rescales ``A^T A`` to a unit
    diagonal, so the rank is at most ``d / 5``.
    """
    d = _check_d(d)
    if d % 5:
        raise ConfigurationError(f"singular model needs d divisible by 5, got {d}")
    if not abs(rho) < 1:
        raise DomainError(f"singular model needs |rho| < 1, got {rho!r}")
    k = d // 5
    dist = np.abs(np.arange(k)[:, None] - np.arange(d)[None, :]).astype(np.float64)
    if rho == 0:
        # only the leading k columns are nonzero
        raise DegenerateMatrixError(
            f"columns {k}..{d - 1} of A are zero at rho=0; diagonal normalization is undefined"
        )
    # D A^T A D is unchanged by positive column scaling of A; scaling each
    # column by |rho|**(nearest row distance) avoids underflow for large d.
    shift = dist.min(axis=0)
    with np.errstate(under="ignore"):
        a = np.sign(rho) ** dist * abs(float(rho)) ** (dist - shift)
    gram = a.T @ a
    diag = np.diag(gram).copy()
    s = 1.0 / np.sqrt(diag)
    m = gram * s[:, None] * s[None, :]
    m = 0.5 * (m + m.T)
    np.fill_diagonal(m, 1.0)
    return CorrelationMatrix(m, name="singular", rho=float(rho))


def exchangeable_correlation(d: int, rho: float) -> CorrelationMatrix:
    d = _check_d(d)
    if not 0 <= rho < 1:
        raise DomainError(f"exchangeable correlation needs 0 <= rho < 1, got {rho!r}")
    m = np.full((d, d), float(rho))
    np.fill_diagonal(m, 1.0)
    return CorrelationMatrix(m, name="exchangeable", rho=float(rho))


def nearest_psd_correlation(m: np.ndarray) -> np.ndarray:
    """Clip negative eigenvalues to zero, then rescale to a unit diagonal."""
    lam, v = np.linalg.eigh(0.5 * (m + m.T))
    fixed = (v * np.clip(lam, 0.0, None)) @ v.T
    s = 1.0 / np.sqrt(np.diag(fixed))
    fixed = fixed * s[:, None] * s[None, :]
    fixed = 0.5 * (fixed + fixed.T)
    np.fill_diagonal(fixed, 1.0)
    return fixed


def banded_from_ar1(d: int, rho: float, bandwidth: int) -> CorrelationMatrix:
    """AR(1) truncated to zero beyond ``|i - j| > bandwidth``.

    If truncation breaks positive semidefiniteness the result is repaired
    by :func:`nearest_psd_correlation`.
    """
    d = _check_d(d)
    if int(bandwidth) != bandwidth or bandwidth < 1:
        raise ConfigurationError(f"bandwidth must be a positive integer, got {bandwidth!r}")
    if not abs(rho) < 1:
        raise DomainError(f"banded AR(1) needs |rho| < 1, got {rho!r}")
    dist = _distance(d)
    with np.errstate(under="ignore"):
        m = np.where(dist <= bandwidth, float(rho) ** dist.astype(np.float64), 0.0)
    if bandwidth < d - 1 and np.linalg.eigvalsh(m)[0] < 0:
        m = nearest_psd_correlation(m)
    return CorrelationMatrix(m, name="banded", rho=float(rho))


MODELS = {
    "ar1": ar1_correlation,
    "polydecay": polydecay_correlation,
    "singular": singular_correlation,
    "exchangeable": exchangeable_correlation,
    "banded": banded_from_ar1,
    "identity": lambda d, rho=0.0: identity(d),
}


def build_model(name: str, d: int, rho: float, bandwidth: int | None = None) -> CorrelationMatrix:
    """Construct a named model; ``bandwidth`` is used only by ``banded``."""
    if name not in MODELS:
        raise ConfigurationError(
            f"unknown correlation model {name!r}; valid models: {', '.join(MODELS)}"
        )
    if name == "banded":
        return banded_from_ar1(d, rho, 1 if bandwidth is None else bandwidth)
    return MODELS[name](d, rho)


# ---------------------------------------------------------------------------
# factorization
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SamplerFactor:
    """``factor @ factor.T`` reproduces the correlation matrix."""

    factor: np.ndarray
    rank: int
    method: str

    @property
    def dim(self) -> int:
        return self.factor.shape[0]


def factorize(sigma) -> SamplerFactor:
    """Cholesky when well conditioned, clipped eigendecomposition otherwise.

    Cholesky is accepted only if every pivot exceeds ``1e-10``; singular and
    near-singular matrices go through ``eigh`` and keep the eigenvectors
    whose eigenvalues exceed ``d * eps * lambda_max``.

    Raises
    ------
    NotCorrelationMatrixError
        If the smallest eigenvalue is below ``-1e-6``, or the factor fails
        to reconstruct the matrix within ``1e-8``.
    """
    a = np.asarray(sigma, dtype=np.float64)
    d = a.shape[0]
    try:
        low = np.linalg.cholesky(a)
        if np.min(np.diag(low)) ** 2 > 1e-10:
            return SamplerFactor(low, d, "cholesky")
    except np.linalg.LinAlgError:
        pass
    lam, v = np.linalg.eigh(a)
    if lam[0] < REJECT_EIG:
        raise NotCorrelationMatrixError(
            f"smallest eigenvalue {lam[0]:.3e} < {REJECT_EIG:g}; not a correlation matrix"
        )
    keep = lam > max(lam[-1], 0.0) * d * np.finfo(np.float64).eps
    f = v[:, keep] * np.sqrt(lam[keep])
    err = np.max(np.abs(f @ f.T - a))
    if err > 1e-8:
        raise NotCorrelationMatrixError(f"eigen factor reconstruction error {err:.2e} > 1e-8")
    return SamplerFactor(np.ascontiguousarray(f), int(keep.sum()), "eigen")


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

def mvn_batch(factor: SamplerFactor, key, replicates, mu=None) -> np.ndarray:
    """Rows ``mu + L z`` for each replicate index; ``mu`` may be (d,) or (n, d)."""
    z = _rng.normals(key, replicates, factor.rank, _rng.NORMAL)
    x = z @ factor.factor.T
    if mu is not None:
        x += mu
    return x


def mvt_batch(factor: SamplerFactor, nu: float, key, replicates) -> np.ndarray:
    """Rows ``L z / sqrt(w / nu)`` with ``w ~ chi-square(nu)``."""
    x = mvn_batch(factor, key, replicates)
    w = _rng.chisquare(key, replicates, nu, _rng.CHISQ)
    x *= np.sqrt(nu / w)[:, None]
    return x


def sample_mvn(factor: SamplerFactor, mu, stream: _rng.RngStream) -> np.ndarray:
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    if mu.size != factor.dim:
        raise ConfigurationError(f"mean has length {mu.size}, expected {factor.dim}")
    return mvn_batch(factor, stream.key, [stream.replicate_index], mu)[0]


def sample_mvt(factor: SamplerFactor, nu: float, stream: _rng.RngStream) -> np.ndarray:
    if not nu >= 1:
        raise DomainError(f"degrees of freedom must be >= 1, got {nu!r}")
    return mvt_batch(factor, nu, stream.key, [stream.replicate_index])[0]


# ---------------------------------------------------------------------------
# CSV I/O
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


def format_correlation(sigma) -> str:
    a = np.asarray(sigma, dtype=np.float64)
    return "".join(",".join(_fmt(x) for x in row) + "\n" for row in a)


def save_correlation(sigma, path) -> None:
    Path(path).write_text(format_correlation(sigma))


def load_correlation(path) -> CorrelationMatrix:
    """Read a headerless dense CSV matrix and validate it.

    Raises
    ------
    OSError
        If the file cannot be read.
    ValidationError
        On parse failure, non-square shape, asymmetry or non-unit diagonal
        beyond 1e-8, or an eigenvalue below -1e-6.
    """
    text = Path(path).read_text()
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rows.append([float(tok) for tok in line.split(",")])
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: cannot parse {line.strip()!r}") from None
    if not rows:
        raise ValidationError(f"{path}: empty matrix file")
    d = len(rows)
    if any(len(r) != d for r in rows):
        raise ValidationError(f"{path}: matrix is not square ({d} rows)")
    a = np.array(rows)
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{path}: non-finite entries")
    asym = np.max(np.abs(a - a.T))
    if asym > FILE_TOL:
        raise ValidationError(f"{path}: not symmetric (max asymmetry {asym:.3e})")
    diag = np.max(np.abs(np.diag(a) - 1.0))
    if diag > FILE_TOL:
        raise ValidationError(f"{path}: diagonal differs from 1 (max deviation {diag:.3e})")
    a = 0.5 * (a + a.T)
    np.fill_diagonal(a, 1.0)
    lam = float(np.linalg.eigvalsh(a)[0])
    if lam < REJECT_EIG:
        raise NotCorrelationMatrixError(
            f"{path}: not positive semidefinite (smallest eigenvalue {lam:.3e})"
        )
    return CorrelationMatrix(a, name=Path(path).stem)


def resolve_matrix(spec: dict) -> CorrelationMatrix:
    """Matrix from a config mapping: ``{"matrix": path}`` or ``{"model", "d", "rho"}``."""
    if spec.get("matrix"):
        return load_correlation(spec["matrix"])
    try:
        return build_model(spec["model"], spec["d"], spec["rho"], spec.get("bandwidth"))
    except KeyError as e:
        raise ConfigurationError(f"matrix specification missing key {e.args[0]!r}") from None
    except TypeError as e:
        raise ConfigurationError(f"bad matrix specification: {e}") from None


def identity(d: int) -> CorrelationMatrix:
    return CorrelationMatrix(np.eye(_check_d(d)), name="identity")


__all__ = [
    "CorrelationMatrix",
    "SamplerFactor",
    "ar1_correlation",
    "polydecay_correlation",
    "singular_correlation",
    "exchangeable_correlation",
    "banded_from_ar1",
    "build_model",
    "factorize",
    "sample_mvn",
    "sample_mvt",
    "load_correlation",
    "save_correlation",
    "identity",
]

