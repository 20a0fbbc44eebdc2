"""Cauchy combination test for arbitrarily dependent p-values."""
from .corr import (
    CorrelationMatrix,
    ar1_correlation,
    banded_from_ar1,
    build_model,
    exchangeable_correlation,
    factorize,
    load_correlation,
    polydecay_correlation,
    save_correlation,
    singular_correlation,
)
from .errors import (
    CCTError,
    ConfigurationError,
    DegenerateMatrixError,
    DomainError,
    NotCorrelationMatrixError,
    UnstableEstimateWarning,
    ValidationError,
)
from .mc import (
    PowerConfig,
    SizeConfig,
    critical_value,
    empirical_size,
    mc_pvalue_oracle,
    power_grid,
    power_trend_sparse,
)
from .rng import RngStream
from .stats import (
    Calibration,
    CombinedResult,
    Method,
    PValueVector,
    cauchy_transform,
    cct_combine,
    cct_pvalue,
    cct_statistic,
    norm_sf2,
    zscores_to_pvalues,
)

__version__ = "0.1.0"
