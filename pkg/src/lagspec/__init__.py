"""Order-indexed spectral causality testing for multivariate time series.

The library builds whitened cross-covariance (directed coherence)
operators indexed by lag, summarizes their spectra, and tests whether
those summaries vary across lags using circular-shift randomization.
It also ships a rolling monitoring pipeline and a Monte Carlo harness.
"""

__version__ = "0.1.0"

from .embedding import (DeformationSet, EmbeddingSpec, FeatureMap,
                        TimeSeriesPanel, circular_shift, embed, residualize)
from .errors import (ConfigError, DataError, DimensionError,
                     InsufficientDataError, LagspecError, NumericalError)
from .inference import (FamilyEngine, RandomizationPlan, TestResult,
                        detect_episodes, randomization_test,
                        randomization_test_multi, two_sided_p, upper_p)
from .linalg import inv_sqrt_psd, sample_covariance, sym_eig, symmetrize
from .monitor import MonitorConfig, RollingReport, WindowStats, run_monitor
from .operators import (DirectedCoherence, OperatorFamily, OperatorKind,
                        build_family, coherence_from_blocks)
from .simulation import (DgpSpec, McResult, PipelineConfig, generate,
                         granger_f_test, run_mc)
from .spectral import (DispersionResult, SpectralSummary, dispersion_measure,
                       dispersion_scalar, effective_rank, lss,
                       spectral_measure_distance)

__all__ = [
    "__version__",
    "ConfigError", "DataError", "DimensionError", "InsufficientDataError",
    "LagspecError", "NumericalError",
    "TimeSeriesPanel", "FeatureMap", "DeformationSet", "EmbeddingSpec",
    "embed", "circular_shift", "residualize",
    "symmetrize", "sym_eig", "inv_sqrt_psd", "sample_covariance",
    "OperatorKind", "DirectedCoherence", "OperatorFamily",
    "build_family", "coherence_from_blocks",
    "SpectralSummary", "DispersionResult", "lss", "dispersion_scalar",
    "dispersion_measure", "spectral_measure_distance", "effective_rank",
    "RandomizationPlan", "TestResult", "FamilyEngine",
    "randomization_test", "randomization_test_multi",
    "upper_p", "two_sided_p", "detect_episodes",
    "MonitorConfig", "WindowStats", "RollingReport", "run_monitor",
    "DgpSpec", "PipelineConfig", "McResult", "generate",
    "granger_f_test", "run_mc",
]
