"""Wearable-sensor feature extraction and social-context analysis.

The pipeline turns raw wristband exports (pulse wave, 3-axis
acceleration, skin conductance, skin temperature) into per-interval
physiological features, then asks how those features separate social
contexts: paired univariate statistics, participant-held-out random
forests, and density clustering. A seeded synthetic-session generator
with known ground truth closes the loop for verification.
"""

from .config import (
    AnalysisConfig,
    PipelineConfig,
    RunConfig,
    derive_seed,
    load_config,
    rng_for,
)
from .errors import (
    ConfigError,
    CtxSenseError,
    DataContentError,
    DataFormatError,
)

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "AnalysisConfig",
    "PipelineConfig",
    "RunConfig",
    "derive_seed",
    "load_config",
    "rng_for",
    "CtxSenseError",
    "ConfigError",
    "DataFormatError",
    "DataContentError",
]
