"""Principal causal effects and PN/PS with negative-control proxies."""

from .data import Dataset, Stratum
from .dgp import SimConfig, generate, oracle_truth
from .estimate import EstimateReport, Evidence, PipelineConfig, run_pipeline
from .numerics.rng import SeedSpec

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "Stratum",
    "SimConfig",
    "generate",
    "oracle_truth",
    "PipelineConfig",
    "Evidence",
    "EstimateReport",
    "run_pipeline",
    "SeedSpec",
    "__version__",
]
