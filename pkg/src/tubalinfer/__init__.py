"""Low-tubal-rank tensor completion with confidence intervals for linear forms."""

__version__ = "0.1.0"

from .debias import (
    DebiasState,
    InferenceReport,
    LinearFunctionalMask,
    estimate_sigma,
    estimate_sM,
    infer,
    run_algorithm1,
)
from .init_solver import SolverConfig, complete
from .sampling import GeneratorConfig, ObservationSet, generate_ground_truth, sample_observations
from .tensor_core import conj_transpose, tprod
from .tsvd import TsvdFactors, truncate_rank, tsvd, tubal_rank

__all__ = [
    "__version__",
    "DebiasState",
    "InferenceReport",
    "LinearFunctionalMask",
    "estimate_sigma",
    "estimate_sM",
    "infer",
    "run_algorithm1",
    "SolverConfig",
    "complete",
    "GeneratorConfig",
    "ObservationSet",
    "generate_ground_truth",
    "sample_observations",
    "conj_transpose",
    "tprod",
    "TsvdFactors",
    "truncate_rank",
    "tsvd",
    "tubal_rank",
]
