"""Matrix denoising by optimal singular value shrinkage and tree-adapted wavelet shrinkage."""

from .errors import EowsError, InputError, NumericError
from .matcore import Metrics, SvdTriplet, metrics, mse, read_matrix, subspace_inner, svd, write_matrix
from .pipeline import EowsConfig, EowsResult, run
from .spectre import ShrinkTarget, SpikeEstimates, eoptshrink
from .treegeo import EmdParams, PartitionTree, questionnaire

__version__ = "0.1.0"

__all__ = [
    "EowsError",
    "InputError",
    "NumericError",
    "Metrics",
    "SvdTriplet",
    "metrics",
    "mse",
    "read_matrix",
    "subspace_inner",
    "svd",
    "write_matrix",
    "EowsConfig",
    "EowsResult",
    "run",
    "ShrinkTarget",
    "SpikeEstimates",
    "eoptshrink",
    "EmdParams",
    "PartitionTree",
    "questionnaire",
]
