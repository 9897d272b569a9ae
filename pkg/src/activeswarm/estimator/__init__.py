from .relative import (
    FrameData,
    InitialEstimate,
    PairFrame,
    PairWindow,
    RelativeEstimate,
    RelativeEstimator,
    UnobservablePairError,
    build_residuals,
    estimate_step,
    initialize,
    kind_weights,
)
from .residuals import KINDS, ResidualBlock
from .sgolay import CausalSavitzkyGolay, sg_coefficients, sg_filter
from .solver import PackedProblem, SolverReport, levenberg_marquardt, nlls_solve

__all__ = [
    "CausalSavitzkyGolay",
    "FrameData",
    "InitialEstimate",
    "KINDS",
    "PackedProblem",
    "PairFrame",
    "PairWindow",
    "RelativeEstimate",
    "RelativeEstimator",
    "ResidualBlock",
    "SolverReport",
    "UnobservablePairError",
    "build_residuals",
    "estimate_step",
    "initialize",
    "kind_weights",
    "levenberg_marquardt",
    "nlls_solve",
    "sg_coefficients",
    "sg_filter",
]
