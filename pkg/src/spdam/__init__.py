"""Additive regression for symmetric positive-definite matrix responses."""

from .errors import (
    BandwidthOutOfRange,
    BaseMismatch,
    DegenerateDensity,
    DimensionMismatch,
    EmptySample,
    NoConvergence,
    NotPositiveDefinite,
    NotSymmetric,
    OutOfDomain,
)
from .geometry import Geometry, LogCholesky, LogEuclidean, TangentVector, get_geometry
from .sbf import (
    AdditiveFit,
    SampleTable,
    component_to_group,
    evaluate_rmse,
    fit,
    predict,
    predict_tangent,
    select_bandwidth,
)
from .smoothing import GridSpec, KernelSpec

__version__ = "0.1.0"
