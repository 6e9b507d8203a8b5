"""Koopman-eigenfunction fusion of heterogeneous measurements.

Two sensor sets observing the same dynamical system are each analysed with
extended dynamic mode decomposition.  Eigenfunctions with matching eigenvalues
serve as sensor-independent coordinates, which lets a measurement from one set
be mapped to an estimate of the other.
"""

from .edmd import KoopmanDecomposition, fit
from .errors import (CoverageError, IntegrationError, KoopfuseError, MatchError, NumericalError,
                     OutsideHullError, RegistrationError, ValidationError)
from .fhn import FhnParams, TrajectoryConfig, generate_trajectories
from .fusion import FusionModel, build_fusion_model, fuse, match_eigenfunctions
from .pipeline import ErrorReport, RunConfig, reproduce

__version__ = "0.1.0"

__all__ = [
    "CoverageError", "ErrorReport", "FhnParams", "FusionModel", "IntegrationError", "KoopfuseError",
    "KoopmanDecomposition", "MatchError", "NumericalError", "OutsideHullError", "RegistrationError",
    "RunConfig", "TrajectoryConfig", "ValidationError", "build_fusion_model", "fit", "fuse",
    "generate_trajectories", "match_eigenfunctions", "reproduce",
]
