"""Estimation and testing of Kronecker-product correlation structures."""

from __future__ import annotations

__version__ = "0.1.0"

from .design import FactorDims, build_design, theta_to_correlation, theta_to_omega
from .errors import DataError, KronfitError, NumericalError
from .infer import overid_test, wald_joint
from .matfun import SpdMatrix, spd_exp, spd_log
from .mdest import WeightSpec, md_estimate
from .moments import Panel, Regime, compute_moments
from .qmle import LikelihoodContext, one_step

__all__ = [
    "DataError",
    "FactorDims",
    "KronfitError",
    "LikelihoodContext",
    "NumericalError",
    "Panel",
    "Regime",
    "SpdMatrix",
    "WeightSpec",
    "__version__",
    "build_design",
    "compute_moments",
    "md_estimate",
    "one_step",
    "overid_test",
    "spd_exp",
    "spd_log",
    "theta_to_correlation",
    "theta_to_omega",
    "wald_joint",
]
