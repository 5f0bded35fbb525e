"""Discrete causal variational principles on the generalized space F."""

from .fgeometry import ModelParams, FPoint, make_point, point_from_matrix, zero_point
from .measures import ConstraintSpec, DiscreteMeasure, action_S, action_T
from .solver import SolverConfig, SolveResult, minimize, estimate_cmin
from .verifier import VerifyConfig, ELCertificate, certify, certificate_checks

__version__ = "0.1.0"

__all__ = [
    "ModelParams",
    "FPoint",
    "make_point",
    "point_from_matrix",
    "zero_point",
    "ConstraintSpec",
    "DiscreteMeasure",
    "action_S",
    "action_T",
    "SolverConfig",
    "SolveResult",
    "minimize",
    "estimate_cmin",
    "VerifyConfig",
    "ELCertificate",
    "certify",
    "certificate_checks",
]
