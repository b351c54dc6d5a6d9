"""Convex and C^{1,1}_loc extensions of finite 1-jets.

Given values and gradients on a finite set, decide whether a convex
extension with locally Lipschitz gradient exists and evaluate one through
convex envelopes of paraboloid families.
"""

from .conditions import FeasibilityReport, semiglobal_constants, whitney_seminorm
from .envelope import EnvelopeEvaluator, GFunction, QuadraticBlock, SolverSettings
from .errors import CvxJetError, Infeasible, InvalidJetSet
from .extend import (ExtendOptions, ExtensionModel, build_model, extend_c1omega, extend_c11loc,
                     extend_nonconvex, extend_with_projection, model_from_dict,
                     rho_k_estimate, seminorm_bound)
from .jets import Jet, JetSet, Modulus, Subspace
from .surface import NormalData, level_set_extract, surface_from_normals

__version__ = "0.1.0"

__all__ = [
    "CvxJetError", "EnvelopeEvaluator", "ExtendOptions", "ExtensionModel", "FeasibilityReport",
    "GFunction", "Infeasible", "InvalidJetSet", "Jet", "JetSet", "Modulus", "NormalData",
    "QuadraticBlock", "SolverSettings", "Subspace", "build_model", "extend_c1omega",
    "extend_c11loc", "extend_nonconvex", "extend_with_projection", "level_set_extract",
    "model_from_dict", "rho_k_estimate", "semiglobal_constants", "seminorm_bound",
    "surface_from_normals", "whitney_seminorm",
]
