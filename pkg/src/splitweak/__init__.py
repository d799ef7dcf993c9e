"""Splitting schemes for SDEs and SPDEs with weak errors in weighted norms."""

__version__ = "0.1.0"

from .errors import CapabilityError, ConfigurationError, InconclusiveResultError, NumericalOverflowError
from .flows import FlowConfig, diffusion_flow, drift_flow
from .models import BUILTIN_MODELS, Payoff, SplitModel, apply_A_semigroup, exact_expectation, make_builtin, stratonovich_drift
from .splitting import (
    SchemeSpec,
    affine_step_map,
    euler_scheme,
    nv_scheme,
    propagate_moments_affine,
    simulate_path,
    step,
)
from .weights import WeightFunction, eval_weight, polynomial_weight, weighted_sup_norm

__all__ = [
    "CapabilityError", "ConfigurationError", "InconclusiveResultError", "NumericalOverflowError",
    "FlowConfig", "diffusion_flow", "drift_flow",
    "BUILTIN_MODELS", "Payoff", "SplitModel", "apply_A_semigroup", "exact_expectation", "make_builtin",
    "stratonovich_drift",
    "SchemeSpec", "affine_step_map", "euler_scheme", "nv_scheme", "propagate_moments_affine", "simulate_path", "step",
    "WeightFunction", "eval_weight", "polynomial_weight", "weighted_sup_norm",
]
