"""Marker-based motion-capture solving on a desk-scale parametric body model."""
__version__ = "0.1.0"

from .body import BodyModel, BodyParams, ParameterError, landmarks, load_model, posed_joints
from .fitter import FitConfig, FitProblem, FitResult, fit, plain_fit

__all__ = ["BodyModel", "BodyParams", "ParameterError", "landmarks", "load_model", "posed_joints",
           "FitConfig", "FitProblem", "FitResult", "fit", "plain_fit", "__version__"]
