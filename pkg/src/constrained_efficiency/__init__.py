"""Efficient estimation of Euclidean parameters under equality constraints."""

from .constraint import (
    ConstraintSystem,
    LinearConstraint,
    circle,
    equal_components,
    eval_constraint,
    jacobian,
    null_space_basis,
)
from .errors import (
    ConvergenceError,
    EstimationError,
    InputError,
    NotPositiveDefiniteError,
    NumericalError,
    SingularConstraintError,
)
from .estimator import (
    ConstrainedResult,
    EfficientEstimate,
    InfluenceSample,
    constrained_bound,
    constrained_bound_nullspace,
    constrained_influence,
    efficient_score,
    estimate_constrained,
    linear_constrained_estimate,
    one_step_update,
    project_to_manifold,
)

__version__ = "0.1.0"

__all__ = [
    "ConstraintSystem",
    "LinearConstraint",
    "circle",
    "equal_components",
    "eval_constraint",
    "jacobian",
    "null_space_basis",
    "ConvergenceError",
    "EstimationError",
    "InputError",
    "NotPositiveDefiniteError",
    "NumericalError",
    "SingularConstraintError",
    "ConstrainedResult",
    "EfficientEstimate",
    "InfluenceSample",
    "constrained_bound",
    "constrained_bound_nullspace",
    "constrained_influence",
    "efficient_score",
    "estimate_constrained",
    "linear_constrained_estimate",
    "one_step_update",
    "project_to_manifold",
]
