"""Constraint specifications as they appear in JSON configs.

Accepted forms::

    {"type": "linear", "R": [[...], ...], "alpha": [...]}   # R is k x d
    {"type": "circle"}                                       # optional "radius"
    {"type": "cv", "c": 0.5}                                 # optional "form": "linear" | "ratio"
    {"type": "exchangeable"}                                 # all k components equal
"""

from __future__ import annotations

from typing import Any, Mapping

import numpy as np

from .constraint import ConstraintSystem, LinearConstraint, circle, equal_components
from .errors import InputError
from .models import cv_constraint

__all__ = ["constraint_from_spec", "linear_from_spec"]


def linear_from_spec(spec: Mapping[str, Any]) -> LinearConstraint:
    R = np.asarray(spec["R"], dtype=np.float64)
    if R.ndim != 2:
        raise InputError("linear constraint: R must be a k x d matrix (array of rows)")
    alpha = spec.get("alpha")
    return LinearConstraint(R, None if alpha is None else np.asarray(alpha, dtype=np.float64))


def constraint_from_spec(spec: Mapping[str, Any], k: int | None = None) -> ConstraintSystem:
    """Build a :class:`ConstraintSystem` and check it acts on k-vectors."""
    kind = spec.get("type")
    if kind == "linear":
        cs = linear_from_spec(spec).as_system()
    elif kind == "circle":
        cs = circle(float(spec.get("radius", 1.0)))
    elif kind == "cv":
        if "c" not in spec:
            raise InputError("cv constraint needs a value for 'c'")
        cs = cv_constraint(float(spec["c"]), spec.get("form", "linear"))
    elif kind == "exchangeable":
        if k is None:
            raise InputError("exchangeable constraint needs the parameter dimension")
        cs = equal_components(k).as_system(name="exchangeable")
    else:
        raise InputError(f"unknown constraint type {kind!r}")
    if k is not None and cs.dim_param != k:
        raise InputError(f"constraint dimension: constraint acts on k={cs.dim_param}, parameter has k={k}")
    return cs
