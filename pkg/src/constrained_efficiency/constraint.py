"""Equality constraints S(theta) = 0 on a k-dimensional parameter.

A :class:`ConstraintSystem` bundles the map S: R^k -> R^d with its Jacobian,
either supplied analytically or approximated by central differences. Every
Jacobian handed to a solver is rank-checked; losing rank is an error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla

from .errors import InputError, SingularConstraintError

__all__ = [
    "ConstraintSystem",
    "LinearConstraint",
    "eval_constraint",
    "jacobian",
    "constraint_hessian",
    "numerical_rank",
    "null_space_basis",
    "circle",
    "sphere",
    "equal_components",
]

_EPS = np.finfo(np.float64).eps
_FD_STEP = np.cbrt(_EPS)

ArrayFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ConstraintSystem:
    """The constraining map S with dimensions k (parameter) and d (constraints).

    Parameters
    ----------
    dim_param : int
        k, the dimension of theta. Must be at least 2.
    dim_constraint : int
        d, the number of scalar constraints, ``1 <= d < k``.
    func : callable
        theta -> S(theta), returning a length-d array.
    jac : callable, optional
        theta -> d x k Jacobian. When omitted the Jacobian is approximated by
        central differences.
    hess : callable, optional
        theta -> d x k x k array of constraint Hessians. Only used by the
        projection solver; approximated from the Jacobian when omitted.
    name : str
        Label used in reports and error messages.
    """

    dim_param: int
    dim_constraint: int
    func: ArrayFn
    jac: ArrayFn | None = None
    hess: ArrayFn | None = None
    name: str = "custom"

    def __post_init__(self):
        if self.dim_param < 2:
            raise InputError(f"constraint dimension: k must be >= 2, got {self.dim_param}")
        if not 1 <= self.dim_constraint < self.dim_param:
            raise InputError(
                "constraint dimension: need 1 <= d < k, got "
                f"d={self.dim_constraint}, k={self.dim_param}"
            )

    @property
    def jacobian_mode(self) -> str:
        return "analytic" if self.jac is not None else "numeric"


@dataclass(frozen=True)
class LinearConstraint:
    """Affine constraint S(theta) = R^T (theta - alpha) with R of shape k x d."""

    matrix_R: np.ndarray
    offset_alpha: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        R = np.atleast_2d(np.asarray(self.matrix_R, dtype=np.float64))
        if R.ndim != 2:
            raise InputError("R must be a k x d matrix")
        k, d = R.shape
        if not 1 <= d < k:
            raise InputError(f"constraint dimension: R must be k x d with 1 <= d < k, got {k} x {d}")
        alpha = np.zeros(k) if self.offset_alpha is None else np.asarray(self.offset_alpha, dtype=np.float64)
        if alpha.shape != (k,):
            raise InputError(f"alpha must have length {k}, got shape {alpha.shape}")
        rank = numerical_rank(R)
        if rank != d:
            raise SingularConstraintError(f"R has rank {rank}, expected {d}", rank=rank)
        R.setflags(write=False)
        alpha.setflags(write=False)
        object.__setattr__(self, "matrix_R", R)
        object.__setattr__(self, "offset_alpha", alpha)

    @property
    def dim_param(self) -> int:
        return self.matrix_R.shape[0]

    @property
    def dim_constraint(self) -> int:
        return self.matrix_R.shape[1]

    def as_system(self, name: str = "linear") -> ConstraintSystem:
        R, alpha = self.matrix_R, self.offset_alpha
        k, d = R.shape
        return ConstraintSystem(
            dim_param=k,
            dim_constraint=d,
            func=lambda theta: R.T @ (theta - alpha),
            jac=lambda theta: R.T.copy(),
            hess=lambda theta: np.zeros((d, k, k)),
            name=name,
        )


def _as_point(cs: ConstraintSystem, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (cs.dim_param,):
        raise InputError(
            f"dimension mismatch: theta has shape {theta.shape}, constraint expects ({cs.dim_param},)"
        )
    return theta


def eval_constraint(cs: ConstraintSystem | LinearConstraint, theta) -> np.ndarray:
    """Evaluate S(theta) as a length-d float array."""
    if isinstance(cs, LinearConstraint):
        cs = cs.as_system()
    theta = _as_point(cs, theta)
    value = np.atleast_1d(np.asarray(cs.func(theta), dtype=np.float64))
    if value.shape != (cs.dim_constraint,):
        raise InputError(f"S returned shape {value.shape}, expected ({cs.dim_constraint},)")
    return value


def _central_difference(fn: ArrayFn, theta: np.ndarray) -> np.ndarray:
    """Stack of (fn(theta + h e_j) - fn(theta - h e_j)) / 2h along a new last axis."""
    cols = []
    for j in range(theta.size):
        h = _FD_STEP * max(1.0, abs(theta[j]))
        up, down = theta.copy(), theta.copy()
        up[j] += h
        down[j] -= h
        # the realised step differs from h by rounding
        cols.append((np.asarray(fn(up)) - np.asarray(fn(down))) / (up[j] - down[j]))
    return np.stack(cols, axis=-1)


def _raw_jacobian(cs: ConstraintSystem, theta: np.ndarray) -> np.ndarray:
    if cs.jac is not None:
        J = np.asarray(cs.jac(theta), dtype=np.float64)
    else:
        J = _central_difference(lambda t: eval_constraint(cs, t), theta)
    J = J.reshape(cs.dim_constraint, cs.dim_param)
    return J


def jacobian(cs: ConstraintSystem | LinearConstraint, theta, check_rank: bool = True) -> np.ndarray:
    """d x k Jacobian of S at theta.

    Raises
    ------
    SingularConstraintError
        If the Jacobian has numerical rank below d and ``check_rank`` is set.
    """
    if isinstance(cs, LinearConstraint):
        cs = cs.as_system()
    theta = _as_point(cs, theta)
    J = _raw_jacobian(cs, theta)
    if not np.all(np.isfinite(J)):
        raise SingularConstraintError(f"non-finite Jacobian at theta={theta.tolist()}", theta=theta)
    if check_rank:
        rank = numerical_rank(J)
        if rank < cs.dim_constraint:
            raise SingularConstraintError(
                f"constraint Jacobian has rank {rank} < d={cs.dim_constraint} at theta={theta.tolist()}",
                theta=theta,
                rank=rank,
            )
    return J


def constraint_hessian(cs: ConstraintSystem, theta) -> np.ndarray:
    """d x k x k array whose i-th slice is the Hessian of S_i at theta."""
    theta = _as_point(cs, theta)
    if cs.hess is not None:
        H = np.asarray(cs.hess(theta), dtype=np.float64)
        return H.reshape(cs.dim_constraint, cs.dim_param, cs.dim_param)
    H = _central_difference(lambda t: _raw_jacobian(cs, t), theta)
    return 0.5 * (H + np.swapaxes(H, 1, 2))


def numerical_rank(mat) -> int:
    """Number of singular values above ``max(shape) * s_max * eps``."""
    mat = np.atleast_2d(np.asarray(mat, dtype=np.float64))
    if mat.size == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    if s[0] == 0.0:
        return 0
    return int(np.sum(s > max(mat.shape) * s[0] * _EPS))


def null_space_basis(jac) -> np.ndarray:
    """Orthonormal k x (k - d) basis of the null space of a full-rank d x k matrix.

    The basis comes from a complete QR factorisation of ``jac.T``; it is
    unique only up to an orthogonal rotation of its columns.
    """
    J = np.atleast_2d(np.asarray(jac, dtype=np.float64))
    d, k = J.shape
    if d >= k:
        raise InputError(f"constraint dimension: Jacobian is {d} x {k}, need d < k")
    rank = numerical_rank(J)
    if rank != d:
        raise SingularConstraintError(f"Jacobian has rank {rank}, expected {d}", rank=rank)
    Q, _ = sla.qr(J.T, mode="full")
    return Q[:, d:]


def sphere(k: int = 2, radius: float = 1.0) -> ConstraintSystem:
    """S(theta) = |theta|^2 - radius^2."""
    r2 = float(radius) ** 2
    return ConstraintSystem(
        dim_param=k,
        dim_constraint=1,
        func=lambda t: np.array([t @ t - r2]),
        jac=lambda t: 2.0 * t[None, :],
        hess=lambda t: 2.0 * np.eye(k)[None, :, :],
        name="circle" if k == 2 else "sphere",
    )


def circle(radius: float = 1.0) -> ConstraintSystem:
    return sphere(2, radius)


def equal_components(k: int) -> LinearConstraint:
    """theta_1 = ... = theta_k, written with R spanning the complement of the ones vector.

    R is an orthonormal factor of the centring matrix ``J_k - 11^T / k``.
    """
    if k < 2:
        raise InputError("equal-components constraint needs k >= 2")
    R = null_space_basis(np.ones((1, k)))
    return LinearConstraint(R, np.zeros(k))
