"""Efficient estimation under equality constraints.

Given an efficient estimate ``theta_hat`` of theta in the unconstrained model
with information estimate ``info_hat``, the constrained estimator is built in
two stages:

1. one-step correction
   ``theta* = theta_hat - I^-1 J^T (J I^-1 J^T)^-1 S(theta_hat)``
   with ``J`` the constraint Jacobian at ``theta_hat``;
2. Euclidean projection of ``theta*`` onto the zero set of S.

The constrained information bound is ``I^-1 - I^-1 J^T (J I^-1 J^T)^-1 J I^-1``,
equivalently ``L (L^T I L)^-1 L^T`` for any basis L of the null space of J.

All inverses are realised as Cholesky or LU solves.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .constraint import (
    ConstraintSystem,
    LinearConstraint,
    constraint_hessian,
    eval_constraint,
    jacobian,
    null_space_basis,
    numerical_rank,
)
from .errors import InputError, NotPositiveDefiniteError, SingularConstraintError

__all__ = [
    "EfficientEstimate",
    "ConstrainedResult",
    "InfluenceSample",
    "ProjectionDiagnostics",
    "one_step_update",
    "project_to_manifold",
    "estimate_constrained",
    "constrained_bound",
    "constrained_bound_nullspace",
    "influence_projection",
    "efficient_score",
    "constrained_influence",
    "linear_constrained_estimate",
    "linear_constrained_estimate_nullspace",
]

RESIDUAL_TOL = 1e-10
MAX_ITER = 100
MAX_HALVINGS = 30


def _cholesky(info: np.ndarray, what: str = "information matrix"):
    try:
        return sla.cho_factor(info, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NotPositiveDefiniteError(f"{what} is not positive definite") from exc


def _check_spd(info, what: str = "information matrix") -> np.ndarray:
    info = np.atleast_2d(np.asarray(info, dtype=np.float64))
    if info.ndim != 2 or info.shape[0] != info.shape[1]:
        raise InputError(f"{what} must be square, got shape {info.shape}")
    if not np.all(np.isfinite(info)):
        raise InputError(f"{what} has non-finite entries")
    scale = np.max(np.abs(info))
    if np.max(np.abs(info - info.T)) > 1e-10 * max(scale, np.finfo(float).tiny):
        raise NotPositiveDefiniteError(f"{what} is not symmetric")
    if scale == 0.0 or np.linalg.eigvalsh(info)[0] <= 0.0:
        raise NotPositiveDefiniteError(f"{what} is not positive definite")
    return info


@dataclass(frozen=True)
class EfficientEstimate:
    """Unconstrained efficient estimate with its information estimate.

    Attributes
    ----------
    theta_hat : ndarray, shape (k,)
    info_hat : ndarray, shape (k, k)
        Symmetric positive definite estimate of the efficient information.
    n : int
        Sample size the estimate is based on.
    """

    theta_hat: np.ndarray
    info_hat: np.ndarray
    n: int = 1

    def __post_init__(self):
        theta = np.asarray(self.theta_hat, dtype=np.float64).reshape(-1)
        info = _check_spd(self.info_hat)
        if info.shape != (theta.size, theta.size):
            raise InputError(f"info_hat has shape {info.shape}, expected ({theta.size}, {theta.size})")
        if not np.all(np.isfinite(theta)):
            raise InputError("theta_hat has non-finite entries")
        if int(self.n) < 1:
            raise InputError("sample size n must be >= 1")
        object.__setattr__(self, "theta_hat", theta)
        object.__setattr__(self, "info_hat", info)
        object.__setattr__(self, "n", int(self.n))

    @property
    def k(self) -> int:
        return self.theta_hat.size


@dataclass(frozen=True)
class ProjectionDiagnostics:
    iterations: int
    converged: bool
    constraint_residual: float
    kkt_residual: float
    multiplier: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class ConstrainedResult:
    theta_star: np.ndarray
    theta_tilde: np.ndarray
    bound_Q: np.ndarray
    constraint_residual: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class InfluenceSample:
    """Per-observation influence vectors; ``model_tag`` is ``"P"`` or ``"Q"``."""

    values: np.ndarray
    model_tag: str = "P"

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if self.model_tag not in ("P", "Q"):
            raise InputError(f"model_tag must be 'P' or 'Q', got {self.model_tag!r}")
        object.__setattr__(self, "values", values)


def _gain(info: np.ndarray, jac: np.ndarray):
    """Return (W, G_factor) with W = I^-1 J^T and G = J I^-1 J^T factorised."""
    info = _check_spd(info)
    jac = np.atleast_2d(np.asarray(jac, dtype=np.float64))
    k = info.shape[0]
    if jac.shape[1] != k:
        raise InputError(f"dimension mismatch: Jacobian is {jac.shape}, information is {info.shape}")
    d = jac.shape[0]
    if d >= k:
        raise InputError(f"constraint dimension: d={d} must be below k={k}")
    if numerical_rank(jac) < d:
        raise SingularConstraintError("constraint Jacobian is rank deficient", rank=numerical_rank(jac))
    W = sla.cho_solve(_cholesky(info), jac.T)
    G = jac @ W
    G = 0.5 * (G + G.T)
    try:
        G_factor = sla.cho_factor(G, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularConstraintError("J I^-1 J^T is singular") from exc
    return W, G_factor


def one_step_update(est: EfficientEstimate, cs: ConstraintSystem | LinearConstraint) -> np.ndarray:
    """One-step correction of ``est.theta_hat`` towards the constraint set."""
    if isinstance(cs, LinearConstraint):
        cs = cs.as_system()
    S = eval_constraint(cs, est.theta_hat)
    J = jacobian(cs, est.theta_hat)
    W, G_factor = _gain(est.info_hat, J)
    return est.theta_hat - W @ sla.cho_solve(G_factor, S)


def _kkt_residual(cs, theta_star, z, lam):
    S = eval_constraint(cs, z)
    J = jacobian(cs, z)
    stationarity = z - theta_star + J.T @ lam
    return np.concatenate([stationarity, S]), J


def project_to_manifold(
    theta_star,
    cs: ConstraintSystem | LinearConstraint,
    tol: float = RESIDUAL_TOL,
    max_iter: int = MAX_ITER,
    max_halvings: int = MAX_HALVINGS,
) -> tuple[np.ndarray, ProjectionDiagnostics]:
    """Nearest point (Euclidean) to ``theta_star`` on ``{S = 0}``.

    Newton's method on the KKT system ``z - theta* + J(z)^T lam = 0, S(z) = 0``
    started at ``(theta*, 0)``, halving the step while the residual norm grows.
    Only a local minimiser is located; the nearest point need not be unique.
    On failure the best iterate is returned with ``converged=False``.
    """
    if isinstance(cs, LinearConstraint):
        cs = cs.as_system()
    theta_star = np.asarray(theta_star, dtype=np.float64)
    if not np.all(np.isfinite(theta_star)):
        raise InputError("point to project has non-finite entries")
    k, d = cs.dim_param, cs.dim_constraint

    z = theta_star.copy()
    lam = np.zeros(d)
    F, J = _kkt_residual(cs, theta_star, z, lam)
    res = np.max(np.abs(F))
    it = 0

    def done(F):
        return np.max(np.abs(F[k:])) <= tol and np.max(np.abs(F)) <= tol

    while not done(F) and it < max_iter:
        it += 1
        H = np.eye(k) + np.tensordot(lam, constraint_hessian(cs, z), axes=1)
        K = np.block([[H, J.T], [J, np.zeros((d, d))]])
        try:
            step = np.linalg.solve(K, -F)
        except np.linalg.LinAlgError as exc:
            raise SingularConstraintError(f"singular KKT matrix at z={z.tolist()}", theta=z) from exc

        t = 1.0
        for _ in range(max_halvings + 1):
            z_new, lam_new = z + t * step[:k], lam + t * step[k:]
            F_new, J_new = _kkt_residual(cs, theta_star, z_new, lam_new)
            res_new = np.max(np.abs(F_new))
            if res_new <= res or done(F_new):
                break
            t *= 0.5
        else:
            break  # no decrease along the Newton direction
        z, lam, F, J, res = z_new, lam_new, F_new, J_new, res_new

    diag = ProjectionDiagnostics(
        iterations=it,
        converged=bool(done(F)),
        constraint_residual=float(np.max(np.abs(F[k:]))),
        kkt_residual=float(res),
        multiplier=lam,
    )
    return z, diag


def constrained_bound(info, jac) -> np.ndarray:
    """``I^-1 - I^-1 J^T (J I^-1 J^T)^-1 J I^-1``, symmetrised."""
    info = _check_spd(info)
    W, G_factor = _gain(info, jac)
    inv_info = sla.cho_solve(_cholesky(info), np.eye(info.shape[0]))
    Q = inv_info - W @ sla.cho_solve(G_factor, W.T)
    return 0.5 * (Q + Q.T)


def constrained_bound_nullspace(info, L) -> np.ndarray:
    """``L (L^T I L)^-1 L^T`` for a k x (k - d) matrix L of full column rank."""
    info = _check_spd(info)
    L = np.asarray(L, dtype=np.float64)
    if L.ndim == 1:
        L = L[:, None]
    if L.shape[0] != info.shape[0]:
        raise InputError(f"dimension mismatch: L is {L.shape}, information is {info.shape}")
    if numerical_rank(L) < L.shape[1]:
        raise SingularConstraintError("null-space basis L is rank deficient")
    M = L.T @ info @ L
    Q = L @ sla.cho_solve(_cholesky(0.5 * (M + M.T), "L^T I L"), L.T)
    return 0.5 * (Q + Q.T)


def estimate_constrained(est: EfficientEstimate, cs: ConstraintSystem | LinearConstraint) -> ConstrainedResult:
    """One-step update, projection, and the bound evaluated at the projected point."""
    if isinstance(cs, LinearConstraint):
        cs = cs.as_system()
    if cs.dim_param != est.k:
        raise InputError(f"dimension mismatch: estimate has k={est.k}, constraint expects {cs.dim_param}")
    theta_star = one_step_update(est, cs)
    theta_tilde, diag = project_to_manifold(theta_star, cs)
    bound = constrained_bound(est.info_hat, jacobian(cs, theta_tilde))
    return ConstrainedResult(
        theta_star=theta_star,
        theta_tilde=theta_tilde,
        bound_Q=bound,
        constraint_residual=diag.constraint_residual,
        iterations=diag.iterations,
        converged=diag.converged and diag.constraint_residual <= RESIDUAL_TOL,
    )


def influence_projection(info, jac) -> np.ndarray:
    """``M = Id - I^-1 J^T (J I^-1 J^T)^-1 J``, mapping P-influence to Q-influence."""
    W, G_factor = _gain(info, jac)
    J = np.atleast_2d(np.asarray(jac, dtype=np.float64))
    return np.eye(W.shape[0]) - W @ sla.cho_solve(G_factor, J)


def _check_influence(infl: InfluenceSample, k: int, tag: str = "P"):
    if infl.model_tag != tag:
        raise InputError(f"expected influence values tagged {tag!r}, got {infl.model_tag!r}")
    if infl.values.shape[1] != k:
        raise InputError(f"dimension mismatch: influence rows have length {infl.values.shape[1]}, expected {k}")


def efficient_score(info, infl: InfluenceSample) -> np.ndarray:
    """Rows ``I @ l(X_i)``: efficient scores from efficient influence values."""
    info = _check_spd(info)
    _check_influence(infl, info.shape[0])
    return infl.values @ info.T


def constrained_influence(infl: InfluenceSample, info, jac) -> InfluenceSample:
    info = _check_spd(info)
    _check_influence(infl, info.shape[0])
    M = influence_projection(info, jac)
    return InfluenceSample(infl.values @ M.T, model_tag="Q")


def _linear_inputs(est: EfficientEstimate, lc: LinearConstraint):
    if lc.dim_param != est.k:
        raise InputError(f"dimension mismatch: estimate has k={est.k}, constraint expects {lc.dim_param}")
    return lc.matrix_R, lc.offset_alpha


def linear_constrained_estimate(est: EfficientEstimate, lc: LinearConstraint) -> np.ndarray:
    """Closed form ``theta_hat - I^-1 R (R^T I^-1 R)^-1 R^T (theta_hat - alpha)``."""
    R, alpha = _linear_inputs(est, lc)
    W, G_factor = _gain(est.info_hat, R.T)
    return est.theta_hat - W @ sla.cho_solve(G_factor, R.T @ (est.theta_hat - alpha))


def linear_constrained_estimate_nullspace(
    est: EfficientEstimate, lc: LinearConstraint, L: np.ndarray | None = None
) -> np.ndarray:
    """Closed form ``alpha + L (L^T I L)^-1 L^T I (theta_hat - alpha)``.

    ``L`` defaults to an orthonormal basis of the complement of the columns of R.
    """
    R, alpha = _linear_inputs(est, lc)
    if L is None:
        L = null_space_basis(R.T)
    L = np.asarray(L, dtype=np.float64)
    if L.ndim == 1:
        L = L[:, None]
    info = est.info_hat
    M = L.T @ info @ L
    coef = sla.cho_solve(_cholesky(0.5 * (M + M.T), "L^T I L"), L.T @ info @ (est.theta_hat - alpha))
    return alpha + L @ coef
