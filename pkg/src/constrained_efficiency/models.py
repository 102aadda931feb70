"""Built-in models: data in, unconstrained efficient estimate out.

* multivariate normal mean, in particular with a common-mean constraint;
* normal location-scale with known coefficient of variation;
* Gaussian copula with pairwise normal-scores rank correlations, exchangeable
  submodel.

Each fitter returns an :class:`~constrained_efficiency.estimator.EfficientEstimate`
together with the model's canonical constraint where it has one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Callable

import numpy as np
import scipy.linalg as sla
from scipy import integrate, special, stats

from .constraint import ConstraintSystem, LinearConstraint, equal_components, numerical_rank
from .errors import InputError, NotPositiveDefiniteError
from .estimator import EfficientEstimate, InfluenceSample, _cholesky

__all__ = [
    "LocationScaleInfo",
    "NORMAL_INFO",
    "as_data_matrix",
    "fit_mvn_mean",
    "fit_common_mean",
    "fit_location_scale_normal",
    "location_scale_info",
    "cv_constraint",
    "cv_linear_estimate",
    "cv_one_step_normal",
    "cv_ratio_closed_form",
    "normal_scores",
    "vdw_rank_correlation",
    "pairwise_vdw",
    "pair_index",
    "copula_influence",
    "fit_exchangeable_copula",
    "exchangeable_average",
    "correlation_from_pairs",
    "copula_information",
]

MU_FLOOR = 1e-12


def as_data_matrix(data, min_rows: int = 2, no_ties: bool = False) -> np.ndarray:
    """Validate an n x m observation matrix (1-d input is one column)."""
    X = np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise InputError(f"data must be a 2-d matrix, got {X.ndim} dimensions")
    if X.shape[0] < min_rows:
        raise InputError(f"need at least {min_rows} observations, got {X.shape[0]}")
    bad = np.argwhere(~np.isfinite(X))
    if bad.size:
        i, j = bad[0]
        raise InputError(f"non-finite value at row {i + 1}, column {j + 1}")
    if no_ties:
        for j in range(X.shape[1]):
            if np.unique(X[:, j]).size != X.shape[0]:
                raise InputError(f"ties in column {j + 1}; continuous marginals required")
    return X


# ---------------------------------------------------------------- normal mean


def fit_mvn_mean(data) -> EfficientEstimate:
    """Sample mean with information estimate equal to the inverse sample covariance."""
    X = as_data_matrix(data)
    n, k = X.shape
    if n <= k:
        raise InputError(f"need n > k observations, got n={n}, k={k}")
    cov = np.atleast_2d(np.cov(X, rowvar=False, ddof=1))
    if numerical_rank(cov) < k:
        raise NotPositiveDefiniteError("sample covariance matrix is singular")
    info = _inverse_spd(cov, "sample covariance matrix")
    return EfficientEstimate(X.mean(axis=0), info, n)


def fit_common_mean(data) -> tuple[EfficientEstimate, LinearConstraint]:
    X = as_data_matrix(data)
    est = fit_mvn_mean(X)
    return est, equal_components(X.shape[1])


def _inverse_spd(mat: np.ndarray, what: str) -> np.ndarray:
    inv = sla.cho_solve(_cholesky(mat, what), np.eye(mat.shape[0]))
    return 0.5 * (inv + inv.T)


# ----------------------------------------------------------- location-scale


@dataclass(frozen=True)
class LocationScaleInfo:
    """Entries of sigma^2 times the Fisher information for (mu, sigma)."""

    I11: float
    I12: float
    I22: float

    def __post_init__(self):
        M = self.matrix()
        if not np.all(np.isfinite(M)) or self.I11 <= 0 or np.linalg.det(M) <= 0:
            raise NotPositiveDefiniteError(f"location-scale information {M.tolist()} is not positive definite")

    def matrix(self) -> np.ndarray:
        return np.array([[self.I11, self.I12], [self.I12, self.I22]], dtype=np.float64)


NORMAL_INFO = LocationScaleInfo(1.0, 0.0, 2.0)


def location_scale_info(
    density: Callable[[float], float],
    score: Callable[[float], float],
) -> LocationScaleInfo:
    """Quadrature of the three location-scale information integrals.

    ``score`` is the log-density derivative g'/g of a standardised density g.
    """

    def quad(f):
        value, _ = integrate.quad(f, -np.inf, np.inf, epsabs=1e-13, epsrel=1e-12, limit=200)
        return value

    I11 = quad(lambda x: score(x) ** 2 * density(x))
    I12 = quad(lambda x: x * score(x) ** 2 * density(x))
    I22 = quad(lambda x: (x * score(x) + 1.0) ** 2 * density(x))
    return LocationScaleInfo(I11, I12, I22)


def fit_location_scale_normal(data) -> tuple[EfficientEstimate, LocationScaleInfo]:
    """Sample mean and 1/n standard deviation for i.i.d. normal data."""
    X = as_data_matrix(data, min_rows=3)
    if X.shape[1] != 1:
        raise InputError(f"location-scale model takes a single column, got {X.shape[1]}")
    x = X[:, 0]
    mu, sigma = float(x.mean()), float(x.std(ddof=0))
    if not sigma > 0.0:
        raise InputError("zero sample variance")
    info = NORMAL_INFO.matrix() / sigma**2
    return EfficientEstimate(np.array([mu, sigma]), info, x.size), NORMAL_INFO


def cv_constraint(c: float, form: str = "linear") -> ConstraintSystem:
    """Known coefficient of variation sigma / mu = c.

    ``linear``: S(theta) = c theta_1 - theta_2;
    ``ratio``:  S(theta) = theta_2 / theta_1 - c.
    """
    c = float(c)
    if form == "linear":
        return ConstraintSystem(
            2,
            1,
            func=lambda t: np.array([c * t[0] - t[1]]),
            jac=lambda t: np.array([[c, -1.0]]),
            hess=lambda t: np.zeros((1, 2, 2)),
            name="cv-linear",
        )
    if form != "ratio":
        raise InputError(f"unknown coefficient-of-variation form {form!r}")
    if c == 0.0:
        raise InputError("ratio form needs c != 0")

    def nonzero(t):
        if t[0] == 0.0:
            raise InputError("ratio constraint undefined at theta_1 = 0")
        return t

    def func(t):
        t = nonzero(t)
        return np.array([t[1] / t[0] - c])

    def jac(t):
        t = nonzero(t)
        return np.array([[-t[1] / t[0] ** 2, 1.0 / t[0]]])

    def hess(t):
        t = nonzero(t)
        a, b = t
        return np.array([[[2.0 * b / a**3, -1.0 / a**2], [-1.0 / a**2, 0.0]]])

    return ConstraintSystem(2, 1, func=func, jac=jac, hess=hess, name="cv-ratio")


def cv_linear_estimate(mu_bar: float, sigma_bar: float, c: float, info: LocationScaleInfo = NORMAL_INFO) -> np.ndarray:
    """Closed-form constrained estimate ``(mu, c mu)`` for the linear CV constraint."""
    I11, I12, I22 = info.I11, info.I12, info.I22
    mu = ((I11 + c * I12) * mu_bar + (I12 + c * I22) * sigma_bar) / (I11 + 2 * c * I12 + c**2 * I22)
    return np.array([mu, c * mu])


def cv_one_step_normal(mu_bar: float, sigma_bar: float, c: float) -> np.ndarray:
    mu = (mu_bar + 2.0 * c * sigma_bar) / (1.0 + 2.0 * c**2)
    return np.array([mu, c * mu])


def cv_ratio_closed_form(
    mu_bar: float, sigma_bar: float, c: float, info: LocationScaleInfo = NORMAL_INFO
) -> tuple[np.ndarray, np.ndarray]:
    """One-step and projected estimates for the ratio-form CV constraint.

    Returns ``(theta_star, theta_tilde)``, expressed through the empirical
    ratio ``c_bar = sigma_bar / mu_bar``.
    """
    if abs(mu_bar) < MU_FLOOR:
        raise InputError("empirical coefficient of variation undefined: |mu_bar| < 1e-12")
    I11, I12, I22 = info.I11, info.I12, info.I22
    cb = sigma_bar / mu_bar
    D = I11 + 2 * cb * I12 + cb**2 * I22
    mu_star = ((I11 + (2 * cb - c) * I12) * mu_bar + (I12 + (2 * cb - c) * I22) * sigma_bar) / D
    sigma_star = ((c * I11 + c * cb * I12) * mu_bar + (cb * I12 + cb**2 * I22) * sigma_bar) / D
    a = (2 * cb - c + c**2 * cb) / (1 + c**2)
    b1 = (1 + c * cb) / (1 + c**2)
    b2 = (2 * cb - c + c * cb**2) / (1 + c**2)
    mu_tilde = ((I11 + a * I12) * mu_bar + (b1 * I12 + b2 * I22) * sigma_bar) / D
    return np.array([mu_star, sigma_star]), np.array([mu_tilde, c * mu_tilde])


# ----------------------------------------------------------- Gaussian copula


def normal_scores(x) -> np.ndarray:
    """Phi^-1(rank / (n + 1)), antisymmetric in rank by construction."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    n = x.size
    if np.unique(x).size != n:
        raise InputError("ties present; continuous marginals required")
    ranks = stats.rankdata(x).astype(np.int64)
    return _rank_scores(n)[ranks - 1]


def _rank_scores(n: int) -> np.ndarray:
    """Scores for ranks 1..n with s[n + 1 - r] == -s[r] exactly."""
    r = np.arange(1, n + 1)
    lower = np.minimum(r, n + 1 - r)
    s = special.ndtri(lower / (n + 1))
    return np.where(r <= n + 1 - r, s, -s)


def _vdw_from_scores(zx: np.ndarray, zy: np.ndarray, denom: float) -> float:
    return math.fsum(zx * zy) / denom


def vdw_rank_correlation(x, y) -> float:
    """Van der Waerden (normal scores) rank correlation of two samples."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise InputError(f"samples differ in length: {x.size} vs {y.size}")
    if x.size < 2:
        raise InputError("need at least 2 observations")
    denom = math.fsum(_rank_scores(x.size) ** 2)
    return _vdw_from_scores(normal_scores(x), normal_scores(y), denom)


def pair_index(m: int) -> list[tuple[int, int]]:
    """Pairs (r, s), r < s, in lexicographic order (0-based)."""
    return list(combinations(range(m), 2))


def _score_matrix(X: np.ndarray) -> np.ndarray:
    return np.column_stack([normal_scores(X[:, j]) for j in range(X.shape[1])])


def pairwise_vdw(data) -> np.ndarray:
    """All pairwise normal-scores correlations, stacked in lexicographic pair order."""
    X = as_data_matrix(data, no_ties=True)
    m = X.shape[1]
    if m < 2:
        raise InputError("need at least 2 columns")
    Z = _score_matrix(X)
    denom = math.fsum(_rank_scores(X.shape[0]) ** 2)
    return np.array([_vdw_from_scores(Z[:, r], Z[:, s], denom) for r, s in pair_index(m)])


def copula_influence(data, rho_hat) -> InfluenceSample:
    """Estimated efficient influence rows ``z_r z_s - rho_rs (z_r^2 + z_s^2) / 2``."""
    X = as_data_matrix(data, no_ties=True)
    pairs = pair_index(X.shape[1])
    rho_hat = np.asarray(rho_hat, dtype=np.float64).reshape(-1)
    if rho_hat.size != len(pairs):
        raise InputError(f"expected {len(pairs)} pairwise estimates, got {rho_hat.size}")
    if np.any(np.abs(rho_hat) > 1.0):
        raise InputError("pairwise correlations must lie in [-1, 1]")
    Z = _score_matrix(X)
    return InfluenceSample(_copula_influence_from_scores(Z, rho_hat, pairs), "P")


def _copula_influence_from_scores(Z, rho, pairs) -> np.ndarray:
    cols = [Z[:, r] * Z[:, s] - 0.5 * rho_j * (Z[:, r] ** 2 + Z[:, s] ** 2) for rho_j, (r, s) in zip(rho, pairs)]
    return np.column_stack(cols)


def fit_exchangeable_copula(data) -> tuple[EfficientEstimate, LinearConstraint | None]:
    """Pairwise normal-scores correlations with a plug-in information estimate.

    The information estimate is the inverse sample covariance of the
    estimated influence rows. With two columns there is a single pair and no
    restriction, so the constraint is ``None``.
    """
    X = as_data_matrix(data, no_ties=True)
    m = X.shape[1]
    if m < 2:
        raise InputError("need at least 2 columns")
    theta_hat = pairwise_vdw(X)
    infl = copula_influence(X, theta_hat).values
    cov = np.atleast_2d(np.cov(infl, rowvar=False, ddof=1))
    if numerical_rank(cov) < cov.shape[0]:
        raise NotPositiveDefiniteError("covariance of estimated influence values is singular")
    est = EfficientEstimate(theta_hat, _inverse_spd(cov, "influence covariance"), X.shape[0])
    k = theta_hat.size
    if k == 1:
        return est, None
    return est, equal_components(k)


def exchangeable_average(theta_hat) -> np.ndarray:
    """Every pairwise coefficient replaced by their arithmetic mean."""
    theta_hat = np.asarray(theta_hat, dtype=np.float64).reshape(-1)
    return np.full(theta_hat.size, math.fsum(theta_hat) / theta_hat.size)


def correlation_from_pairs(rho, m: int) -> np.ndarray:
    """m x m correlation matrix from stacked pairwise coefficients."""
    rho = np.asarray(rho, dtype=np.float64).reshape(-1)
    pairs = pair_index(m)
    if rho.size == 1 and len(pairs) > 1:
        rho = np.full(len(pairs), rho[0])
    if rho.size != len(pairs):
        raise InputError(f"expected {len(pairs)} pairwise coefficients, got {rho.size}")
    C = np.eye(m)
    for value, (r, s) in zip(rho, pairs):
        C[r, s] = C[s, r] = value
    return C


def copula_information(C) -> np.ndarray:
    """Efficient information for the pairwise correlations of a Gaussian copula.

    Each influence component is a quadratic form ``Z^T A Z`` in the latent
    normal vector, so by Isserlis' theorem the influence covariance is
    ``2 tr(A C B C)``; the information is its inverse.
    """
    C = np.asarray(C, dtype=np.float64)
    m = C.shape[0]
    _cholesky(C, "correlation matrix")
    pairs = pair_index(m)
    forms = []
    for r, s in pairs:
        A = np.zeros((m, m))
        A[r, s] = A[s, r] = 0.5
        A[r, r] -= 0.5 * C[r, s]
        A[s, s] -= 0.5 * C[r, s]
        forms.append(A @ C)
    cov = np.array([[2.0 * np.trace(Ea @ Eb) for Eb in forms] for Ea in forms])
    return _inverse_spd(0.5 * (cov + cov.T), "copula influence covariance")
