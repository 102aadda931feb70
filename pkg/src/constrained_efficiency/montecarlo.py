"""Seeded Monte Carlo checks of the constrained estimator's limit behaviour.

Every replication draws from its own stream, derived from ``(seed, rep)``
through :class:`numpy.random.SeedSequence` spawn keys, so the report does not
depend on execution order or on the number of worker threads.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, NamedTuple, Sequence

import numpy as np
from scipy import special

from .constraint import ConstraintSystem, eval_constraint, jacobian
from .errors import EstimationError, InputError, NotPositiveDefiniteError, SimulationError
from .estimator import EfficientEstimate, _cholesky, constrained_bound, estimate_constrained
from .models import (
    copula_information,
    correlation_from_pairs,
    fit_exchangeable_copula,
    fit_location_scale_normal,
    fit_mvn_mean,
    NORMAL_INFO,
)
from .specs import constraint_from_spec

__all__ = [
    "MODELS",
    "Scenario",
    "MCReport",
    "rep_stream",
    "sample_mvn",
    "sample_gaussian_copula",
    "run_scenario",
]

MODELS = ("common_mean", "location_scale_cv", "exchangeable_copula", "custom_mvn_with_constraint")
NON_INFERENTIAL_REPS = 30
MAX_FAILURE_RATE = 0.01
FEASIBILITY_TOL = 1e-12


def rep_stream(seed: int, rep: int) -> np.random.Generator:
    """Independent generator for replication ``rep`` of a run seeded with ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(rep,))))


def sample_mvn(mean, cov, n: int, rng: np.random.Generator) -> np.ndarray:
    """n draws from N(mean, cov) as ``mean + Z L^T`` with ``cov = L L^T``."""
    mean = np.asarray(mean, dtype=np.float64).reshape(-1)
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    if cov.shape != (mean.size, mean.size):
        raise InputError(f"covariance has shape {cov.shape}, expected ({mean.size}, {mean.size})")
    L = np.tril(_cholesky(cov, "covariance matrix")[0])
    return mean + rng.standard_normal((int(n), mean.size)) @ L.T


_MARGINALS: dict[str, Callable[[np.ndarray], np.ndarray]] = {
    # functions of the latent normal z, avoiding Phi(z) == 1 round-off
    "uniform": special.ndtr,
    "normal": lambda z: z,
    "exponential": lambda z: -np.log(special.ndtr(-z)),
}


def sample_gaussian_copula(
    rho_matrix,
    n: int,
    rng: np.random.Generator,
    marginals: Sequence[str | Callable[[np.ndarray], np.ndarray]] | None = None,
) -> np.ndarray:
    """Draws ``F_j^-1(Phi(Z_j))`` with ``Z ~ N(0, rho_matrix)``.

    ``marginals`` holds one entry per column: a name from ``uniform``,
    ``normal``, ``exponential``, or a callable quantile function applied to
    the uniform ``Phi(Z_j)``. The default is uniform margins.
    """
    C = np.atleast_2d(np.asarray(rho_matrix, dtype=np.float64))
    m = C.shape[0]
    if C.shape != (m, m) or not np.allclose(C, C.T, rtol=0, atol=1e-14) or not np.allclose(np.diag(C), 1.0):
        raise InputError("rho_matrix must be a symmetric matrix with unit diagonal")
    if np.any(np.abs(C - np.eye(m)) >= 1.0):
        raise NotPositiveDefiniteError("correlation matrix is not positive definite")
    Z = sample_mvn(np.zeros(m), C, n, rng)
    if marginals is None:
        return special.ndtr(Z)
    if len(marginals) != m:
        raise InputError(f"need {m} marginal transforms, got {len(marginals)}")
    cols = []
    for j, marg in enumerate(marginals):
        if callable(marg):
            cols.append(np.asarray(marg(special.ndtr(Z[:, j])), dtype=np.float64))
        elif marg in _MARGINALS:
            cols.append(_MARGINALS[marg](Z[:, j]))
        else:
            raise InputError(f"unknown marginal {marg!r}; choose from {sorted(_MARGINALS)}")
    return np.column_stack(cols)


@dataclass(frozen=True)
class Scenario:
    """A true model inside the constrained submodel plus run settings.

    ``cov`` is the covariance for the normal-mean models; ``c`` and ``form``
    configure the coefficient-of-variation model; ``marginals`` the copula.
    For ``exchangeable_copula``, ``true_theta`` holds all m(m-1)/2 pairwise
    correlations (equal by assumption).
    """

    model: str
    true_theta: np.ndarray
    n: int
    reps: int
    seed: int
    cov: np.ndarray | None = None
    constraint: Mapping[str, Any] | None = None
    c: float | None = None
    form: str = "linear"
    marginals: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.model not in MODELS:
            raise InputError(f"unknown scenario model {self.model!r}; choose from {list(MODELS)}")
        theta = np.asarray(self.true_theta, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "true_theta", theta)
        if self.cov is not None:
            object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, dtype=np.float64)))
        if self.marginals is not None:
            object.__setattr__(self, "marginals", tuple(self.marginals))
        if int(self.n) < 2:
            raise InputError("scenario needs n >= 2")
        if int(self.reps) < 1:
            raise InputError("scenario needs reps >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise InputError("seed must be an unsigned 64-bit integer")
        residual = np.max(np.abs(eval_constraint(self.constraint_system(), theta)))
        if residual > FEASIBILITY_TOL:
            raise InputError(f"true_theta violates the constraint: |S(theta0)| = {residual:.3g}")

    @classmethod
    def from_dict(cls, cfg: Mapping[str, Any]) -> "Scenario":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(cfg) - known
        if unknown:
            raise InputError(f"unknown scenario fields: {sorted(unknown)}")
        try:
            return cls(**dict(cfg))
        except TypeError as exc:
            raise InputError(f"invalid scenario: {exc}") from exc

    @property
    def k(self) -> int:
        return self.true_theta.size

    @property
    def copula_dim(self) -> int:
        k = self.k
        m = int(round((1 + np.sqrt(1 + 8 * k)) / 2))
        if m * (m - 1) // 2 != k:
            raise InputError(f"copula scenario: {k} is not a number of pairs m(m-1)/2")
        return m

    def constraint_system(self) -> ConstraintSystem:
        if self.model in ("common_mean", "exchangeable_copula"):
            return constraint_from_spec({"type": "exchangeable"}, self.k)
        if self.model == "location_scale_cv":
            if self.c is None:
                raise InputError("location_scale_cv scenario needs 'c'")
            return constraint_from_spec({"type": "cv", "c": self.c, "form": self.form}, self.k)
        if self.constraint is None:
            raise InputError("custom_mvn_with_constraint scenario needs a 'constraint'")
        return constraint_from_spec(self.constraint, self.k)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"model": self.model, "true_theta": self.true_theta, "n": int(self.n),
                               "reps": int(self.reps), "seed": int(self.seed)}
        for name in ("cov", "constraint", "c", "form", "marginals"):
            value = getattr(self, name)
            if name == "form" and self.model != "location_scale_cv":
                continue
            if value is not None:
                out[name] = list(value) if isinstance(value, tuple) else value
        return out


class _Plan(NamedTuple):
    constraint: ConstraintSystem
    true_info: np.ndarray
    sample: Callable[[np.random.Generator], np.ndarray]
    fit: Callable[[np.ndarray], EfficientEstimate]


def _plan(sc: Scenario) -> _Plan:
    cs = sc.constraint_system()
    theta0, n = sc.true_theta, int(sc.n)
    if sc.model in ("common_mean", "custom_mvn_with_constraint"):
        cov = np.eye(sc.k) if sc.cov is None else sc.cov
        info = np.linalg.inv(cov)
        return _Plan(cs, 0.5 * (info + info.T), lambda rng: sample_mvn(theta0, cov, n, rng), fit_mvn_mean)
    if sc.model == "location_scale_cv":
        mu, sigma = theta0
        if sigma <= 0:
            raise InputError("location_scale_cv scenario needs sigma > 0")
        return _Plan(
            cs,
            NORMAL_INFO.matrix() / sigma**2,
            lambda rng: sample_mvn([mu], [[sigma**2]], n, rng),
            lambda data: fit_location_scale_normal(data)[0],
        )
    m = sc.copula_dim
    if m < 3:
        raise InputError("exchangeable_copula scenario needs m >= 3 columns")
    C = correlation_from_pairs(theta0, m)
    return _Plan(
        cs,
        copula_information(C),
        lambda rng: sample_gaussian_copula(C, n, rng, sc.marginals),
        lambda data: fit_exchangeable_copula(data)[0],
    )


@dataclass
class MCReport:
    """Aggregated replication results.

    Covariances are of sqrt(n) times the error about the true value, centred
    at the truth and divided by ``reps_used - 1``.
    """

    scenario: Scenario
    empirical_cov: np.ndarray
    theoretical_bound: np.ndarray
    unconstrained_cov: np.ndarray
    equivalence_stat: float
    convergence_failures: int
    fit_failures: int
    residual_max: float
    reps_used: int
    theta_hat: np.ndarray = field(repr=False)
    theta_star: np.ndarray = field(repr=False)
    theta_tilde: np.ndarray = field(repr=False)

    @property
    def non_inferential(self) -> bool:
        return self.reps_used < NON_INFERENTIAL_REPS

    @property
    def relative_frobenius_error(self) -> float:
        return float(np.linalg.norm(self.empirical_cov - self.theoretical_bound) / np.linalg.norm(self.theoretical_bound))

    def to_dict(self) -> dict[str, Any]:
        return {
            "scenario": self.scenario.to_dict(),
            "empirical_cov": self.empirical_cov,
            "theoretical_bound": self.theoretical_bound,
            "unconstrained_cov": self.unconstrained_cov,
            "relative_frobenius_error": self.relative_frobenius_error,
            "equivalence_stat": self.equivalence_stat,
            "convergence_failures": self.convergence_failures,
            "fit_failures": self.fit_failures,
            "residual_max": self.residual_max,
            "reps_used": self.reps_used,
            "non_inferential": self.non_inferential,
        }


def _one_rep(plan: _Plan, seed: int, rep: int):
    rng = rep_stream(seed, rep)
    try:
        est = plan.fit(plan.sample(rng))
        res = estimate_constrained(est, plan.constraint)
    except (EstimationError, np.linalg.LinAlgError):
        return None
    return est.theta_hat, res.theta_star, res.theta_tilde, res.constraint_residual, res.converged


def _centred_cov(errors: np.ndarray, k: int) -> np.ndarray:
    if errors.shape[0] < 2:
        return np.zeros((k, k))
    cov = errors.T @ errors / (errors.shape[0] - 1)
    return 0.5 * (cov + cov.T)


def run_scenario(sc: Scenario, workers: int = 1) -> MCReport:
    """Run all replications of ``sc`` and aggregate them in replication order.

    Raises
    ------
    SimulationError
        When more than 1% of replications fail to fit or to converge.
    """
    plan = _plan(sc)
    seed, reps, n, k = int(sc.seed), int(sc.reps), int(sc.n), sc.k
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda r: _one_rep(plan, seed, r), range(reps)))
    else:
        results = [_one_rep(plan, seed, r) for r in range(reps)]

    fit_failures = sum(r is None for r in results)
    done = [r for r in results if r is not None]
    convergence_failures = sum(not r[4] for r in done)
    failures = fit_failures + convergence_failures
    if failures > MAX_FAILURE_RATE * reps:
        raise SimulationError(
            f"{failures} of {reps} replications failed ({fit_failures} fits, {convergence_failures} projections)"
        )
    ok = [r for r in done if r[4]]
    if not ok:
        raise SimulationError("no replication produced a converged estimate")
    theta_hat = np.array([r[0] for r in ok])
    theta_star = np.array([r[1] for r in ok])
    theta_tilde = np.array([r[2] for r in ok])
    root_n = np.sqrt(n)
    theta0 = sc.true_theta

    bound = constrained_bound(plan.true_info, jacobian(plan.constraint, theta0))
    return MCReport(
        scenario=sc,
        empirical_cov=_centred_cov(root_n * (theta_tilde - theta0), k),
        theoretical_bound=bound,
        unconstrained_cov=_centred_cov(root_n * (theta_hat - theta0), k),
        equivalence_stat=float(np.median(root_n * np.linalg.norm(theta_tilde - theta_star, axis=1))),
        convergence_failures=convergence_failures,
        fit_failures=fit_failures,
        residual_max=float(max(r[3] for r in done)),
        reps_used=len(ok),
        theta_hat=theta_hat,
        theta_star=theta_star,
        theta_tilde=theta_tilde,
    )
