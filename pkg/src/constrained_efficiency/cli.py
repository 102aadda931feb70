"""Command-line entry point.

    ceff estimate|bound|project|simulate --config PATH [--seed N] [--output PATH]

Reports are JSON on stdout or in the ``--output`` file. Failures print one
JSON error object on stderr and exit with 2 (input), 3 (numerical) or
4 (projection did not converge).
"""

from __future__ import annotations

import argparse
import json
import sys
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np

from . import io
from .constraint import jacobian, null_space_basis
from .errors import ConvergenceError, EstimationError, InputError
from .estimator import (
    EfficientEstimate,
    constrained_bound,
    constrained_bound_nullspace,
    estimate_constrained,
    project_to_manifold,
)
from .models import exchangeable_average, fit_exchangeable_copula, fit_location_scale_normal, fit_mvn_mean
from .montecarlo import Scenario, run_scenario
from .specs import constraint_from_spec

COMMANDS = ("estimate", "bound", "project", "simulate")
AFFINE = ("linear", "exchangeable", "cv-linear")


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    """One of the shipped schemas: config, estimate, bound, project, simulate, error."""
    text = resources.files("constrained_efficiency.schemas").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


def validate_config(config: Any) -> None:
    try:
        jsonschema.validate(config, load_schema("config"))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"invalid config at {where}: {exc.message}") from exc


def _vector(values) -> np.ndarray:
    return np.asarray(values, dtype=np.float64)


def _matrix(values, what: str) -> np.ndarray:
    rows = [list(r) for r in values]
    if len({len(r) for r in rows}) != 1:
        raise InputError(f"{what} has rows of unequal length")
    return np.asarray(rows, dtype=np.float64)


def cmd_estimate(config: dict, base: Path) -> dict:
    data = io.read_csv(base / config["data"])
    model = config["model"]
    spec = config.get("constraint")
    extras: dict[str, Any] = {}
    if model == "location_scale_normal":
        if spec is None:
            raise InputError("location_scale_normal needs a constraint, e.g. {'type': 'cv', 'c': 0.5}")
        est = fit_location_scale_normal(data)[0]
    elif model == "exchangeable_copula":
        est = fit_exchangeable_copula(data)[0]
        spec = spec or {"type": "exchangeable"}
        extras["exchangeable_average"] = exchangeable_average(est.theta_hat)
    else:
        est = fit_mvn_mean(data)
        if model == "common_mean":
            spec = spec or {"type": "exchangeable"}
        elif spec is None:
            raise InputError("mvn_mean needs a constraint")
    cs = constraint_from_spec(spec, est.k)
    res = estimate_constrained(est, cs)
    if not res.converged:
        raise ConvergenceError(
            f"projection did not converge after {res.iterations} iterations (residual {res.constraint_residual:.3g})"
        )
    return {
        "model": model,
        "theta_hat": est.theta_hat,
        "info_hat": est.info_hat,
        "theta_star": res.theta_star,
        "theta_tilde": res.theta_tilde,
        "bound_Q": res.bound_Q,
        "constraint_residual": res.constraint_residual,
        "iterations": res.iterations,
        "converged": res.converged,
        "n": est.n,
        **extras,
    }


def cmd_bound(config: dict, base: Path) -> dict:
    info = _matrix(config["info"], "info")
    if info.shape[0] != info.shape[1]:
        raise InputError(f"info must be square, got {info.shape}")
    k = info.shape[0]
    cs = constraint_from_spec(config["constraint"], k)
    if "theta" in config:
        theta = _vector(config["theta"])
    elif cs.name in AFFINE:
        theta = np.zeros(k)
    else:
        raise InputError(f"constraint {cs.name!r} is nonlinear; give the evaluation point 'theta'")
    J = jacobian(cs, theta)
    # validates information before factorising
    EfficientEstimate(np.zeros(k), info)
    Q = constrained_bound(info, J)
    Q_null = constrained_bound_nullspace(info, null_space_basis(J))
    return {
        "bound_Q": Q,
        "bound_Q_nullspace": Q_null,
        "max_discrepancy": float(np.max(np.abs(Q - Q_null))),
        "theta": theta,
    }


def cmd_project(config: dict, base: Path) -> dict:
    point = _vector(config["point"])
    cs = constraint_from_spec(config["constraint"], point.size)
    theta, diag = project_to_manifold(point, cs)
    if not diag.converged:
        raise ConvergenceError(
            f"projection did not converge after {diag.iterations} iterations (residual {diag.constraint_residual:.3g})"
        )
    return {
        "point": point,
        "theta_tilde": theta,
        "residual": diag.constraint_residual,
        "iterations": diag.iterations,
        "converged": diag.converged,
    }


def cmd_simulate(config: dict, base: Path) -> dict:
    sc = Scenario.from_dict(config["scenario"])
    return run_scenario(sc, workers=int(config.get("workers", 1))).to_dict()


HANDLERS: dict[str, Callable[[dict, Path], dict]] = {
    "estimate": cmd_estimate,
    "bound": cmd_bound,
    "project": cmd_project,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ceff", description="Efficient estimation under equality constraints.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override the scenario seed (simulate)")
    parser.add_argument("--output", default=None, help="write the report here instead of stdout")
    return parser


def _load_config(args) -> tuple[dict, Path]:
    path = Path(args.config)
    try:
        config = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise InputError(f"cannot read config {str(path)!r}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise InputError(f"config {str(path)!r} is not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise InputError("config must be a JSON object")
    if config.setdefault("command", args.command) != args.command:
        raise InputError(f"config is for command {config['command']!r}, not {args.command!r}")
    if args.seed is not None:
        if args.command == "simulate" and isinstance(config.get("scenario"), dict):
            config["scenario"]["seed"] = args.seed
    validate_config(config)
    return config, path.resolve().parent


def run(args) -> dict:
    config, base = _load_config(args)
    report = HANDLERS[args.command](config, base)
    jsonschema.validate(json.loads(io.dumps(report)), load_schema(args.command))
    return report


def _fail(exc: EstimationError) -> int:
    payload = {"error": {"exit_code": exc.exit_code, "kind": exc.kind, "message": str(exc).replace("\n", " ")}}
    sys.stderr.write(json.dumps(payload) + "\n")
    return exc.exit_code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        return _fail(InputError("--seed must be an unsigned 64-bit integer"))
    try:
        text = io.dumps(run(args))
    except EstimationError as exc:
        return _fail(exc)
    if args.output:
        io.write_atomic(args.output, text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
