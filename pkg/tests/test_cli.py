import json
import subprocess
import sys

import jsonschema
import numpy as np
import pytest

from constrained_efficiency.cli import load_schema, main
from constrained_efficiency.models import cv_one_step_normal
from constrained_efficiency.montecarlo import rep_stream, sample_mvn


def run_cli(capsys, command, config, tmp_path, *extra):
    path = tmp_path / f"{command}.json"
    path.write_text(json.dumps(config), encoding="utf-8")
    code = main([command, "--config", str(path), *extra])
    out, err = capsys.readouterr()
    return code, out, err


def ok(capsys, command, config, tmp_path, *extra):
    code, out, err = run_cli(capsys, command, config, tmp_path, *extra)
    assert code == 0, err
    report = json.loads(out)
    jsonschema.validate(report, load_schema(command))
    return report


def failed(capsys, command, config, tmp_path, expected_code):
    code, out, err = run_cli(capsys, command, config, tmp_path)
    assert code == expected_code
    assert out == ""
    lines = err.strip().splitlines()
    assert len(lines) == 1
    payload = json.loads(lines[0])
    jsonschema.validate(payload, load_schema("error"))
    assert payload["error"]["exit_code"] == expected_code
    return payload["error"]["message"]


def write_csv(path, rows, header=None):
    lines = [",".join(header)] if header else []
    lines += [",".join(repr(float(v)) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def test_schemas_are_valid():
    for name in ("config", "estimate", "bound", "project", "simulate", "error"):
        jsonschema.Draft202012Validator.check_schema(load_schema(name))


class TestEstimate:
    def test_common_mean(self, capsys, tmp_path):
        X = sample_mvn([1.0, 1.0, 1.0], 0.8 * np.eye(3) + 0.2, 60, rep_stream(1, 0))
        write_csv(tmp_path / "d.csv", X, header=["a", "b", "c"])
        report = ok(capsys, "estimate", {"model": "common_mean", "data": "d.csv"}, tmp_path)
        tilde = np.array(report["theta_tilde"])
        assert np.ptp(tilde) <= 1e-10
        assert report["n"] == 60 and report["converged"]
        assert np.allclose(report["theta_hat"], X.mean(axis=0), atol=1e-15)

    def test_non_numeric_cell(self, capsys, tmp_path):
        (tmp_path / "d.csv").write_text("a,b\n1,2\n3,x\n4,5\n", encoding="utf-8")
        message = failed(capsys, "estimate", {"model": "common_mean", "data": "d.csv"}, tmp_path, 2)
        assert "row 3" in message and "column 2" in message

    def test_cv_matches_closed_form(self, capsys, tmp_path):
        x = sample_mvn([2.0], [[1.0]], 80, rep_stream(2, 0))
        write_csv(tmp_path / "d.csv", x)
        config = {"model": "location_scale_normal", "data": "d.csv", "constraint": {"type": "cv", "c": 0.5}}
        report = ok(capsys, "estimate", config, tmp_path)
        # closed form from the file's moments, computed independently of the pipeline
        mu_bar, sigma_bar = float(np.mean(x)), float(np.sqrt(np.mean((x - np.mean(x)) ** 2)))
        assert np.max(np.abs(np.array(report["theta_tilde"]) - cv_one_step_normal(mu_bar, sigma_bar, 0.5))) <= 1e-10

    def test_cv_ratio_form(self, capsys, tmp_path):
        x = sample_mvn([2.0], [[1.0]], 80, rep_stream(3, 0))
        write_csv(tmp_path / "d.csv", x)
        config = {"model": "location_scale_normal", "data": "d.csv", "constraint": {"type": "cv", "c": 0.5, "form": "ratio"}}
        report = ok(capsys, "estimate", config, tmp_path)
        t = report["theta_tilde"]
        assert abs(t[1] / t[0] - 0.5) <= 1e-10

    def test_copula_reports_average(self, capsys, tmp_path):
        from constrained_efficiency.models import correlation_from_pairs
        from constrained_efficiency.montecarlo import sample_gaussian_copula

        X = sample_gaussian_copula(correlation_from_pairs([0.4], 3), 300, rep_stream(4, 0))
        write_csv(tmp_path / "d.csv", X)
        report = ok(capsys, "estimate", {"model": "exchangeable_copula", "data": "d.csv"}, tmp_path)
        assert report["exchangeable_average"] == pytest.approx([np.mean(report["theta_hat"])] * 3, abs=1e-15)

    def test_mvn_mean_needs_constraint(self, capsys, tmp_path):
        write_csv(tmp_path / "d.csv", np.random.default_rng(0).standard_normal((10, 2)))
        failed(capsys, "estimate", {"model": "mvn_mean", "data": "d.csv"}, tmp_path, 2)

    def test_singular_covariance_is_numerical(self, capsys, tmp_path):
        write_csv(tmp_path / "d.csv", [[0, 1], [2, 3], [4, 5]])
        failed(capsys, "estimate", {"model": "common_mean", "data": "d.csv"}, tmp_path, 3)


class TestBound:
    def test_identity(self, capsys, tmp_path):
        config = {"info": [[1, 0], [0, 1]], "constraint": {"type": "linear", "R": [[1], [-1]]}}
        report = ok(capsys, "bound", config, tmp_path)
        assert np.allclose(report["bound_Q"], 0.5, atol=1e-15)
        assert report["max_discrepancy"] <= 1e-12

    def test_correlated(self, capsys, tmp_path):
        config = {"info": [[2, 1], [1, 2]], "constraint": {"type": "linear", "R": [[1], [-1]]}}
        report = ok(capsys, "bound", config, tmp_path)
        assert np.allclose(report["bound_Q"], 1 / 6, atol=1e-15)
        assert np.allclose(report["bound_Q_nullspace"], 1 / 6, atol=1e-15)

    def test_d_not_below_k(self, capsys, tmp_path):
        config = {"info": [[1, 0], [0, 1]], "constraint": {"type": "linear", "R": [[1, 0], [0, 1]]}}
        assert "constraint dimension" in failed(capsys, "bound", config, tmp_path, 2)

    def test_nonlinear_needs_point(self, capsys, tmp_path):
        failed(capsys, "bound", {"info": [[1, 0], [0, 1]], "constraint": {"type": "circle"}}, tmp_path, 2)
        report = ok(capsys, "bound", {"info": [[1, 0], [0, 1]], "constraint": {"type": "circle"}, "theta": [1, 0]}, tmp_path)
        assert np.allclose(report["bound_Q"], [[0, 0], [0, 1]], atol=1e-15)

    def test_not_positive_definite(self, capsys, tmp_path):
        config = {"info": [[1, 2], [2, 1]], "constraint": {"type": "linear", "R": [[1], [-1]]}}
        failed(capsys, "bound", config, tmp_path, 3)

    def test_schema_rejects_missing_field(self, capsys, tmp_path):
        assert "invalid config" in failed(capsys, "bound", {"info": [[1, 0], [0, 1]]}, tmp_path, 2)


class TestProject:
    def test_radial(self, capsys, tmp_path):
        report = ok(capsys, "project", {"point": [2, 0], "constraint": {"type": "circle"}}, tmp_path)
        assert report["theta_tilde"] == pytest.approx([1.0, 0.0], abs=1e-12)

    def test_on_manifold(self, capsys, tmp_path):
        report = ok(capsys, "project", {"point": [0.6, 0.8], "constraint": {"type": "circle"}}, tmp_path)
        assert report["theta_tilde"] == [0.6, 0.8]
        assert report["iterations"] == 0

    def test_normalised(self, capsys, tmp_path):
        report = ok(capsys, "project", {"point": [0.8, 0.7], "constraint": {"type": "circle"}}, tmp_path)
        expected = np.array([0.8, 0.7]) / np.sqrt(1.13)
        assert np.max(np.abs(np.array(report["theta_tilde"]) - expected)) <= 1e-9
        assert report["theta_tilde"] == pytest.approx([0.752577, 0.658505], abs=1e-6)

    def test_rank_failure(self, capsys, tmp_path):
        failed(capsys, "project", {"point": [0, 0], "constraint": {"type": "circle"}}, tmp_path, 3)

    def test_command_mismatch(self, capsys, tmp_path):
        config = {"command": "bound", "point": [0, 0], "constraint": {"type": "circle"}}
        failed(capsys, "project", config, tmp_path, 2)


def test_non_convergence_exit_code(capsys, tmp_path, monkeypatch):
    import constrained_efficiency.cli as cli
    from constrained_efficiency.estimator import project_to_manifold

    monkeypatch.setattr(cli, "project_to_manifold", lambda p, cs: project_to_manifold(p, cs, max_iter=1))
    failed(capsys, "project", {"point": [3, 0.5], "constraint": {"type": "circle"}}, tmp_path, 4)


SIM = {
    "scenario": {"model": "common_mean", "true_theta": [0, 0], "cov": [[1, 0], [0, 1]], "n": 400, "reps": 2000, "seed": 42}
}


class TestSimulate:
    def test_single_rep_flag(self, capsys, tmp_path):
        config = {"scenario": {**SIM["scenario"], "reps": 1}}
        report = ok(capsys, "simulate", config, tmp_path)
        assert report["non_inferential"] is True

    def test_common_mean_frobenius(self, capsys, tmp_path):
        report = ok(capsys, "simulate", SIM, tmp_path)
        assert report["relative_frobenius_error"] <= 0.10
        assert np.allclose(report["theoretical_bound"], 0.5)

    def test_byte_identical_output_files(self, tmp_path):
        path = tmp_path / "sim.json"
        small = {"scenario": {**SIM["scenario"], "reps": 200}}
        path.write_text(json.dumps(small), encoding="utf-8")
        outputs = []
        for i, workers in enumerate(["1", "1", "3"]):
            cfg = tmp_path / f"sim{i}.json"
            cfg.write_text(json.dumps({**small, "workers": int(workers)}), encoding="utf-8")
            out = tmp_path / f"out{i}.json"
            assert main(["simulate", "--config", str(cfg), "--output", str(out)]) == 0
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1] == outputs[2]

    def test_seed_override(self, capsys, tmp_path):
        small = {"scenario": {**SIM["scenario"], "reps": 50}}
        a = ok(capsys, "simulate", small, tmp_path, "--seed", "7")
        b = ok(capsys, "simulate", {"scenario": {**small["scenario"], "seed": 7}}, tmp_path)
        assert a == b

    def test_failure_rate_exit(self, capsys, tmp_path):
        config = {"scenario": {"model": "custom_mvn_with_constraint", "true_theta": [1, 0], "n": 2, "reps": 10,
                               "seed": 0, "constraint": {"type": "circle"}}}
        failed(capsys, "simulate", config, tmp_path, 3)

    def test_infeasible_truth(self, capsys, tmp_path):
        config = {"scenario": {**SIM["scenario"], "true_theta": [0, 1]}}
        failed(capsys, "simulate", config, tmp_path, 2)


def test_module_entry_point(tmp_path):
    cfg = tmp_path / "p.json"
    cfg.write_text(json.dumps({"point": [2, 0], "constraint": {"type": "circle"}}), encoding="utf-8")
    proc = subprocess.run(
        [sys.executable, "-m", "constrained_efficiency", "project", "--config", str(cfg)],
        capture_output=True,
        text=True,
        check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["theta_tilde"] == pytest.approx([1.0, 0.0])


def test_bad_json_config(capsys, tmp_path):
    path = tmp_path / "c.json"
    path.write_text("{not json", encoding="utf-8")
    assert main(["bound", "--config", str(path)]) == 2
    assert "not valid JSON" in capsys.readouterr().err
