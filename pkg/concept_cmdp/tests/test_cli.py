import json
from datetime import datetime, timezone

import numpy as np
import pytest

from main import build_parser, main
from models import Run
from schemas import RunResponse
from services.cmdp import load_cmdp
from services.learner import load_classifier


@pytest.fixture
def rental_file(tmp_path):
    path = tmp_path / "rental.json"
    assert main(["make-env", "rental-car", "--out", str(path)]) == 0
    return path


def test_every_command_is_registered():
    parser = build_parser()
    for command in ("solve", "learn-concepts", "verify-bounds", "trmc", "transfer", "report", "make-env"):
        assert parser.parse_args(_minimal(command)).command == command


def _minimal(command):
    return {
        "solve": ["solve", "env.json"],
        "learn-concepts": ["learn-concepts", "env.json"],
        "verify-bounds": ["verify-bounds", "--random", "1"],
        "trmc": ["trmc", "env.json", "--classifier", "phi.json"],
        "transfer": ["transfer"],
        "report": ["report", "--runs"],
        "make-env": ["make-env", "random"],
    }[command]


# ── Environments and solving ───────────────────────────────────────────

def test_make_env_variants(tmp_path, rental_file):
    assert load_cmdp(rental_file).shape() == (4, 2, 2)
    single = tmp_path / "c1.json"
    assert main(["make-env", "rental-car", "--contexts", "c1", "--out", str(single)]) == 0
    assert load_cmdp(single).n_contexts == 1
    grid = tmp_path / "grid.json"
    assert main(["make-env", "gridworld", "--tasks", "plain,seek", "--out", str(grid)]) == 0
    assert load_cmdp(grid).n_contexts == 2
    assert main(["make-env", "gridworld", "--tasks", "plain,fly", "--out", str(grid)]) == 2


def test_solve_writes_json_and_csv(tmp_path, rental_file):
    out = tmp_path / "solution.json"
    assert main(["solve", str(rental_file), "--out", str(out)]) == 0
    data = json.loads(out.read_text())
    np.testing.assert_allclose(data["v_values"], np.ones((2, 4)))

    values = tmp_path / "values.csv"
    assert main(["solve", str(rental_file), "--context", "1", "--format", "csv", "--out", str(values)]) == 0
    lines = values.read_text().splitlines()
    assert lines[0] == "context,state,value,occupancy"
    assert len(lines) == 5


def test_solve_errors(tmp_path, rental_file):
    assert main(["solve", str(rental_file), "--context", "5"]) == 2
    assert main(["solve", str(tmp_path / "missing.json")]) == 2


# ── Concept learning ───────────────────────────────────────────────────

def test_learn_concepts_is_reproducible(tmp_path, rental_file):
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    for out in (first, second):
        assert main(["learn-concepts", str(rental_file), "--method", "exhaustive", "--out", str(out)]) == 0
    assert first.read_bytes() == second.read_bytes()
    data = json.loads(first.read_text())
    assert abs(data["objective"]) < 1e-12
    assert data["method"] == "exhaustive"
    np.testing.assert_array_equal(load_classifier(first).hard_assignment(), [0, 0, 1, 1])


def test_factor_sizes_need_the_gradient_method(rental_file):
    args = ["learn-concepts", str(rental_file), "--factor-sizes", "3,3", "--method", "exhaustive"]
    assert main(args) == 4


# ── Bounds ─────────────────────────────────────────────────────────────

def test_verify_bounds_on_an_environment(tmp_path, rental_file, capsys):
    out = tmp_path / "bounds.json"
    assert main(["verify-bounds", str(rental_file), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["total_violations"] == 0
    assert [r["classifier"] for r in report["reports"]] == ["identity", "constant"]

    capsys.readouterr()
    assert main(["report", str(out)]) == 0
    nats = capsys.readouterr().out
    assert main(["report", str(out), "--bits"]) == 0
    in_bits = capsys.readouterr().out
    assert "(I in nats)" in nats and "(I in bits)" in in_bits
    # the constant concept loses half a bit: 0.5 (log 2 - h(eps)) nats
    assert "constant     regret^2/F" in in_bits
    assert "I 0.4996" in in_bits
    assert "I 0.3463" in nats


def test_tampered_solution_fails_verification(tmp_path, rental_file):
    solution = tmp_path / "solution.json"
    assert main(["solve", str(rental_file), "--out", str(solution)]) == 0
    data = json.loads(solution.read_text())
    data["q_values"] = (np.asarray(data["q_values"]) + 0.01).tolist()
    solution.write_text(json.dumps(data))
    out = tmp_path / "bounds.json"
    assert main(["verify-bounds", str(rental_file), "--solution", str(solution), "--out", str(out)]) == 5
    assert json.loads(out.read_text())["solution_violations"]


def test_verify_bounds_on_random_instances(tmp_path):
    out = tmp_path / "suite.json"
    args = ["verify-bounds", "--random", "2", "--states", "3", "--actions", "2", "--policies", "10", "--out", str(out)]
    assert main(args) == 0
    assert json.loads(out.read_text())["n_instances"] == 2


def test_verify_bounds_needs_one_source(rental_file):
    assert main(["verify-bounds"]) == 2
    assert main(["verify-bounds", str(rental_file), "--random", "3"]) == 2


# ── TRMC, transfer and reports ─────────────────────────────────────────

def test_trmc_command(tmp_path, rental_file):
    phi = tmp_path / "phi.json"
    assert main(["learn-concepts", str(rental_file), "--method", "exhaustive", "--out", str(phi)]) == 0
    out = tmp_path / "trmc.json"
    assert main(["trmc", str(rental_file), "--classifier", str(phi), "--episodes", "50", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["episodes"] == 50
    assert report["n_updates"] == 10
    assert report["max_kl_step"] <= 0.05 + 1e-9


def test_transfer_and_report(tmp_path, rental_file, capsys):
    out_dir = tmp_path / "transfer"
    config = tmp_path / "experiment.json"
    config.write_text(json.dumps({
        "train_env": str(rental_file),
        "test_env": str(rental_file),
        "learner": {"method": "exhaustive"},
        "trmc": {"episode_budget": 30},
        "mc": {"episode_budget": 30},
        "n_seeds": 2,
        "out_dir": str(out_dir),
    }))
    assert main(["transfer", "--config", str(config)]) == 0
    for name in ("report.json", "classifier.json", "curves_baseline.csv", "curves_trmc.csv", "curves_prior.csv"):
        assert (out_dir / name).is_file()

    capsys.readouterr()
    assert main(["report", str(out_dir / "report.json")]) == 0
    assert "Transfer report" in capsys.readouterr().out

    assert main(["report", "--runs", "--limit", "100", "--format", "json"]) == 0
    runs = json.loads(capsys.readouterr().out)
    commands = {run["command"] for run in runs}
    assert {"make-env", "transfer", "report"} <= commands
    transfer_run = next(run for run in runs if run["command"] == "transfer")
    assert transfer_run["status"] == "completed"
    assert transfer_run["exit_code"] == 0


def test_report_rejects_unknown_files(tmp_path):
    stray = tmp_path / "stray.json"
    stray.write_text('{"hello": 1}')
    assert main(["report", str(stray)]) == 2
    assert main(["report"]) == 2


def test_run_rows_validate_from_attributes():
    created = datetime(2024, 1, 2, tzinfo=timezone.utc)
    row = Run(id=3, command="solve", status="completed", exit_code=0, created_at=created)
    response = RunResponse.model_validate(row)
    assert (response.id, response.command, response.exit_code) == (3, "solve", 0)
    assert response.completed_at is None
    assert RunResponse.model_config["from_attributes"] is True
