"""Tests for the command-line front end."""

from __future__ import annotations

import json
from types import SimpleNamespace
from unittest.mock import patch

import pytest

from feature_graph_lab.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, build_parser, main
from feature_graph_lab.models import ExperimentPlan, GraphSource, SyntheticSpec


def run(capsys, *argv: str) -> tuple[int, dict]:
    code = main(["--quiet", *argv])
    return code, json.loads(capsys.readouterr().out)


def write_graph(directory, name: str, text: str):
    path = directory / name
    path.write_text(text, encoding="utf-8")
    return path


def test_theory_bell(capsys):
    code, result = run(capsys, "theory", "bell", "--max-d", "4")

    assert code == EXIT_OK
    assert [row["classes"] for row in result["rows"]] == [1, 2, 5, 15]
    assert result["rows"][-1]["graphs"] == 64


def test_theory_bell_range(capsys):
    code, result = run(capsys, "theory", "bell", "--max-d", "9")

    assert code == EXIT_VALIDATION
    assert result["success"] is False


def test_gen_data(workspace, capsys):
    code, result = run(capsys, "gen-data", "--p", "2", "--q", "2", "--n", "400")

    assert code == EXIT_OK
    assert result["features"] == 6
    assert result["dataset"] == "p2_q2_n400"
    assert result["truth"] == "x0*x1 + x2*x3 + x4 + x5"
    assert (workspace / "datasets" / "p2_q2_n400.csv").exists()
    assert "datasets/p2_q2_n400.csv" in json.loads((workspace / "manifest.json").read_text(encoding="utf-8"))


@pytest.mark.parametrize(
    "argv",
    [
        ["--replica", "1"],
        ["--truth", "x0*x0 + x1"],
        ["--n", "5"],
        ["--noise-scale", "-1"],
    ],
)
def test_gen_data_rejects(workspace, capsys, argv):
    code, result = run(capsys, "gen-data", "--p", "1", "--q", "2", *argv)

    assert code == EXIT_VALIDATION
    assert result["success"] is False


def test_gen_data_replica_policy(workspace, capsys):
    _, canonical = run(capsys, "gen-data", "--p", "1", "--q", "2", "--n", "100")
    _, replica = run(capsys, "gen-data", "--p", "1", "--q", "2", "--n", "100", "--seed-policy", "replica", "--replica", "2")

    assert canonical["dataset"] != replica["dataset"]


def test_sample_graphs(workspace, tmp_path, capsys):
    run(capsys, "gen-data", "--p", "2", "--q", "2", "--n", "200")
    quotas = tmp_path / "quotas.json"
    quotas.write_text(json.dumps({"quotas": [{"count": 2, "interaction_edges": 2, "non_interaction_edges": 3}]}))

    code, result = run(capsys, "sample-graphs", "--dataset", "p2_q2_n200", "--strata-plan", str(quotas), "--seed", "4")

    assert code == EXIT_OK
    assert result["samples"] == 2
    assert result["graphs"] == 8
    assert (workspace / "graphs" / "p2_q2_n200" / "index.json").exists()


def test_sample_graphs_infeasible(workspace, tmp_path, capsys):
    run(capsys, "gen-data", "--p", "2", "--q", "2", "--n", "200")
    quotas = tmp_path / "quotas.json"
    quotas.write_text(json.dumps([{"count": 1, "interaction_edges": 3}]))

    code, result = run(capsys, "sample-graphs", "--dataset", "p2_q2_n200", "--strata-plan", str(quotas))

    assert code == EXIT_VALIDATION
    assert result["error_type"] == "InfeasibleStratumError"


def test_train_missing_graph_writes_nothing(workspace, tmp_path, capsys):
    run(capsys, "gen-data", "--p", "1", "--q", "2", "--n", "200")
    code, result = run(capsys, "train", "--dataset", "p1_q2_n200", "--graph", str(tmp_path / "absent.txt"))

    assert code == EXIT_VALIDATION
    assert result["error_type"] == "FileNotFoundError"
    assert not (workspace / "runs" / "train.jsonl").exists()


def test_train_graph_size_mismatch(workspace, tmp_path, capsys):
    run(capsys, "gen-data", "--p", "1", "--q", "2", "--n", "200")
    graph = write_graph(tmp_path, "g.txt", "d=6\n0 1\n")

    code, result = run(capsys, "train", "--dataset", "p1_q2_n200", "--graph", str(graph))

    assert code == EXIT_VALIDATION
    assert result["error_type"] == "GraphFormatError"


def test_train_over_cap(workspace, tmp_path, capsys):
    """Test a graph over the arc cap exits with the resource code before training."""
    run(capsys, "gen-data", "--p", "1", "--q", "2", "--n", "200")
    graph = write_graph(tmp_path, "g.txt", "d=4\n0 1\n2 3\n")

    with patch("feature_graph_lab.cli.train") as mock_train:
        code, result = run(capsys, "train", "--dataset", "p1_q2_n200", "--graph", str(graph), "--arc-cap", "3")

    assert code == 3
    assert result["error_type"] == "ResourceCapError"
    mock_train.assert_not_called()


def test_train_records_and_skips(workspace, tmp_path, capsys):
    run(capsys, "gen-data", "--p", "1", "--q", "2", "--n", "200")
    graph = write_graph(tmp_path, "truth.txt", "d=4\n0 1\n")
    argv = ["train", "--dataset", "p1_q2_n200", "--graph", str(graph), "--max-epochs", "2", "--seed", "1"]

    code, first = run(capsys, *argv)
    assert code == EXIT_OK
    assert first["skipped"] is False
    assert first["epochs_run"] == 2
    assert (workspace / "runs" / "checkpoints" / first["cell_key"]).exists()

    code, second = run(capsys, *argv)
    assert code == EXIT_OK
    assert second["skipped"] is True
    assert second["cell_key"] == first["cell_key"]
    assert second["test_mae"] == first["test_mae"]


def test_sweep_and_stats(workspace, tmp_path, capsys):
    plan = ExperimentPlan(
        name="tiny",
        dataset=SyntheticSpec(p=2, q=2, n=200),
        graph_source=GraphSource(kind="reference"),
        replicates=2,
    )
    plan_path = tmp_path / "tiny.json"
    plan_path.write_text(plan.model_dump_json(), encoding="utf-8")
    trained = SimpleNamespace(
        epochs_run=1, final_train_loss=0.5, final_lr=0.01, stopped_early=False, test_mae=0.4, test_mse=0.2, wall_time=0.0
    )

    with patch("feature_graph_lab.core.expharness.train", return_value=trained):
        code, result = run(capsys, "sweep", "--plan", str(plan_path), "--workers", "1")

    assert code == EXIT_OK
    assert result["cells"] == 6
    assert result["completed"] == 6

    code, stats = run(capsys, "stats", "edges", "--runs", "tiny", "--svg")
    assert code == EXIT_OK
    assert stats["rows"] == 3
    assert (workspace / "reports" / "tiny_edges.csv").exists()
    assert (workspace / "reports" / "tiny_edges.svg").exists()

    code, hops = run(capsys, "stats", "hops", "--runs", "tiny")
    assert code == EXIT_OK
    assert hops["contrasts"]["adjacent_vs_two_hops_L1"] is None


def test_sweep_retry_failed(workspace, tmp_path, capsys):
    plan = ExperimentPlan(name="flaky", dataset=SyntheticSpec(p=2, q=2, n=200), replicates=1)
    plan_path = tmp_path / "flaky.json"
    plan_path.write_text(plan.model_dump_json(), encoding="utf-8")
    trained = SimpleNamespace(
        epochs_run=1, final_train_loss=0.5, final_lr=0.01, stopped_early=False, test_mae=0.4, test_mse=0.2, wall_time=0.0
    )

    with patch("feature_graph_lab.core.expharness.train", side_effect=RuntimeError("oom")):
        _, result = run(capsys, "sweep", "--plan", str(plan_path))
    assert result["failed"] == 3

    with patch("feature_graph_lab.core.expharness.train", return_value=trained):
        _, resumed = run(capsys, "sweep", "--plan", str(plan_path))
        code, retried = run(capsys, "sweep", "--plan", str(plan_path), "--retry-failed")

    assert resumed["failed"] == 3
    assert code == EXIT_OK
    assert retried["completed"] == 3
    assert retried["failed"] == 0


def test_sweep_unknown_recipe(workspace, capsys):
    code, result = run(capsys, "sweep", "--recipe", "ablation9")

    assert code == EXIT_VALIDATION
    assert result["error_type"] == "PlanError"


def test_stats_missing_runs(workspace, capsys):
    code, result = run(capsys, "stats", "removal", "--runs", "nothing-here")

    assert code == EXIT_VALIDATION
    assert result["error_type"] == "FileNotFoundError"


def test_mdl_select(workspace, capsys):
    _, data = run(capsys, "gen-data", "--p", "1", "--q", "2", "--n", "300", "--noise-scale", "0")
    code, result = run(capsys, "mdl", "select", "--dataset", data["dataset"])

    assert code == EXIT_OK
    assert result["truth_recovered"] is True
    assert result["selected_edges"] == [[0, 1]]
    assert (workspace / "reports" / f"mdl_select_{data['dataset']}.json").exists()


def test_mdl_select_needs_dataset(workspace, capsys):
    code, _ = run(capsys, "mdl", "select")
    assert code == EXIT_VALIDATION


def test_mdl_verify(workspace, capsys):
    code, result = run(capsys, "mdl", "verify", "--trials", "2", "--n", "200", "--d-max", "5", "--noise-scale", "0")

    assert code == EXIT_OK
    assert result["trials"] == 2
    assert all(result["pass_rates"][check] == 1.0 for check in result["asserted"] if check in result["pass_rates"])
    assert (workspace / "reports" / "mdl_verify_random_seed0.csv").exists()


def test_verify_workspace_detects_tampering(workspace, capsys):
    run(capsys, "gen-data", "--p", "1", "--q", "2", "--n", "100")
    code, result = run(capsys, "verify-workspace")
    assert code == EXIT_OK
    assert result["checked"] == 2

    with open(workspace / "datasets" / "p1_q2_n100.csv", "a", encoding="utf-8") as f:
        f.write("0,0,0,0,0\n")
    code, result = run(capsys, "verify-workspace")

    assert code == EXIT_VALIDATION
    assert result["tampered"] == ["datasets/p1_q2_n100.csv"]


def test_unexpected_error_exit_code(workspace, capsys):
    with patch("feature_graph_lab.cli.verify_workspace", side_effect=OSError("disk gone")):
        code, result = run(capsys, "verify-workspace")

    assert code == EXIT_RUNTIME
    assert result["error"] == "disk gone"


def test_parser_requires_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
