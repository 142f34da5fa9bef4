"""Pytest configuration: temporary workspace, small shared datasets and record builders."""

from __future__ import annotations

import pytest

from feature_graph_lab.core.dmie import parse_expression
from feature_graph_lab.core.fgraph import compute_strata, dump_edge_list, graph_id, parse_edge_list
from feature_graph_lab.core.synth import generate
from feature_graph_lab.models import GnnConfig, RunRecord, RunStatus, SyntheticSpec

CANONICAL_TRUTH = "x0*x1 + x2*x3 + x4 + x5"


def pytest_configure(config):
    """Register custom markers."""
    config.addinivalue_line("markers", "slow: marks acceptance-scale training experiments")


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    """Point the configuration layer at an empty temporary workspace."""
    root = tmp_path / "workspace"
    monkeypatch.setenv("FGLAB_WORKSPACE", str(root))
    return root


@pytest.fixture
def canonical_truth():
    return parse_expression(CANONICAL_TRUTH)


@pytest.fixture(scope="session")
def small_spec():
    return SyntheticSpec(p=2, q=2, n=400)


@pytest.fixture(scope="session")
def small_dataset(small_spec):
    return generate(small_spec)


@pytest.fixture(scope="session")
def noiseless_dataset():
    return generate(SyntheticSpec(p=1, q=2, n=300, noise_scale=0.0))


@pytest.fixture
def make_record(small_spec):
    """Build a run record for an edge list on the canonical truth without training anything."""
    expression = parse_expression(CANONICAL_TRUTH)

    def _make(
        edges: str,
        seed: int = 0,
        layers: int = 1,
        mae: float | None = 0.5,
        status: RunStatus = RunStatus.COMPLETED,
        label: str | None = None,
        group: str | None = None,
        dataset: SyntheticSpec | None = None,
    ) -> RunRecord:
        graph = parse_edge_list(edges)
        config = GnnConfig(num_layers=layers, seed=seed)
        return RunRecord(
            cell_key=f"{graph_id(graph)}-{layers}-{seed}",
            dataset=dataset or small_spec,
            truth=expression.render(),
            graph_id=graph_id(graph),
            graph_edges=dump_edge_list(graph),
            graph_label=label,
            group=group,
            strata=compute_strata(graph, expression),
            config=config,
            seed=seed,
            status=status,
            test_mae=mae if status == RunStatus.COMPLETED else None,
        )

    return _make
