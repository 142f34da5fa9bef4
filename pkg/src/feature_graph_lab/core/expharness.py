"""Experiment sweeps over (graph, depth, seed) cells and their aggregate tables."""

from __future__ import annotations

import csv
import functools
import json
import logging
import math
import time
from collections import defaultdict
from collections.abc import Iterable
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any

import numpy as np

from ..config import get_sweep_config, get_training_defaults
from ..errors import GraphFormatError, PlanError, UnmatchedPairError
from ..models import (
    DmieExpression,
    ExperimentPlan,
    FeatureGraph,
    GnnConfig,
    PairedStat,
    RunRecord,
    RunStatus,
    SyntheticSpec,
)
from .dmie import parse_expression
from .fgraph import (
    LatticeStep,
    StratifiedSample,
    complete_graph,
    compute_strata,
    dump_edge_list,
    graph_id,
    ground_truth_graph,
    null_graph,
    parse_edge_list,
    removal_lattice,
    sample_stratified,
)
from .gnnmodel import TrainedModel, train
from .mdlselect import linear_baseline
from .store import RecordStore, cell_key, store_path
from .synth import SyntheticDataset, generate, noise_mae_floor, truth_expression

logger = logging.getLogger(__name__)

REFERENCE_BUILDERS = {
    "null": lambda e: null_graph(e.num_features),
    "complete": lambda e: complete_graph(e.num_features),
    "ground_truth": ground_truth_graph,
}


@dataclass(frozen=True)
class PlannedGraph:
    graph: FeatureGraph
    label: str | None = None
    group: str | None = None


@dataclass(frozen=True)
class Cell:
    """One unit of sweep work; picklable for worker processes."""

    key: str
    plan: str
    dataset: SyntheticSpec
    graph: FeatureGraph
    label: str | None
    group: str | None
    config: GnnConfig
    seed: int
    arc_cap: int | None


@functools.lru_cache(maxsize=8)
def _dataset(spec: SyntheticSpec) -> SyntheticDataset:
    return generate(spec)


def _sample(plan: ExperimentPlan, expression: DmieExpression, siblings: bool, max_attempts: int) -> list[StratifiedSample]:
    source = plan.graph_source
    if not source.quotas:
        raise PlanError(f"Plan {plan.name!r}: a {source.kind} graph source needs at least one quota")
    rng = np.random.default_rng(source.sample_seed)
    return sample_stratified(expression, source.quotas, rng, max_attempts=max_attempts, siblings=siblings)


def plan_graphs(plan: ExperimentPlan, max_attempts: int | None = None) -> list[PlannedGraph]:
    """
    Resolve a plan's graph source into concrete graphs.

    Stratified sources yield every sibling of every sample (grouped by the
    sample's graph id); lattice sources yield every graph of each sample's
    removal lattice; reference sources yield null/complete/ground-truth.
    """
    expression = truth_expression(plan.dataset)
    source = plan.graph_source
    attempts = max_attempts or get_sweep_config()["max_attempts"]

    if source.kind == "reference":
        return [PlannedGraph(REFERENCE_BUILDERS[kind](expression), label=kind) for kind in source.kinds]

    if source.kind == "explicit":
        planned = []
        for text in source.graphs:
            graph = parse_edge_list(text)
            if graph.num_features != expression.num_features:
                raise GraphFormatError(f"Graph on {graph.num_features} nodes for a {expression.num_features}-feature dataset")
            planned.append(PlannedGraph(graph))
        return planned

    if source.kind == "stratified":
        return [
            PlannedGraph(graph, label=f"quota{s.quota_index}", group=s.group_id)
            for s in _sample(plan, expression, source.siblings, attempts)
            for graph in s.siblings
        ]

    planned = []
    for s in _sample(plan, expression, False, attempts):
        seen: dict[frozenset, FeatureGraph] = {}
        for step in removal_lattice(s.graph, expression):
            seen.setdefault(step.parent.edge_set, step.parent)
            seen.setdefault(step.child.edge_set, step.child)
        planned.extend(PlannedGraph(g, label="lattice", group=s.group_id) for g in seen.values())
    return planned


def cell_config(plan: ExperimentPlan, layers: int, seed: int) -> GnnConfig:
    """Training defaults, then the plan's overrides, then the cell's depth and seed."""
    unknown = set(plan.training) - set(GnnConfig.model_fields)
    if unknown:
        raise PlanError(f"Plan {plan.name!r} has unknown training keys: {', '.join(sorted(unknown))}")
    return GnnConfig(**{**get_training_defaults(), **plan.training, "num_layers": layers, "seed": seed})


def _tops_group(cell: Cell) -> bool:
    return cell.group is not None and cell.group == graph_id(cell.graph)


def plan_cells(plan: ExperimentPlan, arc_cap: int | None = None, max_attempts: int | None = None) -> list[Cell]:
    """Every (graph, depth, seed) cell of the plan, deduplicated by cell key."""
    if plan.p_values is not None:
        raise PlanError(f"Plan {plan.name!r} has p_values; run it with scaling_sweep")
    cells: dict[str, Cell] = {}
    for planned in plan_graphs(plan, max_attempts):
        for layers in plan.layers:
            for seed in plan.seed_list():
                cell = make_cell(
                    plan.name,
                    plan.dataset,
                    planned.graph,
                    cell_config(plan, layers, seed),
                    label=planned.label,
                    group=planned.group,
                    arc_cap=arc_cap,
                )
                # a graph shared by several groups keeps the group it tops
                existing = cells.get(cell.key)
                if existing is None or (_tops_group(cell) and not _tops_group(existing)):
                    cells[cell.key] = cell
    return list(cells.values())


def make_cell(
    plan: str,
    dataset: SyntheticSpec,
    graph: FeatureGraph,
    config: GnnConfig,
    label: str | None = None,
    group: str | None = None,
    arc_cap: int | None = None,
) -> Cell:
    return Cell(
        key=cell_key(dataset, graph_id(graph), config, config.seed),
        plan=plan,
        dataset=dataset,
        graph=graph,
        label=label,
        group=group,
        config=config,
        seed=config.seed,
        arc_cap=arc_cap,
    )


def exceeds_cap(cell: Cell) -> bool:
    return cell.arc_cap is not None and 2 * cell.graph.num_edges > cell.arc_cap


def _record_fields(cell: Cell, started_at: datetime) -> dict[str, Any]:
    expression = truth_expression(cell.dataset)
    return {
        "cell_key": cell.key,
        "plan": cell.plan,
        "dataset": cell.dataset,
        "truth": expression.render(),
        "graph_id": graph_id(cell.graph),
        "graph_edges": dump_edge_list(cell.graph),
        "graph_label": cell.label,
        "group": cell.group,
        "strata": compute_strata(cell.graph, expression),
        "config": cell.config,
        "seed": cell.seed,
        "started_at": started_at,
    }


def completed_record(cell: Cell, trained: TrainedModel, started_at: datetime) -> RunRecord:
    return RunRecord(
        status=RunStatus.COMPLETED,
        epochs_run=trained.epochs_run,
        final_train_loss=trained.final_train_loss,
        final_lr=trained.final_lr,
        stopped_early=trained.stopped_early,
        test_mae=trained.test_mae,
        test_mse=trained.test_mse,
        wall_time=trained.wall_time,
        **_record_fields(cell, started_at),
    )


def run_cell(cell: Cell) -> RunRecord:
    """Train one cell; failures and cap violations become records instead of exceptions."""
    started_at = datetime.now()
    started = time.perf_counter()

    if exceeds_cap(cell):
        arcs = 2 * cell.graph.num_edges
        logger.warning(f"Cell {cell.key}: {arcs} arcs exceed the cap of {cell.arc_cap}")
        return RunRecord(
            status=RunStatus.EXCEEDED,
            error=f"{arcs} arcs exceed cap {cell.arc_cap}",
            **_record_fields(cell, started_at),
        )

    try:
        trained = train(cell.graph, _dataset(cell.dataset), cell.config)
    except Exception as e:
        logger.warning(f"Cell {cell.key} failed: {e}")
        return RunRecord(
            status=RunStatus.FAILED,
            error=f"{type(e).__name__}: {e}",
            wall_time=time.perf_counter() - started,
            **_record_fields(cell, started_at),
        )
    return completed_record(cell, trained, started_at)


def _is_settled(record: RunRecord | None, retry_failed: bool) -> bool:
    if record is None:
        return False
    return not (retry_failed and record.status == RunStatus.FAILED)


def run_plan(
    plan: ExperimentPlan,
    store: RecordStore | None = None,
    workers: int | None = None,
    arc_cap: int | None = None,
    max_attempts: int | None = None,
    retry_failed: bool = False,
) -> list[RunRecord]:
    """
    Execute every cell of a plan, skipping cells the store already holds.

    Args:
        plan: Validated experiment plan.
        store: Record store; ``<runs>/<plan name>.jsonl`` when omitted.
        workers: Process count; 1 runs cells in this process.
        arc_cap: Arc limit per graph; falls back to the plan's, then the sweep config.
        max_attempts: Rejection-sampling cap per quota.
        retry_failed: Train again cells whose stored record failed.

    Returns:
        The plan's records in cell order (previously stored ones included).
    """
    sweep = get_sweep_config()
    store = store if store is not None else RecordStore(store_path(plan.name))
    workers = workers or sweep["workers"]
    cap = arc_cap if arc_cap is not None else plan.arc_cap if plan.arc_cap is not None else sweep["arc_cap"]

    cells = plan_cells(plan, arc_cap=cap, max_attempts=max_attempts)
    pending = [c for c in cells if not _is_settled(store.get(c.key), retry_failed)]
    logger.info(f"Plan {plan.name}: {len(cells)} cells, {len(cells) - len(pending)} already recorded")

    if workers <= 1 or len(pending) <= 1:
        for cell in pending:
            store.append(run_cell(cell))
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_cell, cell) for cell in pending]
            for future in as_completed(futures):
                store.append(future.result())

    return [store.get(c.key) for c in cells]


# Aggregation


def _completed(records: Iterable[RunRecord]) -> list[RunRecord]:
    return [r for r in records if r.status == RunStatus.COMPLETED and r.test_mae is not None]


def _mean_se(values: list[float]) -> tuple[float, float]:
    mean = math.fsum(values) / len(values)
    if len(values) < 2:
        return mean, math.nan
    std = math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1))
    return mean, std / math.sqrt(len(values))


@dataclass(frozen=True)
class EdgeCell:
    layers: int
    non_interaction_edges: int
    interaction_edges: int
    count: int
    mean_mae: float
    std_err: float


def aggregate_by_edges(records: Iterable[RunRecord]) -> list[EdgeCell]:
    """Mean test MAE per (depth, non-interaction edges, interaction edges), sorted by key."""
    records = list(records)
    groups: dict[tuple[int, int, int], list[float]] = defaultdict(list)
    for r in _completed(records):
        key = (r.layers, r.strata.non_interaction_edge_count, r.strata.interaction_edge_count)
        groups[key].append(r.test_mae)
    skipped = len(records) - sum(len(v) for v in groups.values())
    if skipped:
        logger.info(f"Skipped {skipped} records without a test MAE")

    table = []
    for key in sorted(groups):
        mean, se = _mean_se(groups[key])
        table.append(EdgeCell(*key, count=len(groups[key]), mean_mae=mean, std_err=se))
    return table


def lattice_from_records(records: Iterable[RunRecord]) -> list[LatticeStep]:
    """Rebuild the removal lattice of every group whose top graph (id == group) was recorded."""
    tops: dict[str, RunRecord] = {}
    for r in records:
        if r.group is not None and r.graph_id == r.group:
            tops.setdefault(r.group, r)
    steps = []
    for group in sorted(tops):
        record = tops[group]
        expression = parse_expression(record.truth, num_features=record.dataset.d)
        steps.extend(removal_lattice(parse_edge_list(record.graph_edges), expression))
    return steps


def paired_removal_stats(
    records: Iterable[RunRecord],
    lattice: Iterable[LatticeStep],
    confidence: float = 0.95,
    strict: bool = False,
) -> list[PairedStat]:
    """
    Seed-paired MAE(child) - MAE(parent) per lattice row and depth.

    Pairs are formed only between records with equal depth and seed; steps
    of the same row from different sampled graphs are pooled.

    Raises:
        UnmatchedPairError: ``strict`` and some parent/child record has no partner.
    """
    index: dict[tuple[str, int, int], float] = {}
    for r in _completed(records):
        index[(r.graph_id, r.layers, r.seed)] = r.test_mae
    depth_seeds = sorted({(layers, seed) for _, layers, seed in index})

    pooled: dict[tuple[str, int], dict[str, Any]] = {}
    unmatched = 0
    for step in lattice:
        parent_id, child_id = graph_id(step.parent), graph_id(step.child)
        for layers, seed in depth_seeds:
            parent = index.get((parent_id, layers, seed))
            child = index.get((child_id, layers, seed))
            if parent is None and child is None:
                continue
            if parent is None or child is None:
                unmatched += 1
                continue
            entry = pooled.setdefault(
                (step.row, layers),
                {"parents": [], "children": [], "edges": set(), "differences": []},
            )
            entry["differences"].append(child - parent)
            if parent_id not in entry["parents"]:
                entry["parents"].append(parent_id)
                entry["children"].append(child_id)
            entry["edges"].add(step.removed_edge)

    if unmatched:
        message = f"{unmatched} lattice records have no seed-matched partner"
        if strict:
            raise UnmatchedPairError(message)
        logger.warning(message)

    stats = []
    for (row, layers), entry in sorted(pooled.items()):
        edges = entry["edges"]
        stats.append(
            PairedStat(
                row=row,
                parent_id=",".join(entry["parents"]),
                child_id=",".join(entry["children"]),
                layers=layers,
                removed_edge=next(iter(edges)) if len(edges) == 1 else None,
                differences=tuple(entry["differences"]),
                confidence=confidence,
            )
        )
    return stats


@dataclass
class HopsHeatmap:
    """Mean MAE per (hops between pair 1, hops between pair 2) for one depth; 99 = unreachable."""

    layers: int
    cells: dict[tuple[int, int], tuple[float, int]] = field(default_factory=dict)

    @property
    def axis(self) -> list[int]:
        values = {h for cell in self.cells for h in cell}
        return sorted(values)

    def mean(self, cell: tuple[int, int]) -> float:
        """Mean MAE of a cell; NaN when the cell has no data."""
        return self.cells.get(cell, (math.nan, 0))[0]

    def matrix(self) -> np.ndarray:
        axis = self.axis
        grid = np.full((len(axis), len(axis)), np.nan)
        for (a, b), (mean, _) in self.cells.items():
            grid[axis.index(a), axis.index(b)] = mean
        return grid


def hops_heatmap(records: Iterable[RunRecord]) -> dict[int, HopsHeatmap]:
    """Per depth, mean MAE keyed by the two-pair hop profile; other profiles are ignored."""
    groups: dict[int, dict[tuple[int, int], list[float]]] = defaultdict(lambda: defaultdict(list))
    for r in _completed(records):
        if len(r.strata.hops) != 2:
            continue
        groups[r.layers][tuple(r.strata.hops)].append(r.test_mae)
    return {
        layers: HopsHeatmap(
            layers=layers,
            cells={cell: (math.fsum(v) / len(v), len(v)) for cell, v in sorted(cells.items())},
        )
        for layers, cells in sorted(groups.items())
    }


def _seed_means(records: list[RunRecord], layers: int, cell: tuple[int, int]) -> dict[int, float]:
    by_seed: dict[int, list[float]] = defaultdict(list)
    for r in records:
        if r.layers == layers and tuple(r.strata.hops) == tuple(cell):
            by_seed[r.seed].append(r.test_mae)
    return {seed: math.fsum(v) / len(v) for seed, v in by_seed.items()}


def cell_contrast(
    records: Iterable[RunRecord],
    cell_a: tuple[int, int],
    cell_b: tuple[int, int],
    layers_a: int,
    layers_b: int | None = None,
    confidence: float = 0.95,
) -> PairedStat:
    """
    Seed-paired test of hop cell B against hop cell A.

    Per seed, each cell's MAE is averaged over its graphs; the differences
    B - A are paired by seed. A positive lower bound means B is worse.

    Raises:
        UnmatchedPairError: no seed has records in both cells.
    """
    completed = _completed(records)
    layers_b = layers_a if layers_b is None else layers_b
    a = _seed_means(completed, layers_a, cell_a)
    b = _seed_means(completed, layers_b, cell_b)
    seeds = sorted(set(a) & set(b))
    if not seeds:
        raise UnmatchedPairError(f"No seed has records in both L{layers_a}{cell_a} and L{layers_b}{cell_b}")
    return PairedStat(
        row=f"L{layers_a}{cell_a} -> L{layers_b}{cell_b}",
        parent_id=f"hops{cell_a}",
        child_id=f"hops{cell_b}",
        layers=layers_b,
        differences=tuple(b[s] - a[s] for s in seeds),
        confidence=confidence,
    )


def scaling_sweep(
    plan: ExperimentPlan,
    store: RecordStore | None = None,
    workers: int | None = None,
    arc_cap: int | None = None,
    retry_failed: bool = False,
) -> list[dict[str, Any]]:
    """
    Run the plan once per p in ``plan.p_values`` and tabulate MAE per graph label.

    Every row carries the analytic noise floor and the least-squares linear
    baseline of that p's dataset; exceeded cells are listed under ``exceeded``.
    """
    if not plan.p_values:
        raise PlanError(f"Plan {plan.name!r} has no p_values")
    store = store if store is not None else RecordStore(store_path(plan.name))

    records: list[RunRecord] = []
    for p in plan.p_values:
        spec = plan.dataset.model_copy(update={"p": p})
        sub_plan = plan.model_copy(update={"dataset": spec, "p_values": None})
        records.extend(run_plan(sub_plan, store=store, workers=workers, arc_cap=arc_cap, retry_failed=retry_failed))
    return scaling_table(records)


def scaling_table(records: Iterable[RunRecord]) -> list[dict[str, Any]]:
    """Mean MAE per graph label for each (dataset, depth), sorted by p."""
    by_cell: dict[tuple[SyntheticSpec, int], list[RunRecord]] = defaultdict(list)
    for r in records:
        by_cell[(r.dataset, r.layers)].append(r)

    rows = []
    for (spec, layers), group in sorted(by_cell.items(), key=lambda item: (item[0][0].p, item[0][1])):
        dataset = _dataset(spec)
        baseline_mae, _ = linear_baseline(dataset)
        row: dict[str, Any] = {
            "p": spec.p,
            "d": spec.d,
            "layers": layers,
            "noise_floor": noise_mae_floor(dataset),
            "linear_baseline": baseline_mae,
            "exceeded": sorted({r.graph_label or r.graph_id for r in group if r.status == RunStatus.EXCEEDED}),
        }
        by_label: dict[str, list[float]] = defaultdict(list)
        for r in _completed(group):
            by_label[r.graph_label or r.graph_id].append(r.test_mae)
        for label, values in sorted(by_label.items()):
            row[label] = math.fsum(values) / len(values)
        rows.append(row)
    return rows


# Exports


def export_samples(samples: list[StratifiedSample], expression: DmieExpression, directory: Path) -> list[Path]:
    """Write one edge-list file per distinct graph plus ``index.json`` with ids, strata and groups."""
    directory.mkdir(parents=True, exist_ok=True)
    index: dict[str, dict[str, Any]] = {}
    paths = []
    for sample in samples:
        for graph in sample.siblings:
            gid = graph_id(graph)
            if gid in index:
                continue
            path = directory / f"{gid}.txt"
            path.write_text(dump_edge_list(graph), encoding="utf-8")
            paths.append(path)
            index[gid] = {
                "file": path.name,
                "group": sample.group_id,
                "quota": sample.quota_index,
                "strata": compute_strata(graph, expression).model_dump(mode="json"),
            }
    index_path = directory / "index.json"
    index_path.write_text(json.dumps({"truth": expression.render(), "graphs": index}, indent=2), encoding="utf-8")
    return [*paths, index_path]


def _write_csv(path: Path, header: list[str], rows: Iterable[list[Any]]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def edges_table_csv(table: list[EdgeCell], path: Path) -> Path:
    return _write_csv(
        path,
        ["layers", "non_interaction_edges", "interaction_edges", "count", "mean_mae", "std_err"],
        ([c.layers, c.non_interaction_edges, c.interaction_edges, c.count, c.mean_mae, c.std_err] for c in table),
    )


def removal_table_csv(stats: list[PairedStat], path: Path) -> Path:
    return _write_csv(
        path,
        ["row", "layers", "n", "mean", "std", "lower_bound", "significant"],
        ([s.row, s.layers, s.n, s.mean, s.std, s.lower_bound, int(s.significant)] for s in stats),
    )


def hops_table_csv(heatmaps: dict[int, HopsHeatmap], path: Path) -> Path:
    return _write_csv(
        path,
        ["layers", "hops_a", "hops_b", "count", "mean_mae"],
        (
            [layers, a, b, count, mean]
            for layers, heatmap in heatmaps.items()
            for (a, b), (mean, count) in heatmap.cells.items()
        ),
    )


def scaling_table_csv(rows: list[dict[str, Any]], path: Path) -> Path:
    fixed = ["p", "d", "layers", "noise_floor", "linear_baseline"]
    labels = sorted({k for row in rows for k in row if k not in fixed and k != "exceeded"})
    return _write_csv(
        path,
        fixed + labels + ["exceeded"],
        ([row.get(k, "") for k in fixed + labels] + [";".join(row["exceeded"])] for row in rows),
    )


