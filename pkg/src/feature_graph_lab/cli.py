"""Command-line front end: every command prints a JSON result dict on stdout."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections.abc import Callable, Iterable
from datetime import datetime
from pathlib import Path
from typing import Any

import numpy as np
from pydantic import ValidationError

from .config import (
    ensure_dirs,
    get_datasets_dir,
    get_graphs_dir,
    get_mdl_config,
    get_plans_dir,
    get_reports_dir,
    get_runs_dir,
    get_sweep_config,
    get_training_defaults,
    get_workspace_dir,
    match_recipe,
)
from .errors import (
    GraphFormatError,
    LabError,
    LabRuntimeError,
    LabValidationError,
    PlanError,
    ResourceCapError,
    UnmatchedPairError,
)
from .models import ExperimentPlan, GnnConfig, StratumQuota, SyntheticSpec
from .core.dmie import count_equivalence_classes
from .core.expharness import (
    aggregate_by_edges,
    cell_contrast,
    completed_record,
    edges_table_csv,
    exceeds_cap,
    export_samples,
    hops_heatmap,
    hops_table_csv,
    lattice_from_records,
    make_cell,
    paired_removal_stats,
    removal_table_csv,
    run_plan,
    scaling_sweep,
    scaling_table,
    scaling_table_csv,
)
from .core.fgraph import parse_edge_list, sample_stratified
from .core.gnnmodel import save_checkpoint, train
from .core.mdlselect import exhaustive_select, truth_recovered, verify_inequalities
from .core.render import render_edges_chart, render_hops_heatmaps, render_scaling_chart
from .core.store import RecordStore, load_records, store_path
from .core.synth import SyntheticDataset, generate, load_dataset, save_dataset
from .core.workspace import record_artifacts, verify_workspace

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
MAX_BELL_D = 7

# (hop cell, depth) pairs compared by ``stats hops``
HOPS_CONTRASTS = (
    ("adjacent_vs_two_hops_L1", (1, 1), (2, 2), 1, 1),
    ("two_hops_L1_vs_L2", (2, 2), (2, 2), 1, 2),
)


def _record(paths: Iterable[Path]) -> None:
    """Hash the artifacts that live inside the workspace."""
    root = get_workspace_dir().resolve()
    inside = [p for p in paths if p.resolve().is_relative_to(root)]
    if inside:
        record_artifacts(inside)


def _resolve_dataset(value: str) -> SyntheticDataset:
    path = Path(value)
    if not path.exists() and not path.with_suffix(".csv").exists():
        path = get_datasets_dir() / f"{value}.csv"
    return load_dataset(path)


def _resolve_runs(value: str) -> Path:
    path = Path(value)
    if path.exists():
        return path
    named = store_path(value)
    if named.exists():
        return named
    raise FileNotFoundError(f"No record store at {value}")


def _load_quotas(value: str) -> list[StratumQuota]:
    """Quotas from a JSON file (a list, or an object with ``quotas``), else from the recipe of that name."""
    path = Path(value)
    if path.exists():
        data = json.loads(path.read_text(encoding="utf-8"))
        items = data.get("quotas", []) if isinstance(data, dict) else data
        quotas = [StratumQuota.model_validate(item) for item in items]
    else:
        quotas = list(match_recipe(value)().graph_source.quotas)
    if not quotas:
        raise PlanError(f"Strata plan {value!r} has no quotas")
    return quotas


def cmd_gen_data(args: argparse.Namespace) -> dict[str, Any]:
    if args.seed_policy == "canonical" and args.replica:
        raise LabValidationError("--replica requires --seed-policy replica")
    spec = SyntheticSpec(
        p=args.p,
        q=args.q,
        n=args.n,
        noise_scale=args.noise_scale,
        replica=args.replica,
        truth=args.truth,
    )
    ensure_dirs()
    dataset = generate(spec)
    outputs = save_dataset(dataset, get_datasets_dir())
    _record(outputs)
    logger.info(f"Generated {spec.name}: {spec.n} rows, {spec.d} features")
    return {
        "success": True,
        "outputs": [str(p) for p in outputs],
        "dataset": spec.name,
        "features": spec.d,
        "rows": spec.n,
        "truth": dataset.truth.render(),
    }


def cmd_sample_graphs(args: argparse.Namespace) -> dict[str, Any]:
    dataset = _resolve_dataset(args.dataset)
    quotas = _load_quotas(args.strata_plan)
    sweep = get_sweep_config()
    samples = sample_stratified(
        dataset.truth,
        quotas,
        np.random.default_rng(args.seed),
        max_attempts=args.max_attempts or sweep["max_attempts"],
        siblings=not args.no_siblings,
    )
    ensure_dirs()
    outputs = export_samples(samples, dataset.truth, get_graphs_dir() / dataset.spec.name)
    _record(outputs)
    return {
        "success": True,
        "outputs": [str(p) for p in outputs],
        "samples": len(samples),
        "graphs": len(outputs) - 1,
    }


def cmd_train(args: argparse.Namespace) -> dict[str, Any]:
    dataset = _resolve_dataset(args.dataset)
    graph_path = Path(args.graph)
    if not graph_path.exists():
        raise FileNotFoundError(f"Graph file not found: {graph_path}")
    graph = parse_edge_list(graph_path.read_text(encoding="utf-8"))
    if graph.num_features != dataset.d:
        raise GraphFormatError(f"Graph on {graph.num_features} nodes for a {dataset.d}-feature dataset")

    overrides = {k: v for k, v in (("hidden_dim", args.hidden_dim), ("max_epochs", args.max_epochs)) if v is not None}
    config = GnnConfig(**{**get_training_defaults(), **overrides, "num_layers": args.layers, "seed": args.seed})
    cap = args.arc_cap if args.arc_cap is not None else get_sweep_config()["arc_cap"]
    cell = make_cell("train", dataset.spec, graph, config, label=graph_path.stem, arc_cap=cap)
    if exceeds_cap(cell):
        raise ResourceCapError(f"Graph needs {2 * graph.num_edges} arcs, cap is {cap}")

    store = RecordStore(Path(args.store) if args.store else store_path("train"))
    existing = store.get(cell.key)
    if existing is not None:
        logger.info(f"Cell {cell.key} already recorded")
        return {"success": True, "outputs": [str(store.path)], "cell_key": cell.key, "skipped": True,
                "test_mae": existing.test_mae}

    started_at = datetime.now()
    trained = train(graph, dataset, config)
    record = completed_record(cell, trained, started_at)
    ensure_dirs()
    checkpoint = save_checkpoint(trained.model, get_runs_dir() / "checkpoints" / cell.key)
    store.append(record)
    _record([store.path, *checkpoint])
    return {
        "success": True,
        "outputs": [str(store.path), *(str(p) for p in checkpoint)],
        "cell_key": cell.key,
        "skipped": False,
        "epochs_run": record.epochs_run,
        "test_mae": record.test_mae,
        "test_mse": record.test_mse,
    }


def cmd_sweep(args: argparse.Namespace) -> dict[str, Any]:
    ensure_dirs()
    outputs: list[Path] = []
    if args.recipe:
        plan = match_recipe(args.recipe)()
        plan_path = get_plans_dir() / f"{plan.name}.json"
        plan_path.write_text(plan.model_dump_json(indent=2), encoding="utf-8")
        outputs.append(plan_path)
    else:
        plan = ExperimentPlan.model_validate_json(Path(args.plan).read_text(encoding="utf-8"))

    store = RecordStore(Path(args.store) if args.store else store_path(plan.name))
    result: dict[str, Any] = {"success": True, "plan": plan.name}
    if plan.p_values:
        rows = scaling_sweep(
            plan, store=store, workers=args.workers, arc_cap=args.arc_cap, retry_failed=args.retry_failed
        )
        result["scaling_rows"] = len(rows)
    else:
        records = run_plan(
            plan, store=store, workers=args.workers, arc_cap=args.arc_cap, retry_failed=args.retry_failed
        )
        result["cells"] = len(records)
    outputs.append(store.path)
    _record(outputs)
    summary = store.summary()
    return {**result, "outputs": [str(p) for p in outputs], **{k: v for k, v in summary.items() if k != "path"}}


def _stats_edges(records, out: Path, stem: str, svg: bool) -> tuple[list[Path], dict[str, Any]]:
    table = aggregate_by_edges(records)
    outputs = [edges_table_csv(table, out / f"{stem}_edges.csv")]
    if svg:
        outputs.append(render_edges_chart(table, out / f"{stem}_edges.svg"))
    return outputs, {"rows": len(table)}


def _stats_removal(records, out: Path, stem: str, svg: bool, confidence: float, strict: bool):
    stats = paired_removal_stats(records, lattice_from_records(records), confidence=confidence, strict=strict)
    outputs = [removal_table_csv(stats, out / f"{stem}_removal.csv")]
    rows = [
        {"row": s.row, "layers": s.layers, "n": s.n, "mean": s.mean, "lower_bound": s.lower_bound,
         "significant": s.significant}
        for s in stats
    ]
    return outputs, {"rows": rows}


def _stats_hops(records, out: Path, stem: str, svg: bool, confidence: float):
    heatmaps = hops_heatmap(records)
    outputs = [hops_table_csv(heatmaps, out / f"{stem}_hops.csv")]
    if svg:
        outputs.append(render_hops_heatmaps(heatmaps, out / f"{stem}_hops.svg"))
    contrasts: dict[str, Any] = {}
    for name, cell_a, cell_b, layers_a, layers_b in HOPS_CONTRASTS:
        try:
            stat = cell_contrast(records, cell_a, cell_b, layers_a, layers_b, confidence=confidence)
        except UnmatchedPairError as e:
            logger.info(f"Contrast {name} skipped: {e}")
            contrasts[name] = None
            continue
        contrasts[name] = {"n": stat.n, "mean": stat.mean, "lower_bound": stat.lower_bound,
                           "significant": stat.significant}
    return outputs, {"depths": sorted(heatmaps), "contrasts": contrasts}


def _stats_scaling(records, out: Path, stem: str, svg: bool):
    rows = scaling_table(records)
    outputs = [scaling_table_csv(rows, out / f"{stem}_scaling.csv")]
    if svg:
        outputs.append(render_scaling_chart(rows, out / f"{stem}_scaling.svg"))
    return outputs, {"rows": rows}


def cmd_stats(args: argparse.Namespace) -> dict[str, Any]:
    runs_path = _resolve_runs(args.runs)
    records = load_records(runs_path)
    if not records:
        raise LabValidationError(f"No readable records in {runs_path}")
    ensure_dirs()
    out = Path(args.out) if args.out else get_reports_dir()
    stem = runs_path.stem

    if args.table == "edges":
        outputs, extra = _stats_edges(records, out, stem, args.svg)
    elif args.table == "removal":
        outputs, extra = _stats_removal(records, out, stem, args.svg, args.confidence, args.strict)
    elif args.table == "hops":
        outputs, extra = _stats_hops(records, out, stem, args.svg, args.confidence)
    else:
        outputs, extra = _stats_scaling(records, out, stem, args.svg)
    _record(outputs)
    return {"success": True, "outputs": [str(p) for p in outputs], "records": len(records), **extra}


def cmd_mdl(args: argparse.Namespace) -> dict[str, Any]:
    config = get_mdl_config()
    ensure_dirs()
    reports = get_reports_dir()

    if args.action == "select":
        if not args.dataset:
            raise LabValidationError("mdl select needs --dataset")
        dataset = _resolve_dataset(args.dataset)
        selection = exhaustive_select(dataset, max_d=config["max_select_d"])
        result = {
            "dataset": dataset.spec.name,
            "truth": dataset.truth.render(),
            "selected_edges": [list(e) for e in selection.graph.edges],
            "truth_recovered": truth_recovered(selection.graph, dataset.truth),
            "candidates": selection.candidates,
            "report": selection.report.model_dump(mode="json"),
        }
        path = reports / f"mdl_select_{dataset.spec.name}.json"
        path.write_text(json.dumps(result, indent=2), encoding="utf-8")
        _record([path])
        return {"success": True, "outputs": [str(path)], **result}

    base_spec = _resolve_dataset(args.dataset).spec if args.dataset else None
    trials = args.trials if args.trials is not None else config["trials"]
    report = verify_inequalities(
        trials,
        d_max=args.d_max if args.d_max is not None else config["d_max"],
        n=args.n if args.n is not None else config["n"],
        noise_scale=args.noise_scale if args.noise_scale is not None else config["noise_scale"],
        seed=args.seed,
        base_spec=base_spec,
    )
    stem = f"mdl_verify_{base_spec.name if base_spec else 'random'}_seed{args.seed}"
    csv_path = report.write_csv(reports / f"{stem}.csv")
    summary = report.summary()
    summary_path = reports / f"{stem}.json"
    summary_path.write_text(json.dumps(summary, indent=2), encoding="utf-8")
    _record([csv_path, summary_path])
    return {"success": True, "outputs": [str(csv_path), str(summary_path)], **summary}


def cmd_theory(args: argparse.Namespace) -> dict[str, Any]:
    if not 1 <= args.max_d <= MAX_BELL_D:
        raise LabValidationError(f"--max-d must be in [1, {MAX_BELL_D}]")
    rows = [count_equivalence_classes(d) for d in range(1, args.max_d + 1)]
    mismatched = [row["d"] for row in rows if not row["matches"]]
    if mismatched:
        raise LabRuntimeError(f"Class counts differ from the Bell numbers for d={mismatched}")
    return {"success": True, "outputs": [], "rows": rows}


def cmd_verify_workspace(args: argparse.Namespace) -> dict[str, Any]:
    result = verify_workspace()
    return {"success": result["ok"], "outputs": [], **result}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="feature-graph-lab",
        description="Feature-graph GNN laboratory: data, graphs, training sweeps, MDL checks.",
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    verbosity.add_argument("--quiet", "-q", action="store_true", help="warnings only")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    p.add_argument("--p", type=int, default=2, help="pairwise product terms")
    p.add_argument("--q", type=int, default=2, help="unary terms")
    p.add_argument("--n", type=int, default=10000, help="rows")
    p.add_argument("--noise-scale", type=float, default=0.1)
    p.add_argument("--seed-policy", choices=["canonical", "replica"], default="canonical")
    p.add_argument("--replica", type=int, default=0)
    p.add_argument("--truth", help="explicit degree-<=1 ground truth, e.g. 'x0*x3 + x1 + x2'")
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("sample-graphs", help="draw stratified feature graphs for a dataset")
    p.add_argument("--dataset", required=True, help="dataset CSV path or name")
    p.add_argument("--strata-plan", required=True, help="JSON quota file or recipe name")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-siblings", action="store_true")
    p.add_argument("--max-attempts", type=int)
    p.set_defaults(handler=cmd_sample_graphs)

    p = sub.add_parser("train", help="train one GNN and record it")
    p.add_argument("--dataset", required=True)
    p.add_argument("--graph", required=True, help="edge-list file")
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden-dim", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--arc-cap", type=int)
    p.add_argument("--store", help="record store path (default: runs/train.jsonl)")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("sweep", help="run an experiment plan with resume")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--plan", help="plan JSON file")
    source.add_argument("--recipe", help="built-in recipe name")
    p.add_argument("--workers", type=int)
    p.add_argument("--arc-cap", type=int)
    p.add_argument("--store")
    p.add_argument("--retry-failed", action="store_true", help="train again cells whose stored record failed")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("stats", help="aggregate records into tables and charts")
    p.add_argument("table", choices=["removal", "edges", "hops", "scaling"])
    p.add_argument("--runs", required=True, help="record store path or plan name")
    p.add_argument("--out", help="output directory (default: reports/)")
    p.add_argument("--svg", action="store_true", help="also render an SVG chart")
    p.add_argument("--confidence", type=float, default=0.95)
    p.add_argument("--strict", action="store_true", help="fail on unmatched lattice pairs")
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("mdl", help="description-length checks and selection")
    p.add_argument("action", choices=["verify", "select"])
    p.add_argument("--dataset")
    p.add_argument("--trials", type=int)
    p.add_argument("--d-max", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--noise-scale", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_mdl)

    p = sub.add_parser("theory", help="graph-class enumeration")
    p.add_argument("action", choices=["bell"])
    p.add_argument("--max-d", type=int, default=5)
    p.set_defaults(handler=cmd_theory)

    p = sub.add_parser("verify-workspace", help="check artifact hashes against the manifest")
    p.set_defaults(handler=cmd_verify_workspace)
    return parser


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(
        level=level,
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        force=True,
    )


def _emit(result: dict[str, Any]) -> None:
    print(json.dumps(result, indent=2, default=str))


def main(argv: list[str] | None = None) -> int:
    """Run one command; returns the process exit code."""
    args = build_parser().parse_args(argv)
    _configure_logging(args)
    handler: Callable[[argparse.Namespace], dict[str, Any]] = args.handler

    try:
        result = handler(args)
    except LabError as e:
        logger.error(str(e))
        _emit({"success": False, "error": str(e), "error_type": type(e).__name__})
        return e.exit_code
    except (ValidationError, FileNotFoundError, json.JSONDecodeError) as e:
        logger.error(str(e))
        _emit({"success": False, "error": str(e), "error_type": type(e).__name__})
        return EXIT_VALIDATION
    except Exception as e:
        logger.exception(f"{args.command} failed")
        _emit({"success": False, "error": str(e), "error_type": type(e).__name__})
        return EXIT_RUNTIME

    _emit(result)
    return EXIT_OK if result.get("success") else EXIT_VALIDATION
