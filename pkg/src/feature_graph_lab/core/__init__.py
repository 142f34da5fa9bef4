"""Core functionality for feature-graph-lab."""

from .dmie import (
    bell_number,
    count_equivalence_classes,
    expression_to_partition,
    graph_to_partition,
    graphs_equivalent,
    parse_expression,
    partition_to_expression,
)
from .expharness import aggregate_by_edges, hops_heatmap, paired_removal_stats, run_plan, scaling_sweep
from .fgraph import compute_strata, label_edges, removal_lattice, sample_stratified, shortest_hops
from .gnnmodel import evaluate, forward, init_model, train
from .mdlselect import description_length, exhaustive_select, fit_pairwise, verify_inequalities
from .store import RecordStore
from .synth import generate, load_dataset, save_dataset
from .workspace import record_artifacts, verify_workspace

__all__ = [
    "parse_expression",
    "expression_to_partition",
    "graph_to_partition",
    "partition_to_expression",
    "graphs_equivalent",
    "bell_number",
    "count_equivalence_classes",
    "label_edges",
    "shortest_hops",
    "compute_strata",
    "sample_stratified",
    "removal_lattice",
    "generate",
    "save_dataset",
    "load_dataset",
    "init_model",
    "forward",
    "train",
    "evaluate",
    "fit_pairwise",
    "description_length",
    "verify_inequalities",
    "exhaustive_select",
    "RecordStore",
    "run_plan",
    "scaling_sweep",
    "aggregate_by_edges",
    "paired_removal_stats",
    "hops_heatmap",
    "record_artifacts",
    "verify_workspace",
]
