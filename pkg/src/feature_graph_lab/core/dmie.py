"""Disjoint multilinear interaction expressions and their feature-graph classes.

An expression such as ``x0*x1*x2 + x3*x4 + x5 + x6`` corresponds one-to-one to
a partition of the features, and a partition corresponds to the class of
feature graphs whose connected components are exactly its blocks.
"""

from __future__ import annotations

import itertools
import logging
import re
from collections.abc import Iterator
from typing import Any

from scipy.sparse.csgraph import connected_components

from ..errors import DisjointnessError, ExpressionSyntaxError, LabValidationError
from ..models import DmieExpression, FeatureGraph, FeaturePartition
from .fgraph import adjacency_matrix

logger = logging.getLogger(__name__)

_VARIABLE = re.compile(r"^x(\d+)$")


def parse_expression(text: str, num_features: int | None = None) -> DmieExpression:
    """
    Parse a '+'-separated sum of '*'-separated ``x<k>`` tokens.

    Args:
        text: Expression text, e.g. "x0*x1 + x2". The literal "0" is the empty expression.
        num_features: Feature count; inferred as max index + 1 when omitted.

    Returns:
        Canonical DmieExpression.

    Raises:
        ExpressionSyntaxError: malformed text.
        DisjointnessError: a variable repeated within or across terms.
    """
    stripped = text.strip()
    if not stripped:
        raise ExpressionSyntaxError("Empty expression")

    terms: list[list[int]] = []
    if stripped != "0":
        for raw_term in stripped.split("+"):
            term = []
            for factor in raw_term.split("*"):
                match = _VARIABLE.match(factor.strip())
                if match is None:
                    raise ExpressionSyntaxError(f"Invalid variable token {factor.strip()!r} in {text!r}")
                term.append(int(match.group(1)))
            terms.append(term)

    seen: set[int] = set()
    for term in terms:
        if len(set(term)) != len(term):
            raise DisjointnessError(f"Variable repeated inside term {'*'.join(f'x{i}' for i in term)}")
        overlap = seen.intersection(term)
        if overlap:
            names = ", ".join(f"x{i}" for i in sorted(overlap))
            raise DisjointnessError(f"Variable {names} appears in more than one term")
        seen.update(term)

    inferred = max(seen) + 1 if seen else 0
    if num_features is None:
        num_features = inferred
    elif num_features < inferred:
        raise LabValidationError(f"Expression uses x{inferred - 1} but num_features={num_features}")

    return DmieExpression(num_features=num_features, terms=tuple(tuple(t) for t in terms))


def expression_to_partition(expression: DmieExpression) -> FeaturePartition:
    """Blocks are the expression's terms plus a singleton for every feature no term uses."""
    used = {i for term in expression.terms for i in term}
    blocks = list(expression.terms)
    blocks.extend((i,) for i in range(expression.num_features) if i not in used)
    return FeaturePartition(num_features=expression.num_features, blocks=tuple(blocks))


def graph_to_partition(graph: FeatureGraph) -> FeaturePartition:
    """Blocks are the connected components of the graph."""
    if graph.num_features == 0:
        return FeaturePartition(num_features=0, blocks=())
    _, labels = connected_components(adjacency_matrix(graph), directed=False)
    components: dict[int, list[int]] = {}
    for node, label in enumerate(labels):
        components.setdefault(int(label), []).append(node)
    return FeaturePartition(num_features=graph.num_features, blocks=tuple(tuple(c) for c in components.values()))


def partition_to_expression(partition: FeaturePartition) -> DmieExpression:
    """One term per block; singleton blocks become unary terms."""
    return DmieExpression(num_features=partition.num_features, terms=partition.blocks)


def graphs_equivalent(g1: FeatureGraph, g2: FeatureGraph) -> bool:
    """True iff both graphs induce the same reachability partition."""
    if g1.num_features != g2.num_features:
        raise LabValidationError(
            f"Graphs have different feature counts: {g1.num_features} vs {g2.num_features}"
        )
    return graph_to_partition(g1) == graph_to_partition(g2)


def class_representative(partition: FeaturePartition) -> FeatureGraph:
    """Star graph per block: the block minimum joined to every other member."""
    edges = [(block[0], member) for block in partition.blocks for member in block[1:]]
    return FeatureGraph(num_features=partition.num_features, edges=tuple(edges))


def enumerate_graphs(d: int) -> Iterator[FeatureGraph]:
    """Yield all 2^C(d,2) simple graphs on d nodes."""
    pairs = list(itertools.combinations(range(d), 2))
    for mask in itertools.product((False, True), repeat=len(pairs)):
        yield FeatureGraph(num_features=d, edges=tuple(p for p, keep in zip(pairs, mask) if keep))


def enumerate_partitions(d: int) -> Iterator[FeaturePartition]:
    """Yield every set partition of [0, d)."""

    def _grow(index: int, blocks: list[list[int]]) -> Iterator[list[list[int]]]:
        if index == d:
            yield blocks
            return
        for block in blocks:
            block.append(index)
            yield from _grow(index + 1, blocks)
            block.pop()
        blocks.append([index])
        yield from _grow(index + 1, blocks)
        blocks.pop()

    for blocks in _grow(0, []):
        yield FeaturePartition(num_features=d, blocks=tuple(tuple(b) for b in blocks))


def bell_number(d: int) -> int:
    """Number of set partitions of d elements (Bell triangle)."""
    if d < 0:
        raise LabValidationError("d must be non-negative")
    row = [1]
    for _ in range(d):
        nxt = [row[-1]]
        for value in row:
            nxt.append(nxt[-1] + value)
        row = nxt
    return row[0]


def count_equivalence_classes(d: int) -> dict[str, Any]:
    """
    Group every graph on d nodes by its reachability partition.

    Returns:
        dict with d, graph count, class count, the Bell number and whether
        the class count matches it and every class representative round-trips.
    """
    classes: set[FeaturePartition] = set()
    graph_count = 0
    for graph in enumerate_graphs(d):
        classes.add(graph_to_partition(graph))
        graph_count += 1

    round_trips = all(
        graph_to_partition(class_representative(p)) == p
        and expression_to_partition(partition_to_expression(p)) == p
        for p in classes
    )
    bell = bell_number(d)
    logger.debug(f"d={d}: {graph_count} graphs, {len(classes)} classes (Bell {bell})")
    return {
        "d": d,
        "graphs": graph_count,
        "classes": len(classes),
        "bell": bell,
        "matches": len(classes) == bell and round_trips,
    }
