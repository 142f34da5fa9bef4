"""Feature graph construction, labeling, sampling and measurement."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from ..errors import GraphFormatError, InfeasibleStratumError, LabValidationError, PairwiseScopeError
from ..models import (
    UNREACHABLE_HOPS,
    DmieExpression,
    EdgeLabeling,
    FeatureGraph,
    GraphStrata,
    StratumQuota,
    short_hash,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LatticeStep:
    """A parent graph and the child obtained by removing exactly one interaction edge."""

    parent: FeatureGraph
    child: FeatureGraph
    removed_edge: tuple[int, int]
    row: str


@dataclass(frozen=True)
class StratifiedSample:
    """A graph drawn for one quota, together with its sibling set."""

    quota_index: int
    graph: FeatureGraph
    siblings: tuple[FeatureGraph, ...]

    @property
    def group_id(self) -> str:
        return graph_id(self.graph)


def adjacency_matrix(graph: FeatureGraph) -> csr_matrix:
    """Symmetric 0/1 adjacency matrix."""
    d = graph.num_features
    if not graph.edges:
        return csr_matrix((d, d), dtype=np.int8)
    rows, cols = zip(*graph.edges)
    data = np.ones(2 * len(rows), dtype=np.int8)
    return csr_matrix((data, (rows + cols, cols + rows)), shape=(d, d))


def null_graph(d: int) -> FeatureGraph:
    if d < 1:
        raise LabValidationError("A feature graph needs at least one node")
    return FeatureGraph(num_features=d)


def complete_graph(d: int) -> FeatureGraph:
    if d < 1:
        raise LabValidationError("A feature graph needs at least one node")
    return FeatureGraph(num_features=d, edges=tuple(itertools.combinations(range(d), 2)))


def _require_pairwise(expression: DmieExpression) -> None:
    if not expression.is_pairwise:
        big = next(t for t in expression.terms if len(t) > 2)
        raise PairwiseScopeError(f"Term {'*'.join(f'x{i}' for i in big)} has more than two variables")


def ground_truth_graph(expression: DmieExpression) -> FeatureGraph:
    """One edge per pairwise term; features of unary terms stay isolated."""
    _require_pairwise(expression)
    return FeatureGraph(num_features=expression.num_features, edges=expression.pairs)


def label_edges(graph: FeatureGraph, expression: DmieExpression) -> EdgeLabeling:
    _require_pairwise(expression)
    truth = set(expression.pairs)
    return EdgeLabeling(
        graph=graph,
        interaction_edges=tuple(e for e in graph.edges if e in truth),
        non_interaction_edges=tuple(e for e in graph.edges if e not in truth),
    )


def _distances_from(graph: FeatureGraph, source: int) -> np.ndarray:
    return shortest_path(adjacency_matrix(graph), directed=False, unweighted=True, indices=source)


def _as_hops(distance: float) -> int:
    return UNREACHABLE_HOPS if not math.isfinite(distance) else int(distance)


def shortest_hops(graph: FeatureGraph, u: int, v: int) -> int:
    """BFS shortest-path length between u and v; 99 when they are not connected."""
    if u == v:
        raise LabValidationError("shortest_hops needs two distinct nodes")
    for node in (u, v):
        if not 0 <= node < graph.num_features:
            raise LabValidationError(f"Node {node} outside [0, {graph.num_features})")
    return _as_hops(_distances_from(graph, u)[v])


def hop_profile(graph: FeatureGraph, expression: DmieExpression) -> tuple[int, ...]:
    """Shortest hops between the endpoints of every ground-truth pair, in term order."""
    pairs = expression.pairs
    if not pairs:
        return ()
    sources = [a for a, _ in pairs]
    distances = shortest_path(adjacency_matrix(graph), directed=False, unweighted=True, indices=sources)
    return tuple(_as_hops(distances[k, b]) for k, (_, b) in enumerate(pairs))


def compute_strata(graph: FeatureGraph, expression: DmieExpression) -> GraphStrata:
    labeling = label_edges(graph, expression)
    return GraphStrata(
        total_edges=graph.num_edges,
        interaction_edge_count=len(labeling.interaction_edges),
        non_interaction_edge_count=len(labeling.non_interaction_edges),
        hops=hop_profile(graph, expression),
    )


def dump_edge_list(graph: FeatureGraph) -> str:
    """Edge-list text: a "d=<n>" header, then one sorted "i j" pair per line."""
    lines = [f"d={graph.num_features}"] + [f"{i} {j}" for i, j in graph.edges]
    return "\n".join(lines) + "\n"


def parse_edge_list(text: str) -> FeatureGraph:
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines or not lines[0].startswith("d="):
        raise GraphFormatError("Edge list must start with a 'd=<n>' header")
    try:
        d = int(lines[0][2:])
    except ValueError as e:
        raise GraphFormatError(f"Invalid header {lines[0]!r}") from e

    edges = []
    for line in lines[1:]:
        parts = line.split()
        if len(parts) != 2:
            raise GraphFormatError(f"Invalid edge line {line!r}")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError as e:
            raise GraphFormatError(f"Invalid edge line {line!r}") from e

    try:
        return FeatureGraph(num_features=d, edges=tuple(edges))
    except ValueError as e:
        raise GraphFormatError(str(e)) from e


def graph_id(graph: FeatureGraph) -> str:
    return short_hash(dump_edge_list(graph))


def sibling_set(graph: FeatureGraph, expression: DmieExpression) -> list[FeatureGraph]:
    """All 2^k graphs obtained by toggling each interaction edge, non-interaction edges fixed."""
    pairs = expression.pairs
    base = graph.without_edges(pairs)
    siblings = []
    for mask in itertools.product((True, False), repeat=len(pairs)):
        siblings.append(base.with_edges(p for p, keep in zip(pairs, mask) if keep))
    return siblings


def _row_name(missing: tuple[tuple[int, int], ...]) -> str:
    if not missing:
        return "G"
    return "G\\" + ",".join(f"{{{i},{j}}}" for i, j in missing)


def removal_lattice(graph: FeatureGraph, expression: DmieExpression) -> list[LatticeStep]:
    """Every (parent, child) pair where child is parent minus exactly one interaction edge."""
    pairs = expression.pairs
    present = [p for p in pairs if graph.has_edge(*p)]
    steps = []
    for size in range(len(present)):
        for removed in itertools.combinations(present, size):
            parent = graph.without_edges(removed)
            parent_missing = tuple(p for p in pairs if not parent.has_edge(*p))
            for edge in present:
                if edge in removed:
                    continue
                child = parent.without_edges([edge])
                child_missing = tuple(p for p in pairs if not child.has_edge(*p))
                steps.append(
                    LatticeStep(
                        parent=parent,
                        child=child,
                        removed_edge=edge,
                        row=f"{_row_name(parent_missing)} -> {_row_name(child_missing)}",
                    )
                )
    return steps


class _StratumDrawer:
    """Draws candidate graphs for one quota, uniformly over the stratum."""

    def __init__(self, quota: StratumQuota, expression: DmieExpression, index: int):
        d = expression.num_features
        self.quota = quota
        self.expression = expression
        self.index = index
        self.pairs = list(expression.pairs)
        truth = set(self.pairs)
        self.others = [e for e in itertools.combinations(range(d), 2) if e not in truth]
        self.all_pairs = list(itertools.combinations(range(d), 2))
        self.forced: list[tuple[int, int]] | None = None
        self.interaction = quota.interaction_edges
        self.non_interaction = quota.non_interaction_edges
        self._resolve()

    def _fail(self, reason: str) -> InfeasibleStratumError:
        return InfeasibleStratumError(f"Quota {self.index} is infeasible: {reason}")

    def _resolve(self) -> None:
        q = self.quota
        k, m_max = len(self.pairs), len(self.others)
        if q.hops is not None:
            if len(q.hops) != k:
                raise self._fail(f"hop profile has {len(q.hops)} entries for {k} interaction pairs")
            for h in q.hops:
                if h != UNREACHABLE_HOPS and not 1 <= h < max(self.expression.num_features, 2):
                    raise self._fail(f"hop value {h} impossible on {self.expression.num_features} nodes")
            self.forced = [p for p, h in zip(self.pairs, q.hops) if h == 1]
            if self.interaction is not None and self.interaction != len(self.forced):
                raise self._fail("interaction edge count contradicts the hop profile")
            self.interaction = len(self.forced)

        if q.total_edges is not None:
            if q.total_edges > k + m_max:
                raise self._fail(f"{q.total_edges} edges exceed C(d,2)={k + m_max}")
            if self.interaction is not None and self.non_interaction is None:
                self.non_interaction = q.total_edges - self.interaction
            elif self.non_interaction is not None and self.interaction is None:
                self.interaction = q.total_edges - self.non_interaction
            elif self.interaction is not None and self.non_interaction is not None:
                if self.interaction + self.non_interaction != q.total_edges:
                    raise self._fail("edge counts do not add up to total_edges")
        if self.interaction is not None and not 0 <= self.interaction <= k:
            raise self._fail(f"asks {self.interaction} interaction edges but only {k} exist")
        if self.non_interaction is not None and not 0 <= self.non_interaction <= m_max:
            raise self._fail(f"asks {self.non_interaction} non-interaction edges but only {m_max} exist")

        capacity = self.capacity()
        if capacity is not None and q.count > capacity:
            raise self._fail(f"asks {q.count} distinct graphs but the stratum holds {capacity}")

    def capacity(self) -> int | None:
        if self.quota.hops is not None:
            return None
        k, m_max = len(self.pairs), len(self.others)
        if self.interaction is not None and self.non_interaction is not None:
            return math.comb(k, self.interaction) * math.comb(m_max, self.non_interaction)
        if self.quota.total_edges is not None:
            return math.comb(k + m_max, self.quota.total_edges)
        return None

    def _subset(self, rng: np.random.Generator, pool: list, size: int | None) -> list:
        if size is None:
            return [e for e in pool if rng.random() < 0.5]
        chosen = rng.choice(len(pool), size=size, replace=False) if size else []
        return [pool[i] for i in sorted(chosen)]

    def draw(self, rng: np.random.Generator) -> FeatureGraph:
        d = self.expression.num_features
        if self.interaction is None and self.non_interaction is None and self.quota.total_edges is not None:
            edges = self._subset(rng, self.all_pairs, self.quota.total_edges)
        else:
            if self.forced is not None:
                inter = list(self.forced)
            else:
                inter = self._subset(rng, self.pairs, self.interaction)
            edges = inter + self._subset(rng, self.others, self.non_interaction)
        return FeatureGraph(num_features=d, edges=tuple(edges))


def sample_stratified(
    expression: DmieExpression,
    quotas: list[StratumQuota],
    rng: np.random.Generator,
    max_attempts: int = 20000,
    siblings: bool = True,
) -> list[StratifiedSample]:
    """
    Draw graphs stratum by stratum, deduplicated, each with its sibling set.

    Args:
        expression: Pairwise ground truth defining interaction edges and hop pairs.
        quotas: One entry per stratum with the number of graphs wanted.
        rng: Explicit random generator; use independent generators for concurrent sampling.
        max_attempts: Rejection-sampling cap per quota.
        siblings: Attach the 2^k sibling set to every sampled graph.

    Raises:
        InfeasibleStratumError: a quota is impossible or could not be filled within the cap.
    """
    _require_pairwise(expression)
    drawers = [_StratumDrawer(q, expression, i) for i, q in enumerate(quotas)]

    samples: list[StratifiedSample] = []
    seen: set[frozenset[tuple[int, int]]] = set()
    for drawer in drawers:
        found = 0
        attempts = 0
        while found < drawer.quota.count:
            if attempts >= max_attempts:
                raise InfeasibleStratumError(
                    f"Quota {drawer.index} filled {found} of {drawer.quota.count} graphs "
                    f"after {max_attempts} attempts"
                )
            attempts += 1
            candidate = drawer.draw(rng)
            if candidate.edge_set in seen:
                continue
            if not drawer.quota.matches(compute_strata(candidate, expression)):
                continue
            seen.add(candidate.edge_set)
            group = tuple(sibling_set(candidate, expression)) if siblings else (candidate,)
            samples.append(StratifiedSample(quota_index=drawer.index, graph=candidate, siblings=group))
            found += 1
        logger.debug(f"Quota {drawer.index}: {found} graphs in {attempts} attempts")
    return samples
