"""Data models for feature-graph-lab."""

from __future__ import annotations

import hashlib
import json
import math
from datetime import datetime
from enum import Enum
from functools import cached_property
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator

UNREACHABLE_HOPS = 99

# Default hidden widths for 1, 2 and 3 message-passing layers.
DEFAULT_HIDDEN_DIMS = {1: 26, 2: 20, 3: 16}


def short_hash(payload: Any, length: int = 12) -> str:
    """Hash a JSON-compatible payload (or a string) to a short hex digest."""
    if not isinstance(payload, str):
        payload = json.dumps(payload, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(payload.encode()).hexdigest()[:length]


class DmieExpression(BaseModel):
    """A disjoint multilinear interaction expression: a sum of products over disjoint variable sets."""

    model_config = ConfigDict(frozen=True)

    num_features: int = Field(ge=0)
    terms: tuple[tuple[int, ...], ...] = ()

    @model_validator(mode="before")
    @classmethod
    def _canonicalize(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        num_features = data.get("num_features")
        raw_terms = data.get("terms", ())
        terms = []
        seen: set[int] = set()
        for raw in raw_terms:
            term = sorted(int(i) for i in raw)
            if not term:
                raise ValueError("terms must be non-empty")
            if len(set(term)) != len(term):
                raise ValueError(f"term {term} repeats a variable")
            overlap = seen.intersection(term)
            if overlap:
                raise ValueError(f"variables {sorted(overlap)} appear in more than one term")
            seen.update(term)
            if num_features is not None and (term[0] < 0 or term[-1] >= num_features):
                raise ValueError(f"term {term} has an index outside [0, {num_features})")
            terms.append(tuple(term))
        terms.sort(key=lambda t: t[0])
        return {**data, "terms": tuple(terms)}

    @property
    def pairs(self) -> tuple[tuple[int, int], ...]:
        """Terms with exactly two variables."""
        return tuple((t[0], t[1]) for t in self.terms if len(t) == 2)

    @property
    def is_pairwise(self) -> bool:
        return all(len(t) <= 2 for t in self.terms)

    def render(self) -> str:
        if not self.terms:
            return "0"
        return " + ".join("*".join(f"x{i}" for i in term) for term in self.terms)

    def __str__(self) -> str:
        return self.render()


class FeaturePartition(BaseModel):
    """A partition of the feature indices; encodes one reachability class of feature graphs."""

    model_config = ConfigDict(frozen=True)

    num_features: int = Field(ge=0)
    blocks: tuple[tuple[int, ...], ...]

    @model_validator(mode="before")
    @classmethod
    def _canonicalize(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        num_features = int(data["num_features"])
        blocks = [tuple(sorted(int(i) for i in b)) for b in data.get("blocks", ())]
        if any(not b for b in blocks):
            raise ValueError("blocks must be non-empty")
        covered = sorted(i for b in blocks for i in b)
        if covered != list(range(num_features)):
            raise ValueError(f"blocks do not partition [0, {num_features})")
        blocks.sort(key=lambda b: b[0])
        return {**data, "blocks": tuple(blocks)}

    def lines(self) -> list[str]:
        """Line-oriented text form: header then one space-separated block per line."""
        return [f"d={self.num_features}"] + [" ".join(str(i) for i in b) for b in self.blocks]


class FeatureGraph(BaseModel):
    """An undirected simple graph whose nodes are the dataset's features."""

    model_config = ConfigDict(frozen=True)

    num_features: int = Field(ge=0)
    edges: tuple[tuple[int, int], ...] = ()

    @model_validator(mode="before")
    @classmethod
    def _canonicalize(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        d = int(data["num_features"])
        edges = []
        for raw in data.get("edges", ()):
            i, j = (int(v) for v in raw)
            if i == j:
                raise ValueError(f"self-loop on node {i}")
            if not (0 <= i < d and 0 <= j < d):
                raise ValueError(f"edge {{{i},{j}}} outside [0, {d})")
            edges.append((min(i, j), max(i, j)))
        if len(set(edges)) != len(edges):
            raise ValueError("duplicate edges")
        return {**data, "edges": tuple(sorted(edges))}

    @cached_property
    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(self.edges)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def max_edges(self) -> int:
        return self.num_features * (self.num_features - 1) // 2

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self.edge_set

    def degree(self, node: int) -> int:
        return sum(1 for e in self.edges if node in e)

    def with_edges(self, extra: Any) -> FeatureGraph:
        merged = self.edge_set | {(min(i, j), max(i, j)) for i, j in extra}
        return FeatureGraph(num_features=self.num_features, edges=tuple(merged))

    def without_edges(self, removed: Any) -> FeatureGraph:
        drop = {(min(i, j), max(i, j)) for i, j in removed}
        return FeatureGraph(num_features=self.num_features, edges=tuple(self.edge_set - drop))


class EdgeLabeling(BaseModel):
    """A graph's edges split by whether they match a ground-truth pairwise term."""

    model_config = ConfigDict(frozen=True)

    graph: FeatureGraph
    interaction_edges: tuple[tuple[int, int], ...]
    non_interaction_edges: tuple[tuple[int, int], ...]


class GraphStrata(BaseModel):
    """Stratum descriptors of a graph relative to a ground truth."""

    model_config = ConfigDict(frozen=True)

    total_edges: int = Field(ge=0)
    interaction_edge_count: int = Field(ge=0)
    non_interaction_edge_count: int = Field(ge=0)
    hops: tuple[int, ...] = ()

    @model_validator(mode="after")
    def _check(self) -> GraphStrata:
        if self.total_edges != self.interaction_edge_count + self.non_interaction_edge_count:
            raise ValueError("total_edges must equal interaction + non-interaction edges")
        if any(h < 1 for h in self.hops):
            raise ValueError("hops must be >= 1 (99 for unreachable)")
        return self


class StratumQuota(BaseModel):
    """How many graphs to draw from one stratum; unset descriptors are unconstrained."""

    model_config = ConfigDict(frozen=True)

    count: int = Field(default=1, ge=1)
    total_edges: int | None = Field(default=None, ge=0)
    interaction_edges: int | None = Field(default=None, ge=0)
    non_interaction_edges: int | None = Field(default=None, ge=0)
    hops: tuple[int, ...] | None = None

    def matches(self, strata: GraphStrata) -> bool:
        if self.total_edges is not None and strata.total_edges != self.total_edges:
            return False
        if self.interaction_edges is not None and strata.interaction_edge_count != self.interaction_edges:
            return False
        if (
            self.non_interaction_edges is not None
            and strata.non_interaction_edge_count != self.non_interaction_edges
        ):
            return False
        if self.hops is not None and tuple(strata.hops) != tuple(self.hops):
            return False
        return True


class SyntheticSpec(BaseModel):
    """Generator settings for f(x) = sum of p products of feature pairs + sum of q unary features + noise."""

    model_config = ConfigDict(frozen=True)

    p: int = Field(default=2, ge=0)
    q: int = Field(default=2, ge=0)
    n: int = Field(default=10000, ge=1)
    noise_scale: float = Field(default=0.1, ge=0.0)
    train_fraction: float = Field(default=0.7, gt=0.0, lt=1.0)
    replica: int = Field(default=0, ge=0)
    truth: str | None = None

    @property
    def d(self) -> int:
        return 2 * self.p + self.q

    @property
    def key(self) -> str:
        return short_hash(self.model_dump(mode="json"))

    @property
    def name(self) -> str:
        base = f"p{self.p}_q{self.q}_n{self.n}"
        if self.replica or self.truth or self.noise_scale != 0.1:
            base += f"_{self.key}"
        return base


class GnnConfig(BaseModel):
    """Model and training settings for one GNN run."""

    model_config = ConfigDict(frozen=True)

    num_layers: int = Field(default=1, ge=1)
    embedding_dim: int = Field(default=16, ge=1)
    hidden_dim: int | None = Field(default=None, ge=1)
    lr: float = Field(default=1e-2, gt=0.0)
    batch_size: int = Field(default=256, ge=1)
    max_epochs: int = Field(default=200, ge=0)
    patience: int = Field(default=30, ge=1)
    plateau_factor: float = Field(default=0.5, gt=0.0, lt=1.0)
    plateau_patience: int = Field(default=10, ge=1)
    plateau_threshold: float = Field(default=1e-4, ge=0.0)
    min_lr: float = Field(default=1e-5, gt=0.0)
    bn_momentum: float = Field(default=0.1, gt=0.0, le=1.0)
    bn_eps: float = Field(default=1e-5, gt=0.0)
    embedding_init_std: float = Field(default=0.1, ge=0.0)
    seed: int = 0

    @property
    def hidden(self) -> int:
        if self.hidden_dim is not None:
            return self.hidden_dim
        return DEFAULT_HIDDEN_DIMS.get(self.num_layers, DEFAULT_HIDDEN_DIMS[3])


class RunStatus(str, Enum):
    """Outcome of one sweep cell."""

    COMPLETED = "completed"
    FAILED = "failed"
    EXCEEDED = "exceeded"


class RunRecord(BaseModel):
    """One (graph, model config, seed) training outcome."""

    cell_key: str
    plan: str = "adhoc"
    dataset: SyntheticSpec
    truth: str
    graph_id: str
    graph_edges: str
    graph_label: str | None = None
    group: str | None = None
    strata: GraphStrata
    config: GnnConfig
    seed: int
    status: RunStatus
    epochs_run: int = 0
    final_train_loss: float | None = None
    final_lr: float | None = None
    stopped_early: bool = False
    test_mae: float | None = Field(default=None, ge=0.0)
    test_mse: float | None = Field(default=None, ge=0.0)
    wall_time: float = 0.0
    error: str | None = None
    started_at: datetime = Field(default_factory=datetime.now)

    @property
    def layers(self) -> int:
        return self.config.num_layers


class PairedStat(BaseModel):
    """Seed-paired MAE differences (child - parent) with a one-sided lower confidence bound."""

    row: str
    parent_id: str
    child_id: str
    layers: int
    removed_edge: tuple[int, int] | None = None
    differences: tuple[float, ...]
    confidence: float = 0.95

    @computed_field
    @property
    def n(self) -> int:
        return len(self.differences)

    @computed_field
    @property
    def mean(self) -> float:
        return math.fsum(self.differences) / len(self.differences) if self.differences else math.nan

    @computed_field
    @property
    def std(self) -> float:
        if len(self.differences) < 2:
            return 0.0
        m = self.mean
        return math.sqrt(math.fsum((x - m) ** 2 for x in self.differences) / (len(self.differences) - 1))

    @computed_field
    @property
    def lower_bound(self) -> float:
        from scipy import stats

        if not self.differences:
            return math.nan
        if len(self.differences) < 2:
            return -math.inf
        if self.std == 0.0:
            return self.mean
        t = stats.t.ppf(self.confidence, len(self.differences) - 1)
        return self.mean - t * self.std / math.sqrt(len(self.differences))

    @property
    def significant(self) -> bool:
        return self.lower_bound > 0


class MdlReport(BaseModel):
    """Two-part description length of a dataset under a graph-induced pairwise model."""

    graph_edges: str
    num_edges: int
    model_bits: float = Field(ge=0.0)
    feature_bits: float = Field(ge=0.0)
    residual_bits: float = Field(ge=0.0)

    @computed_field
    @property
    def data_bits(self) -> float:
        return self.feature_bits + self.residual_bits

    @computed_field
    @property
    def total_bits(self) -> float:
        return self.model_bits + self.data_bits


class GraphSource(BaseModel):
    """Where a plan's graphs come from."""

    kind: Literal["stratified", "lattice", "reference", "explicit"] = "reference"
    quotas: list[StratumQuota] = Field(default_factory=list)
    sample_seed: int = 0
    siblings: bool = True
    kinds: list[Literal["null", "complete", "ground_truth"]] = Field(
        default_factory=lambda: ["null", "complete", "ground_truth"]
    )
    graphs: list[str] = Field(default_factory=list)


def _default_replicates() -> int:
    # config imports this module, so the lookup waits until a plan is built
    from .config import get_sweep_config

    return int(get_sweep_config()["replicates"])


class ExperimentPlan(BaseModel):
    """A sweep: dataset x graphs x model depths x seeds."""

    name: str = Field(pattern=r"^[A-Za-z0-9_.-]+$")
    dataset: SyntheticSpec = Field(default_factory=SyntheticSpec)
    graph_source: GraphSource = Field(default_factory=GraphSource)
    layers: list[int] = Field(default_factory=lambda: [1])
    seeds: list[int] | None = None
    replicates: int = Field(default_factory=_default_replicates, ge=1)
    base_seed: int = 0
    training: dict[str, Any] = Field(default_factory=dict)
    p_values: list[int] | None = None
    arc_cap: int | None = Field(default=None, ge=0)

    @model_validator(mode="after")
    def _check(self) -> ExperimentPlan:
        seeds = self.seed_list()
        if len(set(seeds)) != len(seeds):
            raise ValueError("seeds must be unique")
        if any(layer < 1 for layer in self.layers):
            raise ValueError("layers must be >= 1")
        return self

    def seed_list(self) -> list[int]:
        if self.seeds is not None:
            return list(self.seeds)
        return [self.base_seed + r for r in range(self.replicates)]
