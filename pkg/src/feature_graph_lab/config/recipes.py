"""
Experiment recipes - the plans behind each aggregate table.

This is "code as configuration": edit a builder here to change what a
``sweep --recipe <name>`` run trains. All recipes use the canonical
dataset p=2, q=2, n=10000, whose ground truth is x0*x1 + x2*x3 + x4 + x5.
"""

from __future__ import annotations

import itertools
from collections.abc import Callable

from ..errors import PlanError
from ..models import ExperimentPlan, GraphSource, StratumQuota, SyntheticSpec

# Fewer epochs than the library default keep the recipes at desk scale.
RECIPE_TRAINING = {"max_epochs": 80, "patience": 20}

CANONICAL_DATASET = SyntheticSpec(p=2, q=2, n=10000)


def edges_plan() -> ExperimentPlan:
    """
    Interaction vs non-interaction edges.

    Each quota fixes the non-interaction edge count with both interaction
    edges present; sibling sets then add the 0- and 1-interaction variants.
    m=0 yields the ground-truth graph and m=13 the complete graph.
    """
    counts = {0: 1, 3: 2, 6: 2, 9: 2, 12: 2, 13: 1}
    quotas = [StratumQuota(count=c, interaction_edges=2, non_interaction_edges=m) for m, c in counts.items()]
    return ExperimentPlan(
        name="edges",
        dataset=CANONICAL_DATASET,
        graph_source=GraphSource(kind="stratified", quotas=quotas, siblings=True),
        layers=[1],
        replicates=3,
        training=dict(RECIPE_TRAINING),
    )


def removal_plan() -> ExperimentPlan:
    """Edge-removal lattices of 10 sampled graphs holding both interaction edges, 5 seeds each."""
    return ExperimentPlan(
        name="removal",
        dataset=CANONICAL_DATASET,
        graph_source=GraphSource(kind="lattice", quotas=[StratumQuota(count=10, interaction_edges=2)]),
        layers=[1],
        replicates=5,
        training=dict(RECIPE_TRAINING),
    )


def hops_plan() -> ExperimentPlan:
    """Hop profiles of the two interacting pairs in {1, 2, unreachable}^2, for 1 and 2 layers."""
    quotas = [StratumQuota(count=3, hops=profile) for profile in itertools.product((1, 2, 99), repeat=2)]
    return ExperimentPlan(
        name="hops",
        dataset=CANONICAL_DATASET,
        graph_source=GraphSource(kind="stratified", quotas=quotas, siblings=False),
        layers=[1, 2],
        replicates=3,
        training=dict(RECIPE_TRAINING),
    )


def scaling_plan() -> ExperimentPlan:
    """Complete vs ground-truth graphs as the number of pairwise terms grows."""
    return ExperimentPlan(
        name="scaling",
        dataset=CANONICAL_DATASET,
        graph_source=GraphSource(kind="reference", kinds=["complete", "ground_truth"]),
        layers=[1],
        replicates=3,
        training=dict(RECIPE_TRAINING),
        p_values=[2, 10, 20],
    )


RECIPES: dict[str, Callable[[], ExperimentPlan]] = {
    "edges": edges_plan,
    "removal": removal_plan,
    "hops": hops_plan,
    "scaling": scaling_plan,
}


def match_recipe(name: str) -> Callable[[], ExperimentPlan]:
    """
    Match a recipe name to its plan builder.

    Raises:
        PlanError: unknown recipe name.
    """
    try:
        return RECIPES[name]
    except KeyError:
        raise PlanError(f"Unknown recipe {name!r}; choose from {', '.join(sorted(RECIPES))}") from None
