"""Shared builders for randomized test instances."""

from __future__ import annotations

import numpy as np

from switchdet import (
    Box,
    GraphSpec,
    Hypothesis,
    HypothesisStore,
    ModelParams,
)

NODE_NAME_POOL = ("object", "head", "torso", "legs", "tail", "wing")


def random_box(rng, *, span: float = 200.0, min_size: float = 1.0, max_size: float = 60.0) -> Box:
    x1 = rng.uniform(0.0, span)
    y1 = rng.uniform(0.0, span)
    w = rng.uniform(min_size, max_size)
    h = rng.uniform(min_size, max_size)
    return Box(x1, y1, x1 + w, y1 + h)


def random_params(rng, spec: GraphSpec, scale: float = 1.0) -> ModelParams:
    return ModelParams(
        unary_w=scale * rng.standard_normal(spec.num_nodes),
        pairwise_w=scale * rng.standard_normal((spec.num_edges, 10)),
        pattern_b=scale * rng.standard_normal(spec.num_patterns),
    )


def random_store(
    rng, spec: GraphSpec, *, max_per_node: int = 6, allow_empty: bool = True
) -> HypothesisStore:
    store = HypothesisStore(spec.num_nodes)
    low = 0 if allow_empty else 1
    for node in range(spec.num_nodes):
        for hyp_id in range(int(rng.integers(low, max_per_node + 1))):
            store.add(
                Hypothesis(
                    id=hyp_id,
                    node=node,
                    box=random_box(rng),
                    raw_score=float(rng.normal(0.0, 1.5)),
                )
            )
    return store


def random_instance(
    rng, *, max_nodes: int = 4, max_per_node: int = 6, allow_empty: bool = True
):
    k = int(rng.integers(1, max_nodes + 1))
    spec = GraphSpec(NODE_NAME_POOL[:k])
    store = random_store(rng, spec, max_per_node=max_per_node, allow_empty=allow_empty)
    params = random_params(rng, spec)
    return spec, store, params
