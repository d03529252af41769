"""Hypothesis pruning and exact exhaustive search over detectability patterns.

The search enumerates every non-empty on/off mask and every assignment of
pruned hypotheses to its on nodes.  Per-node weighted unary terms and
per-edge pairwise dot products are computed once per image and shared across
all masks, so the exhaustive sweep over a few thousand configurations stays
cheap.  Cached sums accumulate in the same order as
:func:`switchdet.model.score_configuration`, making the two paths
bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .geometry import iou
from .model import (
    NUM_PAIRWISE_FEATURES,
    Configuration,
    GraphSpec,
    Hypothesis,
    HypothesisStore,
    ModelParams,
    normalize_unary,
    pattern_bits,
)


@dataclass(frozen=True)
class PruneConfig:
    """Per-node hypothesis pruning: score threshold, greedy NMS, count cap.

    ``unary_threshold`` is either one real for all nodes or one per node.
    """

    unary_threshold: float | tuple[float, ...] = float("-inf")
    nms_iou: float = 0.5
    max_hypotheses: int = 15

    def __post_init__(self):
        if isinstance(self.unary_threshold, (list, tuple, np.ndarray)):
            object.__setattr__(
                self, "unary_threshold", tuple(float(t) for t in self.unary_threshold)
            )
        else:
            object.__setattr__(self, "unary_threshold", float(self.unary_threshold))
        if not (0.0 < self.nms_iou < 1.0):
            raise ValueError(f"nms_iou must be in (0, 1), got {self.nms_iou}")
        if self.max_hypotheses < 1:
            raise ValueError(f"max_hypotheses must be >= 1, got {self.max_hypotheses}")

    def threshold_for(self, node: int) -> float:
        if isinstance(self.unary_threshold, tuple):
            return self.unary_threshold[node]
        return self.unary_threshold


@dataclass(frozen=True)
class DetectConfig:
    """Detection-time knobs: emit threshold, output cap, optional mask restriction."""

    score_threshold: float = 0.0
    max_raw_detections: int = 100
    patterns: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.max_raw_detections < 1:
            raise ValueError(f"max_raw_detections must be >= 1, got {self.max_raw_detections}")
        if self.patterns is not None:
            object.__setattr__(self, "patterns", tuple(int(p) for p in self.patterns))
            for p in self.patterns:
                if p < 1:
                    raise ValueError(f"pattern masks must be non-empty, got {p}")


@dataclass(frozen=True)
class ScoredConfiguration:
    config: Configuration
    score: float


def prune_hypotheses(
    candidates: HypothesisStore | Iterable[Hypothesis],
    cfg: PruneConfig,
    *,
    num_nodes: int | None = None,
) -> HypothesisStore:
    """Per node: drop below-threshold candidates, greedy-NMS the rest by
    descending raw score (ids break ties), truncate to ``max_hypotheses``.

    Output lists are ordered by descending raw score, ties by ascending id.
    """
    if isinstance(candidates, HypothesisStore):
        store = candidates
    else:
        cands = list(candidates)
        if num_nodes is None:
            if isinstance(cfg.unary_threshold, tuple):
                num_nodes = len(cfg.unary_threshold)
            else:
                num_nodes = max((h.node for h in cands), default=0) + 1
        store = HypothesisStore(num_nodes, cands)
    if isinstance(cfg.unary_threshold, tuple) and len(cfg.unary_threshold) != store.num_nodes:
        raise ValueError(
            f"per-node thresholds ({len(cfg.unary_threshold)}) do not match "
            f"node count ({store.num_nodes})"
        )

    pruned = HypothesisStore(store.num_nodes)
    for node in range(store.num_nodes):
        thresh = cfg.threshold_for(node)
        survivors = [h for h in store.node(node) if h.raw_score >= thresh]
        survivors.sort(key=lambda h: (-h.raw_score, h.id))
        kept: list[Hypothesis] = []
        for h in survivors:
            if len(kept) >= cfg.max_hypotheses:
                break
            if any(iou(h.box, k.box) > cfg.nms_iou for k in kept):
                continue
            kept.append(h)
        for h in kept:
            pruned.add(h)
    return pruned


def _edge_term_matrix(w: np.ndarray, props_i: dict, props_j: dict) -> np.ndarray:
    """Pairwise score matrix for one edge over all hypothesis pairs.

    Accumulates the 10 weighted features in the same order as the scalar
    path so entries are bit-identical to score_configuration.
    """
    wa = props_i["w"][:, None]
    ha = props_i["h"][:, None]
    wb = props_j["w"][None, :]
    hb = props_j["h"][None, :]
    sx = wa + wb
    sy = ha + hb
    if np.any(sx == 0.0) or np.any(sy == 0.0):
        raise ValueError("degenerate geometry: combined box size is zero on an axis")
    if np.any(wb <= 0.0) or np.any(hb <= 0.0):
        raise ValueError("degenerate geometry: zero-size denominator box")
    dx = (props_j["cx"][None, :] - props_i["cx"][:, None]) / sx
    dy = (props_j["cy"][None, :] - props_i["cy"][:, None]) / sy
    ds = (wa * ha) / (wb * hb)
    dsx = wa / wb
    dsy = ha / hb
    feats = (dx, dy, dx * dx, dy * dy, ds, dsx, dsy, ds * ds, dsx * dsx, dsy * dsy)
    term = np.zeros(ds.shape)
    for t in range(NUM_PAIRWISE_FEATURES):
        term += w[t] * feats[t]
    return term


def _node_props(hyps: Sequence[Hypothesis]) -> dict:
    return {
        "cx": np.array([h.box.center[0] for h in hyps]),
        "cy": np.array([h.box.center[1] for h in hyps]),
        "w": np.array([h.box.width for h in hyps]),
        "h": np.array([h.box.height for h in hyps]),
    }


def detect(
    store: HypothesisStore,
    params: ModelParams,
    spec: GraphSpec,
    cfg: DetectConfig,
) -> list[ScoredConfiguration]:
    """All configurations scoring at least ``score_threshold``, best first.

    Enumerates every non-empty mask (or ``cfg.patterns`` when restricted) and
    every hypothesis assignment to its on nodes.  Results are sorted by
    descending score with ties broken by the lexicographically smallest
    (mask, assigned ids), then truncated to ``max_raw_detections``.  The top
    result is the exact global argmax.
    """
    params.validate_for(spec)
    if store.num_nodes != spec.num_nodes:
        raise ValueError(
            f"store has {store.num_nodes} nodes, graph has {spec.num_nodes}"
        )
    k = spec.num_nodes
    if cfg.patterns is not None:
        masks: Sequence[int] = cfg.patterns
        for m in masks:
            if not (1 <= m < (1 << k)):
                raise ValueError(f"pattern mask {m} out of range for {k} nodes")
    else:
        masks = range(1, 1 << k)

    node_lists = [store.node(i) for i in range(k)]
    counts = [len(lst) for lst in node_lists]
    props = [_node_props(lst) for lst in node_lists]

    slope = params.sigmoid_slope
    # scalar loop on purpose: normalize_unary must round exactly as in the scalar path
    unary = [
        np.array([params.unary_w[i] * normalize_unary(h.raw_score, slope) for h in node_lists[i]])
        for i in range(k)
    ]
    edge_terms: dict[int, np.ndarray] = {}
    for e, (i, j) in enumerate(spec.edges):
        if counts[i] and counts[j]:
            edge_terms[e] = _edge_term_matrix(params.pairwise_w[e], props[i], props[j])

    blocks: list[tuple[int, list[int], tuple[int, ...], np.ndarray]] = []
    for mask in masks:
        on = pattern_bits(mask, k)
        if any(counts[i] == 0 for i in on):
            continue
        shape = tuple(counts[i] for i in on)
        axis_of = {node: axis for axis, node in enumerate(on)}
        scores = np.zeros(shape)
        for axis, node in enumerate(on):
            view = [1] * len(on)
            view[axis] = counts[node]
            scores += unary[node].reshape(view)
        for e, (i, j) in enumerate(spec.edges):
            if i in axis_of and j in axis_of:
                view = [1] * len(on)
                view[axis_of[i]] = counts[i]
                view[axis_of[j]] = counts[j]
                scores += edge_terms[e].reshape(view)
        scores += params.pattern_b[mask - 1]
        blocks.append((mask, on, shape, scores.ravel()))

    if not blocks:
        return []

    flat = np.concatenate([b[3] for b in blocks])
    starts = np.cumsum([0] + [b[3].size for b in blocks])
    keep = np.flatnonzero(flat >= cfg.score_threshold)
    if keep.size == 0:
        return []
    cap = cfg.max_raw_detections
    if keep.size > cap:
        vals = flat[keep]
        kth = np.partition(vals, keep.size - cap)[keep.size - cap]
        keep = keep[vals >= kth]  # superset: ties at the cut resolved after sorting

    entries = []
    for gi in keep:
        b = int(np.searchsorted(starts, gi, side="right")) - 1
        mask, on, shape, block_scores = blocks[b]
        local = int(gi - starts[b])
        multi = np.unravel_index(local, shape)
        ids = tuple(node_lists[node][multi[axis]].id for axis, node in enumerate(on))
        entries.append((float(block_scores[local]), mask, ids, on))
    entries.sort(key=lambda t: (-t[0], t[1], t[2]))
    del entries[cap:]

    return [
        ScoredConfiguration(
            config=Configuration(mask, dict(zip(on, ids))),
            score=score,
        )
        for score, mask, ids, on in entries
    ]
