"""Bounding-box generation for holistic-off detections and part-based NMS."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import Box, union_box
from .model import Configuration, HypothesisStore


@dataclass(frozen=True)
class Detection:
    """A scored configuration with its final object box and per-node boxes."""

    image_id: str
    config: Configuration
    score: float
    box: Box
    node_boxes: Mapping[int, Box]

    def sort_key(self):
        return (-self.score, self.image_id) + self.config.sort_key()


@dataclass(frozen=True)
class BoxRegressor:
    """Affine map from concatenated part corners to the object box corners.

    ``weights`` is 4 x (4n + 1): one row per output corner coordinate over
    the 4n part corner coordinates plus a constant column.  Fallback
    regressors predict the union of the part boxes instead.
    """

    pattern: int
    weights: np.ndarray | None
    trained_on: int
    fallback: bool

    def __post_init__(self):
        n = bin(self.pattern).count("1")
        if self.fallback:
            if self.weights is not None:
                raise ValueError("fallback regressors carry no weights")
        else:
            w = np.array(self.weights, dtype=float)
            if w.shape != (4, 4 * n + 1):
                raise ValueError(
                    f"weights must be 4 x {4 * n + 1} for a {n}-part pattern, got {w.shape}"
                )
            w.flags.writeable = False
            object.__setattr__(self, "weights", w)

    def predict(self, part_boxes: Sequence[Box]) -> Box:
        if self.fallback:
            return union_box(part_boxes)
        g = np.concatenate([[b.x1, b.y1, b.x2, b.y2] for b in part_boxes])
        y = self.weights @ np.append(g, 1.0)
        return Box(min(y[0], y[2]), min(y[1], y[3]), max(y[0], y[2]), max(y[1], y[3]))


def part_corner_vector(cfg: Configuration, store: HypothesisStore) -> np.ndarray:
    """Corners of the assigned part boxes, parts by ascending node index."""
    parts = [i for i in cfg.on_nodes() if i != 0]
    if not parts:
        raise ValueError("configuration has no part nodes")
    out = np.empty(4 * len(parts))
    for slot, i in enumerate(parts):
        b = store.get(i, cfg.assignment[i]).box
        out[4 * slot : 4 * slot + 4] = (b.x1, b.y1, b.x2, b.y2)
    return out


def fit_box_regressors(
    positives: Iterable[tuple[Configuration, Box, HypothesisStore]],
) -> dict[int, BoxRegressor]:
    """Least-squares regressors per holistic-off pattern seen in the positives.

    A pattern gets a fitted regressor only with at least 4n + 1 linearly
    independent samples; otherwise the union-box fallback absorbs it.
    """
    grouped: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
    for cfg, gt_box, store in positives:
        if cfg.pattern & 1:
            continue  # holistic on: the hypothesis box is the output, nothing to learn
        g = part_corner_vector(cfg, store)
        target = np.array([gt_box.x1, gt_box.y1, gt_box.x2, gt_box.y2])
        grouped.setdefault(cfg.pattern, []).append((g, target))

    regressors: dict[int, BoxRegressor] = {}
    for mask, rows in grouped.items():
        n_parts = bin(mask).count("1")
        cols = 4 * n_parts + 1
        m = len(rows)
        if m >= cols:
            x = np.stack([np.append(g, 1.0) for g, _ in rows])
            y = np.stack([t for _, t in rows])
            solution, _, rank, _ = np.linalg.lstsq(x, y, rcond=None)
            if rank == cols:
                regressors[mask] = BoxRegressor(
                    pattern=mask, weights=solution.T, trained_on=m, fallback=False
                )
                continue
        regressors[mask] = BoxRegressor(pattern=mask, weights=None, trained_on=m, fallback=True)
    return regressors


def generate_box(
    regressors: Mapping[int, BoxRegressor],
    cfg: Configuration,
    store: HypothesisStore,
) -> Box:
    """Final object box: the holistic hypothesis box when the holistic node is
    on, otherwise the pattern's regression (union of parts when unavailable)."""
    if cfg.pattern & 1:
        return store.get(0, cfg.assignment[0]).box
    parts = [i for i in cfg.on_nodes() if i != 0]
    part_boxes = [store.get(i, cfg.assignment[i]).box for i in parts]
    reg = regressors.get(cfg.pattern)
    if reg is None:
        return union_box(part_boxes)
    return reg.predict(part_boxes)


def part_nms(detections: Sequence) -> list:
    """Greedy suppression of detections sharing any hypothesis with a kept one.

    Input items need ``config`` and ``score`` attributes.  Output is ordered
    by descending score (ties by smallest (mask, ids)) and no two kept items
    share a (node, hypothesis id) pair.
    """
    ranked = sorted(detections, key=lambda d: (-d.score,) + d.config.sort_key())
    kept: list = []
    used: set[tuple[int, int]] = set()
    for det in ranked:
        hyps = set(det.config.assignment.items())
        if hyps & used:
            continue
        kept.append(det)
        used |= hyps
    return kept
