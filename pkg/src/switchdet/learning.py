"""Switch-label assignment, hard-negative mining, and the max-margin solver.

Training labels every positive object with an on/off pattern driven by the
pruned detector activations (a node is on only when some hypothesis overlaps
its annotation by at least ``detect_iou``), then alternates solving the
linear max-margin problem with mining violating configurations from the
negative images.  The solver is a deterministic cyclic dual coordinate
descent for the L1-hinge SVM without intercept, the same formulation
LIBLINEAR solves:

    min  1/2 ||b||^2 + C sum_i xi_i
    s.t. b . phi_i >= 1 - xi_i   (positives)
         b . phi_i <= -1 + xi_i  (negatives),  xi_i >= 0
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dataio import ImageSample, ObjectAnnotation
from .geometry import Box, iou
from .inference import DetectConfig, PruneConfig, detect, prune_hypotheses
from .model import (
    Configuration,
    GraphSpec,
    HypothesisStore,
    ModelParams,
    feature_vector,
)

MINING_MARGIN = -1.0


@dataclass(frozen=True)
class LabeledExample:
    """One feature vector with its side of the margin and an audit trail."""

    phi: np.ndarray
    sign: int
    source: str

    def __post_init__(self):
        phi = np.array(self.phi, dtype=float)
        if phi.ndim != 1:
            raise ValueError("phi must be a 1-d vector")
        phi.flags.writeable = False
        object.__setattr__(self, "phi", phi)
        if self.sign not in (1, -1):
            raise ValueError(f"sign must be +1 or -1, got {self.sign}")


@dataclass(frozen=True)
class TrainConfig:
    C: float = 1.0
    detect_iou: float = 0.40
    mining_rounds: int = 5
    negatives_per_image: int = 10
    solver_tolerance: float = 1e-6
    force_all_on: bool = False
    sigmoid_slope: float = 1.5

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError(f"C must be positive, got {self.C}")
        if not (0.0 < self.detect_iou < 1.0):
            raise ValueError(f"detect_iou must be in (0, 1), got {self.detect_iou}")
        if self.mining_rounds < 1:
            raise ValueError(f"mining_rounds must be >= 1, got {self.mining_rounds}")
        if self.negatives_per_image < 1:
            raise ValueError(f"negatives_per_image must be >= 1, got {self.negatives_per_image}")


@dataclass(frozen=True)
class LabeledPositive:
    image_id: str
    object_index: int
    config: Configuration
    gt_box: Box


@dataclass
class TrainResult:
    params: ModelParams
    prune: PruneConfig
    rounds: list[dict]
    rejected_positives: int
    labeled: list[LabeledPositive]
    pruned: dict[str, HypothesisStore]


def _gt_box_for_node(obj: ObjectAnnotation, node: int, spec: GraphSpec) -> Box | None:
    if node == 0:
        return obj.bbox
    return obj.parts.get(spec.node_names[node])


def assign_switch_labels(
    obj: ObjectAnnotation,
    store: HypothesisStore,
    spec: GraphSpec,
    cfg: TrainConfig,
    *,
    force_all_on: bool | None = None,
) -> Configuration | None:
    """On/off labels for one annotated object from its pruned activations.

    A node is on iff the annotation provides its box and some hypothesis of
    that node overlaps it with IOU >= ``detect_iou``; the assigned hypothesis
    is the qualifying one with the highest raw score.  Returns None
    (rejection) when no node qualifies.  With ``force_all_on`` every node
    must qualify or the object is rejected.
    """
    if obj.bbox is None:
        raise ValueError("annotated object without a holistic box is malformed")
    forced = cfg.force_all_on if force_all_on is None else force_all_on
    mask = 0
    assignment: dict[int, int] = {}
    for node in range(spec.num_nodes):
        gt = _gt_box_for_node(obj, node, spec)
        if gt is None:
            if forced:
                return None
            continue
        # pruned lists are ordered by descending score, ties by ascending id,
        # so the first qualifying hypothesis is the assignment
        chosen = next(
            (h for h in store.node(node) if iou(h.box, gt) >= cfg.detect_iou), None
        )
        if chosen is None:
            if forced:
                return None
            continue
        mask |= 1 << node
        assignment[node] = chosen.id
    if mask == 0:
        return None
    return Configuration(mask, assignment)


def calibrate_prune_thresholds(
    samples: Iterable[ImageSample],
    spec: GraphSpec,
    *,
    overlap_iou: float = 0.40,
    retain: float = 0.95,
    nms_iou: float = 0.5,
    max_hypotheses: int = 15,
) -> PruneConfig:
    """Per-node thresholds keeping at least ``retain`` of the ground-truth
    overlapping activations; nodes with no overlapping activations get -inf."""
    scores: list[list[float]] = [[] for _ in range(spec.num_nodes)]
    for sample in samples:
        if sample.negative or sample.hypotheses is None:
            continue
        for node in range(spec.num_nodes):
            gts = [
                b
                for obj in sample.objects
                if (b := _gt_box_for_node(obj, node, spec)) is not None
            ]
            if not gts:
                continue
            for h in sample.hypotheses.node(node):
                if any(iou(h.box, g) >= overlap_iou for g in gts):
                    scores[node].append(h.raw_score)
    thresholds = []
    for node_scores in scores:
        if not node_scores:
            thresholds.append(float("-inf"))
            continue
        node_scores.sort()
        cut = int((1.0 - retain) * len(node_scores))
        thresholds.append(node_scores[cut])
    return PruneConfig(
        unary_threshold=tuple(thresholds), nms_iou=nms_iou, max_hypotheses=max_hypotheses
    )


def _dual_coordinate_descent(
    x: np.ndarray, y: np.ndarray, c: float, tol: float, max_sweeps: int
) -> np.ndarray:
    """Cyclic dual coordinate descent for the L1-hinge SVM without intercept.

    Stops when the largest projected-gradient violation in a sweep drops
    below ``tol``.  Cyclic order keeps the result deterministic.
    """
    n, d = x.shape
    alpha = np.zeros(n)
    w = np.zeros(d)
    qii = np.einsum("ij,ij->i", x, x)
    for _ in range(max_sweeps):
        worst = 0.0
        for i in range(n):
            g = y[i] * float(np.dot(x[i], w)) - 1.0
            a = alpha[i]
            if a <= 0.0:
                pg = min(g, 0.0)
            elif a >= c:
                pg = max(g, 0.0)
            else:
                pg = g
            if pg != 0.0:
                worst = max(worst, abs(pg))
                if qii[i] > 0.0:
                    new_a = min(max(a - g / qii[i], 0.0), c)
                    if new_a != a:
                        w += (new_a - a) * y[i] * x[i]
                        alpha[i] = new_a
                else:
                    # zero feature vector: its slack is fixed, w unaffected
                    alpha[i] = c if g < 0 else 0.0
        if worst < tol:
            break
    return w


def svm_objective(beta: np.ndarray, examples: Sequence[LabeledExample], c: float) -> float:
    """Primal objective 1/2 ||beta||^2 + C * total hinge slack."""
    beta = np.asarray(beta, dtype=float)
    slack = 0.0
    for ex in examples:
        slack += max(0.0, 1.0 - ex.sign * float(np.dot(beta, ex.phi)))
    return 0.5 * float(np.dot(beta, beta)) + c * slack


def solve_max_margin(
    examples: Sequence[LabeledExample],
    spec: GraphSpec,
    *,
    C: float = 1.0,
    tol: float = 1e-8,
    sigmoid_slope: float = 1.5,
    max_sweeps: int = 200_000,
) -> ModelParams:
    """Margin-trained parameters from labeled feature vectors.

    Needs at least one example on each side of the margin, all of dimension
    ``spec.param_dimension`` and finite.
    """
    if not examples:
        raise ValueError("no training examples")
    signs = {ex.sign for ex in examples}
    if 1 not in signs or -1 not in signs:
        raise ValueError("need at least one positive and one negative example")
    d = spec.param_dimension
    for ex in examples:
        if ex.phi.shape != (d,):
            raise ValueError(
                f"example {ex.source!r} has dimension {ex.phi.shape}, expected ({d},)"
            )
    x = np.stack([ex.phi for ex in examples])
    if not np.isfinite(x).all():
        raise ValueError("non-finite feature values in training examples")
    y = np.array([float(ex.sign) for ex in examples])
    w = _dual_coordinate_descent(x, y, float(C), float(tol), max_sweeps)
    return ModelParams.from_vector(spec, w, sigmoid_slope=sigmoid_slope)


def mine_hard_negatives(
    params: ModelParams,
    negative_images: Iterable[tuple[str, HypothesisStore]],
    spec: GraphSpec,
    cfg: TrainConfig,
    *,
    patterns: tuple[int, ...] | None = None,
) -> list[LabeledExample]:
    """Configurations from negative images violating the -1 margin, at most
    ``negatives_per_image`` highest-scoring per image."""
    detect_cfg = DetectConfig(
        score_threshold=MINING_MARGIN,
        max_raw_detections=cfg.negatives_per_image,
        patterns=patterns,
    )
    mined: list[LabeledExample] = []
    for image_id, store in negative_images:
        for scored in detect(store, params, spec, detect_cfg):
            if scored.score <= MINING_MARGIN:
                continue
            phi = feature_vector(spec, scored.config, store, params.sigmoid_slope)
            ids = ",".join(str(v) for _, v in sorted(scored.config.assignment.items()))
            mined.append(
                LabeledExample(
                    phi=phi,
                    sign=-1,
                    source=f"{image_id}|mask={scored.config.pattern}|ids={ids}",
                )
            )
    return mined


def _bootstrap_params(spec: GraphSpec, sigmoid_slope: float) -> ModelParams:
    """Unary-only model (unit unary weights, zero pairwise and bias) used to
    mine the first negatives before any solve."""
    base = ModelParams.zeros(spec, sigmoid_slope)
    return ModelParams(
        unary_w=np.ones(spec.num_nodes),
        pairwise_w=base.pairwise_w,
        pattern_b=base.pattern_b,
        sigmoid_slope=sigmoid_slope,
    )


def train(
    samples: Sequence[ImageSample],
    spec: GraphSpec,
    cfg: TrainConfig,
    prune: PruneConfig | None = None,
) -> TrainResult:
    """Full training pass: prune, label positives, then alternate solving and
    hard-negative mining for up to ``mining_rounds`` rounds (stopping early
    once a round mines nothing new)."""
    positives = [s for s in samples if not s.negative]
    negatives = [s for s in samples if s.negative]
    if not positives:
        raise ValueError("training needs positive images")
    for s in samples:
        if s.hypotheses is None:
            raise ValueError(f"image {s.image_id} has no hypothesis set")

    if prune is None:
        prune = calibrate_prune_thresholds(
            positives, spec, overlap_iou=cfg.detect_iou
        )
    pruned = {s.image_id: prune_hypotheses(s.hypotheses, prune) for s in samples}

    restrict = (spec.full_mask,) if cfg.force_all_on else None

    examples: list[LabeledExample] = []
    labeled: list[LabeledPositive] = []
    rejected = 0
    total_objects = 0
    for sample in positives:
        store = pruned[sample.image_id]
        for idx, obj in enumerate(sample.objects):
            total_objects += 1
            label = assign_switch_labels(obj, store, spec, cfg)
            if label is None:
                rejected += 1
                continue
            labeled.append(LabeledPositive(sample.image_id, idx, label, obj.bbox))
            examples.append(
                LabeledExample(
                    phi=feature_vector(spec, label, store, cfg.sigmoid_slope),
                    sign=1,
                    source=f"{sample.image_id}|obj={idx}",
                )
            )
    if not examples:
        raise ValueError(
            f"all {total_objects} positive objects were rejected during labeling; "
            "nothing to train on"
        )

    neg_stores = [(s.image_id, pruned[s.image_id]) for s in negatives]
    seen: set[str] = set()
    boot = _bootstrap_params(spec, cfg.sigmoid_slope)
    for ex in mine_hard_negatives(boot, neg_stores, spec, cfg, patterns=restrict):
        if ex.source not in seen:
            seen.add(ex.source)
            examples.append(ex)

    params = None
    rounds: list[dict] = []
    for round_no in range(1, cfg.mining_rounds + 1):
        params = solve_max_margin(
            examples,
            spec,
            C=cfg.C,
            tol=cfg.solver_tolerance,
            sigmoid_slope=cfg.sigmoid_slope,
        )
        objective = svm_objective(params.flatten(), examples, cfg.C)
        fresh = [
            ex
            for ex in mine_hard_negatives(params, neg_stores, spec, cfg, patterns=restrict)
            if ex.source not in seen
        ]
        rounds.append(
            {
                "round": round_no,
                "objective": objective,
                "num_examples": len(examples),
                "new_negatives": len(fresh),
            }
        )
        if not fresh:
            break
        for ex in fresh:
            seen.add(ex.source)
            examples.append(ex)

    return TrainResult(
        params=params,
        prune=prune,
        rounds=rounds,
        rejected_positives=rejected,
        labeled=labeled,
        pruned=pruned,
    )
