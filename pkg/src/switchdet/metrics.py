"""Detection and part-localization metrics.

Average precision follows the all-points interpolation protocol: a ranked
detection is a true positive when it overlaps an unmatched ground-truth box
by at least the threshold (taking the highest-IOU unmatched one), and the
area under the precision-recall curve uses the monotone precision envelope.

Part metrics factor out detection quality: each ground-truth object is
represented by its highest-scoring detection overlapping the holistic box by
more than ``pcp_object_iou``; unmatched objects drop out.  For a given part,
objects without that part annotated are excluded, POP counts matched objects
whose detection switched the part on, and PCP additionally requires the part
box to overlap its annotation by more than ``pcp_part_iou``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dataio import ImageSample, ObjectAnnotation
from .geometry import Box, iou
from .postprocess import Detection

SIZE_CLASS_NAMES = ("XS", "S", "M", "L", "XL")
_SIZE_FRACTIONS = (0.10, 0.20, 0.40, 0.20, 0.10)


@dataclass(frozen=True)
class EvalConfig:
    ap_iou: float = 0.5
    pcp_object_iou: float = 0.5
    pcp_part_iou: float = 0.4

    def __post_init__(self):
        for name in ("ap_iou", "pcp_object_iou", "pcp_part_iou"):
            value = getattr(self, name)
            if not (0.0 < value < 1.0):
                raise ValueError(f"{name} must be in (0, 1), got {value}")


@dataclass(frozen=True)
class PartMetrics:
    """POP / PCP percentages for one part, with its denominator size."""

    pop: float | None
    pcp: float | None
    num_objects: int


def _ranked(detections: Iterable[Detection]) -> list[Detection]:
    return sorted(detections, key=lambda d: d.sort_key())


def gt_boxes_by_image(samples: Iterable[ImageSample]) -> dict[str, list[Box]]:
    return {s.image_id: [obj.bbox for obj in s.objects] for s in samples}


def match_detections(
    detections: Iterable[Detection],
    gts: Mapping[str, Sequence[Box]],
    iou_thresh: float,
) -> tuple[list[tuple[Detection, bool]], int]:
    """Greedy matching in rank order; returns (detection, is_tp) pairs and the
    number of ground-truth boxes."""
    npos = sum(len(v) for v in gts.values())
    taken: dict[str, set[int]] = {img: set() for img in gts}
    outcome: list[tuple[Detection, bool]] = []
    for det in _ranked(detections):
        boxes = gts.get(det.image_id, ())
        used = taken.setdefault(det.image_id, set())
        best_iou, best_idx = 0.0, None
        for idx, gt in enumerate(boxes):
            if idx in used:
                continue
            overlap = iou(det.box, gt)
            if overlap >= iou_thresh and overlap > best_iou:
                best_iou, best_idx = overlap, idx
        if best_idx is not None:
            used.add(best_idx)
            outcome.append((det, True))
        else:
            outcome.append((det, False))
    return outcome, npos


def precision_recall(
    detections: Iterable[Detection],
    gts: Mapping[str, Sequence[Box]],
    iou_thresh: float = 0.5,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Arrays (score, precision, recall) along the ranked detection list."""
    outcome, npos = match_detections(detections, gts, iou_thresh)
    if not outcome:
        return np.array([]), np.array([]), np.array([])
    tp = np.cumsum([1.0 if is_tp else 0.0 for _, is_tp in outcome])
    fp = np.cumsum([0.0 if is_tp else 1.0 for _, is_tp in outcome])
    scores = np.array([det.score for det, _ in outcome])
    precision = tp / (tp + fp)
    recall = tp / npos if npos > 0 else np.zeros_like(tp)
    return scores, precision, recall


def average_precision(
    detections: Iterable[Detection],
    gts: Mapping[str, Sequence[Box]],
    iou_thresh: float = 0.5,
) -> float:
    """All-points interpolated area under the precision-recall curve."""
    _, precision, recall = precision_recall(detections, gts, iou_thresh)
    if precision.size == 0:
        return 0.0
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(mpre.size - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    steps = np.nonzero(mrec[1:] != mrec[:-1])[0] + 1
    return float(np.sum((mrec[steps] - mrec[steps - 1]) * mpre[steps]))


def _match_objects_to_detections(
    detections: Iterable[Detection],
    samples: Sequence[ImageSample],
    object_iou: float,
    *,
    strict: bool,
) -> list[tuple[ImageSample, int, ObjectAnnotation, Detection | None]]:
    """Per ground-truth object, the highest-scoring detection overlapping its
    holistic box (strictly when ``strict``); None when nothing qualifies."""
    by_image: dict[str, list[Detection]] = {}
    for det in _ranked(detections):
        by_image.setdefault(det.image_id, []).append(det)
    matched = []
    for sample in samples:
        dets = by_image.get(sample.image_id, [])
        for idx, obj in enumerate(sample.objects):
            best = None
            for det in dets:  # already in rank order, first hit wins
                overlap = iou(det.box, obj.bbox)
                if (overlap > object_iou) if strict else (overlap >= object_iou):
                    best = det
                    break
            matched.append((sample, idx, obj, best))
    return matched


def pcp_pop(
    detections: Iterable[Detection],
    samples: Sequence[ImageSample],
    spec,
    cfg: EvalConfig = EvalConfig(),
    *,
    include_unmatched: bool = False,
) -> dict[str, PartMetrics]:
    """Per-part (POP, PCP) percentages over matched ground-truth objects.

    ``include_unmatched`` adds objects without a qualifying detection to the
    denominators (they can never count toward the numerators).
    """
    matched = _match_objects_to_detections(
        detections, [s for s in samples if not s.negative], cfg.pcp_object_iou, strict=True
    )
    results: dict[str, PartMetrics] = {}
    for node in range(1, spec.num_nodes):
        name = spec.node_names[node]
        denom = 0
        pop_hits = 0
        pcp_hits = 0
        for _, _, obj, det in matched:
            gt_part = obj.parts.get(name)
            if gt_part is None:
                continue  # unannotated part: out of both denominators
            if det is None:
                if include_unmatched:
                    denom += 1
                continue
            denom += 1
            if not (det.config.pattern >> node) & 1:
                continue
            pop_hits += 1
            if iou(det.node_boxes[node], gt_part) > cfg.pcp_part_iou:
                pcp_hits += 1
        if denom == 0:
            results[name] = PartMetrics(pop=None, pcp=None, num_objects=0)
        else:
            results[name] = PartMetrics(
                pop=100.0 * pop_hits / denom,
                pcp=100.0 * pcp_hits / denom,
                num_objects=denom,
            )
    return results


def size_classes(areas: Sequence[float]) -> list[str]:
    """XS/S/M/L/XL label per instance by area percentile (10/20/40/20/10 split,
    boundaries at floor(fraction * N), stable ties by input order)."""
    n = len(areas)
    if n == 0:
        return []
    order = np.argsort(np.asarray(areas, dtype=float), kind="stable")
    labels = [""] * n
    start = 0
    cumulative = 0.0
    for name, fraction in zip(SIZE_CLASS_NAMES[:-1], _SIZE_FRACTIONS[:-1]):
        cumulative += fraction
        end = int(np.floor(cumulative * n))
        for pos in range(start, end):
            labels[order[pos]] = name
        start = end
    for pos in range(start, n):
        labels[order[pos]] = SIZE_CLASS_NAMES[-1]
    return labels


def holistic_only_rate_by_size(
    detections: Iterable[Detection],
    samples: Sequence[ImageSample],
    *,
    score_threshold: float = float("-inf"),
    iou_thresh: float = 0.5,
) -> dict[str, float | None]:
    """Per size class, the percentage of recalled instances whose matched
    detection is the holistic-only pattern.  Classes with nothing recalled
    report None rather than 0."""
    positives = [s for s in samples if not s.negative]
    objects: list[tuple[str, int, ObjectAnnotation]] = []
    for s in positives:
        for idx, obj in enumerate(s.objects):
            objects.append((s.image_id, idx, obj))
    labels = size_classes([obj.bbox.area for _, _, obj in objects])

    kept = [d for d in detections if d.score >= score_threshold]
    gts = gt_boxes_by_image(positives)
    # replay greedy AP matching, remembering which gt index each TP consumed
    taken: dict[str, dict[int, Detection]] = {}
    for det in _ranked(kept):
        boxes = gts.get(det.image_id, ())
        used = taken.setdefault(det.image_id, {})
        best_iou, best_idx = 0.0, None
        for idx, gt in enumerate(boxes):
            if idx in used:
                continue
            overlap = iou(det.box, gt)
            if overlap >= iou_thresh and overlap > best_iou:
                best_iou, best_idx = overlap, idx
        if best_idx is not None:
            used[best_idx] = det

    per_class: dict[str, list[bool]] = {name: [] for name in SIZE_CLASS_NAMES}
    for (image_id, idx, _), label in zip(objects, labels):
        det = taken.get(image_id, {}).get(idx)
        if det is None:
            continue
        per_class[label].append(det.config.pattern == 1)
    return {
        name: (100.0 * float(np.mean(flags)) if flags else None)
        for name, flags in per_class.items()
    }
