"""Seeded scene generator and the exhaustive scoring oracle.

Stands in for a real detection benchmark at desk scale.  Objects are planted
with a canonical vertical part layout, perturbed by deformation noise; each
detectable node spawns one jittered true-positive hypothesis whose raw score
decreases with the jitter magnitude, plus per-node background distractors.
Three failure regimes are expressible: occluded parts lose both annotation
and hypotheses, low-resolution objects (area below a threshold) keep only
their holistic hypothesis, and a configurable fraction of objects lose the
holistic hypothesis itself (deformation making the whole object hard to
detect).  Negative images contain distractors only.

Randomness comes from a single ``numpy.random.default_rng`` (PCG64) stream,
so a config with a fixed seed regenerates the dataset exactly.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .dataio import ImageSample, ModelBundle, ObjectAnnotation, model_to_dict
from .geometry import Box
from .inference import PruneConfig, ScoredConfiguration
from .model import (
    Configuration,
    GraphSpec,
    Hypothesis,
    HypothesisStore,
    ModelParams,
    pattern_bits,
    score_configuration,
)

BRUTE_FORCE_GUARD = 10_000_000

DEFAULT_NODE_NAMES = ("object", "head", "torso", "legs")


def default_spec() -> GraphSpec:
    return GraphSpec(DEFAULT_NODE_NAMES)


def default_planted_params(spec: GraphSpec, sigmoid_slope: float = 1.5) -> ModelParams:
    """A fixed, sensible scoring model for planted configurations: positive
    unary weights, mild quadratic deformation penalties, small per-size bias."""
    pairwise = np.tile(
        np.array([0.0, 0.0, -1.0, -1.0, 0.0, 0.0, 0.0, -0.05, -0.05, -0.05]),
        (spec.num_edges, 1),
    )
    pattern_b = np.array(
        [0.1 * bin(mask).count("1") for mask in range(1, spec.num_patterns + 1)]
    )
    return ModelParams(
        unary_w=np.full(spec.num_nodes, 2.0),
        pairwise_w=pairwise,
        pattern_b=pattern_b,
        sigmoid_slope=sigmoid_slope,
    )


def canonical_part_layout(num_parts: int) -> list[Box]:
    """Part boxes in unit object coordinates: vertical bands top to bottom
    (head above torso above legs for the default 3-part graph), slightly
    overlapped."""
    if num_parts < 0:
        raise ValueError("num_parts must be non-negative")
    boxes = []
    for k in range(num_parts):
        y1 = max(0.0, k / num_parts - 0.08)
        y2 = min(1.0, (k + 1) / num_parts + 0.08)
        boxes.append(Box(0.2, y1, 0.8, y2))
    return boxes


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    images: int = 40
    negative_images: int = 20
    objects_per_image: tuple[int, int] = (1, 2)
    part_offset_sigma: float = 0.05
    part_scale_sigma: float = 0.05
    occlusion_rate: float = 0.1
    holistic_miss_rate: float = 0.0
    lowres_area_threshold: float = 0.0
    score_noise_sigma: float = 0.1
    distractors_per_node: int = 5
    planted_params: ModelParams | None = None
    node_names: tuple[str, ...] = DEFAULT_NODE_NAMES
    class_name: str = "animal"
    canvas: tuple[float, float] = (640.0, 480.0)
    object_size_range: tuple[float, float] = (40.0, 320.0)
    distractor_size_range: tuple[float, float] = (15.0, 300.0)
    distractor_score_range: tuple[float, float] = (-3.0, 0.5)
    base_score: float = 2.0
    score_jitter_gain: float = 4.0

    def __post_init__(self):
        object.__setattr__(self, "node_names", tuple(self.node_names))
        object.__setattr__(self, "objects_per_image", tuple(self.objects_per_image))
        if self.images < 0 or self.negative_images < 0:
            raise ValueError("image counts must be non-negative")
        for name in ("part_offset_sigma", "part_scale_sigma", "score_noise_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("occlusion_rate", "holistic_miss_rate"):
            rate = getattr(self, name)
            if not (0.0 <= rate <= 1.0):
                raise ValueError(f"{name} must be in [0, 1], got {rate}")
        lo, hi = self.objects_per_image
        if not (1 <= lo <= hi):
            raise ValueError(f"bad objects_per_image bounds {self.objects_per_image}")
        if self.distractors_per_node < 0:
            raise ValueError("distractors_per_node must be non-negative")

    def spec(self) -> GraphSpec:
        return GraphSpec(self.node_names)


@dataclass
class SyntheticDataset:
    spec: GraphSpec
    samples: list[ImageSample]
    truth: dict
    config: SynthConfig


def _jittered(box: Box, rng, offset_sigma: float, scale_sigma: float) -> tuple[Box, float]:
    """Perturb a box; returns the new box and the jitter magnitude that drove it."""
    dx = rng.normal(0.0, offset_sigma) if offset_sigma > 0 else 0.0
    dy = rng.normal(0.0, offset_sigma) if offset_sigma > 0 else 0.0
    fx = rng.normal(0.0, scale_sigma) if scale_sigma > 0 else 0.0
    fy = rng.normal(0.0, scale_sigma) if scale_sigma > 0 else 0.0
    cx, cy = box.center
    cx += dx * box.width
    cy += dy * box.height
    half_w = 0.5 * box.width * math.exp(fx)
    half_h = 0.5 * box.height * math.exp(fy)
    out = Box(cx - half_w, cy - half_h, cx + half_w, cy + half_h)
    return out, math.hypot(dx, dy) + abs(fx) + abs(fy)


def generate_dataset(cfg: SynthConfig) -> SyntheticDataset:
    """Deterministic dataset (annotations, hypotheses, planted truth) for this
    config.  The same config always yields byte-identical records."""
    rng = np.random.default_rng(cfg.seed)
    spec = cfg.spec()
    k = spec.num_nodes
    params = cfg.planted_params if cfg.planted_params is not None else default_planted_params(spec)
    params.validate_for(spec)
    layout = canonical_part_layout(k - 1)
    cw, ch = cfg.canvas
    lo_w, hi_w = cfg.object_size_range

    samples: list[ImageSample] = []
    truth_objects: list[dict] = []

    for img_no in range(cfg.images + cfg.negative_images):
        negative = img_no >= cfg.images
        image_id = f"img_{img_no:05d}"
        store = HypothesisStore(k)
        next_id = [0] * k
        objects: list[ObjectAnnotation] = []

        if not negative:
            lo, hi = cfg.objects_per_image
            n_objects = int(rng.integers(lo, hi + 1))
            for obj_idx in range(n_objects):
                width = math.exp(rng.uniform(math.log(lo_w), math.log(hi_w)))
                height = width * rng.uniform(0.75, 1.5)
                width = min(width, cw)
                height = min(height, ch)
                x1 = rng.uniform(0.0, cw - width)
                y1 = rng.uniform(0.0, ch - height)
                obox = Box(x1, y1, x1 + width, y1 + height)
                lowres = obox.area < cfg.lowres_area_threshold

                node_gt: list[Box | None] = [obox] + [None] * (k - 1)
                parts: dict[str, Box | None] = {}
                for node in range(1, k):
                    unit = layout[node - 1]
                    placed = Box(
                        obox.x1 + unit.x1 * width,
                        obox.y1 + unit.y1 * height,
                        obox.x1 + unit.x2 * width,
                        obox.y1 + unit.y2 * height,
                    )
                    deformed, _ = _jittered(
                        placed, rng, cfg.part_offset_sigma, cfg.part_scale_sigma
                    )
                    occluded = rng.random() < cfg.occlusion_rate
                    node_gt[node] = None if occluded else deformed
                    parts[spec.node_names[node]] = node_gt[node]

                holistic_missed = (not lowres) and rng.random() < cfg.holistic_miss_rate
                planted_mask = 0
                for node in range(k):
                    if node_gt[node] is None:
                        continue
                    if node == 0 and holistic_missed:
                        continue
                    if node > 0 and lowres:
                        continue
                    planted_mask |= 1 << node

                assignment: dict[int, int] = {}
                for node in pattern_bits(planted_mask, k):
                    hyp_box, jitter = _jittered(
                        node_gt[node], rng, cfg.part_offset_sigma, cfg.part_scale_sigma
                    )
                    raw = (
                        cfg.base_score
                        - cfg.score_jitter_gain * jitter
                        + (rng.normal(0.0, cfg.score_noise_sigma) if cfg.score_noise_sigma > 0 else 0.0)
                    )
                    hyp = Hypothesis(id=next_id[node], node=node, box=hyp_box, raw_score=raw)
                    next_id[node] += 1
                    store.add(hyp)
                    assignment[node] = hyp.id

                objects.append(
                    ObjectAnnotation(class_name=cfg.class_name, bbox=obox, parts=parts)
                )
                true_score = None
                if planted_mask:
                    true_score = score_configuration(
                        params, spec, Configuration(planted_mask, assignment), store
                    )
                truth_objects.append(
                    {
                        "image_id": image_id,
                        "object_index": obj_idx,
                        "planted_mask": planted_mask,
                        "true_score": true_score,
                    }
                )

        d_lo, d_hi = cfg.distractor_size_range
        s_lo, s_hi = cfg.distractor_score_range
        for node in range(k):
            for _ in range(cfg.distractors_per_node):
                width = min(math.exp(rng.uniform(math.log(d_lo), math.log(d_hi))), cw)
                height = min(math.exp(rng.uniform(math.log(d_lo), math.log(d_hi))), ch)
                x1 = rng.uniform(0.0, cw - width)
                y1 = rng.uniform(0.0, ch - height)
                raw = rng.uniform(s_lo, s_hi)
                store.add(
                    Hypothesis(
                        id=next_id[node],
                        node=node,
                        box=Box(x1, y1, x1 + width, y1 + height),
                        raw_score=raw,
                    )
                )
                next_id[node] += 1

        samples.append(ImageSample(image_id, negative, tuple(objects), store))

    truth = {
        "generator": "numpy default_rng (PCG64)",
        "seed": cfg.seed,
        "node_names": list(spec.node_names),
        "planted_params": model_to_dict(
            ModelBundle(spec=spec, params=params, prune=PruneConfig(), regressors={})
        ),
        "objects": truth_objects,
    }
    return SyntheticDataset(spec=spec, samples=samples, truth=truth, config=cfg)


def brute_force_best(
    store: HypothesisStore,
    params: ModelParams,
    spec: GraphSpec,
) -> ScoredConfiguration | None:
    """Naive maximum over every pattern and assignment, scoring each
    configuration from scratch.  The independent oracle for ``detect``;
    refuses search spaces above ``BRUTE_FORCE_GUARD``."""
    params.validate_for(spec)
    k = spec.num_nodes
    counts = store.counts()
    total = 1
    for c in counts:
        total *= c + 1
    total -= 1
    if total > BRUTE_FORCE_GUARD:
        raise ValueError(f"search space of {total} configurations exceeds the guard")

    best: ScoredConfiguration | None = None
    best_key = None
    for mask in range(1, 1 << k):
        on = pattern_bits(mask, k)
        if any(counts[i] == 0 for i in on):
            continue
        for combo in itertools.product(*(store.node(i) for i in on)):
            cfg = Configuration(mask, {i: h.id for i, h in zip(on, combo)})
            score = score_configuration(params, spec, cfg, store)
            key = cfg.sort_key()
            if (
                best is None
                or score > best.score
                or (score == best.score and key < best_key)
            ):
                best = ScoredConfiguration(config=cfg, score=score)
                best_key = key
    return best
