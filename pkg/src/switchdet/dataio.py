"""Stable file formats: JSONL record streams, the model file, run manifests.

Record streams are one JSON object per line.  A corrupt line raises
:class:`DataFormatError` naming the file and line number.  Writers go
through a temp file and an atomic rename so failed runs never leave
partial output behind.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Mapping

import numpy as np

from ._version import __version__
from .geometry import Box
from .inference import PruneConfig
from .model import (
    Configuration,
    GraphSpec,
    Hypothesis,
    HypothesisStore,
    ModelParams,
    pattern_bits,
)
from .postprocess import BoxRegressor, Detection


class DataFormatError(ValueError):
    """A file does not match its schema."""

    def __init__(self, path, line: int | None, message: str):
        self.path = str(path)
        self.line = line
        where = f"{self.path}:{line}" if line is not None else self.path
        super().__init__(f"{where}: {message}")


@dataclass(frozen=True)
class ObjectAnnotation:
    """One annotated object: class, holistic box, and per-part boxes (or None)."""

    class_name: str
    bbox: Box
    parts: Mapping[str, Box | None]

    def __post_init__(self):
        object.__setattr__(self, "parts", dict(self.parts))

    def part_names(self) -> tuple[str, ...]:
        return tuple(self.parts)


@dataclass(frozen=True)
class ImageSample:
    """Annotations plus (optionally) the hypothesis set of one image."""

    image_id: str
    negative: bool
    objects: tuple[ObjectAnnotation, ...]
    hypotheses: HypothesisStore | None = None

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        if self.negative and self.objects:
            raise ValueError(f"negative image {self.image_id} must not carry objects")


@dataclass(frozen=True)
class ModelBundle:
    """Everything a model file holds: graph, parameters, pruning, regressors."""

    spec: GraphSpec
    params: ModelParams
    prune: PruneConfig
    regressors: dict[int, BoxRegressor]


# --------------------------------------------------------------------------
# low-level helpers


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def write_jsonl(path, records: Iterable[Mapping[str, Any]]) -> None:
    lines = [json.dumps(rec) for rec in records]
    atomic_write_text(path, "".join(line + "\n" for line in lines))


def read_jsonl(path) -> Iterator[tuple[int, Any]]:
    with open(path) as f:
        for line_no, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped:
                raise DataFormatError(path, line_no, "blank line in record stream")
            try:
                yield line_no, json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise DataFormatError(path, line_no, f"invalid JSON: {exc.msg}") from None


def _require(record: Mapping, key: str, path, line: int | None):
    if key not in record:
        raise DataFormatError(path, line, f"missing required field {key!r}")
    return record[key]


def _parse_box(value, path, line) -> Box:
    if not isinstance(value, (list, tuple)) or len(value) != 4:
        raise DataFormatError(path, line, f"a box must be a 4-element array, got {value!r}")
    try:
        return Box.from_sequence(float(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise DataFormatError(path, line, f"invalid box {value!r}: {exc}") from None


# --------------------------------------------------------------------------
# annotations


def annotation_record(sample: ImageSample) -> dict:
    return {
        "image_id": sample.image_id,
        "negative": sample.negative,
        "objects": [
            {
                "class": obj.class_name,
                "bbox": obj.bbox.to_list(),
                "parts": {
                    name: (box.to_list() if box is not None else None)
                    for name, box in obj.parts.items()
                },
            }
            for obj in sample.objects
        ],
    }


def write_annotations(path, samples: Iterable[ImageSample]) -> None:
    write_jsonl(path, (annotation_record(s) for s in samples))


def read_annotations(path) -> list[ImageSample]:
    samples: list[ImageSample] = []
    seen: set[str] = set()
    for line_no, rec in read_jsonl(path):
        if not isinstance(rec, dict):
            raise DataFormatError(path, line_no, "annotation record must be an object")
        image_id = str(_require(rec, "image_id", path, line_no))
        if image_id in seen:
            raise DataFormatError(path, line_no, f"duplicate image_id {image_id!r}")
        seen.add(image_id)
        negative = bool(_require(rec, "negative", path, line_no))
        objects = []
        raw_objects = _require(rec, "objects", path, line_no)
        if not isinstance(raw_objects, list):
            raise DataFormatError(path, line_no, "'objects' must be an array")
        for raw in raw_objects:
            bbox = _parse_box(_require(raw, "bbox", path, line_no), path, line_no)
            raw_parts = _require(raw, "parts", path, line_no)
            if not isinstance(raw_parts, dict):
                raise DataFormatError(path, line_no, "'parts' must be an object")
            parts = {
                str(name): (None if box is None else _parse_box(box, path, line_no))
                for name, box in raw_parts.items()
            }
            objects.append(
                ObjectAnnotation(
                    class_name=str(_require(raw, "class", path, line_no)),
                    bbox=bbox,
                    parts=parts,
                )
            )
        try:
            samples.append(ImageSample(image_id, negative, tuple(objects)))
        except ValueError as exc:
            raise DataFormatError(path, line_no, str(exc)) from None
    return samples


def infer_spec(samples: Iterable[ImageSample], holistic_name: str = "object") -> GraphSpec:
    """Graph from annotation part names: holistic node plus parts in the
    (consistent) key order of the annotations."""
    part_names: tuple[str, ...] | None = None
    for sample in samples:
        for obj in sample.objects:
            names = obj.part_names()
            if part_names is None:
                part_names = names
            elif names != part_names:
                raise ValueError(
                    f"inconsistent part names across objects: {names} vs {part_names}"
                )
    if part_names is None:
        raise ValueError("cannot infer a graph from annotations without objects")
    return GraphSpec((holistic_name,) + part_names)


# --------------------------------------------------------------------------
# hypotheses


def hypothesis_records(sample: ImageSample) -> Iterator[dict]:
    if sample.hypotheses is None:
        return
    for hyp in sample.hypotheses:
        yield {
            "image_id": sample.image_id,
            "node": hyp.node,
            "id": hyp.id,
            "bbox": hyp.box.to_list(),
            "score": hyp.raw_score,
        }


def write_hypotheses(path, samples: Iterable[ImageSample]) -> None:
    def gen():
        for s in samples:
            yield from hypothesis_records(s)

    write_jsonl(path, gen())


def read_hypotheses(path, num_nodes: int) -> dict[str, HypothesisStore]:
    stores: dict[str, HypothesisStore] = {}
    for line_no, rec in read_jsonl(path):
        if not isinstance(rec, dict):
            raise DataFormatError(path, line_no, "hypothesis record must be an object")
        image_id = str(_require(rec, "image_id", path, line_no))
        node = _require(rec, "node", path, line_no)
        if not isinstance(node, int) or not (0 <= node < num_nodes):
            raise DataFormatError(
                path, line_no, f"node must be an integer in [0, {num_nodes}), got {node!r}"
            )
        hyp_id = _require(rec, "id", path, line_no)
        if not isinstance(hyp_id, int):
            raise DataFormatError(path, line_no, f"id must be an integer, got {hyp_id!r}")
        box = _parse_box(_require(rec, "bbox", path, line_no), path, line_no)
        score = _require(rec, "score", path, line_no)
        if not isinstance(score, (int, float)):
            raise DataFormatError(path, line_no, f"score must be a number, got {score!r}")
        store = stores.setdefault(image_id, HypothesisStore(num_nodes))
        try:
            store.add(Hypothesis(id=hyp_id, node=node, box=box, raw_score=float(score)))
        except ValueError as exc:
            raise DataFormatError(path, line_no, str(exc)) from None
    return stores


def attach_hypotheses(
    samples: Iterable[ImageSample], stores: Mapping[str, HypothesisStore], num_nodes: int
) -> list[ImageSample]:
    out = []
    for s in samples:
        store = stores.get(s.image_id, HypothesisStore(num_nodes))
        out.append(ImageSample(s.image_id, s.negative, s.objects, store))
    return out


# --------------------------------------------------------------------------
# detections


def detection_record(det: Detection) -> dict:
    return {
        "image_id": det.image_id,
        "pattern_mask": det.config.pattern,
        "assignment": {str(node): hyp_id for node, hyp_id in sorted(det.config.assignment.items())},
        "score": det.score,
        "bbox": det.box.to_list(),
        "node_boxes": {str(node): box.to_list() for node, box in sorted(det.node_boxes.items())},
    }


def write_detections(path, detections: Iterable[Detection]) -> None:
    write_jsonl(path, (detection_record(d) for d in detections))


def read_detections(path) -> list[Detection]:
    out: list[Detection] = []
    for line_no, rec in read_jsonl(path):
        if not isinstance(rec, dict):
            raise DataFormatError(path, line_no, "detection record must be an object")
        image_id = str(_require(rec, "image_id", path, line_no))
        mask = _require(rec, "pattern_mask", path, line_no)
        if not isinstance(mask, int) or mask < 1:
            raise DataFormatError(path, line_no, f"pattern_mask must be a positive int, got {mask!r}")
        raw_assign = _require(rec, "assignment", path, line_no)
        try:
            assignment = {int(k): int(v) for k, v in raw_assign.items()}
        except (AttributeError, TypeError, ValueError):
            raise DataFormatError(path, line_no, f"invalid assignment {raw_assign!r}") from None
        if sorted(assignment) != pattern_bits(mask):
            raise DataFormatError(
                path, line_no, f"assignment keys {sorted(assignment)} do not match mask {mask:#b}"
            )
        score = _require(rec, "score", path, line_no)
        box = _parse_box(_require(rec, "bbox", path, line_no), path, line_no)
        raw_nb = _require(rec, "node_boxes", path, line_no)
        try:
            node_boxes = {int(k): _parse_box(v, path, line_no) for k, v in raw_nb.items()}
        except (AttributeError, TypeError):
            raise DataFormatError(path, line_no, f"invalid node_boxes {raw_nb!r}") from None
        if sorted(node_boxes) != pattern_bits(mask):
            raise DataFormatError(
                path, line_no, f"node_boxes keys {sorted(node_boxes)} do not match mask {mask:#b}"
            )
        out.append(
            Detection(
                image_id=image_id,
                config=Configuration(mask, assignment),
                score=float(score),
                box=box,
                node_boxes=node_boxes,
            )
        )
    return out


# --------------------------------------------------------------------------
# model file


def _threshold_to_json(value):
    if isinstance(value, tuple):
        return [None if t == float("-inf") else t for t in value]
    return None if value == float("-inf") else value


def _threshold_from_json(value):
    if isinstance(value, list):
        return tuple(float("-inf") if t is None else float(t) for t in value)
    return float("-inf") if value is None else float(value)


def model_to_dict(bundle: ModelBundle) -> dict:
    spec, params = bundle.spec, bundle.params
    return {
        "format": "switchdet-model",
        "version": __version__,
        "node_names": list(spec.node_names),
        "sigmoid_slope": params.sigmoid_slope,
        "unary_w": params.unary_w.tolist(),
        "pairwise_w": {
            f"{i}-{j}": params.pairwise_w[e].tolist() for e, (i, j) in enumerate(spec.edges)
        },
        "pattern_b": params.pattern_b.tolist(),
        "prune": {
            "unary_threshold": _threshold_to_json(bundle.prune.unary_threshold),
            "nms_iou": bundle.prune.nms_iou,
            "max_hypotheses": bundle.prune.max_hypotheses,
        },
        "box_regressors": {
            str(mask): {
                "pattern": reg.pattern,
                "weights": None if reg.weights is None else reg.weights.tolist(),
                "trained_on": reg.trained_on,
                "fallback": reg.fallback,
            }
            for mask, reg in sorted(bundle.regressors.items())
        },
    }


def model_from_dict(data: Mapping, path="<model>") -> ModelBundle:
    def req(key):
        return _require(data, key, path, None)

    spec = GraphSpec(tuple(str(n) for n in req("node_names")))
    pairwise = np.zeros((spec.num_edges, 10))
    raw_pw = req("pairwise_w")
    for e, (i, j) in enumerate(spec.edges):
        key = f"{i}-{j}"
        if key not in raw_pw:
            raise DataFormatError(path, None, f"missing pairwise weights for edge {key}")
        pairwise[e] = np.asarray(raw_pw[key], dtype=float)
    try:
        params = ModelParams(
            unary_w=np.asarray(req("unary_w"), dtype=float),
            pairwise_w=pairwise,
            pattern_b=np.asarray(req("pattern_b"), dtype=float),
            sigmoid_slope=float(req("sigmoid_slope")),
        )
        params.validate_for(spec)
        raw_prune = req("prune")
        prune = PruneConfig(
            unary_threshold=_threshold_from_json(raw_prune["unary_threshold"]),
            nms_iou=float(raw_prune["nms_iou"]),
            max_hypotheses=int(raw_prune["max_hypotheses"]),
        )
        regressors = {}
        for mask_str, raw in data.get("box_regressors", {}).items():
            mask = int(mask_str)
            regressors[mask] = BoxRegressor(
                pattern=int(raw["pattern"]),
                weights=None if raw["weights"] is None else np.asarray(raw["weights"], dtype=float),
                trained_on=int(raw["trained_on"]),
                fallback=bool(raw["fallback"]),
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataFormatError(path, None, f"invalid model file: {exc}") from None
    return ModelBundle(spec=spec, params=params, prune=prune, regressors=regressors)


def save_model(path, bundle: ModelBundle) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(bundle), indent=2) + "\n")


def load_model(path) -> ModelBundle:
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise DataFormatError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise DataFormatError(path, None, "model file must hold a JSON object")
    return model_from_dict(data, path)


def load_json_config(path) -> dict:
    with open(path) as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise DataFormatError(path, exc.lineno, f"invalid JSON: {exc.msg}") from None
    if not isinstance(data, dict):
        raise DataFormatError(path, None, "config file must hold a JSON object")
    return data


# --------------------------------------------------------------------------
# run manifests


def manifest_path_for(output) -> str:
    output = os.fspath(output)
    if os.path.isdir(output):
        return os.path.join(output, "manifest.json")
    return output + ".manifest.json"


def write_manifest(
    output,
    command: str,
    *,
    config: str | None,
    inputs: list[str],
    outputs: list[str],
    seed: int | None,
) -> str:
    manifest = {
        "command": command,
        "config": config,
        "inputs": inputs,
        "outputs": outputs,
        "seed": seed,
        "version": __version__,
    }
    target = manifest_path_for(output)
    atomic_write_text(target, json.dumps(manifest, indent=2) + "\n")
    return target
