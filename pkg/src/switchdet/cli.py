"""Batch command-line surface: synth, train, detect, eval, inspect.

Exit status: 0 on success, 2 for argument errors, 3 for missing or
unreadable files, 4 for schema-invalid inputs, 1 for anything else.  Every
command that produces files writes a run manifest next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import multiprocessing
import os
import sys
from dataclasses import replace

from ._version import __version__
from . import dataio
from .dataio import DataFormatError, ImageSample, ModelBundle
from .inference import DetectConfig, PruneConfig, detect, prune_hypotheses
from .learning import TrainConfig, train
from .metrics import (
    EvalConfig,
    average_precision,
    gt_boxes_by_image,
    holistic_only_rate_by_size,
    pcp_pop,
    precision_recall,
)
from .model import GraphSpec
from .postprocess import Detection, fit_box_regressors, generate_box, part_nms
from .synthetic import SynthConfig, generate_dataset


def _coerce_config(data: dict, cls, path, *, tuple_keys=()):
    """Instantiate a config dataclass from a JSON object, rejecting unknown keys."""
    known = set(cls.__dataclass_fields__)
    unknown = set(data) - known
    if unknown:
        raise DataFormatError(path, None, f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(data)
    for key in tuple_keys:
        if key in kwargs and isinstance(kwargs[key], list):
            kwargs[key] = tuple(kwargs[key])
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise DataFormatError(path, None, f"invalid config: {exc}") from None


# --------------------------------------------------------------------------
# synth


def _cmd_synth(args) -> int:
    raw = dataio.load_json_config(args.config) if args.config else {}
    planted = raw.pop("planted_params", None)
    cfg = _coerce_config(
        raw,
        SynthConfig,
        args.config,
        tuple_keys=(
            "objects_per_image",
            "node_names",
            "canvas",
            "object_size_range",
            "distractor_size_range",
            "distractor_score_range",
        ),
    )
    if planted is not None:
        bundle = dataio.model_from_dict(planted, args.config or "<config>")
        cfg = replace(cfg, planted_params=bundle.params, node_names=bundle.spec.node_names)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)

    dataset = generate_dataset(cfg)
    os.makedirs(args.out, exist_ok=True)
    ann_path = os.path.join(args.out, "annotations.jsonl")
    hyp_path = os.path.join(args.out, "hypotheses.jsonl")
    truth_path = os.path.join(args.out, "truth.json")
    dataio.write_annotations(ann_path, dataset.samples)
    dataio.write_hypotheses(hyp_path, dataset.samples)
    dataio.atomic_write_text(truth_path, json.dumps(dataset.truth, indent=2) + "\n")
    dataio.write_manifest(
        args.out,
        "synth",
        config=args.config,
        inputs=[],
        outputs=[ann_path, hyp_path, truth_path],
        seed=cfg.seed,
    )
    print(
        f"synth: wrote {len(dataset.samples)} images "
        f"({cfg.images} positive, {cfg.negative_images} negative) to {args.out}"
    )
    return 0


# --------------------------------------------------------------------------
# train


def _cmd_train(args) -> int:
    raw = dataio.load_json_config(args.config) if args.config else {}
    node_names = raw.pop("node_names", None)
    holistic_name = raw.pop("holistic_name", "object")
    prune_raw = raw.pop("prune", None)
    cfg = _coerce_config(raw, TrainConfig, args.config)

    annotations = dataio.read_annotations(args.annotations)
    if node_names is not None:
        spec = GraphSpec(tuple(str(n) for n in node_names))
    else:
        spec = dataio.infer_spec(annotations, holistic_name=holistic_name)
    stores = dataio.read_hypotheses(args.hypotheses, spec.num_nodes)
    samples = dataio.attach_hypotheses(annotations, stores, spec.num_nodes)

    prune = None
    if prune_raw is not None:
        prune = _coerce_config(prune_raw, PruneConfig, args.config, tuple_keys=("unary_threshold",))

    result = train(samples, spec, cfg, prune=prune)
    regressors = fit_box_regressors(
        (lp.config, lp.gt_box, result.pruned[lp.image_id]) for lp in result.labeled
    )
    bundle = ModelBundle(
        spec=spec, params=result.params, prune=result.prune, regressors=regressors
    )
    dataio.save_model(args.out, bundle)
    log_path = os.path.splitext(args.out)[0] + "_log.jsonl"
    dataio.write_jsonl(log_path, result.rounds)
    dataio.write_manifest(
        args.out,
        "train",
        config=args.config,
        inputs=[args.annotations, args.hypotheses],
        outputs=[args.out, log_path],
        seed=None,
    )
    print(
        f"train: {len(result.labeled)} positives "
        f"({result.rejected_positives} rejected), {len(result.rounds)} rounds, "
        f"final objective {result.rounds[-1]['objective']:.6g} -> {args.out}"
    )
    return 0


# --------------------------------------------------------------------------
# detect


def _detect_one(payload):
    image_id, store, bundle, det_cfg = payload
    pruned = prune_hypotheses(store, bundle.prune)
    scored = detect(pruned, bundle.params, bundle.spec, det_cfg)
    kept = part_nms(scored)
    detections = []
    for sc in kept:
        box = generate_box(bundle.regressors, sc.config, pruned)
        node_boxes = {
            node: pruned.get(node, hyp_id).box
            for node, hyp_id in sc.config.assignment.items()
        }
        detections.append(
            Detection(
                image_id=image_id,
                config=sc.config,
                score=sc.score,
                box=box,
                node_boxes=node_boxes,
            )
        )
    return detections


def _cmd_detect(args) -> int:
    bundle = dataio.load_model(args.model)
    stores = dataio.read_hypotheses(args.hypotheses, bundle.spec.num_nodes)
    det_cfg = DetectConfig(
        score_threshold=args.score_threshold, max_raw_detections=args.max_detections
    )
    jobs = [
        (image_id, stores[image_id], bundle, det_cfg) for image_id in sorted(stores)
    ]
    if args.workers > 1:
        with multiprocessing.get_context("fork").Pool(args.workers) as pool:
            per_image = pool.map(_detect_one, jobs)
    else:
        per_image = [_detect_one(job) for job in jobs]
    detections = [d for batch in per_image for d in batch]
    detections.sort(key=lambda d: (d.image_id, -d.score) + d.config.sort_key())
    dataio.write_detections(args.out, detections)
    dataio.write_manifest(
        args.out,
        "detect",
        config=None,
        inputs=[args.model, args.hypotheses],
        outputs=[args.out],
        seed=None,
    )
    print(f"detect: {len(detections)} detections over {len(jobs)} images -> {args.out}")
    return 0


# --------------------------------------------------------------------------
# eval


def _cmd_eval(args) -> int:
    samples = dataio.read_annotations(args.annotations)
    detections = dataio.read_detections(args.detections)
    eval_cfg = EvalConfig(
        ap_iou=args.ap_iou,
        pcp_object_iou=args.pcp_object_iou,
        pcp_part_iou=args.pcp_part_iou,
    )

    gts = gt_boxes_by_image(samples)
    ap_all = average_precision(detections, gts, eval_cfg.ap_iou)
    classes = sorted({obj.class_name for s in samples for obj in s.objects})
    ap_by_class = {}
    for cls in classes:
        cls_gts = {
            s.image_id: [o.bbox for o in s.objects if o.class_name == cls] for s in samples
        }
        ap_by_class[cls] = average_precision(detections, cls_gts, eval_cfg.ap_iou)

    parts_summary = {}
    try:
        spec = dataio.infer_spec(samples)
    except ValueError:
        spec = None
    if spec is not None:
        parts = pcp_pop(detections, samples, spec, eval_cfg)
        parts_summary = {
            name: {"pop": m.pop, "pcp": m.pcp, "objects": m.num_objects}
            for name, m in parts.items()
        }

    size_table = holistic_only_rate_by_size(
        detections,
        samples,
        score_threshold=args.size_score_threshold,
        iou_thresh=eval_cfg.ap_iou,
    )

    scores, precision, recall = precision_recall(detections, gts, eval_cfg.ap_iou)
    csv_lines = ["score,precision,recall"]
    for s, p, r in zip(scores, precision, recall):
        csv_lines.append(f"{s!r},{p!r},{r!r}")

    summary = {
        "num_images": len(samples),
        "num_objects": sum(len(s.objects) for s in samples),
        "num_detections": len(detections),
        "average_precision": {"all": ap_all, **ap_by_class},
        "parts": parts_summary,
        "holistic_only_by_size": size_table,
        "config": {
            "ap_iou": eval_cfg.ap_iou,
            "pcp_object_iou": eval_cfg.pcp_object_iou,
            "pcp_part_iou": eval_cfg.pcp_part_iou,
            "size_score_threshold": args.size_score_threshold,
        },
    }
    os.makedirs(args.out, exist_ok=True)
    summary_path = os.path.join(args.out, "summary.json")
    csv_path = os.path.join(args.out, "pr_curve.csv")
    dataio.atomic_write_text(summary_path, json.dumps(summary, indent=2) + "\n")
    dataio.atomic_write_text(csv_path, "\n".join(csv_lines) + "\n")
    dataio.write_manifest(
        args.out,
        "eval",
        config=None,
        inputs=[args.detections, args.annotations],
        outputs=[summary_path, csv_path],
        seed=None,
    )
    print(f"eval: AP={ap_all:.4f} over {summary['num_objects']} objects -> {args.out}")
    return 0


# --------------------------------------------------------------------------
# inspect


def _inspect_model(data: dict) -> None:
    names = data.get("node_names", [])
    k = len(names)
    print(f"model file (v{data.get('version', '?')})")
    print(f"  nodes ({k}): {', '.join(names)}")
    print(f"  sigmoid slope: {data.get('sigmoid_slope')}")
    print(f"  unary weights: {data.get('unary_w')}")
    print(f"  pairwise edges: {len(data.get('pairwise_w', {}))}")
    biases = data.get("pattern_b", [])
    if biases:
        print(f"  pattern biases: {len(biases)} in [{min(biases):.4g}, {max(biases):.4g}]")
    prune = data.get("prune", {})
    print(f"  prune: {prune}")
    regs = data.get("box_regressors", {})
    for mask, reg in sorted(regs.items(), key=lambda kv: int(kv[0])):
        kind = "fallback" if reg.get("fallback") else "least-squares"
        print(f"  regressor mask {mask}: {kind}, {reg.get('trained_on')} samples")


def _cmd_inspect(args) -> int:
    with open(args.file) as f:
        text = f.read()
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = None
    if isinstance(data, dict):
        if data.get("format") == "switchdet-model":
            _inspect_model(data)
        else:
            print(json.dumps(data, indent=2))
        return 0
    # not a single JSON document: treat as a JSONL record stream
    records = list(dataio.read_jsonl(args.file))
    print(f"record stream with {len(records)} records")
    if records:
        keys = sorted(records[0][1].keys()) if isinstance(records[0][1], dict) else []
        print(f"  first record fields: {', '.join(keys)}")
        for line_no, rec in records[:3]:
            print(f"  line {line_no}: {json.dumps(rec)}")
    return 0


# --------------------------------------------------------------------------
# entry points


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="switchdet",
        description="Part-based detection with detectability switches",
    )
    parser.add_argument("--version", action="version", version=f"switchdet {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", help="JSON generator config")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("train", help="train a model from annotations and hypotheses")
    p.add_argument("--annotations", required=True)
    p.add_argument("--hypotheses", required=True)
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--out", required=True, help="output model file (JSON)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("detect", help="run detection over a hypotheses file")
    p.add_argument("--model", required=True)
    p.add_argument("--hypotheses", required=True)
    p.add_argument("--out", required=True, help="output detections file (JSONL)")
    p.add_argument("--score-threshold", type=float, default=0.0)
    p.add_argument("--max-detections", type=int, default=100, help="per-image cap before NMS")
    p.add_argument("--workers", type=int, default=1, help="parallel workers over images")
    p.set_defaults(func=_cmd_detect)

    p = sub.add_parser("eval", help="score detections against annotations")
    p.add_argument("--detections", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--ap-iou", type=float, default=0.5)
    p.add_argument("--pcp-object-iou", type=float, default=0.5)
    p.add_argument("--pcp-part-iou", type=float, default=0.4)
    p.add_argument(
        "--size-score-threshold",
        type=float,
        default=float("-inf"),
        help="recall threshold for the size-class diagnostic",
    )
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("inspect", help="human-readable dump of a model or record file")
    p.add_argument("file")
    p.set_defaults(func=_cmd_inspect)

    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else 0
    try:
        return args.func(args)
    except DataFormatError as exc:
        print(f"switchdet: schema error: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        name = getattr(exc, "filename", None)
        detail = f"{exc.strerror}: {name}" if name else str(exc)
        print(f"switchdet: i/o error: {detail}", file=sys.stderr)
        return 3
    except Exception as exc:  # anything else: report, fail, leave no partial output
        print(f"switchdet: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
