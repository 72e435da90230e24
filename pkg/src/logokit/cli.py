"""Command-line pipeline: consolidate, train, eval-retrieval, eval-detection.

Settings resolve in three layers: dataclass defaults, then a flat
key=value --config file, then explicit command-line flags. Every
successful run writes a manifest JSON recording the resolved settings,
so a run can be reproduced bit-exactly from its manifest.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

import logokit
from logokit import detection, fileio, retrieval, trainer
from logokit.consolidation import ConsolidationConfig, consolidate_image, filter_no_logo
from logokit.losses import LossConfig, NegativeAggregation
from logokit.trainer import Architecture, TrainConfig


def _parse_bool(value: str) -> bool:
    lowered = value.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ValueError(f"expected a boolean, got {value!r}")


# config-file key -> converter, per subcommand
_CONSOLIDATE_KEYS = {
    "eps": float,
    "min_samples": int,
    "whole_image_iou": float,
    "no_logo_vote_threshold": int,
    "min_cluster_support": int,
}
_TRAIN_KEYS = {
    "learning_rate": float,
    "weight_decay": float,
    "lr_decay_factor": float,
    "lr_decay_every": int,
    "batch_size": int,
    "epochs": int,
    "seed": int,
    "beta1": float,
    "beta2": float,
    "adam_epsilon": float,
    "loss": str,
    "proxy_norm": float,
    "arch": str,
    "hidden": int,
    "embedding_dim": int,
    "project_samples": _parse_bool,
    "project_proxies": _parse_bool,
    "margin": float,
    "negative_aggregation": str,
    "margin_beta": float,
    "nca_include_positive": _parse_bool,
}


def _load_config(path: str | None, known: dict) -> dict:
    if path is None:
        return {}
    raw = fileio.read_kv_config(path)
    resolved = {}
    for key, value in raw.items():
        if key not in known:
            raise ValueError(f"unknown config key {key!r} in {path}")
        resolved[key] = known[key](value)
    return resolved


def _merge(defaults: dict, config: dict, flags: dict) -> dict:
    """Laying flags over config over defaults; None flags do not override."""
    merged = dict(defaults)
    merged.update(config)
    merged.update({k: v for k, v in flags.items() if v is not None})
    return merged


def _write_manifest(
    out_dir: Path,
    subcommand: str,
    settings: dict,
    inputs: list[str],
    outputs: list[str],
    seed: int | None,
    started: float,
) -> None:
    fileio.write_manifest(
        out_dir / "manifest.json",
        {
            "subcommand": subcommand,
            "settings": settings,
            "inputs": inputs,
            "outputs": outputs,
            "seed": seed,
            "tool_version": logokit.__version__,
            "duration_seconds": time.time() - started,
        },
    )


def cmd_consolidate(args: argparse.Namespace) -> int:
    started = time.time()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    config = _load_config(args.config, _CONSOLIDATE_KEYS)
    flags = {
        "eps": args.eps,
        "min_samples": args.min_samples,
        "whole_image_iou": args.whole_image_iou,
        "no_logo_vote_threshold": args.no_logo_vote_threshold,
        "min_cluster_support": args.min_cluster_support,
    }
    defaults = {k: getattr(ConsolidationConfig(), k) for k in _CONSOLIDATE_KEYS}
    settings = _merge(defaults, config, flags)
    cfg = ConsolidationConfig(**settings)

    records, soft_errors = fileio.read_image_records(args.input, args.error_budget)
    for err in soft_errors:
        print(f"warning: skipped malformed line: {err}", file=sys.stderr)

    kept, dropped = filter_no_logo(records, cfg.no_logo_vote_threshold)
    boxes = []
    removed = 0
    for rec in kept:
        out = consolidate_image(rec, cfg)
        removed += _candidate_clusters(rec, cfg) - len(out)
        boxes.extend(out)

    out_path = out_dir / "consensus.jsonl"
    fileio.write_consensus_boxes(out_path, boxes)
    _write_manifest(
        out_dir,
        "consolidate",
        settings | {"error_budget": args.error_budget},
        [str(args.input)],
        [str(out_path)],
        args.seed,
        started,
    )
    print(
        f"images kept={len(kept)} dropped={len(dropped)} "
        f"boxes written={len(boxes)} removed={removed}"
    )
    return 0


def _candidate_clusters(rec, cfg) -> int:
    """Clusters formed for an image before support and whole-image pruning."""
    from logokit.consolidation import dbscan
    from logokit.geometry import pairwise_distances

    boxes = rec.logo_boxes()
    if not boxes:
        return 0
    labels = dbscan(pairwise_distances(boxes), cfg.eps, cfg.min_samples)
    return max(labels, default=-1) + 1


def cmd_train(args: argparse.Namespace) -> int:
    started = time.time()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    config = _load_config(args.config, _TRAIN_KEYS)
    flags = {
        "loss": args.loss,
        "epochs": args.epochs,
        "learning_rate": args.learning_rate,
        "batch_size": args.batch_size,
        "embedding_dim": args.embedding_dim,
        "arch": args.arch,
        "hidden": args.hidden,
        "seed": args.seed,
    }
    base = TrainConfig()
    base_lc = LossConfig()
    defaults = {
        "learning_rate": base.learning_rate,
        "weight_decay": base.weight_decay,
        "lr_decay_factor": base.lr_decay_factor,
        "lr_decay_every": base.lr_decay_every,
        "batch_size": base.batch_size,
        "epochs": base.epochs,
        "seed": base.seed,
        "beta1": base.beta1,
        "beta2": base.beta2,
        "adam_epsilon": base.adam_epsilon,
        "loss": base.loss.value,
        "proxy_norm": base.proxy_norm,
        "arch": base.arch.value,
        "hidden": base.hidden,
        "embedding_dim": base.embedding_dim,
        "project_samples": base.project_samples,
        "project_proxies": base.project_proxies,
        "margin": base_lc.margin,
        "negative_aggregation": base_lc.negative_aggregation.value,
        "margin_beta": base_lc.margin_beta,
        "nca_include_positive": base_lc.nca_include_positive,
    }
    settings = _merge(defaults, config, flags)

    cfg = TrainConfig(
        learning_rate=settings["learning_rate"],
        weight_decay=settings["weight_decay"],
        lr_decay_factor=settings["lr_decay_factor"],
        lr_decay_every=settings["lr_decay_every"],
        batch_size=settings["batch_size"],
        epochs=settings["epochs"],
        seed=settings["seed"],
        beta1=settings["beta1"],
        beta2=settings["beta2"],
        adam_epsilon=settings["adam_epsilon"],
        loss=trainer.loss_kind_from_string(settings["loss"]),
        loss_config=LossConfig(
            margin=settings["margin"],
            negative_aggregation=NegativeAggregation(settings["negative_aggregation"]),
            margin_beta=settings["margin_beta"],
            nca_include_positive=settings["nca_include_positive"],
        ),
        proxy_norm=settings["proxy_norm"],
        arch=Architecture(settings["arch"]),
        hidden=settings["hidden"],
        embedding_dim=settings["embedding_dim"],
        project_samples=settings["project_samples"],
        project_proxies=settings["project_proxies"],
    )

    data, soft_errors = fileio.read_feature_set(args.features, args.error_budget)
    for err in soft_errors:
        print(f"warning: skipped malformed line: {err}", file=sys.stderr)

    params, proxies, history = trainer.fit(data, cfg)

    model_path = out_dir / "model.json"
    loss_path = out_dir / "loss_history.csv"
    fileio.save_model(model_path, params, proxies)
    fileio.write_csv(
        loss_path, ["epoch", "mean_loss"], [(e, l) for e, l in enumerate(history)]
    )
    _write_manifest(
        out_dir,
        "train",
        settings | {"error_budget": args.error_budget},
        [str(args.features)],
        [str(model_path), str(loss_path)],
        cfg.seed,
        started,
    )
    final = history[-1] if history else float("nan")
    print(f"trained {cfg.loss.value} for {cfg.epochs} epochs, final mean loss {final:.6f}")
    return 0


def cmd_eval_retrieval(args: argparse.Namespace) -> int:
    started = time.time()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    params, proxies = fileio.load_model(args.model)
    anchors, _ = fileio.read_feature_set(args.anchors, args.error_budget)
    queries, _ = fileio.read_feature_set(args.queries, args.error_budget)
    norm = None if args.raw_embeddings else proxies.norm

    def entries(data):
        embs = trainer.embed(params, data.features, norm)
        sources = data.source_ids or [f"row_{i}" for i in range(len(data))]
        return [(embs[i], data.labels[i], sources[i]) for i in range(len(data))]

    index = retrieval.build_index(entries(anchors))
    query_entries = entries(queries)

    recall1 = retrieval.top1_recall(index, [(e, lab) for e, lab, _ in query_entries])
    predictions = []
    for emb, true_label, _ in query_entries:
        predicted, score = retrieval.classify_topk(index, emb, args.k)
        predictions.append((score, predicted == true_label))
    curve = retrieval.precision_recall_curve(predictions, len(query_entries))

    curve_path = out_dir / "pr_curve.csv"
    fileio.write_csv(curve_path, ["recall", "precision"], curve)
    summary_path = out_dir / "retrieval_summary.json"
    fileio.write_manifest(
        summary_path,
        {"top1_recall": recall1, "k": args.k, "num_queries": len(query_entries)},
    )
    _write_manifest(
        out_dir,
        "eval-retrieval",
        {"k": args.k, "raw_embeddings": args.raw_embeddings},
        [str(args.model), str(args.anchors), str(args.queries)],
        [str(curve_path), str(summary_path)],
        args.seed,
        started,
    )
    print(f"top1_recall={recall1:.4f} over {len(query_entries)} queries")
    return 0


def cmd_eval_detection(args: argparse.Namespace) -> int:
    started = time.time()
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    dets, _ = fileio.read_detections(
        args.detections, args.error_budget, combine_class_score=args.mode == "e2e-map"
    )
    gts, _ = fileio.read_ground_truth(args.ground_truth, args.error_budget)

    summary: dict = {"mode": args.mode, "num_detections": len(dets), "num_gt": len(gts)}
    outputs = []

    if args.mode == "recall-ap":
        match = detection.match_detections(dets, gts, args.iou_threshold)
        flagged = [(d.score, hit) for d, hit in zip(dets, match.tp)]
        summary["recall"] = detection.recall(match)
        summary["ap"] = detection.average_precision(flagged, len(gts))
    elif args.mode == "froc":
        thresholds = sorted({d.score for d in dets}, reverse=True) or [0.0]
        points = detection.froc_curve(dets, gts, thresholds, args.iou_threshold)
        froc_path = out_dir / "froc.csv"
        fileio.write_csv(
            froc_path,
            ["avg_fp_per_image", "recall"],
            [(p.avg_false_positives_per_image, p.recall) for p in points],
        )
        outputs.append(str(froc_path))
        summary["max_recall"] = max(p.recall for p in points)
    elif args.mode == "e2e-map":
        per_class, mean_ap = detection.end_to_end_map(
            dets, gts, args.iou_threshold, args.score_threshold
        )
        summary["map"] = mean_ap
        summary["per_class"] = {str(k): v for k, v in per_class.items()}
    else:  # pragma: no cover - argparse restricts choices
        raise ValueError(f"unknown mode {args.mode}")

    if args.negatives is not None:
        negatives = fileio.read_negative_ids(args.negatives)
        summary["negative_detections"] = detection.count_negative_detections(
            dets, negatives, args.score_threshold or 0.0
        )

    summary_path = out_dir / "detection_summary.json"
    fileio.write_manifest(summary_path, summary)
    outputs.append(str(summary_path))
    _write_manifest(
        out_dir,
        "eval-detection",
        {
            "mode": args.mode,
            "iou_threshold": args.iou_threshold,
            "score_threshold": args.score_threshold,
        },
        [str(args.detections), str(args.ground_truth)],
        outputs,
        args.seed,
        started,
    )
    printable = {k: v for k, v in summary.items() if not isinstance(v, dict)}
    print(json.dumps(printable))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="logokit", description="Few-shot logo recognition pipeline tools"
    )
    parser.add_argument("--version", action="version", version=logokit.__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--seed", type=int, default=None, help="run seed")
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--out-dir", required=True, help="output directory")
        p.add_argument(
            "--error-budget",
            type=int,
            default=0,
            help="malformed input lines tolerated before aborting",
        )

    p = sub.add_parser("consolidate", help="merge crowdsourced boxes into consensus")
    common(p)
    p.add_argument("--input", required=True, help="annotation JSONL")
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--min-samples", type=int, default=None)
    p.add_argument("--whole-image-iou", type=float, default=None)
    p.add_argument("--no-logo-threshold", dest="no_logo_vote_threshold", type=int, default=None)
    p.add_argument("--min-cluster-support", type=int, default=None)
    p.set_defaults(func=cmd_consolidate)

    p = sub.add_parser("train", help="train embedder and proxies")
    common(p)
    p.add_argument("--features", required=True, help="labeled feature JSONL")
    p.add_argument("--loss", default=None, help="proxy_triplet|proxy_nca|cross_entropy|margin|triplet")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--embedding-dim", type=int, default=None)
    p.add_argument("--arch", choices=[a.value for a in Architecture], default=None)
    p.add_argument("--hidden", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-retrieval", help="few-shot identification metrics")
    common(p)
    p.add_argument("--model", required=True)
    p.add_argument("--anchors", required=True, help="anchor feature JSONL")
    p.add_argument("--queries", required=True, help="query feature JSONL")
    p.add_argument("--k", type=int, default=1)
    p.add_argument(
        "--raw-embeddings",
        action="store_true",
        help="skip norm projection when embedding",
    )
    p.set_defaults(func=cmd_eval_retrieval)

    p = sub.add_parser("eval-detection", help="detector metrics over JSONL files")
    common(p)
    p.add_argument("--detections", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--negatives", default=None, help="file of negative image ids")
    p.add_argument("--mode", choices=["recall-ap", "froc", "e2e-map"], default="recall-ap")
    p.add_argument("--iou-threshold", type=float, default=0.5)
    p.add_argument("--score-threshold", type=float, default=None)
    p.set_defaults(func=cmd_eval_detection)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
