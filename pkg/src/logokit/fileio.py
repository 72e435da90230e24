"""File formats: line-delimited JSON inputs/outputs, model files, configs.

All box coordinates enter as [x, y, w, h] and are converted to corner
form at this boundary. Malformed JSONL lines raise with their line
number once more than `error_budget` of them have accumulated.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from logokit.consolidation import ConsensusBox, ImageRecord, LogoLabel, WorkerAnnotation
from logokit.detection import Detection, GroundTruthBox
from logokit.geometry import Box
from logokit.losses import ProxySet
from logokit.trainer import Architecture, EmbedderParams, LabeledFeatureSet

MODEL_SCHEMA_VERSION = 1


class JsonlError(ValueError):
    """Malformed line-delimited JSON, annotated with file and line number."""

    def __init__(self, path: str | Path, line_number: int, message: str):
        super().__init__(f"{path}:{line_number}: {message}")
        self.line_number = line_number


def _read_jsonl(
    path: str | Path,
    parse: Callable[[dict], Any],
    error_budget: int = 0,
) -> tuple[list[Any], list[str]]:
    """Parse one record per line; abort once errors exceed the budget."""
    items: list[Any] = []
    errors: list[str] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                if not isinstance(obj, dict):
                    raise ValueError("expected a JSON object")
                items.append(parse(obj))
            except (ValueError, KeyError, TypeError) as exc:
                err = JsonlError(path, lineno, str(exc))
                if len(errors) >= error_budget:
                    raise err from None
                errors.append(str(err))
    return items, errors


def _box_from_xywh(raw: Any) -> Box:
    if not isinstance(raw, (list, tuple)) or len(raw) != 4:
        raise ValueError(f"box must be [x, y, w, h], got {raw!r}")
    return Box.from_xywh(*(float(v) for v in raw))


def _clamp_box(box: Box, width: float, height: float) -> Box:
    """Clamp to image bounds; raises if nothing with area remains."""
    return Box(
        min(max(box.x_min, 0.0), width),
        min(max(box.y_min, 0.0), height),
        min(max(box.x_max, 0.0), width),
        min(max(box.y_max, 0.0), height),
    )


def _parse_image_record(obj: dict) -> ImageRecord:
    width = float(obj["width"])
    height = float(obj["height"])
    annotations = []
    for raw in obj.get("annotations", []):
        label = LogoLabel(raw["logo_label"])
        box = None
        if raw.get("box") is not None:
            box = _clamp_box(_box_from_xywh(raw["box"]), width, height)
        annotations.append(WorkerAnnotation(str(raw["worker_id"]), label, box))
    return ImageRecord(
        image_id=str(obj["image_id"]),
        brand=str(obj["brand"]),
        width=width,
        height=height,
        annotations=annotations,
    )


def read_image_records(
    path: str | Path, error_budget: int = 0
) -> tuple[list[ImageRecord], list[str]]:
    return _read_jsonl(path, _parse_image_record, error_budget)


def write_consensus_boxes(path: str | Path, boxes: Iterable[ConsensusBox]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cb in boxes:
            fh.write(
                json.dumps(
                    {
                        "image_id": cb.image_id,
                        "box": list(cb.box.as_tuple()),
                        "support": cb.support,
                        "cluster_id": cb.cluster_id,
                    }
                )
                + "\n"
            )


def read_feature_set(
    path: str | Path, error_budget: int = 0
) -> tuple[LabeledFeatureSet, list[str]]:
    """Read {"label", "features", "source_id"?} rows into a feature set."""

    def parse(obj: dict) -> tuple[str, list[float], str | None]:
        features = [float(v) for v in obj["features"]]
        if not features:
            raise ValueError("features must be nonempty")
        source = obj.get("source_id")
        return str(obj["label"]), features, None if source is None else str(source)

    rows, errors = _read_jsonl(path, parse, error_budget)
    if not rows:
        raise ValueError(f"{path}: no feature rows found")
    dims = {len(r[1]) for r in rows}
    if len(dims) != 1:
        raise ValueError(f"{path}: inconsistent feature dimensions {sorted(dims)}")
    source_ids = None
    if all(r[2] is not None for r in rows):
        source_ids = [r[2] for r in rows]
    data = LabeledFeatureSet(
        features=np.array([r[1] for r in rows], dtype=np.float64),
        labels=[r[0] for r in rows],
        source_ids=source_ids,
    )
    return data, errors


def read_detections(
    path: str | Path, error_budget: int = 0, combine_class_score: bool = False
) -> tuple[list[Detection], list[str]]:
    """Read detection rows; optionally fold "class_score" into the score."""

    def parse(obj: dict) -> Detection:
        score = float(obj["score"])
        if combine_class_score and obj.get("class_score") is not None:
            score *= float(obj["class_score"])
        label = obj.get("class_label")
        return Detection(
            image_id=str(obj["image_id"]),
            box=_box_from_xywh(obj["box"]),
            score=score,
            class_label=None if label is None else str(label),
        )

    return _read_jsonl(path, parse, error_budget)


def read_ground_truth(
    path: str | Path, error_budget: int = 0
) -> tuple[list[GroundTruthBox], list[str]]:
    def parse(obj: dict) -> GroundTruthBox:
        label = obj.get("class_label")
        return GroundTruthBox(
            image_id=str(obj["image_id"]),
            box=_box_from_xywh(obj["box"]),
            class_label=None if label is None else str(label),
        )

    return _read_jsonl(path, parse, error_budget)


def read_negative_ids(path: str | Path) -> set[str]:
    """One negative-set image id per line; blanks ignored."""
    with open(path, encoding="utf-8") as fh:
        return {line.strip() for line in fh if line.strip()}


def save_model(path: str | Path, params: EmbedderParams, proxies: ProxySet) -> None:
    """Serialize embedder weights and proxies to one versioned JSON file."""
    doc = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "arch": params.arch.value,
        "d_in": params.d_in,
        "hidden": params.hidden,
        "d_emb": params.d_emb,
        "w1": params.w1.tolist(),
        "b1": params.b1.tolist(),
        "w2": None if params.w2 is None else params.w2.tolist(),
        "b2": None if params.b2 is None else params.b2.tolist(),
        "class_ids": list(proxies.class_ids),
        "proxies": proxies.proxies.tolist(),
        "norm": proxies.norm,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path: str | Path) -> tuple[EmbedderParams, ProxySet]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("schema_version")
    if version != MODEL_SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema_version {version!r}")
    params = EmbedderParams(
        arch=Architecture(doc["arch"]),
        w1=np.array(doc["w1"], dtype=np.float64),
        b1=np.array(doc["b1"], dtype=np.float64),
        w2=None if doc["w2"] is None else np.array(doc["w2"], dtype=np.float64),
        b2=None if doc["b2"] is None else np.array(doc["b2"], dtype=np.float64),
    )
    proxies = ProxySet(
        class_ids=list(doc["class_ids"]),
        proxies=np.array(doc["proxies"], dtype=np.float64),
        norm=float(doc["norm"]),
    )
    return params, proxies


def read_kv_config(path: str | Path) -> dict[str, str]:
    """Flat key=value config file; '#' starts a comment, blanks skipped."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{lineno}: expected key=value, got {line.rstrip()!r}")
            key, value = stripped.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def write_csv(path: str | Path, header: list[str], rows: Iterable[Iterable]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(repr(v) if isinstance(v, float) else str(v) for v in row) + "\n")


def write_manifest(path: str | Path, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
