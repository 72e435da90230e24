"""Generate small demo input files for every CLI subcommand.

Writes crowdsourced annotations, labeled feature vectors, detections,
ground truth, and a negative-image list into --out-dir, then prints the
pipeline commands that consume them.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def annotations(rng, images=8, workers=6):
    rows = []
    for i in range(images):
        x0, y0 = rng.uniform(5, 50, size=2)
        w, h = rng.uniform(15, 35, size=2)
        anns = []
        for wk in range(workers):
            jitter = rng.normal(0, 1.0, size=4)
            anns.append(
                {
                    "worker_id": f"w{wk}",
                    "logo_label": "ONE_LOGO",
                    "box": [x0 + jitter[0], y0 + jitter[1], w + jitter[2], h + jitter[3]],
                }
            )
        # one sloppy whole-frame annotation per image
        anns.append({"worker_id": "w_lazy", "logo_label": "ONE_LOGO", "box": [0, 0, 100, 100]})
        rows.append(
            {
                "image_id": f"img{i}",
                "brand": f"brand{i % 4}",
                "width": 100,
                "height": 100,
                "annotations": anns,
            }
        )
    return rows


def features(rng, classes=5, per_class=20, dim=16):
    rows = []
    for c in range(classes):
        center = np.zeros(dim)
        center[c] = 1.0
        for j in range(per_class):
            vec = center + 0.1 * rng.standard_normal(dim)
            rows.append(
                {
                    "label": f"brand{c}",
                    "features": [float(v) for v in vec],
                    "source_id": f"img_{c}_{j}",
                }
            )
    return rows


def detections_and_gt(rng, images=10):
    dets, gts = [], []
    for i in range(images):
        img = f"det{i}"
        x0, y0 = rng.uniform(5, 60, size=2)
        w, h = rng.uniform(10, 25, size=2)
        gts.append({"image_id": img, "box": [x0, y0, w, h], "class_label": f"brand{i % 3}"})
        # a near-hit and a stray box per image
        dets.append(
            {
                "image_id": img,
                "box": [x0 + rng.normal(0, 1), y0 + rng.normal(0, 1), w, h],
                "score": float(rng.uniform(0.5, 1.0)),
                "class_label": f"brand{i % 3}",
                "class_score": float(rng.uniform(0.7, 1.0)),
            }
        )
        dets.append(
            {
                "image_id": img,
                "box": [rng.uniform(60, 80), rng.uniform(60, 80), 10, 10],
                "score": float(rng.uniform(0.0, 0.6)),
                "class_label": f"brand{int(rng.integers(3))}",
                "class_score": float(rng.uniform(0.3, 1.0)),
            }
        )
    return dets, gts


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default="demo_data")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    write_jsonl(out / "annotations.jsonl", annotations(rng))
    write_jsonl(out / "features.jsonl", features(rng))
    dets, gts = detections_and_gt(rng)
    write_jsonl(out / "detections.jsonl", dets)
    write_jsonl(out / "ground_truth.jsonl", gts)
    (out / "negatives.txt").write_text("det_neg0\ndet_neg1\n")

    print(f"wrote demo inputs to {out}/")
    print("try:")
    print(f"  logokit consolidate --input {out}/annotations.jsonl --out-dir {out}/consensus")
    print(f"  logokit train --features {out}/features.jsonl --epochs 30 --out-dir {out}/model")
    print(
        f"  logokit eval-retrieval --model {out}/model/model.json "
        f"--anchors {out}/features.jsonl --queries {out}/features.jsonl "
        f"--k 3 --out-dir {out}/retrieval"
    )
    print(
        f"  logokit eval-detection --detections {out}/detections.jsonl "
        f"--ground-truth {out}/ground_truth.jsonl --mode e2e-map --out-dir {out}/detection"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
