"""Compare loss functions on the synthetic few-shot benchmark.

Trains one embedder per loss kind on the same Gaussian-cluster data and
reports top-1 recall with a handful of anchors per class, so the loss
functions can be ranked under an identical training budget.
"""

import argparse
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from logokit import retrieval, synthetic, trainer
from logokit.trainer import LossKind, TrainConfig


def recall_at_1(train, test, loss, args):
    cfg = TrainConfig(
        loss=loss,
        embedding_dim=args.embedding_dim,
        epochs=args.epochs,
        seed=args.seed,
    )
    t0 = time.perf_counter()
    params, _, history = trainer.fit(train, cfg)
    emb = trainer.embed(params, test.features, cfg.proxy_norm)
    entries = [(emb[i], test.labels[i], str(i)) for i in range(len(test))]
    anchors, queries = retrieval.select_anchors(entries, per_class=args.anchors)
    index = retrieval.build_index(anchors)
    recall = retrieval.top1_recall(index, [(e, lab) for e, lab, _ in queries])
    return recall, history[-1], time.perf_counter() - t0


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--classes", type=int, default=10)
    parser.add_argument("--input-dim", type=int, default=32)
    parser.add_argument("--points-per-class", type=int, default=70)
    parser.add_argument("--train-per-class", type=int, default=50)
    parser.add_argument("--sigma", type=float, default=0.1)
    parser.add_argument("--embedding-dim", type=int, default=16)
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--anchors", type=int, default=5, help="anchors per class")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    data = synthetic.gaussian_clusters(
        args.classes, args.input_dim, args.points_per_class, sigma=args.sigma, seed=args.seed
    )
    train, test = synthetic.train_test_split(data, args.train_per_class, seed=args.seed)
    print(f"{len(train)} train / {len(test)} test points, {args.classes} classes")
    print(f"{'loss':<15} {'recall@1':>9} {'final loss':>11} {'seconds':>8}")
    for loss in LossKind:
        recall, final_loss, seconds = recall_at_1(train, test, loss, args)
        print(f"{loss.value:<15} {recall:>9.4f} {final_loss:>11.4f} {seconds:>8.1f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
