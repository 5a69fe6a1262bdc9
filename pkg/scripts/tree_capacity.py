"""Fit the default model to targets drawn from random depth-3 axis-aligned trees.

    python scripts/tree_capacity.py [--seeds 5] [--epochs 200] [--batch-size 128]
"""
import argparse
import time

from ncart import model as M
from ncart import train as T
from ncart.odt_approx import format_tree
from ncart.synthetic import tree_target


def accuracy(model, ds) -> float:
    return float((M.predict(model, ds.X).argmax(axis=1) == ds.y).mean())


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=200)
    ap.add_argument("--batch-size", type=int, default=128)
    ap.add_argument("--show-tree", action="store_true")
    args = ap.parse_args()

    cfg = M.NcartConfig(epochs=args.epochs, batch_size=args.batch_size)
    for seed in range(args.seeds):
        train, holdout, tree = tree_target(seed)
        t0 = time.perf_counter()
        model, _ = T.fit(train, cfg, seed=seed)
        print(f"seed {seed}: positives {train.y.mean():.2f}  train {accuracy(model, train):.4f}  "
              f"holdout {accuracy(model, holdout):.4f}  ({time.perf_counter() - t0:.1f}s)")
        if args.show_tree:
            print("   ", format_tree(tree))


if __name__ == "__main__":
    main()
