"""Random search plus 5-fold CV on the Pima diabetes table.

    python scripts/diabetes_cv.py [--trials 5] [--epochs 100] [--patience 20]
"""
import argparse
import time
from pathlib import Path

from ncart import model as M
from ncart import train as T
from ncart.data_io import Schema, load_csv

DATA = Path(__file__).resolve().parents[1] / "data"


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", default=str(DATA / "diabetes.csv"))
    ap.add_argument("--target", default="class")
    ap.add_argument("--trials", type=int, default=5)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--patience", type=int, default=20)
    ap.add_argument("--batch-size", type=int, default=128)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ds = load_csv(args.data, Schema(args.target, "binclass"))
    base = M.NcartConfig(epochs=args.epochs, patience=args.patience, batch_size=args.batch_size)
    t0 = time.perf_counter()
    best, report = T.random_search(ds, base, trials=args.trials, seed=args.seed, k=5)
    for trial in report.trials:
        c = trial["config"]
        print(f"trial {trial['trial']}: AUC {100 * trial['score']:.2f}  "
              f"L={c['n_blocks']} N={c['n_trees']} d={c['sel_dim']} {c['sparse_fn']}")
    s = report.summary()
    print(f"best L={best.n_blocks} N={best.n_trees} d={best.sel_dim} {best.sparse_fn}")
    print(f"AUC {100 * s['auc'][0]:.2f}±{100 * s['auc'][1]:.2f}  "
          f"F1 {100 * s['f1'][0]:.2f}±{100 * s['f1'][1]:.2f}  ({time.perf_counter() - t0:.1f}s)")


if __name__ == "__main__":
    main()
