"""Command-line front end: train, cv, tune, predict, importance, gradcheck, odt-approx.

Settings resolve as defaults < NCART_SEED < --config file < command-line flags.
Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from . import model as M
from . import train as T
from .data_io import DataError, Schema, load_csv, load_features
from .importance import feature_importance
from .odt_approx import fit_two_odts, parse_tree, refine

FORMAT_VERSION = 1
MODEL_SECTIONS = ("format_version", "config", "schema", "categories", "class_labels", "seed", "model")

class UsageError(Exception):
    pass


# -- run configuration -------------------------------------------------------

@dataclass
class RunConfig:
    data: str | None = None
    target: str | None = None
    task: str = "binclass"
    cat_cols: list[str] = field(default_factory=list)
    seed: int = 0
    epochs: int = 1000
    batch_size: int = 1024
    lr: float = 1e-3
    blocks: int = 2
    trees: int = 16
    sel_dim: int = 4
    hidden: int | None = None
    sparse_fn: str = "sparsemax"
    patience: int = 0
    folds: int = 5
    trials: int = 10
    timeout: float = 50000.0
    eval_batch_size: int = 256
    out: str | None = None
    model: str | None = None
    report: str | None = None

    def ncart_config(self) -> M.NcartConfig:
        return M.NcartConfig(
            n_blocks=self.blocks, n_trees=self.trees, sel_dim=self.sel_dim, hidden=self.hidden,
            sparse_fn=self.sparse_fn, task=self.task, seed=self.seed, lr=self.lr,
            batch_size=self.batch_size, epochs=self.epochs, patience=self.patience,
            trials=self.trials, timeout=self.timeout, eval_batch_size=self.eval_batch_size,
        ).validate()

    def schema(self) -> Schema:
        if not self.target:
            raise UsageError("--target is required")
        return Schema(self.target, self.task, list(self.cat_cols))


_CONVERT = {
    "seed": int, "epochs": int, "batch_size": int, "lr": float, "blocks": int, "trees": int,
    "sel_dim": int, "hidden": int, "patience": int, "folds": int, "trials": int,
    "timeout": float, "eval_batch_size": int,
    "cat_cols": lambda s: [c.strip() for c in s.split(",") if c.strip()] if isinstance(s, str) else list(s),
}
# config-file keys written by ``tune`` that map onto RunConfig names
_ALIASES = {"n_blocks": "blocks", "n_trees": "trees", "categorical": "cat_cols"}


def _convert(key: str, value):
    try:
        return _CONVERT.get(key, str)(value)
    except (TypeError, ValueError):
        raise UsageError(f"invalid value {value!r} for {key}") from None


def read_config_file(path) -> dict:
    """Flat ``key=value`` lines; '#' starts a comment; dashes and underscores are interchangeable."""
    out = {}
    known = {f.name for f in fields(RunConfig)}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as e:
        raise UsageError(f"cannot read config file: {e}") from None
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        key = _ALIASES.get(key, key)
        if key not in known:
            raise UsageError(f"{path}:{n}: unknown key {key!r}")
        if value.lower() in ("", "none"):
            value = None
        out[key] = None if value is None else _convert(key, value)
    return out


def resolve(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    values = {}
    if environ.get("NCART_SEED"):
        values["seed"] = _convert("seed", environ["NCART_SEED"])
    if getattr(args, "config", None):
        values.update(read_config_file(args.config))
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            values[f.name] = _convert(f.name, v) if f.name == "cat_cols" else v
    cfg = RunConfig(**values)
    try:
        cfg.ncart_config()
    except ValueError as e:
        raise UsageError(str(e)) from None
    if cfg.folds < 2:
        raise UsageError("--folds must be at least 2")
    return cfg


# -- model file --------------------------------------------------------------

def save_model(path, model: M.NcartModel, config: M.NcartConfig, dataset) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "config": config.to_dict(),
        "schema": dataset.schema.to_dict(),
        "categories": dataset.categories,
        "class_labels": dataset.class_labels,
        "seed": config.seed,
        "model": M.model_to_dict(model),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_model(path):
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError:
        present = [s for s in MODEL_SECTIONS if f'"{s}":' in text]
        missing = [s for s in MODEL_SECTIONS if s not in present]
        section = missing[0] if missing else present[-1]
        raise DataError(f"{path}: truncated or corrupt model file, section {section!r} "
                        "is missing or incomplete") from None
    for s in MODEL_SECTIONS:
        if s not in doc:
            raise DataError(f"{path}: model file lacks section {s!r}")
    if doc["format_version"] != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported model format version {doc['format_version']}")
    try:
        model = M.model_from_dict(doc["model"])
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None
    return model, doc


def _fmt(v: float) -> str:
    return repr(float(v))


# -- subcommands -------------------------------------------------------------

def cmd_train(cfg: RunConfig) -> int:
    if not cfg.data or not cfg.out:
        raise UsageError("train needs --data and --out")
    ds = load_csv(cfg.data, cfg.schema())
    ncfg = cfg.ncart_config()
    model, report = T.fit(ds, ncfg, seed=cfg.seed)
    save_model(cfg.out, model, ncfg, ds)
    report_path = cfg.report or str(cfg.out) + ".report.json"
    Path(report_path).write_text(json.dumps(report.to_dict(), indent=1) + "\n")
    status = "complete" if report.completed else "INCOMPLETE (timeout)"
    print(f"trained {report.epochs_run} epochs in {report.seconds:.2f}s [{status}]; "
          f"model -> {cfg.out}, report -> {report_path}")
    return 0


def format_cv_report(report: T.TrainReport, task: str) -> str:
    scale = 1.0 if task == "regression" else 100.0
    keys = ["mse"] if task == "regression" else ["auc", "f1"]
    lines = ["# std uses the population (1/k) convention",
             "fold  " + "  ".join(f"{k.upper():>8}" for k in keys) + "   seconds"]
    for fm in report.fold_metrics:
        lines.append(f"{fm['fold']:>4}  " + "  ".join(f"{fm[k] * scale:8.2f}" for k in keys)
                     + f"  {fm['seconds']:8.2f}")
    summary = report.summary()
    for k in keys:
        mean, std = summary[k]
        lines.append(f"{k.upper()}: {mean * scale:.2f}±{std * scale:.2f}")
    return "\n".join(lines)


def write_cv_csv(path, report: T.TrainReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["fold", "auc", "f1", "mse", "seconds"])
        for fm in report.fold_metrics:
            w.writerow([fm["fold"]] + [_fmt(fm[k]) if k in fm else "" for k in ("auc", "f1", "mse")]
                       + [f"{fm['seconds']:.3f}"])
        for k, (mean, std) in report.summary().items():
            w.writerow([f"# {k} mean={_fmt(mean)} std={_fmt(std)} (population)"])


def cmd_cv(cfg: RunConfig) -> int:
    if not cfg.data:
        raise UsageError("cv needs --data")
    ds = load_csv(cfg.data, cfg.schema())
    report = T.kfold_cv(ds, cfg.ncart_config(), k=cfg.folds, seed=cfg.seed)
    text = format_cv_report(report, ds.task)
    print(text)
    if cfg.report:
        write_cv_csv(cfg.report, report)
        Path(cfg.report + ".txt").write_text(text + "\n")
    return 0


def write_config_file(path, ncfg: M.NcartConfig, cfg: RunConfig) -> None:
    pairs = {
        "target": cfg.target, "task": ncfg.task, "cat_cols": ",".join(cfg.cat_cols),
        "seed": ncfg.seed, "epochs": ncfg.epochs, "batch_size": ncfg.batch_size, "lr": ncfg.lr,
        "blocks": ncfg.n_blocks, "trees": ncfg.n_trees, "sel_dim": ncfg.sel_dim,
        "hidden": ncfg.hidden, "sparse_fn": ncfg.sparse_fn, "patience": ncfg.patience,
        "timeout": ncfg.timeout,
    }
    Path(path).write_text("".join(f"{k}={'' if v is None else v}\n" for k, v in pairs.items()))


def cmd_tune(cfg: RunConfig) -> int:
    if not cfg.data:
        raise UsageError("tune needs --data")
    ds = load_csv(cfg.data, cfg.schema())
    best, report = T.random_search(ds, cfg.ncart_config(), trials=cfg.trials, seed=cfg.seed, k=cfg.folds)
    print(format_cv_report(report, ds.task))
    print("best config: " + ", ".join(f"{k}={getattr(best, k)}"
                                      for k in ("n_blocks", "n_trees", "sel_dim", "sparse_fn")))
    if cfg.out:
        write_config_file(cfg.out, best, cfg)
    if cfg.report:
        Path(cfg.report).write_text(json.dumps(report.to_dict(), indent=1) + "\n")
    return 0


def cmd_predict(cfg: RunConfig) -> int:
    if not cfg.model or not cfg.data or not cfg.out:
        raise UsageError("predict needs --model, --data and --out")
    model, doc = load_model(cfg.model)
    schema = Schema.from_dict(doc["schema"])
    X, unseen = load_features(cfg.data, schema, doc["categories"])
    pred = M.predict(model, X, doc["config"].get("eval_batch_size", 256))
    with open(cfg.out, "w", newline="") as fh:
        w = csv.writer(fh)
        if model.task == "regression":
            w.writerow(["prediction"])
            w.writerows([_fmt(v)] for v in pred)
        else:
            w.writerow([f"p_{lab}" for lab in doc["class_labels"]])
            w.writerows([_fmt(v) for v in row] for row in pred)
    msg = f"wrote {len(pred)} predictions to {cfg.out}"
    if unseen:
        msg += f" ({unseen} unseen categorical value(s) encoded as -1)"
    print(msg)
    return 0


def cmd_importance(cfg: RunConfig, plot_data: str | None = None) -> int:
    if not cfg.model or not cfg.data or not cfg.out:
        raise UsageError("importance needs --model, --data and --out")
    model, doc = load_model(cfg.model)
    schema = Schema.from_dict(doc["schema"])
    X, _ = load_features(cfg.data, schema, doc["categories"])
    imp = feature_importance(model, X, schema.features)
    with open(cfg.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["feature_name", "importance"])
        w.writerows([name, _fmt(raw)] for name, raw, _ in imp.rows())
    if plot_data:
        with open(plot_data, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["feature_name", "normalized_importance"])
            w.writerows([name, _fmt(norm)] for name, _, norm in imp.rows())
    print(f"{'feature':>20}  {'importance':>10}  normalized")
    for name, raw, norm in imp.rows():
        print(f"{name:>20}  {raw:10.4f}  {norm:.4f}")
    return 0


def gradcheck_suite(seeds=(0, 1, 2), hidden: int = 8, batch: int = 16, n_features: int = 12,
                    tol: float = 1e-4, per_param: int = 5, echo=print) -> bool:
    ok = True
    for L in M.BLOCK_CHOICES:
        for N in (8, 64):
            for d in (2, 10):
                for fn in ("sparsemax", "entmax"):
                    for seed in seeds:
                        rep = M.gradcheck_model(L, N, d, fn, hidden=hidden, batch=batch,
                                                n_features=n_features, seed=seed,
                                                per_param=per_param)
                        passed = rep.passed(tol)
                        ok &= passed
                        echo(f"{'PASS' if passed else 'FAIL'} L={L} N={N} d={d} {fn:9s} "
                             f"seed={seed} max_rel_err={rep.max_rel_err:.3e} "
                             f"checked={rep.n_checked} skipped={rep.n_skipped}")
    return ok


def cmd_gradcheck(cfg: RunConfig) -> int:
    ok = gradcheck_suite(seeds=(cfg.seed, cfg.seed + 1, cfg.seed + 2),
                         hidden=cfg.hidden or 8)
    print("gradcheck:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def cmd_odt_approx(tree_path: str) -> int:
    try:
        tree = parse_tree(Path(tree_path).read_text())
    except OSError as e:
        raise DataError(str(e)) from None
    grid = refine(tree, n_axes=2)
    vectors, residual = fit_two_odts(grid)
    print("thresholds axis0:", grid.thresholds[0].tolist())
    print("thresholds axis1:", grid.thresholds[1].tolist())
    print("a:", vectors.a.tolist())
    print("b:", vectors.b.tolist())
    print(f"residual: {residual:.12g}")
    print("cells (row, col): tree value | a+b")
    for r in range(grid.shape[0]):
        for c in range(grid.shape[1]):
            print(f"  ({r}, {c}): {grid.values[r, c]:.6g} | {vectors.a[r] + vectors.b[c]:.6g}")
    return 0


# -- argument parsing --------------------------------------------------------

def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data")
    p.add_argument("--target")
    p.add_argument("--task", choices=M.TASKS)
    p.add_argument("--cat-cols", help="comma-separated categorical columns")
    p.add_argument("--config", help="flat key=value file")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--blocks", type=int)
    p.add_argument("--trees", type=int)
    p.add_argument("--sel-dim", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--sparse-fn", choices=("sparsemax", "entmax"))
    p.add_argument("--patience", type=int, help="early-stop patience on a 10%% split (0 = off)")
    p.add_argument("--folds", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--eval-batch-size", type=int)
    p.add_argument("--out")
    p.add_argument("--model")
    p.add_argument("--report")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ncart", description="Neural classification and regression trees")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, help_ in [("train", "train one model on the full dataset"),
                        ("cv", "k-fold cross-validation"),
                        ("tune", "random hyperparameter search"),
                        ("predict", "write predictions for a CSV"),
                        ("importance", "Gini feature importance"),
                        ("gradcheck", "finite-difference check of model gradients")]:
        p = sub.add_parser(name, help=help_)
        _add_common(p)
        if name == "importance":
            p.add_argument("--plot-data", help="optional (feature, normalized) CSV for plotting")
    p = sub.add_parser("odt-approx", help="fit two oblivious trees to a decision tree")
    p.add_argument("--tree", required=True, help="tree description file")
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "odt-approx":
            return cmd_odt_approx(args.tree)
        cfg = resolve(args)
        if args.command in ("train", "cv", "tune") and not cfg.target:
            raise UsageError("--target is required")
        if args.command == "train":
            return cmd_train(cfg)
        if args.command == "cv":
            return cmd_cv(cfg)
        if args.command == "tune":
            return cmd_tune(cfg)
        if args.command == "predict":
            return cmd_predict(cfg)
        if args.command == "importance":
            return cmd_importance(cfg, args.plot_data)
        return cmd_gradcheck(cfg)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"ncart: error: {e}", file=sys.stderr)
        return 2
    except (DataError, ValueError, FloatingPointError, OSError) as e:
        print(f"ncart: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
