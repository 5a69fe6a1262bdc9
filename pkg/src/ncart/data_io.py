"""CSV ingestion with ordinal encoding, plus the evaluation metrics (AUC, F1, MSE)."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

log = logging.getLogger(__name__)

UNSEEN_CODE = -1.0


class DataError(ValueError):
    """Malformed or unsupported input data."""


@dataclass
class Schema:
    target: str
    task: str = "binclass"
    categorical: list[str] = field(default_factory=list)
    columns: list[str] = field(default_factory=list)

    @property
    def features(self) -> list[str]:
        return [c for c in self.columns if c != self.target]

    def validate(self) -> None:
        if self.task not in ("binclass", "multiclass", "regression"):
            raise DataError(f"unknown task {self.task!r}")
        if self.columns:
            if self.target not in self.columns:
                raise DataError(f"target column {self.target!r} not in file")
            unknown = [c for c in self.categorical if c not in self.columns]
            if unknown:
                raise DataError(f"unknown categorical column(s): {', '.join(unknown)}")
        if self.target in self.categorical:
            raise DataError("target column cannot also be a categorical feature")

    def to_dict(self) -> dict:
        return {"target": self.target, "task": self.task,
                "categorical": list(self.categorical), "columns": list(self.columns)}

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        return cls(d["target"], d["task"], list(d.get("categorical", [])), list(d.get("columns", [])))


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    schema: Schema
    categories: dict[str, dict[str, int]] = field(default_factory=dict)
    class_labels: list[str] | None = None

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def task(self) -> str:
        return self.schema.task

    @property
    def n_classes(self) -> int | None:
        if self.task == "regression":
            return None
        if self.class_labels is not None:
            return len(self.class_labels)
        return int(self.y.max()) + 1

    def subset(self, idx) -> "Dataset":
        return Dataset(self.X[idx], self.y[idx], self.schema, self.categories, self.class_labels)

    @classmethod
    def from_arrays(cls, X, y, task: str = "binclass", feature_names=None) -> "Dataset":
        X = np.asarray(X, dtype=np.float64)
        names = list(feature_names) if feature_names is not None else [f"x{j}" for j in range(X.shape[1])]
        schema = Schema("y", task, [], names + ["y"])
        if task == "regression":
            return cls(X, np.asarray(y, dtype=np.float64), schema)
        y = np.asarray(y, dtype=np.int64)
        k = int(y.max()) + 1 if y.size else 0
        if task == "binclass":
            k = max(k, 2)
        return cls(X, y, schema, {}, [str(i) for i in range(k)])


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise DataError(f"row {row}, column {col!r}: cannot parse {text!r} as a number") from None
    if not np.isfinite(v):
        raise DataError(f"row {row}, column {col!r}: non-finite value {text!r}")
    return v


def _sorted_labels(values: list[str]) -> list[str]:
    uniq = set(values)
    try:
        return sorted(uniq, key=float)
    except ValueError:
        return sorted(uniq)


def read_rows(path) -> tuple[list[str], list[list[str]]]:
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file, header row required") from None
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
            rows.append(row)
    if len(set(header)) != len(header):
        raise DataError(f"{path}: duplicate column names in header")
    return header, rows


def load_csv(path, schema: Schema) -> Dataset:
    """Read a CSV, ordinal-encode categoricals by first appearance, encode the target.

    Classification targets are mapped to class indices in sorted label order
    (numeric order when every label parses as a number).
    """
    header, rows = read_rows(path)
    schema = Schema(schema.target, schema.task, list(schema.categorical), header)
    schema.validate()
    for r, row in enumerate(rows, start=2):
        for c, cell in zip(header, row):
            if cell.strip() == "":
                raise DataError(f"{path}: missing value at row {r}, column {c!r} "
                                "(missing values are not supported)")
    categories: dict[str, dict[str, int]] = {}
    for c in schema.categorical:
        j = header.index(c)
        codes: dict[str, int] = {}
        for row in rows:
            codes.setdefault(row[j].strip(), len(codes))
        categories[c] = codes
    X, _ = _encode(rows, header, schema, categories, strict=True, path=path)

    tj = header.index(schema.target)
    raw_y = [row[tj].strip() for row in rows]
    class_labels = None
    if schema.task == "regression":
        y = np.array([_parse_float(v, r, schema.target) for r, v in enumerate(raw_y, start=2)])
    else:
        class_labels = _sorted_labels(raw_y)
        index = {lab: i for i, lab in enumerate(class_labels)}
        y = np.array([index[v] for v in raw_y], dtype=np.int64)
        if schema.task == "binclass" and len(class_labels) > 2:
            raise DataError(f"binclass target has {len(class_labels)} distinct labels")
    return Dataset(X, y, schema, categories, class_labels)


def _encode(rows, header, schema: Schema, categories, strict: bool, path="<rows>"):
    cols = [header.index(f) for f in schema.features]
    X = np.empty((len(rows), len(cols)))
    unseen = 0
    for i, row in enumerate(rows):
        for k, (j, name) in enumerate(zip(cols, schema.features)):
            cell = row[j].strip()
            if name in categories:
                code = categories[name].get(cell)
                if code is None:
                    if strict:
                        raise DataError(f"{path}: row {i + 2}: unknown category {cell!r} in {name!r}")
                    unseen += 1
                    X[i, k] = UNSEEN_CODE
                else:
                    X[i, k] = code
            else:
                if cell == "":
                    raise DataError(f"{path}: missing value at row {i + 2}, column {name!r}")
                X[i, k] = _parse_float(cell, i + 2, name)
    return X, unseen


def encode_with(categories: dict[str, dict[str, int]], rows, schema: Schema,
                header: list[str] | None = None) -> tuple[np.ndarray, int]:
    """Encode raw string rows with training-time dictionaries.

    Unseen categories become -1; the second return value counts them.
    """
    header = header or schema.columns
    missing = [f for f in schema.features if f not in header]
    if missing:
        raise DataError(f"feature column(s) missing: {', '.join(missing)}")
    X, unseen = _encode(rows, header, schema, categories, strict=False)
    if unseen:
        log.warning("%d unseen categorical value(s) encoded as %g", unseen, UNSEEN_CODE)
    return X, unseen


def load_features(path, schema: Schema, categories) -> tuple[np.ndarray, int]:
    header, rows = read_rows(path)
    return encode_with(categories, rows, schema, header)


# -- metrics -----------------------------------------------------------------

def _binary_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs both positive and negative labels")
    ranks = rankdata(scores, method="average")
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def roc_auc(scores, labels) -> float:
    """Mann-Whitney AUC with midrank ties; 2-D scores give macro one-vs-rest."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if scores.ndim == 1:
        return _binary_auc(scores, labels)
    if scores.shape[1] == 2:
        return _binary_auc(scores[:, 1], labels)
    return float(np.mean([_binary_auc(scores[:, k], (labels == k).astype(np.int64))
                          for k in range(scores.shape[1])]))


def _f1_for(pred: np.ndarray, labels: np.ndarray, k: int) -> float:
    tp = np.sum((pred == k) & (labels == k))
    fp = np.sum((pred == k) & (labels != k))
    fn = np.sum((pred != k) & (labels == k))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


def f1(predictions, labels, n_classes: int | None = None) -> float:
    """Positive-class F1 for two classes, macro F1 otherwise."""
    pred = np.asarray(predictions).astype(np.int64)
    labels = np.asarray(labels).astype(np.int64)
    if n_classes is None:
        n_classes = int(max(pred.max(initial=0), labels.max(initial=0))) + 1
    if n_classes <= 2:
        return _f1_for(pred, labels, 1)
    return float(np.mean([_f1_for(pred, labels, k) for k in range(n_classes)]))


def mse(predictions, targets) -> float:
    p = np.asarray(predictions, dtype=np.float64).ravel()
    t = np.asarray(targets, dtype=np.float64).ravel()
    if p.size == 0:
        raise ValueError("mse of empty input")
    if p.shape != t.shape:
        raise ValueError("mse inputs differ in length")
    return float(np.mean((p - t) ** 2))
