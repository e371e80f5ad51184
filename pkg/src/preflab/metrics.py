"""Shared statistical evaluation: Pearson correlation, confusion matrices
over the three preference classes, and per-seed run aggregation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, UndefinedCorrelationError

CLASSES = (0.0, 0.5, 1.0)


@dataclass
class RunSummary:
    values: list
    mean: float
    std: float  # unbiased (n-1) estimator; 0.0 for a single run
    single_run: bool

    def row(self):
        return {"n": len(self.values), "mean": self.mean, "std": self.std}


def pearson(x, y) -> float:
    """Sample Pearson correlation via an explicit two-pass computation."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.size != y.size:
        raise ContractError(f"pearson: length mismatch {x.size} vs {y.size}")
    if x.size < 2:
        raise ContractError("pearson: need at least two samples")
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    sx = math.sqrt(float((dx * dx).sum()))
    sy = math.sqrt(float((dy * dy).sum()))
    if sx == 0.0 or sy == 0.0:
        raise UndefinedCorrelationError("pearson undefined for a constant input")
    return float((dx * dy).sum() / (sx * sy))


def confusion(labels, predictions, classes=CLASSES) -> np.ndarray:
    """Rows are true labels, columns predictions, in `classes` order."""
    labels = list(labels)
    predictions = list(predictions)
    if not labels:
        raise ContractError("confusion: empty input")
    if len(labels) != len(predictions):
        raise ContractError("confusion: length mismatch")
    index = {c: i for i, c in enumerate(classes)}
    mat = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for lab, pred in zip(labels, predictions):
        if lab not in index or pred not in index:
            raise ContractError(f"confusion: value outside classes {classes}: ({lab}, {pred})")
        mat[index[lab], index[pred]] += 1
    return mat


def aggregate(results) -> RunSummary:
    """Mean and (n-1)-std over per-seed scalars."""
    values = [float(v) for v in results]
    if not values:
        raise ContractError("aggregate: empty results")
    mean = float(np.mean(values))
    std = 0.0 if len(values) == 1 else float(np.std(values, ddof=1))
    return RunSummary(values=values, mean=mean, std=std, single_run=len(values) == 1)


def write_csv(path, rows, fieldnames) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def read_csv(path) -> list:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))
