"""Accuracy, mean average precision and macro-F1, plus split aggregation."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

METRICS = ("acc", "map", "mf1")


def _pair(predicted, truth):
    p, t = np.asarray(predicted), np.asarray(truth)
    if p.shape != t.shape or p.ndim != 1:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    if len(t) == 0:
        raise ValueError("empty input")
    return p, t


def accuracy(predicted, truth) -> float:
    p, t = _pair(predicted, truth)
    return float(np.mean(p == t))


def average_precision(scores, positives) -> float:
    """Mean of precision@k over the ranks k that hold a positive.

    Ranking is by descending score; equal scores keep their input order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    positives = np.asarray(positives, dtype=bool)
    order = np.argsort(-scores, kind="stable")
    hits = positives[order]
    if not hits.any():
        raise ValueError("no positive items")
    ranks = np.flatnonzero(hits) + 1
    return float(np.mean(np.arange(1, len(ranks) + 1) / ranks))


def mean_average_precision(score_matrix, truth) -> float:
    """Unweighted mean of per-class AP; classes absent from ``truth`` are skipped."""
    S = np.asarray(score_matrix, dtype=np.float64)
    truth = np.asarray(truth)
    if S.ndim != 2 or len(S) != len(truth):
        raise ValueError(f"score matrix {S.shape} does not match {len(truth)} labels")
    aps = []
    for c in range(S.shape[1]):
        pos = truth == c
        if not pos.any():
            warnings.warn(f"class {c} has no test items; excluded from mAP", stacklevel=2)
            continue
        aps.append(average_precision(S[:, c], pos))
    if not aps:
        raise ValueError("no class has positive test items")
    return float(np.mean(aps))


def per_class_f1(predicted, truth, class_count: int | None = None) -> np.ndarray:
    p, t = _pair(predicted, truth)
    C = int(class_count or max(p.max(), t.max()) + 1)
    f1 = np.zeros(C)
    for c in range(C):
        tp = np.sum((p == c) & (t == c))
        fp = np.sum((p == c) & (t != c))
        fn = np.sum((p != c) & (t == c))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1[c] = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
    return f1


def mean_f1(predicted, truth, class_count: int | None = None) -> float:
    """Macro-F1: unweighted class mean, a class with P + R = 0 counts as 0."""
    return float(np.mean(per_class_f1(predicted, truth, class_count)))


@dataclass
class SplitMetrics:
    acc: float
    map: float
    mf1: float

    def as_dict(self) -> dict:
        return {"acc": self.acc, "map": self.map, "mf1": self.mf1}


def evaluate(predicted, score_matrix, truth, class_count: int | None = None) -> SplitMetrics:
    class_count = class_count or np.asarray(score_matrix).shape[1]
    return SplitMetrics(accuracy(predicted, truth),
                        mean_average_precision(score_matrix, truth),
                        mean_f1(predicted, truth, class_count))


@dataclass
class EvalReport:
    per_split: list[SplitMetrics]
    mean: dict[str, float]
    std: dict[str, float]
    fingerprint: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"per_split": [m.as_dict() for m in self.per_split], "mean": self.mean,
                "std": self.std, "fingerprint": self.fingerprint}

    @classmethod
    def from_dict(cls, d) -> "EvalReport":
        return cls([SplitMetrics(**m) for m in d["per_split"]], dict(d["mean"]),
                   dict(d["std"]), dict(d.get("fingerprint", {})))


def aggregate(per_split, fingerprint: dict | None = None) -> EvalReport:
    """Mean and sample (n-1) standard deviation of each metric across splits."""
    per_split = list(per_split)
    if not per_split:
        raise ValueError("aggregate needs at least one split")
    mean, std = {}, {}
    for name in METRICS:
        vals = sorted(getattr(m, name) for m in per_split)
        n = len(vals)
        mu = math.fsum(vals) / n
        mean[name] = mu
        std[name] = math.sqrt(math.fsum((v - mu) ** 2 for v in vals) / (n - 1)) if n > 1 else 0.0
    return EvalReport(per_split, mean, std, dict(fingerprint or {}))
