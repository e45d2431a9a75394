"""Evaluation math: confusion counts, P/R/F1, PR-AUC, permutation test.

Per-class scores are one-vs-rest; any zero denominator yields 0 rather
than NaN so macro averages stay defined when a class is never predicted.
PR-AUC is average precision (the step sum over prediction ranks), not a
trapezoidal interpolation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "PredictionSet",
    "ClassMetrics",
    "EvalReport",
    "PermutationTestResult",
    "evaluate",
    "auc_pr",
    "pr_curve",
    "macro_f1",
    "permutation_test",
    "write_pr_curve_csv",
]


@dataclass
class PredictionSet:
    """True labels, predicted labels, and per-class score vectors."""

    classes: tuple[str, ...]
    y_true: list
    y_pred: list
    scores: np.ndarray  # shape (n, len(classes)), rows sum to 1

    def __post_init__(self):
        self.classes = tuple(self.classes)
        self.scores = np.asarray(self.scores, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.y_true)

    def validate(self) -> None:
        k = len(self.classes)
        n = len(self.y_true)
        if len(self.y_pred) != n or self.scores.shape != (n, k):
            raise ValueError("prediction set fields have inconsistent sizes")
        allowed = set(self.classes)
        if any(t not in allowed for t in self.y_true) or any(
            p not in allowed for p in self.y_pred
        ):
            raise ValueError("labels outside the declared class list")
        if n and np.abs(self.scores.sum(axis=1) - 1.0).max() > 1e-6:
            raise ValueError("score vectors must sum to 1 within 1e-6")


@dataclass
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    auc_pr: float
    support: int


@dataclass
class EvalReport:
    """Per-class and macro precision/recall/F1/PR-AUC plus confusion counts."""

    classes: tuple[str, ...]
    per_class: dict[str, ClassMetrics]
    macro_precision: float
    macro_recall: float
    macro_f1: float
    macro_auc_pr: float
    accuracy: float
    confusion: list[list[int]] = field(repr=False)  # confusion[true][pred]

    def to_dict(self) -> dict:
        return {
            "classes": list(self.classes),
            "per_class": {
                c: {
                    "precision": m.precision,
                    "recall": m.recall,
                    "f1": m.f1,
                    "auc_pr": m.auc_pr,
                    "support": m.support,
                }
                for c, m in self.per_class.items()
            },
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
                "auc_pr": self.macro_auc_pr,
            },
            "accuracy": self.accuracy,
            "confusion": self.confusion,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def _confusion(classes, y_true, y_pred) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    k = len(classes)
    t = np.array([index[v] for v in y_true], dtype=np.intp)
    p = np.array([index[v] for v in y_pred], dtype=np.intp)
    return np.bincount(t * k + p, minlength=k * k).reshape(k, k)


def evaluate(pred: PredictionSet) -> EvalReport:
    """Compute the full report for one prediction set."""
    pred.validate()
    if len(pred) == 0:
        raise ValueError("cannot evaluate an empty prediction set")
    classes = pred.classes
    conf = _confusion(classes, pred.y_true, pred.y_pred)
    index = {c: i for i, c in enumerate(classes)}
    truths = np.array([index[v] for v in pred.y_true])
    per_class: dict[str, ClassMetrics] = {}
    for i, c in enumerate(classes):
        tp = int(conf[i, i])
        fp = int(conf[:, i].sum()) - tp
        fn = int(conf[i, :].sum()) - tp
        precision = _ratio(tp, tp + fp)
        recall = _ratio(tp, tp + fn)
        f1 = _ratio(2 * precision * recall, precision + recall)
        support = tp + fn
        auc = auc_pr(truths == i, pred.scores[:, i]) if support > 0 else 0.0
        per_class[c] = ClassMetrics(precision, recall, f1, auc, support)
    k = len(classes)
    return EvalReport(
        classes=classes,
        per_class=per_class,
        macro_precision=sum(m.precision for m in per_class.values()) / k,
        macro_recall=sum(m.recall for m in per_class.values()) / k,
        macro_f1=sum(m.f1 for m in per_class.values()) / k,
        macro_auc_pr=sum(m.auc_pr for m in per_class.values()) / k,
        accuracy=float(np.trace(conf)) / len(pred),
        confusion=conf.tolist(),
    )


def auc_pr(truth, scores) -> float:
    """Average precision: sum of (R_n - R_{n-1}) * P_n over prediction ranks.

    Ranks sort by score descending; ties keep stable input order.
    """
    t = np.asarray(truth, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    if t.shape != s.shape or t.ndim != 1:
        raise ValueError("truth and scores must be 1-D and equal length")
    n_pos = int(t.sum())
    if n_pos == 0:
        raise ValueError("auc_pr requires at least one positive")
    order = np.argsort(-s, kind="stable")
    hits = t[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, len(s) + 1)
    return float(precision[hits].sum() / n_pos)


def pr_curve(truth, scores) -> list[tuple[float, float, float]]:
    """(threshold, precision, recall) at every prediction rank, best first."""
    t = np.asarray(truth, dtype=bool)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(t.sum())
    if n_pos == 0:
        raise ValueError("pr_curve requires at least one positive")
    order = np.argsort(-s, kind="stable")
    hits = t[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, len(s) + 1)
    return [
        (float(s[order[i]]), float(tp[i] / ranks[i]), float(tp[i] / n_pos))
        for i in range(len(s))
    ]


def write_pr_curve_csv(path, truth, scores) -> None:
    rows = pr_curve(truth, scores)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["threshold", "precision", "recall"])
        writer.writerows(rows)


def macro_f1(classes, y_true, y_pred) -> float:
    """Unweighted mean of one-vs-rest F1 over `classes` (0 on empty denominators)."""
    conf = _confusion(classes, y_true, y_pred)
    total = 0.0
    for i in range(len(classes)):
        tp = conf[i, i]
        precision = _ratio(tp, conf[:, i].sum())
        recall = _ratio(tp, conf[i, :].sum())
        total += _ratio(2 * precision * recall, precision + recall)
    return total / len(classes)


@dataclass
class PermutationTestResult:
    observed_diff: float
    p_value: float
    diff_samples: list[float]

    def to_dict(self) -> dict:
        return {
            "observed_diff": self.observed_diff,
            "p_value": self.p_value,
            "n_shuffles": len(self.diff_samples),
        }


def permutation_test(
    a: PredictionSet,
    b: PredictionSet,
    n_shuffles: int = 1000,
    seed: int = 42,
) -> PermutationTestResult:
    """Two-sided permutation test on the macro-F1 difference of two sets.

    All (truth, prediction) pairs are pooled; each shuffle repartitions
    the pool into groups of the original sizes and recomputes the
    statistic. Each shuffle derives its own RNG from seed + index, so
    results do not depend on evaluation order. The p-value is smoothed:
    p = (1 + #{|shuffled| >= |observed|}) / (n_shuffles + 1).
    """
    if tuple(a.classes) != tuple(b.classes):
        raise ValueError("prediction sets must share one class list")
    if len(a) == 0 or len(b) == 0:
        raise ValueError("both prediction sets must be non-empty")
    classes = a.classes
    observed = macro_f1(classes, a.y_true, a.y_pred) - macro_f1(
        classes, b.y_true, b.y_pred
    )
    index = {c: i for i, c in enumerate(classes)}
    k = len(classes)
    pool_t = np.array([index[v] for v in list(a.y_true) + list(b.y_true)])
    pool_p = np.array([index[v] for v in list(a.y_pred) + list(b.y_pred)])
    cells = pool_t * k + pool_p
    n_a = len(a)
    n = len(cells)

    def split_f1(conf_flat: np.ndarray) -> float:
        conf = conf_flat.reshape(k, k)
        total = 0.0
        for i in range(k):
            tp = conf[i, i]
            precision = _ratio(tp, conf[:, i].sum())
            recall = _ratio(tp, conf[i, :].sum())
            total += _ratio(2 * precision * recall, precision + recall)
        return total / k

    samples: list[float] = []
    exceed = 0
    for shuffle in range(n_shuffles):
        rng = np.random.default_rng(seed + shuffle)
        perm = rng.permutation(n)
        conf_a = np.bincount(cells[perm[:n_a]], minlength=k * k)
        conf_b = np.bincount(cells[perm[n_a:]], minlength=k * k)
        diff = split_f1(conf_a) - split_f1(conf_b)
        samples.append(diff)
        if abs(diff) >= abs(observed):
            exceed += 1
    p_value = (1 + exceed) / (n_shuffles + 1)
    return PermutationTestResult(observed, p_value, samples)
