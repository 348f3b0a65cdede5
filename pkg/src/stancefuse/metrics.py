"""Confusion-matrix metrics weighted by true-class support, and one-vs-rest AUC.

Weights are ``w_i = n_i / sum_j n_j`` with ``n_i`` the number of true
instances of class ``i``. Weighted F1 is the weighted sum of per-class F1
scores. Classes with a zero denominator score 0 and raise
:class:`UndefinedMetricWarning`.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .dataset import StanceLabel
from .errors import DataError

N_CLASSES = len(StanceLabel)


class UndefinedMetricWarning(UserWarning):
    pass


def confusion(preds: Sequence[int], truth: Sequence[int], n_classes: int = N_CLASSES) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    p = np.asarray(preds, dtype=np.int64).reshape(-1)
    t = np.asarray(truth, dtype=np.int64).reshape(-1)
    if p.size != t.size:
        raise DataError(f"{p.size} predictions for {t.size} labels")
    if p.size == 0:
        raise DataError("confusion matrix of no examples")
    if min(p.min(), t.min()) < 0 or max(p.max(), t.max()) >= n_classes:
        raise DataError(f"labels must lie in [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    return cm


def _check(cm) -> np.ndarray:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise DataError(f"confusion matrix must be square, got {cm.shape}")
    if cm.sum() <= 0:
        raise DataError("empty confusion matrix")
    if (cm < 0).any():
        raise DataError("confusion matrix has negative counts")
    return cm


def accuracy(cm) -> float:
    cm = _check(cm)
    return float(np.trace(cm) / cm.sum())


def support_weights(cm) -> np.ndarray:
    n = _check(cm).sum(axis=1).astype(np.float64)
    return n / n.sum()


def _safe_ratio(num: np.ndarray, den: np.ndarray, what: str) -> np.ndarray:
    out = np.zeros_like(num, dtype=np.float64)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    if not ok.all():
        bad = [StanceLabel(i).name if i < N_CLASSES else str(i) for i in np.flatnonzero(~ok)]
        warnings.warn(f"{what} undefined for {', '.join(bad)}; scored as 0", UndefinedMetricWarning, stacklevel=3)
    return out


def per_class_precision(cm) -> np.ndarray:
    cm = _check(cm).astype(np.float64)
    return _safe_ratio(np.diag(cm), cm.sum(axis=0), "precision")


def per_class_recall(cm) -> np.ndarray:
    cm = _check(cm).astype(np.float64)
    return _safe_ratio(np.diag(cm), cm.sum(axis=1), "recall")


def per_class_f1(cm) -> np.ndarray:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedMetricWarning)
        p, r = per_class_precision(cm), per_class_recall(cm)
    return _safe_ratio(2.0 * p * r, p + r, "F1")


def weighted_precision(cm) -> float:
    return float(support_weights(cm) @ per_class_precision(cm))


def weighted_recall(cm) -> float:
    return float(support_weights(cm) @ per_class_recall(cm))


def weighted_f1(cm) -> float:
    return float(support_weights(cm) @ per_class_f1(cm))


# --------------------------------------------------------------------------- AUC


def binary_auc(scores: Sequence[float], positive: Sequence[bool]) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positive, dtype=bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs at least one positive and one negative")
    ranks = rankdata(s, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def per_class_auc(scores, truth) -> dict[int, float]:
    """One-vs-rest AUC for every class that has both positives and negatives."""
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(truth, dtype=np.int64).reshape(-1)
    if s.ndim != 2 or s.shape[0] != t.size:
        raise DataError(f"scores must be n x classes with n = {t.size}, got {s.shape}")
    out = {}
    for c in range(s.shape[1]):
        is_pos = t == c
        if is_pos.all() or not is_pos.any():
            warnings.warn(
                f"class {c} has no {'negatives' if is_pos.all() else 'positives'}; excluded from AUC",
                UndefinedMetricWarning,
                stacklevel=2,
            )
            continue
        out[c] = binary_auc(s[:, c], is_pos)
    return out


def weighted_auc(scores, truth) -> float:
    """Support-weighted one-vs-rest AUC; weights renormalised over evaluable classes."""
    t = np.asarray(truth, dtype=np.int64).reshape(-1)
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim == 2 and not np.allclose(s.sum(axis=1), 1.0, atol=1e-6):
        raise DataError("score rows must be probability distributions")
    aucs = per_class_auc(s, t)
    if not aucs:
        raise DataError("no class has both positives and negatives; AUC undefined")
    n = np.bincount(t, minlength=s.shape[1]).astype(np.float64)
    classes = sorted(aucs)
    w = n[classes] / n[classes].sum()
    return float(np.dot(w, [aucs[c] for c in classes]))


def roc_curve(scores: Sequence[float], positive: Sequence[bool]) -> list[tuple[float, float]]:
    """(fpr, tpr) points, one per distinct threshold, from (0, 0) to (1, 1)."""
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positive, dtype=bool)
    order = np.argsort(-s, kind="stable")
    s, pos = s[order], pos[order]
    n_pos, n_neg = pos.sum(), (~pos).sum()
    cut = np.r_[np.flatnonzero(np.diff(s)), s.size - 1]
    tps = np.cumsum(pos)[cut]
    fps = np.cumsum(~pos)[cut]
    pts = [(0.0, 0.0)]
    pts += [(float(f / max(n_neg, 1)), float(tp / max(n_pos, 1))) for f, tp in zip(fps, tps)]
    return pts


# --------------------------------------------------------------------------- report


@dataclass
class MetricsReport:
    accuracy: float
    precision_weighted: float
    recall_weighted: float
    f1_weighted: float
    auc_weighted: float | None
    per_class: dict[str, dict[str, float]]
    confusion: list[list[int]]
    n_examples: int
    class_weights: list[float] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "precision_weighted": self.precision_weighted,
            "recall_weighted": self.recall_weighted,
            "f1_weighted": self.f1_weighted,
            "auc_weighted": self.auc_weighted,
            "per_class": self.per_class,
            "confusion": self.confusion,
            "n_examples": self.n_examples,
            "class_weights": self.class_weights,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n", encoding="utf-8")


def evaluate(preds: Sequence[int], truth: Sequence[int], scores=None) -> MetricsReport:
    cm = confusion(preds, truth)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedMetricWarning)
        p, r, f = per_class_precision(cm), per_class_recall(cm), per_class_f1(cm)
    aucs: dict[int, float] = {}
    auc = None
    if scores is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UndefinedMetricWarning)
            aucs = per_class_auc(scores, truth)
            if aucs:
                auc = weighted_auc(scores, truth)
    w = support_weights(cm)
    per_class = {
        lab.name: {
            "precision": float(p[lab]),
            "recall": float(r[lab]),
            "f1": float(f[lab]),
            "support": int(cm[lab].sum()),
            "auc": aucs.get(int(lab)),
        }
        for lab in StanceLabel
    }
    return MetricsReport(
        accuracy=accuracy(cm),
        precision_weighted=float(w @ p),
        recall_weighted=float(w @ r),
        f1_weighted=float(w @ f),
        auc_weighted=auc,
        per_class=per_class,
        confusion=cm.tolist(),
        n_examples=int(cm.sum()),
        class_weights=[float(x) for x in w],
    )


def write_roc_csvs(scores, truth, out_dir) -> list[Path]:
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(truth, dtype=np.int64)
    written = []
    for lab in StanceLabel:
        pos = t == lab
        if pos.all() or not pos.any():
            continue
        path = Path(out_dir) / f"roc_{lab.name.lower()}.csv"
        lines = ["fpr,tpr"] + [f"{a!r},{b!r}" for a, b in roc_curve(s[:, lab], pos)]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        written.append(path)
    return written
