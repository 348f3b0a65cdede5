"""Brute-force reference implementations, written independently of the package.

They work from explicit (truth, prediction) pairs or raw counts with plain
Python loops and no numpy vectorisation.
"""

from __future__ import annotations

import itertools


def counts_from_cm(cm):
    """Per-class TP, FP, FN and support from a square nested list."""
    n = len(cm)
    out = []
    for i in range(n):
        tp = cm[i][i]
        fp = sum(cm[r][i] for r in range(n) if r != i)
        fn = sum(cm[i][c] for c in range(n) if c != i)
        support = sum(cm[i][c] for c in range(n))
        out.append((tp, fp, fn, support))
    return out


def expand(cm):
    """The (truth, prediction) pairs a confusion matrix summarises."""
    pairs = []
    for t, row in enumerate(cm):
        for p, k in enumerate(row):
            pairs.extend([(t, p)] * int(k))
    return pairs


def accuracy(cm):
    pairs = expand(cm)
    return sum(1 for t, p in pairs if t == p) / len(pairs)


def _ratio(a, b):
    return a / b if b else 0.0


def weighted(cm, which):
    stats = counts_from_cm(cm)
    total = sum(s[3] for s in stats)
    acc = 0.0
    for tp, fp, fn, support in stats:
        prec = _ratio(tp, tp + fp)
        rec = _ratio(tp, tp + fn)
        value = {"precision": prec, "recall": rec, "f1": _ratio(2 * prec * rec, prec + rec)}[which]
        acc += (support / total) * value
    return acc


def pairwise_auc(scores, positive):
    """Probability a random positive outranks a random negative, ties count one half."""
    pos = [s for s, y in zip(scores, positive) if y]
    neg = [s for s, y in zip(scores, positive) if not y]
    wins = 0.0
    for a, b in itertools.product(pos, neg):
        wins += 1.0 if a > b else 0.5 if a == b else 0.0
    return wins / (len(pos) * len(neg))


def weighted_auc(scores, truth, n_classes=3):
    total, acc = 0, 0.0
    for c in range(n_classes):
        positive = [t == c for t in truth]
        n_pos = sum(positive)
        if n_pos == 0 or n_pos == len(truth):
            continue
        acc += n_pos * pairwise_auc([row[c] for row in scores], positive)
        total += n_pos
    return acc / total
