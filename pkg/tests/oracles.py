"""Brute-force definitional metric computations used as test oracles.

These are deliberately naive: ranks by counting, Pearson by explicit
sums, AUC by enumerating all positive/negative pairs, MCC by tabulating
the confusion counts one row at a time.
"""

import math


def rank_by_counting(values):
    """Average ranks: 1 + number of smaller values + half of the other
    equal values."""
    ranks = []
    for v in values:
        smaller = sum(1 for u in values if u < v)
        equal = sum(1 for u in values if u == v)
        ranks.append(1 + smaller + (equal - 1) / 2.0)
    return ranks


def pearson_explicit(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    if sxx == 0 or syy == 0:
        return None
    return sxy / math.sqrt(sxx * syy)


def spearman_bruteforce(x, y):
    return pearson_explicit(rank_by_counting(x), rank_by_counting(y))


def auc_pair_counting(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    if not pos or not neg:
        return None
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


def mcc_tabulated(scores, labels, threshold):
    if all(labels) or not any(labels):
        return None
    tp = fp = tn = fn = 0
    for s, l in zip(scores, labels):
        pred = s >= threshold
        if pred and l:
            tp += 1
        elif pred and not l:
            fp += 1
        elif not pred and l:
            fn += 1
        else:
            tn += 1
    denom = math.sqrt((tp + fp) * (tp + fn) * (tn + fp) * (tn + fn))
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / denom
