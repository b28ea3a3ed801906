"""Plain-Python reference computations, written without numpy vectorization.

They share no code with the package and exist only to check it.
"""
from __future__ import annotations

import itertools
import math


def pearson(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = sum((a - mx) ** 2 for a in x)
    syy = sum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def pearson_matrix(rows):
    """Condensed correlations of the columns of a list of T rows."""
    cols = list(zip(*rows))
    v = len(cols)
    return [pearson(cols[i], cols[j]) for i in range(v) for j in range(i + 1, v)]


def same_pairs(labels, subset=None):
    idx = range(len(labels)) if subset is None else sorted(subset)
    return {(i, j) for i, j in itertools.combinations(idx, 2) if labels[i] == labels[j]}


def dice(a, b, subset=None):
    pa, pb = same_pairs(a, subset), same_pairs(b, subset)
    if not pa and not pb:
        return 1.0
    return 2 * len(pa & pb) / (len(pa) + len(pb))


def set_partitions(n):
    """Every partition of range(n) as a restricted-growth label list."""
    def grow(prefix, top):
        if len(prefix) == n:
            yield list(prefix)
            return
        for lab in range(top + 2):
            yield from grow(prefix + [lab], max(top, lab))
    if n == 0:
        yield []
        return
    yield from grow([0], 0)


def sample_variance(values):
    n = len(values)
    m = sum(values) / n
    return sum((v - m) ** 2 for v in values) / (n - 1)


def common_noise(diffs_per_subject):
    """diffs_per_subject: list over subjects of lists over pairs."""
    n = len(diffs_per_subject)
    out = []
    for p in range(len(diffs_per_subject[0])):
        col = [d[p] for d in diffs_per_subject]
        m = sum(col) / n
        out.append(sum((c - m) ** 2 for c in col) / (2 * (n - 1)))
    return out
