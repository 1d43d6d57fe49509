"""Independent reference implementations used as test oracles.

Written with plain Python loops and the math module so they share no code path with the package.
"""

from __future__ import annotations

import itertools
import math


def re_brute(p_from, p_to, K):
    total = 0.0
    for a, b in zip(p_to, p_from):
        if a == 0:
            continue
        if b == 0:
            return math.inf
        total += a * (math.log(a / b) / math.log(K))
    return total


def kmedoids_optimum(points, k):
    def d(x, y):
        return math.sqrt(sum((a - b) ** 2 for a, b in zip(x, y)))

    best = math.inf
    for combo in itertools.combinations(range(len(points)), k):
        cost = sum(min(d(p, points[m]) for m in combo) for p in points)
        best = min(best, cost)
    return best


def gini_root_brute(X, y, min_leaf=1):
    """Largest n*G - nL*GL - nR*GR over every (feature, midpoint) candidate with both children
    holding at least ``min_leaf`` rows."""
    def g(labels):
        n = len(labels)
        if n == 0:
            return 0.0
        p = sum(labels) / n
        return n * (1 - p * p - (1 - p) * (1 - p))

    rows = list(range(len(y)))
    parent = g([y[i] for i in rows])
    best = 0.0
    for f in range(len(X[0])):
        vals = sorted(set(X[i][f] for i in rows))
        for lo, hi in zip(vals, vals[1:]):
            thr = (lo + hi) / 2
            left = [y[i] for i in rows if X[i][f] <= thr]
            right = [y[i] for i in rows if X[i][f] > thr]
            if len(left) >= min_leaf and len(right) >= min_leaf:
                best = max(best, parent - g(left) - g(right))
    return best
