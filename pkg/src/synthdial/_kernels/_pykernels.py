"""Pure NumPy/Python fallback for the compiled kernels.

Same contracts as `_ckernels`: identical pick order (ties to the lowest
index) and identical integer DP results.
"""

from __future__ import annotations

import numpy as np


def kcenter_greedy(points, k, seed_index):
    pts = np.ascontiguousarray(points, dtype=np.float64)
    n = pts.shape[0]
    selected = np.empty(k, dtype=np.int64)
    selected[0] = seed_index
    taken = np.zeros(n, dtype=bool)
    taken[seed_index] = True
    diff = pts - pts[seed_index]
    min_d2 = np.einsum("ij,ij->i", diff, diff)
    for t in range(1, k):
        # argmax over points not yet selected; first occurrence wins ties
        masked = np.where(taken, -np.inf, min_d2)
        best = int(np.argmax(masked))
        selected[t] = best
        taken[best] = True
        diff = pts - pts[best]
        d2 = np.einsum("ij,ij->i", diff, diff)
        np.minimum(min_d2, d2, out=min_d2)
    return selected, min_d2


def lcs_length(a, b) -> int:
    xs = [int(x) for x in a]
    ys = [int(y) for y in b]
    if not xs or not ys:
        return 0
    prev = [0] * (len(ys) + 1)
    for x in xs:
        curr = [0] * (len(ys) + 1)
        for j, y in enumerate(ys):
            curr[j + 1] = prev[j] + 1 if x == y else max(prev[j + 1], curr[j])
        prev = curr
    return prev[-1]
