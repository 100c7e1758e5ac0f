# cython: language_level=3, boundscheck=False, wraparound=False, initializedcheck=False, cdivision=True
"""Compiled inner loops: farthest-first traversal and LCS table fill."""

import numpy as np


def kcenter_greedy(double[:, ::1] points, Py_ssize_t k, Py_ssize_t seed_index):
    """Farthest-first traversal over `points`, starting at `seed_index`.

    Returns (selected indices in pick order, squared distance of every point
    to its nearest selected center). Ties go to the lowest index.
    """
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t dim = points.shape[1]
    selected_arr = np.empty(k, dtype=np.int64)
    min_d2_arr = np.empty(n, dtype=np.float64)
    taken_arr = np.zeros(n, dtype=np.uint8)
    cdef long long[::1] selected = selected_arr
    cdef double[::1] min_d2 = min_d2_arr
    cdef unsigned char[::1] taken = taken_arr
    cdef Py_ssize_t i, j, t, center, best
    cdef double acc, diff, bestval

    center = seed_index
    selected[0] = center
    taken[center] = 1
    for i in range(n):
        acc = 0.0
        for j in range(dim):
            diff = points[i, j] - points[center, j]
            acc += diff * diff
        min_d2[i] = acc

    for t in range(1, k):
        # argmax over points not yet selected; ties go to the lowest index
        best = -1
        bestval = 0.0
        for i in range(n):
            if taken[i]:
                continue
            if best < 0 or min_d2[i] > bestval:
                bestval = min_d2[i]
                best = i
        selected[t] = best
        taken[best] = 1
        center = best
        for i in range(n):
            acc = 0.0
            for j in range(dim):
                diff = points[i, j] - points[center, j]
                acc += diff * diff
            if acc < min_d2[i]:
                min_d2[i] = acc

    return selected_arr, min_d2_arr


def lcs_length(long long[::1] a, long long[::1] b):
    """Length of the longest common subsequence of two id sequences."""
    cdef Py_ssize_t la = a.shape[0]
    cdef Py_ssize_t lb = b.shape[0]
    if la == 0 or lb == 0:
        return 0
    prev_arr = np.zeros(lb + 1, dtype=np.int64)
    curr_arr = np.zeros(lb + 1, dtype=np.int64)
    cdef long long[::1] prev = prev_arr
    cdef long long[::1] curr = curr_arr
    cdef long long[::1] tmp
    cdef Py_ssize_t i, j
    for i in range(la):
        for j in range(lb):
            if a[i] == b[j]:
                curr[j + 1] = prev[j] + 1
            elif prev[j + 1] >= curr[j]:
                curr[j + 1] = prev[j + 1]
            else:
                curr[j + 1] = curr[j]
        tmp = prev
        prev = curr
        curr = tmp
    return int(prev[lb])
