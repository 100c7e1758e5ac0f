"""Diverse-subset selection via k-center greedy (farthest-first traversal).

The greedy loop keeps a running min-distance array, so a selection over n
points costs O(k * n * dim). The inner loop lives in `_kernels` (compiled
when available, NumPy otherwise); ties always go to the lowest index.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import SchemaError


@dataclass
class SelectionResult:
    """Greedy pick order plus the covering radius it achieves."""

    selected_indices: list[int]
    covering_radius: float
    k: int
    seed_index: int
    distance_metric: str = "euclidean"
    k_capped: bool = False

    def to_dict(self) -> dict:
        return {
            "selected_indices": self.selected_indices,
            "covering_radius": self.covering_radius,
            "k": self.k,
            "seed_index": self.seed_index,
            "distance_metric": self.distance_metric,
            "k_capped": self.k_capped,
        }


def _as_matrix(points) -> np.ndarray:
    rows = [np.asarray(getattr(p, "values", p), dtype=np.float64) for p in points]
    if not rows:
        raise SchemaError("point set must be non-empty")
    dims = {r.shape for r in rows}
    if len(dims) != 1 or rows[0].ndim != 1:
        raise SchemaError(f"points must share one dimension, got shapes {sorted(dims)}")
    return np.ascontiguousarray(np.stack(rows))


def kcenter_greedy_select(points, k: int, seed_index: int = 0) -> SelectionResult:
    """Select up to k points, each round adding the point farthest from the set.

    k above the population size selects everything and flags `k_capped`
    instead of erroring.
    """
    pts = _as_matrix(points)
    n = pts.shape[0]
    if k < 1:
        raise SchemaError(f"k must be >= 1, got {k}")
    if not 0 <= seed_index < n:
        raise SchemaError(f"seed_index {seed_index} out of range for {n} points")
    capped = k > n
    effective_k = min(k, n)
    selected, min_d2 = _kernels.kcenter_greedy(pts, effective_k, seed_index)
    return SelectionResult(
        selected_indices=[int(i) for i in selected],
        covering_radius=math.sqrt(float(min_d2.max())),
        k=k,
        seed_index=seed_index,
        k_capped=capped,
    )


def covering_radius(points, selected_indices: Sequence[int]) -> float:
    """max over points of the distance to the nearest selected point."""
    pts = _as_matrix(points)
    idx = list(selected_indices)
    if not idx:
        raise SchemaError("selected set must be non-empty")
    centers = pts[idx]
    d2 = ((pts[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    return math.sqrt(float(d2.min(axis=1).max()))


def min_pairwise_distance(points, selected_indices: Sequence[int]) -> float:
    """Smallest distance between two selected points; diagnostic for the
    max-min-spread reading of the selection objective."""
    idx = list(selected_indices)
    if len(idx) < 2:
        raise SchemaError("min_pairwise_distance needs at least two selected points")
    pts = _as_matrix(points)[idx]
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    iu = np.triu_indices(len(idx), k=1)
    return math.sqrt(float(d2[iu].min()))


def l2_normalize(points) -> np.ndarray:
    """Row-normalize embeddings so Euclidean ordering matches cosine ordering."""
    pts = _as_matrix(points)
    norms = np.linalg.norm(pts, axis=1)
    if np.any(norms == 0):
        raise SchemaError("cannot L2-normalize a zero vector")
    return pts / norms[:, None]


def parse_k(value, n: int) -> int:
    """Interpret a k setting: integers are absolute counts, floats in (0, 1]
    are fractions of the population (at least 1)."""
    if isinstance(value, bool):
        raise SchemaError(f"invalid k value {value!r}")
    if isinstance(value, int):
        k = value
    elif isinstance(value, float):
        if not 0.0 < value <= 1.0:
            raise SchemaError(f"fractional k must lie in (0, 1], got {value!r}")
        k = max(1, int(value * n))
    elif isinstance(value, str):
        try:
            return parse_k(int(value), n)
        except ValueError:
            try:
                return parse_k(float(value), n)
            except ValueError:
                raise SchemaError(f"invalid k value {value!r}") from None
    else:
        raise SchemaError(f"invalid k value {value!r}")
    if k < 1:
        raise SchemaError(f"k must be >= 1, got {k}")
    return k


def parse_seed_index(value, n: int) -> int:
    """Seed index setting: an integer, or "random:<prng-seed>" for a seeded draw."""
    if isinstance(value, int) and not isinstance(value, bool):
        return value
    if isinstance(value, str):
        if value.startswith("random:"):
            try:
                prng_seed = int(value.split(":", 1)[1])
            except ValueError:
                raise SchemaError(f"invalid seed-index spec {value!r}") from None
            return random.Random(prng_seed).randrange(n)
        try:
            return int(value)
        except ValueError:
            raise SchemaError(f"invalid seed-index spec {value!r}") from None
    raise SchemaError(f"invalid seed-index spec {value!r}")
