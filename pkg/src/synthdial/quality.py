"""Similarity-based quality selection.

A reference responder ("discriminator") answers every candidate's context;
candidate and discriminator responses are embedded, and candidates whose
cosine similarity (reported on a 0-100 scale) clears the threshold are kept.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .corpus import Candidate
from .errors import FailureCeilingError, SchemaError
from .gateway import ChatRequest, Gateway, parallel_map


@dataclass
class SimilarityRecord:
    """Scored candidate: similarity = 100 x cosine; selected set by filtering."""

    candidate_id: str
    discriminator_text: str
    similarity: float
    selected: bool = False
    threshold: float | None = None

    def to_dict(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "discriminator_text": self.discriminator_text,
            "similarity": self.similarity,
            "selected": self.selected,
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SimilarityRecord":
        return cls(
            candidate_id=obj["candidate_id"],
            discriminator_text=obj["discriminator_text"],
            similarity=float(obj["similarity"]),
            selected=bool(obj.get("selected", False)),
            threshold=obj.get("threshold"),
        )


def cosine_similarity(a, b) -> float:
    """Cosine of two equal-dimension vectors, in [-1, 1].

    Computed as dot(a,b) / sqrt(dot(a,a) * dot(b,b)), which is exact 1.0 for
    a == b and symmetric bit-for-bit. Results are clamped only against
    floating rounding (excess below 1e-12); larger excess is an error.
    """
    va = np.asarray(getattr(a, "values", a), dtype=np.float64)
    vb = np.asarray(getattr(b, "values", b), dtype=np.float64)
    if va.ndim != 1 or vb.ndim != 1 or va.shape != vb.shape:
        raise SchemaError(f"dimension mismatch: {va.shape} vs {vb.shape}")
    qa = float(np.dot(va, va))
    qb = float(np.dot(vb, vb))
    if qa == 0.0 or qb == 0.0:
        raise ValueError("cosine similarity is undefined for a zero-norm vector")
    s = float(np.dot(va, vb)) / math.sqrt(qa * qb)
    if s > 1.0:
        if s - 1.0 >= 1e-12:
            raise ValueError(f"cosine out of range: {s!r}")
        s = 1.0
    elif s < -1.0:
        if -1.0 - s >= 1e-12:
            raise ValueError(f"cosine out of range: {s!r}")
        s = -1.0
    return s


def discriminator_response(
    context: str,
    gateway: Gateway,
    discriminator_model: str,
    *,
    system_prompt: str | None = None,
    temperature: float = 0.0,
    max_tokens: int = 256,
) -> str:
    """Reference response for one context; cached like any chat call."""
    messages = []
    if system_prompt:
        messages.append({"role": "system", "content": system_prompt})
    messages.append({"role": "user", "content": context})
    return gateway.chat(
        ChatRequest(
            model=discriminator_model,
            messages=messages,
            temperature=temperature,
            max_tokens=max_tokens,
        )
    )


@dataclass
class ScoreFailure:
    candidate_id: str
    error: str

    def to_dict(self) -> dict:
        return {"candidate_id": self.candidate_id, "error": self.error}


@dataclass
class ScoreResult:
    records: list[SimilarityRecord]
    failures: list[ScoreFailure]


def score_candidates(
    candidates: Sequence[Candidate],
    gateway: Gateway,
    embed_model: str,
    discriminator_model: str,
    *,
    embed_gateway: Gateway | None = None,
    system_prompt: str | None = None,
    temperature: float = 0.0,
    max_tokens: int = 256,
    failure_ceiling: float = 1.0,
) -> ScoreResult:
    """One SimilarityRecord per candidate, merged by candidate index.

    `gateway` serves the discriminator; `embed_gateway` (default: same
    gateway) serves embeddings. Per-item failures are recorded and the
    batch continues.
    """
    if not candidates:
        raise SchemaError("score_candidates requires a non-empty candidate list")
    embedder = embed_gateway or gateway

    def one(candidate: Candidate) -> SimilarityRecord:
        r_d = discriminator_response(
            candidate.context_text,
            gateway,
            discriminator_model,
            system_prompt=system_prompt,
            temperature=temperature,
            max_tokens=max_tokens,
        )
        vecs = embedder.embed([r_d, candidate.response_text], embed_model)
        sim = 100.0 * cosine_similarity(vecs[0], vecs[1])
        return SimilarityRecord(
            candidate_id=candidate.candidate_id,
            discriminator_text=r_d,
            similarity=sim,
        )

    results, errors = parallel_map(one, list(candidates), gateway.concurrency)
    records = [r for r in results if r is not None]
    failures = [ScoreFailure(candidates[i].candidate_id, msg) for i, msg in errors]
    result = ScoreResult(records=records, failures=failures)
    if len(failures) > failure_ceiling * len(candidates):
        raise FailureCeilingError(
            f"{len(failures)}/{len(candidates)} scoring items failed, above the "
            f"{failure_ceiling:.0%} ceiling",
            partial=result,
        )
    return result


def filter_by_threshold(
    records: Sequence[SimilarityRecord], threshold: float
) -> tuple[list[SimilarityRecord], list[SimilarityRecord]]:
    """Partition records by strict similarity > threshold (0-100 scale)."""
    if not 0.0 <= threshold <= 100.0:
        raise SchemaError(f"threshold must lie in [0, 100], got {threshold!r}")
    selected: list[SimilarityRecord] = []
    rejected: list[SimilarityRecord] = []
    for rec in records:
        keep = rec.similarity > threshold
        stamped = replace(rec, selected=keep, threshold=threshold)
        (selected if keep else rejected).append(stamped)
    return selected, rejected


def threshold_sweep(
    records: Sequence[SimilarityRecord], thresholds: Sequence[float]
) -> list[tuple[float, int]]:
    """Selected-count per threshold from a single scored pass.

    Thresholds must be sorted ascending; counts are then monotone
    nonincreasing by construction.
    """
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise SchemaError("thresholds must be sorted ascending")
    sims = sorted(rec.similarity for rec in records)
    n = len(sims)
    return [(float(t), n - bisect_right(sims, t)) for t in thresholds]


def sweep_csv(rows: Sequence[tuple[float, int]]) -> str:
    lines = ["threshold,selected_count"]
    lines += [f"{t:g},{count}" for t, count in rows]
    return "\n".join(lines) + "\n"
