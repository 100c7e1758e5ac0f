"""LLM-judge scoring: per-dimension 1-3 scores and corpus aggregates."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .corpus import Candidate
from .errors import FailureCeilingError, JudgeParseError, SchemaError
from .gateway import ChatRequest, Gateway, parallel_map
from .generation import PromptTemplate

DIMENSIONS = ("coherence", "naturalness", "empathy")
JUDGE_PLACEHOLDERS = frozenset({"context", "response"})
_SCORE_RE = re.compile(r"\b([123])\b")
_RETRY_NUDGE = "Reply with a single number: 1, 2, or 3."


def judge_template(text: str, prompt_id: str) -> PromptTemplate:
    """Judge prompts must reference the response; context is optional."""
    return PromptTemplate(
        prompt_id=prompt_id,
        template_text=text,
        required=frozenset({"response"}),
        allowed=JUDGE_PLACEHOLDERS,
    )


def load_judge_prompts(paths: Mapping[str, str]) -> dict[str, PromptTemplate]:
    missing = set(DIMENSIONS) - set(paths)
    if missing:
        raise SchemaError(f"missing judge prompt(s) for: {sorted(missing)}")
    out = {}
    for dim in DIMENSIONS:
        out[dim] = judge_template(Path(paths[dim]).read_text(encoding="utf-8"), f"judge_{dim}")
    return out


def parse_score(reply: str) -> int | None:
    """First standalone 1/2/3 token in the reply, or None."""
    match = _SCORE_RE.search(reply)
    return int(match.group(1)) if match else None


@dataclass
class QualityScores:
    candidate_id: str
    coherence: int
    naturalness: int
    empathy: int
    raw_judge_outputs: list[str]

    def __post_init__(self):
        for dim in DIMENSIONS:
            if getattr(self, dim) not in (1, 2, 3):
                raise SchemaError(f"{self.candidate_id}: {dim} score must be 1, 2, or 3")

    def item_mean(self) -> float:
        return (self.coherence + self.naturalness + self.empathy) / 3

    def to_dict(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "coherence": self.coherence,
            "naturalness": self.naturalness,
            "empathy": self.empathy,
            "raw_judge_outputs": self.raw_judge_outputs,
        }


@dataclass
class JudgeReport:
    mean_score: float
    full_marks_fraction: float
    per_dimension_histograms: dict[str, list[int]]
    n_items: int

    def to_dict(self) -> dict:
        return {
            "mean_score": self.mean_score,
            "full_marks_fraction": self.full_marks_fraction,
            "per_dimension_histograms": self.per_dimension_histograms,
            "n_items": self.n_items,
        }


def judge_item(
    candidate: Candidate,
    dimension: str,
    gateway: Gateway,
    prompts: Mapping[str, PromptTemplate],
    model: str,
    *,
    max_tokens: int = 16,
) -> tuple[int, str]:
    """Score one candidate on one dimension; returns (score, raw reply).

    Judge calls run at temperature 0. A reply without a standalone 1/2/3
    gets one reprompt nudge; a second parse failure raises JudgeParseError.
    """
    if dimension not in DIMENSIONS:
        raise SchemaError(f"unknown judge dimension {dimension!r}")
    rendered = prompts[dimension].render(
        context=candidate.context_text, response=candidate.response_text
    )
    messages = [{"role": "user", "content": rendered}]
    reply = gateway.chat(
        ChatRequest(model=model, messages=messages, temperature=0.0, max_tokens=max_tokens)
    )
    score = parse_score(reply)
    if score is not None:
        return score, reply
    retry_messages = messages + [
        {"role": "assistant", "content": reply},
        {"role": "user", "content": _RETRY_NUDGE},
    ]
    retry_reply = gateway.chat(
        ChatRequest(model=model, messages=retry_messages, temperature=0.0, max_tokens=max_tokens)
    )
    score = parse_score(retry_reply)
    if score is None:
        raise JudgeParseError(
            f"{candidate.candidate_id}/{dimension}: no score in {retry_reply[:80]!r}"
        )
    return score, retry_reply


@dataclass
class JudgeBatchResult:
    scores: list[QualityScores]
    errors: list[dict]


def judge_batch(
    candidates: Sequence[Candidate],
    gateway: Gateway,
    prompts: Mapping[str, PromptTemplate],
    model: str,
    *,
    max_tokens: int = 16,
    failure_ceiling: float = 1.0,
) -> JudgeBatchResult:
    """Three judge calls per item; items with any parse error go to the
    errors manifest instead of the report."""

    def one(candidate: Candidate) -> QualityScores:
        values: dict[str, int] = {}
        raws: list[str] = []
        for dim in DIMENSIONS:
            score, raw = judge_item(
                candidate, dim, gateway, prompts, model, max_tokens=max_tokens
            )
            values[dim] = score
            raws.append(raw)
        return QualityScores(candidate_id=candidate.candidate_id, raw_judge_outputs=raws, **values)

    results, errors = parallel_map(one, list(candidates), gateway.concurrency)
    scores = [s for s in results if s is not None]
    manifest = [
        {"candidate_id": candidates[i].candidate_id, "error": msg} for i, msg in errors
    ]
    result = JudgeBatchResult(scores=scores, errors=manifest)
    if candidates and len(manifest) > failure_ceiling * len(candidates):
        raise FailureCeilingError(
            f"{len(manifest)}/{len(candidates)} judge items failed, above the "
            f"{failure_ceiling:.0%} ceiling",
            partial=result,
        )
    return result


def aggregate(scores: Sequence[QualityScores]) -> JudgeReport:
    """Corpus aggregate: mean of per-item dimension means, full-marks share,
    and one 3-bin histogram per dimension."""
    if not scores:
        raise SchemaError("cannot aggregate an empty score list")
    n = len(scores)
    # integer accumulation, one division: exact and permutation-invariant
    total = sum(s.coherence + s.naturalness + s.empathy for s in scores)
    mean_score = total / (3 * n)
    full = sum(1 for s in scores if s.coherence == s.naturalness == s.empathy == 3)
    histograms = {}
    for dim in DIMENSIONS:
        bins = [0, 0, 0]
        for s in scores:
            bins[getattr(s, dim) - 1] += 1
        histograms[dim] = bins
    return JudgeReport(
        mean_score=mean_score,
        full_marks_fraction=full / n,
        per_dimension_histograms=histograms,
        n_items=n,
    )


def histogram_csv(report: JudgeReport) -> str:
    lines = ["dimension,score,count"]
    for dim in DIMENSIONS:
        for score, count in enumerate(report.per_dimension_histograms[dim], start=1):
            lines.append(f"{dim},{score},{count}")
    return "\n".join(lines) + "\n"
