"""Prompt rendering and raw candidate-pool generation."""

from __future__ import annotations

import string
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .corpus import Candidate, Dialogue, GenMeta, render_context
from .errors import FailureCeilingError, TemplateError
from .gateway import ChatRequest, Gateway, cache_key, parallel_map

DEFAULT_STRIP_PREFIXES = ("listener:", "assistant:", "response:")
_QUOTE_PAIRS = (('"', '"'), ("'", "'"), ("“", "”"))


def _placeholders(text: str) -> set[str]:
    names = set()
    try:
        for _, name, _, _ in string.Formatter().parse(text):
            if name is not None:
                names.add(name)
    except ValueError as exc:
        raise TemplateError(f"unbalanced braces: {exc}") from exc
    return names


@dataclass(frozen=True)
class PromptTemplate:
    """Template with named placeholders rendered against a dialogue.

    `required` placeholders must appear; anything outside `allowed` is a
    load-time error, so rendering can never leave a hole.
    """

    prompt_id: str
    template_text: str
    required: frozenset[str] = frozenset({"context"})
    allowed: frozenset[str] = frozenset({"context", "emotion"})

    def __post_init__(self):
        names = _placeholders(self.template_text)
        missing = self.required - names
        if missing:
            raise TemplateError(
                f"template {self.prompt_id!r} is missing placeholder(s): {sorted(missing)}"
            )
        unknown = names - self.allowed
        if unknown:
            raise TemplateError(
                f"template {self.prompt_id!r} has unresolved placeholder(s): "
                f"{sorted(n or '<positional>' for n in unknown)}"
            )

    @classmethod
    def from_file(cls, path: str | Path, prompt_id: str | None = None, **kwargs) -> "PromptTemplate":
        path = Path(path)
        return cls(prompt_id or path.stem, path.read_text(encoding="utf-8"), **kwargs)

    def render(self, **fields: str) -> str:
        return self.template_text.format(**{name: fields.get(name, "") for name in self.allowed})


def render_prompt(template: PromptTemplate, dialogue: Dialogue, context_turns: int | None = None) -> str:
    return template.render(
        context=render_context(dialogue, context_turns), emotion=dialogue.emotion
    )


def clean_response(text: str, strip_prefixes: Sequence[str] = DEFAULT_STRIP_PREFIXES) -> str:
    """Strip role prefixes and surrounding quote pairs from a raw completion."""
    out = text.strip()
    changed = True
    while changed and out:
        changed = False
        for prefix in strip_prefixes:
            if out.lower().startswith(prefix.lower()):
                out = out[len(prefix):].lstrip()
                changed = True
        for left, right in _QUOTE_PAIRS:
            if len(out) >= 2 and out.startswith(left) and out.endswith(right):
                out = out[1:-1].strip()
                changed = True
    return out


@dataclass
class GenerationFailure:
    dialogue_id: str
    sample_index: int
    error: str

    def to_dict(self) -> dict:
        return {
            "dialogue_id": self.dialogue_id,
            "sample_index": self.sample_index,
            "error": self.error,
        }


@dataclass
class GenerationResult:
    """Candidates in (dialogue index, sample index) order, plus per-item failures."""

    candidates: list[Candidate]
    failures: list[GenerationFailure]


def generate_candidates(
    dialogues: Sequence[Dialogue],
    template: PromptTemplate,
    n_per_context: int,
    gateway: Gateway,
    *,
    model: str,
    temperature: float = 0.7,
    max_tokens: int = 256,
    base_seed: int = 0,
    context_turns: int | None = None,
    strip_prefixes: Sequence[str] = DEFAULT_STRIP_PREFIXES,
    failure_ceiling: float = 1.0,
) -> GenerationResult:
    """Sample `n_per_context` responses per dialogue through the gateway.

    Each sample gets its own request seed (base_seed + sample index) so
    repeated draws differ under temperature sampling. Per-item failures are
    recorded without aborting; a failure rate above `failure_ceiling` raises
    FailureCeilingError carrying the partial result.
    """
    if n_per_context < 1:
        raise ValueError(f"n_per_context must be >= 1, got {n_per_context}")

    items = [(di, j) for di in range(len(dialogues)) for j in range(n_per_context)]

    def one(item: tuple[int, int]) -> Candidate:
        di, j = item
        dialogue = dialogues[di]
        prompt = render_prompt(template, dialogue, context_turns)
        req = ChatRequest(
            model=model,
            messages=[{"role": "user", "content": prompt}],
            temperature=temperature,
            max_tokens=max_tokens,
            seed=base_seed + j,
        )
        reply = gateway.chat(req)
        response = clean_response(reply, strip_prefixes)
        if not response:
            raise ValueError("response empty after post-processing")
        return Candidate(
            candidate_id=f"{dialogue.id}#{j}",
            dialogue_id=dialogue.id,
            context_text=render_context(dialogue, context_turns),
            response_text=response,
            gen_meta=GenMeta(
                endpoint_model=model,
                prompt_id=template.prompt_id,
                temperature=temperature,
                request_hash=cache_key(req),
            ),
        )

    results, errors = parallel_map(one, items, gateway.concurrency)
    candidates = [c for c in results if c is not None]
    failures = [
        GenerationFailure(dialogue_id=dialogues[items[i][0]].id, sample_index=items[i][1], error=msg)
        for i, msg in errors
    ]
    result = GenerationResult(candidates=candidates, failures=failures)
    if items and len(failures) > failure_ceiling * len(items):
        raise FailureCeilingError(
            f"{len(failures)}/{len(items)} generation requests failed, above the "
            f"{failure_ceiling:.0%} ceiling",
            partial=result,
        )
    return result
