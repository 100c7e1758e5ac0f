"""Dialogue corpus ingest, validation, splitting, and SFT export."""

from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, RejectCeilingError, SchemaError
from .io_utils import write_jsonl

SPEAKER = "speaker"
LISTENER = "listener"

# Standard 32-label emotion set of the usual speaker/listener benchmark corpus.
# Validation is opt-in: corpora with other label vocabularies load fine.
ED32_EMOTIONS = (
    "afraid", "angry", "annoyed", "anticipating", "anxious", "apprehensive",
    "ashamed", "caring", "confident", "content", "devastated", "disappointed",
    "disgusted", "embarrassed", "excited", "faithful", "furious", "grateful",
    "guilty", "hopeful", "impressed", "jealous", "joyful", "lonely",
    "nostalgic", "prepared", "proud", "sad", "sentimental", "surprised",
    "terrified", "trusting",
)


@dataclass(frozen=True)
class Turn:
    speaker: str
    text: str

    def to_dict(self) -> dict:
        return {"speaker": self.speaker, "text": self.text}


@dataclass
class Dialogue:
    """One conversation: alternating speaker/listener turns ending on the listener."""

    id: str
    emotion: str
    turns: list[Turn]

    @property
    def reference_response(self) -> str:
        return self.turns[-1].text

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "emotion": self.emotion,
            "turns": [t.to_dict() for t in self.turns],
        }


@dataclass
class RejectRecord:
    location: str
    reason: str


@dataclass
class LoadResult:
    """Validated dialogues plus the rejects report for one load.

    `len(dialogues) + len(rejects)` always equals the number of input records.
    """

    dialogues: list[Dialogue]
    rejects: list[RejectRecord]


@dataclass
class CorpusSplit:
    train: list[Dialogue]
    valid: list[Dialogue]
    test: list[Dialogue]
    seed: int

    def part(self, name: str) -> list[Dialogue]:
        try:
            return getattr(self, name)
        except AttributeError:
            raise ConfigError(f"unknown split part {name!r}") from None


@dataclass
class GenMeta:
    endpoint_model: str
    prompt_id: str
    temperature: float
    request_hash: str

    def to_dict(self) -> dict:
        return {
            "endpoint_model": self.endpoint_model,
            "prompt_id": self.prompt_id,
            "temperature": self.temperature,
            "request_hash": self.request_hash,
        }


@dataclass
class Candidate:
    """A generated response tied to a dialogue context."""

    candidate_id: str
    dialogue_id: str
    context_text: str
    response_text: str
    gen_meta: GenMeta

    def __post_init__(self):
        if not self.response_text.strip():
            raise SchemaError(f"candidate {self.candidate_id}: empty response text")

    def to_dict(self) -> dict:
        return {
            "candidate_id": self.candidate_id,
            "dialogue_id": self.dialogue_id,
            "context_text": self.context_text,
            "response_text": self.response_text,
            "gen_meta": self.gen_meta.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "Candidate":
        meta = obj["gen_meta"]
        return cls(
            candidate_id=obj["candidate_id"],
            dialogue_id=obj["dialogue_id"],
            context_text=obj["context_text"],
            response_text=obj["response_text"],
            gen_meta=GenMeta(
                endpoint_model=meta["endpoint_model"],
                prompt_id=meta["prompt_id"],
                temperature=float(meta["temperature"]),
                request_hash=meta["request_hash"],
            ),
        )


def validate_dialogue(obj: dict, emotion_labels: Sequence[str] | None = None) -> Dialogue:
    """Build a Dialogue from a raw record, raising SchemaError on any violation."""
    if not isinstance(obj, dict):
        raise SchemaError("record is not an object")
    did = obj.get("id")
    if not isinstance(did, str) or not did:
        raise SchemaError("missing or empty id")
    emotion = obj.get("emotion")
    if not isinstance(emotion, str) or not emotion:
        raise SchemaError(f"{did}: missing or empty emotion")
    if emotion_labels and emotion not in emotion_labels:
        raise SchemaError(f"{did}: emotion {emotion!r} not in the configured label set")
    raw_turns = obj.get("turns")
    if not isinstance(raw_turns, list) or not raw_turns:
        raise SchemaError(f"{did}: turns missing or empty")
    turns: list[Turn] = []
    for i, raw in enumerate(raw_turns):
        if not isinstance(raw, dict):
            raise SchemaError(f"{did}: turn {i} is not an object")
        speaker = raw.get("speaker")
        text = raw.get("text")
        if speaker not in (SPEAKER, LISTENER):
            raise SchemaError(f"{did}: turn {i} has invalid speaker {speaker!r}")
        if not isinstance(text, str) or not text.strip():
            raise SchemaError(f"{did}: turn {i} has empty text")
        expected = SPEAKER if i % 2 == 0 else LISTENER
        if speaker != expected:
            raise SchemaError(f"{did}: turn {i} breaks speaker/listener alternation")
        turns.append(Turn(speaker=speaker, text=text))
    if turns[-1].speaker != LISTENER:
        raise SchemaError(f"{did}: dialogue must end with a listener turn")
    return Dialogue(id=did, emotion=emotion, turns=turns)


def load_corpus(
    path: str | Path,
    fmt: str = "jsonl",
    *,
    emotion_labels: Sequence[str] | None = None,
    csv_columns: dict[str, str] | None = None,
    max_reject_fraction: float = 0.1,
) -> LoadResult:
    """Load and validate a corpus; malformed records land in the rejects report.

    Aborts with RejectCeilingError when rejects exceed `max_reject_fraction`
    of the input records.
    """
    path = Path(path)
    if fmt == "jsonl":
        result = _load_jsonl(path, emotion_labels)
    elif fmt == "csv":
        result = _load_csv(path, emotion_labels, csv_columns)
    else:
        raise ConfigError(f"unknown corpus format {fmt!r}")

    total = len(result.dialogues) + len(result.rejects)
    if total and len(result.rejects) > max_reject_fraction * total:
        raise RejectCeilingError(
            f"{len(result.rejects)}/{total} records rejected, above the "
            f"{max_reject_fraction:.0%} ceiling; first: "
            f"{result.rejects[0].location}: {result.rejects[0].reason}"
        )
    return result


def _load_jsonl(path: Path, emotion_labels) -> LoadResult:
    dialogues: list[Dialogue] = []
    rejects: list[RejectRecord] = []
    seen_ids: set[str] = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            where = f"{path.name}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                rejects.append(RejectRecord(where, f"invalid JSON: {exc.msg}"))
                continue
            try:
                dialogue = validate_dialogue(obj, emotion_labels)
            except SchemaError as exc:
                rejects.append(RejectRecord(where, str(exc)))
                continue
            if dialogue.id in seen_ids:
                rejects.append(RejectRecord(where, f"duplicate id {dialogue.id!r}"))
                continue
            seen_ids.add(dialogue.id)
            dialogues.append(dialogue)
    return LoadResult(dialogues=dialogues, rejects=rejects)


def _load_csv(path: Path, emotion_labels, csv_columns: dict[str, str] | None) -> LoadResult:
    if not csv_columns:
        raise ConfigError("CSV loading requires an explicit column mapping in config")
    for key in ("id", "emotion", "text"):
        if key not in csv_columns:
            raise ConfigError(f"CSV column mapping is missing the {key!r} role")
    id_col = csv_columns["id"]
    emo_col = csv_columns["emotion"]
    text_col = csv_columns["text"]
    speaker_col = csv_columns.get("speaker")
    index_col = csv_columns.get("turn_index")

    groups: dict[str, list[dict]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        for row in reader:
            did = (row.get(id_col) or "").strip()
            key = did or f"<row {reader.line_num}>"
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(row)

    dialogues: list[Dialogue] = []
    rejects: list[RejectRecord] = []
    seen_ids: set[str] = set()
    for key in order:
        rows = groups[key]
        if index_col:
            try:
                rows = sorted(rows, key=lambda r: int(r[index_col]))
            except (KeyError, TypeError, ValueError):
                rejects.append(RejectRecord(key, f"non-numeric {index_col!r} column"))
                continue
        turns = []
        for i, row in enumerate(rows):
            if speaker_col:
                speaker = (row.get(speaker_col) or "").strip().lower()
            else:
                speaker = SPEAKER if i % 2 == 0 else LISTENER
            turns.append({"speaker": speaker, "text": row.get(text_col)})
        record = {
            "id": key,
            "emotion": (rows[0].get(emo_col) or "").strip(),
            "turns": turns,
        }
        try:
            dialogue = validate_dialogue(record, emotion_labels)
        except SchemaError as exc:
            rejects.append(RejectRecord(key, str(exc)))
            continue
        if dialogue.id in seen_ids:
            rejects.append(RejectRecord(key, f"duplicate id {dialogue.id!r}"))
            continue
        seen_ids.add(dialogue.id)
        dialogues.append(dialogue)
    return LoadResult(dialogues=dialogues, rejects=rejects)


def render_context(dialogue: Dialogue, context_turns: int | None = None) -> str:
    """Flatten the dialogue history, withholding the final listener turn.

    `context_turns` limits the history to its last N turns; None keeps all.
    """
    history = dialogue.turns[:-1]
    if context_turns:
        history = history[-context_turns:]
    label = {SPEAKER: "Speaker", LISTENER: "Listener"}
    return "\n".join(f"{label[t.speaker]}: {t.text}" for t in history)


def split_corpus(
    dialogues: Sequence[Dialogue],
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
) -> CorpusSplit:
    """Deterministic train/valid/test partition by seeded shuffle over ids."""
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise SchemaError(f"ratios must be three positive reals, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SchemaError(f"ratios must sum to 1, got {sum(ratios)!r}")
    ids = [d.id for d in dialogues]
    if len(set(ids)) != len(ids):
        raise SchemaError("duplicate dialogue ids")
    n = len(dialogues)
    if n < 3:
        raise SchemaError(f"cannot split {n} dialogues three ways")

    # Shuffle a sorted copy so the outcome depends only on (id set, seed).
    order = sorted(dialogues, key=lambda d: d.id)
    random.Random(seed).shuffle(order)

    sizes = _allocate(n, ratios)
    train = order[: sizes[0]]
    valid = order[sizes[0] : sizes[0] + sizes[1]]
    test = order[sizes[0] + sizes[1] :]
    return CorpusSplit(train=train, valid=valid, test=test, seed=seed)


def _allocate(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder apportionment: each size within 1 of its target."""
    targets = [n * r for r in ratios]
    sizes = [int(t) for t in targets]
    remainders = sorted(
        range(len(ratios)), key=lambda i: (-(targets[i] - sizes[i]), i)
    )
    for i in remainders[: n - sum(sizes)]:
        sizes[i] += 1
    return sizes


def write_corpus(path: str | Path, dialogues: Iterable[Dialogue]) -> int:
    return write_jsonl(path, (d.to_dict() for d in dialogues))


def write_candidates(path: str | Path, candidates: Iterable[Candidate]) -> int:
    return write_jsonl(path, (c.to_dict() for c in candidates))


def read_candidates(path: str | Path) -> list[Candidate]:
    from .io_utils import read_jsonl

    return [Candidate.from_dict(obj) for obj in read_jsonl(path)]


def export_sft(
    candidates: Sequence[Candidate],
    path: str | Path,
    fmt: str = "chat_jsonl",
    *,
    system_prompt: str | None = None,
) -> int:
    """Write one chat-style training record per candidate; returns the count.

    Records carry candidate/dialogue ids next to the messages so an export
    can be loaded back losslessly.
    """
    if fmt != "chat_jsonl":
        raise ConfigError(f"unknown SFT export format {fmt!r}")

    def record(c: Candidate) -> dict:
        messages = []
        if system_prompt:
            messages.append({"role": "system", "content": system_prompt})
        messages.append({"role": "user", "content": c.context_text})
        messages.append({"role": "assistant", "content": c.response_text})
        return {
            "candidate_id": c.candidate_id,
            "dialogue_id": c.dialogue_id,
            "messages": messages,
        }

    return write_jsonl(path, (record(c) for c in candidates))


def load_sft(path: str | Path) -> list[dict]:
    """Read back an SFT export, checking the record shape."""
    from .io_utils import read_jsonl

    records = []
    for i, obj in enumerate(read_jsonl(path)):
        messages = obj.get("messages")
        if not isinstance(messages, list) or not messages:
            raise SchemaError(f"record {i}: missing messages")
        for m in messages:
            if m.get("role") not in ("system", "user", "assistant") or not isinstance(
                m.get("content"), str
            ):
                raise SchemaError(f"record {i}: malformed message {m!r}")
        records.append(obj)
    return records
