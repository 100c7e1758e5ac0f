from __future__ import annotations

import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))  # tests import helpers/oracles directly

from synthdial.corpus import Dialogue, Turn
from synthdial.gateway import Gateway, MockBackend


def make_dialogue(i: int, n_rounds: int = 1, emotion: str = "hopeful") -> Dialogue:
    turns = []
    for r in range(n_rounds):
        turns.append(Turn("speaker", f"speaker line {i}.{r} about the day"))
        turns.append(Turn("listener", f"listener reply {i}.{r} with warmth"))
    return Dialogue(id=f"d{i:03d}", emotion=emotion, turns=turns)


@pytest.fixture
def tiny_corpus() -> list[Dialogue]:
    return [make_dialogue(i, n_rounds=1 + i % 2) for i in range(10)]


@pytest.fixture
def mock_gateway() -> Gateway:
    return Gateway(MockBackend(), concurrency=2, backoff_base=0.0)


def write_corpus_file(path: Path, dialogues) -> Path:
    with open(path, "w", encoding="utf-8") as f:
        for d in dialogues:
            f.write(json.dumps(d.to_dict(), ensure_ascii=False) + "\n")
    return path


def write_pipeline_config(
    dir_path: Path,
    corpus_file: Path,
    *,
    out_dir: Path | None = None,
    threshold: float = 0.0,
    k=0.5,
    n_per_context: int = 2,
    concurrency: int = 2,
    thresholds=(0, 10, 20, 40),
    cache_dir: Path | None = None,
    extra: dict | None = None,
) -> Path:
    import yaml

    tree = {
        "corpus": {"path": str(corpus_file), "format": "jsonl"},
        "split": {"ratios": [0.8, 0.1, 0.1], "seed": 7},
        "endpoints": {
            "generator": {"base_url": "mock://", "model": "gen-model"},
            "discriminator": {"base_url": "mock://", "model": "disc-model"},
            "judge": {"base_url": "mock://", "model": "judge-model"},
            "embedder": {"base_url": "mock://", "model": "embed-model", "embed_dim": 64},
        },
        "generation": {"n_per_context": n_per_context, "base_seed": 0, "split": "train"},
        "quality": {"threshold": threshold},
        "thresholds": list(thresholds),
        "diversity": {"k": k, "seed_index": 0},
        "judge": {},
        "export": {},
        "runtime": {
            "concurrency": concurrency,
            "out_dir": str(out_dir or dir_path / "out"),
            "cache_dir": str(cache_dir) if cache_dir else None,
            "backoff_base": 0.0,
        },
    }
    for key, value in (extra or {}).items():
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    path = dir_path / "config.yaml"
    path.write_text(yaml.safe_dump(tree), encoding="utf-8")
    return path
