"""Declarative run configuration: one YAML/JSON tree, validated up front.

Relative paths are resolved against the config file's directory. CLI flags
override individual keys after loading. The `runtime` section (concurrency,
cache location, retry policy) never changes outputs, so it is excluded from
the config digest used for stage resumption.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .corpus import ED32_EMOTIONS
from .errors import ConfigError
from .io_utils import canonical_json, sha256_text
from .judge import DIMENSIONS


def _default_prompt(name: str) -> str:
    return str(resources.files("synthdial").joinpath("prompts", name))


def _check_keys(section: str, obj: dict, allowed: set[str]) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in {section}: {sorted(unknown)}")


@dataclass
class EndpointCfg:
    base_url: str = "mock://"
    model: str = "mock"
    api_key_env: str | None = None
    timeout: float = 60.0
    embed_dim: int = 64

    @classmethod
    def from_dict(cls, name: str, obj: dict | None) -> "EndpointCfg":
        obj = obj or {}
        _check_keys(f"endpoints.{name}", obj, {f.name for f in dataclasses.fields(cls)})
        return cls(**obj)


@dataclass
class CorpusCfg:
    path: str = ""
    format: str = "jsonl"
    emotion_labels: Any = None  # None (open set), "ed32", or an explicit list
    csv_columns: dict | None = None
    max_reject_fraction: float = 0.1
    context_turns: int | None = None

    def label_set(self) -> tuple[str, ...] | None:
        if self.emotion_labels is None:
            return None
        if self.emotion_labels == "ed32":
            return ED32_EMOTIONS
        return tuple(self.emotion_labels)


@dataclass
class SplitCfg:
    ratios: list[float] = field(default_factory=lambda: [0.8, 0.1, 0.1])
    seed: int = 0


@dataclass
class GenerationCfg:
    prompt_path: str = ""
    prompt_id: str | None = None
    n_per_context: int = 2
    temperature: float = 0.7
    max_tokens: int = 256
    base_seed: int = 0
    split: str = "train"
    strip_prefixes: list[str] = field(
        default_factory=lambda: ["listener:", "assistant:", "response:"]
    )


@dataclass
class QualityCfg:
    threshold: float = 60.0
    system_prompt: str | None = None
    temperature: float = 0.0
    max_tokens: int = 256


@dataclass
class DiversityCfg:
    k: Any = 0.5  # int count or float fraction
    seed_index: Any = 0  # int or "random:<prng-seed>"
    embeddings_path: str | None = None  # precomputed {candidate_id, vector} JSONL


@dataclass
class JudgeCfg:
    prompts: dict = field(default_factory=dict)
    max_tokens: int = 16


@dataclass
class ExportCfg:
    system_prompt: str | None = None
    mix: float | None = None  # None = concatenate all references
    seed: int = 0


@dataclass
class RuntimeCfg:
    concurrency: int = 4
    cache_dir: str | None = None
    out_dir: str = "out"
    max_attempts: int = 5
    backoff_base: float = 0.5
    failure_ceiling: float = 1.0


_SECTIONS = {
    "corpus": CorpusCfg,
    "split": SplitCfg,
    "generation": GenerationCfg,
    "quality": QualityCfg,
    "diversity": DiversityCfg,
    "judge": JudgeCfg,
    "export": ExportCfg,
    "runtime": RuntimeCfg,
}

ENDPOINT_ROLES = ("generator", "discriminator", "judge", "embedder")


@dataclass
class PipelineConfig:
    corpus: CorpusCfg
    split: SplitCfg
    endpoints: dict[str, EndpointCfg]
    generation: GenerationCfg
    quality: QualityCfg
    thresholds: list[float]
    diversity: DiversityCfg
    judge: JudgeCfg
    export: ExportCfg
    runtime: RuntimeCfg

    @classmethod
    def from_dict(cls, tree: dict, base_dir: str | Path = ".") -> "PipelineConfig":
        if not isinstance(tree, dict):
            raise ConfigError("config root must be a mapping")
        allowed = set(_SECTIONS) | {"endpoints", "thresholds"}
        _check_keys("config", tree, allowed)
        sections = {}
        for name, section_cls in _SECTIONS.items():
            obj = tree.get(name) or {}
            if not isinstance(obj, dict):
                raise ConfigError(f"section {name!r} must be a mapping")
            _check_keys(name, obj, {f.name for f in dataclasses.fields(section_cls)})
            sections[name] = section_cls(**obj)
        endpoints_tree = tree.get("endpoints") or {}
        _check_keys("endpoints", endpoints_tree, set(ENDPOINT_ROLES))
        endpoints = {
            role: EndpointCfg.from_dict(role, endpoints_tree.get(role))
            for role in ENDPOINT_ROLES
        }
        cfg = cls(
            corpus=sections["corpus"],
            split=sections["split"],
            endpoints=endpoints,
            generation=sections["generation"],
            quality=sections["quality"],
            thresholds=list(tree.get("thresholds") or [50.0, 55.0, 60.0, 65.0, 70.0]),
            diversity=sections["diversity"],
            judge=sections["judge"],
            export=sections["export"],
            runtime=sections["runtime"],
        )
        cfg._resolve_paths(Path(base_dir))
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            tree = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {path}: {exc}") from exc
        return cls.from_dict(tree, base_dir=path.parent)

    def _resolve_paths(self, base: Path) -> None:
        def resolve(p: str) -> str:
            return str(p) if Path(p).is_absolute() else str((base / p).resolve())

        if self.corpus.path:
            self.corpus.path = resolve(self.corpus.path)
        self.generation.prompt_path = (
            resolve(self.generation.prompt_path)
            if self.generation.prompt_path
            else _default_prompt("generation_basic.txt")
        )
        prompts = dict(self.judge.prompts or {})
        for dim in DIMENSIONS:
            prompts[dim] = (
                resolve(prompts[dim]) if prompts.get(dim) else _default_prompt(f"judge_{dim}.txt")
            )
        self.judge.prompts = prompts
        if self.diversity.embeddings_path:
            self.diversity.embeddings_path = resolve(self.diversity.embeddings_path)
        if self.runtime.cache_dir:
            self.runtime.cache_dir = resolve(self.runtime.cache_dir)
        self.runtime.out_dir = resolve(self.runtime.out_dir)

    def validate(self) -> None:
        if not self.corpus.path:
            raise ConfigError("corpus.path is required")
        if not Path(self.corpus.path).exists():
            raise ConfigError(f"corpus file not found: {self.corpus.path}")
        if self.corpus.format not in ("jsonl", "csv"):
            raise ConfigError(f"corpus.format must be jsonl or csv, got {self.corpus.format!r}")
        if not 0.0 <= self.corpus.max_reject_fraction <= 1.0:
            raise ConfigError("corpus.max_reject_fraction must lie in [0, 1]")
        if len(self.split.ratios) != 3 or any(r <= 0 for r in self.split.ratios):
            raise ConfigError("split.ratios must be three positive reals")
        if abs(sum(self.split.ratios) - 1.0) > 1e-9:
            raise ConfigError("split.ratios must sum to 1")
        for t in self.thresholds:
            if not 0.0 <= float(t) <= 100.0:
                raise ConfigError(f"threshold {t!r} outside [0, 100]")
        if not 0.0 <= self.quality.threshold <= 100.0:
            raise ConfigError(f"quality.threshold {self.quality.threshold!r} outside [0, 100]")
        if isinstance(self.diversity.k, float) and not 0.0 < self.diversity.k <= 1.0:
            raise ConfigError("fractional diversity.k must lie in (0, 1]")
        if self.generation.n_per_context < 1:
            raise ConfigError("generation.n_per_context must be >= 1")
        if self.generation.split not in ("train", "valid", "test", "all"):
            raise ConfigError("generation.split must be train/valid/test/all")
        if self.runtime.concurrency < 1:
            raise ConfigError("runtime.concurrency must be >= 1")
        if not 0.0 <= self.runtime.failure_ceiling <= 1.0:
            raise ConfigError("runtime.failure_ceiling must lie in [0, 1]")
        if self.export.mix is not None and not 0.0 <= self.export.mix <= 1.0:
            raise ConfigError("export.mix must lie in [0, 1]")
        for path in [self.generation.prompt_path, *self.judge.prompts.values()]:
            if not Path(path).exists():
                raise ConfigError(f"prompt file not found: {path}")

    def semantic_digest(self) -> str:
        """Digest of everything that can change outputs; runtime knobs excluded."""
        tree = {
            "corpus": dataclasses.asdict(self.corpus),
            "split": dataclasses.asdict(self.split),
            "endpoints": {r: dataclasses.asdict(e) for r, e in self.endpoints.items()},
            "generation": dataclasses.asdict(self.generation),
            "quality": dataclasses.asdict(self.quality),
            "thresholds": [float(t) for t in self.thresholds],
            "diversity": dataclasses.asdict(self.diversity),
            "judge": dataclasses.asdict(self.judge),
            "export": dataclasses.asdict(self.export),
        }
        return sha256_text(canonical_json(tree))
