"""Stage orchestration over files on disk.

Every stage consumes the previous stage's JSONL output and writes its own,
so any stage can be rerun or inspected in isolation. A manifest per stage
records input/output digests; a stage whose digests and config digest are
unchanged is skipped on rerun.
"""

from __future__ import annotations

import dataclasses
import logging
import random
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import diversity as diversity_mod
from . import judge as judge_mod
from . import metrics as metrics_mod
from . import quality as quality_mod
from .config import PipelineConfig
from .corpus import Candidate, GenMeta, render_context
from .errors import ConfigError, FailureCeilingError, UpstreamDataError
from .gateway import Gateway, make_backend
from .generation import PromptTemplate, generate_candidates
from .io_utils import (
    atomic_write_text,
    read_json,
    read_jsonl,
    sha256_file,
    write_json,
    write_jsonl,
)

logger = logging.getLogger(__name__)

STAGES = ("generate", "quality", "diversity", "judge", "evaluate", "sweep", "export")


@dataclass
class RunManifest:
    stage: str
    status: str
    config_digest: str
    input_digests: dict[str, str]
    output_digests: dict[str, str]
    counts: dict[str, int]
    files: dict[str, str] = field(default_factory=dict)  # logical name -> path
    detail: dict = field(default_factory=dict)
    started_at: str = ""
    finished_at: str = ""
    skipped: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class Pipeline:
    def __init__(self, config: PipelineConfig):
        config.validate()
        self.config = config
        self.out_dir = Path(config.runtime.out_dir)
        self.manifest_dir = self.out_dir / "manifests"
        self._gateways: dict[str, Gateway] = {}
        self._corpus: list | None = None
        self._split = None
        self.paths = {
            "candidates": self.out_dir / "candidates.jsonl",
            "generation_failures": self.out_dir / "generation_failures.jsonl",
            "scored": self.out_dir / "scored.jsonl",
            "selected": self.out_dir / "selected.jsonl",
            "score_failures": self.out_dir / "score_failures.jsonl",
            "diverse": self.out_dir / "diverse.jsonl",
            "selection": self.out_dir / "selection.json",
            "judge_scores": self.out_dir / "judge_scores.jsonl",
            "judge_errors": self.out_dir / "judge_errors.jsonl",
            "judge_report": self.out_dir / "judge_report.json",
            "judge_histogram": self.out_dir / "judge_histogram.csv",
            "eval_hyps": self.out_dir / "eval_hyps.jsonl",
            "eval_refs": self.out_dir / "eval_refs.jsonl",
            "metric_report": self.out_dir / "metric_report.json",
            "sweep": self.out_dir / "sweep.csv",
            "sweep_long": self.out_dir / "sweep_long.csv",
            "sft": self.out_dir / "sft.jsonl",
        }

    # -- shared resources ---------------------------------------------------

    def gateway(self, role: str) -> Gateway:
        if role not in self._gateways:
            ep = self.config.endpoints[role]
            rt = self.config.runtime
            self._gateways[role] = Gateway(
                make_backend(ep.base_url, ep.api_key_env, dim=ep.embed_dim, timeout=ep.timeout),
                cache_dir=rt.cache_dir,
                max_attempts=rt.max_attempts,
                backoff_base=rt.backoff_base,
                concurrency=rt.concurrency,
            )
        return self._gateways[role]

    def corpus(self) -> list:
        if self._corpus is None:
            cfg = self.config.corpus
            result = corpus_mod.load_corpus(
                cfg.path,
                cfg.format,
                emotion_labels=cfg.label_set(),
                csv_columns=cfg.csv_columns,
                max_reject_fraction=cfg.max_reject_fraction,
            )
            if result.rejects:
                logger.warning("corpus load: %d records rejected", len(result.rejects))
            self._corpus = result.dialogues
        return self._corpus

    def split(self):
        if self._split is None:
            self._split = corpus_mod.split_corpus(
                self.corpus(), self.config.split.ratios, self.config.split.seed
            )
        return self._split

    def generation_dialogues(self) -> list:
        which = self.config.generation.split
        return self.corpus() if which == "all" else self.split().part(which)

    def _embed_fn(self):
        gw = self.gateway("embedder")
        model = self.config.endpoints["embedder"].model

        def embed(tokens: list[str]) -> np.ndarray:
            return np.stack([v.values for v in gw.embed(tokens, model)])

        return embed

    # -- manifest helpers ---------------------------------------------------

    def _manifest_path(self, stage: str) -> Path:
        return self.manifest_dir / f"{stage}.json"

    def _digests(self, paths: dict[str, Path]) -> dict[str, str]:
        return {name: sha256_file(p) for name, p in paths.items()}

    def _up_to_date(self, stage: str, input_digests: dict[str, str], outputs: dict[str, Path]) -> RunManifest | None:
        path = self._manifest_path(stage)
        if not path.exists():
            return None
        try:
            prev = read_json(path)
        except ValueError:
            return None
        if prev.get("config_digest") != self.config.semantic_digest():
            return None
        if prev.get("status") != "ok":
            return None
        if prev.get("input_digests") != input_digests:
            return None
        for name, out_path in outputs.items():
            if not out_path.exists():
                return None
        if prev.get("output_digests") != self._digests(outputs):
            return None
        manifest = RunManifest(
            stage=stage,
            status="ok",
            config_digest=prev["config_digest"],
            input_digests=prev["input_digests"],
            output_digests=prev["output_digests"],
            counts=prev.get("counts", {}),
            files=prev.get("files", {}),
            detail=prev.get("detail", {}),
            started_at=prev.get("started_at", ""),
            finished_at=prev.get("finished_at", ""),
            skipped=True,
        )
        return manifest

    def _require(self, name: str) -> Path:
        path = self.paths[name]
        if not path.exists():
            raise UpstreamDataError(f"missing upstream artifact: {path}")
        return path

    def _run_stage(self, stage: str, inputs: dict[str, Path], outputs: dict[str, Path], body) -> RunManifest:
        for name, p in inputs.items():
            if not Path(p).exists():
                raise UpstreamDataError(f"{stage}: missing input {p}")
        input_digests = self._digests(inputs)
        cached = self._up_to_date(stage, input_digests, outputs)
        if cached is not None:
            logger.info("stage %s: up to date, skipped", stage)
            return cached
        started = _now()
        status = "ok"
        try:
            counts, detail = body()
        except FailureCeilingError as exc:
            status = "failed_ceiling"
            counts = {"in": 0, "out": 0, "failed": 0}
            detail = {"error": str(exc)}
            partial_counts = getattr(exc, "partial_counts", None)
            if partial_counts:
                counts = partial_counts
            manifest = RunManifest(
                stage=stage,
                status=status,
                config_digest=self.config.semantic_digest(),
                input_digests=input_digests,
                output_digests={n: sha256_file(p) for n, p in outputs.items() if p.exists()},
                counts=counts,
                files={n: str(p) for n, p in outputs.items() if p.exists()},
                detail=detail,
                started_at=started,
                finished_at=_now(),
            )
            write_json(self._manifest_path(stage), manifest.to_dict())
            raise
        manifest = RunManifest(
            stage=stage,
            status=status,
            config_digest=self.config.semantic_digest(),
            input_digests=input_digests,
            output_digests=self._digests(outputs),
            counts=counts,
            files={n: str(p) for n, p in outputs.items()},
            detail=detail,
            started_at=started,
            finished_at=_now(),
        )
        write_json(self._manifest_path(stage), manifest.to_dict())
        return manifest

    # -- stages ---------------------------------------------------------------

    def stage_generate(self) -> RunManifest:
        cfg = self.config
        outputs = {
            "candidates": self.paths["candidates"],
            "generation_failures": self.paths["generation_failures"],
        }

        def body():
            dialogues = self.generation_dialogues()
            template = PromptTemplate.from_file(
                cfg.generation.prompt_path, cfg.generation.prompt_id
            )
            n = cfg.generation.n_per_context
            try:
                result = generate_candidates(
                    dialogues,
                    template,
                    n,
                    self.gateway("generator"),
                    model=cfg.endpoints["generator"].model,
                    temperature=cfg.generation.temperature,
                    max_tokens=cfg.generation.max_tokens,
                    base_seed=cfg.generation.base_seed,
                    context_turns=cfg.corpus.context_turns,
                    strip_prefixes=cfg.generation.strip_prefixes,
                    failure_ceiling=cfg.runtime.failure_ceiling,
                )
            except FailureCeilingError as exc:
                if exc.partial is not None:
                    corpus_mod.write_candidates(outputs["candidates"], exc.partial.candidates)
                    write_jsonl(
                        outputs["generation_failures"],
                        (f.to_dict() for f in exc.partial.failures),
                    )
                    exc.partial_counts = {
                        "in": len(dialogues) * n,
                        "out": len(exc.partial.candidates),
                        "failed": len(exc.partial.failures),
                    }
                raise
            corpus_mod.write_candidates(outputs["candidates"], result.candidates)
            write_jsonl(outputs["generation_failures"], (f.to_dict() for f in result.failures))
            counts = {
                "in": len(dialogues) * n,
                "out": len(result.candidates),
                "failed": len(result.failures),
            }
            return counts, {"dialogues": len(dialogues), "n_per_context": n}

        return self._run_stage("generate", {"corpus": Path(cfg.corpus.path)}, outputs, body)

    def stage_quality(self) -> RunManifest:
        cfg = self.config
        inputs = {"candidates": self._require("candidates")}
        outputs = {
            "scored": self.paths["scored"],
            "selected": self.paths["selected"],
            "score_failures": self.paths["score_failures"],
        }

        def body():
            candidates = corpus_mod.read_candidates(inputs["candidates"])
            threshold = cfg.quality.threshold
            if not candidates:
                write_jsonl(outputs["scored"], [])
                write_jsonl(outputs["selected"], [])
                write_jsonl(outputs["score_failures"], [])
                return {"in": 0, "out": 0, "failed": 0}, {"threshold": threshold}
            result = quality_mod.score_candidates(
                candidates,
                self.gateway("discriminator"),
                cfg.endpoints["embedder"].model,
                cfg.endpoints["discriminator"].model,
                embed_gateway=self.gateway("embedder"),
                system_prompt=cfg.quality.system_prompt,
                temperature=cfg.quality.temperature,
                max_tokens=cfg.quality.max_tokens,
                failure_ceiling=cfg.runtime.failure_ceiling,
            )
            selected, rejected = quality_mod.filter_by_threshold(result.records, threshold)
            stamped = {r.candidate_id: r for r in selected + rejected}
            ordered = [
                stamped[c.candidate_id] for c in candidates if c.candidate_id in stamped
            ]
            write_jsonl(outputs["scored"], (r.to_dict() for r in ordered))
            by_id = {c.candidate_id: c for c in candidates}
            kept = [by_id[r.candidate_id] for r in ordered if r.selected]
            corpus_mod.write_candidates(outputs["selected"], kept)
            write_jsonl(outputs["score_failures"], (f.to_dict() for f in result.failures))
            counts = {
                "in": len(candidates),
                "out": len(kept),
                "failed": len(candidates) - len(kept),
            }
            detail = {
                "threshold": threshold,
                "rejected": len(rejected),
                "score_errors": len(result.failures),
            }
            return counts, detail

        return self._run_stage("quality", inputs, outputs, body)

    def stage_diversity(self) -> RunManifest:
        cfg = self.config
        inputs = {"selected": self._require("selected")}
        if cfg.diversity.embeddings_path:
            path = Path(cfg.diversity.embeddings_path)
            if not path.exists():
                raise UpstreamDataError(f"diversity: embeddings file not found: {path}")
            inputs["embeddings"] = path
        outputs = {"diverse": self.paths["diverse"], "selection": self.paths["selection"]}

        def body():
            candidates = corpus_mod.read_candidates(inputs["selected"])
            if not candidates:
                corpus_mod.write_candidates(outputs["diverse"], [])
                write_json(outputs["selection"], {"n_input": 0, "selection": None})
                return {"in": 0, "out": 0, "failed": 0}, {}
            if "embeddings" in inputs:
                vectors = self._load_embeddings(inputs["embeddings"], candidates)
            else:
                gw = self.gateway("embedder")
                model = cfg.endpoints["embedder"].model
                vectors = gw.embed([c.response_text for c in candidates], model)
            points = diversity_mod.l2_normalize(vectors)
            k = diversity_mod.parse_k(cfg.diversity.k, len(candidates))
            seed_index = diversity_mod.parse_seed_index(cfg.diversity.seed_index, len(candidates))
            result = diversity_mod.kcenter_greedy_select(points, k, seed_index)
            keep = sorted(result.selected_indices)
            corpus_mod.write_candidates(outputs["diverse"], [candidates[i] for i in keep])
            selection = result.to_dict()
            if len(result.selected_indices) >= 2:
                selection["min_pairwise_distance"] = diversity_mod.min_pairwise_distance(
                    points, result.selected_indices
                )
            write_json(outputs["selection"], {"n_input": len(candidates), "selection": selection})
            counts = {
                "in": len(candidates),
                "out": len(keep),
                "failed": len(candidates) - len(keep),
            }
            return counts, {"k": k, "seed_index": seed_index}

        return self._run_stage("diversity", inputs, outputs, body)

    def stage_judge(self) -> RunManifest:
        cfg = self.config
        inputs = {"diverse": self._require("diverse")}
        outputs = {
            "judge_scores": self.paths["judge_scores"],
            "judge_errors": self.paths["judge_errors"],
            "judge_report": self.paths["judge_report"],
            "judge_histogram": self.paths["judge_histogram"],
        }

        def body():
            candidates = corpus_mod.read_candidates(inputs["diverse"])
            prompts = judge_mod.load_judge_prompts(cfg.judge.prompts)
            if candidates:
                result = judge_mod.judge_batch(
                    candidates,
                    self.gateway("judge"),
                    prompts,
                    cfg.endpoints["judge"].model,
                    max_tokens=cfg.judge.max_tokens,
                    failure_ceiling=cfg.runtime.failure_ceiling,
                )
            else:
                result = judge_mod.JudgeBatchResult(scores=[], errors=[])
            write_jsonl(outputs["judge_scores"], (s.to_dict() for s in result.scores))
            write_jsonl(outputs["judge_errors"], result.errors)
            if result.scores:
                report = judge_mod.aggregate(result.scores)
                write_json(outputs["judge_report"], report.to_dict())
                atomic_write_text(outputs["judge_histogram"], judge_mod.histogram_csv(report))
            else:
                empty = {
                    "mean_score": None,
                    "full_marks_fraction": None,
                    "per_dimension_histograms": {d: [0, 0, 0] for d in judge_mod.DIMENSIONS},
                    "n_items": 0,
                }
                write_json(outputs["judge_report"], empty)
                lines = ["dimension,score,count"] + [
                    f"{d},{s},0" for d in judge_mod.DIMENSIONS for s in (1, 2, 3)
                ]
                atomic_write_text(outputs["judge_histogram"], "\n".join(lines) + "\n")
            counts = {
                "in": len(candidates),
                "out": len(result.scores),
                "failed": len(result.errors),
            }
            return counts, {}

        return self._run_stage("judge", inputs, outputs, body)

    def stage_evaluate(self) -> RunManifest:
        cfg = self.config
        inputs = {
            "diverse": self._require("diverse"),
            "corpus": Path(cfg.corpus.path),
        }
        outputs = {
            "eval_hyps": self.paths["eval_hyps"],
            "eval_refs": self.paths["eval_refs"],
            "metric_report": self.paths["metric_report"],
        }

        def body():
            candidates = corpus_mod.read_candidates(inputs["diverse"])
            if not candidates:
                raise UpstreamDataError("evaluate: no curated candidates to score")
            by_id = {d.id: d for d in self.corpus()}
            missing = sorted({c.dialogue_id for c in candidates} - set(by_id))
            if missing:
                raise UpstreamDataError(f"evaluate: dialogue ids not in corpus: {missing}")
            write_jsonl(
                outputs["eval_hyps"],
                ({"id": c.candidate_id, "text": c.response_text} for c in candidates),
            )
            write_jsonl(
                outputs["eval_refs"],
                (
                    {"id": c.candidate_id, "text": by_id[c.dialogue_id].reference_response}
                    for c in candidates
                ),
            )
            report = metrics_mod.evaluate_all(
                outputs["eval_hyps"], outputs["eval_refs"], self._embed_fn()
            )
            write_json(outputs["metric_report"], report.to_dict())
            n = report.n_pairs
            return {"in": n, "out": n, "failed": 0}, {}

        return self._run_stage("evaluate", inputs, outputs, body)

    def stage_sweep(self) -> RunManifest:
        cfg = self.config
        inputs = {"scored": self._require("scored")}
        outputs = {"sweep": self.paths["sweep"], "sweep_long": self.paths["sweep_long"]}

        def body():
            records = [quality_mod.SimilarityRecord.from_dict(o) for o in read_jsonl(inputs["scored"])]
            thresholds = sorted(float(t) for t in cfg.thresholds)
            rows = quality_mod.threshold_sweep(records, thresholds)
            atomic_write_text(outputs["sweep"], quality_mod.sweep_csv(rows))
            long_lines = ["threshold,series,value"] + [
                f"{t:g},selected_count,{count}" for t, count in rows
            ]
            atomic_write_text(outputs["sweep_long"], "\n".join(long_lines) + "\n")
            return {"in": len(records), "out": len(rows), "failed": 0}, {
                "thresholds": thresholds
            }

        return self._run_stage("sweep", inputs, outputs, body)

    def stage_export(self) -> RunManifest:
        cfg = self.config
        inputs = {
            "diverse": self._require("diverse"),
            "corpus": Path(cfg.corpus.path),
        }
        outputs = {"sft": self.paths["sft"]}

        def body():
            candidates = corpus_mod.read_candidates(inputs["diverse"])
            references = self._reference_records()
            count = corpus_mod.export_sft(
                references + candidates,
                outputs["sft"],
                system_prompt=cfg.export.system_prompt,
            )
            return (
                {"in": len(references) + len(candidates), "out": count, "failed": 0},
                {"references": len(references), "candidates": len(candidates)},
            )

        return self._run_stage("export", inputs, outputs, body)

    @staticmethod
    def _load_embeddings(path: Path, candidates) -> list[np.ndarray]:
        """Vectors for every candidate from a {candidate_id, vector} JSONL file."""
        table: dict[str, np.ndarray] = {}
        for obj in read_jsonl(path):
            if "candidate_id" not in obj or "vector" not in obj:
                raise UpstreamDataError(f"{path}: records need candidate_id and vector")
            table[obj["candidate_id"]] = np.asarray(obj["vector"], dtype=np.float64)
        missing = [c.candidate_id for c in candidates if c.candidate_id not in table]
        if missing:
            raise UpstreamDataError(f"{path}: no vector for candidate(s) {missing[:5]}")
        return [table[c.candidate_id] for c in candidates]

    def _reference_records(self) -> list[Candidate]:
        """Training-split dialogues recast as candidate-shaped records.

        mix = None concatenates the whole split; a fraction keeps a seeded
        sample of that size.
        """
        cfg = self.config
        train = sorted(self.split().train, key=lambda d: d.id)
        if cfg.export.mix is not None:
            count = int(cfg.export.mix * len(train))
            train = sorted(
                random.Random(cfg.export.seed).sample(train, count), key=lambda d: d.id
            )
        return [
            Candidate(
                candidate_id=f"ref:{d.id}",
                dialogue_id=d.id,
                context_text=render_context(d, cfg.corpus.context_turns),
                response_text=d.reference_response,
                gen_meta=GenMeta(
                    endpoint_model="reference",
                    prompt_id="reference",
                    temperature=0.0,
                    request_hash="",
                ),
            )
            for d in train
        ]

    def run(self, stages: list[str] | None = None) -> list[RunManifest]:
        wanted = list(stages) if stages else list(STAGES)
        unknown = set(wanted) - set(STAGES)
        if unknown:
            raise ConfigError(f"unknown stage(s): {sorted(unknown)}")
        runners = {
            "generate": self.stage_generate,
            "quality": self.stage_quality,
            "diversity": self.stage_diversity,
            "judge": self.stage_judge,
            "evaluate": self.stage_evaluate,
            "sweep": self.stage_sweep,
            "export": self.stage_export,
        }
        manifests = []
        for stage in STAGES:
            if stage in wanted:
                manifests.append(runners[stage]())
        return manifests
