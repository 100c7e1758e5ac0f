"""Command-line entry point for the pipeline.

Exit codes: 0 success, 1 usage/config error, 2 upstream-data error,
3 backend-failure ceiling.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import PipelineConfig
from .errors import (
    ConfigError,
    FailureCeilingError,
    RejectCeilingError,
    SchemaError,
    SynthdialError,
    TransportError,
    UpstreamDataError,
)
from .pipeline import STAGES, Pipeline

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_UPSTREAM = 2
EXIT_BACKEND = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="synthdial", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="pipeline config file (YAML)")
        p.add_argument("--threshold", type=float, help="override quality.threshold")
        p.add_argument("--k", help="override diversity.k (count or fraction)")
        p.add_argument("--seed", type=int, help="override split.seed and generation.base_seed")
        p.add_argument("--concurrency", type=int, help="override runtime.concurrency")
        p.add_argument("--cache-dir", help="override runtime.cache_dir")
        p.add_argument("--out", help="override runtime.out_dir")

    stage_commands = {
        "generate": ["generate"],
        "quality-filter": ["quality"],
        "diversity-select": ["diversity"],
        "judge": ["judge"],
        "sweep": ["sweep"],
    }
    for name in stage_commands:
        common(sub.add_parser(name, help=f"run the {name} stage"))

    p_eval = sub.add_parser("evaluate", help="score hypotheses against references")
    common(p_eval)
    p_eval.add_argument("--hyp", help="hypothesis JSONL ({id, text}); default: pipeline output")
    p_eval.add_argument("--ref", help="reference JSONL ({id, text[, texts]})")

    p_export = sub.add_parser("export-sft", help="write chat-format training records")
    common(p_export)
    p_export.add_argument(
        "--mix", type=float, help="fraction of the reference training split to include"
    )

    p_run = sub.add_parser("run", help="run pipeline stages in order")
    common(p_run)
    p_run.add_argument(
        "--stages",
        default=",".join(STAGES),
        help=f"comma-separated subset of: {','.join(STAGES)}",
    )
    return parser


def _load_config(args) -> PipelineConfig:
    config = PipelineConfig.from_file(args.config)
    if args.threshold is not None:
        config.quality.threshold = args.threshold
    if args.k is not None:
        raw = str(args.k)
        try:
            config.diversity.k = float(raw) if "." in raw else int(raw)
        except ValueError:
            raise ConfigError(f"invalid --k value {raw!r}") from None
    if args.seed is not None:
        config.split.seed = args.seed
        config.generation.base_seed = args.seed
    if args.concurrency is not None:
        config.runtime.concurrency = args.concurrency
    if args.cache_dir is not None:
        config.runtime.cache_dir = str(Path(args.cache_dir).resolve())
    if args.out is not None:
        config.runtime.out_dir = str(Path(args.out).resolve())
    if getattr(args, "mix", None) is not None:
        config.export.mix = args.mix
    return config


def _print_manifests(manifests) -> None:
    for m in manifests:
        state = "skipped" if m.skipped else m.status
        counts = m.counts
        print(
            f"{m.stage:<10} {state:<8} in={counts.get('in', 0)} "
            f"out={counts.get('out', 0)} failed={counts.get('failed', 0)}"
        )


def _evaluate_standalone(args, config: PipelineConfig) -> int:
    from .io_utils import write_json
    from .metrics import evaluate_all

    pipe = Pipeline(config)
    report = evaluate_all(args.hyp, args.ref, pipe._embed_fn())
    out_path = Path(config.runtime.out_dir) / "metric_report.json"
    write_json(out_path, report.to_dict())
    print(f"evaluate   ok       pairs={report.n_pairs} report={out_path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    command_stages = {
        "generate": ["generate"],
        "quality-filter": ["quality"],
        "diversity-select": ["diversity"],
        "judge": ["judge"],
        "evaluate": ["evaluate"],
        "sweep": ["sweep"],
        "export-sft": ["export"],
    }
    try:
        config = _load_config(args)
        if args.command == "evaluate" and (args.hyp or args.ref):
            if not (args.hyp and args.ref):
                raise ConfigError("evaluate needs both --hyp and --ref (or neither)")
            return _evaluate_standalone(args, config)
        if args.command == "run":
            stages = [s.strip() for s in args.stages.split(",") if s.strip()]
        else:
            stages = command_stages[args.command]
        manifests = Pipeline(config).run(stages)
        _print_manifests(manifests)
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (UpstreamDataError, SchemaError, RejectCeilingError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM
    except (FailureCeilingError, TransportError) as exc:
        print(f"backend failure: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except SynthdialError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UPSTREAM


if __name__ == "__main__":
    sys.exit(main())
