"""Command-line entry point: ``linktopics [global flags] <stage> [stage flags]``.

Exit codes: 0 success, 1 invalid input or configuration, 2 missing
prerequisite stage output, 3 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .config import ConfigError, PipelineConfig

EXIT_OK, EXIT_INVALID, EXIT_MISSING, EXIT_RUNTIME = 0, 1, 2, 3
FULL_RUN = ("ingest", "fetch", "extract", "corpus", "train", "track", "report")
SYNTH_RUN = ("synth", "train", "track", "report")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="linktopics", description="Topic discovery and evolution for tweet-linked pages.")
    p.add_argument("--config", help="YAML configuration file (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="override hdp.seed")
    p.add_argument("--jobs", type=int, default=1, help="upper bound on parallel workers (default 1)")
    p.add_argument("--offline", action="store_true", help="serve pages from the cache only")
    p.add_argument("--work-dir", help="override paths.work_dir")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="stage", required=True)

    s = sub.add_parser("ingest", help="parse and filter the tweet stream")
    s.add_argument("--input", help="override paths.input")
    s.add_argument("--strict", action="store_true", default=None, help="stop at the first malformed line")

    s = sub.add_parser("fetch", help="download linked pages into the cache")
    _fetch_flags(s)

    s = sub.add_parser("extract", help="extract main text from fetched pages")
    s.add_argument("--policy", help="JSON file with drop_subtree / unwrap / keep tag lists")

    sub.add_parser("corpus", help="build dictionary, bag-of-words documents and epochs")
    sub.add_parser("train", help="fit one HDP per epoch")
    sub.add_parser("track", help="link topics across epochs and classify events")
    sub.add_parser("report", help="write word-cloud tables and per-tweet topic mixtures")

    s = sub.add_parser("synth", help="generate a synthetic corpus in place of ingest..corpus")
    s.add_argument("--plan", help="plan JSON (default: bundled demo plan)")

    s = sub.add_parser("run", help="run several stages in order")
    s.add_argument("--synth", action="store_true", help="start from a synthetic corpus: synth, train, track, report")
    s.add_argument("--plan", help="plan JSON for --synth")
    s.add_argument("--strict", action="store_true", default=None)
    s.add_argument("--policy")
    _fetch_flags(s)
    return p


def _fetch_flags(s: argparse.ArgumentParser) -> None:
    s.add_argument("--cache-dir", help="override paths.cache_dir")
    s.add_argument("--max-redirects", type=int)
    s.add_argument("--timeout-ms", type=int)
    s.add_argument("--allow-type", action="append", help="accepted media type (repeatable; replaces the configured list)")


def _config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config)
    data = cfg.data
    if args.seed is not None:
        data["hdp"]["seed"] = args.seed
    if args.work_dir:
        data["paths"]["work_dir"] = args.work_dir
    if getattr(args, "input", None):
        data["paths"]["input"] = args.input
    if getattr(args, "cache_dir", None):
        data["paths"]["cache_dir"] = args.cache_dir
    if getattr(args, "max_redirects", None) is not None:
        data["fetch"]["max_redirects"] = args.max_redirects
    if getattr(args, "timeout_ms", None) is not None:
        data["fetch"]["timeout_ms"] = args.timeout_ms
    if getattr(args, "allow_type", None):
        data["fetch"]["allowed_types"] = list(args.allow_type)
    if args.jobs < 1:
        raise ConfigError(["--jobs must be at least 1"])
    # re-validate after command-line overrides
    return PipelineConfig.from_dict(data, cfg.base_dir)


def run_stage(stage: str, cfg: PipelineConfig, args) -> dict:
    if stage == "ingest":
        return pipeline.stage_ingest(cfg, strict=getattr(args, "strict", None))
    if stage == "fetch":
        return pipeline.stage_fetch(cfg, jobs=args.jobs, offline=args.offline)
    if stage == "extract":
        return pipeline.stage_extract(cfg, getattr(args, "policy", None))
    if stage == "corpus":
        return pipeline.stage_corpus(cfg)
    if stage == "synth":
        return pipeline.stage_synth(cfg, getattr(args, "plan", None))
    if stage == "train":
        return pipeline.stage_train(cfg, jobs=args.jobs)
    if stage == "track":
        return pipeline.stage_track(cfg)
    if stage == "report":
        return pipeline.stage_report(cfg)
    raise ValueError(f"unknown stage {stage!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
        stages = (SYNTH_RUN if args.synth else FULL_RUN) if args.stage == "run" else (args.stage,)
        for stage in stages:
            summary = run_stage(stage, cfg, args)
            print(f"{stage}: {json.dumps(summary, sort_keys=True)}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except pipeline.MissingPrerequisite as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (pipeline.InputError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
