#!/usr/bin/env python3
"""
Command-line workbench for two-dimensional forwarding tables.

Usage:
    python main.py build rules.txt --width 4
    python main.py verify rules.txt --width 8 --no-isolation
    python main.py verify --fuzz 100 --width 8
    python main.py replay trace.txt --rules rules.txt --saturation-baseline
    python main.py compress rules.txt --width 6 --dedup=2
    python main.py generate --profile dense-policy --out out/
    python main.py latency --dedup
    python main.py budget --update-rate 500 --source-count 10000

Exit codes: 0 success, 1 verification failure, 2 usage or parse error.
"""

import argparse
import os
import sys
import uuid
from typing import Any

import structlog
from dotenv import load_dotenv
from pydantic import ValidationError

from config import RunConfig, config_path, load_config, validate_config
from errors import EquivalenceError, FistError
from workbench import (
    cmd_budget,
    cmd_build,
    cmd_compress,
    cmd_generate,
    cmd_latency,
    cmd_replay,
    cmd_verify,
    write_generated,
)
from workload_gen import Profile, ScenarioSpec

# Load environment variables
load_dotenv()

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2


def configure_logging():
    """Configure structured logging; logs go to stderr so reports on stdout stay byte-stable."""
    processors = [
        structlog.contextvars.merge_contextvars,
        structlog.processors.add_log_level,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.processors.StackInfoRenderer(),
        structlog.processors.format_exc_info,
    ]

    # Use JSON in production, pretty console output in development
    if os.getenv("ENVIRONMENT", "development") == "production":
        processors.append(structlog.processors.JSONRenderer())
    else:
        processors.append(structlog.dev.ConsoleRenderer())

    structlog.configure(
        processors=processors,
        wrapper_class=structlog.make_filtering_bound_logger(
            int(os.getenv("LOG_LEVEL", "20"))  # INFO = 20
        ),
        context_class=dict,
        logger_factory=structlog.PrintLoggerFactory(file=sys.stderr),
        cache_logger_on_first_use=True,
    )


logger = structlog.get_logger(__name__)


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got: {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config (default: $FIST_CONFIG_PATH or config.yaml)")
    common.add_argument("--width", type=int, help="Address width in bits")
    common.add_argument("--isolation", action=argparse.BooleanOptionalAction, default=None)
    common.add_argument("--non-homogeneous", action=argparse.BooleanOptionalAction, default=None)
    common.add_argument(
        "--dedup",
        nargs="?",
        const=0,
        type=int,
        metavar="WIDTH",
        help="Fixed-block dedup; WIDTH cells per narrow row (config default when omitted)",
    )
    common.add_argument("--acl-compat", action="store_true", default=None)
    common.add_argument("--double-tcam-request", action="store_true", default=None)
    common.add_argument("--seed", type=int)
    common.add_argument("--samples", type=_positive_int)
    common.add_argument("--report", choices=["text", "kv"])

    parser = argparse.ArgumentParser(description="Two-dimensional forwarding table workbench.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", parents=[common], help="Build a table and print dump plus sizes")
    p.add_argument("rules")

    p = sub.add_parser("verify", parents=[common], help="Compare table lookups with the rule-list oracle")
    p.add_argument("rules", nargs="?")
    p.add_argument("--fuzz", type=int, default=0, metavar="SEEDS", help="Also verify SEEDS random rule sets")
    p.add_argument("--fuzz-rules", type=_positive_int, default=200)

    p = sub.add_parser("replay", parents=[common], help="Replay an update trace and report access series")
    p.add_argument("trace")
    p.add_argument("--rules", help="Initial rules (default: empty table)")
    p.add_argument("--saturation-baseline", action="store_true", default=None)

    p = sub.add_parser("compress", parents=[common], help="Run the compression pipeline and report sizes")
    p.add_argument("rules")

    p = sub.add_parser("generate", parents=[common], help="Generate a synthetic scenario")
    p.add_argument("--profile", choices=[x.value for x in Profile], default=Profile.DENSE_POLICY.value)
    p.add_argument("--dest-count", type=_positive_int, default=100)
    p.add_argument("--src-count", type=_positive_int, default=10)
    p.add_argument("--rule-count", type=_positive_int)
    p.add_argument("--action-count", type=_positive_int, default=4)
    p.add_argument("--variation", type=float, default=0.0)
    p.add_argument("--exits", type=int, default=2)
    p.add_argument("--sort-descending", action="store_true")
    p.add_argument("--out", help="Directory for rules.txt and trace.txt / flows.txt")

    sub.add_parser("latency", parents=[common], help="Lookup latency and throughput model")

    p = sub.add_parser("budget", parents=[common], help="SRAM write budget check")
    p.add_argument("--update-rate", type=float, default=500)
    p.add_argument("--source-count", type=int, default=10_000)
    p.add_argument("--trace", help="Replay this trace to measure actual writes per update")
    p.add_argument("--rules", help="Initial rules for --trace")
    return parser


def _load_settings(args: argparse.Namespace) -> RunConfig:
    path = args.config or config_path()
    config: dict[str, Any] = {}
    if args.config or os.path.exists(path):
        config = load_config(path)
        validate_config(config)

    overrides = {
        "width": args.width,
        "isolation": args.isolation,
        "non_homogeneous": args.non_homogeneous,
        "acl_compat": args.acl_compat,
        "double_tcam_request": args.double_tcam_request,
        "seed": args.seed,
        "samples": args.samples,
        "report_format": args.report,
        "saturation_baseline": getattr(args, "saturation_baseline", None),
    }
    if args.dedup:
        overrides["dedup_width"] = args.dedup
    cfg = RunConfig.from_config(config, **overrides)
    if args.dedup == 0:
        overrides["dedup_width"] = cfg.default_dedup_width
        cfg = RunConfig.from_config(config, **overrides)
    return cfg


def run(args: argparse.Namespace) -> int:
    cfg = _load_settings(args)
    fmt = cfg.report_format

    if args.command == "build":
        print(cmd_build(args.rules, cfg).render(fmt), end="")
        return EXIT_OK

    if args.command == "verify":
        result = cmd_verify(args.rules, cfg, fuzz_seeds=args.fuzz, fuzz_rules=args.fuzz_rules)
        print(result.render(fmt), end="")
        return EXIT_OK if result.passed else EXIT_FAILED

    if args.command == "replay":
        print(cmd_replay(args.rules, args.trace, cfg).render(fmt), end="")
        return EXIT_OK

    if args.command == "compress":
        print(cmd_compress(args.rules, cfg).render(fmt) + "\n", end="")
        return EXIT_OK

    if args.command == "generate":
        spec = ScenarioSpec(
            width=cfg.width,
            dest_count=args.dest_count,
            src_count=args.src_count,
            rule_count=args.rule_count,
            action_count=args.action_count,
            profile=Profile(args.profile),
            variation=args.variation,
            exits=args.exits,
            seed=cfg.seed,
        )
        result = cmd_generate(spec, sort_descending=args.sort_descending)
        if args.out:
            for path in write_generated(result, args.out):
                logger.info("file_written", path=str(path))
        else:
            print(result.ruleset.dump(), end="")
        print(result.render(fmt), end="")
        return EXIT_OK

    if args.command == "latency":
        print(cmd_latency(cfg).render(fmt), end="")
        return EXIT_OK

    if args.command == "budget":
        replayed = cmd_replay(args.rules, args.trace, cfg) if args.trace else None
        print(cmd_budget(cfg, args.update_rate, args.source_count, replayed).render(fmt), end="")
        return EXIT_OK

    raise FistError(f"Unknown command: {args.command}")


def main(argv: list[str] | None = None) -> int:
    configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code else EXIT_OK

    structlog.contextvars.bind_contextvars(command=args.command, run_id=uuid.uuid4().hex[:8])
    try:
        return run(args)
    except EquivalenceError as e:
        logger.error("equivalence_violation", error=str(e), witnesses=[str(w) for w in e.witnesses])
        print(f"error: {e}", file=sys.stderr)
        for w in e.witnesses:
            print(f"  {w}", file=sys.stderr)
        return EXIT_FAILED
    except (FistError, ValidationError, ValueError, OSError) as e:
        logger.error("command_failed", error=str(e), error_type=type(e).__name__)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    finally:
        structlog.contextvars.clear_contextvars()


if __name__ == "__main__":
    sys.exit(main())
