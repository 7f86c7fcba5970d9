import argparse
import logging
import sys

from dataclasses import replace
from pathlib import Path
from typing import List, Optional

from .backend.bundle import Bundle
from .catalog import ingest_catalog, mean_related_degree
from .classes import CliConfig, ScenarioConfig
from .errors import SoftcacheError
from .runner import SweepRunner
from .simkit import build_scenario, placement_summary, run_scheme
from .utils import load_json, resolve_threads, write_placement
from .verify import replay, run_verification


logger = logging.getLogger("softcache.cli")

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="softcache", description="Edge cache placement with soft cache hits")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="-v for info, -vv for debug output")
    parser.add_argument("--threads", type=int, default=None, help="worker processes (default: SOFTCACHE_THREADS or cores)")

    commands = parser.add_subparsers(dest="subcommand", required=True)

    solve = commands.add_parser("solve", help="solve one scenario with one scheme")
    solve.add_argument("--config", required=True, help="scenario JSON file")
    solve.add_argument("--out", required=True, help="output directory for placement.csv")
    solve.add_argument("--scheme", default=None, help="override the scheme named in the config")
    solve.add_argument("--seeds", type=int, nargs="+", default=None, help="override the config seeds")

    sweep = commands.add_parser("sweep", help="run a parameter sweep")
    sweep.add_argument("--config", required=True, help="scenario JSON file with a sweep axis")
    sweep.add_argument("--out", required=True, help="result CSV path")
    sweep.add_argument("--seeds", type=int, nargs="+", default=None, help="override the config seeds")

    ingest = commands.add_parser("ingest", help="convert content and relation CSV files into a bundle")
    ingest.add_argument("--contents", required=True, help="CSV with id,popularity,size_bytes")
    ingest.add_argument("--relations", required=True, help="CSV with src,dst,utility")
    ingest.add_argument("--out", required=True, help="bundle path")

    verify = commands.add_parser("verify", help="run the verification suites")
    verify.add_argument("--scale", choices=("small", "full"), default="small")
    verify.add_argument("--replay", default=None, help="re-check a failure bundle")
    verify.add_argument("--out", default="verify-failures", help="directory for failing instance bundles")
    verify.add_argument("--suite", action="append", default=None, help="run only this suite (repeatable)")
    verify.add_argument("--seeds", type=int, nargs=1, default=None, help="base seed for instance generation")

    return parser


def _load_scenario(cli: CliConfig) -> ScenarioConfig:
    path = Path(cli.config)
    config = ScenarioConfig.from_dict(load_json(path), base_dir=path.parent)
    if cli.seeds:
        config = replace(config, seeds=list(cli.seeds))
    return config


def cmd_solve(cli: CliConfig, scheme: Optional[str] = None) -> int:
    config = _load_scenario(cli)
    if scheme is not None:
        config = replace(config, schemes=[scheme])
    if len(config.schemes) != 1:
        print(f"error: solve needs exactly one scheme, config lists {config.schemes}", file=sys.stderr)
        return EXIT_USAGE

    scenario = build_scenario(config, config.seeds[0])
    outcome = run_scheme(config.schemes[0], scenario, config)
    result = outcome.result

    out_dir = Path(cli.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_placement(out_dir / "placement.csv", result.placement.to_rows())
    logger.info(f"placement: {placement_summary(result.placement)}")

    print(f"scheme: {config.schemes[0]}")
    print(f"objective: {result.objective:.6f}")
    print(f"items: {len(result.placement)}")
    print(f"wall_time_ms: {result.wall_ms:.3f}")

    return EXIT_OK


def cmd_sweep(cli: CliConfig) -> int:
    config = _load_scenario(cli)
    runner = SweepRunner(config, threads=resolve_threads(cli.threads))
    written = runner.run(cli.out)
    print(f"{written} rows written to {cli.out}")
    return EXIT_OK


def cmd_ingest(cli: CliConfig) -> int:
    catalog, utility = ingest_catalog(cli.contents, cli.relations)
    bundle = Bundle(
        kind="catalog",
        catalog=catalog,
        utility=utility,
        params={"contents": str(cli.contents), "relations": str(cli.relations)}
    )
    bundle.save(cli.out)

    print(f"contents: {catalog.num_contents}")
    print(f"relations: {utility.matrix().nnz}")
    print(f"mean_related_degree: {mean_related_degree(utility):.4f}")
    print(f"bundle: {cli.out}")
    return EXIT_OK


def cmd_verify(cli: CliConfig, suites: Optional[List[str]] = None) -> int:
    if cli.replay is not None:
        reports = [replay(cli.replay)]
    else:
        base_seed = cli.seeds[0] if cli.seeds else 0
        reports = run_verification(cli.scale, suites=suites, base_seed=base_seed, failure_dir=cli.out)

    for report in reports:
        print(report.summary())
        for failure in report.failures:
            print(f"  {failure}")
        for path in report.bundles:
            print(f"  instance: {path}")

    return EXIT_OK if all(report.passed for report in reports) else EXIT_VERIFY_FAILED


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        cli = CliConfig(
            subcommand=args.subcommand,
            config=getattr(args, "config", None),
            out=getattr(args, "out", None),
            seeds=getattr(args, "seeds", None),
            verbosity=args.verbose,
            threads=args.threads,
            scale=getattr(args, "scale", "small"),
            replay=getattr(args, "replay", None),
            contents=getattr(args, "contents", None),
            relations=getattr(args, "relations", None)
        )
    except SoftcacheError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=cli.logging_level, format="%(asctime)s %(name)s %(levelname)s: %(message)s")

    try:
        if cli.subcommand == "solve":
            return cmd_solve(cli, scheme=args.scheme)
        if cli.subcommand == "sweep":
            return cmd_sweep(cli)
        if cli.subcommand == "ingest":
            return cmd_ingest(cli)
        return cmd_verify(cli, suites=args.suite)
    except (SoftcacheError, OSError, ValueError) as e:
        logger.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
