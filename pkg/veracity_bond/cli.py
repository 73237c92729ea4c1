"""Command line entry point: ``veracity-bond <subcommand>``.

Exit codes: 0 success, 1 validation error, 2 golden-table mismatch,
3 replay divergence.
"""
import argparse
import glob
import json
import logging
import os
import sys
from fractions import Fraction
from typing import List, Optional

import numpy as np
import pandas as pd
from smart_open import open

from veracity_bond import __version__, reader, writer
from veracity_bond.capacity import (
    CapacityQuery,
    ServerModel,
    capacity_table,
    capacity_table_layout,
    check_capacity_golden,
    dispute_rate_from_volume,
    min_jurors,
    parse_platform,
    parse_staffing,
    verify_stability,
)
from veracity_bond.collusion import (
    CollusionQuery,
    RiskMode,
    check_collusion_golden,
    collusion_curve,
    collusion_table,
    collusion_table_layout,
    exact_collusion_probability,
    min_panel_for_risk,
    parse_pool_size,
)
from veracity_bond.config import (
    ConfigValidationError,
    bundled_scenario_path,
    capacity_from_dict,
    collusion_trials,
    golden_path,
    load_json,
    resolve_seed,
    scenario_from_dict,
)
from veracity_bond.contest import replay, state_hash
from veracity_bond.event_log import EventLog, ReplayError
from veracity_bond.queueing import ServiceKind
from veracity_bond.simulation import empirical_collusion_rate, run_scenario
from veracity_bond.utils import VeracityBondError, humanize_count

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_GOLDEN_MISMATCH = 2
EXIT_REPLAY_DIVERGENCE = 3

DEFAULT_RATIOS = "0.05,0.10,0.15,0.20,0.25,0.30"
DEFAULT_PANELS = "11,15,21,25,31,35,41,43,51,61,71,81,91,101"
DEFAULT_GOLDEN_POOL = 10_000
CURVE_POOLS = [100, 1000, 10_000]

STATE_HASHES_FILE = "state_hashes.json"


class _ArgumentParser(argparse.ArgumentParser):
    # usage errors share the validation exit code
    def error(self, message):
        raise ConfigValidationError(message, "argv")


def _csv_list(cast):
    def parse(value: str):
        try:
            return [cast(v) for v in value.split(",") if v.strip()]
        except ValueError as e:
            raise argparse.ArgumentTypeError(str(e))

    return parse


def _add_output_args(parser: argparse.ArgumentParser, default_format: str) -> None:
    parser.add_argument(
        "--format",
        choices=["csv", "json", "text", "parquet"],
        default=default_format,
        help="output format (json is JSON lines)",
    )
    parser.add_argument(
        "--output", default="-", help="output path, '-' for stdout (default)"
    )


def _write_table(df: pd.DataFrame, args, header_comments: List[str] = None) -> None:
    writer.write(
        df,
        args.output,
        file_format=args.format,
        header_comments=header_comments,
    )


def _read_golden(name: str) -> pd.DataFrame:
    metadata = load_json(golden_path(f"{name}.json"))
    return reader.read(golden_path(f"{name}.csv"), metadata=metadata)


def cmd_collusion_table(args) -> int:
    pool_size = parse_pool_size(args.pool_size)
    if args.curve:
        df = collusion_curve(CURVE_POOLS, args.ratios, args.panel_sizes)
        _write_table(df, args)
        return EXIT_OK

    df = collusion_table([pool_size], args.ratios, args.panel_sizes)
    if args.format == "text":
        pool = "inf" if pool_size == float("inf") else pool_size
        _write_table(
            collusion_table_layout(df),
            args,
            [f"Exact collusion probabilities, pool size {pool}"],
        )
    else:
        _write_table(df, args)

    if args.check:
        mismatches = check_collusion_golden(_read_golden("collusion_table"), pool_size)
        if not mismatches.empty:
            logger.error(
                "%d collusion cells differ from the golden table:\n%s",
                len(mismatches),
                mismatches.to_string(index=False),
            )
            return EXIT_GOLDEN_MISMATCH
        logger.info("All collusion cells match the golden table")
    return EXIT_OK


def cmd_capacity_table(args) -> int:
    rows, configs = None, None
    if args.config:
        rows, configs = capacity_from_dict(load_json(args.config))
    if args.platform:
        rows = [parse_platform(p) for p in args.platform]
    if args.staffing:
        configs = [parse_staffing(s) for s in args.staffing]

    df = capacity_table(rows, configs)
    if args.format == "text":
        _write_table(capacity_table_layout(df), args, ["Minimum juror pool size"])
    else:
        _write_table(df, args)

    if args.check:
        golden = _read_golden("capacity_table")
        mismatches = check_capacity_golden(golden, capacity_table())
        if not mismatches.empty:
            logger.error(
                "%d capacity cells differ from the golden table:\n%s",
                len(mismatches),
                mismatches.to_string(index=False),
            )
            return EXIT_GOLDEN_MISMATCH
        logger.info("All capacity cells match the golden table")
    return EXIT_OK


def _scenario_document(scenario: str) -> dict:
    if os.path.exists(scenario) or "://" in scenario:
        return load_json(scenario)
    return load_json(bundled_scenario_path(scenario))


def _verify_replay(logs, state_hashes) -> List[str]:
    diverged = []
    for content_id in sorted(logs):
        try:
            replayed = state_hash(replay(logs[content_id]))
        except ReplayError as e:
            logger.error("Replay of %s failed: %s", content_id, e)
            diverged.append(content_id)
            continue
        if replayed != state_hashes[content_id]:
            logger.error("Replay of %s reaches a different state", content_id)
            diverged.append(content_id)
    return diverged


def cmd_simulate(args) -> int:
    document = _scenario_document(args.scenario)
    config = scenario_from_dict(document, cli_seed=args.seed)
    metrics = run_scenario(config)

    report = metrics.to_dict()
    trials = args.collusion_trials or collusion_trials(document)
    empirical = empirical_collusion_rate(config, trials)
    report["panel_draws"] = {
        **empirical.to_dict(),
        "exact": metrics.exact_collusion_probability,
        "consistent": empirical.contains(metrics.exact_collusion_probability),
    }
    report["config"] = config.to_dict()

    out_dir = args.output_dir
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.json"), "w") as f:
        f.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    writer.write(
        metrics.reputation_trajectories,
        os.path.join(out_dir, "reputation.csv"),
    )
    summary = pd.DataFrame(
        [
            {"metric": k, "value": v}
            for k, v in report.items()
            if isinstance(v, (int, float)) and not isinstance(v, bool)
        ]
    )
    writer.write(summary, os.path.join(out_dir, "metrics.csv"))

    if not args.no_logs:
        log_dir = os.path.join(out_dir, "logs")
        os.makedirs(log_dir, exist_ok=True)
        for content_id, log in sorted(metrics.logs.items()):
            log.write(os.path.join(log_dir, f"{content_id}.jsonl"))
        with open(os.path.join(log_dir, STATE_HASHES_FILE), "w") as f:
            f.write(json.dumps(metrics.state_hashes, indent=2, sort_keys=True) + "\n")

    logger.info(
        "Scenario %s: survival %.4f, false-challenge success %.4f, residual %d",
        config.name,
        metrics.misinformation_survival_rate,
        metrics.false_challenge_success_rate,
        metrics.escrow_residual,
    )
    if metrics.escrow_residual != 0:
        logger.error("Escrow residual is %d, not 0", metrics.escrow_residual)
        return EXIT_REPLAY_DIVERGENCE

    if args.verify_replay:
        diverged = _verify_replay(metrics.logs, metrics.state_hashes)
        if diverged:
            return EXIT_REPLAY_DIVERGENCE
        logger.info("Replayed %d event logs", len(metrics.logs))
    return EXIT_OK


def cmd_min_panel(args) -> int:
    n = min_panel_for_risk(
        args.ratio, args.epsilon, RiskMode.from_string(args.mode), args.pool_size
    )
    q = CollusionQuery(panel_size=n, pool_size=args.pool_size, ratio=args.ratio)
    result = exact_collusion_probability(q)
    df = pd.DataFrame(
        [
            {
                "ratio": float(q.ratio),
                "epsilon": args.epsilon,
                "mode": args.mode,
                "pool_size": "inf" if q.is_infinite else q.pool_size,
                "panel_size": n,
                "exact_tail": result.exact_tail,
                "hoeffding": result.hoeffding,
            }
        ]
    )
    _write_table(df, args)
    return EXIT_OK


def cmd_min_jurors(args) -> int:
    if args.rate is not None:
        rate = args.rate
    elif args.posts_per_day is not None and args.ratio is not None:
        rate = dispute_rate_from_volume(args.posts_per_day, args.ratio)
    else:
        raise ConfigValidationError(
            "give --rate or both --posts-per-day and --ratio", "argv"
        )
    q = CapacityQuery(
        arrival_rate=rate,
        panel_size=args.panel_size,
        hours_per_case=args.hours_per_case,
        available_hours=args.available_hours,
    )
    result = min_jurors(q)
    row = {
        "arrival_rate": float(q.arrival_rate),
        "panel_size": q.panel_size,
        "hours_per_case": float(q.hours_per_case),
        "available_hours": float(q.available_hours),
        "n_min": result.n_min,
        "n_min_display": humanize_count(result.n_min),
    }
    if args.pool is not None:
        rng = np.random.default_rng(resolve_seed(None, args.seed))
        report = verify_stability(
            q,
            args.pool,
            rng,
            service_kind=ServiceKind.from_string(args.service),
            model=ServerModel.JUROR,
        )
        row.update(report.to_dict())
    _write_table(pd.DataFrame([row]), args)
    return EXIT_OK


def _replay_dir(logs_dir: str) -> int:
    paths = sorted(
        p
        for p in glob.glob(os.path.join(logs_dir, "*.jsonl"))
        if not p.endswith(".audit.jsonl")
    )
    hashes_path = os.path.join(logs_dir, STATE_HASHES_FILE)
    expected = load_json(hashes_path) if os.path.exists(hashes_path) else {}
    status = EXIT_OK
    for path in paths:
        try:
            log = EventLog.read(path)
            contest = replay(log)
        except ReplayError as e:
            logger.error("%s: %s", path, e)
            status = EXIT_REPLAY_DIVERGENCE
            continue
        wanted = expected.get(log.content_id)
        if wanted is not None and state_hash(contest) != wanted:
            logger.error("%s replays to a different state", path)
            status = EXIT_REPLAY_DIVERGENCE
    logger.info("Replayed %d event logs from %s", len(paths), logs_dir)
    return status


def cmd_verify(args) -> int:
    status = EXIT_OK
    collusion = check_collusion_golden(
        _read_golden("collusion_table"), DEFAULT_GOLDEN_POOL
    )
    capacity = check_capacity_golden(_read_golden("capacity_table"), capacity_table())
    for name, mismatches in (("collusion", collusion), ("capacity", capacity)):
        if mismatches.empty:
            print(f"{name} table: ok")
        else:
            print(f"{name} table: {len(mismatches)} mismatched cells")
            print(mismatches.to_string(index=False))
            status = EXIT_GOLDEN_MISMATCH
    if args.logs_dir:
        replay_status = _replay_dir(args.logs_dir)
        print(f"event logs: {'ok' if replay_status == EXIT_OK else 'diverged'}")
        if replay_status != EXIT_OK:
            status = replay_status
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="veracity-bond",
        description="Veracity bond protocol: tables, scenarios and checks.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG"
    )
    sub = parser.add_subparsers(dest="command", parser_class=_ArgumentParser)
    sub.required = True

    p = sub.add_parser("collusion-table", help="exact collusion probabilities")
    p.add_argument("--pool-size", default=str(DEFAULT_GOLDEN_POOL))
    p.add_argument("--ratios", type=_csv_list(str), default=DEFAULT_RATIOS.split(","))
    p.add_argument(
        "--panel-sizes", type=_csv_list(int), default=_csv_list(int)(DEFAULT_PANELS)
    )
    p.add_argument("--curve", action="store_true", help="tail vs selection ratio n/N")
    p.add_argument("--check", action="store_true", help="compare to the golden table")
    _add_output_args(p, "text")
    p.set_defaults(func=cmd_collusion_table)

    p = sub.add_parser("capacity-table", help="minimum juror pool sizes")
    p.add_argument("--platform", action="append", help="NAME:posts_per_day:ratio")
    p.add_argument("--staffing", action="append", help="NAME:n:h:a")
    p.add_argument("--config", help="JSON document with platforms and staffing")
    p.add_argument("--check", action="store_true", help="compare to the golden table")
    _add_output_args(p, "text")
    p.set_defaults(func=cmd_capacity_table)

    p = sub.add_parser("simulate", help="run an agent-based scenario")
    p.add_argument(
        "--scenario", required=True, help="scenario JSON path or bundled name"
    )
    p.add_argument("--seed", type=int)
    p.add_argument("--output-dir", default="simulation_output")
    p.add_argument("--collusion-trials", type=int)
    p.add_argument("--verify-replay", action="store_true")
    p.add_argument("--no-logs", action="store_true", help="skip writing event logs")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("min-panel", help="smallest odd panel for a risk cap")
    p.add_argument("--ratio", required=True)
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--mode", choices=[m.value for m in RiskMode], default="exact")
    p.add_argument("--pool-size", default="inf")
    _add_output_args(p, "text")
    p.set_defaults(func=cmd_min_panel)

    p = sub.add_parser("min-jurors", help="minimum pool size and stability check")
    p.add_argument("--rate", type=Fraction, help="disputes per hour")
    p.add_argument("--posts-per-day", type=Fraction)
    p.add_argument("--ratio", type=Fraction, help="challenge ratio")
    p.add_argument("--panel-size", type=int, required=True)
    p.add_argument("--hours-per-case", type=Fraction, required=True)
    p.add_argument("--available-hours", type=Fraction, required=True)
    p.add_argument("--pool", type=int, help="simulate this pool size")
    p.add_argument("--seed", type=int)
    p.add_argument(
        "--service", choices=[k.value for k in ServiceKind], default="deterministic"
    )
    _add_output_args(p, "text")
    p.set_defaults(func=cmd_min_jurors)

    p = sub.add_parser("verify", help="golden tables and event log replay")
    p.add_argument("--logs-dir", help="directory of *.jsonl event logs")
    p.set_defaults(func=cmd_verify)
    return parser


def _configure_logging(verbosity: int) -> None:
    level = logging.WARNING
    if verbosity == 1:
        level = logging.INFO
    elif verbosity > 1:
        level = logging.DEBUG
    logging.basicConfig(
        level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr
    )


def main(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigValidationError as e:
        print(f"veracity-bond: {e}", file=sys.stderr)
        return EXIT_INVALID
    _configure_logging(args.verbose)
    try:
        return args.func(args)
    except ReplayError as e:
        logger.error("%s", e)
        return EXIT_REPLAY_DIVERGENCE
    except (VeracityBondError, ValueError) as e:
        print(f"veracity-bond {args.command}: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
