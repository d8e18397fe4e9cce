"""Command-line front end: run campaigns, re-score reports, replay rounds.

Exit codes: 0 success, 1 configuration error, 2 acceptance-threshold
failure (only with ``run --check``).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .campaign import (
    CampaignConfig,
    ConfigError,
    clusters_from_record,
    emit_report,
    run_campaign,
)
from .scenario import POST, PRE, build_stock_scenario, score

#: Thresholds enforced by ``run --check`` on stock-scenario campaigns.
CHECK_THRESHOLDS = {
    "recall_h_prime": 0.90,
    "precision_h_prime": 0.85,
    "recall_hs_prime": 0.75,
}


def _cmd_run(args: argparse.Namespace) -> int:
    try:
        config = CampaignConfig.from_toml(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    report = run_campaign(config)
    emit_report(report, config.report_path, config.trace_path)
    print(f"report written to {config.report_path}")
    print(f"trace  written to {config.trace_path}")
    print(f"totals: {json.dumps(report.totals, sort_keys=True)}")
    card = report.scorecards.get("pre") or report.scorecards.get("post")
    if card:
        print(f"scorecard: {json.dumps(card, sort_keys=True)}")
    if args.check:
        if not card:
            print("check failed: no scorecard (custom scenario?)", file=sys.stderr)
            return 2
        for key, threshold in CHECK_THRESHOLDS.items():
            if card[key] < threshold:
                print(
                    f"check failed: {key} {card[key]:.3f} < {threshold}", file=sys.stderr
                )
                return 2
        print("check passed")
    return 0


def _load_report(path: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load report {path}: {exc}") from exc


def _cmd_score(args: argparse.Namespace) -> int:
    try:
        doc = _load_report(args.report)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1
    if doc["header"].get("scenario") is None:
        print("score: report has no oracle scenario", file=sys.stderr)
        return 1
    if not doc["rounds"]:
        print("score: report has no rounds", file=sys.stderr)
        return 1
    scenario = build_stock_scenario(seed=doc["config"]["seed"])
    epsilon = doc["config"]["params"]["epsilon"]
    learning_round = doc["config"]["learning_round"]
    cards = {}
    if learning_round:
        pre_record = next(r for r in doc["rounds"] if r["t"] == learning_round)
        cards["pre"] = score(
            clusters_from_record(pre_record), scenario, PRE, epsilon=epsilon
        ).to_dict()
        stored = doc["scorecards"].get("post") or {}
        cards["post"] = score(
            clusters_from_record(doc["rounds"][-1]),
            scenario,
            POST,
            epsilon=epsilon,
            new_violation_latency=stored.get("new_violation_latency"),
        ).to_dict()
    else:
        cards["pre"] = score(
            clusters_from_record(doc["rounds"][-1]), scenario, PRE, epsilon=epsilon
        ).to_dict()
        cards["post"] = None
    print(json.dumps(cards, sort_keys=True, indent=2))
    return 0


def _cmd_replay(args: argparse.Namespace) -> int:
    try:
        doc = _load_report(args.report)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return 1
    record = next((r for r in doc["rounds"] if r["t"] == args.round), None)
    if record is None:
        print(f"replay: no round {args.round} in report", file=sys.stderr)
        return 1
    out = {
        "t": record["t"],
        "regions": [a["region"] for a in record["agents"]],
        "clusters": [c.to_dict() for c in clusters_from_record(record)],
    }
    print(json.dumps(out, sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="swarmwatch",
        description="Map and gate the behavior space of a black-box system "
        "with a shepherded swarm of watchdog testing agents.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run a campaign from a TOML config")
    run_p.add_argument("config", help="path to the campaign config file")
    run_p.add_argument(
        "--check",
        action="store_true",
        help="exit 2 unless the scorecard clears the discovery thresholds",
    )
    run_p.set_defaults(func=_cmd_run)

    score_p = sub.add_parser("score", help="recompute scorecards from a report")
    score_p.add_argument("report", help="path to a campaign report JSON")
    score_p.set_defaults(func=_cmd_score)

    replay_p = sub.add_parser("replay", help="re-emit one round's cluster map")
    replay_p.add_argument("report", help="path to a campaign report JSON")
    replay_p.add_argument("--round", type=int, required=True, help="round index t")
    replay_p.set_defaults(func=_cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
