"""``attack`` command line: run, list and undo scenarios."""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from ..range import Range, RangeConfig
from .runner import Runner, restoration_report
from .scenario import ScenarioError, list_scenarios, load_scenario


def parse_range(addr: str) -> int:
    """``local`` or ``local:<seed>``; only in-process ranges are supported."""
    name, _, seed = addr.partition(":")
    if name != "local":
        raise ValueError(f"unsupported range address {addr!r} (use local[:seed])")
    return int(seed) if seed else 0


def _runs_dir(arg: str | None) -> Path:
    path = Path(arg or os.environ.get("ICSRANGE_RUNS", ".attack-runs"))
    path.mkdir(parents=True, exist_ok=True)
    return path


def _next_run_id(runs: Path) -> str:
    n = len(list(runs.glob("run-*.json"))) + 1
    while (runs / f"run-{n}.json").exists():
        n += 1
    return f"run-{n}"


def cmd_run(args) -> int:
    seed = parse_range(args.range)
    scenario = load_scenario(args.scenario)
    runs = _runs_dir(args.runs_dir)
    run_id = _next_run_id(runs)
    outcome = Runner(Range(RangeConfig(seed=seed))).run(scenario, args.profile, run_id)
    record = {"run_id": run_id, "scenario": args.scenario, "profile": args.profile,
              "seed": seed, "success": outcome.success, "refused": outcome.refused}
    (runs / f"{run_id}.json").write_text(json.dumps(record) + "\n", encoding="utf-8")
    print(outcome.to_json())
    if outcome.refused:
        return 3
    return 0 if outcome.success else 1


def cmd_list(args) -> int:
    for sc in list_scenarios():
        caps = ",".join(sorted(sc.capabilities))
        print(f"{sc.id}\t{caps}\t{sc.goal or '-'}\t{sc.title}")
    return 0


def cmd_undo(args) -> int:
    runs = _runs_dir(args.runs_dir)
    path = runs / f"{args.run_id}.json"
    if not path.exists():
        print(f"unknown run {args.run_id}", file=sys.stderr)
        return 2
    record = json.loads(path.read_text(encoding="utf-8"))
    scenario = load_scenario(record["scenario"])
    # ranges are in-process: rebuild the run deterministically, then undo it
    rng = Range(RangeConfig(seed=record["seed"]))
    runner = Runner(rng)
    runner.run(scenario, record["profile"], record["run_id"])
    notes = runner.undo(scenario)
    report = restoration_report(rng)
    print(json.dumps({"run_id": record["run_id"], "undo": notes, **report}))
    return 0 if report["restored"] else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attack", description=__doc__)
    parser.add_argument("--runs-dir", default=None, help="where run records are kept")
    sub = parser.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("run", help="run a scenario")
    p.add_argument("scenario")
    p.add_argument("--profile", required=True, choices=["cybercriminal", "insider", "strong"])
    p.add_argument("--range", default="local", help="local[:seed]")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("list", help="list bundled scenarios")
    p.set_defaults(func=cmd_list)
    p = sub.add_parser("undo", help="undo a recorded run")
    p.add_argument("run_id")
    p.set_defaults(func=cmd_undo)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
