"""``s3-game`` command line: serve, load-pack, replay-log."""
from __future__ import annotations

import argparse
import json
import sys
import threading
import time
from pathlib import Path

from .pack import DEFAULT_PACK, PackError, load_pack
from .service import GameError, GameServer
from .store import Store


def read_log(path: str | Path) -> list[dict]:
    """JSON-lines submission log: ``{"ts", "team", "challenge", "flag"}`` per line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append({"ts": float(rec["ts"]), "team": str(rec["team"]),
                            "challenge": str(rec["challenge"]), "flag": str(rec["flag"])})
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad submission record ({exc})") from None
    return out


def replay(log: list[dict], pack: str | Path | None = None) -> GameServer:
    """Feed a submission log, in timestamp order, into a fresh in-memory server."""
    game = GameServer(Store(), load_pack(pack))
    for team in sorted({r["team"] for r in log}):
        game.add_team(team)
    for r in sorted(log, key=lambda r: r["ts"]):
        game.submit_flag(r["team"], r["challenge"], r["flag"], ts=r["ts"])
    return game


def cmd_load_pack(args) -> int:
    challenges = load_pack(args.pack)
    game = GameServer(Store(args.db), challenges)
    print(f"loaded {len(challenges)} challenges worth {sum(c.points for c in challenges)} points")
    for team in args.team or []:
        token = game.add_team(team)
        print(f"{team}\t{token}")
    return 0


def cmd_replay(args) -> int:
    game = replay(read_log(args.log), args.pack)
    series = game.scoreboard_series()
    print(json.dumps({"teams": game.scoreboard(),
                      "series": {t: [[ts, v] for ts, v in pts] for t, pts in series.items()}},
                     indent=None if args.compact else 2))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .api import create_app

    rng = None
    clock = time.time
    if args.range:
        from ..range import Range, RangeConfig
        rng = Range(RangeConfig(seed=args.seed))
        rng.start()
        clock = lambda: rng.time  # noqa: E731

        def drive():
            while True:
                t0 = time.monotonic()
                rng.tick()
                time.sleep(max(0.0, rng.config.dt - (time.monotonic() - t0)))

        threading.Thread(target=drive, daemon=True, name="range").start()
    game = GameServer(Store(args.db), load_pack(args.pack), clock=clock,
                      judge_token=args.judge_token, range_=rng)
    uvicorn.run(create_app(game), host=args.host, port=args.port, log_level="info")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="s3-game", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)
    p = sub.add_parser("load-pack", help="load a challenge pack into the ledger and issue team tokens")
    p.add_argument("--pack", default=str(DEFAULT_PACK))
    p.add_argument("--db", default="game.sqlite")
    p.add_argument("--team", action="append", help="team id to register (repeatable)")
    p.set_defaults(func=cmd_load_pack)
    p = sub.add_parser("replay-log", help="replay a submission log and print the scoreboard")
    p.add_argument("log")
    p.add_argument("--pack", default=str(DEFAULT_PACK))
    p.add_argument("--compact", action="store_true")
    p.set_defaults(func=cmd_replay)
    p = sub.add_parser("serve", help="run the HTTP API")
    p.add_argument("--pack", default=str(DEFAULT_PACK))
    p.add_argument("--db", default="game.sqlite")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--judge-token", default=None)
    p.add_argument("--range", action="store_true", help="attach a live simulated range")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (PackError, GameError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
