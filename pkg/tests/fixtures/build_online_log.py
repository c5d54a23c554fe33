"""Rebuild online_log.jsonl: the correct submissions behind the online results table.

Each team's solved set reproduces its per-category flag counts and score;
first and last solve are separated by the team's reported hours.
Run: python tests/fixtures/build_online_log.py
"""
import json
from pathlib import Path

from icsrange.gameserver import load_pack

HERE = Path(__file__).resolve().parent
SESSION_HOURS = 48
# team -> (session, hours from first to last flag, solved challenges)
TEAMS = {
    "team1": (0, 30, ["minicps-2", "minicps-4", "trivia-1", "trivia-2", "trivia-3", "trivia-4",
                      "trivia-5", "trivia-6", "forensics-1", "forensics-2", "forensics-3",
                      "forensics-4", "misc-1"]),
    "team2": (0, 44, ["minicps-1", "minicps-2", "minicps-3", "minicps-4", "minicps-5", "trivia-1",
                      "trivia-2", "trivia-3", "trivia-4", "trivia-5", "trivia-6", "forensics-1",
                      "forensics-2", "forensics-3", "forensics-4", "plc-1", "plc-2", "plc-3",
                      "misc-1", "misc-2"]),
    "team3": (0, 27, ["trivia-1", "trivia-3", "trivia-5", "trivia-6", "forensics-1",
                      "forensics-2", "misc-1"]),
    "team4": (1, 28, ["minicps-1", "minicps-2", "minicps-3", "minicps-4", "trivia-1", "trivia-2",
                      "trivia-3", "trivia-5", "forensics-1", "forensics-2"]),
    "team5": (1, 21, ["trivia-1", "trivia-2", "trivia-3", "trivia-4", "forensics-1",
                      "forensics-2", "misc-1"]),
    "team6": (1, 4, ["minicps-1", "minicps-2", "minicps-3", "minicps-4", "minicps-5", "trivia-1",
                     "trivia-2", "trivia-3", "trivia-4", "trivia-5", "trivia-6", "forensics-1",
                     "forensics-2", "forensics-3", "forensics-4", "plc-1", "plc-2", "plc-3",
                     "misc-1", "misc-2"]),
}


def build() -> list[dict]:
    flags = {c.id: c.flag for c in load_pack()}
    out = []
    for i, (team, (session, hours, solved)) in enumerate(TEAMS.items()):
        first = session * SESSION_HOURS * 3600 + 3600 + 60 * i
        span = hours * 3600
        for k, cid in enumerate(solved):
            ts = first + span * k / (len(solved) - 1)
            out.append({"ts": round(ts, 3), "team": team, "challenge": cid, "flag": flags[cid]})
    out.sort(key=lambda r: (r["ts"], r["team"]))
    return out


if __name__ == "__main__":
    with open(HERE / "online_log.jsonl", "w", encoding="utf-8") as fh:
        for rec in build():
            fh.write(json.dumps(rec) + "\n")
