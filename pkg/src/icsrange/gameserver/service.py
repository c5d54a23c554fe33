"""Game logic over the ledger: flags, lockout, scoreboard and live sessions."""
from __future__ import annotations

import hashlib
import hmac
import json
import secrets
import time
from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Iterable

from .. import scorekit
from ..alarms import DETECTION_RULES, Alarm
from ..attackkit.scenario import ADMIN_ACCOUNTS, ScenarioError, load_scenario
from .pack import Challenge
from .store import Store

CORRECT, WRONG, LOCKED, DUPLICATE = "CORRECT", "WRONG", "LOCKED", "DUPLICATE"
SESSION_LENGTH = 3 * 3600.0


class GameError(Exception):
    status = 400


class AuthError(GameError):
    status = 401


class Forbidden(GameError):
    status = 403


class NotFound(GameError):
    status = 404


class Conflict(GameError):
    status = 409


class Invalid(GameError):
    status = 422


@dataclass(frozen=True)
class LockoutPolicy:
    max_wrong: int = 5
    window: float = 60.0
    duration: float = 300.0


@dataclass(frozen=True)
class SubmissionResult:
    verdict: str
    points: int
    score: int
    locked_until: float | None = None

    def as_dict(self) -> dict:
        return {"verdict": self.verdict, "points": self.points, "score": self.score,
                "locked_until": self.locked_until}


def _hash_token(token: str) -> str:
    return hashlib.sha256(token.encode("utf-8")).hexdigest()


AlarmSource = Callable[[float, float], Iterable[Alarm]]
TrafficProbe = Callable[[float, float], bool]


class GameServer:
    def __init__(self, store: Store | None = None, challenges: Iterable[Challenge] = (),
                 clock: Callable[[], float] = time.time, policy: LockoutPolicy | None = None,
                 judge_token: str | None = None, alarm_source: AlarmSource | None = None,
                 traffic_probe: TrafficProbe | None = None, range_=None,
                 session_length: float = SESSION_LENGTH):
        self.store = store or Store()
        self.clock = clock
        self.policy = policy or LockoutPolicy()
        self.judge_hash = _hash_token(judge_token) if judge_token else None
        self.range = range_
        if range_ is not None:
            alarm_source = alarm_source or range_alarm_source(range_)
            traffic_probe = traffic_probe or range_traffic_probe(range_)
        self.alarm_source = alarm_source
        self.traffic_probe = traffic_probe
        self.session_length = session_length
        self.overrides: list[dict] = []
        self.load_challenges(challenges)

    # -- setup -----------------------------------------------------------------------

    def load_challenges(self, challenges: Iterable[Challenge]) -> int:
        n = 0
        with self.store.write() as db:
            for c in challenges:
                db.execute(
                    "INSERT OR REPLACE INTO challenges VALUES (?,?,?,?,?,?,?,?,?)",
                    (c.id, c.category, c.points, c.title, c.description, json.dumps(list(c.hints)),
                     int(c.released), json.dumps(c.capture) if c.capture else None, c.flag))
                n += 1
        return n

    def add_team(self, team_id: str, name: str | None = None, token: str | None = None) -> str:
        token = token or secrets.token_urlsafe(18)
        with self.store.write() as db:
            if db.execute("SELECT 1 FROM teams WHERE id=?", (team_id,)).fetchone():
                raise Conflict(f"team {team_id!r} exists")
            db.execute("INSERT INTO teams VALUES (?,?,?)", (team_id, name or team_id, _hash_token(token)))
        return token

    def teams(self) -> list[dict]:
        with self.store.read() as db:
            return [{"id": r["id"], "name": r["name"]}
                    for r in db.execute("SELECT id, name FROM teams ORDER BY id")]

    def authenticate(self, token: str | None) -> str:
        if not token:
            raise AuthError("missing team token")
        with self.store.read() as db:
            row = db.execute("SELECT id FROM teams WHERE token_hash=?", (_hash_token(token),)).fetchone()
        if row is None:
            raise AuthError("unknown team token")
        return row["id"]

    def is_judge(self, token: str | None) -> bool:
        return bool(token and self.judge_hash
                     and hmac.compare_digest(_hash_token(token), self.judge_hash))

    def _now(self, ts: float | None) -> float:
        return float(self.clock() if ts is None else ts)

    def _require_team(self, db, team: str) -> None:
        if not db.execute("SELECT 1 FROM teams WHERE id=?", (team,)).fetchone():
            raise AuthError(f"unknown team {team!r}")

    # -- jeopardy ----------------------------------------------------------------------

    def challenges(self, team: str | None = None) -> list[dict]:
        with self.store.read() as db:
            solved = set()
            if team:
                solved = {r["challenge"] for r in db.execute(
                    "SELECT challenge FROM submissions WHERE team=? AND verdict=?", (team, CORRECT))}
            rows = db.execute("SELECT * FROM challenges WHERE released=1 ORDER BY category, points, id")
            out = []
            for r in rows:
                d = {"id": r["id"], "category": r["category"], "points": r["points"],
                     "title": r["title"], "description": r["description"],
                     "hints": json.loads(r["hints"])}
                if r["capture"]:
                    d["capture"] = json.loads(r["capture"])
                if team:
                    d["solved"] = r["id"] in solved
                out.append(d)
        return out

    def hint(self, team: str, challenge: str, index: int, ts: float | None = None) -> str:
        """Hints are free; each request is logged."""
        ts = self._now(ts)
        with self.store.write() as db:
            self._require_team(db, team)
            row = db.execute("SELECT hints FROM challenges WHERE id=? AND released=1",
                             (challenge,)).fetchone()
            if row is None:
                raise NotFound(f"unknown challenge {challenge!r}")
            hints = json.loads(row["hints"])
            if not 0 <= index < len(hints):
                raise NotFound(f"challenge {challenge!r} has no hint {index}")
            db.execute("INSERT INTO hint_log (team, challenge, hint, ts) VALUES (?,?,?,?)",
                       (team, challenge, index, ts))
        return hints[index]

    def submit_flag(self, team: str, challenge: str, candidate: str,
                    ts: float | None = None) -> SubmissionResult:
        ts = self._now(ts)
        pol = self.policy
        with self.store.write() as db:
            self._require_team(db, team)
            row = db.execute("SELECT flag, points FROM challenges WHERE id=? AND released=1",
                             (challenge,)).fetchone()
            if row is None:
                raise NotFound(f"unknown challenge {challenge!r}")
            pair = (team, challenge)
            locked_until = None
            points = 0
            if db.execute("SELECT 1 FROM submissions WHERE team=? AND challenge=? AND verdict=?",
                          (*pair, CORRECT)).fetchone():
                verdict = DUPLICATE
            else:
                lock = db.execute(
                    "SELECT MAX(until) AS u FROM locks WHERE team=? AND challenge=? AND start<=?",
                    (*pair, ts)).fetchone()["u"]
                if lock is not None and ts < lock:
                    verdict, locked_until = LOCKED, lock
                else:
                    since = max(ts - pol.window, lock if lock is not None else float("-inf"))
                    wrong = db.execute(
                        "SELECT COUNT(*) AS n FROM submissions WHERE team=? AND challenge=? "
                        "AND verdict=? AND ts>? AND ts<=?", (*pair, WRONG, since, ts)).fetchone()["n"]
                    if wrong >= pol.max_wrong:
                        locked_until = ts + pol.duration
                        db.execute("INSERT INTO locks (team, challenge, start, until) VALUES (?,?,?,?)",
                                   (*pair, ts, locked_until))
                        verdict = LOCKED
                    elif hmac.compare_digest(str(candidate).encode("utf-8"),
                                             row["flag"].encode("utf-8")):
                        verdict, points = CORRECT, row["points"]
                    else:
                        verdict = WRONG
            db.execute("INSERT INTO submissions (team, challenge, submitted, ts, verdict, points) "
                       "VALUES (?,?,?,?,?,?)", (*pair, str(candidate), ts, verdict, points))
            score = self._team_points(db, team)
        return SubmissionResult(verdict, points, score, locked_until)

    @staticmethod
    def _team_points(db, team: str) -> int:
        return db.execute("SELECT COALESCE(SUM(points), 0) AS s FROM submissions "
                          "WHERE team=? AND verdict=?", (team, CORRECT)).fetchone()["s"]

    def submissions(self, team: str) -> list[dict]:
        """A team's own submission log."""
        with self.store.read() as db:
            return [dict(r) for r in db.execute(
                "SELECT seq, challenge, submitted, ts, verdict, points FROM submissions "
                "WHERE team=? ORDER BY seq", (team,))]

    def time_spent(self, team: str) -> float | None:
        """Seconds between the team's first and last correct submission."""
        with self.store.read() as db:
            r = db.execute("SELECT MIN(ts) AS a, MAX(ts) AS b FROM submissions "
                           "WHERE team=? AND verdict=?", (team, CORRECT)).fetchone()
        return None if r["a"] is None else r["b"] - r["a"]

    def scoreboard(self) -> list[dict]:
        rows = []
        with self.store.read() as db:
            for t in db.execute("SELECT id, name FROM teams ORDER BY id").fetchall():
                flags = db.execute("SELECT COUNT(*) AS n FROM submissions WHERE team=? AND verdict=?",
                                   (t["id"], CORRECT)).fetchone()["n"]
                rows.append({"team": t["id"], "name": t["name"],
                             "score": self._team_points(db, t["id"]), "flags": flags,
                             "live": scorekit.aggregate_team(self._records(db, t["id"]))})
        for r in rows:
            r["time_spent"] = self.time_spent(r["team"])
        rows.sort(key=lambda r: (-r["score"], r["team"]))
        return rows

    def scoreboard_series(self, start: float | None = None,
                          end: float | None = None) -> dict[str, list[tuple[float, int]]]:
        """Cumulative step series of jeopardy points per team."""
        if start is not None and end is not None and start > end:
            return {}
        with self.store.read() as db:
            teams = [r["id"] for r in db.execute("SELECT id FROM teams ORDER BY id")]
            solves = db.execute("SELECT team, ts, points FROM submissions WHERE verdict=? "
                                "ORDER BY ts, seq", (CORRECT,)).fetchall()
        t0 = start if start is not None else (solves[0]["ts"] if solves else 0.0)
        series: dict[str, list[tuple[float, int]]] = {}
        for team in teams:
            mine = [(r["ts"], r["points"]) for r in solves if r["team"] == team]
            total = sum(p for t, p in mine if t < t0)
            pts = [(t0, total)]
            for t, p in mine:
                if t < t0 or (end is not None and t > end):
                    continue
                total += p
                if pts[-1][0] == t:
                    pts[-1] = (t, total)
                else:
                    pts.append((t, total))
            if end is not None and pts[-1][0] < end:
                pts.append((end, total))
            series[team] = pts
        return series

    # -- live phase ---------------------------------------------------------------------

    def open_session(self, team: str, start: float | None = None,
                     session_id: str | None = None) -> str:
        start = self._now(start)
        with self.store.write() as db:
            self._require_team(db, team)
            if session_id is None:
                n = db.execute("SELECT COUNT(*) AS n FROM sessions").fetchone()["n"]
                session_id = f"S{n + 1}"
            if db.execute("SELECT 1 FROM sessions WHERE id=?", (session_id,)).fetchone():
                raise Conflict(f"session {session_id!r} exists")
            db.execute("INSERT INTO sessions VALUES (?,?,?,?)",
                       (session_id, team, start, start + self.session_length))
        return session_id

    def session(self, session_id: str) -> dict:
        with self.store.read() as db:
            row = db.execute("SELECT * FROM sessions WHERE id=?", (session_id,)).fetchone()
            if row is None:
                raise NotFound(f"unknown session {session_id!r}")
            decls = [dict(r) for r in db.execute(
                "SELECT * FROM declarations WHERE session=? ORDER BY ts, id", (session_id,))]
        return {**dict(row), "declarations": decls}

    def declare_attack(self, session_id: str, profile: str, goal: str, scenario: str | None = None,
                       team: str | None = None, ts: float | None = None) -> str:
        ts = self._now(ts)
        try:
            prof = scorekit.profile(profile)
        except scorekit.ScoreError as exc:
            raise Invalid(str(exc)) from None
        if goal not in scorekit.CATALOG:
            raise Invalid(f"unknown goal {goal!r}")
        if scenario is not None:
            try:
                sc = load_scenario(scenario)
            except ScenarioError as exc:
                raise Invalid(str(exc)) from None
            if not prof.allows(sc.required()):
                missing = sorted(sc.required() - prof.capabilities)
                raise Forbidden(f"capability violation: {profile} lacks {', '.join(missing)}")
        with self.store.write() as db:
            sess = db.execute("SELECT * FROM sessions WHERE id=?", (session_id,)).fetchone()
            if sess is None:
                raise NotFound(f"unknown session {session_id!r}")
            if team is not None and sess["team"] != team:
                raise Forbidden("session belongs to another team")
            if not sess["start"] <= ts <= sess["end"]:
                raise Conflict("session is not active")
            if db.execute("SELECT 1 FROM declarations d WHERE d.session=? AND NOT EXISTS "
                          "(SELECT 1 FROM scores s WHERE s.declaration=d.id)",
                          (session_id,)).fetchone():
                raise Conflict("one active attack at a time per session")
            last = db.execute("SELECT MAX(s.computed_at) AS t FROM scores s JOIN declarations d "
                              "ON s.declaration=d.id WHERE d.session=?", (session_id,)).fetchone()["t"]
            since = max(sess["start"], last if last is not None else sess["start"])
            if self.traffic_probe is not None and self.traffic_probe(since, ts):
                raise Conflict("attack traffic observed before the declaration")
            n = db.execute("SELECT COUNT(*) AS n FROM declarations").fetchone()["n"]
            decl_id = f"D{n + 1}"
            db.execute("INSERT INTO declarations VALUES (?,?,?,?,?,?,?)",
                       (decl_id, session_id, sess["team"], profile, goal, scenario, ts))
        return decl_id

    def adjudicate(self, declaration: str, c: Any, undo_confirmed: bool,
                   ts: float | None = None) -> scorekit.ScoreRecord:
        ts = self._now(ts)
        with self.store.write() as db:
            d = db.execute("SELECT * FROM declarations WHERE id=?", (declaration,)).fetchone()
            if d is None:
                raise NotFound(f"unknown declaration {declaration!r}")
            if db.execute("SELECT 1 FROM scores WHERE declaration=?", (declaration,)).fetchone():
                raise Conflict("declaration already adjudicated")
            if ts < d["ts"]:
                raise Conflict("adjudication precedes the declaration")
            alarms = list(self.alarm_source(d["ts"], ts)) if self.alarm_source else []
            rules = sorted({a.rule for a in alarms if a.rule in DETECTION_RULES})
            x = min(len(rules), scorekit.MAX_DETECTIONS)
            try:
                rec = scorekit.score_declaration(declaration, d["team"], d["goal"], c, x,
                                                 d["profile"], undo_confirmed, ts)
            except scorekit.ScoreError as exc:
                raise Invalid(str(exc)) from None
            db.execute("INSERT INTO scores (declaration, team, goal, c, x, rules, s, points, valid, "
                       "computed_at) VALUES (?,?,?,?,?,?,?,?,?,?)",
                       (declaration, d["team"], d["goal"], str(c), x,
                        json.dumps(rules), f"{rec.s.numerator}/{rec.s.denominator}",
                        rec.points, int(rec.valid), ts))
        return rec

    @staticmethod
    def _records(db, team: str) -> list[scorekit.ScoreRecord]:
        return [scorekit.ScoreRecord(r["declaration"], r["team"], r["goal"], Fraction(r["s"]),
                                     r["computed_at"], bool(r["valid"]))
                for r in db.execute("SELECT * FROM scores WHERE team=? ORDER BY seq", (team,))]

    def score_records(self, team: str) -> list[scorekit.ScoreRecord]:
        with self.store.read() as db:
            return self._records(db, team)

    def live_total(self, team: str) -> int:
        return scorekit.aggregate_team(self.score_records(team))

    def active_declaration(self, team: str, ts: float | None = None) -> dict | None:
        ts = self._now(ts)
        with self.store.read() as db:
            row = db.execute(
                "SELECT d.* FROM declarations d JOIN sessions s ON d.session=s.id "
                "WHERE d.team=? AND s.start<=? AND ?<=s.end AND NOT EXISTS "
                "(SELECT 1 FROM scores x WHERE x.declaration=d.id) ORDER BY d.ts DESC LIMIT 1",
                (team, ts, ts)).fetchone()
        return dict(row) if row else None

    # -- range access -----------------------------------------------------------------------

    def alarms(self, start: float | None = None, end: float | None = None,
               rule: str | None = None, node: str | None = None) -> list[Alarm]:
        if self.range is None:
            raise NotFound("no range attached")
        from ..netids import AlarmFilter
        try:
            return self.range.central.query_alarms(AlarmFilter(start, end, rule, node))
        except ValueError as exc:
            raise Invalid(str(exc)) from None

    def hmi_state(self) -> dict:
        if self.range is None:
            raise NotFound("no range attached")
        return {"time": self.range.time, "staleness": self.range.config.staleness,
                "tags": self.range.hmi_state()}

    def hmi_override(self, team: str, actuator: str, command: str | None,
                     mode: str = "MANUAL", ts: float | None = None) -> dict:
        """Manual actuator command through the HMI; needs an admin-capable declaration."""
        if self.range is None:
            raise NotFound("no range attached")
        decl = self.active_declaration(team, ts)
        if decl is None or not scorekit.profile(decl["profile"]).allows({ADMIN_ACCOUNTS}):
            raise Forbidden("HMI override needs an active insider or strong declaration")
        if mode not in ("AUTO", "MANUAL"):
            raise Invalid(f"unknown mode {mode!r}")
        from ..range import actuator_owner
        try:
            owner = actuator_owner(actuator)
        except (KeyError, ValueError) as exc:
            raise Invalid(f"unknown actuator {actuator!r}") from exc
        with self.range.lock:
            self.range.hmi.request_override(actuator, command, mode)
            at = self.range.time
        entry = {"team": team, "declaration": decl["id"], "actuator": actuator, "plc": owner,
                 "command": command, "mode": mode, "ts": at}
        self.overrides.append(entry)
        return entry


def range_alarm_source(rng) -> AlarmSource:
    from ..netids import AlarmFilter

    def source(start: float, end: float) -> list[Alarm]:
        return rng.central.query_alarms(AlarmFilter(start=start, end=end))
    return source


def range_traffic_probe(rng) -> TrafficProbe:
    """True when the attacker host sent any frame in (start, end]."""
    def probe(start: float, end: float) -> bool:
        if rng.attacker is None:
            return False
        mac = rng.attacker.mac
        for f in reversed(rng.net.capture):
            if f.ts <= start:
                break
            if f.ts <= end and f.src_mac == mac:
                return True
        return False
    return probe
