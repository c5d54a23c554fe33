import json
import sqlite3

import pytest
from fastapi.testclient import TestClient

from icsrange.alarms import ARP_POISON, INVARIANT, Alarm
from icsrange.gameserver import (CORRECT, AuthError, DUPLICATE, LOCKED, WRONG, Conflict, Forbidden,
                                 GameServer, Invalid, NotFound, PackError, Store, load_pack,
                                 valid_flag)
from icsrange.gameserver import cli
from icsrange.gameserver.api import create_app
from icsrange.gameserver.cli import read_log, replay
from icsrange.range import Range, RangeConfig

from conftest import FIXTURES

ONLINE_LOG = FIXTURES / "online_log.jsonl"
# team -> (points, flags, hours between first and last correct flag)
ONLINE_TOTALS = {"team2": (510, 20, 44), "team6": (510, 20, 4), "team1": (250, 13, 30),
          "team4": (161, 10, 28), "team3": (86, 7, 27), "team5": (66, 7, 21)}

PACK = {c.id: c for c in load_pack()}


class Clock:
    def __init__(self, t=0.0):
        self.t = t

    def __call__(self):
        return self.t


def game(**kw):
    g = GameServer(Store(), PACK.values(), **kw)
    g.add_team("t1", token="tok1")
    g.add_team("t2", token="tok2")
    return g


class TestFlags:
    def test_correct_then_duplicate(self):
        g = game()
        flag = PACK["minicps-2"].flag
        r = g.submit_flag("t1", "minicps-2", flag, ts=1.0)
        assert (r.verdict, r.points, r.score) == (CORRECT, PACK["minicps-2"].points, r.points)
        again = g.submit_flag("t1", "minicps-2", flag, ts=2.0)
        assert (again.verdict, again.points, again.score) == (DUPLICATE, 0, r.score)
        assert g.submit_flag("t2", "minicps-2", flag, ts=3.0).verdict == CORRECT

    def test_lockout(self):
        g = game()
        for i in range(5):
            assert g.submit_flag("t1", "trivia-1", "CTF{nope}", ts=float(i)).verdict == WRONG
        sixth = g.submit_flag("t1", "trivia-1", PACK["trivia-1"].flag, ts=10.0)
        assert sixth.verdict == LOCKED and sixth.locked_until == 310.0
        assert g.submit_flag("t1", "trivia-1", PACK["trivia-1"].flag, ts=309.9).verdict == LOCKED
        assert g.submit_flag("t1", "trivia-1", PACK["trivia-1"].flag, ts=310.0).verdict == CORRECT

    def test_lock_is_per_pair(self):
        g = game()
        for i in range(6):
            g.submit_flag("t1", "trivia-1", "CTF{nope}", ts=float(i))
        assert g.submit_flag("t1", "trivia-2", PACK["trivia-2"].flag, ts=7.0).verdict == CORRECT
        assert g.submit_flag("t2", "trivia-1", PACK["trivia-1"].flag, ts=7.0).verdict == CORRECT

    def test_wrong_outside_window_do_not_lock(self):
        g = game()
        for i in range(5):
            g.submit_flag("t1", "trivia-1", "CTF{nope}", ts=i * 20.0)
        assert g.submit_flag("t1", "trivia-1", PACK["trivia-1"].flag, ts=100.0).verdict == CORRECT

    def test_unknown_challenge_and_team(self):
        g = game()
        with pytest.raises(NotFound):
            g.submit_flag("t1", "nope-1", "CTF{x}", ts=0.0)
        with pytest.raises(AuthError):
            g.submit_flag("ghost", "trivia-1", "CTF{x}", ts=0.0)

    def test_ledger_append_only(self):
        g = game()
        g.submit_flag("t1", "trivia-1", "CTF{nope}", ts=0.0)
        for sql in ("UPDATE submissions SET verdict='CORRECT'", "DELETE FROM submissions"):
            with pytest.raises(sqlite3.IntegrityError, match="append-only"):
                g.store.db.execute(sql)
        assert g.submissions("t1")[0]["verdict"] == WRONG

    def test_wal_file_store(self, tmp_path):
        store = Store(tmp_path / "g.sqlite")
        assert store.db.execute("PRAGMA journal_mode").fetchone()[0] == "wal"
        g = GameServer(store, PACK.values())
        g.add_team("t1", token="a")
        with pytest.raises(Conflict):
            g.add_team("t1")

    def test_hints_logged(self):
        g = game()
        c = next(c for c in PACK.values() if c.hints)
        assert g.hint("t1", c.id, 0, ts=1.0) == c.hints[0]
        assert g.store.db.execute("SELECT COUNT(*) FROM hint_log").fetchone()[0] == 1
        with pytest.raises(NotFound):
            g.hint("t1", c.id, 99)


class TestReplay:
    def test_table_totals(self):
        g = replay(read_log(ONLINE_LOG))
        got = {r["team"]: (r["score"], r["flags"], r["time_spent"] / 3600) for r in g.scoreboard()}
        assert got == {t: (p, f, pytest.approx(h)) for t, (p, f, h) in ONLINE_TOTALS.items()}

    def test_deterministic_series(self):
        a = replay(read_log(ONLINE_LOG)).scoreboard_series()
        b = replay(read_log(ONLINE_LOG)).scoreboard_series()
        assert a == b

    def test_series_monotone_and_final(self):
        g = replay(read_log(ONLINE_LOG))
        final = {r["team"]: r["score"] for r in g.scoreboard()}
        for team, pts in g.scoreboard_series().items():
            assert all(a[0] < b[0] and a[1] <= b[1] for a, b in zip(pts, pts[1:]))
            assert pts[-1][1] == final[team]

    def test_series_window(self):
        g = replay(read_log(ONLINE_LOG))
        full = g.scoreboard_series()
        win = g.scoreboard_series(start=10 * 3600.0, end=20 * 3600.0)
        for team, pts in win.items():
            assert pts[0][0] == 10 * 3600.0 and pts[-1][0] == 20 * 3600.0
            before = [v for t, v in full[team] if t <= 20 * 3600.0]
            assert pts[-1][1] == before[-1]
        assert g.scoreboard_series(start=5.0, end=1.0) == {}

    def test_bad_log_line(self, tmp_path):
        p = tmp_path / "log.jsonl"
        p.write_text('{"ts": 1, "team": "a", "challenge": "b", "flag": "c"}\n{"ts": 2}\n')
        with pytest.raises(ValueError, match=":2:"):
            read_log(p)


class Sessions:
    def __init__(self, alarms=(), traffic=False):
        self.clock = Clock(100.0)
        self.alarms = list(alarms)
        self.traffic = traffic
        self.g = game(clock=self.clock, judge_token="judge",
                      alarm_source=lambda a, b: [x for x in self.alarms if a <= x.ts <= b],
                      traffic_probe=lambda a, b: self.traffic)


def alarm(ts, rule):
    return Alarm(f"A{ts}", ts, "IDS-L1", rule, "high", ("e",))


class TestLive:
    def test_adjudication_scores_and_aggregates(self):
        s = Sessions([alarm(150.0, ARP_POISON), alarm(160.0, INVARIANT)])
        sid = s.g.open_session("t1")
        d1 = s.g.declare_attack(sid, "insider", "chemical_dosing", team="t1")
        s.clock.t = 200.0
        rec = s.g.adjudicate(d1, 1, True)
        # two distinct rules fire: 180 * 1 * (12 - 2) / 6 * 1.5
        assert rec.points == 450 and rec.valid
        d2 = s.g.declare_attack(sid, "strong", "chemical_dosing", team="t1")
        s.clock.t = 300.0
        s.g.adjudicate(d2, 1, True)
        assert s.g.live_total("t1") == 450

    def test_one_active_attack(self):
        s = Sessions()
        sid = s.g.open_session("t1")
        s.g.declare_attack(sid, "strong", "pump")
        with pytest.raises(Conflict):
            s.g.declare_attack(sid, "strong", "pump")

    def test_traffic_before_declaration(self):
        s = Sessions(traffic=True)
        sid = s.g.open_session("t1")
        with pytest.raises(Conflict):
            s.g.declare_attack(sid, "strong", "pump")

    def test_capability_violation(self):
        s = Sessions()
        sid = s.g.open_session("t1")
        with pytest.raises(Forbidden):
            s.g.declare_attack(sid, "cybercriminal", "chemical_dosing",
                               scenario="hmi_dosing_manipulation")
        with pytest.raises(Invalid):
            s.g.declare_attack(sid, "wizard", "pump")

    def test_session_window_and_owner(self):
        s = Sessions()
        sid = s.g.open_session("t1")
        with pytest.raises(Forbidden):
            s.g.declare_attack(sid, "strong", "pump", team="t2")
        s.clock.t = 100.0 + 3 * 3600.0 + 1
        with pytest.raises(Conflict):
            s.g.declare_attack(sid, "strong", "pump")

    def test_adjudicate_once(self):
        s = Sessions()
        d = s.g.declare_attack(s.g.open_session("t1"), "strong", "pump")
        s.g.adjudicate(d, 1, False)
        with pytest.raises(Conflict):
            s.g.adjudicate(d, 1, True)
        assert s.g.live_total("t1") == 0


@pytest.fixture
def api():
    rng = Range(RangeConfig(seed=0))
    rng.start()
    rng.run(2.0)
    g = GameServer(Store(), PACK.values(), clock=lambda: rng.time, judge_token="judge",
                   range_=rng)
    g.add_team("t1", token="tok1")
    return TestClient(create_app(g)), g, rng


def bearer(token):
    return {"Authorization": f"Bearer {token}"}


class TestApi:
    def test_flags(self, api):
        client, _, _ = api
        body = {"challenge": "trivia-1", "flag": PACK["trivia-1"].flag}
        assert client.post("/api/flags", json=body).status_code == 401
        r = client.post("/api/flags", json=body, headers=bearer("tok1"))
        assert r.status_code == 200 and r.json()["verdict"] == CORRECT
        r = client.post("/api/flags", json={"challenge": "nope", "flag": "x"}, headers=bearer("tok1"))
        assert r.status_code == 404

    def test_scoreboard(self, api):
        client, g, _ = api
        g.submit_flag("t1", "trivia-1", PACK["trivia-1"].flag, ts=1.0)
        body = client.get("/api/scoreboard").json()
        assert body["teams"][0]["score"] == PACK["trivia-1"].points
        assert body["series"]["t1"][-1][1] == PACK["trivia-1"].points

    def test_challenges_hide_flags(self, api):
        client, _, _ = api
        body = client.get("/api/challenges", headers=bearer("tok1")).json()["challenges"]
        assert body and all("flag" not in c and c["solved"] is False for c in body)
        public = json.dumps(client.get("/api/challenges").json())
        assert not any(c.flag in public for c in PACK.values())

    def test_declare_and_adjudicate(self, api):
        client, g, _ = api
        sid = g.open_session("t1")
        r = client.post(f"/api/sessions/{sid}/declarations",
                        json={"profile": "strong", "goal": "pump"}, headers=bearer("tok1"))
        assert r.status_code == 200
        decl = r.json()["declaration"]
        url = f"/api/declarations/{decl}/adjudicate"
        body = {"c": "1", "undo_confirmed": True}
        assert client.post(url, json=body).status_code == 401
        assert client.post(url, json=body, headers=bearer("tok1")).status_code == 403
        r = client.post(url, json=body, headers=bearer("judge"))
        assert r.status_code == 200 and r.json()["points"] == 260
        assert client.post(url, json=body, headers=bearer("judge")).status_code == 409

    def test_alarms(self, api):
        client, _, _ = api
        assert client.get("/api/alarms").json() == {"alarms": []}
        assert client.get("/api/alarms", params={"start": 5, "end": 1}).status_code == 422

    def test_hmi_state(self, api):
        client, _, rng = api
        body = client.get("/api/hmi/state").json()
        assert body["time"] == pytest.approx(rng.time)
        assert {t["tag"] for t in body["tags"]} >= {"LIT101", "HB"}

    @pytest.mark.parametrize("profile,status", [("insider", 200), ("strong", 200),
                                                ("cybercriminal", 403)])
    def test_hmi_override_needs_admin(self, api, profile, status):
        client, g, rng = api
        sid = g.open_session("t1")
        g.declare_attack(sid, profile, "pump")
        r = client.post("/api/hmi/override", json={"actuator": "P101", "command": "OFF"},
                        headers=bearer("tok1"))
        assert r.status_code == status
        if status == 200:
            assert r.json()["plc"] == "PLC1"
            assert ("PLC1", "P101", "OFF", "MANUAL") in rng.hmi.pending

    def test_hmi_override_without_declaration(self, api):
        client, _, _ = api
        r = client.post("/api/hmi/override", json={"actuator": "P101"}, headers=bearer("tok1"))
        assert r.status_code == 403


class TestPack:
    def test_default_pack(self):
        assert len(PACK) == 20 and all(valid_flag(c.flag) for c in PACK.values())

    def test_missing_flag(self, tmp_path):
        (tmp_path / "challenges").mkdir()
        (tmp_path / "challenges" / "a.yaml").write_text("id: a\ncategory: misc\npoints: 10\n")
        (tmp_path / "flags.yaml").write_text("b: CTF{x}\n")
        with pytest.raises(PackError):
            load_pack(tmp_path)

    def test_bad_grammar(self, tmp_path):
        (tmp_path / "challenges").mkdir()
        (tmp_path / "challenges" / "a.yaml").write_text("id: a\ncategory: misc\npoints: 10\n")
        (tmp_path / "flags.yaml").write_text("a: flag{x}\n")
        with pytest.raises(PackError):
            load_pack(tmp_path)

    def test_flag_grammar(self):
        assert valid_flag("CTF{a_1}") and valid_flag("ascflag{10-20}")
        assert not valid_flag("CTF{a-1}") and not valid_flag("ascflag{x-1}")


class TestCli:
    def test_load_pack(self, tmp_path, capsys):
        db = tmp_path / "g.sqlite"
        assert cli.main(["load-pack", "--db", str(db), "--team", "red"]) == 0
        out = capsys.readouterr().out.splitlines()
        assert out[0].startswith("loaded 20 challenges")
        token = out[1].split("\t")[1]
        assert GameServer(Store(db)).authenticate(token) == "red"

    def test_replay_log(self, capsys):
        assert cli.main(["replay-log", str(ONLINE_LOG), "--compact"]) == 0
        body = json.loads(capsys.readouterr().out)
        assert [(t["team"], t["score"]) for t in body["teams"]][:2] == [("team2", 510),
                                                                          ("team6", 510)]

    def test_errors(self, tmp_path):
        assert cli.main(["replay-log", str(tmp_path / "missing.jsonl")]) == 2
        assert cli.main(["load-pack", "--pack", str(tmp_path), "--db", ":memory:"]) == 2
