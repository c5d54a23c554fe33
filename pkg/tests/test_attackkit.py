import json
import time

import pytest

from icsrange.alarms import ARP_POISON, INVARIANT, SYN_FLOOD, TAG_DIVERGENCE
from icsrange.attackkit import (CapabilityError, Runner, ScenarioError, list_scenarios,
                                load_scenario, parse_scenario, run_scenario)
from icsrange.attackkit import cli
from icsrange.attackkit.runner import restoration_report
from icsrange.range import Range, RangeConfig

# engines each detection-matrix attack must (and must not) trigger: (netids, invariants)
DETECTION_MATRIX = {
    "syn_flood_plc1": (True, False),
    "l1_dos_hmi": (True, False),
    "tank_sensor_tamper": (True, True),
    "hmi_dosing_manipulation": (False, True),
}


def fresh(seed=0):
    return Range(RangeConfig(seed=seed))


class LevelRecorder:
    id = "recorder"

    def __init__(self, tank):
        self.tank = tank
        self.trace = []

    def on_tick(self, rng, t):
        st = rng.plant.state
        self.trace.append((st.step_index, st.time, st.tank(self.tank).level))


class TestParse:
    def test_bundled(self):
        ids = {sc.id for sc in list_scenarios()}
        assert set(DETECTION_MATRIX) | {"keepalive_hijack", "keepalive_write_only",
                              "overflow_raw_tank", "overflow_uf_tank"} <= ids

    def test_undeclared_capability(self):
        with pytest.raises(ScenarioError):
            parse_scenario("scenario x\ncapabilities admin_accounts\nsyn_flood PLC1 rate=5\n")

    def test_inline_tap_needs_physical_access(self):
        sc = load_scenario("tank_sensor_tamper")
        assert sc.required() == {"physical_access"}

    def test_unknown_action_position(self):
        with pytest.raises(ScenarioError) as exc:
            parse_scenario("scenario x\ncapabilities network_tools\n\nlaunch_missiles now\n")
        assert exc.value.line == 4

    def test_header_required(self):
        with pytest.raises(ScenarioError):
            parse_scenario("wait 5\n")

    def test_render_round_trip(self):
        sc = load_scenario("keepalive_hijack")
        text = "scenario again\ncapabilities network_tools\n" + \
            "\n".join(s.render() for s in sc.steps) + "\n"
        assert parse_scenario(text).steps == [s.__class__(s.action, s.args, s.opts, i + 3)
                                              for i, s in enumerate(sc.steps)]


class TestDetectionMatrix:
    @pytest.mark.parametrize("name", sorted(DETECTION_MATRIX))
    def test_scenario(self, name):
        t0 = time.perf_counter()
        out = run_scenario(load_scenario(name), "strong", fresh())
        wall = time.perf_counter() - t0
        netids, invariants = DETECTION_MATRIX[name]
        assert out.success, out.error
        assert ("netids" in out.mechanisms) == netids
        assert ("invariants" in out.mechanisms) == invariants
        assert out.end - out.start < 120.0
        assert wall < 30.0

    def test_specific_rules(self):
        rules = {n: run_scenario(load_scenario(n), "strong", fresh()).rules for n in DETECTION_MATRIX}
        assert SYN_FLOOD in rules["syn_flood_plc1"]
        assert ARP_POISON in rules["l1_dos_hmi"]
        assert {INVARIANT, TAG_DIVERGENCE} <= set(rules["tank_sensor_tamper"])
        assert rules["hmi_dosing_manipulation"] == [INVARIANT]

    def test_alarms_carry_session(self):
        out = run_scenario(load_scenario("syn_flood_plc1"), "strong", fresh(), run_id="S-7")
        assert out.alarms and all(a["attack_session"] == "S-7" for a in out.alarms)
        assert out.detections == len(out.rules)


class TestGating:
    @pytest.mark.parametrize("name,profile", [("hmi_dosing_manipulation", "cybercriminal"),
                                              ("syn_flood_plc1", "insider"),
                                              ("tank_sensor_tamper", "cybercriminal")])
    def test_refused(self, name, profile):
        rng = fresh()
        out = run_scenario(load_scenario(name), profile, rng)
        assert out.refused and not out.success
        assert rng.ticks == 0 and rng.net.capture == []

    @pytest.mark.parametrize("name,profile", [("hmi_dosing_manipulation", "insider"),
                                              ("syn_flood_plc1", "cybercriminal"),
                                              ("tank_sensor_tamper", "insider")])
    def test_allowed(self, name, profile):
        assert run_scenario(load_scenario(name), profile, fresh()).success

    def test_check_raises(self):
        with pytest.raises(CapabilityError):
            Runner.check_capabilities(load_scenario("syn_flood_plc1"), "insider")


class TestChallengeOracles:
    def test_overflow_flag_at_crossing_step(self):
        rng = fresh()
        rec = LevelRecorder("T101")
        rng.add_activity(rec)
        out = run_scenario(load_scenario("overflow_raw_tank"), "strong", rng)
        assert out.success
        threshold = rng.plant.state.tank("T101").overflow_threshold
        first = next((step, t) for step, t, level in rec.trace if level > threshold)
        rel = next(r for r in rng.releases if r.challenge == "minicps-3")
        assert (rel.step, rel.ts) == (first[0], pytest.approx(first[1]))
        prev = [level for step, _, level in rec.trace if step == first[0] - 1]
        assert prev and prev[0] <= threshold
        assert rel.flag == rng.flags["minicps-3"]
        assert rng.plcs["PLC1"].tags["FLAG:3"].value == rel.flag

    def test_uf_overflow(self):
        rng = fresh()
        out = run_scenario(load_scenario("overflow_uf_tank"), "strong", rng)
        assert out.success
        rel = next(r for r in rng.releases if r.challenge == "minicps-5")
        assert rel.step == next(e.step for e in rng.plant.state.events if e.tank == "T301")

    def test_keepalive_needs_drop_and_write(self):
        hijack = run_scenario(load_scenario("keepalive_hijack"), "strong", fresh())
        write_only = run_scenario(load_scenario("keepalive_write_only"), "strong", fresh())
        assert hijack.success
        assert not write_only.success

    def test_write_only_overwritten_by_hmi(self):
        rng = fresh()
        run_scenario(load_scenario("keepalive_write_only"), "strong", rng)
        assert rng.plcs["PLC3"].tags["HB"].value == 2
        assert not any(r.challenge == "minicps-4" for r in rng.releases)

    def test_readme_and_passive_mitm(self):
        rng = fresh()
        runner = Runner(rng)
        assert runner.run(load_scenario("readme_tag"), "cybercriminal").success
        assert runner.vars["flag"] == rng.flags["minicps-2"]
        assert run_scenario(load_scenario("passive_mitm"), "cybercriminal", fresh()).success

    def test_dosing_override_raises_concentration(self):
        rng = fresh()
        c0 = rng.plant.state.dosing_concentration
        out = run_scenario(load_scenario("hmi_dosing_manipulation"), "insider", rng)
        assert out.success and rng.plant.state.dosing_concentration > c0


class TestUndo:
    @pytest.mark.parametrize("name", ["keepalive_hijack", "l1_dos_hmi", "overflow_uf_tank",
                                      "hmi_dosing_manipulation", "syn_flood_plc1"])
    def test_restores(self, name):
        rng = fresh()
        runner = Runner(rng)
        sc = load_scenario(name)
        runner.run(sc, "strong")
        assert not restoration_report(rng)["restored"] or name == "syn_flood_plc1"
        runner.undo(sc)
        report = restoration_report(rng)
        assert report["restored"], report["issues"]

    def test_hmi_recovers_after_dos_undo(self):
        rng = fresh()
        runner = Runner(rng)
        sc = load_scenario("l1_dos_hmi")
        runner.run(sc, "strong")
        runner.undo(sc)
        rng.run(5.0)
        assert not runner.predicate(("hmi_stale", "PLC1"))


class TestDeterminism:
    def test_same_seed_same_outcome(self):
        a = run_scenario(load_scenario("tank_sensor_tamper"), "strong", fresh(3), run_id="r")
        b = run_scenario(load_scenario("tank_sensor_tamper"), "strong", fresh(3), run_id="r")
        assert a.to_json() == b.to_json()


class TestCli:
    def test_list(self, capsys):
        assert cli.main(["list"]) == 0
        out = capsys.readouterr().out
        assert "syn_flood_plc1\tnetwork_tools" in out

    def test_run_and_undo(self, tmp_path, capsys):
        runs = str(tmp_path)
        assert cli.main(["--runs-dir", runs, "run", "keepalive_hijack", "--profile", "strong"]) == 0
        rec = json.loads(capsys.readouterr().out)
        assert rec["success"] and rec["run_id"] == "run-1"
        assert cli.main(["--runs-dir", runs, "undo", "run-1"]) == 0
        assert json.loads(capsys.readouterr().out)["restored"]

    def test_refused_exit_code(self, tmp_path, capsys):
        code = cli.main(["--runs-dir", str(tmp_path), "run", "hmi_dosing_manipulation",
                         "--profile", "cybercriminal"])
        assert code == 3
        assert json.loads(capsys.readouterr().out)["refused"]

    def test_failed_exit_code(self, tmp_path, capsys):
        code = cli.main(["--runs-dir", str(tmp_path), "run", "keepalive_write_only",
                         "--profile", "strong"])
        assert code == 1

    def test_errors(self, tmp_path, capsys):
        assert cli.main(["--runs-dir", str(tmp_path), "run", "nope", "--profile", "strong"]) == 2
        assert cli.main(["--runs-dir", str(tmp_path), "run", "readme_tag", "--profile", "strong",
                         "--range", "10.0.0.1"]) == 2
        assert cli.main(["--runs-dir", str(tmp_path), "undo", "run-9"]) == 2
        assert cli.parse_range("local:7") == 7
