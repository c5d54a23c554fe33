"""Executes scenarios against a :class:`~icsrange.range.Range`."""
from __future__ import annotations

import itertools
import json
import operator
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

from .. import scorekit
from ..alarms import DETECTION_RULES, MECHANISM
from ..range import HMI_TAGS, Range, actuator_owner
from ..simnet import DROP, PASS, Hook, NetworkError, Timeout, tagproto
from ..simnet.frames import ARP_REP, DATA, SYN, Frame
from .scenario import Scenario, ScenarioError, Step

OPS: dict[str, Callable[[Any, Any], bool]] = {
    "<": operator.lt, "<=": operator.le, ">": operator.gt, ">=": operator.ge,
    "==": operator.eq, "!=": operator.ne,
}


WARMUP = 5.0


class CapabilityError(PermissionError):
    pass


class StepFailed(RuntimeError):
    pass


def _literal(text: str):
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def _compare(a, op: str, b) -> bool:
    if op not in OPS:
        raise ScenarioError(f"unknown comparison {op!r}")
    if isinstance(a, str) or isinstance(b, str):
        a, b = str(a), str(b)
    return OPS[op](a, b)


@dataclass
class Outcome:
    run_id: str
    scenario: str
    profile: str
    success: bool
    failed_step: int | None = None
    error: str | None = None
    start: float = 0.0
    end: float = 0.0
    timeline: list[tuple[float, int, str, str]] = field(default_factory=list)
    frames_injected: int = 0
    frames_modified: int = 0
    alarms: list[dict] = field(default_factory=list)
    rules: list[str] = field(default_factory=list)
    mechanisms: list[str] = field(default_factory=list)
    transcript: list[str] = field(default_factory=list)
    refused: bool = False

    @property
    def detections(self) -> int:
        """x for scoring: distinct detection rules triggered in the session."""
        return len([r for r in self.rules if r in DETECTION_RULES])

    def to_json(self) -> str:
        d = asdict(self)
        d["detections"] = self.detections
        return json.dumps(d)


class SynFlood:
    def __init__(self, rng: Range, target: str, rate: float):
        self.id = f"syn_flood:{target}"
        self.target_ip = rng.device_ip(target)
        self.rate = rate
        self._carry = 0.0

    def on_tick(self, rng: Range, t: float) -> None:
        self._carry += self.rate * rng.config.dt
        n = int(self._carry)
        self._carry -= n
        for _ in range(n):
            rng.net.send_syn(rng.attacker, self.target_ip)


class ArpRepoison:
    def __init__(self, victim: str, targets: list[str], period: float, send: Callable[[], None]):
        self.id = f"arp:{victim}"
        self.period = period
        self.send = send
        self._next = None

    def on_tick(self, rng: Range, t: float) -> None:
        if self._next is None:
            self._next = t + self.period
        if t >= self._next - 1e-9:
            self.send()
            self._next += self.period


class ModifyRule:
    """Declarative match -> transform over tag payloads."""

    def __init__(self, tag: str, op: str, value: str):
        if op not in ("set", "add", "scale", "xor"):
            raise ScenarioError(f"unknown transform {op!r}")
        self.tag, self.op, self.value = tag, op, value
        self.pending: dict[tuple[str, str], str] = {}
        self.count = 0

    def _transform(self, raw: bytes) -> bytes:
        if self.op == "xor":
            key = int(self.value, 0)
            return bytes(b ^ key for b in raw)
        if self.op == "set":
            return tagproto.encode_value(_literal(self.value))
        current = tagproto.decode_value(raw)
        if not isinstance(current, (int, float)):
            return raw
        if self.op == "add":
            return tagproto.encode_value(float(current) + float(self.value))
        return tagproto.encode_value(float(current) * float(self.value))

    def apply(self, frame: Frame) -> Frame:
        msg = tagproto.decode_any(frame.payload)
        if isinstance(msg, tagproto.Request):
            if msg.op == tagproto.READ:
                self.pending[(frame.src_ip, frame.dst_ip)] = msg.name
                return frame
            if msg.name != self.tag:
                return frame
            payload = tagproto.encode_request(msg.op, msg.name, self._transform(msg.value))
        elif isinstance(msg, tagproto.Response) and msg.op == tagproto.READ_RESP:
            if self.pending.pop((frame.dst_ip, frame.src_ip), None) != self.tag:
                return frame
            payload = tagproto.encode_response(msg.op, msg.status, self._transform(msg.value))
        else:
            return frame
        self.count += 1
        return frame.with_(payload=payload)


class Runner:
    """Executes one scenario at a time against a range."""

    _run_ids = itertools.count(1)

    def __init__(self, rng: Range):
        self.range = rng
        self.vars: dict[str, Any] = {}
        self.transcript: list[str] = []
        self.modifiers: list[ModifyRule] = []
        self._hook_ids = itertools.count(1)

    # -- gating ------------------------------------------------------------------

    @staticmethod
    def check_capabilities(scenario: Scenario, profile_id: str) -> None:
        prof = scorekit.profile(profile_id)
        if not prof.allows(scenario.capabilities):
            missing = sorted(scenario.capabilities - prof.capabilities)
            raise CapabilityError(f"profile {profile_id} lacks {', '.join(missing)} "
                                  f"needed by {scenario.id}")

    # -- execution -----------------------------------------------------------------

    def run(self, scenario: Scenario, profile_id: str, run_id: str | None = None) -> Outcome:
        run_id = run_id or f"run-{next(self._run_ids)}"
        rng = self.range
        outcome = Outcome(run_id, scenario.id, profile_id, False)
        try:
            self.check_capabilities(scenario, profile_id)
        except CapabilityError as exc:
            outcome.refused = True
            outcome.error = str(exc)
            return outcome
        rng.start()
        if rng.ticks == 0:
            # attacks hit a plant that is already running
            rng.run(WARMUP)
        attacker_mac = None
        if any(s.capability == "network_tools" for s in scenario.steps):
            attacker_mac = rng.join_attacker().mac
        first_frame = len(rng.net.capture)
        outcome.start = rng.net.now
        rng.central.open_session(run_id, outcome.start)
        idx, step = -1, None
        try:
            for idx, step in enumerate(scenario.steps):
                note = self.execute(step, scenario.capabilities)
                outcome.timeline.append((rng.net.now, idx, step.render(), note))
            rng.run(scenario.settle)
            outcome.success = all(self.predicate(p) for p in scenario.success)
        except (StepFailed, NetworkError) as exc:
            outcome.failed_step = idx
            where = step.render() if step is not None else "setup"
            outcome.error = f"step {idx} ({where}): {exc}"
        outcome.end = rng.net.now
        rng.central.close_session(run_id, outcome.end)
        alarms = [a for a in rng.central.query_alarms() if a.attack_session == run_id]
        outcome.alarms = [json.loads(a.to_json()) for a in alarms]
        outcome.rules = sorted({a.rule for a in alarms if a.rule in DETECTION_RULES})
        outcome.mechanisms = sorted({MECHANISM[r] for r in outcome.rules})
        if attacker_mac is not None:
            outcome.frames_injected = sum(1 for f in rng.net.capture[first_frame:]
                                          if f.src_mac == attacker_mac)
        outcome.frames_modified = sum(m.count for m in self.modifiers)
        outcome.transcript = list(self.transcript)
        return outcome

    def undo(self, scenario: Scenario) -> list[str]:
        notes = []
        for step in scenario.undo:
            notes.append(self.execute(step, scenario.capabilities))
        self.range.run(scenario.settle)
        return notes

    def execute(self, step: Step, allowed: frozenset[str]) -> str:
        cap = step.capability
        if cap is not None and cap not in allowed:
            raise CapabilityError(f"{step.action} needs {cap}")
        handler = getattr(self, f"_do_{step.action}")
        return handler(step) or ""

    # -- actions -------------------------------------------------------------------

    def _ips(self, names: str) -> list[str]:
        return [self.range.device_ip(n) for n in names.split(",") if n]

    def _do_wait(self, step: Step) -> str:
        self.range.run(float(step.args[0]))
        return f"t={self.range.time:.1f}"

    def _do_wait_until(self, step: Step) -> str:
        timeout = float(step.opt("timeout", "120"))
        pred = tuple(step.args)
        if not self.range.run(timeout, until=lambda _r: self.predicate(pred)):
            raise StepFailed(f"timed out waiting for {' '.join(pred)}")
        return f"t={self.range.time:.1f}"

    def _do_assert(self, step: Step) -> str:
        if not self.predicate(tuple(step.args)):
            raise StepFailed(f"assertion failed: {' '.join(step.args)}")
        return "ok"

    def _forge(self, victim: str, targets: list[str], claimed_mac: str | None = None) -> None:
        rng = self.range
        vip = rng.device_ip(victim)
        for tname in targets:
            target = rng.net.hosts[tname]
            link = rng.net.link_between(rng.attacker, target.ip)
            rng.net.forge_arp(rng.attacker, vip, target, link, claimed_mac)
        rng.net.run_until(rng.net.now + 2 * rng.net.hop_delay)

    def _do_arp_poison(self, step: Step) -> str:
        rng = self.range
        victim = step.args[0]
        targets = [t for t in step.opt("targets", "").split(",") if t]
        if not targets:
            raise ScenarioError("arp_poison needs targets=", step.line)
        self._forge(victim, targets)
        if step.opt("relay", "no") == "yes":
            att = rng.attacker
            peers = {rng.device_ip(victim)} | set(self._ips(",".join(targets)))

            def match(f: Frame) -> bool:
                return (f.dst_mac == att.mac and f.dst_ip != att.ip
                        and f.src_ip in peers and f.dst_ip in peers)

            def relay(f: Frame):
                if f.kind == DATA:
                    msg = tagproto.decode_any(f.payload)
                    self.transcript.append(_describe(f, msg))
                return PASS, f

            rng.net.add_hook(Hook(f"relay-{next(self._hook_ids)}", None, match, relay,
                                  relay=True, owner="attacker"))
        period = float(step.opt("repeat", "0"))
        if period > 0:
            rng.add_activity(ArpRepoison(victim, targets, period,
                                         lambda: self._forge(victim, targets)))
        return f"{victim} -> attacker for {','.join(targets)}"

    def _do_arp_restore(self, step: Step) -> str:
        rng = self.range
        victim = step.args[0]
        targets = [t for t in step.opt("targets", "").split(",") if t]
        rng.remove_activity(f"arp:{victim}")
        self._forge(victim, targets, claimed_mac=rng.net.hosts[victim].mac)
        return f"{victim} restored for {','.join(targets)}"

    def _do_mitm_drop(self, step: Step) -> str:
        rng = self.range
        att = rng.attacker
        between = step.opt("between")
        dst = step.opt("dst")
        if between:
            pair = set(self._ips(between))

            def match(f: Frame) -> bool:
                return f.dst_mac == att.mac and f.src_ip in pair and f.dst_ip in pair
        elif dst:
            dst_ip = rng.device_ip(dst)

            def match(f: Frame) -> bool:
                return f.dst_mac == att.mac and f.dst_ip == dst_ip
        else:
            raise ScenarioError("mitm_drop needs between= or dst=", step.line)
        hook = Hook(f"drop-{next(self._hook_ids)}", None, match, lambda f: (DROP, f),
                    owner="attacker")
        rng.net.hooks.insert(0, hook)
        return hook.id

    def _do_mitm_modify(self, step: Step) -> str:
        rng = self.range
        rule = ModifyRule(step.opt("tag"), step.opt("op", "set"), step.opt("value", "0"))
        self.modifiers.append(rule)
        src = step.opt("src")
        src_ip = rng.device_ip(src) if src else None
        segment = step.opt("segment")

        def transform(f: Frame):
            return PASS, rule.apply(f)

        if step.opt("inline", "no") == "yes":
            # physical tap spliced into the segment: sees every frame on it
            if segment is None:
                raise ScenarioError("inline mitm_modify needs segment=", step.line)

            def match(f: Frame) -> bool:
                return f.kind == DATA and (src_ip is None or f.src_ip == src_ip)
            hook = Hook(f"inline-{next(self._hook_ids)}", segment, match, transform,
                        owner="physical")
        else:
            att = rng.attacker

            def match(f: Frame) -> bool:
                return (f.kind == DATA and f.dst_mac == att.mac and f.dst_ip != att.ip
                        and (src_ip is None or f.src_ip == src_ip or f.dst_ip == src_ip))
            hook = Hook(f"modify-{next(self._hook_ids)}", segment, match, transform,
                        relay=True, owner="attacker")
        rng.net.hooks.insert(0, hook)
        return hook.id

    def _do_mitm_stop(self, step: Step) -> str:
        rng = self.range
        owned = [h.id for h in rng.net.hooks if h.owner in ("attacker", "physical")]
        for hid in owned:
            rng.net.remove_hook(hid)
        return f"removed {len(owned)} hooks"

    def _do_syn_flood(self, step: Step) -> str:
        rate = float(step.opt("rate", "50"))
        self.range.add_activity(SynFlood(self.range, step.args[0], rate))
        return f"{rate}/s"

    def _do_syn_flood_stop(self, step: Step) -> str:
        self.range.remove_activity(f"syn_flood:{step.args[0]}")
        return "stopped"

    def _tag_op(self, device: str, op: int, name: str, value=None) -> tagproto.Response:
        rng = self.range
        net = rng.net
        try:
            conn = net.open_flow(rng.attacker, rng.device_ip(device))
        except (Timeout, NetworkError) as exc:
            raise StepFailed(f"cannot reach {device}: {exc}") from None
        try:
            return net.tag_request(rng.attacker, conn, op, name, value)
        except Timeout as exc:
            raise StepFailed(str(exc)) from None
        finally:
            net.close_flow(rng.attacker, conn)

    def _do_tag_read(self, step: Step) -> str:
        device, name = step.args[0], step.args[1]
        resp = self._tag_op(device, tagproto.READ, name)
        if resp.status != tagproto.ST_OK:
            raise StepFailed(f"read {name} on {device}: status {resp.status}")
        value = tagproto.decode_value(resp.value)
        self.vars[step.opt("as", name)] = value
        return f"{name}={value!r}"

    def _do_tag_write(self, step: Step) -> str:
        device, name, raw = step.args[0], step.args[1], step.args[2]
        resp = self._tag_op(device, tagproto.WRITE, name, _literal(raw))
        if resp.status != tagproto.ST_OK:
            raise StepFailed(f"write {name} on {device}: status {resp.status}")
        return f"{name}:={raw}"

    def _do_hmi_override(self, step: Step) -> str:
        actuator = step.args[0]
        command = step.args[1] if len(step.args) > 1 and step.args[1] != "-" else None
        mode = step.opt("mode", "MANUAL")
        actuator_owner(actuator)
        self.range.hmi.request_override(actuator, command, mode)
        return f"{actuator} {command} {mode} queued on HMI"

    # -- predicates ----------------------------------------------------------------

    def predicate(self, pred: tuple[str, ...]) -> bool:
        rng = self.range
        kind, args = pred[0], pred[1:]
        st = rng.plant.state
        if kind == "level":
            return _compare(st.tank(args[0]).level, args[1], float(args[2]))
        if kind == "concentration":
            return _compare(st.dosing_concentration, args[0], float(args[1]))
        if kind == "actuator":
            return st.actuator(args[0]).state == args[1]
        if kind == "tag":
            value = rng.plcs[args[0]].tags[args[1]].value
            return _compare(value, args[2], _literal(args[3]))
        if kind == "sensor_gap":
            view = rng.plcs[args[0]].tags[args[1]].value
            truth = rng.plant.read(args[1])
            return _compare(abs(view - truth), args[2], float(args[3]))
        if kind == "hmi_stale":
            plc = args[0]
            tags = args[1:] or HMI_TAGS[plc]
            return all(rng.hmi.render(plc, t, rng.net.now) == "*" for t in tags)
        if kind == "flag":
            return any(r.challenge == args[0] for r in rng.releases)
        if kind == "var":
            return _compare(self.vars.get(args[0]), args[1], _literal(args[2]))
        if kind == "transcript_contains":
            needle = args[0]
            if needle.startswith("flag:"):
                needle = rng.flags[needle[5:]]
            return any(needle in line for line in self.transcript)
        raise ScenarioError(f"unknown predicate {kind!r}")


def _describe(frame: Frame, msg) -> str:
    if isinstance(msg, tagproto.Request):
        body = f"{'READ' if msg.op == tagproto.READ else 'WRITE'} {msg.name}"
        if msg.op == tagproto.WRITE:
            body += f" {tagproto.decode_value(msg.value)!r}"
    elif isinstance(msg, tagproto.Response):
        body = f"RESP status={msg.status} {tagproto.decode_value(msg.value)!r}"
    else:
        body = f"opaque {frame.payload.hex()}"
    return f"{frame.ts:.3f} {frame.src_ip}->{frame.dst_ip} {body}"


def run_scenario(scenario: Scenario, profile_id: str, rng: Range | None = None,
                 run_id: str | None = None) -> Outcome:
    rng = rng or Range()
    return Runner(rng).run(scenario, profile_id, run_id)


def restoration_report(rng: Range) -> dict:
    """Check that an undo left the range as an operator would expect."""
    issues = []
    for act in rng.plant.state.actuators:
        if act.mode != "AUTO":
            issues.append(f"{act.id} still in {act.mode}")
    for plc in rng.plcs.values():
        for act, mode in plc.modes.items():
            if mode != "AUTO":
                issues.append(f"{plc.id} holds {act} in {mode}")
    for hook in rng.net.hooks:
        if hook.owner in ("attacker", "physical"):
            issues.append(f"hook {hook.id} still installed")
    for activity in rng.activities:
        issues.append(f"activity {activity.id} still running")
    for host in rng.net.hosts.values():
        if host.role == "ATTACKER":
            continue
        for ip, (mac, _) in host.arp_table.items():
            owner = rng.net.host_by_ip(ip)
            if owner is not None and owner.role != "ATTACKER" and owner.mac != mac:
                issues.append(f"{host.id} maps {ip} to {mac}")
    if rng.plcs["PLC3"].tags["HB"].value != 2:
        issues.append("keep-alive tag is not 2")
    return {"restored": not issues, "issues": issues}
