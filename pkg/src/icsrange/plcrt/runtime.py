"""PLC devices: tag database, cyclic scan and embedded invariant checkers."""
from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np

from .. import _accel
from ..alarms import INVARIANT, SCAN_FAULT, Alarm
from .lang import (CmdAction, ControlProgram, Env, InvariantRule, SetAction,
                   UndefinedTag, evaluate, relation_holds)

_TAG_RE = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*)(?::(\d+))?$")

OK, UNKNOWN_TAG, READ_ONLY, OFFLINE = 0, 1, 2, 4


class TagError(KeyError):
    pass


class DeviceOffline(RuntimeError):
    pass


def parse_tag_name(name: str) -> tuple[str, int | None]:
    m = _TAG_RE.match(name)
    if m is None:
        raise ValueError(f"malformed tag name {name!r}")
    return m.group(1), int(m.group(2)) if m.group(2) is not None else None


def format_tag_name(base: str, instance: int | None = None) -> str:
    return base if instance is None else f"{base}:{instance}"


@dataclass
class TagRecord:
    name: str
    value: int | float | str
    writable: bool
    owner: str
    updated_at: float = 0.0

    def __post_init__(self):
        parse_tag_name(self.name)


@dataclass(frozen=True)
class Ack:
    ok: bool
    status: int
    name: str


@dataclass(frozen=True)
class Command:
    actuator: str
    command: str
    source: str
    ts: float


@dataclass
class ScanResult:
    commands: list[Command] = field(default_factory=list)
    tag_updates: dict[str, Any] = field(default_factory=dict)
    alarms: list[Alarm] = field(default_factory=list)


class Historian:
    """Append-only mirror of every tag read and write in the range."""

    device_id = "HISTORIAN"

    def __init__(self):
        self.log: list[tuple[float, str, str, str, Any]] = []

    def record(self, ts: float, device: str, op: str, name: str, value: Any) -> None:
        self.log.append((ts, device, op, name, value))

    def values(self, device: str, name: str) -> list[tuple[float, Any]]:
        return [(ts, v) for ts, d, op, n, v in self.log
                if d == device and n == name and op == "W"]


@dataclass
class _RuleState:
    run: int = 0
    fired: bool = False


class PLC:
    """Programmable controller with a tag server and cyclic scan.

    Writes to ``<ACTUATOR>_MODE`` / ``<ACTUATOR>_CMD`` tags are operator
    overrides; they are queued in :attr:`overrides` for the plant executor.
    """

    def __init__(self, device_id: str, program: ControlProgram | None = None,
                 rules: Sequence[InvariantRule] = (), actuators: Sequence[str] = (),
                 scan_period: float = 0.1, historian: Historian | None = None):
        self.id = device_id
        self.program = program or ControlProgram()
        self.rules = list(rules)
        self.actuators = list(actuators)
        self.scan_period = scan_period
        self.historian = historian
        self.online = True
        self.tags: dict[str, TagRecord] = {}
        self.modes = {a: "AUTO" for a in self.actuators}
        self.overrides: list[tuple[str, str | None, str]] = []
        self.faults: list[Alarm] = []
        self._rule_state = {r.id: _RuleState() for r in self.rules}
        self._fn_state: dict = {}
        self._previous: dict[str, Any] = {}
        self._last_ts: float | None = None
        self._pending_cmd: dict[str, str] = {}
        self._alarm_ids = itertools.count(1)
        for act in self.actuators:
            self.define(f"{act}_MODE", "AUTO", writable=True)
            self.define(f"{act}_CMD", "", writable=True)

    # -- tag service --------------------------------------------------------

    def define(self, name: str, value, writable: bool = True) -> None:
        if name in self.tags:
            raise TagError(f"duplicate tag {name!r} on {self.id}")
        self.tags[name] = TagRecord(name, value, writable, self.id)

    def set_local(self, name: str, value, ts: float = 0.0) -> None:
        """Update a tag from the field side (RIO input); bypasses writability."""
        rec = self.tags.get(name)
        if rec is None:
            self.tags[name] = TagRecord(name, value, False, self.id, ts)
        else:
            rec.value = value
            rec.updated_at = ts

    def read_tag(self, name: str, ts: float = 0.0):
        if not self.online:
            raise DeviceOffline(self.id)
        try:
            value = self.tags[name].value
        except KeyError:
            raise TagError(f"{self.id}: unknown tag {name!r}") from None
        if self.historian is not None:
            self.historian.record(ts, self.id, "R", name, value)
        return value

    def write_tag(self, name: str, value, ts: float = 0.0) -> Ack:
        if not self.online:
            raise DeviceOffline(self.id)
        rec = self.tags.get(name)
        if rec is None:
            raise TagError(f"{self.id}: unknown tag {name!r}")
        if not rec.writable:
            return Ack(False, READ_ONLY, name)
        rec.value = value
        rec.updated_at = ts
        if self.historian is not None:
            self.historian.record(ts, self.id, "W", name, value)
        self._maybe_override(name, value)
        return Ack(True, OK, name)

    def _maybe_override(self, name: str, value) -> None:
        base, _, suffix = name.rpartition("_")
        if base not in self.modes or suffix not in ("MODE", "CMD"):
            return
        if suffix == "MODE":
            mode = str(value).upper()
            if mode in ("AUTO", "MANUAL"):
                self.modes[base] = mode
                cmd = self._pending_cmd.pop(base, None) if mode == "MANUAL" else None
                self.overrides.append((base, cmd, mode))
        else:
            cmd = str(value).upper()
            if self.modes[base] == "MANUAL":
                self.overrides.append((base, cmd, "MANUAL"))
            else:
                self._pending_cmd[base] = cmd

    def _alarm_id(self) -> str:
        return f"{self.id}-{next(self._alarm_ids)}"

    def take_overrides(self) -> list[tuple[str, str | None, str]]:
        out, self.overrides = self.overrides, []
        return out

    def values(self) -> dict[str, Any]:
        return {name: rec.value for name, rec in self.tags.items()}

    # -- scan ---------------------------------------------------------------

    def scan_cycle(self, snapshot: Mapping[str, Any] | None = None,
                   ts: float | None = None) -> ScanResult:
        """One scan: rungs in order, then invariant checkers.

        ``snapshot`` overlays the tag database (typically fresh field inputs).
        """
        if ts is None:
            ts = (self._last_ts or 0.0) + self.scan_period
        values = self.values()
        if snapshot:
            values.update(snapshot)
        result = ScanResult()
        sp = self.program.setpoints
        env = Env(values, sp, self._previous, self._fn_state, self.scan_period)

        for rung in self.program.rungs:
            try:
                if not evaluate(rung.condition, env):
                    continue
                for act in rung.actions:
                    if isinstance(act, SetAction):
                        v = evaluate(act.expr, env)
                        values[act.tag] = v
                        result.tag_updates[act.tag] = v
                    elif isinstance(act, CmdAction):
                        if self.modes.get(act.actuator, "AUTO") == "AUTO":
                            result.commands.append(Command(act.actuator, act.command, self.id, ts))
            except UndefinedTag as exc:
                fault = Alarm(self._alarm_id(), ts, self.id, SCAN_FAULT, "low",
                              (f"line {rung.line}", f"tag {exc.args[0]}"))
                self.faults.append(fault)
                result.alarms.append(fault)

        for name, v in result.tag_updates.items():
            self.set_local(name, v, ts)

        for rule in self.rules:
            st = self._rule_state[rule.id]
            try:
                guard_ok = rule.guard is None or bool(evaluate(rule.guard, env))
                # stateful relations (RESIDUAL) must see every scan
                holds = relation_holds(rule, env)
            except UndefinedTag as exc:
                fault = Alarm(self._alarm_id(), ts, self.id, SCAN_FAULT, "low",
                              (rule.id, f"tag {exc.args[0]}"))
                self.faults.append(fault)
                result.alarms.append(fault)
                continue
            if guard_ok and not holds:
                st.run += 1
                if st.run >= rule.window and not st.fired:
                    st.fired = True
                    result.alarms.append(Alarm(
                        self._alarm_id(), ts, self.id, INVARIANT, "high",
                        (rule.id,) + tuple(sorted(set(_rule_tags(rule)))),
                        detail=rule.source))
            else:
                st.run = 0
                st.fired = False

        self._previous = dict(values)
        self._last_ts = ts
        return result


def _rule_tags(rule: InvariantRule) -> list[str]:
    from .lang import _expr_tags
    tags = _expr_tags(rule.relation)
    if rule.guard is not None:
        tags += _expr_tags(rule.guard)
    return tags


def residual_check(level_meas: Sequence[float], level_pred: Sequence[float],
                   eps: float, window: int) -> tuple[bool, int]:
    """Return ``(violated, index)``.

    Violation iff ``|meas - pred| > eps`` holds on ``window`` consecutive
    scans; ``index`` is the (0-based) scan completing the first such run, or
    -1 when there is none.
    """
    meas = np.asarray(level_meas, dtype=np.float64)
    pred = np.asarray(level_pred, dtype=np.float64)
    if meas.shape != pred.shape:
        raise ValueError(f"history length mismatch: {meas.shape} vs {pred.shape}")
    if window < 1:
        raise ValueError("window must be >= 1")
    if meas.shape[0] < window:
        raise ValueError("history shorter than the window")
    mask = np.abs(meas - pred) > eps
    idx = int(_accel.sustained_run(mask, window))
    return idx >= 0, idx


def predict_levels(level0: float, q_in: Sequence[float], q_out: Sequence[float],
                   dt: float, area: float, level_max: float = np.inf) -> np.ndarray:
    """Mass-balance prediction, same update as the plant model."""
    net = np.asarray(q_in, dtype=np.float64) - np.asarray(q_out, dtype=np.float64)
    return _accel.integrate_levels(float(level0), net, float(dt), float(area), float(level_max))
