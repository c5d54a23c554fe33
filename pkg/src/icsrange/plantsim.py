"""Discrete-time hydraulics of the simplified water-treatment process.

Two tanks (raw water and ultra-filtration) connected by flow paths.  Each
path is a series of actuators; it carries the smallest rated flow of its
actuators when every one of them conducts and nothing otherwise.  A dosing
pump injects chemical into the stream measured by one flow sensor, and the
mixed concentration is integrated in a small mixing volume.
"""
from __future__ import annotations

import copy
import json
import math
import random
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import yaml

from . import _accel

VALVE = "motorized_valve"
PUMP = "pump"
DOSING_PUMP = "dosing_pump"

OPEN, CLOSED, TRANSITION = "OPEN", "CLOSED", "TRANSITION"
ON, OFF = "ON", "OFF"
AUTO, MANUAL = "AUTO", "MANUAL"

# process flags toggled through pseudo-actuators
FLAG_ACTUATORS = {"RO": ("ro_running", {"START": True, "STOP": False}),
                  "BACKWASH": ("backwash", {"START": True, "STOP": False})}

_VALID_COMMANDS = {
    VALVE: {OPEN, CLOSED, "CLOSE"},
    PUMP: {ON, OFF},
    DOSING_PUMP: {ON, OFF},
}


class PlantError(Exception):
    """Invalid request against the plant model (unknown id, bad command)."""


class SimulationFault(RuntimeError):
    """Non-finite value reached the state; the simulation must halt."""


@dataclass
class Tank:
    id: str
    area: float
    level: float
    level_max_physical: float
    overflow_threshold: float
    setpoint_low: float
    setpoint_high: float

    def __post_init__(self):
        if not (self.overflow_threshold > self.setpoint_high > self.setpoint_low > 0):
            raise PlantError(f"tank {self.id}: setpoints must satisfy "
                             "overflow > high > low > 0")
        if self.area <= 0 or self.level_max_physical < self.overflow_threshold:
            raise PlantError(f"tank {self.id}: bad geometry")


@dataclass
class Actuator:
    id: str
    kind: str
    state: str
    rated_flow: float
    mode: str = AUTO
    transition_delay: float = 2.0
    target: str | None = None
    transition_left: float = 0.0

    def __post_init__(self):
        if self.rated_flow <= 0:
            raise PlantError(f"actuator {self.id}: rated_flow must be > 0")
        if self.kind not in _VALID_COMMANDS:
            raise PlantError(f"actuator {self.id}: unknown kind {self.kind!r}")

    @property
    def conducting(self) -> bool:
        return self.state in (OPEN, ON)


@dataclass
class FlowPath:
    id: str
    source: str | None
    dest: str | None
    actuators: tuple[str, ...]


@dataclass
class Sensor:
    id: str
    kind: str          # level | flow | concentration | hardness | pressure | status
    target: Any        # tank id, list of path ids, actuator id, pipe id
    units: str
    noise_sigma: float = 0.0


@dataclass
class DosingLine:
    pump: str
    stream_sensor: str
    stock_concentration: float   # mg/L of the dosing stock
    mixing_volume: float         # m^3


@dataclass(frozen=True)
class OverflowEvent:
    time: float
    step: int
    tank: str
    level: float


@dataclass
class PlantState:
    time: float
    tanks: list[Tank]
    actuators: list[Actuator]
    paths: list[FlowPath]
    sensors: dict[str, Sensor]
    dosing: DosingLine | None = None
    pressure: dict[str, float] = field(default_factory=dict)
    pressure_pumps: dict[str, tuple[str, ...]] = field(default_factory=dict)
    pump_head_kpa: float = 150.0
    dosing_concentration: float = 0.0
    hardness: float = 0.0
    hardness_schedule: list[tuple[float, float]] = field(default_factory=list)
    ro_running: bool = True
    backwash: bool = False
    step_index: int = 0
    path_flows: dict[str, float] = field(default_factory=dict)
    events: list[OverflowEvent] = field(default_factory=list)
    rng: random.Random = field(default_factory=lambda: random.Random(0),
                               compare=False, repr=False)

    def tank(self, tank_id: str) -> Tank:
        for t in self.tanks:
            if t.id == tank_id:
                return t
        raise PlantError(f"unknown tank {tank_id!r}")

    def actuator(self, actuator_id: str) -> Actuator:
        for a in self.actuators:
            if a.id == actuator_id:
                return a
        raise PlantError(f"unknown actuator {actuator_id!r}")

    def copy(self) -> "PlantState":
        """Copy the mutable parts; configuration (paths, sensors) is shared.

        The noise generator is shared too, so a copied trajectory keeps
        drawing from the same seeded stream.
        """
        dup = copy.copy(self)
        dup.tanks = [copy.copy(t) for t in self.tanks]
        dup.actuators = [copy.copy(a) for a in self.actuators]
        dup.pressure = dict(self.pressure)
        dup.path_flows = dict(self.path_flows)
        dup.events = list(self.events)
        return dup


# ---------------------------------------------------------------------------
# stepping


def _path_flow(state: PlantState, path: FlowPath, by_id: dict[str, Actuator]) -> float:
    flow = math.inf
    for aid in path.actuators:
        act = by_id[aid]
        if not act.conducting:
            return 0.0
        flow = min(flow, act.rated_flow)
    return 0.0 if flow == math.inf else flow


def _check_finite(state: PlantState) -> None:
    vals = [state.time, state.dosing_concentration, state.hardness]
    vals += [t.level for t in state.tanks]
    vals += list(state.pressure.values())
    if not all(math.isfinite(v) for v in vals):
        raise SimulationFault(f"non-finite plant value at t={state.time}")


def step_plant(state: PlantState, dt: float) -> PlantState:
    """Advance the process by ``dt`` seconds and return the new state.

    Flows are evaluated with actuator states at the start of the step.  Valve
    transitions progress afterwards, so a valve finishing its travel during
    this step conducts from the next one.
    """
    if not (dt > 0 and math.isfinite(dt)):
        raise PlantError(f"dt must be positive and finite, got {dt}")
    _check_finite(state)
    new = state.copy()
    by_id = {a.id: a for a in new.actuators}
    tank_idx = {t.id: i for i, t in enumerate(new.tanks)}

    net = np.zeros(len(new.tanks))
    flows: dict[str, float] = {}
    for path in new.paths:
        q = _path_flow(new, path, by_id)
        flows[path.id] = q
        if path.source is not None:
            net[tank_idx[path.source]] -= q
        if path.dest is not None:
            net[tank_idx[path.dest]] += q

    levels = np.array([t.level for t in new.tanks])
    areas = np.array([t.area for t in new.tanks])
    lmax = np.array([t.level_max_physical for t in new.tanks])
    stepped = _accel.step_levels(levels, net, dt, areas, lmax)

    t_end = new.time + dt
    for i, tank in enumerate(new.tanks):
        before, after = tank.level, float(stepped[i])
        if before <= tank.overflow_threshold < after:
            new.events.append(OverflowEvent(t_end, new.step_index + 1, tank.id, after))
        tank.level = after

    if new.dosing is not None:
        d = new.dosing
        pump = by_id[d.pump]
        stream = _sensor_truth(new, new.sensors[d.stream_sensor], flows)
        if stream > 0:
            q_dose = pump.rated_flow if pump.conducting else 0.0
            c = new.dosing_concentration
            c = c + dt * (q_dose * d.stock_concentration - stream * c) / d.mixing_volume
            new.dosing_concentration = max(c, 0.0)

    for pipe, pumps in new.pressure_pumps.items():
        running = any(by_id[p].conducting for p in pumps)
        new.pressure[pipe] = new.pump_head_kpa if running else 0.0

    for act in new.actuators:
        if act.state == TRANSITION:
            act.transition_left -= dt
            # tolerance absorbs accumulated dt rounding
            if act.transition_left <= 1e-9:
                act.state = act.target or CLOSED
                act.target = None
                act.transition_left = 0.0

    new.path_flows = flows
    new.time = t_end
    new.step_index += 1
    if new.hardness_schedule:
        new.hardness = _scheduled(new.hardness_schedule, new.time, new.hardness)
    _check_finite(new)
    return new


def _scheduled(schedule: list[tuple[float, float]], t: float, default: float) -> float:
    value = default
    for start, v in schedule:
        if start <= t + 1e-12:
            value = v
        else:
            break
    return value


# ---------------------------------------------------------------------------
# sensors and commands


def _sensor_truth(state: PlantState, sensor: Sensor, flows: dict[str, float] | None = None):
    flows = state.path_flows if flows is None else flows
    kind = sensor.kind
    if kind == "level":
        return state.tank(sensor.target).level
    if kind == "flow":
        return sum(flows.get(p, 0.0) for p in sensor.target)
    if kind == "concentration":
        return state.dosing_concentration
    if kind == "hardness":
        return state.hardness
    if kind == "pressure":
        return state.pressure.get(sensor.target, 0.0)
    if kind == "status":
        return state.actuator(sensor.target).state
    if kind == "flag":
        return bool(getattr(state, sensor.target))
    raise PlantError(f"sensor {sensor.id}: unknown kind {kind!r}")


def read_sensor(state: PlantState, sensor_id: str) -> tuple[Any, str]:
    """Return ``(measurement, units)``; noise is drawn from the state's RNG."""
    try:
        sensor = state.sensors[sensor_id]
    except KeyError:
        raise PlantError(f"unknown sensor {sensor_id!r}") from None
    value = _sensor_truth(state, sensor)
    if sensor.noise_sigma > 0 and isinstance(value, float):
        value = value + state.rng.gauss(0.0, sensor.noise_sigma)
    return value, sensor.units


def sensor_snapshot(state: PlantState, sensor_ids: Iterable[str] | None = None) -> dict[str, Any]:
    ids = state.sensors.keys() if sensor_ids is None else sensor_ids
    return {sid: read_sensor(state, sid)[0] for sid in ids}


def _normalize(act: Actuator, command: str) -> str:
    cmd = command.upper()
    if cmd not in _VALID_COMMANDS[act.kind]:
        raise PlantError(f"command {command!r} invalid for {act.kind} {act.id}")
    return CLOSED if cmd == "CLOSE" else cmd


def _apply(act: Actuator, cmd: str) -> None:
    if act.kind != VALVE:
        act.state = cmd
        return
    if act.state == cmd or (act.state == TRANSITION and act.target == cmd):
        return
    act.state = TRANSITION
    act.target = cmd
    act.transition_left = act.transition_delay


def apply_command(state: PlantState, actuator_id: str, command: str,
                  source: str = "plc") -> bool:
    """Apply a control command in place; return False when it was ignored.

    PLC-sourced commands lose against MANUAL mode.
    """
    if actuator_id in FLAG_ACTUATORS:
        attr, table = FLAG_ACTUATORS[actuator_id]
        try:
            setattr(state, attr, table[command.upper()])
        except KeyError:
            raise PlantError(f"command {command!r} invalid for {actuator_id}") from None
        return True
    act = state.actuator(actuator_id)
    cmd = _normalize(act, command)
    if source == "plc" and act.mode == MANUAL:
        return False
    _apply(act, cmd)
    return True


def force_actuator(state: PlantState, actuator_id: str, command: str | None,
                   mode: str = MANUAL) -> PlantState:
    """Operator override: set the mode and, optionally, a command.

    Returns a new state.  In MANUAL mode the override command holds until the
    mode is switched back to AUTO.
    """
    mode = mode.upper()
    if mode not in (AUTO, MANUAL):
        raise PlantError(f"invalid mode {mode!r}")
    new = state.copy()
    act = new.actuator(actuator_id)
    cmd = _normalize(act, command) if command is not None else None
    act.mode = mode
    if cmd is not None:
        _apply(act, cmd)
    return new


# ---------------------------------------------------------------------------
# executor


class Plant:
    """Single owner of a :class:`PlantState`.

    External mutations are queued and applied in order at the next step
    boundary.
    """

    def __init__(self, state: PlantState, dt: float = 0.1):
        self.state = state
        self.dt = dt
        self._queue: deque[tuple[str, str, str | None, str | None]] = deque()

    def submit(self, actuator_id: str, command: str | None, source: str = "plc",
               mode: str | None = None) -> None:
        self._queue.append((actuator_id, command, source, mode))

    def _drain(self) -> None:
        st = self.state
        while self._queue:
            aid, cmd, source, mode = self._queue.popleft()
            try:
                if mode is not None:
                    st = force_actuator(st, aid, cmd, mode)
                elif cmd is not None:
                    apply_command(st, aid, cmd, source)
            except PlantError:
                # bad commands from the network must not stop the process
                continue
        self.state = st

    def step(self) -> PlantState:
        self._drain()
        self.state = step_plant(self.state, self.dt)
        return self.state

    def read(self, sensor_id: str):
        return read_sensor(self.state, sensor_id)[0]


# ---------------------------------------------------------------------------
# configuration and export

DEFAULT_CONFIG = Path(__file__).with_name("data") / "plant.yaml"


def load_config(path: str | Path | None = None, seed: int = 0,
                overrides: dict | None = None) -> PlantState:
    text = Path(path or DEFAULT_CONFIG).read_text(encoding="utf-8")
    cfg = yaml.safe_load(text)
    if overrides:
        cfg = _merge(cfg, overrides)
    return state_from_config(cfg, seed=seed)


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def state_from_config(cfg: dict, seed: int = 0) -> PlantState:
    defaults = cfg.get("defaults", {})
    tanks = [Tank(id=tid, **spec) for tid, spec in cfg["tanks"].items()]
    acts = []
    for aid, spec in cfg["actuators"].items():
        spec = dict(spec)
        spec.setdefault("transition_delay", defaults.get("valve_transition_delay", 2.0))
        acts.append(Actuator(id=aid, **spec))
    paths = [FlowPath(id=pid, source=p.get("source"), dest=p.get("dest"),
                      actuators=tuple(p["actuators"]))
             for pid, p in cfg["paths"].items()]
    sensors = {}
    for sid, spec in cfg["sensors"].items():
        target = spec["target"]
        if isinstance(target, list):
            target = tuple(target)
        sensors[sid] = Sensor(id=sid, kind=spec["kind"], target=target,
                              units=spec.get("units", ""),
                              noise_sigma=float(spec.get("noise_sigma", 0.0)))
    dosing = DosingLine(**cfg["dosing"]) if cfg.get("dosing") else None
    pressure_pumps = {k: tuple(v) for k, v in cfg.get("pressure", {}).get("pipes", {}).items()}
    init = cfg.get("initial", {})
    state = PlantState(
        time=0.0, tanks=tanks, actuators=acts, paths=paths, sensors=sensors,
        dosing=dosing, pressure={k: 0.0 for k in pressure_pumps},
        pressure_pumps=pressure_pumps,
        pump_head_kpa=float(cfg.get("pressure", {}).get("pump_head_kpa", 150.0)),
        dosing_concentration=float(init.get("dosing_concentration", 0.0)),
        hardness=float(init.get("hardness", 0.0)),
        hardness_schedule=[tuple(x) for x in cfg.get("hardness_schedule", [])],
        ro_running=bool(init.get("ro_running", True)),
        backwash=bool(init.get("backwash", False)),
        rng=random.Random(seed),
    )
    by_id = {a.id: a for a in acts}
    for pipe, pumps in pressure_pumps.items():
        state.pressure[pipe] = state.pump_head_kpa if any(by_id[p].conducting for p in pumps) else 0.0
    state.path_flows = {p.id: _path_flow(state, p, by_id) for p in paths}
    _check_finite(state)
    return state


def snapshot_record(state: PlantState) -> dict[str, Any]:
    """Ground-truth record for export: time plus every sensor's true value."""
    rec: dict[str, Any] = {"time": round(state.time, 9)}
    for sid, sensor in state.sensors.items():
        rec[sid] = _sensor_truth(state, sensor)
    return rec


def export_snapshots(states: Iterable[PlantState], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for st in states:
            fh.write(json.dumps(snapshot_record(st), sort_keys=False) + "\n")
