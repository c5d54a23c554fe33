"""The assembled range: plant, field I/O, PLCs, HMI and the IDS on one clock.

One call to :meth:`Range.tick` advances everything by one plant step:

1. queued actuator commands are applied and the plant is stepped;
2. each RIO pushes its sensor values to its PLC over the L0 segment;
3. PLC-to-PLC pushes, HMI polling and attacker activities run on L1;
4. every PLC scans (rungs, then embedded invariant checkers);
5. the IDS nodes process their tap queues.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import yaml

from . import plantsim
from .alarms import Alarm
from .netids import Central, HierarchicalIds, IdsConfig
from .plcrt import PLC, Historian, parse_program, parse_rules
from .simnet import Network, Timeout, Unresolvable, load_topology, tag_service, tagproto
from .simnet.network import Conn, Host, NetworkError

DATA = Path(__file__).resolve().parent / "data"
PACK_DIR = DATA / "pack"

# RIO -> (PLC, analog tags pushed every scan, discrete tags pushed on change)
FIELD_IO = {
    "RIO1": ("PLC1", ("LIT101", "FIT101", "FIT201"), ("MV101", "P101", "P102")),
    "RIO2": ("PLC2", ("FIT201", "AIT201"), ("P201",)),
    "RIO3": ("PLC3", ("LIT301", "FIT301", "FIT401", "AIT301"), ("P301", "RO", "BACKWASH")),
}
PLC_ACTUATORS = {
    "PLC1": ("MV101", "P101", "P102"),
    "PLC2": ("P201",),
    "PLC3": ("P301", "RO", "BACKWASH"),
}
HMI_TAGS = {
    "PLC1": ("LIT101", "FIT101", "MV101", "P101"),
    "PLC2": ("AIT201", "P201"),
    "PLC3": ("LIT301", "AIT301", "P301", "HB"),
}
KEEPALIVE_HOLD = 10.0


def actuator_owner(actuator: str) -> str:
    for plc, acts in PLC_ACTUATORS.items():
        if actuator in acts:
            return plc
    raise KeyError(f"no PLC drives {actuator!r}")


def load_flags(path: str | Path | None = None) -> dict[str, str]:
    path = Path(path) if path else PACK_DIR / "flags.yaml"
    return {str(k): str(v) for k, v in yaml.safe_load(path.read_text(encoding="utf-8")).items()}


@dataclass
class RangeConfig:
    seed: int = 0
    dt: float = 0.1
    hmi_poll: float = 1.0
    hb_period: float = 2.0
    staleness: float = 3.0
    peer_period: float = 0.5
    ids: bool = True
    ids_config: IdsConfig = field(default_factory=IdsConfig)
    plant_path: str | None = None
    plant_overrides: dict | None = None
    topology_path: str | None = None
    flags: dict[str, str] | None = None


@dataclass(frozen=True)
class FlagRelease:
    challenge: str
    flag: str
    ts: float
    step: int


class Activity(Protocol):
    id: str

    def on_tick(self, rng: "Range", t: float) -> None: ...


class RIO:
    """Field I/O unit: samples plant sensors and pushes them to its PLC."""

    def __init__(self, host: Host, plc_ip: str, analog: tuple[str, ...],
                 discrete: tuple[str, ...]):
        self.host = host
        self.plc_ip = plc_ip
        self.analog = analog
        self.discrete = discrete
        self.conn: Conn | None = None
        self._last: dict[str, Any] = {}

    def push(self, net: Network, state: plantsim.PlantState) -> int:
        if self.conn is None or self.conn.state != "ESTABLISHED":
            return 0
        sent = 0
        for tag in self.analog:
            sent += self._send(net, tag, plantsim.read_sensor(state, tag)[0])
        for tag in self.discrete:
            value = plantsim.read_sensor(state, tag)[0]
            if self._last.get(tag, object()) != value:
                sent += self._send(net, tag, value)
                self._last[tag] = value
        self.conn.inbox.clear()
        return sent

    def _send(self, net: Network, tag: str, value) -> int:
        net.send_payload(self.host, self.conn,
                         tagproto.encode_request(tagproto.WRITE, tag, value))
        return 1


class HMI:
    """Operator panel: polls the PLCs over fresh connections and caches values.

    Values older than ``staleness`` seconds render as ``*``.
    """

    def __init__(self, host: Host, plc_ips: dict[str, str], tags: dict[str, tuple[str, ...]],
                 staleness: float = 3.0):
        self.host = host
        self.plc_ips = plc_ips
        self.tags = tags
        self.staleness = staleness
        self.cache: dict[tuple[str, str], tuple[Any, float]] = {}
        self.pending: list[tuple[str, str, str | None, str]] = []
        self.failures: dict[str, int] = {plc: 0 for plc in tags}
        self.hb_value = 2
        self.log: list[tuple[float, str, str]] = []

    def request_override(self, actuator: str, command: str | None, mode: str = "MANUAL") -> None:
        self.pending.append((actuator_owner(actuator), actuator, command, mode.upper()))

    def poll(self, net: Network, write_hb: bool) -> None:
        for plc, names in self.tags.items():
            try:
                conn = net.open_flow(self.host, self.plc_ips[plc])
            except (Timeout, Unresolvable):
                self.failures[plc] += 1
                self.log.append((net.now, plc, "unreachable"))
                continue
            try:
                for name in names:
                    resp = net.tag_request(self.host, conn, tagproto.READ, name)
                    if resp.status == tagproto.ST_OK:
                        self.cache[(plc, name)] = (tagproto.decode_value(resp.value), net.now)
                if write_hb and plc == "PLC3":
                    net.tag_request(self.host, conn, tagproto.WRITE, "HB", self.hb_value)
                for item in [p for p in self.pending if p[0] == plc]:
                    _, act, cmd, mode = item
                    net.tag_request(self.host, conn, tagproto.WRITE, f"{act}_MODE", mode)
                    if cmd is not None:
                        net.tag_request(self.host, conn, tagproto.WRITE, f"{act}_CMD", cmd)
                    self.pending.remove(item)
                    self.log.append((net.now, plc, f"override {act} {cmd} {mode}"))
            except Timeout:
                self.failures[plc] += 1
                self.log.append((net.now, plc, "timeout"))
            finally:
                net.close_flow(self.host, conn)

    def age(self, plc: str, tag: str, now: float) -> float | None:
        entry = self.cache.get((plc, tag))
        return None if entry is None else now - entry[1]

    def render(self, plc: str, tag: str, now: float) -> str:
        entry = self.cache.get((plc, tag))
        if entry is None or now - entry[1] > self.staleness:
            return "*"
        value = entry[0]
        return f"{value:.3f}" if isinstance(value, float) else str(value)

    def state(self, now: float) -> list[dict]:
        rows = []
        for plc, names in self.tags.items():
            for name in names:
                entry = self.cache.get((plc, name))
                age = None if entry is None else round(now - entry[1], 6)
                rows.append({"device": plc, "tag": name,
                             "value": None if entry is None else entry[0],
                             "display": self.render(plc, name, now),
                             "age": age,
                             "stale": age is None or age > self.staleness})
        return rows


class Range:
    """A running instance of the simulated plant and its control network."""

    def __init__(self, config: RangeConfig | None = None):
        self.config = cfg = config or RangeConfig()
        self.lock = threading.RLock()
        self.flags = dict(cfg.flags) if cfg.flags is not None else load_flags()
        state = plantsim.load_config(cfg.plant_path, seed=cfg.seed,
                                     overrides=cfg.plant_overrides)
        self.plant = plantsim.Plant(state, dt=cfg.dt)
        self.topology = load_topology(cfg.topology_path)
        self.net = self.topology.build(seed=cfg.seed)
        self.historian = Historian()
        self.ids: HierarchicalIds | None = None
        if cfg.ids:
            l0 = [lid for lid, kind in self.topology.links.items() if kind == "ring"]
            l1 = [lid for lid, kind in self.topology.links.items() if kind != "ring"]
            self.ids = HierarchicalIds(self.net, l1, l0, cfg.ids_config)
            self.central = self.ids.central
        else:
            self.central = Central(cfg.ids_config)

        self.plcs: dict[str, PLC] = {}
        self._build_plcs()
        self.rios = []
        for rid, (plc, analog, discrete) in FIELD_IO.items():
            self.rios.append(RIO(self.net.hosts[rid], self.net.hosts[plc].ip, analog, discrete))
        ips = {p: self.net.hosts[p].ip for p in HMI_TAGS}
        self.hmi = HMI(self.net.hosts["HMI"], ips, HMI_TAGS, cfg.staleness)
        self._peer: list[tuple[str, str, str, Callable[[], Any], Conn | None]] = []
        self.activities: list[Activity] = []
        self.releases: list[FlagRelease] = []
        self.invariant_alarms: list[Alarm] = []
        self.attacker: Host | None = None
        self._hb3_since: float | None = None
        self._seen_events = 0
        self.ticks = 0
        self._started = False

    # -- construction ----------------------------------------------------------

    def _build_plcs(self) -> None:
        field_ips: dict[str, set[str]] = {p: set() for p in self.topology.hosts
                                          if self.topology.hosts[p].role == "PLC"}
        for rid, (plc, _, _) in FIELD_IO.items():
            field_ips[plc].add(self.topology.hosts[rid].ip)
        field_ips["PLC1"].add(self.topology.hosts["PLC3"].ip)
        field_ips["PLC3"].add(self.topology.hosts["PLC2"].ip)
        for pid in field_ips:
            rung_file, inv_file = DATA / f"{pid.lower()}.rung", DATA / f"{pid.lower()}.inv"
            program = parse_program(rung_file.read_text(encoding="utf-8")) \
                if rung_file.exists() else None
            rules = parse_rules(inv_file.read_text(encoding="utf-8"),
                                program.setpoints if program else {}, prefix=f"{pid}-INV") \
                if inv_file.exists() else []
            plc = PLC(pid, program, rules, PLC_ACTUATORS.get(pid, ()),
                      scan_period=self.config.dt, historian=self.historian)
            self.plcs[pid] = plc
            self.net.hosts[pid].service = self._plc_service(plc, frozenset(field_ips[pid]))
        self.plcs["PLC2"].define("README:2", self.flags.get("minicps-2", ""), writable=False)
        self.plcs["PLC3"].define("HB", 2, writable=True)
        self.plcs["PLC3"].define("UF_RUNTIME", 0.0, writable=False)
        for plc, tag in (("PLC1", "FLAG:3"), ("PLC3", "FLAG:4"), ("PLC3", "FLAG:5")):
            self.plcs[plc].define(tag, "", writable=False)

    @staticmethod
    def _plc_service(plc: PLC, field_ips: frozenset[str]):
        base = tag_service(plc)

        def serve(host, conn, payload, now):
            # writes from the PLC's own field devices and peers are inputs
            if conn.peer_ip in field_ips and payload[:1] == bytes([tagproto.WRITE]):
                try:
                    req = tagproto.decode_request(payload)
                except tagproto.ProtocolError:
                    return base(host, conn, payload, now)
                plc.set_local(req.name, tagproto.decode_value(req.value), now)
                return tagproto.encode_response(tagproto.WRITE_RESP, tagproto.ST_OK)
            return base(host, conn, payload, now)

        return serve

    def start(self) -> None:
        """Announce every host, open the persistent field and peer flows."""
        if self._started:
            return
        with self.lock:
            net = self.net
            for host in net.hosts.values():
                if host.role != "ATTACKER":
                    net.announce(host)
            net.run_until(net.now + 0.01)
            for rio in self.rios:
                rio.conn = net.open_flow(rio.host, rio.plc_ip)
            self._add_peer("PLC3", "PLC1", "LIT301", lambda: self.plcs["PLC3"].tags["LIT301"].value)
            self._add_peer("PLC2", "PLC3", "MSG:2", lambda: self.flags.get("minicps-1", ""))
            self._started = True

    def _add_peer(self, src: str, dst: str, tag: str, value: Callable[[], Any]) -> None:
        conn = self.net.open_flow(self.net.hosts[src], self.net.hosts[dst].ip)
        self._peer.append((src, dst, tag, value, conn))

    # -- clock -------------------------------------------------------------------

    @property
    def time(self) -> float:
        return self.plant.state.time

    def _every(self, period: float, offset: int = 0) -> bool:
        n = max(1, round(period / self.config.dt))
        return (self.ticks + offset) % n == 0

    def tick(self) -> None:
        with self.lock:
            if not self._started:
                self.start()
            net = self.net
            state = self.plant.step()
            t = state.time
            self._check_overflow(state)
            net.run_until(max(net.now, t))
            for rio in self.rios:
                rio.push(net, state)
            net.run_until(net.now + 4 * net.hop_delay)
            if self._every(self.config.peer_period):
                self._push_peers()
            if self._every(self.config.hmi_poll, offset=3):
                self.hmi.poll(net, write_hb=self._every(self.config.hb_period, offset=3))
            for act in list(self.activities):
                act.on_tick(self, t)
            net.run_until(net.now + 4 * net.hop_delay)
            scan_ts = max(net.now, t)
            for plc in self.plcs.values():
                self._scan(plc, scan_ts)
            if self.ids is not None:
                self.ids.process()
            self._check_keepalive(scan_ts)
            self.ticks += 1

    def run(self, seconds: float, until: Callable[["Range"], bool] | None = None) -> bool:
        """Advance ``seconds`` of simulated time; stop early when ``until`` holds."""
        n = max(0, round(seconds / self.config.dt))
        for _ in range(n):
            self.tick()
            if until is not None and until(self):
                return True
        return False

    def _push_peers(self) -> None:
        for src, _, tag, value, conn in self._peer:
            if conn is None or conn.state != "ESTABLISHED":
                continue
            try:
                self.net.send_payload(self.net.hosts[src], conn,
                                      tagproto.encode_request(tagproto.WRITE, tag, value()))
            except NetworkError:
                continue
            conn.inbox.clear()

    def _scan(self, plc: PLC, ts: float) -> None:
        result = plc.scan_cycle(ts=ts)
        for cmd in result.commands:
            self.plant.submit(cmd.actuator, cmd.command, "plc")
        for act, cmd, mode in plc.take_overrides():
            self.plant.submit(act, cmd, "hmi", mode=mode)
        for alarm in result.alarms:
            stored = self.central.ingest(alarm)
            self.invariant_alarms.append(stored)

    # -- challenge hooks -----------------------------------------------------------

    def release_flag(self, challenge: str, ts: float, step: int) -> FlagRelease | None:
        if any(r.challenge == challenge for r in self.releases):
            return None
        rel = FlagRelease(challenge, self.flags.get(challenge, ""), ts, step)
        self.releases.append(rel)
        return rel

    def _check_overflow(self, state: plantsim.PlantState) -> None:
        for ev in state.events[self._seen_events:]:
            if ev.tank == "T101":
                rel = self.release_flag("minicps-3", ev.time, ev.step)
                if rel:
                    self.plcs["PLC1"].set_local("FLAG:3", rel.flag, ev.time)
            elif ev.tank == "T301":
                rel = self.release_flag("minicps-5", ev.time, ev.step)
                if rel:
                    self.plcs["PLC3"].set_local("FLAG:5", rel.flag, ev.time)
        self._seen_events = len(state.events)

    def _check_keepalive(self, ts: float) -> None:
        if self.plcs["PLC3"].tags["HB"].value == 3:
            if self._hb3_since is None:
                self._hb3_since = ts
            elif ts - self._hb3_since >= KEEPALIVE_HOLD - 1e-9:
                rel = self.release_flag("minicps-4", ts, self.plant.state.step_index)
                if rel:
                    self.plcs["PLC3"].set_local("FLAG:4", rel.flag, ts)
        else:
            self._hb3_since = None

    # -- attacker access --------------------------------------------------------------

    def join_attacker(self, link: str = "L1") -> Host:
        """Attach the declared attacker machine to a segment."""
        with self.lock:
            if self.attacker is None:
                spec = self.topology.attacker
                if spec is None:
                    raise NetworkError("topology declares no attacker host")
                self.attacker = self.net.add_host(spec.id, spec.mac, spec.ip, spec.role, [link])
            return self.attacker

    def add_activity(self, activity: Activity) -> None:
        with self.lock:
            self.activities.append(activity)

    def remove_activity(self, activity_id: str) -> None:
        with self.lock:
            self.activities = [a for a in self.activities if a.id != activity_id]

    def device_ip(self, device: str) -> str:
        return self.net.hosts[device].ip

    def alarms(self) -> list[Alarm]:
        return self.central.query_alarms()

    def hmi_state(self) -> list[dict]:
        with self.lock:
            return self.hmi.state(self.net.now)


def reference_run(seconds: float = 600.0, seed: int = 0, **kwargs) -> Range:
    """Clean run with no attack activity."""
    rng = Range(RangeConfig(seed=seed, **kwargs))
    rng.start()
    rng.run(seconds)
    return rng
