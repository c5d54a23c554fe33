"""Hierarchical network IDS: passive per-segment nodes and a central store.

Nodes only ever receive tap copies; they have no way to transmit.  The
central aggregator is the single writer of the alarm store, correlates tag
values seen on L0 segments with the values PLCs report on L1, and answers
read-only queries.
"""
from __future__ import annotations

import itertools
import json
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

from .alarms import (ARP_POISON, DETECTION_RULES, IP_MAC_CONFLICT, SYN_FLOOD,
                     TAG_DIVERGENCE, Alarm, SCAN_FAULT)
from .simnet import tagproto
from .simnet.frames import ACK, ARP_REP, DATA, SYN, SYNACK, U32, Frame


@dataclass
class IdsConfig:
    window: float = 10.0          # T_w, seconds
    syn_threshold: int = 20       # N_syn
    delta: float = 0.005          # level divergence threshold (m)
    k: int = 3                    # consecutive diverging observations
    match_window: float = 1.0     # max age of the L0 value an L1 value is compared with
    cooldown: float = 10.0        # suppress identical alarms for this long


@dataclass(frozen=True)
class TagObservation:
    ts: float
    tag: str
    value: object
    node: str
    device_ip: str


def _evidence(frame: Frame) -> str:
    return f"{frame.kind}@{frame.link}@{frame.ts:.6f}"


class IdsNode:
    """Passive detector attached to one segment."""

    def __init__(self, node_id: str, tap_segment: str, config: IdsConfig | None = None):
        self.id = node_id
        self.tap_segment = tap_segment
        self.config = config or IdsConfig()
        self.learned_bindings: dict[str, str] = {}
        self.queue: deque[Frame] = deque()
        self.malformed = 0
        self.frames_seen = 0
        self.syns: dict[str, deque[float]] = defaultdict(deque)
        self.completions: dict[str, deque[float]] = defaultdict(deque)
        self._synacks: dict[tuple[str, str, int], float] = {}
        self._pending_reads: dict[tuple[str, str], str] = {}
        self._last_alarm: dict[tuple, float] = {}
        self._ids = itertools.count(1)

    def tap(self, frame: Frame) -> None:
        self.queue.append(frame)

    def _alarm(self, ts: float, rule: str, severity: str, evidence: tuple[str, ...],
               key: tuple, detail: str = "") -> Alarm | None:
        last = self._last_alarm.get(key)
        if last is not None and ts - last < self.config.cooldown:
            return None
        self._last_alarm[key] = ts
        return Alarm(f"{self.id}-{next(self._ids)}", ts, self.id, rule, severity,
                     evidence, detail=detail)

    def process(self) -> tuple[list[Alarm], list[TagObservation]]:
        alarms: list[Alarm] = []
        observations: list[TagObservation] = []
        while self.queue:
            frame = self.queue.popleft()
            self.frames_seen += 1
            try:
                a = detect_arp_poison(self, frame)
                if a is not None:
                    alarms.append(a)
                if frame.kind in (SYN, SYNACK, ACK):
                    self._count_handshake(frame)
                    a = detect_syn_flood(self, frame.dst_ip if frame.kind != SYNACK else frame.src_ip,
                                         frame.ts)
                    if a is not None:
                        alarms.append(a)
                elif frame.kind == DATA:
                    obs = self._observe(frame)
                    if obs is not None:
                        observations.append(obs)
            except Exception:
                # detectors never fault the pipeline
                self.malformed += 1
        return alarms, observations

    # -- handshake statistics ------------------------------------------------

    def _count_handshake(self, frame: Frame) -> None:
        if frame.kind == SYN:
            self.syns[frame.dst_ip].append(frame.ts)
        elif frame.kind == SYNACK:
            self._synacks[(frame.dst_ip, frame.src_ip, (frame.seq + 1) % U32)] = frame.ts
        elif frame.kind == ACK:
            if self._synacks.pop((frame.src_ip, frame.dst_ip, frame.ack), None) is not None:
                self.completions[frame.dst_ip].append(frame.ts)
        horizon = frame.ts - self.config.window
        for table in (self.syns, self.completions):
            for dq in table.values():
                while dq and dq[0] < horizon:
                    dq.popleft()
        if len(self._synacks) > 4096:
            self._synacks = {k: v for k, v in self._synacks.items() if v >= horizon}

    def window_stats(self, dst_ip: str) -> tuple[int, int]:
        return len(self.syns.get(dst_ip, ())), len(self.completions.get(dst_ip, ()))

    # -- tag payloads ----------------------------------------------------------

    def _observe(self, frame: Frame) -> TagObservation | None:
        msg = tagproto.decode_any(frame.payload)
        if msg is None:
            self.malformed += 1
            return None
        if isinstance(msg, tagproto.Request):
            if msg.op == tagproto.READ:
                self._pending_reads[(frame.src_ip, frame.dst_ip)] = msg.name
                return None
            # field devices push values to their PLC on L0
            return TagObservation(frame.ts, msg.name, tagproto.decode_value(msg.value),
                                  self.id, frame.dst_ip)
        if msg.op == tagproto.READ_RESP and msg.status == tagproto.ST_OK:
            name = self._pending_reads.pop((frame.dst_ip, frame.src_ip), None)
            if name is not None:
                return TagObservation(frame.ts, name, tagproto.decode_value(msg.value),
                                      self.id, frame.src_ip)
        return None


def detect_arp_poison(node: IdsNode, frame: Frame) -> Alarm | None:
    """Binding changes in ARP replies, or IP traffic contradicting a binding."""
    if frame.kind == ARP_REP:
        known = node.learned_bindings.get(frame.src_ip)
        if known is None:
            node.learned_bindings[frame.src_ip] = frame.src_mac
            return None
        if known == frame.src_mac:
            return None
        return node._alarm(frame.ts, ARP_POISON, "high",
                           (_evidence(frame), frame.src_ip, f"{known}->{frame.src_mac}"),
                           (ARP_POISON, frame.src_ip, frame.src_mac),
                           detail=f"{frame.src_ip} remapped from {known} to {frame.src_mac}")
    if frame.kind in (DATA, SYN, SYNACK, ACK):
        known = node.learned_bindings.get(frame.src_ip)
        if known is not None and known != frame.src_mac:
            return node._alarm(frame.ts, IP_MAC_CONFLICT, "medium",
                               (_evidence(frame), frame.src_ip, frame.src_mac),
                               (IP_MAC_CONFLICT, frame.src_ip, frame.src_mac))
    return None


def detect_syn_flood(node: IdsNode, dst_ip: str, ts: float) -> Alarm | None:
    """Alarm when SYNs minus completed handshakes toward ``dst_ip`` exceed N_syn."""
    syns, done = node.window_stats(dst_ip)
    if syns - done > node.config.syn_threshold:
        return node._alarm(ts, SYN_FLOOD, "high", (f"dst={dst_ip}", f"syn={syns}", f"done={done}"),
                           (SYN_FLOOD, dst_ip))
    return None


@dataclass
class _DivergenceState:
    run: int = 0
    fired: bool = False


def _diverges(a, b, delta: float) -> bool:
    num = (int, float)
    if isinstance(a, num) and isinstance(b, num) and not isinstance(a, bool) \
            and not isinstance(b, bool):
        if isinstance(a, float) or isinstance(b, float):
            return abs(a - b) > delta
    return a != b


def detect_tag_divergence(l1_obs: TagObservation, l0_history: Iterable[TagObservation],
                          state: _DivergenceState, config: IdsConfig) -> bool | None:
    """Compare one L1-reported value with the latest matching L0 value.

    Returns True when this observation completes ``k`` consecutive diverging
    pairs, False otherwise, None when there is nothing to compare with.
    """
    match = None
    for obs in l0_history:
        if obs.ts <= l1_obs.ts and l1_obs.ts - obs.ts <= config.match_window:
            if match is None or obs.ts >= match.ts:
                match = obs
    if match is None:
        return None
    if _diverges(match.value, l1_obs.value, config.delta):
        state.run += 1
        if state.run >= config.k and not state.fired:
            state.fired = True
            return True
    else:
        state.run = 0
        state.fired = False
    return False


# ---------------------------------------------------------------------------
# central aggregator


@dataclass(frozen=True)
class AlarmFilter:
    start: float | None = None
    end: float | None = None
    rule: str | None = None
    node: str | None = None
    session: str | None = None

    def validate(self) -> None:
        if self.start is not None and self.end is not None and self.start > self.end:
            raise ValueError("filter start is after end")
        if self.rule is not None and self.rule not in DETECTION_RULES + (SCAN_FAULT,):
            raise ValueError(f"unknown rule {self.rule!r}")


@dataclass
class _Session:
    id: str
    start: float
    end: float | None = None

    def covers(self, ts: float) -> bool:
        return self.start <= ts and (self.end is None or ts <= self.end)


class AlarmStore:
    """Append-only alarm log with per-rule and per-node indexes."""

    def __init__(self):
        self._alarms: list[Alarm] = []
        self._by_rule: dict[str, list[int]] = defaultdict(list)
        self._by_node: dict[str, list[int]] = defaultdict(list)

    def append(self, alarm: Alarm) -> None:
        idx = len(self._alarms)
        self._alarms.append(alarm)
        self._by_rule[alarm.rule].append(idx)
        self._by_node[alarm.source_node].append(idx)

    def __len__(self) -> int:
        return len(self._alarms)

    def query(self, flt: AlarmFilter | None = None) -> list[Alarm]:
        flt = flt or AlarmFilter()
        flt.validate()
        if flt.rule is not None:
            idx = self._by_rule.get(flt.rule, [])
        elif flt.node is not None:
            idx = self._by_node.get(flt.node, [])
        else:
            idx = range(len(self._alarms))
        out = []
        for i in idx:
            a = self._alarms[i]
            if flt.node is not None and a.source_node != flt.node:
                continue
            if flt.start is not None and a.ts < flt.start:
                continue
            if flt.end is not None and a.ts > flt.end:
                continue
            if flt.session is not None and a.attack_session != flt.session:
                continue
            out.append(a)
        out.sort(key=lambda a: (a.ts, a.id))
        return out

    def export(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for a in self.query():
                fh.write(a.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "AlarmStore":
        store = cls()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    store.append(Alarm.from_json(line))
        return store


class Central:
    def __init__(self, config: IdsConfig | None = None):
        self.config = config or IdsConfig()
        self.store = AlarmStore()
        self.sessions: list[_Session] = []
        self.l0_history: dict[str, deque[TagObservation]] = defaultdict(lambda: deque(maxlen=64))
        self._div_state: dict[str, _DivergenceState] = defaultdict(_DivergenceState)
        self._ids = itertools.count(1)

    # sessions --------------------------------------------------------------

    def open_session(self, session_id: str, start: float) -> None:
        self.sessions.append(_Session(session_id, start))

    def close_session(self, session_id: str, end: float) -> None:
        for s in self.sessions:
            if s.id == session_id and s.end is None:
                s.end = end

    def session_at(self, ts: float) -> str | None:
        for s in reversed(self.sessions):
            if s.covers(ts):
                return s.id
        return None

    # ingestion -------------------------------------------------------------

    def ingest(self, alarm: Alarm) -> Alarm:
        alarm = replace(alarm, attack_session=self.session_at(alarm.ts))
        self.store.append(alarm)
        return alarm

    def observe_l0(self, obs: TagObservation) -> None:
        self.l0_history[obs.tag].append(obs)

    def observe_l1(self, obs: TagObservation) -> Alarm | None:
        history = self.l0_history.get(obs.tag)
        if not history:
            return None
        hit = detect_tag_divergence(obs, history, self._div_state[obs.tag], self.config)
        if hit:
            alarm = Alarm(f"CENTRAL-{next(self._ids)}", obs.ts, "CENTRAL", TAG_DIVERGENCE,
                          "high", (obs.tag, f"device={obs.device_ip}"),
                          detail=f"{obs.tag} reported {obs.value!r} on L1")
            return self.ingest(alarm)
        return None

    def query_alarms(self, flt: AlarmFilter | None = None) -> list[Alarm]:
        return self.store.query(flt)


class HierarchicalIds:
    """Nodes on every L0 segment plus one on the L1 star, feeding :class:`Central`."""

    def __init__(self, network, l1_links: Iterable[str], l0_links: Iterable[str],
                 config: IdsConfig | None = None):
        self.config = config or IdsConfig()
        self.central = Central(self.config)
        self.l0_nodes = [IdsNode(f"IDS-{lid}", lid, self.config) for lid in l0_links]
        self.l1_nodes = [IdsNode(f"IDS-{lid}", lid, self.config) for lid in l1_links]
        self.enabled = True
        for node in self.l0_nodes + self.l1_nodes:
            network.add_tap(node.tap_segment, node.tap)

    @property
    def nodes(self) -> list[IdsNode]:
        return self.l0_nodes + self.l1_nodes

    def process(self) -> list[Alarm]:
        raised = []
        for node in self.l0_nodes:
            alarms, obs = node.process()
            for o in obs:
                self.central.observe_l0(o)
            raised += [self.central.ingest(a) for a in alarms]
        for node in self.l1_nodes:
            alarms, obs = node.process()
            raised += [self.central.ingest(a) for a in alarms]
            for o in obs:
                a = self.central.observe_l1(o)
                if a is not None:
                    raised.append(a)
        return raised


def export_alarms_jsonl(alarms: Iterable[Alarm]) -> str:
    return "".join(a.to_json() + "\n" for a in alarms)


def alarm_dict(alarm: Alarm) -> dict:
    d = json.loads(alarm.to_json())
    return d
