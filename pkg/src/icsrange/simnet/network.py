"""Event-driven network: segments, hosts, ARP, a small handshake transport.

All frames go through one dispatcher ordered by delivery time.  Client
helpers (:meth:`Network.open_flow`, :meth:`Network.tag_request`) pump the
dispatcher until their answer arrives or a deadline passes, so they must be
called from outside frame handlers.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import queue
import random
from dataclasses import dataclass, field
from typing import Callable, Iterable, Protocol

from . import tagproto
from .frames import (ACK, ARP_REP, ARP_REQ, BROADCAST, DATA, DELIVERED, DROPPED_DOS,
                     DROPPED_MITM, FIN, SYN, SYNACK, U32, UNROUTABLE, Frame)

log = logging.getLogger(__name__)

PLC, RIO, HMI, SCADA, HISTORIAN, ATTACKER, IDS_TAP = (
    "PLC", "RIO", "HMI", "SCADA", "HISTORIAN", "ATTACKER", "IDS_TAP")

PASS, DROP, MODIFY = "PASS", "DROP", "MODIFY"
SEQ_SLACK = 1 << 16


class NetworkError(RuntimeError):
    pass


class Unresolvable(NetworkError):
    pass


class Timeout(NetworkError):
    pass


@dataclass
class Link:
    id: str
    kind: str = "star"          # "ring" (L0 DLR) or "star" (L1)
    hosts: list[str] = field(default_factory=list)
    taps: list[Callable[[Frame], None]] = field(default_factory=list)


@dataclass
class Conn:
    """One endpoint's view of an established (or opening) flow."""
    id: int
    local_ip: str
    peer_ip: str
    link: str
    snd_next: int
    rcv_next: int
    state: str = "SYN_SENT"
    inbox: list[bytes] = field(default_factory=list)
    client: bool = True


class Service(Protocol):
    def __call__(self, host: "Host", conn: Conn, payload: bytes, now: float) -> bytes | None: ...


@dataclass
class Host:
    id: str
    mac: str
    ip: str
    role: str
    links: list[str] = field(default_factory=list)
    arp_table: dict[str, tuple[str, float]] = field(default_factory=dict)
    online: bool = True
    service: Service | None = None
    half_open_capacity: int = 64
    half_open_timeout: float = 5.0
    half_open: dict[tuple[str, int], tuple[float, int, int, str]] = field(default_factory=dict)
    conns: list[Conn] = field(default_factory=list)
    sniffer: Callable[[Frame], None] | None = None

    def resolve(self, ip: str) -> str | None:
        entry = self.arp_table.get(ip)
        return entry[0] if entry else None


@dataclass
class Hook:
    """MitM interposition.  ``apply`` returns ``(verdict, frame)``."""
    id: str
    link: str | None
    match: Callable[[Frame], bool]
    apply: Callable[[Frame], tuple[str, Frame]]
    # forward to the real owner of dst_ip (ARP-poisoning relays)
    relay: bool = False
    owner: str | None = None
    active: bool = True


class Network:
    def __init__(self, seed: int = 0, hop_delay: float = 0.001,
                 half_open_capacity: int = 64, half_open_timeout: float = 5.0):
        self.rng = random.Random(seed)
        self.hop_delay = hop_delay
        self.half_open_capacity = half_open_capacity
        self.half_open_timeout = half_open_timeout
        self.now = 0.0
        self.links: dict[str, Link] = {}
        self.hosts: dict[str, Host] = {}
        self.hooks: list[Hook] = []
        self.capture: list[Frame] = []
        self.routing_faults: list[tuple[float, str]] = []
        self._events: list[tuple[float, int, Frame]] = []
        self._counter = itertools.count()
        self._conn_ids = itertools.count(1)
        self._inbox: queue.SimpleQueue[Frame] = queue.SimpleQueue()
        self.on_deliver: list[Callable[[Frame, Frame | None], None]] = []

    # -- topology -----------------------------------------------------------

    def add_link(self, link_id: str, kind: str = "star") -> Link:
        link = Link(link_id, kind)
        self.links[link_id] = link
        return link

    def add_host(self, host_id: str, mac: str, ip: str, role: str,
                 links: Iterable[str]) -> Host:
        if host_id in self.hosts:
            raise NetworkError(f"duplicate host {host_id}")
        host = Host(host_id, mac.lower(), ip, role, list(links),
                    half_open_capacity=self.half_open_capacity,
                    half_open_timeout=self.half_open_timeout)
        for lid in host.links:
            self.links[lid].hosts.append(host_id)
        self.hosts[host_id] = host
        return host

    def add_tap(self, link_id: str, callback: Callable[[Frame], None]) -> None:
        self.links[link_id].taps.append(callback)

    def remove_taps(self) -> None:
        for link in self.links.values():
            link.taps.clear()

    def add_hook(self, hook: Hook) -> Hook:
        self.hooks.append(hook)
        return hook

    def remove_hook(self, hook_id: str) -> None:
        self.hooks = [h for h in self.hooks if h.id != hook_id]

    def host_by_ip(self, ip: str) -> Host | None:
        for h in self.hosts.values():
            if h.ip == ip:
                return h
        return None

    def link_between(self, src: Host, dst_ip: str) -> str:
        dst = self.host_by_ip(dst_ip)
        if dst is not None:
            for lid in src.links:
                if lid in dst.links:
                    return lid
        if not src.links:
            raise NetworkError(f"{src.id} is not attached to any link")
        return src.links[0]

    # -- sending and dispatch ---------------------------------------------------

    def isn(self) -> int:
        return self.rng.randrange(0, 1 << 31)

    def send(self, frame: Frame) -> None:
        heapq.heappush(self._events, (self.now + self.hop_delay, next(self._counter), frame))

    def inject(self, frame: Frame) -> None:
        """Thread-safe entry for frames produced outside the dispatcher."""
        self._inbox.put(frame)

    def _drain_inbox(self) -> None:
        while True:
            try:
                frame = self._inbox.get_nowait()
            except queue.Empty:
                return
            self.send(frame.with_(ts=self.now))

    def run_until(self, deadline: float, stop: Callable[[], bool] | None = None) -> bool:
        """Dispatch events up to ``deadline``; True if ``stop`` became true."""
        self._drain_inbox()
        while self._events and self._events[0][0] <= deadline + 1e-12:
            if stop is not None and stop():
                return True
            t, _, frame = heapq.heappop(self._events)
            if t > self.now:
                self.now = t
            self._deliver(frame)
        if stop is not None and stop():
            return True
        if deadline > self.now:
            self.now = deadline
        return False

    def advance_to(self, t: float) -> None:
        self.run_until(t)

    def pending(self) -> int:
        return len(self._events)

    def _record(self, frame: Frame, disposition: str, original: Frame | None = None) -> None:
        final = frame.with_(disposition=disposition)
        self.capture.append(final)
        for cb in self.on_deliver:
            cb(final, original)

    def _deliver(self, frame: Frame) -> None:
        link = self.links.get(frame.link)
        if link is None:
            self.routing_faults.append((self.now, f"unknown segment {frame.link!r}"))
            self._record(frame, UNROUTABLE)
            return
        for tap in link.taps:
            tap(frame)
        original = frame
        relay = False
        for hook in self.hooks:
            if not hook.active or (hook.link is not None and hook.link != frame.link):
                continue
            if not hook.match(frame):
                continue
            verdict, frame = hook.apply(frame)
            if verdict == DROP:
                self._record(frame, DROPPED_MITM, original)
                return
            relay = hook.relay
            break

        if frame.dst_mac == BROADCAST:
            self._record(frame, DELIVERED, original)
            for hid in link.hosts:
                host = self.hosts[hid]
                if host.mac != frame.src_mac and host.online:
                    self._receive(host, frame)
            return

        target = None
        if relay:
            owner = self.host_by_ip(frame.dst_ip)
            if owner is not None and frame.link in owner.links:
                target = owner
        else:
            for hid in link.hosts:
                h = self.hosts[hid]
                if h.mac == frame.dst_mac:
                    target = h
                    break
        if target is None or not target.online:
            self._record(frame, UNROUTABLE, original)
            return
        disposition = self._receive(target, frame) or DELIVERED
        self._record(frame, disposition, original)

    # -- host protocol handling --------------------------------------------------

    def _emit(self, host: Host, link: str, dst_mac: str, dst_ip: str, kind: str,
              seq: int = 0, ack: int = 0, payload: bytes = b"") -> Frame:
        frame = Frame(self.now, link, host.mac, dst_mac, host.ip, dst_ip, kind,
                      seq % U32, ack % U32, payload)
        self.send(frame)
        return frame

    def _receive(self, host: Host, frame: Frame) -> str | None:
        if host.sniffer is not None:
            host.sniffer(frame)
        kind = frame.kind
        if kind == ARP_REP:
            host.arp_table[frame.src_ip] = (frame.src_mac, self.now)
            return None
        if kind == ARP_REQ:
            if frame.dst_ip == host.ip:
                self._emit(host, frame.link, frame.src_mac, frame.src_ip, ARP_REP)
            return None
        if frame.dst_ip != host.ip:
            return None   # no IP forwarding on end hosts
        if kind == SYN:
            return self._on_syn(host, frame)
        if kind == SYNACK:
            conn = self._find(host, frame.src_ip, state="SYN_SENT",
                              pred=lambda c: frame.ack == c.snd_next)
            if conn is not None:
                conn.rcv_next = (frame.seq + 1) % U32
                conn.state = "ESTABLISHED"
                dst_mac = host.resolve(frame.src_ip) or frame.src_mac
                self._emit(host, frame.link, dst_mac, frame.src_ip, ACK,
                           conn.snd_next, conn.rcv_next)
            return None
        if kind == ACK:
            key = (frame.src_ip, frame.ack)
            slot = host.half_open.pop(key, None)
            if slot is not None:
                _, s_next, c_next, link = slot
                host.conns.append(Conn(next(self._conn_ids), host.ip, frame.src_ip, link,
                                       s_next, c_next, "ESTABLISHED", client=False))
            return None
        if kind == DATA:
            conn = self._find(host, frame.src_ip, state="ESTABLISHED",
                              pred=lambda c: c.rcv_next == frame.seq)
            if conn is None:
                # in-path rewrites may change payload lengths; accept nearby seqs
                conn = self._find(host, frame.src_ip, state="ESTABLISHED",
                                  pred=lambda c: 0 < (frame.seq - c.rcv_next) % U32 < SEQ_SLACK
                                  or 0 < (c.rcv_next - frame.seq) % U32 < SEQ_SLACK)
            if conn is None:
                return None
            conn.rcv_next = (frame.seq + len(frame.payload)) % U32
            if conn.client:
                conn.inbox.append(frame.payload)
                return None
            if host.service is not None and host.online:
                reply = host.service(host, conn, frame.payload, self.now)
                if reply is not None:
                    self._send_data(host, conn, reply, dst_mac=frame.src_mac)
            return None
        if kind == FIN:
            conn = self._find(host, frame.src_ip, state="ESTABLISHED",
                              pred=lambda c: c.rcv_next == frame.seq)
            if conn is not None:
                conn.state = "CLOSED"
                host.conns.remove(conn)
            return None
        return None

    def _on_syn(self, host: Host, frame: Frame) -> str | None:
        if host.service is None:
            return None
        now = self.now
        for key in [k for k, v in host.half_open.items() if v[0] <= now]:
            del host.half_open[key]
        if len(host.half_open) >= host.half_open_capacity:
            return DROPPED_DOS
        s_isn = self.isn()
        c_next = (frame.seq + 1) % U32
        host.half_open[(frame.src_ip, (s_isn + 1) % U32)] = (
            now + host.half_open_timeout, (s_isn + 1) % U32, c_next, frame.link)
        dst_mac = host.resolve(frame.src_ip) or frame.src_mac
        self._emit(host, frame.link, dst_mac, frame.src_ip, SYNACK, s_isn, c_next)
        return None

    @staticmethod
    def _find(host: Host, peer_ip: str, state: str, pred) -> Conn | None:
        for c in host.conns:
            if c.peer_ip == peer_ip and c.state == state and pred(c):
                return c
        return None

    def _send_data(self, host: Host, conn: Conn, payload: bytes, dst_mac: str | None = None) -> Frame:
        if dst_mac is None:
            dst_mac = host.resolve(conn.peer_ip)
            if dst_mac is None:
                raise Unresolvable(f"{host.id}: no ARP entry for {conn.peer_ip}")
        elif not conn.client:
            # replies follow the ARP table, which is what poisoning exploits
            dst_mac = host.resolve(conn.peer_ip) or dst_mac
        frame = self._emit(host, conn.link, dst_mac, conn.peer_ip, DATA,
                           conn.snd_next, conn.rcv_next, payload)
        conn.snd_next = (conn.snd_next + len(payload)) % U32
        return frame

    # -- ARP ------------------------------------------------------------------

    def announce(self, host: Host, link: str | None = None) -> None:
        """Gratuitous ARP reply broadcast on every (or one) attached segment."""
        for lid in ([link] if link else host.links):
            self._emit(host, lid, BROADCAST, host.ip, ARP_REP)

    def forge_arp(self, attacker: Host, victim_ip: str, target: Host | None,
                  link: str, claimed_mac: str | None = None) -> Frame:
        """ARP reply claiming ``victim_ip`` is at ``claimed_mac`` (default attacker)."""
        mac = (claimed_mac or attacker.mac).lower()
        dst_mac = target.mac if target is not None else BROADCAST
        dst_ip = target.ip if target is not None else victim_ip
        frame = Frame(self.now, link, mac, dst_mac, victim_ip, dst_ip, ARP_REP)
        self.send(frame)
        return frame

    def resolve(self, host: Host, ip: str, link: str, timeout: float = 0.01) -> str:
        mac = host.resolve(ip)
        if mac is not None:
            return mac
        self._emit(host, link, BROADCAST, ip, ARP_REQ)
        self.run_until(self.now + timeout, stop=lambda: host.resolve(ip) is not None)
        mac = host.resolve(ip)
        if mac is None:
            raise Unresolvable(f"{host.id}: cannot resolve {ip}")
        return mac

    # -- client helpers ---------------------------------------------------------

    def open_flow(self, client: Host, server_ip: str, timeout: float = 0.05) -> Conn:
        """Three-step open.  Raises :class:`Timeout` when no answer arrives."""
        link = self.link_between(client, server_ip)
        dst_mac = self.resolve(client, server_ip, link)
        c_isn = self.isn()
        conn = Conn(next(self._conn_ids), client.ip, server_ip, link,
                    (c_isn + 1) % U32, 0, "SYN_SENT", client=True)
        client.conns.append(conn)
        self._emit(client, link, dst_mac, server_ip, SYN, c_isn, 0)
        if not self.run_until(self.now + timeout, stop=lambda: conn.state == "ESTABLISHED"):
            client.conns.remove(conn)
            raise Timeout(f"{client.id}: handshake with {server_ip} timed out")
        # let the final ACK reach the server before data follows
        self.run_until(self.now + self.hop_delay)
        return conn

    def send_syn(self, client: Host, server_ip: str) -> Frame:
        """Bare SYN that is never completed."""
        link = self.link_between(client, server_ip)
        dst_mac = client.resolve(server_ip)
        if dst_mac is None:
            dst_mac = self.resolve(client, server_ip, link)
        return self._emit(client, link, dst_mac, server_ip, SYN, self.isn(), 0)

    def close_flow(self, client: Host, conn: Conn) -> None:
        if conn.state != "ESTABLISHED":
            return
        dst_mac = client.resolve(conn.peer_ip)
        if dst_mac is not None:
            self._emit(client, conn.link, dst_mac, conn.peer_ip, FIN, conn.snd_next, conn.rcv_next)
        conn.snd_next = (conn.snd_next + 1) % U32
        conn.state = "CLOSED"
        if conn in client.conns:
            client.conns.remove(conn)

    def send_payload(self, client: Host, conn: Conn, payload: bytes) -> Frame:
        return self._send_data(client, conn, payload)

    def request(self, client: Host, conn: Conn, payload: bytes, timeout: float = 0.05) -> bytes:
        n = len(conn.inbox)
        self._send_data(client, conn, payload)
        if not self.run_until(self.now + timeout, stop=lambda: len(conn.inbox) > n):
            raise Timeout(f"{client.id}: no response from {conn.peer_ip}")
        return conn.inbox.pop(n)

    def tag_request(self, client: Host, conn: Conn, op: int, name: str, value=None,
                    timeout: float = 0.05) -> tagproto.Response:
        payload = tagproto.encode_request(op, name, value)
        raw = self.request(client, conn, payload, timeout)
        try:
            return tagproto.decode_response(raw)
        except tagproto.ProtocolError:
            return tagproto.Response(op | 0x80, tagproto.ST_MALFORMED, raw)


def tag_service(device) -> Service:
    """Wrap a tag-owning device (``read_tag``/``write_tag``) as a network service."""
    from ..plcrt.runtime import DeviceOffline, TagError

    def serve(host: Host, conn: Conn, payload: bytes, now: float) -> bytes | None:
        try:
            req = tagproto.decode_request(payload)
        except tagproto.ProtocolError:
            op = payload[0] | 0x80 if payload and payload[0] in (1, 2) else tagproto.READ_RESP
            return tagproto.encode_response(op, tagproto.ST_MALFORMED)
        try:
            if req.op == tagproto.READ:
                value = device.read_tag(req.name, now)
                return tagproto.encode_response(tagproto.READ_RESP, tagproto.ST_OK, value)
            ack = device.write_tag(req.name, tagproto.decode_value(req.value), now)
            status = tagproto.ST_OK if ack.ok else tagproto.ST_READ_ONLY
            return tagproto.encode_response(tagproto.WRITE_RESP, status)
        except TagError:
            return tagproto.encode_response(req.op | 0x80, tagproto.ST_UNKNOWN_TAG)
        except DeviceOffline:
            return tagproto.encode_response(req.op | 0x80, tagproto.ST_OFFLINE)

    return serve
