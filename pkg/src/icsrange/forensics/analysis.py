"""Solvers for the capture-analysis challenges.  All are pure over a frame list."""
from __future__ import annotations

import ipaddress
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .. import _accel
from ..simnet import tagproto
from ..simnet.frames import ARP_REP, ARP_REQ, BROADCAST, DATA, Frame

DEFAULT_ICS_PREFIX = "192.168.0.0/16"
FLAG_RE = re.compile(r"(CTF\{[A-Za-z0-9_]{1,64}\}|ascflag\{\d+-\d+\})")


class NotFound(LookupError):
    pass


@dataclass(frozen=True, order=True)
class HostEntry:
    sort_key: tuple
    ip: str
    mac: str
    in_ics: bool

    def as_dict(self) -> dict:
        return {"ip": self.ip, "mac": self.mac, "in_ics": self.in_ics}


def enumerate_hosts(frames: Iterable[Frame], ics_prefix: str = DEFAULT_ICS_PREFIX) -> list[HostEntry]:
    """Distinct (ip, mac) source pairs, classified against ``ics_prefix``.

    Forged ARP replies show up as extra pairs for the spoofed IP, which is
    exactly what points at a poisoning host.
    """
    net = ipaddress.ip_network(ics_prefix)
    pairs = {(f.src_ip, f.src_mac) for f in frames if f.src_ip}
    out = []
    for ip, mac in pairs:
        addr = ipaddress.ip_address(ip)
        out.append(HostEntry((int(addr), mac), ip, mac, addr in net))
    return sorted(out)


# -- ARP poisoning interval -------------------------------------------------------


@dataclass(frozen=True)
class PoisonInterval:
    seq_start: int
    seq_end: int
    attacker_mac: str
    victim_flow: tuple[str, str]
    frames: int

    @property
    def flag(self) -> str:
        return f"ascflag{{{self.seq_start}-{self.seq_end}}}"


def true_bindings(frames: Iterable[Frame]) -> dict[str, str]:
    """IP -> MAC as shown by the sources of IP traffic (first sighting wins)."""
    owner: dict[str, str] = {}
    for f in frames:
        if f.kind in (ARP_REP, ARP_REQ) or not f.src_ip:
            continue
        owner.setdefault(f.src_ip, f.src_mac)
    return owner


def forged_frames(frames: Sequence[Frame]) -> list[Frame]:
    """DATA frames addressed to a MAC that does not own the destination IP."""
    owner = true_bindings(frames)
    return [f for f in frames
            if f.kind == DATA and f.dst_mac != BROADCAST and f.dst_ip in owner
            and owner[f.dst_ip] != f.dst_mac]


def find_poisoning_interval(frames: Sequence[Frame]) -> PoisonInterval:
    """First and last forged-routed DATA frame of the victim flow.

    The victim flow is the (src, dst) direction of the first frame routed
    through a forged binding; both sequence numbers come from that flow.
    """
    hits = forged_frames(frames)
    if not hits:
        raise NotFound("no DATA frames routed through a forged binding")
    flow = (hits[0].src_ip, hits[0].dst_ip)
    mine = [f for f in hits if (f.src_ip, f.dst_ip) == flow]
    return PoisonInterval(mine[0].seq, mine[-1].seq, hits[0].dst_mac, flow, len(mine))


# -- XOR ----------------------------------------------------------------------------


def xor_bytes(data: bytes, key: bytes) -> bytes:
    if not key:
        raise ValueError("empty key")
    arr = np.frombuffer(data, dtype=np.uint8)
    k = np.frombuffer(key, dtype=np.uint8)
    return _accel.xor_repeat(arr, k).tobytes()


def printable_ratio(data: bytes) -> float:
    if not data:
        return 0.0
    return sum(0x20 <= b <= 0x7E for b in data) / len(data)


def rank_single_byte_keys(cipher: bytes) -> list[tuple[int, int]]:
    """``(printable count, key)`` best first; ties go to the lowest key."""
    counts = _accel.printable_counts(np.frombuffer(cipher, dtype=np.uint8))
    return sorted(((int(c), k) for k, c in enumerate(counts)), key=lambda t: (-t[0], t[1]))


@dataclass(frozen=True)
class Decryption:
    key: bytes
    plaintext: bytes
    score: float


def xor_decrypt(payload: bytes, key_len: int | None = None, brute: bool = False) -> Decryption:
    """Key-prefix mode (first ``key_len`` bytes are the key) or single-byte brute force."""
    if not payload:
        raise ValueError("empty payload")
    if brute:
        count, key = rank_single_byte_keys(payload)[0]
        return Decryption(bytes([key]), xor_bytes(payload, bytes([key])), count / len(payload))
    if key_len is None or key_len < 1 or key_len >= len(payload):
        raise ValueError("key-prefix mode needs 1 <= key_len < payload length")
    key, cipher = payload[:key_len], payload[key_len:]
    plain = xor_bytes(cipher, key)
    return Decryption(key, plain, printable_ratio(plain))


# -- flows ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Flow:
    id: str
    src_ip: str
    dst_ip: str
    frames: tuple[int, ...]


def list_flows(frames: Sequence[Frame]) -> list[Flow]:
    """DATA streams per direction, numbered by first appearance (F1, F2, ...)."""
    order: dict[tuple[str, str], list[int]] = {}
    for i, f in enumerate(frames):
        if f.kind == DATA:
            order.setdefault((f.src_ip, f.dst_ip), []).append(i)
    return [Flow(f"F{n}", s, d, tuple(idx)) for n, ((s, d), idx) in enumerate(order.items(), 1)]


def select_flow(frames: Sequence[Frame], flow_id: str) -> Flow:
    flows = list_flows(frames)
    for fl in flows:
        if fl.id == flow_id or f"{fl.src_ip}->{fl.dst_ip}" == flow_id:
            return fl
    raise NotFound(f"no flow {flow_id!r}")


def flow_payloads(frames: Sequence[Frame], flow: Flow) -> list[bytes]:
    """Value bytes of tag messages in the flow; raw payload for opaque frames."""
    out = []
    for i in flow.frames:
        payload = frames[i].payload
        msg = tagproto.decode_any(payload)
        if msg is None:
            out.append(payload)
        elif msg.value:
            out.append(msg.value)
    return out


def decrypt_flow(frames: Sequence[Frame], flow_id: str, key_len: int | None = None,
                 brute: bool = False) -> list[Decryption]:
    flow = select_flow(frames, flow_id)
    return [xor_decrypt(p, key_len, brute) for p in flow_payloads(frames, flow)
            if (brute and p) or (key_len is not None and len(p) > key_len)]


def find_flag(data: bytes) -> str | None:
    m = FLAG_RE.search(data.decode("latin-1"))
    return m.group(1) if m else None


def solve_composite(frames: Sequence[Frame], ics_prefix: str = DEFAULT_ICS_PREFIX) -> str:
    """Outside host -> its flows -> brute-force XOR -> flag."""
    outside = {h.ip for h in enumerate_hosts(frames, ics_prefix) if not h.in_ics}
    for fl in list_flows(frames):
        if fl.src_ip not in outside:
            continue
        for p in flow_payloads(frames, fl):
            flag = find_flag(xor_decrypt(p, brute=True).plaintext)
            if flag:
                return flag
    raise NotFound("no decryptable flag from an outside host")
