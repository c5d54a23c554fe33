"""Seeded generators for the capture-analysis challenges.

Each generator drives a small simulated network, so the capture is produced
by the same transport as the range, and records the ground truth while it
plants the answer.
"""
from __future__ import annotations

import ipaddress
import random
import string
from dataclasses import dataclass, field

from ..simnet import PASS, Hook, Network, tagproto
from ..simnet.frames import DATA, Frame
from .analysis import list_flows, rank_single_byte_keys, xor_bytes

KINDS = ("hosts", "arp-interval", "xor", "xor-brute", "composite")
ICS_PREFIX = "192.168.0.0/16"
PANGRAM = "the quick brown fox jumps over the lazy dog"
OUTSIDE_NETS = ("10.20.{}.{}", "172.16.{}.{}", "203.0.113.{}")


@dataclass
class Challenge:
    kind: str
    seed: int
    frames: list[Frame]
    flag: str
    truth: dict = field(default_factory=dict)


def _token(rnd: random.Random, n: int = 12) -> str:
    return "".join(rnd.choice(string.ascii_letters + string.digits + "_") for _ in range(n))


def _mac(rnd: random.Random, used: set[str]) -> str:
    while True:
        mac = "02:" + ":".join(f"{rnd.randrange(256):02x}" for _ in range(5))
        if mac not in used:
            used.add(mac)
            return mac


def _ack_service(host, conn, payload, now):
    msg = tagproto.decode_any(payload)
    if isinstance(msg, tagproto.Request):
        op = tagproto.READ_RESP if msg.op == tagproto.READ else tagproto.WRITE_RESP
        return tagproto.encode_response(op, tagproto.ST_OK, b"0" if msg.op == tagproto.READ else b"")
    return None


class _Lab:
    """One-segment network with helpers for scripted traffic."""

    def __init__(self, seed: int):
        self.rnd = random.Random(seed)
        self.net = Network(seed=seed)
        self.net.add_link("L1")
        self.macs: set[str] = set()
        self.ips: set[str] = set()
        self.n = 0

    def host(self, ip: str, role: str = "PLC", server: bool = True):
        self.n += 1
        self.ips.add(ip)
        h = self.net.add_host(f"H{self.n}", _mac(self.rnd, self.macs), ip, role, ["L1"])
        if server:
            h.service = _ack_service
        return h

    def ics_ip(self) -> str:
        while True:
            ip = f"192.168.{self.rnd.choice((0, 1))}.{self.rnd.randrange(2, 250)}"
            if ip not in self.ips:
                return ip

    def outside_ip(self) -> str:
        while True:
            pat = self.rnd.choice(OUTSIDE_NETS)
            ip = pat.format(*[self.rnd.randrange(2, 250) for _ in range(pat.count("{}"))])
            if ip not in self.ips:
                return ip

    def settle(self, dt: float = 0.01) -> None:
        self.net.run_until(self.net.now + dt)

    def exchange(self, client, server, n: int, name: str = "LIT101", value=None) -> None:
        conn = self.net.open_flow(client, server.ip)
        for _ in range(n):
            v = value if value is not None else round(self.rnd.uniform(0, 1), 3)
            self.net.tag_request(client, conn, tagproto.WRITE, name, v)
        self.net.close_flow(client, conn)
        self.settle()


def gen_hosts(seed: int) -> Challenge:
    lab = _Lab(seed)
    rnd = lab.rnd
    inside = [lab.host(lab.ics_ip()) for _ in range(rnd.randint(3, 8))]
    outside = [lab.host(lab.outside_ip(), role="EXTERNAL") for _ in range(rnd.randint(1, 3))]
    for h in inside + outside:
        lab.net.announce(h)
    lab.settle()
    everyone = inside + outside
    for _ in range(rnd.randint(4, 10)):
        a, b = rnd.sample(everyone, 2)
        lab.exchange(a, b, rnd.randint(1, 3))
    truth = sorted(((h.ip, h.mac, h in inside) for h in everyone),
                   key=lambda t: (int(ipaddress.ip_address(t[0])), t[1]))
    flag = f"CTF{{hosts_{len(inside)}_in_{len(outside)}_out}}"
    return Challenge("hosts", seed, list(lab.net.capture), flag,
                     {"hosts": [{"ip": i, "mac": m, "in_ics": c} for i, m, c in truth]})


def gen_arp_interval(seed: int, relearn_gap: bool | None = None) -> Challenge:
    """A client pushes values to a server; an attacker relays them for a while.

    With ``relearn_gap`` the victim re-announces itself mid-episode and the
    attacker poisons again a little later.
    """
    lab = _Lab(seed)
    rnd = lab.rnd
    net = lab.net
    client = lab.host(lab.ics_ip())
    server = lab.host(lab.ics_ip())
    other = lab.host(lab.ics_ip())
    attacker = lab.host(lab.ics_ip(), role="ATTACKER", server=False)
    for h in (client, server, other):
        net.announce(h)
    lab.settle()
    if relearn_gap is None:
        relearn_gap = rnd.random() < 0.5

    relayed: list[Frame] = []

    def match(f: Frame) -> bool:
        return f.dst_mac == attacker.mac and f.dst_ip != attacker.ip

    def relay(f: Frame):
        if f.kind == DATA:
            relayed.append(f)
        return PASS, f

    def poison():
        net.forge_arp(attacker, server.ip, client, "L1")
        net.forge_arp(attacker, client.ip, server, "L1")
        lab.settle()

    ticks = rnd.randint(60, 120)
    start = rnd.randint(10, ticks // 3)
    end = rnd.randint(start + 10, ticks - 10)
    gap = (rnd.randint(start + 3, end - 5), None) if relearn_gap else (None, None)
    if gap[0] is not None:
        gap = (gap[0], rnd.randint(gap[0] + 1, end - 2))

    conn = net.open_flow(client, server.ip)
    side = net.open_flow(other, server.ip)
    hook = None
    for t in range(ticks):
        if t == start:
            hook = net.add_hook(Hook("relay", None, match, relay, relay=True))
            poison()
        if t == gap[0]:
            net.announce(server)
            net.announce(client)
            lab.settle()
        if t == gap[1]:
            poison()
        if t == end:
            net.remove_hook(hook.id)
            net.forge_arp(attacker, server.ip, client, "L1", claimed_mac=server.mac)
            net.forge_arp(attacker, client.ip, server, "L1", claimed_mac=client.mac)
            lab.settle()
        net.tag_request(client, conn, tagproto.WRITE, "LIT301", round(rnd.uniform(0.2, 0.9), 4))
        if rnd.random() < 0.3:
            net.tag_request(other, side, tagproto.READ, "HB")
        net.run_until(net.now + 0.1)
    net.close_flow(client, conn)
    net.close_flow(other, side)
    lab.settle()
    victim = [f for f in relayed if (f.src_ip, f.dst_ip) == (client.ip, server.ip)]
    first, last = victim[0].seq, victim[-1].seq
    flag = f"ascflag{{{first}-{last}}}"
    owners = {h.ip: h.mac for h in (client, server, other, attacker)}
    return Challenge("arp-interval", seed, list(net.capture), flag,
                     {"seq_start": first, "seq_end": last, "relayed": len(victim),
                      "victim_flow": [client.ip, server.ip],
                      "attacker_mac": attacker.mac, "owners": owners,
                      "relearn_gap": relearn_gap})


def _message(rnd: random.Random, flag: str) -> bytes:
    words = ["tank", "level", "valve", "pump", "dosing", "ring", "scan", "tag", "rio"]
    pre = " ".join(rnd.choice(words) for _ in range(rnd.randint(2, 6)))
    post = " ".join(rnd.choice(words) for _ in range(rnd.randint(2, 6)))
    # every lowercase letter plus '|', '`' and '~' sit next to 0x7F under some
    # small key delta, so no other key keeps the whole text printable
    return f"{pre} | `{flag}` {post} ~ {PANGRAM}".encode("ascii")


def _brute_cipher(rnd: random.Random, flag: str) -> tuple[bytes, int, bytes]:
    """Cipher whose true key is the unique printable-ratio maximum."""
    while True:
        msg = _message(rnd, flag)
        key = rnd.randrange(1, 256)
        cipher = xor_bytes(msg, bytes([key]))
        ranking = rank_single_byte_keys(cipher)
        if ranking[0][1] == key and ranking[0][0] > ranking[1][0]:
            return cipher, key, msg


def _blob_capture(lab: _Lab, sender, receiver, blob: bytes, noise: list) -> None:
    rnd = lab.rnd
    for h in [sender, receiver] + noise:
        lab.net.announce(h)
    lab.settle()
    sent = False
    for _ in range(rnd.randint(3, 8)):
        a, b = rnd.sample(noise + [receiver], 2)
        lab.exchange(a, b, rnd.randint(1, 3))
        if not sent and rnd.random() < 0.5:
            lab.exchange(sender, receiver, 1, name="BLOB:1", value=blob)
            sent = True
    if not sent:
        lab.exchange(sender, receiver, 1, name="BLOB:1", value=blob)


def _flow_of(frames: list[Frame], src_ip: str, dst_ip: str) -> str:
    for fl in list_flows(frames):
        if fl.src_ip == src_ip and fl.dst_ip == dst_ip:
            return fl.id
    raise RuntimeError("planted flow missing")


def gen_xor(seed: int, brute: bool = False) -> Challenge:
    lab = _Lab(seed)
    rnd = lab.rnd
    flag = f"CTF{{{_token(rnd)}}}"
    if brute:
        blob, key, _ = _brute_cipher(rnd, flag)
        key_bytes, key_len = bytes([key]), None
    else:
        key_len = rnd.randint(2, 8)
        key_bytes = bytes(rnd.randrange(256) for _ in range(key_len))
        blob = key_bytes + xor_bytes(_message(rnd, flag), key_bytes)
    sender, receiver = lab.host(lab.ics_ip()), lab.host(lab.ics_ip())
    noise = [lab.host(lab.ics_ip()) for _ in range(rnd.randint(2, 4))]
    _blob_capture(lab, sender, receiver, blob, noise)
    frames = list(lab.net.capture)
    return Challenge("xor-brute" if brute else "xor", seed, frames, flag,
                     {"flow": _flow_of(frames, sender.ip, receiver.ip), "key_len": key_len,
                      "key": key_bytes.hex()})


def gen_composite(seed: int) -> Challenge:
    lab = _Lab(seed)
    rnd = lab.rnd
    flag = f"CTF{{{_token(rnd)}}}"
    blob, key, _ = _brute_cipher(rnd, flag)
    sender = lab.host(lab.outside_ip(), role="EXTERNAL", server=False)
    receiver = lab.host(lab.ics_ip())
    noise = [lab.host(lab.ics_ip()) for _ in range(rnd.randint(2, 5))]
    _blob_capture(lab, sender, receiver, blob, noise)
    frames = list(lab.net.capture)
    return Challenge("composite", seed, frames, flag,
                     {"outside": sender.ip, "flow": _flow_of(frames, sender.ip, receiver.ip),
                      "key": f"{key:02x}"})


def generate(kind: str, seed: int) -> Challenge:
    if kind == "hosts":
        return gen_hosts(seed)
    if kind == "arp-interval":
        return gen_arp_interval(seed)
    if kind == "xor":
        return gen_xor(seed)
    if kind == "xor-brute":
        return gen_xor(seed, brute=True)
    if kind == "composite":
        return gen_composite(seed)
    raise ValueError(f"unknown challenge kind {kind!r}; expected one of {', '.join(KINDS)}")
