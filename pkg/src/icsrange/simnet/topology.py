"""Topology configuration: segments and addressed hosts."""
from __future__ import annotations

import ipaddress
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .network import Network

DEFAULT_TOPOLOGY = Path(__file__).resolve().parent.parent / "data" / "topology.yaml"


@dataclass
class HostSpec:
    id: str
    role: str
    ip: str
    mac: str
    links: list[str] = field(default_factory=list)


@dataclass
class Topology:
    links: dict[str, str]
    hosts: dict[str, HostSpec]
    ics_prefix: str = "192.168.0.0/16"
    hop_delay: float = 0.001
    half_open_capacity: int = 64
    half_open_timeout: float = 5.0
    attacker: HostSpec | None = None

    def in_ics(self, ip: str) -> bool:
        return ipaddress.ip_address(ip) in ipaddress.ip_network(self.ics_prefix)

    def build(self, seed: int = 0) -> Network:
        net = Network(seed=seed, hop_delay=self.hop_delay,
                      half_open_capacity=self.half_open_capacity,
                      half_open_timeout=self.half_open_timeout)
        for lid, kind in self.links.items():
            net.add_link(lid, kind)
        for spec in self.hosts.values():
            net.add_host(spec.id, spec.mac, spec.ip, spec.role, spec.links)
        return net


def load_topology(path: str | Path | None = None) -> Topology:
    cfg = yaml.safe_load(Path(path or DEFAULT_TOPOLOGY).read_text(encoding="utf-8"))
    hosts = {hid: HostSpec(hid, h["role"], h["ip"], h["mac"].lower(), list(h.get("links", [])))
             for hid, h in cfg["hosts"].items()}
    attacker = None
    if cfg.get("attacker"):
        a = cfg["attacker"]
        attacker = HostSpec("ATTACKER", a["role"], a["ip"], a["mac"].lower(), [])
    return Topology(
        links=dict(cfg["links"]), hosts=hosts,
        ics_prefix=cfg.get("ics_prefix", "192.168.0.0/16"),
        hop_delay=float(cfg.get("hop_delay", 0.001)),
        half_open_capacity=int(cfg.get("half_open_capacity", 64)),
        half_open_timeout=float(cfg.get("half_open_timeout", 5.0)),
        attacker=attacker,
    )
