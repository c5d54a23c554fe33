"""Alarm record shared by the invariant checkers and the network IDS."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

ARP_POISON = "ARP_POISON"
SYN_FLOOD = "SYN_FLOOD"
IP_MAC_CONFLICT = "IP_MAC_CONFLICT"
TAG_DIVERGENCE = "TAG_DIVERGENCE"
INVARIANT = "INVARIANT"
SCAN_FAULT = "SCAN_FAULT"

NETWORK_RULES = (ARP_POISON, SYN_FLOOD, IP_MAC_CONFLICT, TAG_DIVERGENCE)
DETECTION_RULES = NETWORK_RULES + (INVARIANT,)

# detection engine each rule belongs to
MECHANISM = {rule: "netids" for rule in NETWORK_RULES}
MECHANISM[INVARIANT] = "invariants"


@dataclass(frozen=True)
class Alarm:
    id: str
    ts: float
    source_node: str
    rule: str
    severity: str
    evidence: tuple[str, ...]
    attack_session: str | None = None
    detail: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.evidence:
            raise ValueError("alarm evidence must not be empty")

    def to_json(self) -> str:
        d = asdict(self)
        d["evidence"] = list(self.evidence)
        return json.dumps(d)

    @classmethod
    def from_json(cls, line: str) -> "Alarm":
        d = json.loads(line)
        d["evidence"] = tuple(d["evidence"])
        return cls(**d)
