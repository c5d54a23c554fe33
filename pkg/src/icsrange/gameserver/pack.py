"""Challenge packs: one YAML file per challenge plus a secret flag file."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

import yaml

CATEGORIES = ("MINICPS", "TRIVIA", "FORENSICS", "PLC", "MISC")
JEOPARDY_FLAG = re.compile(r"CTF\{[A-Za-z0-9_]{1,64}\}")
INTERVAL_FLAG = re.compile(r"ascflag\{\d+-\d+\}")
DEFAULT_PACK = Path(__file__).resolve().parent.parent / "data" / "pack"


class PackError(ValueError):
    pass


def valid_flag(flag: str) -> bool:
    return bool(JEOPARDY_FLAG.fullmatch(flag) or INTERVAL_FLAG.fullmatch(flag))


@dataclass(frozen=True)
class Challenge:
    id: str
    category: str
    points: int
    title: str
    description: str
    flag: str = field(repr=False)
    hints: tuple[str, ...] = ()
    released: bool = True
    capture: dict | None = None

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise PackError(f"{self.id}: unknown category {self.category!r}")
        if not isinstance(self.points, int) or self.points <= 0:
            raise PackError(f"{self.id}: points must be a positive integer")
        if not valid_flag(self.flag):
            raise PackError(f"{self.id}: flag does not match the flag grammar")

    def public(self) -> dict:
        d = {"id": self.id, "category": self.category, "points": self.points,
             "title": self.title, "description": self.description,
             "hints": list(self.hints), "released": self.released}
        if self.capture:
            d["capture"] = dict(self.capture)
        return d


def load_pack(path: str | Path | None = None) -> list[Challenge]:
    """Read ``challenges/*.yaml`` and ``flags.yaml`` from a pack directory."""
    root = Path(path) if path else DEFAULT_PACK
    flag_file = root / "flags.yaml"
    if not flag_file.exists():
        raise PackError(f"{root}: missing flags.yaml")
    flags = {str(k): str(v) for k, v in (yaml.safe_load(flag_file.read_text("utf-8")) or {}).items()}
    out = []
    for f in sorted((root / "challenges").glob("*.yaml")):
        d = yaml.safe_load(f.read_text("utf-8")) or {}
        cid = str(d.get("id", f.stem))
        if cid not in flags:
            raise PackError(f"{cid}: no flag in flags.yaml")
        out.append(Challenge(
            id=cid, category=str(d.get("category", "")).upper(), points=d.get("points"),
            title=str(d.get("title", cid)), description=str(d.get("description", "")),
            flag=flags[cid], hints=tuple(d.get("hints") or ()),
            released=bool(d.get("released", True)), capture=d.get("capture")))
    ids = [c.id for c in out]
    if len(set(ids)) != len(ids):
        raise PackError("duplicate challenge ids")
    if not out:
        raise PackError(f"{root}: no challenges")
    return out
