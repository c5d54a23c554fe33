"""Live-phase scoring: s = g * c * d * p with d = 2 - x/6.

All arithmetic is exact (:class:`fractions.Fraction`); rounding to whole
points happens only when a score is displayed or aggregated.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

PHYSICAL_GOALS = MappingProxyType({
    "motorized_valve": 100,
    "pump": 130,
    "pressure": 145,
    "tank_level": 160,
    "chemical_dosing": 180,
})
SENSOR_GOALS = MappingProxyType({
    "historian": 100,
    "hmi_scada": 130,
    "plc": 160,
    "rio": 200,
})
CATALOG = MappingProxyType({**PHYSICAL_GOALS, **SENSOR_GOALS})

MAX_DETECTIONS = 6
C_MIN, C_MAX = Fraction(1, 5), Fraction(1)


class ScoreError(ValueError):
    pass


@dataclass(frozen=True)
class AttackerProfile:
    id: str
    factor: Fraction
    capabilities: frozenset[str]

    def allows(self, needed: Iterable[str]) -> bool:
        return set(needed) <= self.capabilities


PROFILES = MappingProxyType({
    "cybercriminal": AttackerProfile("cybercriminal", Fraction(2), frozenset({"network_tools"})),
    "insider": AttackerProfile("insider", Fraction(3, 2),
                               frozenset({"engineering_tools", "admin_accounts",
                                          "physical_access"})),
    "strong": AttackerProfile("strong", Fraction(1),
                              frozenset({"network_tools", "engineering_tools",
                                         "admin_accounts", "physical_access"})),
})


def profile(name: str) -> AttackerProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ScoreError(f"unknown attacker profile {name!r}") from None


def _exact(value) -> Fraction:
    if isinstance(value, float):
        # judges enter decimals such as 0.35; use their decimal meaning
        return Fraction(str(value))
    return Fraction(value)


def detection_modifier(x: int, universe: int = MAX_DETECTIONS) -> Fraction:
    return 2 - Fraction(x, universe)


def compute_score(g, c, x: int, p, universe: int = MAX_DETECTIONS) -> Fraction:
    """Exact score before rounding."""
    g, c, p = _exact(g), _exact(c), _exact(p)
    if g not in {Fraction(v) for v in CATALOG.values()}:
        raise ScoreError(f"goal value {g} is not in the catalog")
    if not C_MIN <= c <= C_MAX:
        raise ScoreError(f"control level {c} outside [0.2, 1.0]")
    if isinstance(x, bool) or not isinstance(x, int) or not 0 <= x <= universe:
        raise ScoreError(f"detections x={x!r} outside 0..{universe}")
    if p not in {pr.factor for pr in PROFILES.values()}:
        raise ScoreError(f"profile factor {p} is not 1, 1.5 or 2")
    return g * c * detection_modifier(x, universe) * p


def round_points(value: Fraction) -> int:
    """Round half-up to a whole point."""
    return math.floor(Fraction(value) + Fraction(1, 2))


@dataclass(frozen=True)
class ScoreRecord:
    declaration: str
    team: str
    goal: str
    s: Fraction
    computed_at: float
    valid: bool = True

    @property
    def points(self) -> int:
        return round_points(self.s)

    def to_json(self) -> str:
        return json.dumps({"declaration": self.declaration, "team": self.team,
                           "goal": self.goal, "s": f"{self.s.numerator}/{self.s.denominator}",
                           "points": self.points, "computed_at": self.computed_at,
                           "valid": self.valid})


def score_declaration(declaration: str, team: str, goal: str, c, x: int, profile_id: str,
                      undo_confirmed: bool, ts: float = 0.0) -> ScoreRecord:
    if goal not in CATALOG:
        raise ScoreError(f"unknown goal {goal!r}")
    s = compute_score(CATALOG[goal], c, x, profile(profile_id).factor)
    return ScoreRecord(declaration, team, goal, s, ts, valid=bool(undo_confirmed))


def best_per_goal(records: Iterable[ScoreRecord]) -> dict[str, Fraction]:
    best: dict[str, Fraction] = {}
    for r in records:
        if not r.valid:
            continue
        if r.goal not in best or r.s > best[r.goal]:
            best[r.goal] = r.s
    return best


def aggregate_team(records: Iterable[ScoreRecord]) -> int:
    """Sum over goals of the best valid score on that goal, in whole points."""
    return sum(round_points(s) for s in best_per_goal(records).values())


def detection_rate(counts: Sequence[int]) -> Fraction | None:
    """Mean triggered-mechanism count over successful attacks; None if none."""
    if len(counts) == 0:
        return None
    if any(c < 0 for c in counts):
        raise ScoreError("mechanism counts must be non-negative")
    return Fraction(sum(counts), len(counts))


def mechanism_count(rules: Iterable[str], subset: Mapping[str, str] | None = None,
                    mechanisms: Iterable[str] | None = None) -> int:
    """Distinct detection mechanisms among triggered ``rules``.

    ``subset`` maps rule -> mechanism (default: invariants vs network IDS);
    ``mechanisms`` restricts which mechanisms count.
    """
    from .alarms import MECHANISM
    table = subset if subset is not None else MECHANISM
    found = {table[r] for r in rules if r in table}
    if mechanisms is not None:
        found &= set(mechanisms)
    return len(found)


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    if len(xs) != len(ys):
        raise ValueError("series lengths differ")
    n = len(xs)
    if n < 2:
        raise ValueError("need at least two points")
    mx, my = math.fsum(xs) / n, math.fsum(ys) / n
    dx = [x - mx for x in xs]
    dy = [y - my for y in ys]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0 or syy == 0:
        raise ValueError("correlation is undefined for a constant series")
    return math.fsum(a * b for a, b in zip(dx, dy)) / math.sqrt(sxx * syy)
