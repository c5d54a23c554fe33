"""Scenario files: one directive per line, shell-style tokens.

    # comment
    scenario keepalive_hijack
    title Drop HMI<->PLC3 traffic, then set the keep-alive tag
    capabilities network_tools
    goal hmi_scada
    arp_poison PLC3 targets=HMI
    mitm_drop between=HMI,PLC3
    tag_write PLC3 HB 3
    wait 12
    success tag PLC3 HB == 3
    undo mitm_stop

Lines starting with an action name are steps; ``success`` lines form the
success predicate (all must hold); ``undo`` lines are the paired undo steps.
"""
from __future__ import annotations

import shlex
from dataclasses import dataclass, field
from pathlib import Path

NETWORK_TOOLS = "network_tools"
ENGINEERING_TOOLS = "engineering_tools"
ADMIN_ACCOUNTS = "admin_accounts"
PHYSICAL_ACCESS = "physical_access"
CAPABILITIES = (NETWORK_TOOLS, ENGINEERING_TOOLS, ADMIN_ACCOUNTS, PHYSICAL_ACCESS)

# action -> capability it needs (None: bookkeeping only)
ACTIONS: dict[str, str | None] = {
    "arp_poison": NETWORK_TOOLS,
    "arp_restore": NETWORK_TOOLS,
    "mitm_drop": NETWORK_TOOLS,
    "mitm_modify": NETWORK_TOOLS,
    "mitm_stop": None,
    "syn_flood": NETWORK_TOOLS,
    "syn_flood_stop": None,
    "tag_read": NETWORK_TOOLS,
    "tag_write": NETWORK_TOOLS,
    "hmi_override": ADMIN_ACCOUNTS,
    "wait": None,
    "wait_until": None,
    "assert": None,
}

SCENARIO_DIR = Path(__file__).resolve().parent / "scenarios"


class ScenarioError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


@dataclass(frozen=True)
class Step:
    action: str
    args: tuple[str, ...] = ()
    opts: tuple[tuple[str, str], ...] = ()
    line: int = 0

    def opt(self, key: str, default: str | None = None) -> str | None:
        for k, v in self.opts:
            if k == key:
                return v
        return default

    @property
    def capability(self) -> str | None:
        if self.action == "mitm_modify" and self.opt("inline", "no") == "yes":
            return PHYSICAL_ACCESS
        return ACTIONS[self.action]

    def render(self) -> str:
        parts = [self.action, *self.args, *(f"{k}={v}" for k, v in self.opts)]
        return " ".join(shlex.quote(p) for p in parts)


@dataclass
class Scenario:
    id: str
    title: str = ""
    capabilities: frozenset[str] = frozenset()
    goal: str | None = None
    steps: list[Step] = field(default_factory=list)
    success: list[tuple[str, ...]] = field(default_factory=list)
    undo: list[Step] = field(default_factory=list)
    settle: float = 2.0

    def required(self) -> frozenset[str]:
        return frozenset(s.capability for s in self.steps + self.undo if s.capability)

    def validate(self) -> None:
        for c in self.capabilities:
            if c not in CAPABILITIES:
                raise ScenarioError(f"{self.id}: unknown capability {c!r}")
        missing = self.required() - self.capabilities
        if missing:
            raise ScenarioError(f"{self.id}: steps need undeclared capabilities "
                                f"{sorted(missing)}")


def _step(tokens: list[str], line: int) -> Step:
    action = tokens[0]
    if action not in ACTIONS:
        raise ScenarioError(f"unknown action {action!r}", line)
    args, opts = [], []
    for tok in tokens[1:]:
        if "=" in tok and not tok.startswith("="):
            k, v = tok.split("=", 1)
            opts.append((k, v))
        else:
            args.append(tok)
    return Step(action, tuple(args), tuple(opts), line)


def parse_scenario(text: str) -> Scenario:
    sc: Scenario | None = None
    pending: list[tuple[int, list[str]]] = []
    title = ""
    for lineno, raw in enumerate(text.splitlines(), 1):
        if raw.strip().startswith("title "):
            # free text, not tokenized
            title = raw.strip()[6:].strip()
            continue
        try:
            tokens = shlex.split(raw, comments=True)
        except ValueError as exc:
            raise ScenarioError(str(exc), lineno) from None
        if not tokens:
            continue
        pending.append((lineno, tokens))

    header = [p for p in pending if p[1][0] == "scenario"]
    if len(header) != 1 or len(header[0][1]) != 2:
        raise ScenarioError("expected exactly one 'scenario <id>' line")
    sc = Scenario(header[0][1][1], title=title)
    for lineno, tokens in pending:
        head = tokens[0]
        if head == "scenario":
            continue
        if head == "capabilities":
            caps = [c for tok in tokens[1:] for c in tok.split(",") if c]
            sc.capabilities = frozenset(caps)
        elif head == "goal":
            sc.goal = tokens[1] if len(tokens) > 1 else None
        elif head == "settle":
            sc.settle = float(tokens[1])
        elif head == "success":
            if len(tokens) < 2:
                raise ScenarioError("empty success predicate", lineno)
            sc.success.append(tuple(tokens[1:]))
        elif head == "undo":
            if len(tokens) < 2:
                raise ScenarioError("empty undo step", lineno)
            sc.undo.append(_step(tokens[1:], lineno))
        else:
            sc.steps.append(_step(tokens, lineno))
    sc.validate()
    return sc


def load_scenario(name_or_path: str | Path) -> Scenario:
    path = Path(name_or_path)
    if not path.exists():
        path = SCENARIO_DIR / f"{name_or_path}.scn"
    if not path.exists():
        raise ScenarioError(f"no scenario named {name_or_path!r}")
    return parse_scenario(path.read_text(encoding="utf-8"))


def list_scenarios() -> list[Scenario]:
    return [load_scenario(p) for p in sorted(SCENARIO_DIR.glob("*.scn"))]
