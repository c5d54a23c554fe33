"""Rung control language and invariant rule files.

Control programs::

    # comment
    SETPOINT HIGH = 0.8;
    RUNG LIT101 > HIGH THEN CMD MV101 CLOSE;
    RUNG NOT (P101 == ON) AND LIT301 < 0.25 THEN SET ALARM:1 = 1, CMD P101 ON;

Invariant rules, one per line::

    SA :: RESIDUAL(LIT101, FIT101, FIT201, 1.5) <= 0 WINDOW 10 TOL 0.01
    SD MV101 == OPEN AND P101 == OFF :: DELTA(LIT101) >= 0 WINDOW 10 TOL 0.0001
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

KEYWORDS = {"SETPOINT", "RUNG", "THEN", "SET", "CMD", "AND", "OR", "NOT"}
# bare words that denote discrete states rather than tags
ENUM_WORDS = {"OPEN", "CLOSED", "CLOSE", "TRANSITION", "ON", "OFF", "AUTO",
              "MANUAL", "START", "STOP", "TRUE", "FALSE"}
COMPARATORS = ("<=", ">=", "==", "!=", "<", ">")

_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<number>\d+\.\d*(?:[eE][-+]?\d+)?|\.\d+(?:[eE][-+]?\d+)?|\d+(?:[eE][-+]?\d+)?)
  | (?P<string>"[^"\n]*")
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*(?::\d+)?)
  | (?P<op><=|>=|==|!=|::|[<>=;,()+\-*/])
""", re.VERBOSE)


class ParseError(ValueError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


class UndefinedTag(KeyError):
    """Expression referenced a tag the device does not have."""


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(source: str) -> list[Token]:
    tokens = []
    line, line_start, pos = 1, 0, 0
    while pos < len(source):
        m = _TOKEN_RE.match(source, pos)
        if m is None:
            raise ParseError(f"unexpected character {source[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            text = m.group()
            if kind == "name" and text.upper() in KEYWORDS and ":" not in text:
                kind, text = "kw", text.upper()
            tokens.append(Token(kind, text, line, pos - line_start + 1))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# ---------------------------------------------------------------------------
# AST: plain tuples keep evaluation cheap
#   ("num", v) ("str", s) ("tag", name) ("sp", name) ("neg", e)
#   ("bin", op, a, b) ("cmp", op, a, b) ("and", a, b) ("or", a, b) ("not", e)
#   ("call", fname, args)

FUNCTIONS = {"ABS": 1, "DELTA": 1, "RESIDUAL": 4, "MIN": 2, "MAX": 2}


class _Parser:
    def __init__(self, tokens: list[Token], setpoints: Mapping[str, float] | None = None):
        self.toks = tokens
        self.i = 0
        self.setpoints = setpoints if setpoints is not None else {}

    @property
    def cur(self) -> Token:
        return self.toks[self.i]

    def next(self) -> Token:
        tok = self.toks[self.i]
        self.i += 1
        return tok

    def error(self, message: str, tok: Token | None = None):
        tok = tok or self.cur
        return ParseError(message, tok.line, tok.col)

    def expect(self, kind: str, text: str | None = None) -> Token:
        tok = self.cur
        if tok.kind != kind or (text is not None and tok.text != text):
            want = text or kind
            got = tok.text or tok.kind
            raise self.error(f"expected {want!r}, got {got!r}")
        return self.next()

    def at(self, kind: str, text: str | None = None) -> bool:
        tok = self.cur
        return tok.kind == kind and (text is None or tok.text == text)

    def _operator(self) -> str:
        tok = self.next()
        nxt = self.cur
        if nxt.kind == "eof" or (nxt.kind == "op" and nxt.text in (";", ")", ",", "::")) \
                or (nxt.kind == "kw" and nxt.text in ("THEN", "AND", "OR")):
            raise self.error(f"dangling operator {tok.text!r}", tok)
        return tok.text

    # expressions -----------------------------------------------------------

    def expr(self):
        node = self.and_expr()
        while self.at("kw", "OR"):
            self.next()
            node = ("or", node, self.and_expr())
        return node

    def and_expr(self):
        node = self.not_expr()
        while self.at("kw", "AND"):
            self.next()
            node = ("and", node, self.not_expr())
        return node

    def not_expr(self):
        if self.at("kw", "NOT"):
            self.next()
            return ("not", self.not_expr())
        return self.comparison()

    def comparison(self):
        node = self.sum()
        if self.cur.kind == "op" and self.cur.text in COMPARATORS:
            op = self._operator()
            node = ("cmp", op, node, self.sum())
        return node

    def sum(self):
        node = self.term()
        while self.cur.kind == "op" and self.cur.text in "+-":
            op = self._operator()
            node = ("bin", op, node, self.term())
        return node

    def term(self):
        node = self.unary()
        while self.cur.kind == "op" and self.cur.text in "*/":
            op = self._operator()
            node = ("bin", op, node, self.unary())
        return node

    def unary(self):
        if self.at("op", "-"):
            self.next()
            return ("neg", self.unary())
        return self.atom()

    def atom(self):
        tok = self.cur
        if tok.kind == "number":
            self.next()
            return ("num", float(tok.text) if any(c in tok.text for c in ".eE") else int(tok.text))
        if tok.kind == "string":
            self.next()
            return ("str", tok.text[1:-1])
        if tok.kind == "op" and tok.text == "(":
            self.next()
            node = self.expr()
            self.expect("op", ")")
            return node
        if tok.kind == "name":
            self.next()
            name = tok.text
            if self.at("op", "("):
                fname = name.upper()
                if fname not in FUNCTIONS:
                    raise self.error(f"unknown function {name!r}", tok)
                self.next()
                args = []
                if not self.at("op", ")"):
                    args.append(self.expr())
                    while self.at("op", ","):
                        self.next()
                        args.append(self.expr())
                self.expect("op", ")")
                if len(args) != FUNCTIONS[fname]:
                    raise self.error(f"{fname} takes {FUNCTIONS[fname]} arguments", tok)
                return ("call", fname, tuple(args))
            if name in self.setpoints:
                return ("sp", name)
            if name.upper() in ENUM_WORDS:
                word = name.upper()
                return ("str", "CLOSED" if word == "CLOSE" else word)
            return ("tag", name)
        if tok.kind == "eof":
            raise self.error("unexpected end of input")
        raise self.error(f"unexpected {tok.text!r}")


# ---------------------------------------------------------------------------
# control programs


@dataclass(frozen=True)
class SetAction:
    tag: str
    expr: tuple


@dataclass(frozen=True)
class CmdAction:
    actuator: str
    command: str


@dataclass(frozen=True)
class Rung:
    condition: tuple
    actions: tuple
    line: int

    def tags(self) -> set[str]:
        out = set(_expr_tags(self.condition))
        for act in self.actions:
            if isinstance(act, SetAction):
                out.add(act.tag)
                out.update(_expr_tags(act.expr))
            else:
                out.add(act.actuator)
        return out


@dataclass
class ControlProgram:
    rungs: list[Rung] = field(default_factory=list)
    setpoints: dict[str, float] = field(default_factory=dict)


def _expr_tags(node) -> list[str]:
    kind = node[0]
    if kind == "tag":
        return [node[1]]
    if kind in ("num", "str", "sp"):
        return []
    if kind in ("neg", "not"):
        return _expr_tags(node[1])
    if kind in ("and", "or"):
        return _expr_tags(node[1]) + _expr_tags(node[2])
    if kind in ("bin", "cmp"):
        return _expr_tags(node[2]) + _expr_tags(node[3])
    if kind == "call":
        return [t for a in node[2] for t in _expr_tags(a)]
    return []


def parse_program(source: str) -> ControlProgram:
    """Parse rung-language source; raises :class:`ParseError` with position."""
    p = _Parser(tokenize(source))
    prog = ControlProgram(setpoints=p.setpoints)
    while not p.at("eof"):
        tok = p.cur
        if p.at("kw", "SETPOINT"):
            p.next()
            name_tok = p.expect("name")
            if name_tok.text in p.setpoints:
                raise p.error(f"duplicate setpoint {name_tok.text!r}", name_tok)
            p.expect("op", "=")
            neg = False
            if p.at("op", "-"):
                p.next()
                neg = True
            num = p.expect("number")
            value = float(num.text)
            p.setpoints[name_tok.text] = -value if neg else value
            p.expect("op", ";")
        elif p.at("kw", "RUNG"):
            p.next()
            cond = p.expr()
            p.expect("kw", "THEN")
            actions = [_action(p)]
            while p.at("op", ","):
                p.next()
                actions.append(_action(p))
            p.expect("op", ";")
            prog.rungs.append(Rung(cond, tuple(actions), tok.line))
        else:
            raise p.error(f"unknown statement {tok.text or tok.kind!r}")
    return prog


def _action(p: _Parser):
    tok = p.cur
    if p.at("kw", "SET"):
        p.next()
        tag = p.expect("name").text
        p.expect("op", "=")
        return SetAction(tag, p.expr())
    if p.at("kw", "CMD"):
        p.next()
        actuator = p.expect("name").text
        cmd_tok = p.cur
        if cmd_tok.kind not in ("name", "kw"):
            raise p.error("expected actuator command")
        p.next()
        return CmdAction(actuator, cmd_tok.text.upper())
    raise p.error(f"unknown action keyword {tok.text or tok.kind!r}")


def format_program(prog: ControlProgram) -> str:
    lines = [f"SETPOINT {k} = {v!r};" for k, v in prog.setpoints.items()]
    for rung in prog.rungs:
        acts = ", ".join(
            f"SET {a.tag} = {format_expr(a.expr)}" if isinstance(a, SetAction)
            else f"CMD {a.actuator} {a.command}" for a in rung.actions)
        lines.append(f"RUNG {format_expr(rung.condition)} THEN {acts};")
    return "\n".join(lines) + ("\n" if lines else "")


def format_expr(node) -> str:
    kind = node[0]
    if kind == "num":
        return repr(node[1])
    if kind == "str":
        return node[1] if node[1] in ENUM_WORDS else f'"{node[1]}"'
    if kind in ("tag", "sp"):
        return node[1]
    if kind == "neg":
        return f"-({format_expr(node[1])})"
    if kind == "not":
        return f"NOT ({format_expr(node[1])})"
    if kind in ("and", "or"):
        return f"({format_expr(node[1])} {kind.upper()} {format_expr(node[2])})"
    if kind in ("bin", "cmp"):
        return f"({format_expr(node[2])} {node[1]} {format_expr(node[3])})"
    if kind == "call":
        return f"{node[1]}({', '.join(format_expr(a) for a in node[2])})"
    raise ValueError(kind)


# ---------------------------------------------------------------------------
# evaluation

_CMP: dict[str, Callable[[Any, Any], bool]] = {
    "<": lambda a, b: a < b, "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b, ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b, "!=": lambda a, b: a != b,
}


class Env:
    """Name resolution for expression evaluation.

    ``values`` holds current tags, ``previous`` the previous scan's values
    (for DELTA) and ``state`` per-expression memory (for RESIDUAL).
    """

    def __init__(self, values: Mapping[str, Any], setpoints: Mapping[str, float],
                 previous: Mapping[str, Any] | None = None, state: dict | None = None,
                 dt: float = 0.1):
        self.values = values
        self.setpoints = setpoints
        self.previous = previous or {}
        self.state = state if state is not None else {}
        self.dt = dt

    def tag(self, name: str):
        try:
            return self.values[name]
        except KeyError:
            raise UndefinedTag(name) from None


def evaluate(node, env: Env):
    kind = node[0]
    if kind == "num" or kind == "str":
        return node[1]
    if kind == "tag":
        return env.tag(node[1])
    if kind == "sp":
        return env.setpoints[node[1]]
    if kind == "neg":
        return -evaluate(node[1], env)
    if kind == "not":
        return not evaluate(node[1], env)
    if kind == "and":
        return bool(evaluate(node[1], env)) and bool(evaluate(node[2], env))
    if kind == "or":
        return bool(evaluate(node[1], env)) or bool(evaluate(node[2], env))
    if kind == "cmp":
        return _compare(node[1], evaluate(node[2], env), evaluate(node[3], env))
    if kind == "bin":
        a, b = evaluate(node[2], env), evaluate(node[3], env)
        op = node[1]
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        return a / b
    if kind == "call":
        return _call(node, env)
    raise ValueError(f"bad node {node!r}")


def _compare(op: str, a, b) -> bool:
    if isinstance(a, bool):
        a = "TRUE" if a else "FALSE"
    if isinstance(b, bool):
        b = "TRUE" if b else "FALSE"
    if isinstance(a, str) != isinstance(b, str):
        return op == "!="
    return _CMP[op](a, b)


def _call(node, env: Env):
    fname, args = node[1], node[2]
    if fname == "ABS":
        return abs(evaluate(args[0], env))
    if fname == "MIN":
        return min(evaluate(args[0], env), evaluate(args[1], env))
    if fname == "MAX":
        return max(evaluate(args[0], env), evaluate(args[1], env))
    if fname == "DELTA":
        name = args[0][1] if args[0][0] == "tag" else None
        cur = evaluate(args[0], env)
        if name is None or name not in env.previous:
            return 0.0
        return cur - env.previous[name]
    if fname == "RESIDUAL":
        level = evaluate(args[0], env)
        q_in = evaluate(args[1], env)
        q_out = evaluate(args[2], env)
        area = evaluate(args[3], env)
        key = ("RESIDUAL", node)
        pred = env.state.get(key)
        if pred is None:
            pred = level
        else:
            pred = pred + (q_in - q_out) * env.dt / area
        env.state[key] = pred
        return abs(level - pred)
    raise ValueError(fname)


# ---------------------------------------------------------------------------
# invariant rules


@dataclass(frozen=True)
class InvariantRule:
    id: str
    kind: str               # "SA" or "SD"
    guard: tuple | None
    relation: tuple          # ("cmp", op, lhs, rhs)
    window: int
    tolerance: float
    source: str = ""

    def __post_init__(self):
        if self.kind not in ("SA", "SD"):
            raise ValueError(f"rule kind must be SA or SD, got {self.kind!r}")
        if (self.kind == "SD") != (self.guard is not None):
            raise ValueError("SD rules need a guard; SA rules must not have one")
        if self.relation[0] != "cmp":
            raise ValueError("relation must be a comparison")
        if self.window < 1 or self.tolerance < 0:
            raise ValueError("window must be >= 1 and tolerance >= 0")


def relation_holds(rule: InvariantRule, env: Env) -> bool:
    _, op, lhs_node, rhs_node = rule.relation
    lhs = evaluate(lhs_node, env)
    rhs = evaluate(rhs_node, env)
    tol = rule.tolerance
    if isinstance(lhs, str) or isinstance(rhs, str):
        return _compare(op, lhs, rhs)
    if op in ("<", "<="):
        return _CMP[op](lhs, rhs + tol)
    if op in (">", ">="):
        return _CMP[op](lhs, rhs - tol)
    if op == "==":
        return abs(lhs - rhs) <= tol
    return abs(lhs - rhs) > tol


_RULE_TAIL = re.compile(r"\s+WINDOW\s+(\d+)\s+TOL\s+(\S+)\s*$", re.IGNORECASE)


def parse_rules(text: str, setpoints: Mapping[str, float] | None = None,
                prefix: str = "INV") -> list[InvariantRule]:
    rules = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].rstrip()
        if not line.strip():
            continue
        col0 = len(line) - len(line.lstrip()) + 1
        body = line.strip()
        kind = body[:2].upper()
        if kind not in ("SA", "SD") or (len(body) > 2 and not body[2].isspace()):
            raise ParseError("rule must start with SA or SD", lineno, col0)
        if "::" not in body:
            raise ParseError("missing '::' between guard and relation", lineno, col0)
        head, rest = body[2:].split("::", 1)
        m = _RULE_TAIL.search(rest)
        if m is None:
            raise ParseError("expected 'WINDOW n TOL x' at end of rule", lineno, col0)
        window = int(m.group(1))
        try:
            tol = float(m.group(2))
        except ValueError:
            raise ParseError(f"bad tolerance {m.group(2)!r}", lineno, col0) from None
        guard = _parse_sub(head, lineno, col0 + 2, setpoints) if head.strip() else None
        rel_off = col0 + 2 + len(head) + 2
        relation = _parse_sub(rest[: m.start()], lineno, rel_off, setpoints)
        rid = f"{prefix}{len(rules) + 1}"
        try:
            rules.append(InvariantRule(rid, kind, guard, relation, window, tol, body))
        except ValueError as exc:
            raise ParseError(str(exc), lineno, col0) from None
    return rules


def _parse_sub(text: str, line: int, col: int, setpoints) -> tuple:
    try:
        p = _Parser(tokenize(text), dict(setpoints or {}))
        node = p.expr()
        if not p.at("eof"):
            raise p.error(f"unexpected {p.cur.text!r}")
        return node
    except ParseError as exc:
        raise ParseError(exc.message, line, col + exc.col - 1) from None
