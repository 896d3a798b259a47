"""Concrete syntax for policies: one rule per line.

    if (flp(lgs(v - v_max, -0.4, 1.3)) and a == ACC) then CON

Guards use ``&&`` (binds tighter) and ``||``; features support ``+ - * /``,
parentheses, function calls and constants with an optional unit suffix
(``3.5[m/s]``).  A ``?`` in place of a number marks a sketch hole.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .dims import DIMENSIONLESS, parse_unit
from .nodes import (
    And,
    Const,
    ConstProb,
    Domain,
    Flip,
    FuncApp,
    Logistic,
    Or,
    Policy,
    Rule,
    Var,
)
from .semantics import check_policy


class PolicySyntaxError(ValueError):
    def __init__(self, message, line, col):
        super().__init__(f"{line}:{col}: {message}")
        self.line = line
        self.col = col


_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<unit>\[[^\]\n]*\])
  | (?P<op>&&|\|\||==|[(),+\-*/?])
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
    """,
    re.VERBOSE,
)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list:
    toks, pos, line, line_start = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise PolicySyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            if kind == "ident" and m.group() in ("inf", "nan"):
                kind = "num"
            toks.append(_Tok(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str, domain: Domain):
        self.toks = _tokenize(text)
        self.i = 0
        self.domain = domain

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, msg):
        raise PolicySyntaxError(msg, self.tok.line, self.tok.col)

    def accept(self, text):
        if self.tok.text == text and self.tok.kind in ("op", "ident"):
            self.i += 1
            return True
        return False

    def expect(self, text):
        if not self.accept(text):
            self.error(f"expected {text!r}, found {self.tok.text or 'end of input'!r}")

    def ident(self) -> str:
        if self.tok.kind != "ident":
            self.error(f"expected identifier, found {self.tok.text or 'end of input'!r}")
        self.i += 1
        return self.toks[self.i - 1].text

    def action(self) -> str:
        tok = self.tok
        name = self.ident()
        if name not in self.domain.actions:
            raise PolicySyntaxError(
                f"unknown action {name!r} (actions: {', '.join(self.domain.actions)})", tok.line, tok.col
            )
        return name

    def number(self, allow_hole=False):
        neg = self.accept("-")
        if allow_hole and not neg and self.accept("?"):
            return None
        if self.tok.kind != "num":
            self.error(f"expected number, found {self.tok.text or 'end of input'!r}")
        value = float(self.tok.text)
        self.i += 1
        return -value if neg else value

    # policy := rule*
    def policy(self) -> list:
        rules = []
        while self.tok.kind != "eof":
            rules.append(self.rule())
        return rules

    def rule(self) -> Rule:
        self.expect("if")
        self.expect("(")
        guard = self.guard()
        self.expect("and")
        self.expect("a")
        self.expect("==")
        src = self.action()
        self.expect(")")
        self.expect("then")
        dst = self.action()
        return Rule(src, guard, dst)

    def guard(self):
        node = self.term()
        while self.accept("||"):
            node = Or(node, self.term())
        return node

    def term(self):
        node = self.atom()
        while self.accept("&&"):
            node = And(node, self.atom())
        return node

    def atom(self):
        if self.accept("("):
            g = self.guard()
            self.expect(")")
            return g
        self.expect("flp")
        self.expect("(")
        if self.accept("lgs"):
            self.expect("(")
            feat = self.feature()
            self.expect(",")
            x0 = self.number(allow_hole=True)
            self.expect(",")
            k = self.number(allow_hole=True)
            self.expect(")")
            prob = Logistic(feat, x0, k)
        else:
            prob = ConstProb(self.number(allow_hole=True))
        self.expect(")")
        return Flip(prob)

    def feature(self):
        node = self.product()
        while self.tok.text in ("+", "-") and self.tok.kind == "op":
            op = self.tok.text
            self.i += 1
            node = FuncApp(op, (node, self.product()))
        return node

    def product(self):
        node = self.unary()
        while self.tok.text in ("*", "/") and self.tok.kind == "op":
            op = self.tok.text
            self.i += 1
            node = FuncApp(op, (node, self.unary()))
        return node

    def unary(self):
        if self.accept("("):
            f = self.feature()
            self.expect(")")
            return f
        if self.tok.kind == "num" or self.tok.text == "-":
            value = self.number()
            dim = DIMENSIONLESS
            if self.tok.kind == "unit":
                try:
                    dim = parse_unit(self.tok.text[1:-1])
                except ValueError as e:
                    self.error(str(e))
                self.i += 1
            return Const(value, dim)
        name = self.ident()
        if self.accept("("):
            args = [self.feature()]
            while self.accept(","):
                args.append(self.feature())
            self.expect(")")
            return FuncApp(name, tuple(args))
        return Var(name)


def parse_policy(text: str, domain: Domain, check: bool = True) -> Policy:
    """Parse policy text; raises ``PolicySyntaxError``, ``KeyError`` or ``DimensionError``."""
    rules = _Parser(text, domain).policy()
    policy = Policy(tuple(rules), domain)
    if check:
        check_policy(policy)
    return policy


def parse_guard(text: str, domain: Domain):
    p = _Parser(text, domain)
    g = p.guard()
    if p.tok.kind != "eof":
        p.error(f"trailing input {p.tok.text!r}")
    return g


def parse_feature(text: str, domain: Domain):
    p = _Parser(text, domain)
    f = p.feature()
    if p.tok.kind != "eof":
        p.error(f"trailing input {p.tok.text!r}")
    return f


# ---------------------------------------------------------------------------
# printing


def _num(x) -> str:
    return "?" if x is None else repr(float(x))


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def format_feature(f, domain: Domain | None = None) -> str:
    if isinstance(f, Var):
        return f.name
    if isinstance(f, Const):
        text = _num(f.value)
        return text if f.dim == DIMENSIONLESS else f"{text}[{f.dim}]"
    if f.func in _PREC and len(f.args) == 2:
        prec = _PREC[f.func]
        left, right = f.args
        ltxt = format_feature(left, domain)
        rtxt = format_feature(right, domain)
        # left-associative: right operand at equal precedence needs parens
        if isinstance(left, FuncApp) and _PREC.get(left.func, 9) < prec:
            ltxt = f"({ltxt})"
        if isinstance(right, FuncApp) and _PREC.get(right.func, 9) <= prec:
            rtxt = f"({rtxt})"
        return f"{ltxt} {f.func} {rtxt}"
    return f"{f.func}({', '.join(format_feature(a, domain) for a in f.args)})"


def format_guard(g) -> str:
    if isinstance(g, Flip):
        p = g.prob
        if isinstance(p, ConstProb):
            return f"flp({_num(p.r)})"
        return f"flp(lgs({format_feature(p.feature)}, {_num(p.x0)}, {_num(p.k)}))"
    op = "&&" if isinstance(g, And) else "||"
    ltxt, rtxt = format_guard(g.left), format_guard(g.right)
    if isinstance(g, And):
        if isinstance(g.left, Or):
            ltxt = f"({ltxt})"
        if not isinstance(g.right, Flip):
            rtxt = f"({rtxt})"
    elif not isinstance(g.right, Flip):
        rtxt = f"({rtxt})"
    return f"{ltxt} {op} {rtxt}"


def format_rule(rule: Rule) -> str:
    return f"if ({format_guard(rule.guard)} and a == {rule.src}) then {rule.dst}"


def serialize_policy(policy: Policy) -> str:
    return "".join(format_rule(r) + "\n" for r in policy.rules)
