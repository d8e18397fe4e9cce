"""Text grammar for variable spaces and constraints.

One declaration per line::

    var x1 : real -5.0..5.0
    var k  : int 0..4
    var a  : bool

    sat hard (a | !a)
    fd  soft weight=2 3*k <= 6
    lr  hard 1.5*x1 <= 3.0
    nl  soft weight=0.5 sin(x1)*x1 <= 1.0
    nl  hard dist_union(x1, x1; [0,1]x[0,1], [3,4]x[2,5]) <= 0

Lines starting with ``#`` and blank lines are skipped. Parsing is total
over this grammar: anything else raises ParseError with the offending
position and what was expected there.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .boxes import Box
from .constraints import (
    FD,
    HARD,
    LR,
    NL,
    SAT,
    SOFT,
    CnfPayload,
    Constraint,
    ExprPayload,
    LinearPayload,
    MembershipPayload,
    validate_constraint,
)
from .spaces import BOOL, INT, REAL, SpaceError, Variable, VariableSpace

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.\d+|\d+\.(?!\.)|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<dotdot>\.\.)
  | (?P<le><=)
  | (?P<name>[A-Za-z_]\w*)
  | (?P<sym>[()|&!*+\-/^,;:=\[\]{}])
    """,
    re.VERBOSE,
)

_FUNCS1 = {"abs", "sin", "cos", "exp"}
_FUNCSN = {"min", "max"}


class ParseError(ValueError):
    def __init__(self, message: str, pos: int, text: str = ""):
        self.pos = pos
        detail = f"{message} at position {pos}"
        if text:
            detail += f": {text[:pos]!r} >> {text[pos:pos + 12]!r}"
        super().__init__(detail)


@dataclass(frozen=True)
class Token:
    kind: str  # 'num' | 'name' | 'sym' | 'le' | 'dotdot' | 'end'
    value: str
    pos: int


def _tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", pos, text)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, m.group(), pos))
        pos = m.end()
    tokens.append(Token("end", "", len(text)))
    return tokens


class _Cursor:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self) -> Token:
        return self.tokens[self.i]

    def next(self) -> Token:
        tok = self.tokens[self.i]
        if tok.kind != "end":
            self.i += 1
        return tok

    def accept(self, kind: str, value: str | None = None) -> Token | None:
        tok = self.peek()
        if tok.kind == kind and (value is None or tok.value == value):
            return self.next()
        return None

    def expect(self, kind: str, value: str | None = None, what: str | None = None) -> Token:
        tok = self.accept(kind, value)
        if tok is None:
            expected = what or value or kind
            got = self.peek()
            raise ParseError(
                f"expected {expected}, found {got.value or 'end of line'!r}",
                got.pos,
                self.text,
            )
        return tok

    def fail(self, message: str) -> ParseError:
        return ParseError(message, self.peek().pos, self.text)


def _signed_number(cur: _Cursor) -> float:
    sign = 1.0
    while True:
        if cur.accept("sym", "-"):
            sign = -sign
        elif cur.accept("sym", "+"):
            pass
        else:
            break
    tok = cur.expect("num", what="a number")
    return sign * float(tok.value)


# --------------------------------------------------------------------------
# variable declarations


def parse_variable_decl(line: str) -> Variable:
    """Parse ``var <name> : bool | int <lo>..<hi> | real <lo>..<hi>``."""
    cur = _Cursor(line)
    cur.expect("name", "var", what="'var'")
    name = cur.expect("name", what="a variable name").value
    cur.expect("sym", ":")
    kind_tok = cur.expect("name", what="'bool', 'int' or 'real'")
    kind = kind_tok.value
    if kind == "bool":
        var = Variable(name, BOOL)
    elif kind in ("int", "real"):
        lo = _signed_number(cur)
        cur.expect("dotdot", what="'..'")
        hi = _signed_number(cur)
        try:
            var = Variable(name, INT if kind == "int" else REAL, lo, hi)
        except SpaceError as exc:
            raise ParseError(str(exc), kind_tok.pos, line) from exc
    else:
        raise ParseError(f"unknown kind {kind!r}", kind_tok.pos, line)
    cur.expect("end", what="end of line")
    return var


# --------------------------------------------------------------------------
# constraint payloads


def _resolve(cur: _Cursor, tok: Token, space: VariableSpace, kind: str) -> int:
    try:
        idx = space.index_of(tok.value)
    except SpaceError:
        raise ParseError(f"unknown variable {tok.value!r}", tok.pos, cur.text) from None
    if space[idx].kind != kind:
        raise ParseError(
            f"{tok.value!r} is {space[idx].kind}, expected {kind} here", tok.pos, cur.text
        )
    return idx


def _parse_cnf(cur: _Cursor, space: VariableSpace) -> CnfPayload:
    clauses = []
    while True:
        cur.expect("sym", "(", what="'(' starting a clause")
        clause = []
        while True:
            neg = cur.accept("sym", "!") is not None
            tok = cur.expect("name", what="a boolean variable")
            clause.append((_resolve(cur, tok, space, BOOL), neg))
            if not cur.accept("sym", "|"):
                break
        cur.expect("sym", ")")
        clauses.append(tuple(clause))
        if not cur.accept("sym", "&"):
            break
    return CnfPayload(tuple(clauses))


def _parse_linear(cur: _Cursor, space: VariableSpace, kind: str) -> LinearPayload:
    """``[coef*]var (+|- [coef*]var)* <= bound``; bare constants fold into the bound."""
    coeffs: dict[int, float] = {}
    constant = 0.0
    sign = 1.0
    first = True
    while True:
        if not first:
            if cur.accept("sym", "+"):
                sign = 1.0
            elif cur.accept("sym", "-"):
                sign = -1.0
            else:
                break
        else:
            if cur.accept("sym", "-"):
                sign = -1.0
            first = False
        if cur.peek().kind == "num":
            value = float(cur.next().value)
            if cur.accept("sym", "*"):
                tok = cur.expect("name", what="a variable")
                idx = _resolve(cur, tok, space, kind)
                coeffs[idx] = coeffs.get(idx, 0.0) + sign * value
            else:
                constant += sign * value
        else:
            tok = cur.expect("name", what="a variable or number")
            idx = _resolve(cur, tok, space, kind)
            coeffs[idx] = coeffs.get(idx, 0.0) + sign
    cur.expect("le", what="'<='")
    bound = _signed_number(cur) - constant
    if not coeffs:
        raise cur.fail("linear constraint references no variables")
    return LinearPayload(tuple(sorted(coeffs.items())), bound)


def _parse_membership(cur: _Cursor, space: VariableSpace) -> MembershipPayload:
    tok = cur.expect("name", what="an integer variable")
    idx = _resolve(cur, tok, space, INT)
    cur.expect("name", "in", what="'in'")
    cur.expect("sym", "{")
    values = [int(_signed_number(cur))]
    while cur.accept("sym", ","):
        values.append(int(_signed_number(cur)))
    cur.expect("sym", "}")
    return MembershipPayload(idx, frozenset(values))


def _parse_fd(cur: _Cursor, space: VariableSpace) -> LinearPayload | MembershipPayload:
    # membership looks like: NAME 'in' '{' ...
    if cur.peek().kind == "name" and cur.tokens[cur.i + 1].kind == "name":
        return _parse_membership(cur, space)
    return _parse_linear(cur, space, INT)


def _parse_boxes(cur: _Cursor) -> tuple[Box, ...]:
    boxes = []
    while True:
        lo: list[float] = []
        hi: list[float] = []
        while True:
            cur.expect("sym", "[", what="'[' starting an interval")
            lo.append(_signed_number(cur))
            cur.expect("sym", ",")
            hi.append(_signed_number(cur))
            cur.expect("sym", "]")
            if not cur.accept("name", "x"):
                break
        try:
            boxes.append(Box(tuple(lo), tuple(hi)))
        except ValueError as exc:
            raise cur.fail(str(exc)) from exc
        if not cur.accept("sym", ","):
            break
    return tuple(boxes)


def _parse_expr(cur: _Cursor, space: VariableSpace) -> tuple:
    return _parse_additive(cur, space)


def _parse_additive(cur: _Cursor, space: VariableSpace) -> tuple:
    node = _parse_multiplicative(cur, space)
    while True:
        if cur.accept("sym", "+"):
            node = ("add", node, _parse_multiplicative(cur, space))
        elif cur.accept("sym", "-"):
            node = ("sub", node, _parse_multiplicative(cur, space))
        else:
            return node


def _parse_multiplicative(cur: _Cursor, space: VariableSpace) -> tuple:
    node = _parse_unary(cur, space)
    while True:
        if cur.accept("sym", "*"):
            node = ("mul", node, _parse_unary(cur, space))
        elif cur.accept("sym", "/"):
            node = ("div", node, _parse_unary(cur, space))
        else:
            return node


def _parse_unary(cur: _Cursor, space: VariableSpace) -> tuple:
    if cur.accept("sym", "-"):
        return ("neg", _parse_unary(cur, space))
    if cur.accept("sym", "+"):
        return _parse_unary(cur, space)
    return _parse_power(cur, space)


def _parse_power(cur: _Cursor, space: VariableSpace) -> tuple:
    base = _parse_atom(cur, space)
    if cur.accept("sym", "^"):
        # right-associative, unary binds tighter on the exponent
        return ("pow", base, _parse_unary(cur, space))
    return base


def _parse_atom(cur: _Cursor, space: VariableSpace) -> tuple:
    tok = cur.peek()
    if tok.kind == "num":
        cur.next()
        return ("const", float(tok.value))
    if tok.kind == "sym" and tok.value == "(":
        cur.next()
        node = _parse_expr(cur, space)
        cur.expect("sym", ")")
        return node
    if tok.kind == "name":
        cur.next()
        name = tok.value
        if name == "dist_union":
            cur.expect("sym", "(")
            points = [_parse_expr(cur, space)]
            while cur.accept("sym", ","):
                points.append(_parse_expr(cur, space))
            cur.expect("sym", ";", what="';' before the box list")
            boxes = _parse_boxes(cur)
            cur.expect("sym", ")")
            for b in boxes:
                if b.dim != len(points):
                    raise ParseError(
                        f"dist_union boxes must be {len(points)}-dimensional", tok.pos, cur.text
                    )
            return ("dist_union", tuple(points), boxes)
        if name in _FUNCS1:
            cur.expect("sym", "(")
            arg = _parse_expr(cur, space)
            cur.expect("sym", ")")
            return (name, arg)
        if name in _FUNCSN:
            cur.expect("sym", "(")
            args = [_parse_expr(cur, space)]
            while cur.accept("sym", ","):
                args.append(_parse_expr(cur, space))
            cur.expect("sym", ")")
            if len(args) < 2:
                raise ParseError(f"{name} needs at least two arguments", tok.pos, cur.text)
            return (name, *args)
        return ("var", _resolve(cur, tok, space, REAL))
    raise ParseError(
        f"expected an expression, found {tok.value or 'end of line'!r}", tok.pos, cur.text
    )


def _parse_nl(cur: _Cursor, space: VariableSpace) -> ExprPayload:
    tree = _parse_expr(cur, space)
    cur.expect("le", what="'<='")
    bound = _signed_number(cur)
    return ExprPayload(tree, bound)


# --------------------------------------------------------------------------
# entry points


def parse_constraint(text: str, space: VariableSpace) -> Constraint:
    """Parse one ``<class> <severity> [weight=<float>] <expr>`` line."""
    cur = _Cursor(text)
    cls_tok = cur.expect("name", what="'sat', 'fd', 'lr' or 'nl'")
    cls = cls_tok.value
    if cls not in (SAT, FD, LR, NL):
        raise ParseError(f"unknown constraint class {cls!r}", cls_tok.pos, text)
    sev_tok = cur.expect("name", what="'hard' or 'soft'")
    severity = sev_tok.value
    if severity not in (HARD, SOFT):
        raise ParseError(f"unknown severity {severity!r}", sev_tok.pos, text)

    weight = 1.0
    if cur.peek().kind == "name" and cur.peek().value == "weight":
        cur.next()
        cur.expect("sym", "=")
        weight = _signed_number(cur)
        if weight <= 0:
            raise ParseError("weight must be positive", cur.peek().pos, text)

    if cls == SAT:
        payload = _parse_cnf(cur, space)
    elif cls == FD:
        payload = _parse_fd(cur, space)
    elif cls == LR:
        payload = _parse_linear(cur, space, REAL)
    else:
        payload = _parse_nl(cur, space)
    cur.expect("end", what="end of line")

    constraint = Constraint(cls, severity, payload, weight)
    validate_constraint(constraint, space)
    return constraint


def parse_system(text: str) -> "ConstraintSystem":
    """Parse a full document: variable declarations, then constraint lines."""
    from .constraints import ConstraintSystem

    variables: list[Variable] = []
    constraint_lines: list[str] = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line.split(None, 1)[0] == "var":
            if constraint_lines:
                raise ParseError("variable declarations must precede constraints", 0, line)
            variables.append(parse_variable_decl(line))
        else:
            constraint_lines.append(line)
    space = VariableSpace(tuple(variables))
    constraints = tuple(parse_constraint(line, space) for line in constraint_lines)
    return ConstraintSystem(space, constraints)
