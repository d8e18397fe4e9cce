"""Hard/soft constraint systems over typed variable spaces.

Four constraint classes are supported, each with its own evaluator:

* ``sat`` -- CNF clauses over boolean variables,
* ``fd``  -- integer-linear inequalities or set membership over integers,
* ``lr``  -- linear inequalities over reals,
* ``nl``  -- nonlinear expression trees compared against a bound.

Every constraint is exactly hard or soft. Checking an action means
evaluating violation magnitudes per class and reducing them to the
three-way verdict: effective-and-efficient (HS), effective-but-inefficient
(HS'), or unpermissible (H').

Cost rules (per class, unweighted):

* sat: number of violated clauses;
* fd inequality: hinge violation normalized by the inequality's achievable
  span over the variable domains; fd membership: 1 if outside the set;
* lr, nl: hinge ``max(0, lhs - bound)``.

Hard lr/nl violations within ``TAU_HARD`` of zero count as satisfied;
sat/fd are exact. Nonlinear domain faults (division by zero, invalid powers,
non-finite results) are never treated as satisfied: the checking entry
points fail safe toward "unpermissible".
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

from .boxes import Box
from .spaces import BOOL, INT, REAL, Assignment, VariableSpace

log = logging.getLogger(__name__)

SAT = "sat"
FD = "fd"
LR = "lr"
NL = "nl"
CLASSES = (SAT, FD, LR, NL)

HARD = "hard"
SOFT = "soft"

#: Slack below which a hard lr/nl constraint still counts as satisfied.
TAU_HARD = 1e-9


class ConstraintError(ValueError):
    """Malformed constraint (bad payload, unknown variable, kind mismatch)."""


class EvaluationFault(RuntimeError):
    """Nonlinear evaluation hit a domain fault; the result is unknowable."""


class Category(str, enum.Enum):
    HS = "HS"
    HS_PRIME = "HS_PRIME"
    H_PRIME = "H_PRIME"

    def __str__(self) -> str:  # pragma: no cover - repr convenience
        return self.value


# --------------------------------------------------------------------------
# payloads


@dataclass(frozen=True)
class CnfPayload:
    """CNF clause list; each literal is (variable index, negated flag)."""

    clauses: tuple[tuple[tuple[int, bool], ...], ...]


@dataclass(frozen=True)
class LinearPayload:
    """sum(coef * var) <= bound; used by both the fd and lr classes."""

    terms: tuple[tuple[int, float], ...]
    bound: float


@dataclass(frozen=True)
class MembershipPayload:
    """Integer variable restricted to an explicit value set."""

    var: int
    values: frozenset[int]


@dataclass(frozen=True)
class ExprPayload:
    """Expression tree (nested tuples) compared as ``tree <= bound``.

    Nodes: ('const', x), ('var', i), ('neg', a), ('add'|'sub'|'mul'|'div'|'pow', a, b),
    ('abs'|'sin'|'cos'|'exp', a), ('min'|'max', a, b, ...),
    ('dist_union', (point exprs...), (Box, ...)).
    """

    tree: tuple
    bound: float


Payload = CnfPayload | LinearPayload | MembershipPayload | ExprPayload


@dataclass(frozen=True)
class Constraint:
    cls: str
    severity: str
    payload: Payload
    weight: float = 1.0

    def __post_init__(self) -> None:
        if self.cls not in CLASSES:
            raise ConstraintError(f"unknown constraint class {self.cls!r}")
        if self.severity not in (HARD, SOFT):
            raise ConstraintError(f"unknown severity {self.severity!r}")
        if self.severity == SOFT:
            if not (self.weight > 0):
                raise ConstraintError("soft constraints need weight > 0")
        else:
            # hard constraints carry no weight; normalize so it cannot leak in
            object.__setattr__(self, "weight", 1.0)


def validate_constraint(constraint: Constraint, space: VariableSpace) -> None:
    """Check payload shape, variable indices, and kind expectations."""
    p = constraint.payload
    n = len(space)

    def need(idx: int, kind: str) -> None:
        if not 0 <= idx < n:
            raise ConstraintError(f"variable index {idx} out of range")
        if space[idx].kind != kind:
            raise ConstraintError(
                f"{constraint.cls} constraint expects {kind} variables;"
                f" {space[idx].name!r} is {space[idx].kind}"
            )

    if constraint.cls == SAT:
        if not isinstance(p, CnfPayload):
            raise ConstraintError("sat constraints take a CnfPayload")
        for clause in p.clauses:
            if not clause:
                raise ConstraintError("empty clause is unsatisfiable by construction")
            for idx, _neg in clause:
                need(idx, BOOL)
    elif constraint.cls == FD:
        if isinstance(p, LinearPayload):
            for idx, _c in p.terms:
                need(idx, INT)
        elif isinstance(p, MembershipPayload):
            need(p.var, INT)
            if not p.values:
                raise ConstraintError("empty membership set")
        else:
            raise ConstraintError("fd constraints take LinearPayload or MembershipPayload")
    elif constraint.cls == LR:
        if not isinstance(p, LinearPayload):
            raise ConstraintError("lr constraints take a LinearPayload")
        for idx, _c in p.terms:
            need(idx, REAL)
    else:
        if not isinstance(p, ExprPayload):
            raise ConstraintError("nl constraints take an ExprPayload")
        for idx in _expr_vars(p.tree):
            need(idx, REAL)


def _expr_vars(node: tuple) -> set[int]:
    op = node[0]
    if op == "var":
        return {node[1]}
    if op == "const":
        return set()
    if op == "dist_union":
        out: set[int] = set()
        for sub in node[1]:
            out |= _expr_vars(sub)
        return out
    out = set()
    for sub in node[1:]:
        out |= _expr_vars(sub)
    return out


# --------------------------------------------------------------------------
# evaluation


def compile_expr(node: tuple) -> Callable[[Sequence[float]], float]:
    """Compile an expression tree into a closure over assignment values.

    Domain faults surface as EvaluationFault; so do non-finite results.
    """
    op = node[0]
    if op == "const":
        c = float(node[1])
        return lambda v: c
    if op == "var":
        i = node[1]
        return lambda v: v[i]
    if op == "neg":
        f = compile_expr(node[1])
        return lambda v: -f(v)
    if op in ("add", "sub", "mul", "div", "pow"):
        a, b = compile_expr(node[1]), compile_expr(node[2])
        if op == "add":
            return lambda v: a(v) + b(v)
        if op == "sub":
            return lambda v: a(v) - b(v)
        if op == "mul":
            return lambda v: a(v) * b(v)
        if op == "div":
            return lambda v: a(v) / b(v)
        return lambda v: math.pow(a(v), b(v))
    if op == "abs":
        f = compile_expr(node[1])
        return lambda v: abs(f(v))
    if op == "sin":
        f = compile_expr(node[1])
        return lambda v: math.sin(f(v))
    if op == "cos":
        f = compile_expr(node[1])
        return lambda v: math.cos(f(v))
    if op == "exp":
        f = compile_expr(node[1])
        return lambda v: math.exp(f(v))
    if op in ("min", "max"):
        fns = [compile_expr(sub) for sub in node[1:]]
        red = min if op == "min" else max
        return lambda v: red(f(v) for f in fns)
    if op == "dist_union":
        point_fns = [compile_expr(sub) for sub in node[1]]
        boxes: tuple[Box, ...] = tuple(node[2])
        if not boxes:
            raise ConstraintError("dist_union needs at least one box")
        for b in boxes:
            if b.dim != len(point_fns):
                raise ConstraintError("dist_union box/point dimension mismatch")

        def dist(v: Sequence[float]) -> float:
            p = [f(v) for f in point_fns]
            return min(b.distance(p) for b in boxes)

        return dist
    raise ConstraintError(f"unknown expression node {op!r}")


def _guarded(f: Callable[[Sequence[float]], float]) -> Callable[[Sequence[float]], float]:
    def g(values: Sequence[float]) -> float:
        try:
            x = f(values)
        except (ZeroDivisionError, OverflowError, ValueError) as exc:
            raise EvaluationFault(str(exc)) from exc
        if isinstance(x, complex) or not math.isfinite(x):
            raise EvaluationFault(f"non-finite result {x!r}")
        return x

    return g


def _linear_span(payload: LinearPayload, space: VariableSpace) -> float:
    """Width of the lhs range over the variable domains (normalizer)."""
    span = 0.0
    for idx, coef in payload.terms:
        span += abs(coef) * space[idx].span
    return span if span > 0 else 1.0


def compile_cost(constraint: Constraint, space: VariableSpace) -> Callable[[Sequence], float]:
    """Unweighted violation-magnitude function for one constraint.

    Returns 0 iff the constraint is satisfied (exactly for sat/fd; hard
    lr/nl additionally absorb violations up to TAU_HARD).
    """
    p = constraint.payload
    if constraint.cls == SAT:
        clauses = p.clauses

        def sat_cost(values: Sequence) -> float:
            violated = 0
            for clause in clauses:
                for idx, neg in clause:
                    if bool(values[idx]) != neg:
                        break
                else:
                    violated += 1
            return float(violated)

        return sat_cost

    if isinstance(p, MembershipPayload):
        var, allowed = p.var, p.values
        return lambda values: 0.0 if values[var] in allowed else 1.0

    if isinstance(p, LinearPayload):
        terms, bound = p.terms, p.bound
        if constraint.cls == FD:
            norm = _linear_span(p, space)

            def fd_cost(values: Sequence) -> float:
                lhs = 0.0
                for idx, coef in terms:
                    lhs += coef * values[idx]
                over = lhs - bound
                return over / norm if over > 0 else 0.0

            return fd_cost

        clamp = TAU_HARD if constraint.severity == HARD else 0.0

        def lr_cost(values: Sequence) -> float:
            lhs = 0.0
            for idx, coef in terms:
                lhs += coef * values[idx]
            over = lhs - bound
            return over if over > clamp else 0.0

        return lr_cost

    # nl
    f = _guarded(compile_expr(p.tree))
    bound = p.bound
    clamp = TAU_HARD if constraint.severity == HARD else 0.0

    def nl_cost(values: Sequence) -> float:
        over = f(values) - bound
        return over if over > clamp else 0.0

    return nl_cost


@dataclass(frozen=True)
class ConstraintSystem:
    """Immutable bundle of a variable space and its constraints.

    Safe to share across threads: evaluation never mutates the system.
    """

    space: VariableSpace
    constraints: tuple[Constraint, ...]

    def __post_init__(self) -> None:
        for c in self.constraints:
            validate_constraint(c, self.space)

    def by_severity(self, severity: str) -> tuple[Constraint, ...]:
        return tuple(c for c in self.constraints if c.severity == severity)

    def by_class(self, cls: str, severity: str | None = None) -> tuple[Constraint, ...]:
        return tuple(
            c
            for c in self.constraints
            if c.cls == cls and (severity is None or c.severity == severity)
        )

    @cached_property
    def _hard_compiled(self) -> tuple[tuple[str, Callable], ...]:
        return tuple(
            (c.cls, compile_cost(c, self.space))
            for c in self.constraints
            if c.severity == HARD
        )

    @cached_property
    def _soft_compiled(self) -> tuple[tuple[str, float, Callable], ...]:
        return tuple(
            (c.cls, c.weight, compile_cost(c, self.space))
            for c in self.constraints
            if c.severity == SOFT
        )


def system_from(space: VariableSpace, constraints: Iterable[Constraint]) -> ConstraintSystem:
    return ConstraintSystem(space, tuple(constraints))


# --------------------------------------------------------------------------
# checking


@dataclass(frozen=True)
class ActionClassification:
    """Trichotomy verdict with the violation totals that produced it.

    Exactly one category holds: H' iff the total hard violation is
    positive, HS iff both totals are zero, HS' otherwise. ``psi`` is the
    weighted soft cost and always equals the sum of ``per_class_costs``.
    A non-None ``fault`` marks an evaluation fault; the verdict is then
    the fail-safe H' and the totals are +inf.
    """

    category: Category
    psi: float
    v_hard: float
    v_soft: float
    per_class_costs: dict[str, float] = field(default_factory=dict)
    fault: str | None = None


def _fault_classification(message: str) -> ActionClassification:
    return ActionClassification(
        category=Category.H_PRIME,
        psi=math.inf,
        v_hard=math.inf,
        v_soft=math.inf,
        per_class_costs={c: math.inf for c in CLASSES},
        fault=message,
    )


def eval_class_violation(
    constraints: Iterable[Constraint],
    assignment: Assignment,
    *,
    weighted: bool = True,
) -> float:
    """Summed violation magnitude for a group of constraints.

    Soft weights apply when ``weighted`` is true; hard constraints always
    count with unit weight. Nonlinear domain faults raise EvaluationFault.
    """
    values = assignment.values
    space = assignment.space
    total = 0.0
    for c in constraints:
        cost = compile_cost(c, space)(values)
        if weighted and c.severity == SOFT:
            cost *= c.weight
        total += cost
    return total


def check_permissible(system: ConstraintSystem, action: Assignment) -> bool:
    """True iff every hard constraint holds. Evaluation faults fail safe."""
    values = action.values
    for _cls, fn in system._hard_compiled:
        try:
            if fn(values) > 0.0:
                return False
        except EvaluationFault as exc:
            log.warning("hard-constraint evaluation fault, failing safe: %s", exc)
            return False
    return True


def inefficiency(system: ConstraintSystem, action: Assignment) -> float:
    """Weighted soft-violation cost (0 iff every soft constraint holds)."""
    values = action.values
    psi = 0.0
    for _cls, weight, fn in system._soft_compiled:
        psi += weight * fn(values)
    return psi


def classify(system: ConstraintSystem, action: Assignment) -> ActionClassification:
    """Assign the action to exactly one of HS, HS', H'."""
    values = action.values
    v_hard = 0.0
    try:
        for _cls, fn in system._hard_compiled:
            v_hard += fn(values)
        per_class = dict.fromkeys(CLASSES, 0.0)
        psi = 0.0
        v_soft = 0.0
        for cls, weight, fn in system._soft_compiled:
            cost = fn(values)
            v_soft += cost
            weighted = weight * cost
            per_class[cls] += weighted
            psi += weighted
    except EvaluationFault as exc:
        return _fault_classification(str(exc))

    if v_hard > 0.0:
        category = Category.H_PRIME
    elif psi > 0.0:
        category = Category.HS_PRIME
    else:
        category = Category.HS
    return ActionClassification(
        category=category,
        psi=psi,
        v_hard=v_hard,
        v_soft=v_soft,
        per_class_costs=per_class,
    )


def classify_sequence(
    system: ConstraintSystem, actions: Sequence[Assignment]
) -> list[ActionClassification]:
    """Element-wise classification; one faulty action never aborts the rest."""
    return [classify(system, a) for a in actions]
