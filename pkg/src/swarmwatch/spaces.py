"""Typed variable spaces and positional assignments over them.

A space is an ordered list of variable descriptors (boolean, finite-domain
integer, or bounded real). Assignments are positional: one value per
variable, each inside its declared domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

BOOL = "bool"
INT = "int"
REAL = "real"

_KINDS = (BOOL, INT, REAL)


class SpaceError(ValueError):
    """Malformed variable space or assignment."""


@dataclass(frozen=True)
class Variable:
    """One variable descriptor: name, kind, and domain.

    Integer variables carry either a [lo, hi] range or an explicit
    enumerated set of values; booleans are fixed to {0, 1}; reals carry a
    closed interval [lo, hi].
    """

    name: str
    kind: str
    lo: float = 0.0
    hi: float = 1.0
    values: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if not self.name.isidentifier():
            raise SpaceError(f"variable name {self.name!r} is not an identifier")
        if self.kind not in _KINDS:
            raise SpaceError(f"unknown variable kind {self.kind!r}")
        if self.kind == BOOL:
            object.__setattr__(self, "lo", 0.0)
            object.__setattr__(self, "hi", 1.0)
        elif self.values is not None:
            if self.kind != INT:
                raise SpaceError("enumerated domains are integer-only")
            if not self.values:
                raise SpaceError(f"empty domain for {self.name!r}")
            vals = tuple(sorted(set(int(v) for v in self.values)))
            object.__setattr__(self, "values", vals)
            object.__setattr__(self, "lo", float(vals[0]))
            object.__setattr__(self, "hi", float(vals[-1]))
        else:
            if not (math.isfinite(self.lo) and math.isfinite(self.hi)):
                raise SpaceError(f"unbounded domain for {self.name!r}")
            if self.lo > self.hi:
                raise SpaceError(f"empty domain for {self.name!r}: {self.lo}..{self.hi}")
            if self.kind == INT and math.floor(self.hi) < math.ceil(self.lo):
                raise SpaceError(f"no integers in domain of {self.name!r}")

    @property
    def span(self) -> float:
        return self.hi - self.lo

    def contains(self, value) -> bool:
        if self.kind == BOOL:
            return isinstance(value, (bool, int)) and value in (0, 1, True, False)
        if self.kind == INT:
            if isinstance(value, bool) or not isinstance(value, int):
                return False
            if self.values is not None:
                return value in self.values
            return self.lo <= value <= self.hi
        return isinstance(value, (int, float)) and self.lo <= value <= self.hi

    def domain_values(self) -> tuple:
        """Every value of a discrete domain (bools and integers only)."""
        if self.kind == BOOL:
            return (False, True)
        if self.kind == INT:
            if self.values is not None:
                return self.values
            return tuple(range(math.ceil(self.lo), math.floor(self.hi) + 1))
        raise SpaceError(f"{self.name!r} is real-valued; no finite enumeration")


def boolean(name: str) -> Variable:
    return Variable(name, BOOL)


def integer(name: str, lo: int, hi: int) -> Variable:
    return Variable(name, INT, float(lo), float(hi))


def integer_set(name: str, values: Iterable[int]) -> Variable:
    return Variable(name, INT, values=tuple(values))


def real(name: str, lo: float, hi: float) -> Variable:
    return Variable(name, REAL, float(lo), float(hi))


@dataclass(frozen=True)
class VariableSpace:
    """Ordered, indexable collection of variables with unique names."""

    variables: tuple[Variable, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise SpaceError("duplicate variable names")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    def __len__(self) -> int:
        return len(self.variables)

    def __iter__(self):
        return iter(self.variables)

    def __getitem__(self, i: int) -> Variable:
        return self.variables[i]

    def index_of(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise SpaceError(f"unknown variable {name!r}") from None

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(v.name for v in self.variables)

    def validate(self, values: Sequence) -> None:
        """Raise SpaceError unless `values` is a valid positional assignment."""
        if len(values) != len(self.variables):
            raise SpaceError(
                f"arity mismatch: {len(values)} values for {len(self.variables)} variables"
            )
        for var, value in zip(self.variables, values):
            if not var.contains(value):
                raise SpaceError(f"value {value!r} outside domain of {var.name!r}")

    def bounds(self) -> tuple[tuple[float, ...], tuple[float, ...]]:
        """Per-dimension (lo, hi) tuples spanning the whole space."""
        return tuple(v.lo for v in self.variables), tuple(v.hi for v in self.variables)


def space(*variables: Variable) -> VariableSpace:
    return VariableSpace(tuple(variables))


@dataclass(frozen=True)
class Assignment:
    """A positional instantiation of every variable in a space."""

    space: VariableSpace
    values: tuple

    @classmethod
    def checked(cls, space: VariableSpace, values: Sequence) -> "Assignment":
        space.validate(values)
        return cls(space, tuple(values))
