"""Axis-aligned interval boxes and the sampling helpers built on them.

Boxes live over a VariableSpace: boolean and integer dimensions are
degenerate or integer intervals, reals are closed intervals. All cluster
geometry (compression, partition, region assignment) runs on this type.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .spaces import BOOL, INT, REAL, VariableSpace


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box: per-dimension [lo, hi] with lo <= hi."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.lo) != len(self.hi):
            raise ValueError("lo/hi arity mismatch")
        for a, b in zip(self.lo, self.hi):
            if a > b:
                raise ValueError(f"empty interval [{a}, {b}]")

    @classmethod
    def of_points(cls, points: Sequence[Sequence[float]]) -> "Box":
        """Componentwise min/max bounding box of a non-empty point set."""
        arr = np.asarray(points, dtype=float)
        return cls(tuple(arr.min(axis=0).tolist()), tuple(arr.max(axis=0).tolist()))

    @classmethod
    def of_space(cls, space: VariableSpace) -> "Box":
        lo, hi = space.bounds()
        return cls(lo, hi)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def sides(self) -> tuple[float, ...]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    def volume(self) -> float:
        v = 1.0
        for s in self.sides():
            v *= s
        return v

    def center(self) -> tuple[float, ...]:
        return tuple((l + h) / 2.0 for l, h in zip(self.lo, self.hi))

    def contains(self, point: Sequence[float]) -> bool:
        return all(l <= p <= h for l, p, h in zip(self.lo, point, self.hi))

    def intersect(self, other: "Box") -> "Box | None":
        lo = tuple(max(a, b) for a, b in zip(self.lo, other.lo))
        hi = tuple(min(a, b) for a, b in zip(self.hi, other.hi))
        if any(l > h for l, h in zip(lo, hi)):
            return None
        return Box(lo, hi)

    def union_bounds(self, other: "Box") -> "Box":
        """Bounding box of the union (not the union itself)."""
        return Box(
            tuple(min(a, b) for a, b in zip(self.lo, other.lo)),
            tuple(max(a, b) for a, b in zip(self.hi, other.hi)),
        )

    def covers(self, other: "Box") -> bool:
        return all(a <= b for a, b in zip(self.lo, other.lo)) and all(
            a >= b for a, b in zip(self.hi, other.hi)
        )

    def inflate(self, frac: float) -> "Box":
        """Grow each side by `frac` of its length (or of 1 for degenerate sides)."""
        lo, hi = [], []
        for l, h in zip(self.lo, self.hi):
            pad = frac * ((h - l) or 1.0)
            lo.append(l - pad)
            hi.append(h + pad)
        return Box(tuple(lo), tuple(hi))

    def distance(self, point: Sequence[float]) -> float:
        """Euclidean distance from a point to the box; 0 inside or on it."""
        s = 0.0
        for l, p, h in zip(self.lo, point, self.hi):
            d = l - p if p < l else (p - h if p > h else 0.0)
            s += d * d
        return math.sqrt(s)

    def bisect(self, dim: int, space: VariableSpace | None = None) -> tuple["Box", "Box"]:
        """Split along one dimension at the midpoint.

        Real dimensions share the cut face; integer/boolean dimensions split
        on the lattice ([lo, mid] and [mid+1, hi]) so the halves stay
        disjoint over actual integer values.
        """
        lo, hi = list(self.lo), list(self.hi)
        kind = space[dim].kind if space is not None else REAL
        if kind in (INT, BOOL):
            mid = math.floor((lo[dim] + hi[dim]) / 2.0)
            left_hi, right_lo = float(mid), float(mid + 1)
            if right_lo > hi[dim]:
                raise ValueError(f"integer dimension {dim} cannot be split")
        else:
            left_hi = right_lo = (lo[dim] + hi[dim]) / 2.0
        left = Box(tuple(lo), tuple(hi[:dim] + [left_hi] + hi[dim + 1 :]))
        right = Box(tuple(lo[:dim] + [right_lo] + lo[dim + 1 :]), tuple(hi))
        return left, right

    def as_lists(self) -> list[list[float]]:
        """JSON-friendly [[lo...], [hi...]] form."""
        return [list(self.lo), list(self.hi)]


def normalized_sides(box: Box, full: Box) -> tuple[float, ...]:
    """Box side lengths as fractions of the enclosing space's spans."""
    out = []
    for s, lo, hi in zip(box.sides(), full.lo, full.hi):
        span = hi - lo
        out.append(s / span if span > 0 else 0.0)
    return tuple(out)


def splittable_dims(box: Box, space: VariableSpace) -> list[int]:
    dims = []
    for i, var in enumerate(space):
        width = box.hi[i] - box.lo[i]
        if var.kind == REAL:
            if width > 0:
                dims.append(i)
        else:
            if math.floor(box.hi[i]) > math.ceil(box.lo[i]):
                dims.append(i)
    return dims


def sample_in_box(rng: np.random.Generator, box: Box, space: VariableSpace) -> tuple:
    """Draw one point uniformly inside a box, respecting variable kinds."""
    values = []
    for i, var in enumerate(space):
        lo, hi = box.lo[i], box.hi[i]
        if var.kind == REAL:
            values.append(float(rng.uniform(lo, hi)))
        elif var.kind == BOOL:
            a, b = math.ceil(lo), math.floor(hi)
            values.append(bool(rng.integers(a, b + 1)) if b > a else bool(a))
        else:
            if var.values is not None:
                choices = [v for v in var.values if lo <= v <= hi]
                if not choices:
                    raise ValueError(f"box excludes all values of {var.name!r}")
                values.append(int(choices[rng.integers(0, len(choices))]))
            else:
                a, b = math.ceil(lo), math.floor(hi)
                if b < a:
                    raise ValueError(f"box excludes all values of {var.name!r}")
                values.append(int(rng.integers(a, b + 1)))
    return tuple(values)


def clip_to_box(values: Sequence[float], box: Box, space: VariableSpace) -> tuple:
    """Clamp a raw vector into the box, rounding discrete dimensions."""
    out = []
    for i, var in enumerate(space):
        v = min(max(float(values[i]), box.lo[i]), box.hi[i])
        if var.kind == REAL:
            out.append(v)
        elif var.kind == BOOL:
            out.append(bool(round(v)))
        else:
            iv = int(round(v))
            iv = min(max(iv, math.ceil(box.lo[i])), math.floor(box.hi[i]))
            if var.values is not None:
                iv = min(var.values, key=lambda c: abs(c - iv))
            out.append(iv)
    return tuple(out)
