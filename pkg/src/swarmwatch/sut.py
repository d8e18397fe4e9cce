"""Opaque systems-under-test and the output-gate machinery around them.

A SUT exposes exactly three things to the outside: its input space, its
action space, and a what-if probe channel ("thinking aloud": proposals
never reach actuators). Actuation goes through ``act``, which classifies
the proposal and blocks anything unpermissible; ``shutdown`` closes the
gate permanently.

The reference SUTs (linear, piecewise_rugged, stateful, learning) exist to
exercise the watchdog operators. They are deterministic given (spec, seed,
interaction history). The stateful one deliberately breaks the pure
function-mapping assumption; the learning one switches its map after a
fixed number of interactions.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .boxes import Box, clip_to_box
from .constraints import ActionClassification, Category, ConstraintSystem, classify
from .spaces import Assignment, VariableSpace

KINDS = ("linear", "piecewise_rugged", "stateful", "learning")

RELEASED = "released"
BLOCKED = "blocked"


class SutFault(RuntimeError):
    """The SUT failed internally; its output is suspect, never HS."""


class SutSpecError(ValueError):
    """Malformed reference-SUT specification."""


@dataclass(frozen=True)
class SutSpec:
    """Declarative recipe for a reference SUT.

    ``params`` keys by kind:
      linear:           matrix (rows x input-dim), offset
      piecewise_rugged: n_cells (generated from seed) or cells (explicit CellMaps)
      stateful:         matrix, offset, memory_depth, feedback
      learning:         pre (kind/params dict), post (kind/params dict), trigger
    """

    kind: str
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise SutSpecError(f"unknown SUT kind {self.kind!r}")


class SutHandle(ABC):
    """Black-box handle. Hidden state stays hidden; only probe/act/shutdown
    and the declared spaces are public. One handle, one owner: interactions
    with a single handle must be serialized by the caller."""

    def __init__(
        self,
        input_space: VariableSpace,
        action_space: VariableSpace,
        *,
        what_if_enabled: bool = True,
        stateful: bool = False,
    ):
        self.input_space = input_space
        self.action_space = action_space
        self.what_if_enabled = what_if_enabled
        self.stateful = stateful
        self._action_box = Box.of_space(action_space)

    @abstractmethod
    def _respond(self, x: tuple) -> tuple:
        """Raw input -> action mapping; may advance hidden state."""

    def _propose(self, x: tuple) -> tuple:
        raw = self._respond(x)
        # structural guarantee: whatever the SUT does semantically, its
        # output is a valid point of the action space
        return clip_to_box(raw, self._action_box, self.action_space)

    def probe(self, x: Assignment) -> Assignment:
        """What-if query: the proposal is returned for evaluation only."""
        if not self.what_if_enabled:
            raise SutFault("what-if channel disabled on this handle")
        self.input_space.validate(x.values)
        return Assignment(self.action_space, self._propose(x.values))


# --------------------------------------------------------------------------
# gate


@dataclass(frozen=True)
class GateEvent:
    t: int
    x: tuple
    v: tuple | None
    classification: ActionClassification | None
    verdict: str  # RELEASED | BLOCKED


@dataclass
class GateState:
    """Output-control gate: closed means nothing gets out, ever."""

    output_open: bool = True
    events: list[GateEvent] = field(default_factory=list)
    released: int = 0
    blocked: int = 0

    def record(self, event: GateEvent) -> None:
        self.events.append(event)
        if event.verdict == RELEASED:
            self.released += 1
        else:
            self.blocked += 1


@dataclass(frozen=True)
class GateOutcome:
    released: bool
    action: Assignment | None
    event: GateEvent


def act(
    sut: SutHandle,
    x: Assignment,
    gate: GateState,
    system: ConstraintSystem,
    *,
    block_inefficient: bool = False,
    t: int | None = None,
) -> GateOutcome:
    """Route one actuation request through the gate.

    The proposal is classified before anything leaves: H' is always
    blocked, HS always passes (unless the gate is closed), HS' passes with
    its inefficiency logged unless ``block_inefficient`` is set. Any
    fault on the way fails safe to blocked. This path runs only the
    constraint checker; its latency is linear in the constraint count.
    """
    sut.input_space.validate(x.values)
    stamp = t if t is not None else len(gate.events)
    try:
        values = sut._propose(x.values)
    except SutFault:
        event = GateEvent(stamp, x.values, None, None, BLOCKED)
        gate.record(event)
        return GateOutcome(False, None, event)

    classification = classify(system, Assignment(sut.action_space, values))
    ok = (
        gate.output_open
        and classification.fault is None
        and classification.category is not Category.H_PRIME
        and not (block_inefficient and classification.category is Category.HS_PRIME)
    )
    event = GateEvent(stamp, x.values, values, classification, RELEASED if ok else BLOCKED)
    gate.record(event)
    action = Assignment(sut.action_space, values) if ok else None
    return GateOutcome(ok, action, event)


def shutdown(sut: SutHandle, gate: GateState) -> GateState:
    """Close the output gate permanently for this handle. Idempotent."""
    gate.output_open = False
    return gate


# --------------------------------------------------------------------------
# reference SUTs


@dataclass(frozen=True)
class CellMap:
    """One piecewise cell: an input box and a per-dimension affine map.

    Output dimension j reads input dimension src[j]:
    v[j] = scale[j] * x[src[j]] + offset[j]. The image of the cell is a box.
    """

    box: Box
    scale: tuple[float, ...]
    offset: tuple[float, ...]
    src: tuple[int, ...]

    def apply(self, x: Sequence[float]) -> tuple[float, ...]:
        return tuple(s * float(x[i]) + o for s, o, i in zip(self.scale, self.offset, self.src))

    def image(self) -> Box:
        lo, hi = [], []
        for s, o, i in zip(self.scale, self.offset, self.src):
            a = s * self.box.lo[i] + o
            b = s * self.box.hi[i] + o
            lo.append(min(a, b))
            hi.append(max(a, b))
        return Box(tuple(lo), tuple(hi))

    def to_dict(self) -> dict:
        return {
            "box": self.box.as_lists(),
            "scale": list(self.scale),
            "offset": list(self.offset),
            "src": list(self.src),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CellMap":
        return cls(
            Box(tuple(d["box"][0]), tuple(d["box"][1])),
            tuple(d["scale"]),
            tuple(d["offset"]),
            tuple(int(i) for i in d["src"]),
        )


def cell_containing(cells: Sequence[CellMap], x: Sequence[float]) -> CellMap:
    for cell in cells:
        if cell.box.contains(x):
            return cell
    # boundary points can fall between half-open reading of adjacent cells;
    # take the geometrically nearest cell
    return min(cells, key=lambda c: c.box.distance(x))


def rugged_cells(
    input_space: VariableSpace,
    action_space: VariableSpace,
    n_cells: int,
    seed: int,
) -> tuple[CellMap, ...]:
    """Deterministically carve the input box into cells with jumpy affine maps."""
    if n_cells < 1:
        raise SutSpecError("n_cells must be >= 1")
    rng = np.random.default_rng(seed)
    boxes = [Box.of_space(input_space)]
    while len(boxes) < n_cells:
        boxes.sort(key=lambda b: (-b.volume(), b.lo))
        target = boxes.pop(0)
        dim = max(range(target.dim), key=lambda i: target.sides()[i])
        left, right = target.bisect(dim)
        boxes.extend([left, right])
    boxes.sort(key=lambda b: b.lo)

    out_dim = len(action_space)
    in_dim = len(input_space)
    cells = []
    for box in boxes:
        src = tuple(int(rng.integers(0, in_dim)) for _ in range(out_dim))
        scale, offset = [], []
        for j in range(out_dim):
            olo, ohi = action_space[j].lo, action_space[j].hi
            span = ohi - olo
            width = span * float(rng.uniform(0.1, 0.35))
            lo = olo + float(rng.uniform(0.0, span - width))
            clo, chi = box.lo[src[j]], box.hi[src[j]]
            flip = -1.0 if rng.random() < 0.5 else 1.0
            if chi > clo:
                s = flip * width / (chi - clo)
                o = (lo - s * clo) if flip > 0 else (lo + width - s * clo)
            else:
                s, o = 0.0, lo + width / 2.0
            scale.append(s)
            offset.append(o)
        cells.append(CellMap(box, tuple(scale), tuple(offset), src))
    return tuple(cells)


class LinearSut(SutHandle):
    """v = A x + b, clipped into the action space."""

    def __init__(self, input_space, action_space, matrix, offset, **kw):
        super().__init__(input_space, action_space, **kw)
        self._a = np.asarray(matrix, dtype=float)
        self._b = np.asarray(offset, dtype=float)
        if self._a.shape != (len(action_space), len(input_space)):
            raise SutSpecError(f"matrix shape {self._a.shape} does not match spaces")
        if self._b.shape != (len(action_space),):
            raise SutSpecError("offset length does not match action space")

    def _respond(self, x: tuple) -> tuple:
        return tuple((self._a @ np.asarray(x, dtype=float) + self._b).tolist())


class PiecewiseSut(SutHandle):
    """Rugged map: each input cell applies its own affine map."""

    def __init__(self, input_space, action_space, cells: Sequence[CellMap], **kw):
        super().__init__(input_space, action_space, **kw)
        if not cells:
            raise SutSpecError("piecewise SUT needs at least one cell")
        self._cells = tuple(cells)

    def _respond(self, x: tuple) -> tuple:
        return cell_containing(self._cells, x).apply(x)


class StatefulSut(SutHandle):
    """Linear map plus a feedback term over the last ``memory_depth`` inputs.

    Probing is an observation of a live system: it advances the memory, so
    identical consecutive inputs may produce different outputs.
    """

    def __init__(self, input_space, action_space, matrix, offset, memory_depth, feedback, **kw):
        super().__init__(input_space, action_space, stateful=True, **kw)
        self._a = np.asarray(matrix, dtype=float)
        self._b = np.asarray(offset, dtype=float)
        if memory_depth < 1:
            raise SutSpecError("memory_depth must be >= 1")
        self._memory: deque = deque(maxlen=int(memory_depth))
        self._c = np.asarray(feedback, dtype=float)
        if self._c.shape != (len(action_space),):
            raise SutSpecError("feedback length does not match action space")

    def _respond(self, x: tuple) -> tuple:
        xv = np.asarray(x, dtype=float)
        v = self._a @ xv + self._b
        if self._memory:
            mean = np.mean(np.stack(self._memory), axis=0)
            n = len(xv)
            v = v + self._c * np.array([mean[j % n] for j in range(len(v))])
        self._memory.append(xv)
        return tuple(v.tolist())


class LearningSut(SutHandle):
    """Switches from its pre-learning map to its post-learning map after
    exactly ``trigger`` interactions (probes and acts combined)."""

    def __init__(self, input_space, action_space, pre: SutHandle, post: SutHandle, trigger: int, **kw):
        super().__init__(input_space, action_space, **kw)
        if trigger < 0:
            raise SutSpecError("trigger must be >= 0")
        self._pre = pre
        self._post = post
        self._trigger = int(trigger)
        self._interactions = 0
        self._forced = False

    @property
    def _switched(self) -> bool:
        return self._forced or self._interactions > self._trigger

    def _respond(self, x: tuple) -> tuple:
        self._interactions += 1
        inner = self._post if self._switched else self._pre
        return inner._respond(x)

    def force_epoch(self) -> None:
        """Bench instrumentation: trip the learning switch now.

        This is test-bench plumbing for campaigns that schedule the
        learning epoch at a round boundary; watchdog code never calls it.
        """
        self._forced = True


def make_reference_sut(
    spec: SutSpec,
    input_space: VariableSpace,
    action_space: VariableSpace,
    *,
    what_if_enabled: bool = True,
) -> SutHandle:
    """Build a deterministic reference SUT from its spec."""
    p = spec.params
    try:
        if spec.kind == "linear":
            return LinearSut(
                input_space, action_space, p["matrix"], p["offset"], what_if_enabled=what_if_enabled
            )
        if spec.kind == "piecewise_rugged":
            if "cells" in p:
                cells = [
                    c if isinstance(c, CellMap) else CellMap.from_dict(c) for c in p["cells"]
                ]
            else:
                cells = rugged_cells(input_space, action_space, int(p["n_cells"]), spec.seed)
            return PiecewiseSut(input_space, action_space, cells, what_if_enabled=what_if_enabled)
        if spec.kind == "stateful":
            return StatefulSut(
                input_space,
                action_space,
                p["matrix"],
                p["offset"],
                int(p["memory_depth"]),
                p["feedback"],
                what_if_enabled=what_if_enabled,
            )
        if spec.kind == "learning":
            pre_d, post_d = p["pre"], p["post"]
            pre = make_reference_sut(
                SutSpec(pre_d["kind"], spec.seed, pre_d.get("params", {})),
                input_space,
                action_space,
            )
            post = make_reference_sut(
                SutSpec(post_d["kind"], spec.seed + 1, post_d.get("params", {})),
                input_space,
                action_space,
            )
            return LearningSut(
                input_space, action_space, pre, post, int(p["trigger"]),
                what_if_enabled=what_if_enabled,
            )
    except KeyError as exc:
        raise SutSpecError(f"missing parameter {exc.args[0]!r} for kind {spec.kind!r}") from exc
    raise SutSpecError(f"unknown SUT kind {spec.kind!r}")
