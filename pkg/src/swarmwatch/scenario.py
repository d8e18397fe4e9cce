"""Ground-truth scenarios: region algebra, oracle labeling, and scoring.

The stock scenario lays 13 disjoint unit cells named A..M on a scan-line
grid inside the [0,10]^2 action plane. Four named sets over the cells
drive everything:

* ``sg``: cells satisfying every hard constraint,
* ``sh``: cells satisfying every soft constraint,
* ``sb``: the cells the SUT can reach before its learning epoch,
* ``sa``: the cells it reaches after.

The same sets are encoded as distance-to-union constraints in the generic
checker, so the full pipeline (not scenario-special code) classifies
actions; the oracle here labels points straight from the cell geometry,
which is what makes it an independent referee. The SUT is a piecewise
strip map: equal-width input strips mapped affinely onto the reachable
cells, swapped wholesale at the learning epoch.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .agent import ACTION, Cluster
from .boxes import Box
from .constraints import (
    NL,
    Category,
    Constraint,
    ConstraintSystem,
    ExprPayload,
    HARD,
    SOFT,
)
from .spaces import VariableSpace, real, space
from .sut import CellMap, SutSpec, cell_containing

PRE = "pre"
POST = "post"

_CELL_ROWS = {
    # scan line 0: y in [0, 1]
    "A": (0, 0), "B": (1, 0), "C": (2, 0), "D": (3, 0), "E": (4, 0),
    "F": (5, 0), "G": (6, 0), "H": (7, 0), "I": (8, 0), "J": (9, 0),
    # scan line 1: y in [1, 2]
    "K": (0, 1), "L": (1, 1), "M": (2, 1),
}

SG = frozenset("ABCDEFG")
SH = frozenset("ABGFKMH")
SB = frozenset("BDFEIJK")
SA = frozenset("EFGJKLM")


@dataclass(frozen=True)
class ScoreCard:
    """Grid-scored quality of a discovered cluster map against the truth."""

    recall_h_prime: float
    precision_h_prime: float
    recall_hs_prime: float
    precision_hs_prime: float
    lost_capacity_detected: bool
    new_violation_latency: int | None = None

    def to_dict(self) -> dict:
        return {
            "recall_h_prime": float(self.recall_h_prime),
            "precision_h_prime": float(self.precision_h_prime),
            "recall_hs_prime": float(self.recall_hs_prime),
            "precision_hs_prime": float(self.precision_hs_prime),
            "lost_capacity_detected": bool(self.lost_capacity_detected),
            "new_violation_latency": self.new_violation_latency,
        }


@dataclass(frozen=True)
class Scenario:
    """Immutable ground truth: cells, set memberships, constraints, SUT."""

    input_space: VariableSpace
    action_space: VariableSpace
    cells: dict[str, Box]
    sg: frozenset[str]
    sh: frozenset[str]
    sb: frozenset[str]
    sa: frozenset[str]
    system: ConstraintSystem
    sut_spec: SutSpec
    learning_trigger: int

    # -- set algebra -------------------------------------------------------

    def membership(self, name: str) -> dict[str, bool]:
        return {
            "in_sg": name in self.sg,
            "in_sh": name in self.sh,
            "in_sb": name in self.sb,
            "in_sa": name in self.sa,
        }

    def behavior_names(self, epoch: str) -> tuple[str, ...]:
        names = self.sb if epoch == PRE else self.sa
        return tuple(sorted(names))

    def hard_violation_names(self, epoch: str) -> tuple[str, ...]:
        return tuple(sorted((self.sb if epoch == PRE else self.sa) - self.sg))

    def unacceptable_names(self, epoch: str) -> tuple[str, ...]:
        reach = self.sb if epoch == PRE else self.sa
        return tuple(sorted((reach - self.sg) | ((reach & self.sg) - self.sh)))

    def common_names(self) -> tuple[str, ...]:
        return tuple(sorted(self.sb & self.sa))

    def vacated_names(self) -> tuple[str, ...]:
        return tuple(sorted(self.sb - self.sa))

    def gained_names(self) -> tuple[str, ...]:
        return tuple(sorted(self.sa - self.sb))

    def boxes_of(self, names: Iterable[str]) -> tuple[Box, ...]:
        return tuple(self.cells[n] for n in sorted(names))

    # -- SUT maps ----------------------------------------------------------

    def strip_maps(self, epoch: str) -> tuple[CellMap, ...]:
        key = PRE if epoch == PRE else POST
        return tuple(
            CellMap.from_dict(d) for d in self.sut_spec.params[key]["params"]["cells"]
        )

    def forward(self, epoch: str, x: Sequence[float]) -> tuple[float, ...]:
        """Bench-side replica of the SUT map for the given epoch."""
        return cell_containing(self.strip_maps(epoch), x).apply(x)

    def image_boxes(self, epoch: str, input_box: Box) -> list[Box]:
        """Exact image of an input box under the epoch's strip map."""
        out = []
        for m in self.strip_maps(epoch):
            part = m.box.intersect(input_box)
            if part is None:
                continue
            lo, hi = [], []
            for s, o, src in zip(m.scale, m.offset, m.src):
                a, b = s * part.lo[src] + o, s * part.hi[src] + o
                lo.append(min(a, b))
                hi.append(max(a, b))
            out.append(Box(tuple(lo), tuple(hi)))
        return out

    def to_dict(self) -> dict:
        return {
            "cells": {n: b.as_lists() for n, b in sorted(self.cells.items())},
            "sg": sorted(self.sg),
            "sh": sorted(self.sh),
            "sb": sorted(self.sb),
            "sa": sorted(self.sa),
            "learning_trigger": self.learning_trigger,
        }


def _strip_cells(input_space: VariableSpace, targets: Sequence[Box]) -> list[CellMap]:
    """Equal-width x0 strips mapped affinely onto the target cells."""
    n = len(targets)
    maps = []
    for i, cell in enumerate(targets):
        lo0, hi0 = i / n, (i + 1) / n
        strip = Box((lo0, 0.0), (hi0, 1.0))
        width0 = cell.hi[0] - cell.lo[0]
        width1 = cell.hi[1] - cell.lo[1]
        scale = (width0 * n, width1)
        offset = (cell.lo[0] - scale[0] * lo0, cell.lo[1])
        maps.append(CellMap(strip, scale, offset, (0, 1)))
    return maps


def build_stock_scenario(seed: int = 0, learning_trigger: int = 1_000_000_000) -> Scenario:
    """The stock 13-cell scenario with its constraint encoding and SUT.

    ``learning_trigger`` is the interaction count at which the reference
    SUT flips from the pre map to the post map; campaigns that schedule the
    epoch at a round boundary leave it at the (unreachable) default and
    trip the switch through the bench hook instead.
    """
    cells = {
        name: Box((float(cx), float(cy)), (float(cx + 1), float(cy + 1)))
        for name, (cx, cy) in _CELL_ROWS.items()
    }
    input_space = space(real("x0", 0.0, 1.0), real("x1", 0.0, 1.0))
    action_space = space(real("v0", 0.0, 10.0), real("v1", 0.0, 10.0))

    point = (("var", 0), ("var", 1))
    sg_boxes = tuple(cells[n] for n in sorted(SG))
    sh_boxes = tuple(cells[n] for n in sorted(SH))
    system = ConstraintSystem(
        action_space,
        (
            Constraint(NL, HARD, ExprPayload(("dist_union", point, sg_boxes), 0.0)),
            Constraint(NL, SOFT, ExprPayload(("dist_union", point, sh_boxes), 0.0), 1.0),
        ),
    )

    pre_cells = _strip_cells(input_space, [cells[n] for n in sorted(SB)])
    post_cells = _strip_cells(input_space, [cells[n] for n in sorted(SA)])
    sut_spec = SutSpec(
        "learning",
        seed,
        {
            "pre": {
                "kind": "piecewise_rugged",
                "params": {"cells": [c.to_dict() for c in pre_cells]},
            },
            "post": {
                "kind": "piecewise_rugged",
                "params": {"cells": [c.to_dict() for c in post_cells]},
            },
            "trigger": learning_trigger,
        },
    )
    return Scenario(
        input_space=input_space,
        action_space=action_space,
        cells=cells,
        sg=SG,
        sh=SH,
        sb=SB,
        sa=SA,
        system=system,
        sut_spec=sut_spec,
        learning_trigger=learning_trigger,
    )


def oracle_label(scenario: Scenario, v: Sequence[float]) -> tuple[str | None, Category]:
    """Ground-truth region and category of an action point.

    The category comes straight from the cell geometry (no constraint
    evaluation): unpermissible outside the hard-satisfying union, nominal
    inside both unions, inefficient in between. Points outside every named
    cell get a None region but the same set tests.
    """
    region = None
    for name in sorted(scenario.cells):
        if scenario.cells[name].contains(v):
            region = name
            break
    in_sg = any(scenario.cells[n].contains(v) for n in scenario.sg)
    in_sh = any(scenario.cells[n].contains(v) for n in scenario.sh)
    if not in_sg:
        category = Category.H_PRIME
    elif in_sh:
        category = Category.HS
    else:
        category = Category.HS_PRIME
    return region, category


# --------------------------------------------------------------------------
# scoring


def grid_points(scenario: Scenario, grid: int = 200) -> tuple[np.ndarray, np.ndarray]:
    """Cell-center evaluation grid over the action plane (never on edges)."""
    lo, hi = scenario.action_space.bounds()
    c0 = (np.arange(grid) + 0.5) * (hi[0] - lo[0]) / grid + lo[0]
    c1 = (np.arange(grid) + 0.5) * (hi[1] - lo[1]) / grid + lo[1]
    v0, v1 = np.meshgrid(c0, c1, indexing="ij")
    return v0.ravel(), v1.ravel()


def _union_mask(v0: np.ndarray, v1: np.ndarray, boxes: Iterable[Box]) -> np.ndarray:
    mask = np.zeros(v0.shape, dtype=bool)
    for b in boxes:
        mask |= (v0 >= b.lo[0]) & (v0 <= b.hi[0]) & (v1 >= b.lo[1]) & (v1 <= b.hi[1])
    return mask


def score(
    discovered: Iterable[Cluster],
    scenario: Scenario,
    epoch: str,
    *,
    epsilon: float = 0.9,
    grid: int = 200,
    new_violation_latency: int | None = None,
) -> ScoreCard:
    """Grid-score a cluster map against the scenario truth.

    Only settled, non-stale clusters claim space. Input-space clusters are
    pushed through the epoch's SUT map; action clusters are used directly.
    Recall is measured over the truth volume the SUT can actually reach in
    this epoch; precision over everything the clusters claim. Stale
    clusters are consulted only for lost-capacity detection.
    """
    v0, v1 = grid_points(scenario, grid)
    in_sg = _union_mask(v0, v1, scenario.boxes_of(scenario.sg))
    in_sh = _union_mask(v0, v1, scenario.boxes_of(scenario.sh))
    truth_h = ~in_sg
    truth_hs_prime = in_sg & ~in_sh

    maps = scenario.strip_maps(epoch)
    reach = np.zeros(v0.shape, dtype=bool)
    # preimage coordinates; the sentinel keeps unreachable points out of
    # every cluster-box comparison without NaN warnings
    px0 = np.full(v0.shape, -1e30)
    px1 = np.full(v0.shape, -1e30)
    for m in maps:
        img = m.image()
        mask = (v0 >= img.lo[0]) & (v0 <= img.hi[0]) & (v1 >= img.lo[1]) & (v1 <= img.hi[1])
        mask &= ~reach
        if not mask.any():
            continue
        px0[mask] = (v0[mask] - m.offset[0]) / m.scale[0]
        px1[mask] = (v1[mask] - m.offset[1]) / m.scale[1]
        reach |= mask

    covered = {Category.H_PRIME: np.zeros(v0.shape, dtype=bool),
               Category.HS_PRIME: np.zeros(v0.shape, dtype=bool),
               Category.HS: np.zeros(v0.shape, dtype=bool)}
    clusters = list(discovered)
    for cl in clusters:
        if not cl.settled(epsilon):
            continue
        b = cl.box
        if cl.space_tag == ACTION:
            mask = (v0 >= b.lo[0]) & (v0 <= b.hi[0]) & (v1 >= b.lo[1]) & (v1 <= b.hi[1])
        else:
            mask = reach & (px0 >= b.lo[0]) & (px0 <= b.hi[0]) \
                & (px1 >= b.lo[1]) & (px1 <= b.hi[1])
        covered[cl.label] |= mask

    def ratio(num: np.ndarray, den: np.ndarray) -> float:
        d = int(den.sum())
        return float((num & den).sum()) / d if d else 1.0

    recall_h = ratio(covered[Category.H_PRIME], truth_h & reach)
    precision_h = ratio(truth_h, covered[Category.H_PRIME])
    recall_s = ratio(covered[Category.HS_PRIME], truth_hs_prime & reach)
    precision_s = ratio(truth_hs_prime, covered[Category.HS_PRIME])

    vacated = scenario.boxes_of(scenario.vacated_names())
    lost = False
    for cl in clusters:
        if not cl.stale:
            continue
        if cl.space_tag == ACTION:
            footprint = [cl.box]
        else:
            # input clusters were learned under the pre map
            footprint = scenario.image_boxes(PRE, cl.box)
        if any(f.intersect(vb) is not None for f in footprint for vb in vacated):
            lost = True
            break

    return ScoreCard(
        recall_h_prime=recall_h,
        precision_h_prime=precision_h,
        recall_hs_prime=recall_s,
        precision_hs_prime=precision_s,
        lost_capacity_detected=lost,
        new_violation_latency=new_violation_latency,
    )
