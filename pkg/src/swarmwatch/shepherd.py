"""The swarm controller: per-agent parameter steering and region assignment.

The shepherd never touches the constraint system (what counts as "right"
is not its call) and never runs mid-round: it acts at round barriers on
the performance indicators the agents report, nudging each agent's
parameters with bounded multiplicative rules and re-carving the input
space so every agent faces a comparable amount of unexplored volume.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .agent import AgentParams
from .boxes import Box
from .spaces import REAL, VariableSpace

#: Density floor so rebalanced regions never collapse to zero width.
_DENSITY_FLOOR = 0.01


@dataclass(frozen=True)
class PerformanceIndicators:
    """Per-agent, per-round health snapshot the shepherd steers on."""

    settled_volume: float
    h_prime_volume: float
    purity_mean: float
    inversion_success_rate: float
    compute_spend: float
    gate_blocks: int
    stagnation: int

    def validate(self) -> None:
        for name in ("settled_volume", "h_prime_volume", "inversion_success_rate"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} {value} outside [0, 1]")
        if not 0.0 <= self.purity_mean <= 1.0:
            raise ValueError("purity_mean outside [0, 1]")
        if self.compute_spend < 0 or self.gate_blocks < 0 or self.stagnation < 0:
            raise ValueError("counts must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "settled_volume": float(self.settled_volume),
            "h_prime_volume": float(self.h_prime_volume),
            "purity_mean": float(self.purity_mean),
            "inversion_success_rate": float(self.inversion_success_rate),
            "compute_spend": float(self.compute_spend),
            "gate_blocks": int(self.gate_blocks),
            "stagnation": int(self.stagnation),
        }


NOMINAL = PerformanceIndicators(
    settled_volume=0.5,
    h_prime_volume=0.1,
    purity_mean=0.95,
    inversion_success_rate=0.5,
    compute_spend=0.0,
    gate_blocks=0,
    stagnation=0,
)


@dataclass(frozen=True)
class RegionAssignment:
    """One disjoint input-space box per agent; together they cover the space."""

    regions: tuple[Box, ...]

    def __len__(self) -> int:
        return len(self.regions)

    def __getitem__(self, i: int) -> Box:
        return self.regions[i]


class Shepherd:
    """Applies the influence rules and assigns exploration regions.

    Rules (each bounded, each clamped back into the declared parameter
    ranges afterward):

    * R1 cost pressure: compute_spend above threshold -> epsilon *= 0.95,
      floored at 0.55. Relief beats tightening: R4 is skipped in any round
      where R1 fired, so epsilon is non-increasing under sustained cost
      pressure.
    * R2 inversion starving: success rate < 0.2 -> inversion budget
      doubles, capped at 10x its campaign-initial value.
    * R3 stagnation: more than 5 rounds without new unpermissible volume
      -> explore_temperature += 0.1, capped at 1.0.
    * R4 cheap precision: mean purity > 0.99 with no stagnation ->
      epsilon *= 1.02, capped at 0.99.
    """

    EPSILON_FLOOR = 0.55
    EPSILON_CAP = 0.99
    INVERSION_CAP_FACTOR = 10
    STAGNATION_LIMIT = 5
    SUCCESS_FLOOR = 0.2
    PURITY_BAR = 0.99

    def __init__(self, initial: AgentParams, cost_threshold: float | None = None):
        initial.validate()
        self.initial = initial
        self.cost_threshold = (
            float(cost_threshold) if cost_threshold is not None else 8.0 * initial.round_budget
        )
        self.last_fired: list[list[str]] = []

    def influence(
        self,
        params: list[AgentParams],
        indicators: list[PerformanceIndicators],
    ) -> list[AgentParams]:
        """p^t, I^t -> p^{t+1}, one entry per agent, index-aligned.

        Agents triggering no rule keep their parameters unchanged. Fired
        rule names per agent land in ``self.last_fired``.
        """
        if len(params) != len(indicators):
            raise ValueError("params and indicators must be index-aligned")
        out: list[AgentParams] = []
        self.last_fired = []
        for p, ind in zip(params, indicators):
            ind.validate()
            fired: list[str] = []
            new = p
            if ind.compute_spend > self.cost_threshold:
                new = replace(new, epsilon=max(new.epsilon * 0.95, self.EPSILON_FLOOR))
                fired.append("R1")
            if ind.inversion_success_rate < self.SUCCESS_FLOOR:
                cap = self.INVERSION_CAP_FACTOR * self.initial.inversion_budget
                new = replace(new, inversion_budget=min(new.inversion_budget * 2, cap))
                fired.append("R2")
            if ind.stagnation > self.STAGNATION_LIMIT:
                new = replace(
                    new, explore_temperature=min(new.explore_temperature + 0.1, 1.0)
                )
                fired.append("R3")
            if (
                "R1" not in fired
                and ind.purity_mean > self.PURITY_BAR
                and ind.stagnation == 0
            ):
                new = replace(new, epsilon=min(new.epsilon * 1.02, self.EPSILON_CAP))
                fired.append("R4")
            out.append(new.clamped() if fired else p)
            self.last_fired.append(fired)
        return out

    # -- regions ---------------------------------------------------------------

    def assign_regions(
        self,
        agents: int,
        global_box: Box,
        indicators: list[PerformanceIndicators] | None = None,
        previous: RegionAssignment | None = None,
        space: VariableSpace | None = None,
    ) -> RegionAssignment:
        """Carve the global box into one region per agent.

        Without indicators the split is equal-volume. With indicators and
        the previous assignment, cuts follow the unsettled-volume density
        (uniform within each old region) so each agent receives about the
        same amount of remaining work.
        """
        if agents < 1:
            raise ValueError("need at least one agent")
        density: list[tuple[Box, float]]
        if indicators is None or previous is None or len(previous) != agents:
            density = [(global_box, 1.0)]
        else:
            total = 0.0
            density = []
            for ind, box in zip(indicators, previous.regions):
                ind.validate()
                d = 1.0 - ind.settled_volume
                total += d * box.volume()
                density.append((box, d + _DENSITY_FLOOR))
            if total <= 0.0:
                density = [(global_box, 1.0)]
        boxes = _split_weighted(global_box, agents, density, space)
        return RegionAssignment(tuple(boxes))


def _mass(box: Box, density: list[tuple[Box, float]]) -> float:
    total = 0.0
    for cell, d in density:
        overlap = box.intersect(cell)
        if overlap is not None:
            total += d * overlap.volume()
    return total


def _split_weighted(
    box: Box,
    n: int,
    density: list[tuple[Box, float]],
    space: VariableSpace | None,
) -> list[Box]:
    if n == 1:
        return [box]
    n_left = n // 2
    frac = n_left / n

    sides = box.sides()
    dims = range(box.dim)
    if space is not None:
        real_dims = [i for i in dims if space[i].kind == REAL and sides[i] > 0]
        dim = max(real_dims or dims, key=lambda i: sides[i])
    else:
        dim = max(dims, key=lambda i: sides[i])

    uniform = len(density) == 1 and density[0][0].covers(box)
    if uniform:
        cut = box.lo[dim] + frac * (box.hi[dim] - box.lo[dim])
    else:
        target = frac * _mass(box, density)
        lo_c, hi_c = box.lo[dim], box.hi[dim]
        for _ in range(60):
            mid = (lo_c + hi_c) / 2.0
            left_probe = Box(
                box.lo, tuple(mid if i == dim else h for i, h in enumerate(box.hi))
            )
            if _mass(left_probe, density) < target:
                lo_c = mid
            else:
                hi_c = mid
        cut = (lo_c + hi_c) / 2.0
    if space is not None and space[dim].kind != REAL:
        # keep the halves disjoint on the integer lattice
        cut = min(max(float(int(cut)) + 0.5, box.lo[dim]), box.hi[dim])

    left = Box(box.lo, tuple(cut if i == dim else h for i, h in enumerate(box.hi)))
    right = Box(tuple(cut if i == dim else l for i, l in enumerate(box.lo)), box.hi)
    return _split_weighted(left, n_left, density, space) + _split_weighted(
        right, n - n_left, density, space
    )
