"""The watchdog testing agent: maps a SUT's behavior space and keeps its gate.

Each agent owns one SUT handle, one region of input space, and a labeled
cluster map over both the input and the action space. Per round it:

* probes the SUT inside its region (what-if only, no gate traffic),
* compresses the labeled samples into per-label bounding boxes,
* partitions impure boxes by recursive bisection until each leaf's label
  purity clears the required confidence, and
* adapts the new clusters into the map carried from previous rounds,
  flagging clusters that stop being confirmed as stale.

Action-space boxes cannot be sampled directly; they are confirmed through
the inversion operator, an evolutionary search for inputs that reproduce a
target behavior.

Discovery effort is priority-ordered: unpermissible behavior first, then
inefficient, then nominal.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .boxes import Box, normalized_sides, sample_in_box, splittable_dims
from .constraints import ActionClassification, Category, ConstraintSystem, classify
from .spaces import Assignment
from .sut import GateOutcome, GateState, SutFault, SutHandle, act

INPUT = "input"
ACTION = "action"

#: z for the one-sided 95% Wilson score interval.
WILSON_Z = 1.6448536269514722

#: Probes drawn per box when estimating label purity.
DEFAULT_CONFIDENCE_SAMPLES = 40

#: Cap on merge trials per adaptation pass (each costs a purity estimate).
DEFAULT_MERGE_ATTEMPTS = 16

#: Minimum matching samples before an action-space box is worth keeping.
MIN_ACTION_SUPPORT = 8

#: Evidence needed to confirm an action box directly (and to shrink it).
#: Boxes too sparsely sampled stay fresh through merges with the
#: evidence-born clusters of later rounds instead.
MIN_SHRINK_SAMPLES = 4

#: Unvisited margin (fraction of a side) that triggers the shrink split.
SHRINK_MARGIN = 0.35

#: Overlap (intersection over union bounds) treated as the same action box.
ACTION_DEDUP_IOU = 0.7

_PRIORITY = {Category.H_PRIME: 0, Category.HS_PRIME: 1, Category.HS: 2}
_PRIORITY_WEIGHT = {Category.H_PRIME: 3, Category.HS_PRIME: 2, Category.HS: 1}


def wilson_lower(successes: float, total: float, z: float = WILSON_Z) -> float:
    """Lower bound of the one-sided Wilson score interval for a proportion."""
    if total <= 0:
        return 0.0
    phat = successes / total
    z2 = z * z
    center = phat + z2 / (2 * total)
    radius = z * math.sqrt(phat * (1 - phat) / total + z2 / (4 * total * total))
    return max(0.0, (center - radius) / (1 + z2 / total))


def purity_lower_bound(
    label: Category, labels: Sequence[Category], risk_ratio: float
) -> float:
    """Wilson lower bound on the fraction of samples matching ``label``.

    Risk asymmetry: an unpermissible sample found inside a box labeled
    permissible (HS or HS') counts ``risk_ratio`` times, so unsafe
    contamination of safe-looking space drags the bound down hard.
    """
    if not labels:
        return 0.0
    matches = 0.0
    total = 0.0
    permissible_box = label in (Category.HS, Category.HS_PRIME)
    for sample in labels:
        if sample == label:
            matches += 1.0
            total += 1.0
        elif permissible_box and sample is Category.H_PRIME:
            total += risk_ratio
        else:
            total += 1.0
    return wilson_lower(matches, total)


def split_probe_budget(budget: int, present: Iterable[Category]) -> dict[Category, int]:
    """Allocate probes across label groups, never favoring a safer label.

    Guarantees n(H') >= n(HS') >= n(HS) among the groups present.
    """
    groups = sorted(set(present), key=_PRIORITY.get)
    if not groups or budget <= 0:
        return {g: 0 for g in groups}
    total_w = sum(_PRIORITY_WEIGHT[g] for g in groups)
    out: dict[Category, int] = {}
    rest = budget
    for g in groups[1:]:
        share = (budget * _PRIORITY_WEIGHT[g]) // total_w
        out[g] = share
        rest -= share
    out[groups[0]] = rest
    return out


# --------------------------------------------------------------------------
# data types


@dataclass
class Cluster:
    """A labeled axis-aligned box over input or action space.

    ``confidence`` is the lower confidence bound on label purity; a cluster
    is settled once it reaches the agent's required level and unsettled
    (flagged for more work) below it. ``stale`` marks clusters whose
    behavior the SUT has stopped exhibiting.
    """

    space_tag: str
    box: Box
    label: Category
    confidence: float
    support: int
    born_t: int
    last_confirmed_t: int
    stale: bool = False

    def settled(self, epsilon: float) -> bool:
        return self.confidence >= epsilon and not self.stale

    def to_dict(self) -> dict:
        return {
            "space": self.space_tag,
            "box": self.box.as_lists(),
            "label": self.label.value,
            "confidence": float(self.confidence),
            "support": int(self.support),
            "born_t": int(self.born_t),
            "last_confirmed_t": int(self.last_confirmed_t),
            "stale": bool(self.stale),
        }


@dataclass
class TestRound:
    """One round of what-if testing: paired inputs, actions, verdicts."""

    __test__ = False  # domain type, not a pytest case

    t: int
    inputs: list[Assignment]
    actions: list[Assignment]
    classifications: list[ActionClassification]
    fault: str | None = None

    def __len__(self) -> int:
        return len(self.inputs)

    def labels(self) -> list[Category]:
        return [c.category for c in self.classifications]


@dataclass(frozen=True)
class AgentParams:
    """Operator parameters for one agent; the shepherd retunes them."""

    epsilon: float = 0.9
    round_budget: int = 500
    inversion_budget: int = 400
    max_partition_depth: int = 10
    min_box_fraction: float = 0.015625
    explore_temperature: float = 0.3
    risk_ratio: float = 10.0
    staleness_window: int = 5

    def validate(self) -> None:
        if not 0.5 < self.epsilon < 1.0:
            raise ValueError(f"epsilon {self.epsilon} outside (0.5, 1)")
        if self.round_budget < 1:
            raise ValueError("round_budget must be >= 1")
        if self.inversion_budget < 1:
            raise ValueError("inversion_budget must be >= 1")
        if self.max_partition_depth < 0:
            raise ValueError("max_partition_depth must be >= 0")
        if not 0.0 < self.min_box_fraction <= 0.5:
            raise ValueError("min_box_fraction outside (0, 0.5]")
        if self.explore_temperature < 0.0:
            raise ValueError("explore_temperature must be >= 0")
        if self.risk_ratio < 1.0:
            raise ValueError("risk_ratio must be >= 1")
        if self.staleness_window < 1:
            raise ValueError("staleness_window must be >= 1")

    def clamped(self) -> "AgentParams":
        """Pull every field back into its declared range."""
        return AgentParams(
            epsilon=min(max(self.epsilon, 0.500001), 0.999999),
            round_budget=max(int(self.round_budget), 1),
            inversion_budget=max(int(self.inversion_budget), 1),
            max_partition_depth=max(int(self.max_partition_depth), 0),
            min_box_fraction=min(max(self.min_box_fraction, 1e-9), 0.5),
            explore_temperature=min(max(self.explore_temperature, 0.0), 1.0),
            risk_ratio=max(self.risk_ratio, 1.0),
            staleness_window=max(int(self.staleness_window), 1),
        )

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "round_budget": self.round_budget,
            "inversion_budget": self.inversion_budget,
            "max_partition_depth": self.max_partition_depth,
            "min_box_fraction": self.min_box_fraction,
            "explore_temperature": self.explore_temperature,
            "risk_ratio": self.risk_ratio,
            "staleness_window": self.staleness_window,
        }


# --------------------------------------------------------------------------
# compression (module-level: pure functions of a round)


def _compress(round_: TestRound, points: Sequence[Sequence[float]], tag: str,
              risk_ratio: float) -> list[Cluster]:
    labels = round_.labels()
    by_label: dict[Category, list[int]] = {}
    for i, lab in enumerate(labels):
        by_label.setdefault(lab, []).append(i)
    clusters = []
    for label in sorted(by_label, key=_PRIORITY.get):
        idx = by_label[label]
        box = Box.of_points([points[i] for i in idx])
        if tag == INPUT:
            inside = [labels[i] for i in range(len(points)) if box.contains(points[i])]
            conf = purity_lower_bound(label, inside, risk_ratio)
        else:
            # action space has no uniform sampler, so in-round purity over an
            # action box is biased; action boxes earn confidence via inversion
            conf = 0.0
        clusters.append(
            Cluster(tag, box, label, conf, len(idx), round_.t, round_.t)
        )
    return clusters


def compress_inputs(round_: TestRound, risk_ratio: float = 10.0) -> list[Cluster]:
    """Minimum per-label bounding boxes over the round's inputs."""
    if not round_.inputs:
        return []
    return _compress(round_, [a.values for a in round_.inputs], INPUT, risk_ratio)


def compress_actions(round_: TestRound, risk_ratio: float = 10.0) -> list[Cluster]:
    """Minimum per-label bounding boxes over the round's actions."""
    if not round_.actions:
        return []
    return _compress(round_, [a.values for a in round_.actions], ACTION, risk_ratio)


def split_on_gaps(
    points: Sequence[tuple], spans: Sequence[float], gap_fraction: float = 0.1
) -> list[list[tuple]]:
    """Split a point set wherever one dimension has a wide empty gap.

    The bounding box of points from disconnected clumps claims the space
    between them; cutting at the largest gap per recursion keeps each box
    tight around one clump.
    """
    groups = [list(points)]
    out: list[list[tuple]] = []
    while groups:
        pts = groups.pop()
        if len(pts) < 2:
            out.append(pts)
            continue
        best: tuple[float, int, float] | None = None
        for d, span in enumerate(spans):
            coords = sorted(p[d] for p in pts)
            for a, b in zip(coords, coords[1:]):
                gap = b - a
                if gap > gap_fraction * span and (best is None or gap > best[0]):
                    best = (gap, d, (a + b) / 2.0)
        if best is None:
            out.append(pts)
        else:
            _gap, d, cut = best
            groups.append([p for p in pts if p[d] <= cut])
            groups.append([p for p in pts if p[d] > cut])
    return out


def _majority_label(labels: Sequence[Category]) -> Category:
    counts = Counter(labels)
    # ties break toward the riskier label: never call a coin-flip safe
    return max(counts, key=lambda lab: (counts[lab], -_PRIORITY[lab]))


def _interior(box: Box, frac: float = 0.02) -> Box:
    """The box deflated a little: boundary grazes do not count as capacity."""
    lo, hi = [], []
    for a, b in zip(box.lo, box.hi):
        pad = min(frac * (b - a), (b - a) / 2.0)
        lo.append(a + pad)
        hi.append(b - pad)
    return Box(tuple(lo), tuple(hi))


def _union_clock(union: Box, prev: Cluster, cur: Cluster) -> int:
    """Confirmation stamp for a merged action box.

    A component's freshness vouches for the union only when that component
    occupies most of it; a small fresh box inside a big carried one must
    not re-stamp space it never saw.
    """
    union_vol = union.volume()
    stamps = []
    for part in (prev, cur):
        if union_vol <= 0.0 or part.box.volume() / union_vol >= ACTION_DEDUP_IOU:
            stamps.append(part.last_confirmed_t)
    return max(stamps) if stamps else min(prev.last_confirmed_t, cur.last_confirmed_t)


# --------------------------------------------------------------------------
# the agent


class WatchdogAgent:
    """One watchdog over one SUT handle.

    All SUT access by the agent is metered through ``probes`` /
    ``inversion_evals`` and mirrored to the optional ``trace`` callback, so
    a campaign can account for every single evaluation.
    """

    def __init__(
        self,
        agent_id: int,
        sut: SutHandle,
        system: ConstraintSystem,
        params: AgentParams,
        seed: int | np.random.SeedSequence = 0,
        trace: Callable | None = None,
        block_inefficient: bool = False,
    ):
        params.validate()
        self.id = agent_id
        self.sut = sut
        self.system = system
        self.params = params
        self.rng = np.random.default_rng(seed)
        self.trace = trace
        self.block_inefficient = block_inefficient
        self.gate = GateState()
        self.clusters: list[Cluster] = []
        self.probes = 0
        self.inversion_evals = 0
        self.inversion_attempts = 0
        self.inversion_successes = 0
        self._input_box = Box.of_space(sut.input_space)

    # -- metered probe ----------------------------------------------------

    def _probe(self, values: tuple, t: int, kind: str) -> tuple[tuple, ActionClassification]:
        action = self.sut.probe(Assignment(self.sut.input_space, values))
        self.probes += 1
        c = classify(self.system, action)
        if self.trace is not None:
            self.trace(t, self.id, kind, values, action.values, c, "")
        return action.values, c

    # -- round generation --------------------------------------------------

    def _targeted_boxes(self, region: Box) -> dict[Category, list[Box]]:
        """Unsettled or low-confidence input boxes worth pressing on."""
        out: dict[Category, list[Box]] = {}
        for cl in self.clusters:
            if cl.space_tag != INPUT or cl.stale:
                continue
            if cl.confidence >= self.params.epsilon:
                continue
            spot = cl.box.inflate(0.25).intersect(region)
            if spot is not None:
                out.setdefault(cl.label, []).append(spot)
        return out

    def run_round(self, region: Box, t: int, budget: int | None = None) -> TestRound:
        """Probe the SUT ``M`` times inside ``region`` and classify everything.

        Sampling mixes uniform exploration with boundary-biased pressure on
        unsettled boxes; ``explore_temperature`` sets the uniform share.
        Probes are what-if only: no gate traffic is produced. A SUT fault
        truncates the round and is recorded on it.
        """
        m = self.params.round_budget if budget is None else budget
        if m < 0:
            raise ValueError("round budget must be >= 0")
        targeted = self._targeted_boxes(region)
        if targeted:
            uniform_n = int(round(m * min(max(self.params.explore_temperature, 0.05), 1.0)))
        else:
            uniform_n = m
        shares = split_probe_budget(m - uniform_n, targeted.keys())

        plan: list[Box] = [region] * uniform_n
        for label, boxes in targeted.items():
            n = shares.get(label, 0)
            for i in range(n):
                plan.append(boxes[i % len(boxes)])

        inputs: list[Assignment] = []
        actions: list[Assignment] = []
        classifications: list[ActionClassification] = []
        fault = None
        for box in plan:
            values = sample_in_box(self.rng, box, self.sut.input_space)
            try:
                v, c = self._probe(values, t, "probe")
            except SutFault as exc:
                fault = str(exc)
                break
            inputs.append(Assignment(self.sut.input_space, values))
            actions.append(Assignment(self.sut.action_space, v))
            classifications.append(c)
        return TestRound(t, inputs, actions, classifications, fault)

    # -- confidence estimation ----------------------------------------------

    def estimate_confidence(self, cluster: Cluster, t: int, n: int | None = None) -> float:
        """Probe-based lower confidence bound on an input cluster's purity.

        Action clusters have no direct sampler; they are confirmed through
        inversion instead. A SUT fault during estimation yields 0 (fail safe).
        """
        if cluster.space_tag != INPUT:
            raise ValueError("confidence estimation samples input space only")
        if n is None:
            n = DEFAULT_CONFIDENCE_SAMPLES
        if n < 1:
            raise ValueError("need at least one sample")
        labels = []
        for _ in range(n):
            values = sample_in_box(self.rng, cluster.box, self.sut.input_space)
            try:
                _v, c = self._probe(values, t, "confidence")
            except SutFault:
                return 0.0
            labels.append(c.category)
        return purity_lower_bound(cluster.label, labels, self.params.risk_ratio)

    # -- partition -----------------------------------------------------------

    def partition(
        self, cluster: Cluster, t: int, probe_budget: int | None = None
    ) -> list[Cluster]:
        leaves, _samples = self.partition_with_samples(cluster, t, probe_budget)
        return leaves

    def partition_with_samples(
        self, cluster: Cluster, t: int, probe_budget: int | None = None
    ) -> tuple[list[Cluster], list[list[tuple[tuple, tuple, Category]]]]:
        """Bisect an input cluster until every leaf is label-pure enough.

        Returns the leaf clusters (a disjoint exact cover of the parent
        box) plus, per leaf, the (input, action, label) samples drawn while
        judging it. Leaves that could not be settled before hitting the
        depth, size, or probe-budget guards come back with the confidence
        they earned (below epsilon), never silently labeled.
        """
        if cluster.space_tag != INPUT:
            raise ValueError("partition refines input-space clusters only")
        p = self.params
        budget = max(200, p.round_budget) if probe_budget is None else probe_budget
        n = DEFAULT_CONFIDENCE_SAMPLES
        space = self.sut.input_space
        full = self._input_box

        leaves: list[Cluster] = []
        samples_out: list[list[tuple[tuple, tuple, Category]]] = []
        work: list[tuple[Box, int]] = [(cluster.box, 0)]
        while work:
            box, depth = work.pop()
            if budget < n:
                leaves.append(Cluster(INPUT, box, cluster.label, 0.0, 0, t, t))
                samples_out.append([])
                continue
            budget -= n
            samples: list[tuple[tuple, tuple, Category]] = []
            faulted = False
            for _ in range(n):
                values = sample_in_box(self.rng, box, space)
                try:
                    v, c = self._probe(values, t, "partition")
                except SutFault:
                    faulted = True
                    break
                samples.append((values, v, c.category))
            if faulted or not samples:
                leaves.append(Cluster(INPUT, box, cluster.label, 0.0, len(samples), t, t))
                samples_out.append(samples)
                continue
            labels = [s[2] for s in samples]
            majority = _majority_label(labels)
            bound = purity_lower_bound(majority, labels, p.risk_ratio)
            if bound >= p.epsilon:
                leaves.append(Cluster(INPUT, box, majority, bound, len(samples), t, t))
                samples_out.append(samples)
                continue
            sides = normalized_sides(box, full)
            candidates = [
                d for d in splittable_dims(box, space) if sides[d] > p.min_box_fraction
            ]
            if depth >= p.max_partition_depth or not candidates:
                leaves.append(Cluster(INPUT, box, majority, bound, len(samples), t, t))
                samples_out.append(samples)
                continue
            dim = max(candidates, key=lambda d: sides[d])
            left, right = box.bisect(dim, space)
            work.append((right, depth + 1))
            work.append((left, depth + 1))
        return leaves, samples_out

    # -- inversion -------------------------------------------------------------

    def invert(self, target: Box, t: int, budget: int | None = None) -> Assignment | None:
        """Search for an input whose action lands inside ``target``.

        (mu+lambda) evolutionary search with restarts; fitness is the
        Euclidean distance from the probed action to the target box. On
        deterministic SUTs a hit is re-probed for confirmation. Returns
        None when the evaluation budget runs out, which is evidence of
        difficulty, not proof of unreachability.
        """
        if target.dim != len(self.sut.action_space):
            raise ValueError("target box does not match the action space")
        p = self.params
        budget = p.inversion_budget if budget is None else budget
        self.inversion_attempts += 1
        mu, lam, restarts = 5, 20, 5
        space = self.sut.input_space
        evals = 0

        def evaluate(values: tuple) -> float:
            nonlocal evals
            action = self.sut.probe(Assignment(space, values))
            evals += 1
            self.inversion_evals += 1
            self.probes += 1
            if self.trace is not None:
                self.trace(t, self.id, "invert", values, action.values, None, "")
            return target.distance(action.values)

        def confirm(values: tuple) -> Assignment | None:
            if self.sut.stateful:
                return Assignment(space, values)
            again = self.sut.probe(Assignment(space, values))
            self.probes += 1
            self.inversion_evals += 1
            if self.trace is not None:
                self.trace(t, self.id, "invert", values, again.values, None, "")
            if target.distance(again.values) <= 1e-9:
                return Assignment(space, values)
            return None

        spans = [var.span for var in space]
        per_restart = max(budget // restarts, lam)
        while evals < budget:
            allowance = min(per_restart, budget - evals)
            pop: list[tuple[float, tuple]] = []
            used = 0
            initial = min(lam, allowance)
            for _ in range(initial):
                values = sample_in_box(self.rng, self._input_box, space)
                d = evaluate(values)
                used += 1
                if d <= 1e-9:
                    hit = confirm(values)
                    if hit is not None:
                        self.inversion_successes += 1
                        return hit
                pop.append((d, values))
            pop.sort(key=lambda pair: pair[0])
            stall = 0
            best = pop[0][0] if pop else math.inf
            while used + lam <= allowance and evals < budget:
                parents = pop[:mu]
                children = []
                for _ in range(lam):
                    _d, base = parents[int(self.rng.integers(0, len(parents)))]
                    values = self._mutate(base, spans)
                    d = evaluate(values)
                    used += 1
                    if d <= 1e-9:
                        hit = confirm(values)
                        if hit is not None:
                            self.inversion_successes += 1
                            return hit
                    children.append((d, values))
                pop = sorted(pop[:mu] + children, key=lambda pair: pair[0])[: mu + lam]
                if pop[0][0] < best - 1e-12:
                    best = pop[0][0]
                    stall = 0
                else:
                    stall += 1
                    if stall >= 3:
                        break
        return None

    def _mutate(self, values: tuple, spans: Sequence[float]) -> tuple:
        space = self.sut.input_space
        out = list(values)
        for i, var in enumerate(space):
            if var.kind == "real":
                sigma = 0.12 * spans[i] if spans[i] > 0 else 0.1
                out[i] = float(np.clip(out[i] + self.rng.normal(0.0, sigma), var.lo, var.hi))
            elif var.kind == "bool":
                if self.rng.random() < 0.3:
                    out[i] = not out[i]
            else:
                step = int(self.rng.integers(-2, 3))
                if var.values is not None:
                    pos = var.values.index(out[i]) if out[i] in var.values else 0
                    out[i] = var.values[int(np.clip(pos + step, 0, len(var.values) - 1))]
                else:
                    out[i] = int(np.clip(out[i] + step, math.ceil(var.lo), math.floor(var.hi)))
        return tuple(out)

    # -- adaptation ---------------------------------------------------------

    def adapt(
        self,
        previous: list[Cluster],
        current: list[Cluster],
        round_: TestRound,
        t: int,
        merge_attempts: int = DEFAULT_MERGE_ATTEMPTS,
    ) -> list[Cluster]:
        """Fold the previous map into this round's clusters.

        Input clusters merge with a same-label peer when the bounding box
        of their union still passes the purity bar (re-sampled); action
        clusters merge only by containment. Everything else is carried
        forward; carried clusters with no confirming evidence for
        ``staleness_window`` rounds are flagged stale, never deleted.
        """
        p = self.params
        out = list(current)
        budget = merge_attempts

        for prev in previous:
            merged = False
            if prev.space_tag == INPUT:
                for i, cur in enumerate(out):
                    if (
                        cur.space_tag != INPUT
                        or cur.label != prev.label
                        or cur.stale
                    ):
                        continue
                    union = prev.box.union_bounds(cur.box)
                    if union.volume() > 1.5 * (prev.box.volume() + cur.box.volume()):
                        continue  # union adds too much unseen space; not worth probing
                    if budget <= 0:
                        break  # sampling budget exhausted: no merge, keep both
                    budget -= 1
                    probe_cluster = Cluster(INPUT, union, prev.label, 0.0, 0, prev.born_t, t)
                    bound = self.estimate_confidence(probe_cluster, t)
                    if bound >= p.epsilon:
                        out[i] = Cluster(
                            INPUT,
                            union,
                            prev.label,
                            bound,
                            prev.support + cur.support,
                            min(prev.born_t, cur.born_t),
                            t,
                        )
                        merged = True
                        break
            else:
                prev_settled = prev.confidence >= p.epsilon
                for i, cur in enumerate(out):
                    if (
                        cur.space_tag != ACTION
                        or cur.label != prev.label
                        or (cur.confidence >= p.epsilon) != prev_settled
                    ):
                        continue
                    union = cur.box.union_bounds(prev.box)
                    if cur.box.covers(prev.box):
                        confidence = cur.confidence
                    elif prev.box.covers(cur.box):
                        confidence = prev.confidence
                    else:
                        inter = cur.box.intersect(prev.box)
                        union_vol = union.volume()
                        if (
                            inter is None
                            or union_vol <= 0.0
                            or inter.volume() / union_vol < ACTION_DEDUP_IOU
                        ):
                            continue
                        confidence = min(prev.confidence, cur.confidence)
                    out[i] = Cluster(
                        ACTION,
                        union,
                        prev.label,
                        confidence,
                        cur.support + prev.support,
                        min(prev.born_t, cur.born_t),
                        _union_clock(union, prev, cur),
                    )
                    merged = True
                    break
            if not merged:
                out.append(prev)

        self._confirm_from_round(out, round_, t)
        for cl in out:
            cl.stale = (t - cl.last_confirmed_t) >= p.staleness_window
        return out

    def _confirm_from_round(self, clusters: list[Cluster], round_: TestRound, t: int) -> None:
        """Re-confirm carried clusters against this round's evidence.

        Action boxes whose confirming samples consistently occupy only part
        of the box are shrunk to the visited part; the unvisited slab splits
        off with its old confirmation timestamp, so behavior the SUT lost
        within a wider box still ages toward stale.
        """
        if not round_.inputs:
            return
        xs = [a.values for a in round_.inputs]
        vs = [a.values for a in round_.actions]
        labels = round_.labels()
        orphans: list[Cluster] = []
        for cl in clusters:
            if cl.last_confirmed_t >= t:
                continue
            pts = xs if cl.space_tag == INPUT else vs
            hits = [(pt, lab) for pt, lab in zip(pts, labels) if cl.box.contains(pt)]
            if not hits:
                continue
            matching = [pt for pt, lab in hits if lab == cl.label]
            if not matching or len(matching) * 2 < len(hits):
                continue
            if cl.space_tag == ACTION:
                if len(matching) < MIN_SHRINK_SAMPLES:
                    # too little evidence to vouch for the whole box; a live
                    # box stays fresh by merging with the clusters the next
                    # rounds' samples keep producing
                    continue
                orphan = self._shrink_to_evidence(cl, matching, t)
                if orphan is not None:
                    orphans.append(orphan)
                # after a shrink the kept box is exactly the evidence side;
                # without one, no side has a wide unvisited margin
            cl.last_confirmed_t = t
        clusters.extend(orphans)

    def _shrink_to_evidence(
        self, cl: Cluster, matching: list[tuple], t: int
    ) -> Cluster | None:
        """Split the widest unvisited margin off an action box, if any."""
        best: tuple[float, int, bool, float] | None = None
        for d in range(cl.box.dim):
            side = cl.box.hi[d] - cl.box.lo[d]
            if side <= 0:
                continue
            lo_edge = min(p[d] for p in matching)
            hi_edge = max(p[d] for p in matching)
            lo_margin = (lo_edge - cl.box.lo[d]) / side
            hi_margin = (cl.box.hi[d] - hi_edge) / side
            if lo_margin > SHRINK_MARGIN and (best is None or lo_margin > best[0]):
                best = (lo_margin, d, True, lo_edge)
            if hi_margin > SHRINK_MARGIN and (best is None or hi_margin > best[0]):
                best = (hi_margin, d, False, hi_edge)
        if best is None:
            return None
        _margin, d, low_side, edge = best
        box = cl.box
        if low_side:
            orphan_box = Box(box.lo, tuple(edge if i == d else h for i, h in enumerate(box.hi)))
            kept_box = Box(tuple(edge if i == d else l for i, l in enumerate(box.lo)), box.hi)
        else:
            orphan_box = Box(tuple(edge if i == d else l for i, l in enumerate(box.lo)), box.hi)
            kept_box = Box(box.lo, tuple(edge if i == d else h for i, h in enumerate(box.hi)))
        orphan = Cluster(
            ACTION,
            orphan_box,
            cl.label,
            cl.confidence,
            cl.support,
            cl.born_t,
            # this round's evidence actively excludes the orphan slab, so at
            # best it was vouched for last round
            min(cl.last_confirmed_t, t - 1),
            cl.stale,
        )
        cl.box = kept_box
        return orphan

    # -- action clusters out of settled leaves --------------------------------

    def action_clusters_from_leaves(
        self,
        leaves: Sequence[Cluster],
        leaf_samples: Sequence[Sequence[tuple[tuple, tuple, Category]]],
        t: int,
    ) -> list[Cluster]:
        """Project settled input leaves into fine-grained action boxes.

        The action image of a pure input box is itself evidence: the leaf's
        matching actions, gap-split into connected clumps so no box spans
        empty space between distant image pieces, each scored by the purity
        of every sampled action falling inside it.
        """
        spans = [var.span for var in self.sut.action_space]
        out = []
        for leaf, samples in zip(leaves, leaf_samples):
            if not leaf.settled(self.params.epsilon) or not samples:
                continue
            pts = [v for (_x, v, lab) in samples if lab == leaf.label]
            if len(pts) < MIN_ACTION_SUPPORT:
                continue
            for clump in split_on_gaps(pts, spans):
                if len(clump) < MIN_ACTION_SUPPORT:
                    continue
                box = Box.of_points(clump)
                inside = [lab for (_x, v, lab) in samples if box.contains(v)]
                conf = purity_lower_bound(leaf.label, inside, self.params.risk_ratio)
                out.append(Cluster(ACTION, box, leaf.label, conf, len(clump), t, t))
        return out

    def confirm_action_clusters(
        self,
        clusters: Sequence[Cluster],
        t: int,
        round_: TestRound | None = None,
        max_attempts: int = 3,
    ) -> None:
        """Spend inversion attempts confirming action boxes, riskiest first.

        Inversion is the channel for boxes the forward samples cannot
        reach: anything this round's actions already landed in is left to
        the sample-evidence bookkeeping, which can also shrink it.
        """
        sampled = [a.values for a in round_.actions] if round_ is not None else []
        candidates = [
            cl
            for cl in clusters
            if cl.space_tag == ACTION
            and cl.last_confirmed_t < t
            and not any(cl.box.contains(v) for v in sampled)
        ]
        candidates.sort(key=lambda cl: (_PRIORITY[cl.label], cl.last_confirmed_t))
        for cl in candidates[:max_attempts]:
            # confirmation aims at the bulk of the box: a hit near the
            # boundary is shared with whatever lives next door and proves
            # nothing about this box's own capacity
            core = _interior(cl.box, frac=1.0 / 3.0)
            found = self.invert(core, t)
            if found is None:
                continue
            v, c = self._probe(found.values, t, "confirm")
            if core.contains(v) and c.category == cl.label:
                cl.last_confirmed_t = t
                cl.stale = False

    # -- gatekeeping -----------------------------------------------------------

    def gatekeep(self, x: Assignment, t: int | None = None) -> GateOutcome:
        """Route an actuation request through this agent's gate."""
        outcome = act(
            self.sut,
            x,
            self.gate,
            self.system,
            block_inefficient=self.block_inefficient,
            t=t,
        )
        if self.trace is not None:
            e = outcome.event
            self.trace(e.t, self.id, "act", e.x, e.v, e.classification, e.verdict)
        return outcome
