import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swarmwatch import (
    Assignment,
    Box,
    WatchdogAgent,
    AgentParams,
    Category,
    Cluster,
    ConstraintSystem,
    SutFault,
    SutHandle,
    SutSpec,
    TestRound,
    compress_actions,
    compress_inputs,
    make_reference_sut,
    parse_constraint,
    purity_lower_bound,
    real,
    space,
    split_probe_budget,
    wilson_lower,
)
from swarmwatch.agent import ACTION, INPUT

X1 = space(real("x", -5.0, 5.0))
V1 = space(real("v", -10.0, 10.0))
DOUBLE = SutSpec("linear", 0, {"matrix": [[2.0]], "offset": [0.0]})


def system_v_le(bound, sp=V1, name="v"):
    return ConstraintSystem(sp, (parse_constraint(f"lr hard {name} <= {bound}", sp),))


def make_agent(system=None, params=None, seed=0, sut=None):
    return WatchdogAgent(
        0,
        sut or make_reference_sut(DOUBLE, X1, V1),
        system if system is not None else system_v_le(4.0),
        params or AgentParams(),
        seed,
    )


class FaultAfter(SutHandle):
    """Linear v=2x that dies after a fixed number of responses."""

    def __init__(self, n):
        super().__init__(X1, V1)
        self.remaining = n

    def _respond(self, xv):
        if self.remaining <= 0:
            raise SutFault("worn out")
        self.remaining -= 1
        return (2.0 * xv[0],)


# --------------------------------------------------------------------------
# statistics helpers


def test_wilson_frozen_values():
    # oracle: Wilson one-sided 95% lower bound, computed independently
    assert wilson_lower(100, 100) == pytest.approx(0.9737, abs=5e-5)
    assert wilson_lower(50, 100) < 0.5
    assert wilson_lower(0, 0) == 0.0
    assert wilson_lower(999_900, 1_000_000) > 0.999


def test_purity_risk_asymmetry():
    labels = [Category.HS] * 39 + [Category.H_PRIME]
    hs_view = purity_lower_bound(Category.HS, labels, risk_ratio=10.0)
    plain = purity_lower_bound(Category.HS, labels, risk_ratio=1.0)
    assert hs_view < plain  # an H' intruder in safe space hurts much more
    flipped = [Category.H_PRIME] * 39 + [Category.HS]
    hp_view = purity_lower_bound(Category.H_PRIME, flipped, risk_ratio=10.0)
    assert hp_view == pytest.approx(
        purity_lower_bound(Category.H_PRIME, flipped, risk_ratio=1.0)
    )


@settings(max_examples=200, deadline=None)
@given(
    st.integers(0, 10_000),
    st.sets(st.sampled_from([Category.HS, Category.HS_PRIME, Category.H_PRIME]), min_size=1),
)
def test_budget_split_respects_priority(budget, present):
    shares = split_probe_budget(budget, present)
    assert sum(shares.values()) == budget
    get = lambda c: shares.get(c, 0)
    if Category.H_PRIME in present and Category.HS_PRIME in present:
        assert get(Category.H_PRIME) >= get(Category.HS_PRIME)
    if Category.HS_PRIME in present and Category.HS in present:
        assert get(Category.HS_PRIME) >= get(Category.HS)
    if Category.H_PRIME in present and Category.HS in present:
        assert get(Category.H_PRIME) >= get(Category.HS)


# --------------------------------------------------------------------------
# run_round


def test_round_budget_zero_yields_empty_round():
    agent = make_agent()
    round_ = agent.run_round(Box((0.0,), (5.0,)), t=1, budget=0)
    assert len(round_) == 0 and round_.fault is None


def test_round_labels_match_closed_form_oracle():
    agent = make_agent(system_v_le(4.0), AgentParams(round_budget=1000), seed=123)
    round_ = agent.run_round(Box((0.0,), (5.0,)), t=1)
    assert len(round_) == 1000
    for a, c in zip(round_.inputs, round_.classifications):
        expected = Category.H_PRIME if 2.0 * a.values[0] > 4.0 + 1e-9 else Category.HS
        assert c.category is expected


def test_all_permissive_round_is_all_hs():
    agent = make_agent(ConstraintSystem(V1, ()))
    round_ = agent.run_round(Box((-5.0,), (5.0,)), t=1, budget=50)
    assert set(round_.labels()) == {Category.HS}


def test_round_truncates_on_fault():
    agent = make_agent(sut=FaultAfter(7))
    round_ = agent.run_round(Box((-5.0,), (5.0,)), t=1, budget=50)
    assert len(round_) == 7
    assert round_.fault == "worn out"


def test_rounds_produce_no_gate_traffic():
    agent = make_agent()
    agent.run_round(Box((-5.0,), (5.0,)), t=1, budget=100)
    assert agent.gate.events == []
    assert agent.gate.released == agent.gate.blocked == 0


# --------------------------------------------------------------------------
# compression


def _round_from(points_in, points_out, labels, sp_in=None, sp_out=None, t=1):
    sp_in = sp_in or space(real("x0", 0.0, 1.0), real("x1", 0.0, 1.0))
    sp_out = sp_out or space(real("v0", 0.0, 10.0), real("v1", 0.0, 10.0))
    cats = {
        "HS": Category.HS,
        "HS'": Category.HS_PRIME,
        "H'": Category.H_PRIME,
    }
    from swarmwatch.constraints import ActionClassification

    classifications = [
        ActionClassification(cats[l], 0.0, 0.0, 0.0, {}) for l in labels
    ]
    return TestRound(
        t,
        [Assignment(sp_in, p) for p in points_in],
        [Assignment(sp_out, p) for p in points_out],
        classifications,
    )


def test_compress_inputs_bounding_box_example():
    round_ = _round_from(
        [(0.1, 0.2), (0.4, 0.3)], [(1.0, 1.0), (2.0, 2.0)], ["HS", "HS"]
    )
    clusters = compress_inputs(round_)
    assert len(clusters) == 1
    assert clusters[0].box == Box((0.1, 0.2), (0.4, 0.3))
    assert clusters[0].support == 2
    assert clusters[0].space_tag == INPUT


def test_compress_single_point_degenerate_box():
    round_ = _round_from([(0.5, 0.5)], [(1.0, 1.0)], ["H'"])
    (cluster,) = compress_inputs(round_)
    assert cluster.box.lo == cluster.box.hi == (0.5, 0.5)


def test_compress_mixed_label_supports():
    rng = np.random.default_rng(0)
    pts = [(float(rng.uniform(0, 0.4)), float(rng.uniform(0, 1))) for _ in range(600)]
    pts += [(float(rng.uniform(0.6, 1.0)), float(rng.uniform(0, 1))) for _ in range(400)]
    labels = ["HS"] * 600 + ["H'"] * 400
    round_ = _round_from(pts, [(0.0, 0.0)] * 1000, labels)
    clusters = compress_inputs(round_)
    by_label = {c.label: c for c in clusters}
    assert len(clusters) == 2
    assert by_label[Category.HS].support == 600
    assert by_label[Category.H_PRIME].support == 400


def test_compress_actions_interval_example():
    sp_out = space(real("v", 0.0, 10.0))
    round_ = _round_from(
        [(0.0, 0.0), (1.0, 1.0)], [(1.0,), (3.0,)], ["H'", "H'"], sp_out=sp_out
    )
    (cluster,) = compress_actions(round_)
    assert cluster.space_tag == ACTION
    assert cluster.box == Box((1.0,), (3.0,))


def test_compress_actions_absent_label_yields_no_cluster():
    round_ = _round_from([(0.1, 0.1)], [(1.0, 1.0)], ["HS"])
    clusters = compress_actions(round_)
    assert [c.label for c in clusters] == [Category.HS]


def test_compress_from_live_round_h_prime_action_box():
    agent = make_agent(system_v_le(4.0), AgentParams(round_budget=800), seed=5)
    round_ = agent.run_round(Box((0.0,), (5.0,)), t=1)
    clusters = compress_actions(round_, risk_ratio=10.0)
    hp = next(c for c in clusters if c.label is Category.H_PRIME)
    assert hp.box.lo[0] > 4.0
    assert hp.box.hi[0] <= 10.0


def test_bounding_box_minimality():
    agent = make_agent(system_v_le(4.0), AgentParams(round_budget=500), seed=9)
    round_ = agent.run_round(Box((0.0,), (5.0,)), t=1)
    for cluster in compress_inputs(round_):
        member_pts = [
            a.values
            for a, c in zip(round_.inputs, round_.classifications)
            if c.category is cluster.label
        ]
        for pt in member_pts:
            assert cluster.box.contains(pt)
        for d in range(cluster.box.dim):
            # each face touches at least one member sample: any shrink loses one
            assert min(p[d] for p in member_pts) == cluster.box.lo[d]
            assert max(p[d] for p in member_pts) == cluster.box.hi[d]


# --------------------------------------------------------------------------
# confidence estimation


def test_confidence_pure_box_matches_frozen_wilson():
    agent = make_agent(system_v_le(4.0), seed=1)
    cluster = Cluster(INPUT, Box((-5.0,), (0.0,)), Category.HS, 0.0, 0, 0, 0)
    got = agent.estimate_confidence(cluster, t=1, n=100)
    assert got == pytest.approx(wilson_lower(100, 100))


def test_confidence_mixed_box_is_low():
    agent = make_agent(system_v_le(0.0), seed=2)  # violated for x > 0
    cluster = Cluster(INPUT, Box((-5.0,), (5.0,)), Category.HS, 0.0, 0, 0, 0)
    assert agent.estimate_confidence(cluster, t=1, n=100) < 0.5


def test_confidence_consistency_with_huge_n():
    agent = make_agent(system_v_le(4.0), seed=3)
    cluster = Cluster(INPUT, Box((-5.0,), (0.0,)), Category.HS, 0.0, 0, 0, 0)
    assert agent.estimate_confidence(cluster, t=1, n=4000) > 0.998


def test_confidence_fault_fails_safe_to_zero():
    agent = make_agent(sut=FaultAfter(3))
    cluster = Cluster(INPUT, Box((-5.0,), (5.0,)), Category.HS, 0.0, 0, 0, 0)
    assert agent.estimate_confidence(cluster, t=1, n=10) == 0.0


def test_confidence_rejects_action_clusters():
    agent = make_agent()
    cluster = Cluster(ACTION, Box((0.0,), (1.0,)), Category.HS, 0.0, 0, 0, 0)
    with pytest.raises(ValueError):
        agent.estimate_confidence(cluster, t=1)


# --------------------------------------------------------------------------
# partition


def half_split_agent(boundary=0.5, seed=0, params=None):
    """Identity SUT on the unit square; H' strictly left of the boundary."""
    sp_in = space(real("x0", 0.0, 1.0), real("x1", 0.0, 1.0))
    sp_out = space(real("v0", 0.0, 1.0), real("v1", 0.0, 1.0))
    spec = SutSpec("linear", 0, {"matrix": [[1.0, 0.0], [0.0, 1.0]], "offset": [0.0, 0.0]})
    system = ConstraintSystem(
        sp_out, (parse_constraint(f"lr hard -1*v0 <= {-boundary}", sp_out),)
    )
    return WatchdogAgent(
        0,
        make_reference_sut(spec, sp_in, sp_out),
        system,
        params or AgentParams(epsilon=0.9, max_partition_depth=12, min_box_fraction=1 / 64),
        seed,
    )


def parent_cluster():
    return Cluster(INPUT, Box((0.0, 0.0), (1.0, 1.0)), Category.H_PRIME, 0.0, 0, 0, 0)


def test_partition_pure_box_single_leaf():
    agent = half_split_agent()
    pure = Cluster(INPUT, Box((0.6, 0.0), (1.0, 1.0)), Category.HS, 0.0, 0, 0, 0)
    leaves = agent.partition(pure, t=1)
    assert len(leaves) == 1
    assert leaves[0].box == pure.box
    assert leaves[0].label is Category.HS
    assert leaves[0].settled(0.9)


def test_partition_depth_zero_returns_flagged_parent():
    agent = half_split_agent(params=AgentParams(max_partition_depth=0))
    leaves = agent.partition(parent_cluster(), t=1)
    assert len(leaves) == 1
    assert not leaves[0].settled(agent.params.epsilon)


def test_partition_is_exact_disjoint_cover():
    agent = half_split_agent(boundary=0.37, seed=4)
    leaves = agent.partition(parent_cluster(), t=1, probe_budget=4000)
    assert len(leaves) > 1
    total = sum(l.box.volume() for l in leaves)
    assert total == pytest.approx(1.0, abs=1e-9)
    for i, a in enumerate(leaves):
        for b in leaves[i + 1:]:
            overlap = a.box.intersect(b.box)
            assert overlap is None or overlap.volume() == pytest.approx(0.0)


def test_partition_budget_exhaustion_flags_rest():
    agent = half_split_agent(boundary=0.37, seed=4)
    leaves = agent.partition(parent_cluster(), t=1, probe_budget=80)
    assert any(l.confidence == 0.0 and l.support == 0 for l in leaves)


def test_partition_settled_leaves_are_truly_pure():
    agent = half_split_agent(boundary=0.37, seed=11)
    leaves = agent.partition(parent_cluster(), t=1, probe_budget=6000)
    grid = np.linspace(0.0005, 0.9995, 200)
    for leaf in leaves:
        if not leaf.settled(0.9):
            continue
        xs = grid[(grid >= leaf.box.lo[0]) & (grid <= leaf.box.hi[0])]
        if len(xs) == 0:
            continue
        truth_h = np.sum(xs < 0.37) / len(xs)
        purity = truth_h if leaf.label is Category.H_PRIME else 1.0 - truth_h
        assert purity >= 0.9


# --------------------------------------------------------------------------
# adaptation


def _mk(box, label, t, conf=0.95, tag=INPUT, support=40):
    return Cluster(tag, Box(*box), label, conf, support, t, t)


def test_adapt_merges_adjacent_pure_clusters():
    agent = make_agent(system_v_le(100.0), seed=6)  # everything HS
    prev = _mk(((-4.0,), (-2.0,)), Category.HS, 1)
    cur = _mk(((-2.0,), (0.0,)), Category.HS, 2)
    round_ = TestRound(2, [], [], [])
    merged = agent.adapt([prev], [cur], round_, t=2)
    assert len(merged) == 1
    assert merged[0].box == Box((-4.0,), (0.0,))
    assert merged[0].support == 80
    assert merged[0].born_t == 1 and merged[0].last_confirmed_t == 2


def test_adapt_never_merges_across_labels():
    agent = make_agent(system_v_le(100.0), seed=6)
    prev = _mk(((-4.0,), (-2.0,)), Category.HS, 1)
    cur = _mk(((-2.0,), (0.0,)), Category.H_PRIME, 2)
    merged = agent.adapt([prev], [cur], TestRound(2, [], [], []), t=2)
    assert len(merged) == 2


def test_adapt_merge_requires_purity():
    agent = make_agent(system_v_le(0.0), seed=6)  # H' for x > 0
    prev = _mk(((-4.0,), (-2.0,)), Category.HS, 1)
    cur = _mk(((2.0,), (4.0,)), Category.HS, 2)  # mislabeled; union is impure
    merged = agent.adapt([prev], [cur], TestRound(2, [], [], []), t=2)
    assert len(merged) == 2


def test_adapt_stale_flag_after_window():
    params = AgentParams(staleness_window=5)
    agent = make_agent(system_v_le(4.0), params=params, seed=7)
    old = _mk(((8.0,), (9.0,)), Category.H_PRIME, 1, tag=ACTION)
    clusters = [old]
    for t in range(2, 8):
        clusters = agent.adapt(clusters, [], TestRound(t, [], [], []), t=t)
    (carried,) = clusters
    assert carried.stale
    assert carried.last_confirmed_t == 1


def test_adapt_confirmation_resets_staleness_clock():
    import swarmwatch as sw

    params = AgentParams(staleness_window=3)
    agent = make_agent(system_v_le(4.0), params=params, seed=8)
    old = _mk(((5.0,), (6.0,)), Category.H_PRIME, 1, tag=ACTION)
    system = system_v_le(4.0)
    # confirming evidence must actually cover the box, not graze it
    vs = [(5.1,), (5.45,), (5.6,), (5.9,)]
    round_ = TestRound(
        4,
        [Assignment(X1, (v[0] / 2.0,)) for v in vs],
        [Assignment(V1, v) for v in vs],
        [sw.classify(system, Assignment(V1, v)) for v in vs],
    )
    clusters = [old]
    for t in (2, 3):
        clusters = agent.adapt(clusters, [], TestRound(t, [], [], []), t=t)
    clusters = agent.adapt(clusters, [], round_, t=4)
    (carried,) = clusters
    assert carried.last_confirmed_t == 4
    assert not carried.stale


def test_adapt_boundary_graze_does_not_confirm():
    import swarmwatch as sw

    params = AgentParams(staleness_window=3)
    agent = make_agent(system_v_le(4.0), params=params, seed=8)
    old = _mk(((5.0,), (6.0,)), Category.H_PRIME, 1, tag=ACTION)
    system = system_v_le(4.0)
    graze = Assignment(V1, (6.0,))  # exactly on the closed face
    round_ = TestRound(
        2, [Assignment(X1, (3.0,))], [graze], [sw.classify(system, graze)]
    )
    (carried,) = agent.adapt([old], [], round_, t=2)
    assert carried.last_confirmed_t == 1


def test_adapt_flags_lost_capacity_of_learning_sut():
    # an H' action box the system stops exhibiting after its learning epoch
    # ages out of confirmation and is flagged stale, never deleted
    spec = SutSpec(
        "learning",
        0,
        {
            "pre": {"kind": "linear", "params": {"matrix": [[2.0]], "offset": [0.0]}},
            "post": {"kind": "linear", "params": {"matrix": [[0.5]], "offset": [0.0]}},
            "trigger": 10**9,
        },
    )
    sut = make_reference_sut(spec, X1, V1)
    params = AgentParams(round_budget=200, staleness_window=3)
    agent = WatchdogAgent(0, sut, system_v_le(4.0), params, seed=13)
    region = Box((-5.0,), (5.0,))

    round1 = agent.run_round(region, t=1)
    clusters = agent.adapt([], compress_actions(round1, 10.0), round1, t=1)
    h_boxes = [c for c in clusters if c.label is Category.H_PRIME]
    assert h_boxes and all(c.box.lo[0] > 4.0 for c in h_boxes)

    sut.force_epoch()  # post map halves everything: image [-2.5, 2.5], no H'
    for t in range(2, 6):
        round_ = agent.run_round(region, t)
        clusters = agent.adapt(clusters, compress_actions(round_, 10.0), round_, t=t)
    survivors = [c for c in clusters if c.label is Category.H_PRIME and c.born_t == 1]
    assert survivors, "lost-capacity evidence must be kept, not deleted"
    assert all(c.stale for c in survivors)


def test_adapt_action_containment_absorbs():
    agent = make_agent(system_v_le(4.0), seed=9)
    big = _mk(((5.0,), (7.0,)), Category.H_PRIME, 1, tag=ACTION, support=30)
    small = _mk(((5.5,), (6.0,)), Category.H_PRIME, 2, tag=ACTION, support=10)
    merged = agent.adapt([big], [small], TestRound(2, [], [], []), t=2)
    assert len(merged) == 1
    assert merged[0].box == big.box
    assert merged[0].support == 40


# --------------------------------------------------------------------------
# action clusters from leaves


def test_action_clusters_inherit_leaf_granularity():
    agent = make_agent(system_v_le(4.0), seed=10)
    leaf = Cluster(INPUT, Box((3.0,), (5.0,)), Category.H_PRIME, 0.95, 40, 1, 1)
    samples = []
    rng = np.random.default_rng(0)
    for _ in range(40):
        xv = float(rng.uniform(3.0, 5.0))
        samples.append(((xv,), (2 * xv,), Category.H_PRIME))
    (cluster,) = agent.action_clusters_from_leaves([leaf], [samples], t=1)
    assert cluster.space_tag == ACTION
    assert cluster.label is Category.H_PRIME
    assert cluster.box.lo[0] >= 6.0 and cluster.box.hi[0] <= 10.0
    assert cluster.settled(0.9)


def test_action_clusters_skip_unsettled_or_thin_leaves():
    agent = make_agent(system_v_le(4.0))
    unsettled = Cluster(INPUT, Box((3.0,), (5.0,)), Category.H_PRIME, 0.2, 40, 1, 1)
    thin_samples = [((4.0,), (8.0,), Category.H_PRIME)] * 3
    assert agent.action_clusters_from_leaves([unsettled], [thin_samples], 1) == []
    settled = Cluster(INPUT, Box((3.0,), (5.0,)), Category.H_PRIME, 0.95, 40, 1, 1)
    assert agent.action_clusters_from_leaves([settled], [thin_samples], 1) == []


# --------------------------------------------------------------------------
# gap splitting, merge clocks, inversion gating


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 10), st.floats(0, 10)), min_size=1, max_size=60))
def test_gap_split_partitions_points_and_closes_gaps(points):
    from swarmwatch.agent import split_on_gaps

    spans = (10.0, 10.0)
    groups = split_on_gaps(points, spans, gap_fraction=0.1)
    flat = sorted(p for g in groups for p in g)
    assert flat == sorted(points)  # a partition, nothing lost or invented
    for group in groups:
        for d in (0, 1):
            coords = sorted(p[d] for p in group)
            for a, b in zip(coords, coords[1:]):
                assert b - a <= 0.1 * spans[d] + 1e-12


def test_merged_clock_ignores_small_fresh_component():
    agent = make_agent(system_v_le(100.0), seed=3)
    carried = _mk(((0.0,), (4.0,)), Category.HS, 1, tag=ACTION, conf=0.2)
    carried.last_confirmed_t = 2
    fresh = _mk(((3.0,), (4.0,)), Category.HS, 7, tag=ACTION, conf=0.2)
    (merged,) = agent.adapt([carried], [fresh], TestRound(7, [], [], []), t=7)
    assert merged.box == Box((0.0,), (4.0,))
    # the fresh box covers a quarter of the union: its stamp must not
    # re-vouch the carried three quarters
    assert merged.last_confirmed_t == 2


def test_merged_clock_accepts_near_equal_fresh_component():
    agent = make_agent(system_v_le(100.0), seed=3)
    carried = _mk(((0.0,), (4.0,)), Category.HS, 1, tag=ACTION, conf=0.2)
    carried.last_confirmed_t = 2
    fresh = _mk(((0.1,), (4.0,)), Category.HS, 7, tag=ACTION, conf=0.2)
    (merged,) = agent.adapt([carried], [fresh], TestRound(7, [], [], []), t=7)
    assert merged.last_confirmed_t == 7


def test_inversion_confirmation_skips_sampled_boxes():
    agent = make_agent(system_v_le(4.0), seed=4)
    sampled_box = _mk(((1.0,), (3.0,)), Category.HS, 1, tag=ACTION)
    sampled_box.last_confirmed_t = 0
    starved_box = _mk(((5.0,), (6.0,)), Category.H_PRIME, 1, tag=ACTION)
    starved_box.last_confirmed_t = 0
    round_ = TestRound(
        2,
        [Assignment(X1, (1.0,))],
        [Assignment(V1, (2.0,))],  # lands inside sampled_box
        [__import__("swarmwatch").classify(system_v_le(4.0), Assignment(V1, (2.0,)))],
    )
    agent.confirm_action_clusters([sampled_box, starved_box], t=2, round_=round_)
    # the sampled box is the forward channel's business: untouched here
    assert sampled_box.last_confirmed_t == 0
    # the starved H' box is reachable (probe(2.75) = 5.5) and gets confirmed
    assert starved_box.last_confirmed_t == 2
    assert agent.inversion_attempts >= 1
