import math

import numpy as np
import pytest

from swarmwatch import Box, boolean, integer, real, sample_in_box, space
from swarmwatch.boxes import clip_to_box, normalized_sides, splittable_dims


def test_of_points_is_componentwise_minmax():
    box = Box.of_points([(0.1, 0.2), (0.4, 0.3)])
    assert box.lo == (0.1, 0.2)
    assert box.hi == (0.4, 0.3)


def test_degenerate_box_from_single_point():
    box = Box.of_points([(0.7, 0.1)])
    assert box.lo == box.hi == (0.7, 0.1)
    assert box.volume() == 0.0
    assert box.contains((0.7, 0.1))


def test_empty_interval_rejected():
    with pytest.raises(ValueError):
        Box((1.0,), (0.0,))


def test_contains_and_distance():
    box = Box((0.0, 0.0), (1.0, 2.0))
    assert box.contains((0.5, 1.0))
    assert box.contains((1.0, 2.0))  # closed boundary
    assert box.distance((0.5, 1.0)) == 0.0
    assert box.distance((2.0, 0.0)) == pytest.approx(1.0)
    assert box.distance((2.0, 3.0)) == pytest.approx(math.sqrt(2.0))


def test_intersect_union_covers():
    a = Box((0.0, 0.0), (2.0, 2.0))
    b = Box((1.0, 1.0), (3.0, 3.0))
    overlap = a.intersect(b)
    assert overlap.lo == (1.0, 1.0) and overlap.hi == (2.0, 2.0)
    assert a.intersect(Box((5.0, 5.0), (6.0, 6.0))) is None
    u = a.union_bounds(b)
    assert u.lo == (0.0, 0.0) and u.hi == (3.0, 3.0)
    assert u.covers(a) and u.covers(b) and not a.covers(u)


def test_real_bisect_shares_face_and_preserves_volume():
    box = Box((0.0, 0.0), (1.0, 4.0))
    left, right = box.bisect(1)
    assert left.hi[1] == right.lo[1] == 2.0
    assert left.volume() + right.volume() == pytest.approx(box.volume())


def test_integer_bisect_splits_lattice_disjointly():
    sp = space(integer("k", 0, 5), real("x", 0, 1))
    box = Box((0.0, 0.0), (5.0, 1.0))
    left, right = box.bisect(0, sp)
    assert left.hi[0] == 2.0 and right.lo[0] == 3.0
    singleton = Box((2.0, 0.0), (2.0, 1.0))
    with pytest.raises(ValueError):
        singleton.bisect(0, sp)


def test_splittable_dims():
    sp = space(boolean("a"), integer("k", 0, 0), real("x", 0, 1))
    box = Box((0.0, 0.0, 0.0), (1.0, 0.0, 1.0))
    assert splittable_dims(box, sp) == [0, 2]
    point = Box((0.0, 0.0, 0.3), (0.0, 0.0, 0.3))
    assert splittable_dims(point, sp) == []


def test_normalized_sides():
    full = Box((0.0, 0.0), (10.0, 2.0))
    box = Box((0.0, 0.0), (5.0, 2.0))
    assert normalized_sides(box, full) == (0.5, 1.0)


def test_inflate_pads_degenerate_sides():
    box = Box((1.0, 1.0), (1.0, 3.0))
    grown = box.inflate(0.25)
    assert grown.lo[0] == pytest.approx(0.75) and grown.hi[0] == pytest.approx(1.25)
    assert grown.lo[1] == pytest.approx(0.5) and grown.hi[1] == pytest.approx(3.5)


def test_sample_in_box_respects_kinds_and_bounds():
    sp = space(boolean("a"), integer("k", -2, 7), real("x", 0, 1))
    box = Box((0.0, -1.0, 0.25), (1.0, 4.0, 0.5))
    rng = np.random.default_rng(7)
    seen_int = set()
    for _ in range(300):
        a, k, x = sample_in_box(rng, box, sp)
        assert isinstance(a, bool)
        assert isinstance(k, int) and -1 <= k <= 4
        assert 0.25 <= x <= 0.5
        seen_int.add(k)
    assert seen_int == set(range(-1, 5))


def test_clip_to_box_rounds_discrete_dims():
    sp = space(boolean("a"), integer("k", 0, 9), real("x", 0, 1))
    box = Box((0.0, 0.0, 0.0), (1.0, 9.0, 1.0))
    assert clip_to_box((0.9, 12.4, 1.7), box, sp) == (True, 9, 1.0)
    assert clip_to_box((0.2, -3.0, -0.5), box, sp) == (False, 0, 0.0)
