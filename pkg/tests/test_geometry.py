from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boxattractor.geometry import (
    Box,
    BoxKey,
    CoverLevel,
    coords_to_flats,
    flats_to_coords,
    point_box_distance,
    refine_cover,
    region_semidistance,
    sample_centers,
    semidistance_estimate,
    subdivide_box,
)


def test_box_rejects_degenerate() -> None:
    with pytest.raises(ValueError):
        Box([0.0, 0.0], [1.0, 0.0])
    with pytest.raises(ValueError):
        Box([0.0], [np.inf])


def test_subdivide_unit_square_selector_order() -> None:
    kids = subdivide_box(Box([0.0, 0.0], [1.0, 1.0]))
    expected = [
        ([0.0, 0.0], [0.5, 0.5]),
        ([0.5, 0.0], [1.0, 0.5]),
        ([0.0, 0.5], [0.5, 1.0]),
        ([0.5, 0.5], [1.0, 1.0]),
    ]
    assert [(k.lo.tolist(), k.hi.tolist()) for k in kids] == expected


def test_subdivide_interval_midpoint() -> None:
    kids = subdivide_box(Box([-1.0], [1.0]))
    assert [(k.lo.tolist(), k.hi.tolist()) for k in kids] == [([-1.0], [0.0]), ([0.0], [1.0])]


def test_two_subdivisions_match_flat_index_scheme() -> None:
    # enumerate by recursive subdivision and compare against the flat-index
    # arithmetic: children of flat i at depth n are i*2^d .. (i+1)*2^d - 1
    root = Box([-1.0, -1.0], [1.0, 1.0])
    level2 = CoverLevel.full(root, 2)
    assert level2.size == 16
    by_recursion = {}
    for i, child in enumerate(subdivide_box(root)):
        for s, grand in enumerate(subdivide_box(child)):
            by_recursion[i * 4 + s] = grand
    for flat in range(16):
        assert by_recursion[flat] == level2.box_of_flat(flat)
        assert level2.box_of_flat(flat).diameter == pytest.approx(root.diameter / 4)
    # key digits reproduce the same flats
    for flat in range(16):
        key = BoxKey.from_flat(flat, 2, 2)
        assert key.flat(2) == flat
        assert key.box(root) == level2.box_of_flat(flat)


def test_sample_centers_examples() -> None:
    g = sample_centers(Box([0.0], [1.0]), 2)
    assert g.centers.ravel().tolist() == [0.25, 0.75]
    assert g.subdiameter == pytest.approx(0.5)

    g = sample_centers(Box([0.0, 0.0], [1.0, 1.0]), 1)
    assert g.centers.tolist() == [[0.5, 0.5]]
    assert g.subdiameter == pytest.approx(1.0)

    g = sample_centers(Box([-1.0], [1.0]), 4)
    assert g.centers.ravel().tolist() == [-0.75, -0.25, 0.25, 0.75]
    assert g.subdiameter == pytest.approx(0.5)

    with pytest.raises(ValueError):
        sample_centers(Box([0.0], [1.0]), 0)


def test_point_box_distance_examples() -> None:
    b = Box([0.0, 0.0], [1.0, 1.0])
    assert point_box_distance([2.0, 0.0], b) == pytest.approx(1.0)
    assert point_box_distance([0.3, 0.7], b) == 0.0
    assert point_box_distance([2.0, 3.0], b) == pytest.approx(2.0)


@given(
    st.lists(st.floats(-5, 5), min_size=2, max_size=2),
    st.lists(st.floats(-5, 5), min_size=2, max_size=2),
)
@settings(max_examples=200, deadline=None)
def test_point_box_distance_zero_iff_member(p: list[float], q: list[float]) -> None:
    b = Box([-1.0, -2.0], [2.0, 1.0])
    d = point_box_distance(p, b)
    assert (d == 0.0) == b.contains_point(p)
    # 1-Lipschitz in the point argument
    assert abs(d - point_box_distance(q, b)) <= np.max(np.abs(np.asarray(p) - np.asarray(q))) + 1e-12


def test_refine_cover_examples() -> None:
    root = Box([-1.0], [1.0])
    level0 = CoverLevel.full(root, 0)
    level1 = refine_cover(level0, level0.active)
    assert level1.size == 2 and level1.depth == 1

    empty = refine_cover(level1, [])
    assert empty.size == 0 and empty.depth == 2

    right = [k for k in level1.active if k.box(root).lo[0] == 0.0]
    level2 = refine_cover(level1, right)
    boxes = [level2.box_of_flat(f) for f in level2.flats]
    assert [(b.lo[0], b.hi[0]) for b in boxes] == [(0.0, 0.5), (0.5, 1.0)]

    with pytest.raises(ValueError):
        refine_cover(level2, [BoxKey(2, (0, 0))])  # pruned away above


def test_nesting_and_partition_invariants() -> None:
    root = Box([-1.0, 0.5], [3.0, 2.5])
    level = CoverLevel.full(root, 3)
    parent = CoverLevel.full(root, 2)
    for key in level.active:
        anc = key.ancestor(2)
        assert anc.box(root).contains_box(key.box(root))
    assert parent.rho == pytest.approx(root.diameter / 4)
    assert level.rho == pytest.approx(root.diameter / 8)
    # children tile their parent exactly: volumes add up
    for b in (root, parent.box_of_flat(5)):
        kids = subdivide_box(b)
        vol = sum(float(np.prod(k.hi - k.lo)) for k in kids)
        assert vol == pytest.approx(float(np.prod(b.hi - b.lo)))


def test_json_roundtrips() -> None:
    b = Box([-1.5, 0.25], [2.0, 1.0])
    assert Box.from_json(b.to_json()) == b
    assert b.to_json() == {"lo": [-1.5, 0.25], "hi": [2.0, 1.0]}
    k = BoxKey(3, (0, 2, 1))
    assert BoxKey.from_json(k.to_json()) == k
    assert k.to_json() == {"depth": 3, "path": [0, 2, 1]}
    with pytest.raises(ValueError):
        BoxKey.from_flat(-1, 2, 2)
    with pytest.raises(ValueError):
        BoxKey(2, (0,))


def test_flat_coord_roundtrip() -> None:
    rng = np.random.default_rng(7)
    for depth, dim in [(0, 1), (3, 1), (4, 2), (3, 3)]:
        flats = rng.integers(0, 1 << (depth * dim), size=50)
        coords = flats_to_coords(flats, depth, dim)
        assert np.array_equal(coords_to_flats(coords, depth, dim), flats)
        assert np.all(coords >= 0) and np.all(coords < (1 << depth))


def test_dyadic_boundaries_match_recursive_bounds() -> None:
    # boundary arrays must reproduce the exact floats of per-key recursion
    root = Box([-1.0, -1.0], [1.0, 1.0])
    level = CoverLevel.full(root, 6)
    rng = np.random.default_rng(3)
    for flat in rng.integers(0, level.size, size=32):
        key = BoxKey.from_flat(int(flat), 6, 2)
        assert key.box(root) == level.box_of_flat(int(flat))


def test_cells_near_point_matches_bruteforce() -> None:
    root = Box([-1.0, -1.0], [1.0, 1.0])
    level = CoverLevel.full(root, 4)
    rng = np.random.default_rng(11)
    for _ in range(50):
        p = rng.uniform(-1.4, 1.4, size=2)
        r = float(rng.uniform(0, 0.5))
        got = set(level.cells_near_point(p, r).tolist())
        want = {
            int(f)
            for f in level.flats
            if point_box_distance(p, level.box_of_flat(int(f))) <= r
        }
        assert got == want


def test_contains_points_boundary_inclusive() -> None:
    root = Box([-1.0], [1.0])
    level = CoverLevel(root, 1, [1])  # only [0, 1] active
    res = level.contains_points([[0.0], [-0.5], [0.5], [1.0], [1.5]])
    assert res.tolist() == [True, False, True, True, False]


def test_semidistance_estimate_examples() -> None:
    lower, upper = semidistance_estimate([Box([0.0], [1.0])], [Box([2.0], [3.0])], samples_per_axis=3)
    assert lower == pytest.approx(2.0)
    assert upper == pytest.approx(2.5)

    src = [Box([0.0, 0.0], [1.0, 1.0])]
    lower, upper = semidistance_estimate(src, src, samples_per_axis=5)
    assert lower == 0.0
    assert upper == pytest.approx(0.25)

    lower, upper = semidistance_estimate(
        [Box([0.0, 0.0], [1.0, 1.0])], [Box([0.0, 2.0], [1.0, 3.0])], samples_per_axis=5
    )
    # brute-force dense sampling confirms the supremum sits at y = 0
    dense = 0.0
    for x in np.linspace(0, 1, 101):
        for y in np.linspace(0, 1, 101):
            dense = max(dense, max(2.0 - y, 0.0))
    assert lower == pytest.approx(dense)
    assert lower <= dense <= upper

    with pytest.raises(ValueError):
        semidistance_estimate([], src)


def test_semidistance_bounds_on_closed_form_1d() -> None:
    # configurations whose semidistance is computable in closed form:
    # disjoint:      dist([0,1], [2,3])            = 2
    # contained:     dist([0,1], [-1,2])           = 0
    # overlapping:   dist([0,2], [1,5])            = 1   (at x = 0)
    # two targets:   dist([0,1], {[-2,-1],[3,4]})  = 2   (at x = 1)
    cases = [
        ([Box([0.0], [1.0])], [Box([2.0], [3.0])], 2.0),
        ([Box([0.0], [1.0])], [Box([-1.0], [2.0])], 0.0),
        ([Box([0.0], [2.0])], [Box([1.0], [5.0])], 1.0),
        ([Box([0.0], [1.0])], [Box([-2.0], [-1.0]), Box([3.0], [4.0])], 2.0),
    ]
    for src, tgt, truth in cases:
        for s in (2, 4, 9):
            lower, upper = semidistance_estimate(src, tgt, samples_per_axis=s)
            assert lower <= truth + 1e-12
            assert truth <= upper + 1e-12


def test_region_semidistance_exact() -> None:
    level = CoverLevel.full(Box([-1.0, -1.0], [1.0, 1.0]), 2)
    # whole cover against the segment {0} x [-1, 1]: farthest x-extent is 1
    assert region_semidistance(level.box_los, level.box_his, [0.0, -1.0], [0.0, 1.0]) == pytest.approx(1.0)
    # against the full square the distance is zero
    assert region_semidistance(level.box_los, level.box_his, [-1.0, -1.0], [1.0, 1.0]) == 0.0


@given(st.integers(0, 3), st.integers(1, 2))
@settings(max_examples=30, deadline=None)
def test_full_cover_interiors_disjoint_and_tile(depth: int, dim: int) -> None:
    root = Box([0.0] * dim, [1.0] * dim)
    level = CoverLevel.full(root, depth)
    vol = 0.0
    for f in level.flats:
        b = level.box_of_flat(int(f))
        vol += float(np.prod(b.hi - b.lo))
    assert vol == pytest.approx(1.0)
    # diameter law
    assert level.rho == pytest.approx(root.diameter * 2.0**-depth)
