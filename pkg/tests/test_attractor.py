from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from boxattractor.attractor import (
    BoxBudgetError,
    prune,
    run_global,
    run_subdivision,
)
from boxattractor.geometry import Box, CoverLevel, refine_cover, region_semidistance
from boxattractor.integrator import EulerParams, EulerSchedule
from boxattractor.oracle import reach_cycle_set, reference_attractor_points
from boxattractor.systems import make_builtin
from boxattractor.transition import build_transition_discrete

Q1 = Box([-1.0], [1.0])
Q2 = Box([-1.0, -1.0], [1.0, 1.0])


def kept_level(Q: Box, depth: int, kept) -> CoverLevel:
    return CoverLevel(Q, depth, [k.flat(Q.dim) for k in kept])


def test_prune_hand_examples() -> None:
    res = prune([0, 1, 2], {0: [1], 1: [], 2: [2]})
    assert res.kept == (2,) and res.removed == (0, 1)
    assert res.rounds == 2  # node 1 first, then node 0 loses its successor

    res = prune([0, 1, 2], {0: [0], 1: [1], 2: [2]})
    assert res.kept == (0, 1, 2) and res.rounds == 0

    res = prune([0, 1, 2], {0: [1], 1: [0], 2: [0]})
    assert res.kept == (0, 1, 2)

    res = prune([], {})
    assert res.kept == () and res.removed == () and res.rounds == 0


def test_prune_restriction_semantics() -> None:
    # edges out of the index set are dropped; 1 then has no successors
    res = prune([0, 1], {0: [0, 1], 1: [5], 5: [5]})
    assert res.kept == (0,) and res.removed == (1,)


def test_prune_matches_reach_cycle_oracle_random_graphs() -> None:
    rng = np.random.default_rng(20260810)
    for _ in range(60):
        n = int(rng.integers(1, 51))
        p = float(rng.uniform(0.0, 0.2))
        adj = rng.random((n, n)) < p
        edges = {i: list(np.nonzero(adj[i])[0]) for i in range(n)}
        assert set(prune(range(n), edges).kept) == reach_cycle_set(edges)


@given(
    st.dictionaries(
        st.integers(0, 14),
        st.lists(st.integers(0, 14), max_size=5),
        max_size=15,
    )
)
@settings(max_examples=200, deadline=None)
def test_prune_matches_reach_cycle_oracle_hypothesis(edges: dict[int, list[int]]) -> None:
    assert set(prune(edges.keys(), edges).kept) == reach_cycle_set(edges)


def test_prune_result_independent_of_node_labelling() -> None:
    # relabel nodes randomly: the kept set must map back onto itself
    rng = np.random.default_rng(99)
    edges = {0: [1], 1: [2], 2: [0], 3: [1], 4: [], 5: [4, 3]}
    base = set(prune(edges.keys(), edges).kept)
    for _ in range(100):
        perm = rng.permutation(6)
        relabeled = {int(perm[i]): [int(perm[j]) for j in js] for i, js in edges.items()}
        kept = set(prune(relabeled.keys(), relabeled).kept)
        assert {int(perm[i]) for i in base} == kept


def test_prune_on_transition_map_matches_oracle() -> None:
    sys_ = make_builtin("halving1d", Q1)
    level = CoverLevel.full(Q1, 4)
    tmap = build_transition_discrete(level, sys_, M=1)
    edges = {int(k.flat(1)): [int(t.flat(1)) for t in v] for k, v in tmap.items()}
    want = reach_cycle_set(edges)
    res = prune(level.active, tmap)
    assert {int(k.flat(1)) for k in res.kept} == want
    # the vectorized CSR path and the generic worklist agree on everything,
    # including the number of removal generations
    res_generic = prune(edges.keys(), edges)
    assert {int(k.flat(1)) for k in res.kept} == set(res_generic.kept)
    assert {int(k.flat(1)) for k in res.removed} == set(res_generic.removed)
    assert res.rounds == res_generic.rounds


def test_run_global_halving_band() -> None:
    sys_ = make_builtin("halving1d", Q1)
    result, report = run_global(sys_, Q1, depth=6, M=1)
    level = kept_level(Q1, 6, result.kept)
    ref = reference_attractor_points(sys_, Q1, resolution=0.01, horizon=30)
    # the only surviving grid point is the one nearest 0
    assert np.max(np.abs(ref.points)) <= 0.01
    assert np.all(level.contains_points(ref.points))
    sd = region_semidistance(level.box_los, level.box_his, [0.0], [0.0])
    assert sd <= 8 * report.rho
    # both cells adjacent to 0 survive
    assert level.contains_points(np.array([[-1e-12], [1e-12]])).all()


def test_run_global_linmap_covers_segment() -> None:
    sys_ = make_builtin("linmap2d", Q2)
    result, _ = run_global(sys_, Q2, depth=6, M=1)
    level = kept_level(Q2, 6, result.kept)
    ys = np.linspace(-1, 1, 41)
    pts = np.stack([np.zeros_like(ys), ys], axis=1)
    assert np.all(level.contains_points(pts))


def test_run_global_depth0_all_builtins() -> None:
    # the one-cell graph keeps its single node for every built-in
    cases = [
        ("halving1d", Q1, None),
        ("linmap2d", Q2, None),
        ("henon", Box([-2, -2], [2, 2]), None),
        ("cubic1d", Box([-1.5], [1.5]), EulerParams(h=0.08)),
        ("saddle2d", Q2, EulerParams(h=0.2)),
    ]
    for name, Q, euler in cases:
        result, report = run_global(make_builtin(name, Q), Q, depth=0, M=1, euler=euler)
        assert report.boxes_in == 1 and len(result.kept) == 1


def test_run_global_budget() -> None:
    sys_ = make_builtin("linmap2d", Q2)
    with pytest.raises(BoxBudgetError):
        run_global(sys_, Q2, depth=8, M=1, box_budget=1000)


def test_subdivision_halving_band_and_containment() -> None:
    sys_ = make_builtin("halving1d", Q1)
    levels = run_subdivision(sys_, Q1, max_depth=8, M=1)
    assert len(levels) == 9
    for result, report in levels:
        level = kept_level(Q1, report.depth, result.kept)
        assert level.contains_points(np.zeros((1, 1))).all()
        if report.depth >= 4:
            sd = region_semidistance(level.box_los, level.box_his, [0.0], [0.0])
            assert sd <= 8 * report.rho


def test_subdivision_cubic_contains_attractor() -> None:
    Q = Box([-1.5], [1.5])
    sys_ = make_builtin("cubic1d", Q)
    sched = EulerSchedule(h0=0.08, alpha=0.5, substeps=1)
    levels = run_subdivision(sys_, Q, max_depth=6, euler=sched)
    xs = np.linspace(-1, 1, 201)[:, None]
    for result, report in levels:
        level = kept_level(Q, report.depth, result.kept)
        assert np.all(level.contains_points(xs))


def test_subdivision_max_depth0_equals_global() -> None:
    sys_ = make_builtin("halving1d", Q1)
    levels = run_subdivision(sys_, Q1, max_depth=0, M=1)
    g_result, _ = run_global(sys_, Q1, depth=0, M=1)
    assert levels[0][0].kept == g_result.kept


def test_monotone_refinement_union_shrinks() -> None:
    sys_ = make_builtin("halving1d", Q1)
    levels = run_subdivision(sys_, Q1, max_depth=6, M=1)
    for (res_a, rep_a), (res_b, rep_b) in zip(levels, levels[1:]):
        kept_parents = {k.path for k in res_a.kept}
        for k in res_b.kept:
            assert k.ancestor(rep_a.depth).path in kept_parents


def test_sandwich_kept_keys_subset_of_global() -> None:
    sys_ = make_builtin("halving1d", Q1)
    levels = run_subdivision(sys_, Q1, max_depth=5, M=1)
    for result, report in levels:
        g_result, _ = run_global(sys_, Q1, depth=report.depth, M=1)
        assert set(result.kept) <= set(g_result.kept)


def test_restart_from_coarse_output_preserves_attractor() -> None:
    # refine the depth-3 kept region without pruning down to depth 5, then
    # prune there: the reference cloud must still be covered
    sys_ = make_builtin("halving1d", Q1)
    levels = run_subdivision(sys_, Q1, max_depth=3, M=1)
    result3, _ = levels[-1]
    level = kept_level(Q1, 3, result3.kept)
    for _ in range(2):
        level = refine_cover(level, level.flats)
    tmap = build_transition_discrete(level, sys_, M=1)
    res = prune(level.active, tmap)
    kept = kept_level(Q1, 5, res.kept)
    ref = reference_attractor_points(sys_, Q1, resolution=0.01, horizon=30)
    assert np.all(kept.contains_points(ref.points))


def test_subdivision_budget_overflow_flushes_partial() -> None:
    sys_ = make_builtin("linmap2d", Q2)
    seen: list[int] = []
    with pytest.raises(BoxBudgetError):
        run_subdivision(
            sys_, Q2, max_depth=9, M=1, box_budget=200,
            on_level=lambda level, res, rep: seen.append(rep.depth),
        )
    assert seen == [0, 1, 2, 3, 4]  # depth 5 would need 96 * 4 > 200 cells


def test_subdivision_resume_matches_uninterrupted() -> None:
    sys_ = make_builtin("halving1d", Q1)
    full = run_subdivision(sys_, Q1, max_depth=7, M=1)
    mid_result, mid_report = full[4]
    kept_flats = np.array([k.flat(1) for k in mid_result.kept], dtype=np.int64)
    resumed = run_subdivision(sys_, Q1, max_depth=7, M=1, resume=(mid_report.depth, kept_flats))
    tail = full[5:]
    assert len(resumed) == len(tail)
    for (ra, _), (rb, _) in zip(tail, resumed):
        assert ra.kept == rb.kept and ra.removed == rb.removed


def test_deep_continuous_runs_eventually_prune() -> None:
    # at fine depths the enclosure radius drops below the boundary drift and
    # the outer cells start dying; this is the onset of upper convergence
    Q = Box([-1.5], [1.5])
    sys_ = make_builtin("cubic1d", Q)
    sched = EulerSchedule(h0=0.08, alpha=0.5, substeps=1)
    levels = run_subdivision(sys_, Q, max_depth=11, euler=sched)
    result, report = levels[-1]
    assert report.boxes_kept < report.boxes_in
    level = kept_level(Q, 11, result.kept)
    sd = region_semidistance(level.box_los, level.box_his, [-1.0], [1.0])
    assert sd < 0.5


def test_deep_saddle_prunes_boundary_rows() -> None:
    # same onset for the 2-d flow: rows with |y| above r_8/h_8 lose their
    # self-loops at depth 8 and the kept union pulls off the top boundary
    sys_ = make_builtin("saddle2d", Q2)
    sched = EulerSchedule(h0=0.2, alpha=0.5, substeps=1)
    levels = run_subdivision(sys_, Q2, max_depth=8, euler=sched)
    result, report = levels[-1]
    assert report.boxes_kept < report.boxes_in
    level = kept_level(Q2, 8, result.kept)
    sd = region_semidistance(level.box_los, level.box_his, [-1.0, 0.0], [1.0, 0.0])
    assert sd < 1.0
    xs = np.linspace(-1, 1, 40)
    assert np.all(level.contains_points(np.stack([xs, np.zeros_like(xs)], axis=1)))
