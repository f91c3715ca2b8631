"""Combinatorial core: pruning a multivalued index map to its greatest fixed
point, the fixed-depth global scheme, and the sparse subdivision loop.

Pruning keeps exactly the indices that have nonempty images under every
iterate of the map; it is realised as reverse-adjacency counter decrement
(every node tracks how many successors survive, nodes hitting zero join the
removal worklist) processed in batched generations, which makes the result
and the round count independent of worker scheduling.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

import numpy as np

from .geometry import Box, CoverLevel, refine_cover
from .integrator import EulerParams, EulerSchedule
from .systems import ContinuousSystemSpec, DiscreteSystemSpec
from .transition import (
    GapReport,
    TransitionMap,
    build_transition_continuous,
    build_transition_discrete,
    run_diagnostics,
    validity_margin,
)

DEFAULT_BOX_BUDGET = 1 << 22


class BoxBudgetError(RuntimeError):
    """A level would exceed the configured box budget."""

    def __init__(self, depth: int, needed: int, budget: int):
        super().__init__(f"depth {depth} needs {needed} boxes, budget is {budget}")
        self.depth = depth
        self.needed = needed
        self.budget = budget


@dataclass(frozen=True)
class PruneResult:
    """Greatest fixed point of a pruning pass.

    kept is the maximal subset S of the input indices with phi(i) & S
    nonempty for every i in S; removed is its complement; rounds counts the
    worklist generations that were processed.
    """

    kept: tuple
    removed: tuple
    rounds: int


@dataclass
class LevelReport:
    """Per-depth run record."""

    depth: int
    rho: float
    h: float
    r: float
    boxes_in: int
    boxes_kept: int
    edges: int
    map_ms: float = 0.0
    prune_ms: float = 0.0
    gaps: GapReport | None = None

    def to_json_dict(self) -> dict:
        # timings go to stderr, not into data artifacts, so stats files are
        # reproducible byte for byte
        out = {
            "depth": self.depth,
            "rho": self.rho,
            "h": self.h,
            "r": self.r,
            "boxes_in": self.boxes_in,
            "boxes_kept": self.boxes_kept,
            "edges": self.edges,
            "gaps": self.gaps.to_json_dict() if self.gaps is not None else None,
        }
        return out


def _prune_csr(n: int, indptr: np.ndarray, targets: np.ndarray) -> tuple[np.ndarray, int]:
    """Counter-decrement worklist on a CSR graph; returns (alive mask, rounds)."""
    counts = np.diff(indptr).astype(np.int64)
    if targets.size:
        order = np.argsort(targets, kind="stable")
        rev_sources = np.repeat(np.arange(n, dtype=np.int64), counts)[order]
        rev_counts = np.bincount(targets, minlength=n)
        rev_indptr = np.concatenate([[0], np.cumsum(rev_counts)])
    else:
        rev_sources = np.empty(0, dtype=np.int64)
        rev_indptr = np.zeros(n + 1, dtype=np.int64)
    alive = np.ones(n, dtype=bool)
    frontier = np.flatnonzero(counts == 0)
    rounds = 0
    while frontier.size:
        rounds += 1
        alive[frontier] = False
        starts = rev_indptr[frontier]
        lengths = rev_indptr[frontier + 1] - starts
        total = int(lengths.sum())
        if total:
            base = np.repeat(starts, lengths)
            offsets = np.arange(total) - np.repeat(np.cumsum(lengths) - lengths, lengths)
            preds = rev_sources[base + offsets]
            counts -= np.bincount(preds, minlength=n)
        frontier = np.flatnonzero(alive & (counts <= 0))
    return alive, rounds


def _prune_generic(indices: Iterable, succ: Mapping) -> tuple[list, list, int]:
    nodes = sorted(set(indices))
    nodeset = set(nodes)
    counts: dict = {}
    preds: dict = {i: [] for i in nodes}
    for i in nodes:
        outs = {j for j in succ.get(i, ()) if j in nodeset}
        counts[i] = len(outs)
        for j in outs:
            preds[j].append(i)
    alive = set(nodes)
    frontier = [i for i in nodes if counts[i] == 0]
    rounds = 0
    while frontier:
        rounds += 1
        nxt = []
        for i in frontier:
            alive.discard(i)
        for i in frontier:
            for p in preds[i]:
                counts[p] -= 1
                if counts[p] == 0 and p in alive:
                    nxt.append(p)
        frontier = sorted(set(nxt))
    kept = sorted(alive)
    removed = sorted(nodeset - alive)
    return kept, removed, rounds


def prune(indices, transition) -> PruneResult:
    """Remove every index whose image chain dies out; keep the rest.

    `transition` is either a TransitionMap or a plain mapping from node to an
    iterable of successors. Edges leaving `indices` are dropped (restriction
    semantics), and indices missing from the mapping count as having no
    successors.
    """
    if isinstance(transition, TransitionMap):
        level = transition.level
        index_list = list(indices)
        flats = np.array([k.flat(level.dim) for k in index_list], dtype=np.int64)
        if flats.size == level.size and np.array_equal(np.sort(flats), level.flats):
            alive, rounds = _prune_csr(level.size, transition.indptr, transition.targets)
            kept = tuple(level.key_of_flat(f) for f in level.flats[alive])
            removed = tuple(level.key_of_flat(f) for f in level.flats[~alive])
            return PruneResult(kept=kept, removed=removed, rounds=rounds)
        mapping = {k: transition.targets_of(k) for k in index_list}
        kept, removed, rounds = _prune_generic(index_list, mapping)
        return PruneResult(kept=tuple(kept), removed=tuple(removed), rounds=rounds)
    kept, removed, rounds = _prune_generic(indices, transition)
    return PruneResult(kept=tuple(kept), removed=tuple(removed), rounds=rounds)


def _prune_level(level: CoverLevel, tmap: TransitionMap) -> tuple[PruneResult, np.ndarray]:
    alive, rounds = _prune_csr(level.size, tmap.indptr, tmap.targets)
    kept_flats = level.flats[alive]
    kept = tuple(level.key_of_flat(f) for f in kept_flats)
    removed = tuple(level.key_of_flat(f) for f in level.flats[~alive])
    return PruneResult(kept=kept, removed=removed, rounds=rounds), kept_flats


def _build_level_map(
    level: CoverLevel,
    sys: DiscreteSystemSpec | ContinuousSystemSpec,
    M: int,
    euler: EulerParams | None,
    threads: int,
) -> TransitionMap:
    if isinstance(sys, ContinuousSystemSpec):
        return build_transition_continuous(level, sys, M=M, params=euler, threads=threads)
    return build_transition_discrete(level, sys, M=M, threads=threads)


def _report_for(level: CoverLevel, tmap: TransitionMap, result: PruneResult) -> LevelReport:
    return LevelReport(
        depth=level.depth,
        rho=level.rho,
        h=tmap.meta.h,
        r=tmap.meta.radius if tmap.meta.kind == "continuous" else 0.0,
        boxes_in=level.size,
        boxes_kept=len(result.kept),
        edges=tmap.edge_count,
    )


def run_global(
    sys: DiscreteSystemSpec | ContinuousSystemSpec,
    Q: Box,
    depth: int,
    M: int = 1,
    euler: EulerParams | None = None,
    threads: int = 1,
    box_budget: int = DEFAULT_BOX_BUDGET,
    diagnostics: bool = False,
    samples: int = 100,
    seed: int = 0,
) -> tuple[PruneResult, LevelReport]:
    """Fixed-depth scheme: build the full 2^{nd}-cell cover, map, and prune."""
    needed = 1 << (depth * Q.dim)
    if needed > box_budget:
        raise BoxBudgetError(depth=depth, needed=needed, budget=box_budget)
    level = CoverLevel.full(Q, depth)
    t0 = time.perf_counter()
    tmap = _build_level_map(level, sys, M, euler, threads)
    t1 = time.perf_counter()
    result, _ = _prune_level(level, tmap)
    t2 = time.perf_counter()
    report = _report_for(level, tmap, result)
    report.map_ms = (t1 - t0) * 1e3
    report.prune_ms = (t2 - t1) * 1e3
    if diagnostics:
        report.gaps = run_diagnostics(tmap, sys, samples=samples, seed=seed)
    return result, report


def run_subdivision(
    sys: DiscreteSystemSpec | ContinuousSystemSpec,
    Q: Box,
    max_depth: int,
    M: int = 1,
    euler: EulerSchedule | None = None,
    diagnostics: bool = False,
    samples: int = 100,
    seed: int = 0,
    threads: int = 1,
    box_budget: int = DEFAULT_BOX_BUDGET,
    resume: tuple[int, np.ndarray] | None = None,
    on_level: Callable[[CoverLevel, PruneResult, LevelReport], None] | None = None,
) -> list[tuple[PruneResult, LevelReport]]:
    """Subdivision loop: map, prune, and refine the kept cells per depth.

    Starts from the root cover (or from a `resume` pair of depth and kept
    flat indices), emits one (PruneResult, LevelReport) per completed level,
    and stops at max_depth, on an exhausted level, or with BoxBudgetError
    when the next level would exceed the budget. A KeyboardInterrupt
    propagates after the current level's callback has fired, so streamed
    artifacts stay complete per level.
    """
    continuous = isinstance(sys, ContinuousSystemSpec)
    if continuous:
        if euler is None:
            raise ValueError("continuous systems need an EulerSchedule")
        margin = validity_margin(sys, Q)
        if sys.bound_P * euler.h0 > margin:
            raise ValueError(
                f"margin check failed: P*h0 = {sys.bound_P * euler.h0:.6g} exceeds "
                f"the validity margin {margin:.6g}"
            )
    if resume is None:
        level = CoverLevel.full(Q, 0)
        start = 0
    else:
        depth0, kept_flats = resume
        prev = CoverLevel(Q, depth0, np.asarray(kept_flats, dtype=np.int64))
        level = refine_cover(prev, prev.flats)
        start = depth0 + 1

    out: list[tuple[PruneResult, LevelReport]] = []
    for n in range(start, max_depth + 1):
        if level.size > box_budget:
            raise BoxBudgetError(depth=n, needed=level.size, budget=box_budget)
        params = euler.params_at(n) if continuous else None
        t0 = time.perf_counter()
        tmap = _build_level_map(level, sys, M, params, threads)
        t1 = time.perf_counter()
        result, kept_flats = _prune_level(level, tmap)
        t2 = time.perf_counter()
        report = _report_for(level, tmap, result)
        report.map_ms = (t1 - t0) * 1e3
        report.prune_ms = (t2 - t1) * 1e3
        if diagnostics:
            report.gaps = run_diagnostics(tmap, sys, samples=samples, seed=seed)
        out.append((result, report))
        if on_level is not None:
            on_level(level, result, report)
        if not result.kept:
            break  # attractor region empty at this depth
        if n < max_depth:
            level = refine_cover(level, kept_flats)
    return out
