"""Axis-aligned boxes, dyadic subdivision covers, and metric primitives.

All distances are infinity-norm distances and every box is closed, so a
ball-box intersection test is exact and branch-free: dist(p, b) <= r holds
iff the ball of radius r around p meets b.

Cell bounds at depth n are produced by repeated midpoint splitting, never by
`lo + i * width` arithmetic; this keeps a key's box bitwise identical no
matter whether it is reached through recursion, through a cached boundary
array, or through a spatial query.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

MAX_FULL_GRID = 1 << 24  # hard cap on materialised full-grid covers and lookup grids


def _as_vector(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise ValueError(f"expected a d-vector, got array of shape {v.shape}")
    return v


@dataclass(frozen=True, eq=False)
class Box:
    """Nonempty, nondegenerate closed box given by its lower and upper corner."""

    lo: np.ndarray
    hi: np.ndarray

    def __init__(self, lo, hi):
        lo = _as_vector(lo).copy()
        hi = _as_vector(hi).copy()
        if lo.shape != hi.shape:
            raise ValueError("lo and hi must have the same dimension")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box corners must be finite")
        if not np.all(lo < hi):
            raise ValueError("box must satisfy lo < hi on every axis")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def diameter(self) -> float:
        """Infinity-norm diameter, i.e. the longest side."""
        return float(np.max(self.hi - self.lo))

    @property
    def center(self) -> np.ndarray:
        return (self.lo + self.hi) / 2.0

    def contains_point(self, p) -> bool:
        p = _as_vector(p)
        return bool(np.all(self.lo <= p) and np.all(p <= self.hi))

    def contains_box(self, other: "Box") -> bool:
        return bool(np.all(self.lo <= other.lo) and np.all(other.hi <= self.hi))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Box):
            return NotImplemented
        return np.array_equal(self.lo, other.lo) and np.array_equal(self.hi, other.hi)

    def __repr__(self) -> str:
        return f"Box({self.lo.tolist()}, {self.hi.tolist()})"

    def to_json(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_json(cls, obj: dict) -> "Box":
        return cls(obj["lo"], obj["hi"])


def subdivide_box(b: Box) -> list[Box]:
    """Split a box into its 2^d commensurate children.

    The child with selector s takes the lower half on axis k iff bit k of s
    is zero, so selectors enumerate children in canonical order.
    """
    mid = (b.lo + b.hi) / 2.0
    out = []
    for s in range(1 << b.dim):
        bits = np.array([(s >> k) & 1 for k in range(b.dim)], dtype=bool)
        out.append(Box(np.where(bits, mid, b.lo), np.where(bits, b.hi, mid)))
    return out


@dataclass(frozen=True)
class SampleGrid:
    """Centers of the M^d commensurate subboxes of a box.

    `subdiameter` is the subbox diameter; every point of the parent box is
    within subdiameter (conservatively) of some listed center.
    """

    centers: np.ndarray  # (M^d, d)
    subdiameter: float


def sample_centers(b: Box, M: int) -> SampleGrid:
    """Decompose a box into M^d subboxes and return their centers."""
    if M < 1:
        raise ValueError("M must be a positive integer")
    d = b.dim
    w = (b.hi - b.lo) / M
    axes = [b.lo[k] + (np.arange(M) + 0.5) * w[k] for k in range(d)]
    count = M**d
    centers = np.empty((count, d))
    for k in range(d):
        idx = (np.arange(count) // M**k) % M  # axis 0 varies fastest
        centers[:, k] = axes[k][idx]
    return SampleGrid(centers=centers, subdiameter=b.diameter / M)


def point_box_distance(p, b: Box) -> float:
    """Infinity-norm distance from a point to a closed box (0 iff p in b)."""
    p = _as_vector(p)
    gap = np.maximum(b.lo - p, p - b.hi)
    return float(max(np.max(gap), 0.0))


def box_corners(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """All 2^d corners of boxes given as (..., d) corner arrays."""
    d = lo.shape[-1]
    bits = ((np.arange(1 << d)[:, None] >> np.arange(d)) & 1).astype(bool)
    return np.where(bits, hi[..., None, :], lo[..., None, :])


def dyadic_boundaries(lo: float, hi: float, depth: int) -> np.ndarray:
    """All 2^depth + 1 cell boundaries of one axis, by midpoint insertion."""
    b = np.array([lo, hi], dtype=np.float64)
    for _ in range(depth):
        nb = np.empty(2 * b.size - 1)
        nb[0::2] = b
        nb[1::2] = (b[:-1] + b[1:]) / 2.0
        b = nb
    return b


def flats_to_coords(flats, depth: int, dim: int) -> np.ndarray:
    """Per-axis cell coordinates for flat indices at the given depth."""
    flats = np.asarray(flats, dtype=np.int64)
    coords = np.zeros(flats.shape + (dim,), dtype=np.int64)
    for m in range(depth):
        digit = (flats >> (dim * (depth - 1 - m))) & ((1 << dim) - 1)
        for k in range(dim):
            coords[..., k] |= ((digit >> k) & 1) << (depth - 1 - m)
    return coords


def coords_to_flats(coords, depth: int, dim: int) -> np.ndarray:
    """Inverse of :func:`flats_to_coords`."""
    coords = np.asarray(coords, dtype=np.int64)
    flats = np.zeros(coords.shape[:-1], dtype=np.int64)
    for m in range(depth):
        digit = np.zeros_like(flats)
        for k in range(dim):
            digit |= ((coords[..., k] >> (depth - 1 - m)) & 1) << k
        flats = (flats << dim) | digit
    return flats


@dataclass(frozen=True, order=True)
class BoxKey:
    """Canonical name of one dyadic cell: depth plus the child-selector path.

    Prefixes of the path name ancestors; the flat index in {0, ..., 2^{nd}-1}
    is the base-2^d number whose digits are the path entries.
    """

    depth: int
    path: tuple[int, ...]

    def __post_init__(self):
        if self.depth < 0 or len(self.path) != self.depth:
            raise ValueError("path length must equal depth")

    def flat(self, dim: int) -> int:
        f = 0
        for s in self.path:
            if not 0 <= s < (1 << dim):
                raise ValueError(f"selector {s} out of range for dimension {dim}")
            f = (f << dim) | s
        return f

    @classmethod
    def from_flat(cls, flat: int, depth: int, dim: int) -> "BoxKey":
        flat = int(flat)
        if flat < 0 or flat >= (1 << (dim * depth)):
            raise ValueError("flat index out of range")
        mask = (1 << dim) - 1
        path = tuple((flat >> (dim * (depth - 1 - m))) & mask for m in range(depth))
        return cls(depth=depth, path=path)

    def ancestor(self, depth: int) -> "BoxKey":
        if not 0 <= depth <= self.depth:
            raise ValueError("ancestor depth out of range")
        return BoxKey(depth=depth, path=self.path[:depth])

    def children(self, dim: int) -> list["BoxKey"]:
        return [BoxKey(self.depth + 1, self.path + (s,)) for s in range(1 << dim)]

    def box(self, root: Box) -> Box:
        lo = root.lo.copy()
        hi = root.hi.copy()
        for s in self.path:
            mid = (lo + hi) / 2.0
            for k in range(root.dim):
                if (s >> k) & 1:
                    lo[k] = mid[k]
                else:
                    hi[k] = mid[k]
        return Box(lo, hi)

    def to_json(self) -> dict:
        return {"depth": self.depth, "path": list(self.path)}

    @classmethod
    def from_json(cls, obj: dict) -> "BoxKey":
        return cls(depth=obj["depth"], path=tuple(obj["path"]))


class CoverLevel:
    """The active dyadic cells of one subdivision depth over a root box.

    Active cells are stored as a sorted array of flat indices; BoxKey views
    are materialised on demand. Instances are immutable after construction
    and safe to share between workers.
    """

    def __init__(self, root: Box, depth: int, flats):
        flats = np.unique(np.asarray(flats, dtype=np.int64))
        if depth < 0:
            raise ValueError("depth must be nonnegative")
        if depth * root.dim > 62:
            raise ValueError("depth too large for 64-bit flat indices")
        if flats.size and (flats[0] < 0 or flats[-1] >= (1 << (depth * root.dim))):
            raise ValueError("flat index out of range for depth")
        self.root = root
        self.depth = depth
        self._flats = flats
        self._flats.setflags(write=False)

    @classmethod
    def full(cls, root: Box, depth: int) -> "CoverLevel":
        count = 1 << (depth * root.dim)
        if count > MAX_FULL_GRID:
            raise ValueError(f"full cover at depth {depth} exceeds {MAX_FULL_GRID} cells")
        return cls(root, depth, np.arange(count, dtype=np.int64))

    @classmethod
    def from_keys(cls, root: Box, keys: Iterable[BoxKey]) -> "CoverLevel":
        keys = list(keys)
        if not keys:
            raise ValueError("from_keys needs at least one key; use CoverLevel(root, depth, []) instead")
        depth = keys[0].depth
        if any(k.depth != depth for k in keys):
            raise ValueError("all keys of a cover level must share one depth")
        return cls(root, depth, [k.flat(root.dim) for k in keys])

    # -- basic views ---------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.root.dim

    @property
    def size(self) -> int:
        return int(self._flats.size)

    @property
    def flats(self) -> np.ndarray:
        return self._flats

    @property
    def cells_per_axis(self) -> int:
        return 1 << self.depth

    @property
    def rho(self) -> float:
        """Common diameter bound of the level's cells."""
        return self.root.diameter * 2.0**-self.depth

    @cached_property
    def active(self) -> tuple[BoxKey, ...]:
        d = self.dim
        return tuple(BoxKey.from_flat(f, self.depth, d) for f in self._flats)

    @cached_property
    def boundaries(self) -> list[np.ndarray]:
        return [dyadic_boundaries(self.root.lo[k], self.root.hi[k], self.depth) for k in range(self.dim)]

    @cached_property
    def coords(self) -> np.ndarray:
        return flats_to_coords(self._flats, self.depth, self.dim)

    @cached_property
    def box_los(self) -> np.ndarray:
        return np.stack([self.boundaries[k][self.coords[:, k]] for k in range(self.dim)], axis=1)

    @cached_property
    def box_his(self) -> np.ndarray:
        return np.stack([self.boundaries[k][self.coords[:, k] + 1] for k in range(self.dim)], axis=1)

    @cached_property
    def _dense(self) -> tuple[np.ndarray, np.ndarray] | None:
        """Full-grid active mask and local-id arrays, when small enough."""
        cells = 1 << (self.depth * self.dim)
        if cells > MAX_FULL_GRID:
            return None
        shape = (self.cells_per_axis,) * self.dim
        coords = tuple(self.coords[:, k] for k in range(self.dim))
        mask = np.zeros(shape, dtype=bool)
        mask[coords] = True
        local = np.full(shape, -1, dtype=np.int32)  # grid cap fits int32
        local[coords] = np.arange(self.size, dtype=np.int32)
        return mask, local

    def box_of_flat(self, flat: int) -> Box:
        c = flats_to_coords(np.array([flat]), self.depth, self.dim)[0]
        lo = np.array([self.boundaries[k][c[k]] for k in range(self.dim)])
        hi = np.array([self.boundaries[k][c[k] + 1] for k in range(self.dim)])
        return Box(lo, hi)

    def key_of_flat(self, flat: int) -> BoxKey:
        return BoxKey.from_flat(int(flat), self.depth, self.dim)

    def locate(self, flats) -> np.ndarray:
        """Local positions of flat indices, -1 where not active."""
        flats = np.asarray(flats, dtype=np.int64)
        if self.size == 0:
            return np.full(flats.shape, -1, dtype=np.int64)
        pos = np.searchsorted(self._flats, flats)
        pos_c = np.minimum(pos, self.size - 1)
        ok = self._flats[pos_c] == flats
        return np.where(ok, pos_c, -1)

    # -- spatial queries -----------------------------------------------------

    def _axis_window(self, k: int, lo: float, hi: float) -> tuple[int, int]:
        """Conservative cell-index window intersecting [lo, hi] on axis k."""
        B = self.boundaries[k]
        c0 = int(np.searchsorted(B, lo, side="left")) - 2
        c1 = int(np.searchsorted(B, hi, side="right"))
        return max(c0, 0), min(c1, self.cells_per_axis - 1)

    def cells_near_point(self, p, r: float) -> np.ndarray:
        """Flat indices of ALL grid cells within distance r of p, sorted.

        Exactness contract: a cell is reported iff
        point_box_distance(p, cell) <= r with the cell's canonical bounds.
        """
        p = _as_vector(p)
        gaps = []
        windows = []
        for k in range(self.dim):
            c0, c1 = self._axis_window(k, p[k] - r, p[k] + r)
            if c0 > c1:
                return np.empty(0, dtype=np.int64)
            idx = np.arange(c0, c1 + 1)
            B = self.boundaries[k]
            gap = np.maximum(np.maximum(B[idx] - p[k], p[k] - B[idx + 1]), 0.0)
            windows.append(idx)
            gaps.append(gap <= r)
        mask = gaps[0]
        for g in gaps[1:]:
            mask = np.logical_and.outer(mask, g)
        if not mask.any():
            return np.empty(0, dtype=np.int64)
        picked = np.nonzero(mask)
        coords = np.stack([windows[k][picked[k]] for k in range(self.dim)], axis=-1)
        return np.sort(coords_to_flats(coords, self.depth, self.dim))

    def active_near_point(self, p, r: float) -> np.ndarray:
        """Local indices of active cells within distance r of p, sorted."""
        cand = self.cells_near_point(p, r)
        if cand.size == 0:
            return cand
        loc = self.locate(cand)
        return loc[loc >= 0]

    def contains_points(self, points) -> np.ndarray:
        """Membership of points in the union of active (closed) cells."""
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[None, :]
        n = pts.shape[0]
        out = np.zeros(n, dtype=bool)
        if self.size == 0:
            return out
        inside = np.ones(n, dtype=bool)
        coords = np.empty((n, self.dim), dtype=np.int64)
        on_edge = np.zeros(n, dtype=bool)
        for k in range(self.dim):
            B = self.boundaries[k]
            x = pts[:, k]
            inside &= (x >= B[0]) & (x <= B[-1])
            c = np.searchsorted(B, x, side="right") - 1
            c = np.clip(c, 0, self.cells_per_axis - 1)
            coords[:, k] = c
            on_edge |= x == B[c]
        flats = coords_to_flats(coords, self.depth, self.dim)
        out[inside] = self.locate(flats[inside]) >= 0
        # points on a cell face may belong to a neighbouring active cell
        recheck = inside & on_edge & ~out
        for i in np.nonzero(recheck)[0]:
            out[i] = self.active_near_point(pts[i], 0.0).size > 0
        return out


def refine_cover(level: CoverLevel, retained) -> CoverLevel:
    """Replace each retained cell by its 2^d children, one depth down."""
    if isinstance(retained, np.ndarray) and retained.dtype.kind == "i":
        flats = np.asarray(retained, dtype=np.int64)
    else:
        keys = list(retained)
        for k in keys:
            if k.depth != level.depth:
                raise ValueError("retained keys must live on the given level")
        flats = np.array([k.flat(level.dim) for k in keys], dtype=np.int64)
    flats = np.unique(flats)
    if flats.size:
        loc = level.locate(flats)
        if np.any(loc < 0):
            bad = flats[loc < 0][0]
            raise ValueError(f"retained cell {int(bad)} is not active on this level")
    d = level.dim
    children = ((flats[:, None] << d) | np.arange(1 << d, dtype=np.int64)[None, :]).ravel()
    return CoverLevel(level.root, level.depth + 1, children)


def grid_points(lo: np.ndarray, hi: np.ndarray, per_axis: int) -> np.ndarray:
    """Uniform grid over a box, endpoints included for per_axis >= 2."""
    d = lo.size
    if per_axis == 1:
        return ((lo + hi) / 2.0)[None, :]
    axes = [np.linspace(lo[k], hi[k], per_axis) for k in range(d)]
    pts = np.array(list(itertools.product(*axes)))
    return pts.reshape(-1, d)


def semidistance_estimate(
    source: Sequence[Box], target: Sequence[Box], samples_per_axis: int = 8
) -> tuple[float, float]:
    """Sampled lower bound and certified upper bound on dist(source, target).

    The lower bound maximises the distance-to-target over grid samples of the
    source boxes; since that distance function is 1-Lipschitz, adding the
    sample spacing yields a certified upper bound.
    """
    source = list(source)
    target = list(target)
    if not source or not target:
        raise ValueError("source and target must be nonempty")
    if samples_per_axis < 1:
        raise ValueError("samples_per_axis must be >= 1")
    tlo = np.stack([b.lo for b in target])
    thi = np.stack([b.hi for b in target])
    lower = 0.0
    spacing = 0.0
    for b in source:
        pts = grid_points(b.lo, b.hi, samples_per_axis)
        gap = np.maximum(tlo[None, :, :] - pts[:, None, :], pts[:, None, :] - thi[None, :, :])
        dist = np.min(np.max(np.maximum(gap, 0.0), axis=2), axis=1)
        lower = max(lower, float(np.max(dist)))
        if samples_per_axis >= 2:
            spacing = max(spacing, b.diameter / (samples_per_axis - 1))
        else:
            spacing = max(spacing, b.diameter)
    return lower, lower + spacing


def region_semidistance(los: np.ndarray, his: np.ndarray, region_lo, region_hi) -> float:
    """Exact sup-distance from a union of boxes to an axis-aligned region.

    The region may be degenerate (region_lo == region_hi on some axis), which
    covers point and segment targets. Exact because the per-axis gap of a
    product set separates: the supremum is attained at per-axis extremes.
    """
    if los.size == 0:
        return 0.0
    rlo = _as_vector(region_lo)
    rhi = _as_vector(region_hi)
    gap = np.maximum(rlo[None, :] - los, his - rhi[None, :])
    return float(max(np.max(gap), 0.0))
