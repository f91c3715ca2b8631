"""Dynamical systems under study.

Discrete homeomorphisms are described through their inverse map together
with an infinity-norm Lipschitz constant; ODE right-hand sides carry a field
bound P and a Lipschitz constant L, both valid on a declared validity
region. Built-in systems ship analytically derived constants, so enclosure
radii downstream are honest rather than estimated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import Box


class EvaluationError(RuntimeError):
    """A system evaluator produced a non-finite value; the run must abort."""


@dataclass(frozen=True)
class DiscreteSystemSpec:
    """A homeomorphism given by its inverse map.

    lipschitz_L bounds ||f^{-1}(x) - f^{-1}(z)|| / ||x - z|| for arguments in
    validity_region. forward_eval is optional and used only by oracles and
    round-trip checks. Evaluators flagged `vectorized` must broadcast over
    leading axes of (..., d) arrays.
    """

    inverse_eval: Callable[[np.ndarray], np.ndarray]
    lipschitz_L: float
    validity_region: Box
    forward_eval: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "custom"
    vectorized: bool = False

    @property
    def dim(self) -> int:
        return self.validity_region.dim


@dataclass(frozen=True)
class ContinuousSystemSpec:
    """An autonomous vector field with certified bounds.

    ||g|| <= bound_P and g is lipschitz_L-Lipschitz on validity_region.
    Built-in fields clamp their argument to the validity region, which
    preserves both constants globally.
    """

    field_eval: Callable[[np.ndarray], np.ndarray]
    bound_P: float
    lipschitz_L: float
    validity_region: Box
    name: str = "custom"
    vectorized: bool = False

    @property
    def dim(self) -> int:
        return self.validity_region.dim


SystemSpec = DiscreteSystemSpec | ContinuousSystemSpec

BUILTIN_NAMES = ("linmap2d", "henon", "halving1d", "cubic1d", "saddle2d")


def _check_finite(y: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(y)):
        raise EvaluationError(f"{what} produced a non-finite value")
    return y


def eval_inverse(sys: DiscreteSystemSpec, x) -> np.ndarray:
    """Evaluate f^{-1} at a point (or a batch of points)."""
    y = np.asarray(sys.inverse_eval(np.asarray(x, dtype=np.float64)), dtype=np.float64)
    return _check_finite(y, f"inverse map of {sys.name}")


def eval_field(sys: ContinuousSystemSpec, x) -> np.ndarray:
    """Evaluate the right-hand side g at a point (or a batch of points)."""
    y = np.asarray(sys.field_eval(np.asarray(x, dtype=np.float64)), dtype=np.float64)
    return _check_finite(y, f"field of {sys.name}")


def eval_inverse_batch(sys: DiscreteSystemSpec, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    if sys.vectorized or pts.ndim == 1:
        return eval_inverse(sys, pts)
    flat = pts.reshape(-1, pts.shape[-1])
    return np.stack([eval_inverse(sys, p) for p in flat]).reshape(pts.shape)


def eval_field_batch(sys: ContinuousSystemSpec, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64)
    if sys.vectorized or pts.ndim == 1:
        return eval_field(sys, pts)
    flat = pts.reshape(-1, pts.shape[-1])
    return np.stack([eval_field(sys, p) for p in flat]).reshape(pts.shape)


# -- built-in systems ---------------------------------------------------------


def _clamped(field, region: Box):
    lo, hi = region.lo, region.hi

    def g(p):
        return field(np.clip(p, lo, hi))

    return g


def _require_dim(Q: Box, d: int, name: str) -> None:
    if Q.dim != d:
        raise ValueError(f"{name} is {d}-dimensional, got a {Q.dim}-dimensional box")


def _require_inside(Q: Box, region: Box, name: str) -> None:
    if not region.contains_box(Q):
        raise ValueError(f"{name}: Q must lie inside the validity region {region!r}")


def _make_halving1d(Q: Box, **_) -> DiscreteSystemSpec:
    # f(x) = x/2, f^{-1}(x) = 2x; L = 2 everywhere.
    return DiscreteSystemSpec(
        inverse_eval=lambda p: 2.0 * np.asarray(p, dtype=np.float64),
        lipschitz_L=2.0,
        validity_region=Q,
        forward_eval=lambda p: np.asarray(p, dtype=np.float64) / 2.0,
        name="halving1d",
        vectorized=True,
    )


def _make_linmap2d(Q: Box, **_) -> DiscreteSystemSpec:
    # f(x, y) = (x/2, 2y), f^{-1}(x, y) = (2x, y/2); L = 2 everywhere.
    def inv(p):
        p = np.asarray(p, dtype=np.float64)
        return np.stack([2.0 * p[..., 0], p[..., 1] / 2.0], axis=-1)

    def fwd(p):
        p = np.asarray(p, dtype=np.float64)
        return np.stack([p[..., 0] / 2.0, 2.0 * p[..., 1]], axis=-1)

    _require_dim(Q, 2, "linmap2d")
    return DiscreteSystemSpec(
        inverse_eval=inv, lipschitz_L=2.0, validity_region=Q,
        forward_eval=fwd, name="linmap2d", vectorized=True,
    )


def _make_henon(Q: Box, a: float = 1.4, b: float = 0.3, **_) -> DiscreteSystemSpec:
    # f(x, y) = (1 - a x^2 + y, b x); f^{-1}(x, y) = (y/b, x - 1 + a (y/b)^2).
    # On |y| <= ymax the Jacobian row sums of f^{-1} give
    # L = max(1/b, 1 + 2 a ymax / b^2).
    _require_dim(Q, 2, "henon")
    region = Box([-2.0, -2.0], [2.0, 2.0])
    _require_inside(Q, region, "henon")
    ymax = float(max(abs(region.lo[1]), abs(region.hi[1])))
    L = max(1.0 / b, 1.0 + 2.0 * a * ymax / (b * b))

    def inv(p):
        p = np.asarray(p, dtype=np.float64)
        x = p[..., 1] / b
        return np.stack([x, p[..., 0] - 1.0 + a * x * x], axis=-1)

    def fwd(p):
        p = np.asarray(p, dtype=np.float64)
        x, y = p[..., 0], p[..., 1]
        return np.stack([1.0 - a * x * x + y, b * x], axis=-1)

    return DiscreteSystemSpec(
        inverse_eval=inv, lipschitz_L=L, validity_region=region,
        forward_eval=fwd, name="henon", vectorized=True,
    )


def _make_cubic1d(Q: Box, **_) -> ContinuousSystemSpec:
    # g(x) = x - x^3 on [-2, 2]: sup|g| = 6 at the endpoints,
    # sup|g'| = |1 - 3x^2| = 11 at the endpoints.
    _require_dim(Q, 1, "cubic1d")
    region = Box([-2.0], [2.0])
    _require_inside(Q, region, "cubic1d")

    def field(p):
        p = np.asarray(p, dtype=np.float64)
        return p - p**3

    return ContinuousSystemSpec(
        field_eval=_clamped(field, region), bound_P=6.0, lipschitz_L=11.0,
        validity_region=region, name="cubic1d", vectorized=True,
    )


def _make_saddle2d(Q: Box, **_) -> ContinuousSystemSpec:
    # g(x, y) = (x, -y) on [-2, 2]^2: P = 2, L = 1.
    _require_dim(Q, 2, "saddle2d")
    region = Box([-2.0, -2.0], [2.0, 2.0])
    _require_inside(Q, region, "saddle2d")

    def field(p):
        p = np.asarray(p, dtype=np.float64)
        return np.stack([p[..., 0], -p[..., 1]], axis=-1)

    return ContinuousSystemSpec(
        field_eval=_clamped(field, region), bound_P=2.0, lipschitz_L=1.0,
        validity_region=region, name="saddle2d", vectorized=True,
    )


_FACTORIES = {
    "halving1d": _make_halving1d,
    "linmap2d": _make_linmap2d,
    "henon": _make_henon,
    "cubic1d": _make_cubic1d,
    "saddle2d": _make_saddle2d,
}


def make_builtin(name: str, Q: Box, **params) -> SystemSpec:
    """Instantiate a built-in system for the study region Q.

    Raises ValueError when Q exceeds the built-in's validity region or has
    the wrong dimension.
    """
    try:
        factory = _FACTORIES[name]
    except KeyError:
        raise ValueError(f"unknown system {name!r}; choose from {BUILTIN_NAMES}") from None
    return factory(Q, **params)


# -- spot checks for user-supplied constants ----------------------------------


def spot_check_discrete(sys: DiscreteSystemSpec, pairs: int = 10_000, seed: int = 0) -> float:
    """Largest observed ||f^{-1}(x)-f^{-1}(z)|| / ||x-z|| on random pairs."""
    rng = np.random.default_rng(seed)
    V = sys.validity_region
    x = V.lo + rng.random((pairs, V.dim)) * (V.hi - V.lo)
    z = V.lo + rng.random((pairs, V.dim)) * (V.hi - V.lo)
    num = np.max(np.abs(eval_inverse_batch(sys, x) - eval_inverse_batch(sys, z)), axis=1)
    den = np.max(np.abs(x - z), axis=1)
    ok = den > 0
    return float(np.max(num[ok] / den[ok]))


def spot_check_continuous(sys: ContinuousSystemSpec, pairs: int = 10_000, seed: int = 0) -> tuple[float, float]:
    """Largest observed field norm and Lipschitz ratio on random pairs."""
    rng = np.random.default_rng(seed)
    V = sys.validity_region
    x = V.lo + rng.random((pairs, V.dim)) * (V.hi - V.lo)
    z = V.lo + rng.random((pairs, V.dim)) * (V.hi - V.lo)
    gx = eval_field_batch(sys, x)
    gz = eval_field_batch(sys, z)
    bound = float(np.max(np.abs(gx)))
    num = np.max(np.abs(gx - gz), axis=1)
    den = np.max(np.abs(x - z), axis=1)
    ok = den > 0
    return bound, float(np.max(num[ok] / den[ok]))
