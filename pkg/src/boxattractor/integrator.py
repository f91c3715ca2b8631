"""Backward-time Euler scheme, its rigorous enclosure radius, and a
high-accuracy reference integrator used only by diagnostics and oracles.

The enclosure radius inflates a single Euler image of a sample center so it
is guaranteed to cover the exact backward-flow image of the whole sampled
subbox:

    r = e^{L h} * subdiameter + (1 / 2N) * P * h * (e^{L h} - 1)
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .systems import ContinuousSystemSpec, EvaluationError, eval_field_batch


@dataclass(frozen=True)
class EulerParams:
    """One macro step of length h realised as N explicit Euler substeps."""

    h: float
    substeps: int = 1

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("step size h must be positive")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    @property
    def theta(self) -> float:
        return self.h / self.substeps


@dataclass(frozen=True)
class EulerSchedule:
    """Per-depth step sizes h_n = h0 * 2^(-alpha * n).

    Any alpha in (0, 1) sends both h_n and rho_n / h_n to zero along the
    dyadic cover sequence.
    """

    h0: float
    alpha: float = 0.5
    substeps: int = 1

    def __post_init__(self):
        if not self.h0 > 0:
            raise ValueError("h0 must be positive")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    def h_at(self, depth: int) -> float:
        return self.h0 * 2.0 ** (-self.alpha * depth)

    def params_at(self, depth: int) -> EulerParams:
        return EulerParams(h=self.h_at(depth), substeps=self.substeps)


def euler_backward(sys: ContinuousSystemSpec, x, p: EulerParams) -> np.ndarray:
    """Backward Euler image after exactly N substeps; broadcasts over (..., d)."""
    y = np.asarray(x, dtype=np.float64)
    for _ in range(p.substeps):
        y = y - p.theta * eval_field_batch(sys, y)
    if not np.all(np.isfinite(y)):
        raise EvaluationError("Euler iteration produced a non-finite value")
    return y


def enclosure_radius(L: float, P: float, h: float, N: int, subdiameter: float) -> float:
    """Inflation radius certifying backward-flow coverage of a sampled subbox."""
    if L < 0 or P < 0 or subdiameter < 0:
        raise ValueError("L, P and subdiameter must be nonnegative")
    if not h > 0:
        raise ValueError("h must be positive")
    if N < 1:
        raise ValueError("N must be >= 1")
    growth = math.exp(L * h)
    return growth * subdiameter + P * h * (growth - 1.0) / (2.0 * N)


def euler_defect(sys: ContinuousSystemSpec, x, p: EulerParams) -> float:
    """||(phi_E(-h, x) - x) / h + g(x)||, bounded by L*P*h/2."""
    x = np.asarray(x, dtype=np.float64)
    y = euler_backward(sys, x, p)
    g = eval_field_batch(sys, x[None, :])[0] if x.ndim == 1 else eval_field_batch(sys, x)
    return float(np.max(np.abs((y - x) / p.h + g)))


def rk4_backward(sys: ContinuousSystemSpec, x, h: float, steps: int) -> np.ndarray:
    """Classical fixed-step RK4 for the backward flow; broadcasts over (..., d)."""
    y = np.asarray(x, dtype=np.float64)
    if h == 0.0:
        return y.copy()
    dt = h / steps

    def f(v):
        return -eval_field_batch(sys, v)

    for _ in range(steps):
        k1 = f(y)
        k2 = f(y + 0.5 * dt * k1)
        k3 = f(y + 0.5 * dt * k2)
        k4 = f(y + dt * k3)
        y = y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return y


def reference_backward_flow(sys: ContinuousSystemSpec, x, h: float, tol: float = 1e-10) -> np.ndarray:
    """Numerical oracle for the exact backward flow phi(-h, .).

    Step-doubled RK4: substeps are refined until the Richardson error
    estimate drops below tol relative to the solution scale. This is an
    accuracy oracle, not a rigorous enclosure.
    """
    x = np.asarray(x, dtype=np.float64)
    if h == 0.0:
        return x.copy()
    steps = 4
    coarse = rk4_backward(sys, x, h, steps)
    while True:
        fine = rk4_backward(sys, x, h, 2 * steps)
        scale = 1.0 + float(np.max(np.abs(fine)))
        err = float(np.max(np.abs(fine - coarse))) / 15.0
        if err <= tol * scale:
            return fine
        steps *= 2
        if steps > (1 << 22):
            raise EvaluationError("reference integrator step size underflow")
        coarse = fine
