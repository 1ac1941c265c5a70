"""Differentiable trajectory-discrepancy and lane-keeping losses.

Trajectory matching combines a soft (log-sum-exp) dynamic time warping
term with a chamfer term that penalizes scale differences; lane keeping
combines an accumulated error-norm term with a mean velocity-tracking
term.  All four differentiate through the scalar layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import fwddiff as fd
from .fwddiff import Scalar, value_of
from .lateral import ErrorState


@dataclass(frozen=True)
class Trajectory:
    """Time-indexed planar curve with optional per-point speed and errors."""

    times: tuple[float, ...]
    xs: tuple[Scalar, ...]
    ys: tuple[Scalar, ...]
    vs: Optional[tuple[Scalar, ...]] = None
    errors: Optional[tuple[ErrorState, ...]] = None

    def __post_init__(self):
        n = len(self.times)
        if n < 1:
            raise ValueError("trajectory must contain at least one point")
        if len(self.xs) != n or len(self.ys) != n:
            raise ValueError("times/xs/ys length mismatch")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")
        if self.vs is not None and len(self.vs) != n:
            raise ValueError("vs length mismatch")
        if self.errors is not None and len(self.errors) != n:
            raise ValueError("errors length mismatch")

    def __len__(self) -> int:
        return len(self.times)

    @classmethod
    def from_xy(cls, points: Sequence[tuple[float, float]], dt: float = 1.0) -> "Trajectory":
        return cls(times=tuple(i * dt for i in range(len(points))),
                   xs=tuple(p[0] for p in points),
                   ys=tuple(p[1] for p in points))

    def decimate(self, stride: int) -> "Trajectory":
        """Every stride-th point (index 0 kept); stride 1 is a no-op."""
        if stride <= 1:
            return self
        idx = range(0, len(self.times), stride)
        return Trajectory(
            times=tuple(self.times[i] for i in idx),
            xs=tuple(self.xs[i] for i in idx),
            ys=tuple(self.ys[i] for i in idx),
            vs=None if self.vs is None else tuple(self.vs[i] for i in idx),
            errors=None if self.errors is None else tuple(self.errors[i] for i in idx),
        )


@dataclass(frozen=True)
class LossConfig:
    """Weights and offsets for the two loss modes.

    weight: combination factor (100 for trajectory matching, 5000 for
    lane keeping); gamma: soft-min temperature; t_cls / t_vs: first step
    indices of the lane-keeping and velocity sums; target_speed: the
    commanded longitudinal velocity.
    """

    mode: str = "trajectory_match"
    weight: float = 100.0
    gamma: float = 0.1
    t_cls: int = 0
    t_vs: int = 0
    target_speed: float = 1.0

    def __post_init__(self):
        if self.mode not in ("trajectory_match", "lane_keeping"):
            raise ValueError(f"unknown loss mode {self.mode!r}")
        if self.weight < 0.0:
            raise ValueError("weight must be non-negative")
        if self.gamma <= 0.0:
            raise ValueError("gamma must be positive")
        if self.t_cls < 0 or self.t_vs < 0:
            raise ValueError("t_cls and t_vs must be non-negative")

    @classmethod
    def trajectory_match(cls, weight: float = 100.0, gamma: float = 0.1) -> "LossConfig":
        return cls(mode="trajectory_match", weight=weight, gamma=gamma)

    @classmethod
    def lane_keeping(cls, t_cls: int, t_vs: int, target_speed: float = 1.0,
                     weight: float = 5000.0) -> "LossConfig":
        return cls(mode="lane_keeping", weight=weight, t_cls=t_cls, t_vs=t_vs,
                   target_speed=target_speed)


def _sqdist(ax: Scalar, ay: Scalar, bx: Scalar, by: Scalar) -> Scalar:
    dx = ax - bx
    dy = ay - by
    return dx * dx + dy * dy


def _softmin3(a: Scalar, b: Scalar, c: Scalar, gamma: float) -> Scalar:
    """-gamma log(sum exp(-z/gamma)), shifted by the smallest value for stability."""
    m = a
    mv = value_of(a)
    for z in (b, c):
        zv = value_of(z)
        if zv < mv:
            m, mv = z, zv
    total = fd.exp((m - a) / gamma) + fd.exp((m - b) / gamma) + fd.exp((m - c) / gamma)
    return m - gamma * fd.log(total)


def _all_float(xs) -> bool:
    return all(isinstance(x, (int, float)) for x in xs)


def _soft_dtw_float(axs, ays, bxs, bys, gamma: float) -> float:
    """Float-only DP; same recursion as the generic path without
    dispatch overhead."""
    fexp, flog = math.exp, math.log
    n, m = len(axs), len(bxs)
    prev = None
    for i in range(n):
        ax, ay = axs[i], ays[i]
        row = [0.0] * m
        for j in range(m):
            dx = ax - bxs[j]
            dy = ay - bys[j]
            d = dx * dx + dy * dy
            if i == 0:
                row[j] = d if j == 0 else d + row[j - 1]
            elif j == 0:
                row[j] = d + prev[0]
            else:
                x, y, z = prev[j], row[j - 1], prev[j - 1]
                lo = x if x < y else y
                if z < lo:
                    lo = z
                total = (fexp((lo - x) / gamma) + fexp((lo - y) / gamma)
                         + fexp((lo - z) / gamma))
                row[j] = d + lo - gamma * flog(total)
        prev = row
    return prev[m - 1]


def soft_dtw(a: Trajectory, b: Trajectory, gamma: float) -> Scalar:
    """Soft dynamic time warping on squared planar distances.

    DP recursion R[i][j] = d(a_i, b_j) + softmin(R[i-1][j], R[i][j-1],
    R[i-1][j-1]) with accumulating first row/column; equals the soft
    minimum of all monotone alignment path costs.
    """
    if gamma <= 0.0:
        raise ValueError("gamma must be positive")
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise ValueError("empty trajectory")

    if (_all_float(a.xs) and _all_float(a.ys)
            and _all_float(b.xs) and _all_float(b.ys)):
        return _soft_dtw_float(a.xs, a.ys, b.xs, b.ys, gamma)

    prev = None
    for i in range(n):
        row = [None] * m
        for j in range(m):
            d = _sqdist(a.xs[i], a.ys[i], b.xs[j], b.ys[j])
            if i == 0 and j == 0:
                row[j] = d
            elif i == 0:
                row[j] = d + row[j - 1]
            elif j == 0:
                row[j] = d + prev[j]
            else:
                row[j] = d + _softmin3(prev[j], row[j - 1], prev[j - 1], gamma)
        prev = row
    return prev[m - 1]


def chamfer(a: Trajectory, b: Trajectory) -> Scalar:
    """Symmetric mean of nearest-neighbor squared distances.

    Ties in the nearest-neighbor search resolve to the lowest index, and
    the gradient flows through the selected point only (the search runs
    on values; only selected pairs enter the differentiable sum).
    """
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        raise ValueError("empty trajectory")

    pa = np.array([[value_of(x) for x in a.xs], [value_of(y) for y in a.ys]]).T
    pb = np.array([[value_of(x) for x in b.xs], [value_of(y) for y in b.ys]]).T
    d2 = ((pa[:, None, :] - pb[None, :, :]) ** 2).sum(axis=2)
    nn_ab = d2.argmin(axis=1)   # first occurrence on ties (lowest index)
    nn_ba = d2.argmin(axis=0)

    floats = (_all_float(a.xs) and _all_float(a.ys)
              and _all_float(b.xs) and _all_float(b.ys))
    if floats:
        return (float(d2[np.arange(n), nn_ab].mean())
                + float(d2[nn_ba, np.arange(m)].mean()))

    def directed(xs1, ys1, xs2, ys2, nn):
        total = None
        for i, j in enumerate(nn):
            term = _sqdist(xs1[i], ys1[i], xs2[j], ys2[j])
            total = term if total is None else total + term
        return total / len(xs1)

    return (directed(a.xs, a.ys, b.xs, b.ys, nn_ab)
            + directed(b.xs, b.ys, a.xs, a.ys, nn_ba))


def trajectory_match_loss(sim: Trajectory, ref: Trajectory, cfg: LossConfig) -> Scalar:
    """soft_dtw + weight * chamfer between a simulated and a reference path."""
    if cfg.mode != "trajectory_match":
        raise ValueError(f"config mode is {cfg.mode!r}, expected 'trajectory_match'")
    loss = soft_dtw(sim, ref, cfg.gamma)
    if cfg.weight != 0.0:
        loss = loss + cfg.weight * chamfer(sim, ref)
    return loss


def lane_keeping_loss(errors: Sequence[ErrorState], velocities: Sequence[Scalar],
                      cfg: LossConfig) -> Scalar:
    """Accumulated error norm from t_cls plus weighted mean |V_x - v| from t_vs."""
    if cfg.mode != "lane_keeping":
        raise ValueError(f"config mode is {cfg.mode!r}, expected 'lane_keeping'")
    n = len(errors)
    if len(velocities) != n:
        raise ValueError("errors and velocities length mismatch")
    if cfg.t_cls >= n or cfg.t_vs >= n:
        raise IndexError(f"t_cls={cfg.t_cls}, t_vs={cfg.t_vs} out of range for length {n}")

    tracking: Scalar = 0.0
    for e in errors[cfg.t_cls:]:
        ss = (e.e1 * e.e1 + e.e1_dot * e.e1_dot
              + e.e2 * e.e2 + e.e2_dot * e.e2_dot)
        # subgradient 0 at exact zero error (sqrt has no derivative there)
        if value_of(ss) > 0.0:
            tracking = tracking + fd.sqrt(ss)

    vel: Scalar = 0.0
    for v in velocities[cfg.t_vs:]:
        vel = vel + fd.absolute(cfg.target_speed - v)
    vel = vel / (n - cfg.t_vs)

    return tracking + cfg.weight * vel
