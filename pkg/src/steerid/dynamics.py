"""Nonlinear single-track (bicycle) vehicle plant with fixed-step rollout.

State vector (7 components):
    s_x, s_y : position in global coordinates, m
    delta    : steering angle, rad
    v        : longitudinal velocity, m/s
    psi      : yaw angle, rad
    psi_dot  : yaw rate, rad/s
    beta     : slip angle at the vehicle center, rad

The dynamic model divides by v, so below ``v_switch`` a kinematic
single-track fallback is used.  All arithmetic goes through the scalar
layer in :mod:`steerid.fwddiff`, so rollouts differentiate with respect
to any seeded parameter.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

from . import fwddiff as fd
from .fwddiff import Dual, Scalar, value_of


class DivergenceError(RuntimeError):
    """A state component became non-finite during integration."""

    def __init__(self, message: str, step: int | None = None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class VehicleParams:
    """Physical parameter set of the single-track plant.

    mass: kg; lf, lr: CG-to-axle distances, m; Iz: yaw inertia, kg m^2;
    h_cg: CG height, m; mu: friction coefficient; C_Sf, C_Sr: cornering
    stiffness coefficients, 1/rad; wheel_radius: m; max_steer: steering
    limit, rad; gravity: m/s^2.
    """

    mass: Scalar
    lf: Scalar
    lr: Scalar
    Iz: Scalar
    h_cg: Scalar
    mu: Scalar
    C_Sf: Scalar
    C_Sr: Scalar
    wheel_radius: Scalar = 0.05
    max_steer: float = 0.34
    gravity: float = 9.81

    def __post_init__(self):
        positives = {
            "mass": self.mass, "lf": self.lf, "lr": self.lr, "Iz": self.Iz,
            "mu": self.mu, "C_Sf": self.C_Sf, "C_Sr": self.C_Sr,
            "max_steer": self.max_steer,
        }
        for name, val in positives.items():
            if not value_of(val) > 0.0:
                raise ValueError(f"{name} must be positive, got {value_of(val)}")
        if value_of(self.h_cg) < 0.0:
            raise ValueError(f"h_cg must be non-negative, got {value_of(self.h_cg)}")

    @classmethod
    def f1tenth(cls, **overrides) -> "VehicleParams":
        """Stock F1TENTH testbed parameters (standard tire configuration)."""
        base = dict(mass=3.1, lf=0.159, lr=0.171, Iz=0.04712, h_cg=0.074,
                    mu=1.0489, C_Sf=4.728, C_Sr=5.546, wheel_radius=0.05,
                    max_steer=0.34)
        base.update(overrides)
        return cls(**base)

    def wheelbase(self) -> Scalar:
        return self.lf + self.lr


@dataclass(frozen=True)
class PlantState:
    """Full plant state; see module docstring for units."""

    s_x: Scalar = 0.0
    s_y: Scalar = 0.0
    delta: Scalar = 0.0
    v: Scalar = 0.0
    psi: Scalar = 0.0
    psi_dot: Scalar = 0.0
    beta: Scalar = 0.0

    def as_tuple(self) -> tuple[Scalar, ...]:
        return (self.s_x, self.s_y, self.delta, self.v,
                self.psi, self.psi_dot, self.beta)

    def values(self) -> tuple[float, ...]:
        return tuple(value_of(c) for c in self.as_tuple())

    def is_finite(self) -> bool:
        return all(math.isfinite(c) for c in self.values())


@dataclass(frozen=True)
class PlantInput:
    """Plant inputs: steering velocity u1 and longitudinal acceleration u2.

    When a direct override (steer_cmd / v_cmd) is present the rate inputs
    must be zero: the override regime writes the steering angle (clipped)
    and the velocity straight into the state before derivatives are
    evaluated.
    """

    steer_rate: Scalar = 0.0
    accel: Scalar = 0.0
    steer_cmd: Optional[Scalar] = None
    v_cmd: Optional[Scalar] = None

    def __post_init__(self):
        if self.steer_cmd is not None or self.v_cmd is not None:
            if value_of(self.steer_rate) != 0.0 or value_of(self.accel) != 0.0:
                raise ValueError("direct overrides require zero rate inputs")

    @classmethod
    def override(cls, steer_cmd: Scalar, v_cmd: Scalar) -> "PlantInput":
        return cls(steer_cmd=steer_cmd, v_cmd=v_cmd)


@dataclass(frozen=True)
class RolloutConfig:
    """Fixed-step integration settings."""

    dt: float = 0.002
    steps: int = 1000
    integrator: str = "rk4"
    v_switch: float = 0.1

    def __post_init__(self):
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.integrator not in ("euler", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.v_switch < 0.0:
            raise ValueError("v_switch must be non-negative")


Derivative = tuple[Scalar, Scalar, Scalar, Scalar, Scalar, Scalar, Scalar]


def _yaw_slip_coeffs(params: VehicleParams, u2: Scalar):
    """Load-transfer coefficient bundle of the yaw/slip rows.

    Returns (yaw_steer, yaw_slip, yaw_rate, slip_steer, slip_slip,
    slip_rate) so the per-step derivative is a short linear form in
    (delta, beta, psi_dot/v).
    """
    g = params.gravity
    lf, lr = params.lf, params.lr
    wb = lf + lr
    caf = params.C_Sf * (g * lr - u2 * params.h_cg)   # front load-transfer factor
    car = params.C_Sr * (g * lf + u2 * params.h_cg)   # rear load-transfer factor
    yaw_scale = params.mu * params.mass / (params.Iz * wb)
    slip_scale = params.mu / wb
    return (
        yaw_scale * (lf * caf),
        yaw_scale * (lr * car - lf * caf),
        yaw_scale * (lf * lf * caf + lr * lr * car),
        slip_scale * caf,
        slip_scale * (car + caf),
        slip_scale * (car * lr - caf * lf),
    )


# Coefficients depend only on (params, u2); the u2 = 0 override regime
# dominates rollouts, so cache that case per params object.
_ZERO_ACCEL_COEFFS: "weakref.WeakKeyDictionary[VehicleParams, tuple]" = \
    weakref.WeakKeyDictionary()


def _coeffs_for(params: VehicleParams, u2: Scalar):
    if not isinstance(u2, Dual) and value_of(u2) == 0.0:
        cached = _ZERO_ACCEL_COEFFS.get(params)
        if cached is None:
            cached = _yaw_slip_coeffs(params, 0.0)
            _ZERO_ACCEL_COEFFS[params] = cached
        return cached
    return _yaw_slip_coeffs(params, u2)


def dynamic_derivative(state: PlantState, u: PlantInput,
                       params: VehicleParams) -> Derivative:
    """Time derivative of the nonlinear single-track model.

    Caller routes |v| < v_switch to :func:`kinematic_derivative`; here
    v = 0 is a division by zero.
    """
    if value_of(state.v) == 0.0:
        raise ZeroDivisionError("dynamic model undefined at v = 0")

    yaw_steer, yaw_slip, yaw_rate, slip_steer, slip_slip, slip_rate = \
        _coeffs_for(params, u.accel)

    heading = state.psi + state.beta
    yaw_per_v = state.psi_dot / state.v

    d_sx = state.v * fd.cos(heading)
    d_sy = state.v * fd.sin(heading)
    d_delta = u.steer_rate
    d_v = u.accel
    d_psi = state.psi_dot
    d_psi_dot = (yaw_steer * state.delta + yaw_slip * state.beta
                 - yaw_rate * yaw_per_v)
    d_beta = (slip_steer * state.delta - slip_slip * state.beta
              + slip_rate * yaw_per_v) / state.v - state.psi_dot

    return (d_sx, d_sy, d_delta, d_v, d_psi, d_psi_dot, d_beta)


def kinematic_derivative(state: PlantState, u: PlantInput,
                         params: VehicleParams) -> Derivative:
    """Low-speed kinematic single-track fallback.

    Slip and yaw rate follow their algebraic relations
    beta = atan(lr tan(delta) / wheelbase) and
    psi_dot = v cos(beta) tan(delta) / wheelbase; their derivative
    components are the chain-rule-consistent rates.
    """
    wb = params.lf + params.lr
    tan_d = fd.tan(state.delta)
    ratio = params.lr * tan_d / wb
    beta_kin = fd.atan(ratio)
    cos_b = fd.cos(beta_kin)
    sec2_d = 1.0 + tan_d * tan_d

    d_sx = state.v * fd.cos(state.psi + beta_kin)
    d_sy = state.v * fd.sin(state.psi + beta_kin)
    d_delta = u.steer_rate
    d_v = u.accel
    d_psi = state.v * cos_b * tan_d / wb

    dbeta_ddelta = (params.lr / wb) * sec2_d / (1.0 + ratio * ratio)
    d_beta = dbeta_ddelta * u.steer_rate
    d_psi_dot = (u.accel * cos_b * tan_d / wb
                 - state.v * fd.sin(beta_kin) * d_beta * tan_d / wb
                 + state.v * cos_b * sec2_d * u.steer_rate / wb)

    return (d_sx, d_sy, d_delta, d_v, d_psi, d_psi_dot, d_beta)


def _select_field(state: PlantState, cfg: RolloutConfig):
    if abs(value_of(state.v)) < cfg.v_switch:
        return kinematic_derivative
    return dynamic_derivative


def _axpy(state: PlantState, deriv: Derivative, h: float) -> PlantState:
    s = state.as_tuple()
    return PlantState(*[si + h * di for si, di in zip(s, deriv)])


def step(state: PlantState, u: PlantInput, params: VehicleParams,
         cfg: RolloutConfig) -> PlantState:
    """Advance one timestep.

    Overrides are applied before derivative evaluation: steer_cmd is
    clipped to the steering limit, v_cmd is written exactly.  The
    derivative field (dynamic vs kinematic) is selected once per step
    from the post-override speed.
    """
    lim = params.max_steer
    if u.steer_cmd is not None:
        state = replace(state, delta=fd.clip(u.steer_cmd, -lim, lim))
    if u.v_cmd is not None:
        state = replace(state, v=u.v_cmd)

    field = _select_field(state, cfg)
    dt = cfg.dt
    if cfg.integrator == "euler":
        nxt = _axpy(state, field(state, u, params), dt)
    else:
        k1 = field(state, u, params)
        k2 = field(_axpy(state, k1, dt / 2.0), u, params)
        k3 = field(_axpy(state, k2, dt / 2.0), u, params)
        k4 = field(_axpy(state, k3, dt), u, params)
        sixth = dt / 6.0
        s = state.as_tuple()
        nxt = PlantState(*[
            si + sixth * (a + 2.0 * b + 2.0 * c + d)
            for si, a, b, c, d in zip(s, k1, k2, k3, k4)
        ])

    nxt = replace(nxt, delta=fd.clip(nxt.delta, -lim, lim))
    # cheap screen first: non-finite components poison the sum
    total = (value_of(nxt.s_x) + value_of(nxt.s_y) + value_of(nxt.delta)
             + value_of(nxt.v) + value_of(nxt.psi) + value_of(nxt.psi_dot)
             + value_of(nxt.beta))
    if not math.isfinite(total) and not nxt.is_finite():
        raise DivergenceError(f"non-finite state after step: {nxt.values()}")
    return nxt


Controller = Callable[[int, PlantState], PlantInput]


@dataclass(frozen=True)
class Rollout:
    """Trajectory of T+1 states at uniform dt (index 0 is the initial state)."""

    states: tuple[PlantState, ...]
    dt: float

    def __len__(self) -> int:
        return len(self.states)

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(i * self.dt for i in range(len(self.states)))

    def positions(self) -> list[tuple[Scalar, Scalar]]:
        return [(s.s_x, s.s_y) for s in self.states]

    def trajectory(self):
        """Planar trajectory view used by the loss functions."""
        from .losses import Trajectory
        return Trajectory(
            times=self.times,
            xs=tuple(s.s_x for s in self.states),
            ys=tuple(s.s_y for s in self.states),
            vs=tuple(s.v for s in self.states),
        )


def rollout(initial: PlantState, controller: Controller,
            params: VehicleParams, cfg: RolloutConfig) -> Rollout:
    """Roll the plant forward ``cfg.steps`` steps under a controller callback.

    The controller receives (step index, current state) and returns the
    input for that step.  Divergence aborts with the failing step index.
    """
    states = [initial]
    current = initial
    for i in range(cfg.steps):
        u = controller(i, current)
        try:
            current = step(current, u, params, cfg)
        except DivergenceError as err:
            raise DivergenceError(f"rollout diverged at step {i}: {err}", step=i) from err
        except (OverflowError, ValueError, ZeroDivisionError) as err:
            raise DivergenceError(f"rollout diverged at step {i}: {err}", step=i) from err
        states.append(current)
    return Rollout(states=tuple(states), dt=cfg.dt)


def replay_controller(steer_cmds: Sequence[Scalar],
                      v_cmds: Sequence[Scalar]) -> Controller:
    """Controller that replays logged per-step override commands."""
    def ctrl(i: int, _state: PlantState) -> PlantInput:
        return PlantInput.override(steer_cmds[i], v_cmds[i])
    return ctrl


@dataclass(frozen=True)
class AxleStiffness:
    """Dimensional cornering stiffness per axle, N/rad."""

    front: Scalar
    rear: Scalar


def axle_cornering_stiffness(params: VehicleParams) -> AxleStiffness:
    """Convert cornering stiffness coefficients (1/rad) to N/rad.

    Static axle loads: F_zf = m g lr / (lf + lr), F_zr = m g lf / (lf + lr);
    each axle stiffness is mu * C_S * F_z.
    """
    wb = params.lf + params.lr
    fzf = params.mass * params.gravity * params.lr / wb
    fzr = params.mass * params.gravity * params.lf / wb
    return AxleStiffness(front=params.mu * params.C_Sf * fzf,
                         rear=params.mu * params.C_Sr * fzr)
