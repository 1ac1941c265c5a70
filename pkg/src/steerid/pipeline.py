"""End-to-end experiments: synthetic ground truth, parameter identification
(gradient-based and CMA-ES), gain derivation, and closed-loop evaluation.

Real-robot trajectories are replaced by rollouts of the plant under known
"true" parameters, which turns transfer claims into a quantitative
recovery benchmark.  Three identification modes exist:

* ``trajectory_match`` - decision variables are plant parameters;
  candidate rollouts replay the logged open-loop commands and are scored
  by soft-DTW plus chamfer distance against the stored reference.
* ``lane_keeping`` - decision variables parameterize the controller's
  model; gains come from pole placement, the plant always runs the true
  parameters, and the score is the closed-loop tracking loss.  Gradients
  reach the decision variables only through the placed gains.
* ``gain_direct`` - decision variables are the four feedback gains
  themselves (no stability guarantee, as unstable candidates show).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import fwddiff as fd
from .fwddiff import ParamSeed, Scalar, value_of
from .dynamics import (AxleStiffness, DivergenceError, PlantInput, PlantState,
                       Rollout, RolloutConfig, VehicleParams,
                       axle_cornering_stiffness, replay_controller, rollout)
from .lateral import (ErrorState, GainVector, LateralModel, ReferenceCircle,
                      build_lateral_model, closed_loop_eigs, compute_errors,
                      control_law, place_poles, validate_poles)
from .losses import (LossConfig, Trajectory, lane_keeping_loss,
                     trajectory_match_loss)
from .optim import Adam, CmaEs, EarlyStopping

VEHICLE_VARS = ("mass", "lf", "lr", "C_Sf", "C_Sr")
STIFFNESS_VARS = ("C_af", "C_ar")
GAIN_VARS = ("k1", "k2", "k3", "k4")

# Clamp floors keep Adam steps from flipping signs of physical quantities.
DEFAULT_LOWER_BOUNDS = {
    "mass": 0.01, "lf": 0.01, "lr": 0.01,
    "C_Sf": 0.01, "C_Sr": 0.01, "C_af": 0.01, "C_ar": 0.01,
}

MODES = ("trajectory_match", "lane_keeping", "gain_direct")


@dataclass(frozen=True)
class IdentificationProblem:
    """What to identify, from what starting ranges, under which mode."""

    mode: str
    decision: tuple[str, ...]
    init_ranges: dict[str, tuple[float, float]]
    fixed_params: VehicleParams
    ties: dict[str, str] = field(default_factory=dict)
    bounds: dict[str, tuple[float, float]] = field(default_factory=dict)
    poles: Optional[tuple[complex, ...]] = None
    target_speed: float = 1.0
    ema_alpha: float = 1e-3
    scale_derivative_by_dt: bool = False
    controller_stiffness: Optional[tuple[float, float]] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.decision:
            raise ValueError("decision variable list is empty")
        allowed = (GAIN_VARS if self.mode == "gain_direct"
                   else VEHICLE_VARS + STIFFNESS_VARS)
        for name in self.decision:
            if name not in allowed:
                raise ValueError(f"{name!r} is not a valid decision variable "
                                 f"for mode {self.mode!r}")
            if name not in self.init_ranges:
                raise ValueError(f"missing init range for {name!r}")
        for alias, canon in self.ties.items():
            if canon not in self.decision:
                raise ValueError(f"tie target {canon!r} is not a decision variable")
            if alias in self.decision:
                raise ValueError(f"tied variable {alias!r} cannot also be a decision variable")
        if self.mode in ("lane_keeping", "gain_direct") and self.poles is None:
            if self.mode == "lane_keeping":
                raise ValueError("lane_keeping mode requires poles")

    def lower_bound(self, name: str) -> float:
        if name in self.bounds:
            return self.bounds[name][0]
        return DEFAULT_LOWER_BOUNDS.get(name, -math.inf)

    def upper_bound(self, name: str) -> float:
        if name in self.bounds:
            return self.bounds[name][1]
        return math.inf


@dataclass(frozen=True)
class ReferenceRun:
    """One ground-truth trajectory with everything needed to replay it."""

    index: int
    turn: str
    initial: PlantState
    trajectory: Trajectory
    circle: Optional[ReferenceCircle] = None
    steer_cmds: Optional[tuple[float, ...]] = None
    v_cmds: Optional[tuple[float, ...]] = None
    states: Optional[Rollout] = None


@dataclass(frozen=True)
class Dataset:
    """Train/val reference runs plus the rollout settings that made them."""

    mode: str
    cfg: RolloutConfig
    target_speed: float
    train: tuple[ReferenceRun, ...]
    val: tuple[ReferenceRun, ...]
    seed: int
    ema_alpha: float = 1e-3
    poles: Optional[tuple[complex, ...]] = None
    true_params: Optional[VehicleParams] = None

    @property
    def runs(self) -> tuple[ReferenceRun, ...]:
        return self.train + self.val


@dataclass(frozen=True)
class GenerationSpec:
    """Synthetic dataset shape: how many runs, which maneuver family."""

    mode: str = "trajectory_match"
    count: int = 16
    val_count: int = 2
    target_speed: float = 1.0
    radius_range: tuple[float, float] = (25.0, 35.0)
    lateral_offset: float = 1.0
    poles: Optional[tuple[complex, ...]] = None
    ema_alpha: float = 0.05
    scale_derivative_by_dt: bool = True

    def __post_init__(self):
        if self.mode not in ("trajectory_match", "lane_keeping"):
            raise ValueError(f"unknown generation mode {self.mode!r}")
        if self.count < 2:
            raise ValueError("count must be >= 2 so train and val are non-empty")
        if not (1 <= self.val_count < self.count):
            raise ValueError("val_count must leave both splits non-empty")
        if self.mode == "lane_keeping" and self.poles is None:
            raise ValueError("lane_keeping generation requires poles")


@dataclass
class EpochRecord:
    epoch: int
    split: str
    loss: float
    params: dict[str, float]
    grad_norm: Optional[float]
    evals: int
    wallclock: float


@dataclass
class RunReport:
    """Everything needed to reproduce and plot one identification run."""

    seed: int
    optimizer: str
    records: list[EpochRecord]
    final_params: dict[str, float]
    stop_reason: str
    best_val: float
    improved: bool
    total_evals: int
    wallclock: float
    config_snapshot: dict = field(default_factory=dict)

    def curve(self, split: str = "train") -> list[tuple[int, float]]:
        return [(r.epoch, r.loss) for r in self.records if r.split == split]

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "optimizer": self.optimizer,
            "final_params": self.final_params,
            "stop_reason": self.stop_reason,
            "best_val": self.best_val,
            "improved": self.improved,
            "total_evals": self.total_evals,
            "wallclock": self.wallclock,
            "config": self.config_snapshot,
            "records": [
                {"epoch": r.epoch, "split": r.split, "loss": r.loss,
                 "params": r.params, "grad_norm": r.grad_norm,
                 "evals": r.evals, "wallclock": r.wallclock}
                for r in self.records
            ],
        }


@dataclass(frozen=True)
class EvaluationReport:
    """Closed-loop run summary: error profiles and steady-state magnitudes."""

    gains: GainVector
    eigenvalues: tuple[complex, ...]
    times: tuple[float, ...]
    errors: tuple[ErrorState, ...]
    rollout: Rollout
    steady_state_e1: float
    steady_state_e2: float

    def summary(self) -> dict:
        return {
            "gains": list(self.gains.values()),
            "eigenvalues": [[e.real, e.imag] for e in self.eigenvalues],
            "steady_state_abs_e1": self.steady_state_e1,
            "steady_state_abs_e2": self.steady_state_e2,
            "steps": len(self.times),
        }


# -- reference geometry ----------------------------------------------------


def reference_circle(radius: float, side: str = "left",
                     lateral_offset: float = 1.0) -> ReferenceCircle:
    """Circle tangent to a start at the origin heading +y.

    The center sits at (-r, k) for a left (counterclockwise) lane and
    (+r, k) for a right (clockwise) one.
    """
    if side == "left":
        return ReferenceCircle(cx=-radius, cy=lateral_offset,
                               radius=radius, direction="ccw")
    if side == "right":
        return ReferenceCircle(cx=radius, cy=lateral_offset,
                               radius=radius, direction="cw")
    raise ValueError(f"side must be 'left' or 'right', got {side!r}")


def circle_start_state() -> PlantState:
    """Origin at rest, heading along +y (the lane-keeping start pose)."""
    return PlantState(psi=math.pi / 2.0)


# -- gain derivation --------------------------------------------------------


def lateral_model_from_params(params: VehicleParams, vx: float) -> LateralModel:
    # The error-dynamics matrices take per-tire stiffness (their terms carry
    # a factor 2 per axle) while the conversion yields per-axle values, so
    # the composition halves.  Verified against the plant's numerical
    # linearization: with the halving the model matches it exactly.
    st = axle_cornering_stiffness(params)
    return build_lateral_model(st.front / 2.0, st.rear / 2.0, params.mass,
                               params.Iz, params.lf, params.lr, vx)


def derive_gains(params: VehicleParams, vx: float,
                 poles: Sequence[complex]) -> GainVector:
    """Axle stiffness conversion -> error-dynamics model -> pole placement."""
    return place_poles(lateral_model_from_params(params, vx), poles)


def derive_gains_from_stiffness(c_af: Scalar, c_ar: Scalar, mass: Scalar,
                                iz: Scalar, lf: Scalar, lr: Scalar, vx: float,
                                poles: Sequence[complex]) -> GainVector:
    """Placement from dimensional axle stiffnesses, bypassing conversion."""
    return place_poles(build_lateral_model(c_af, c_ar, mass, iz, lf, lr, vx), poles)


# -- closed-loop rollout (the forward computation) ---------------------------


def closed_loop_run(plant: VehicleParams, gains: GainVector,
                    circle: ReferenceCircle, cfg: RolloutConfig, vx: float,
                    alpha: float = 1e-3, scale_derivative_by_dt: bool = False,
                    initial: Optional[PlantState] = None):
    """Roll the plant under the feedback law around a circular reference.

    Per step: steer from the latest error state (zeros before the first
    step), advance the plant with velocity held at vx, then update the
    error state from the new pose.  Returns (rollout, errors, velocities)
    where errors/velocities cover states 1..T.
    """
    if initial is None:
        initial = circle_start_state()
    errs: list[ErrorState] = []
    vels: list[Scalar] = []
    state_err = ErrorState.zero()

    def ctrl(i: int, state: PlantState) -> PlantInput:
        nonlocal state_err
        if i > 0:
            state_err = compute_errors(state, circle, vx, state_err, alpha,
                                       cfg.dt, scale_derivative_by_dt)
            errs.append(state_err)
            vels.append(state.v)
        steer = control_law(gains, state_err, plant.max_steer)
        return PlantInput.override(steer, vx)

    ro = rollout(initial, ctrl, plant, cfg)
    last = compute_errors(ro.states[-1], circle, vx, state_err, alpha,
                          cfg.dt, scale_derivative_by_dt)
    errs.append(last)
    vels.append(ro.states[-1].v)
    return ro, errs, vels


# -- ground truth generation --------------------------------------------------


def generate_ground_truth(true_params: VehicleParams, spec: GenerationSpec,
                          cfg: RolloutConfig, seed: int) -> Dataset:
    """Deterministic synthetic dataset rolled out with the true parameters.

    trajectory_match: open-loop maximum-steer circles at constant speed,
    alternating left and right, with random initial headings.
    lane_keeping: circular centerlines with radius drawn from
    radius_range, placed tangent to the start pose, driven closed-loop
    with true-parameter gains.
    """
    rng = np.random.default_rng(seed)
    runs: list[ReferenceRun] = []
    for i in range(spec.count):
        turn = "left" if i % 2 == 0 else "right"
        try:
            if spec.mode == "trajectory_match":
                steer = true_params.max_steer if turn == "left" else -true_params.max_steer
                psi0 = float(rng.uniform(0.0, math.tau))
                initial = PlantState(psi=psi0)
                steer_cmds = (steer,) * cfg.steps
                v_cmds = (spec.target_speed,) * cfg.steps
                ro = rollout(initial, replay_controller(steer_cmds, v_cmds),
                             true_params, cfg)
                runs.append(ReferenceRun(index=i, turn=turn, initial=initial,
                                         trajectory=ro.trajectory(),
                                         steer_cmds=steer_cmds, v_cmds=v_cmds,
                                         states=ro))
            else:
                radius = float(rng.uniform(*spec.radius_range))
                circle = reference_circle(radius,
                                          side="left" if turn == "left" else "right",
                                          lateral_offset=spec.lateral_offset)
                gains = derive_gains(true_params, spec.target_speed, spec.poles)
                initial = circle_start_state()
                ro, errs, _ = closed_loop_run(true_params, gains, circle, cfg,
                                              spec.target_speed, spec.ema_alpha,
                                              spec.scale_derivative_by_dt)
                runs.append(ReferenceRun(index=i, turn=turn, initial=initial,
                                         trajectory=ro.trajectory(),
                                         circle=circle, states=ro))
        except DivergenceError as err:
            raise DivergenceError(
                f"ground-truth rollout {i} diverged (seed {seed}): {err}") from err

    split = spec.count - spec.val_count
    return Dataset(mode=spec.mode, cfg=cfg, target_speed=spec.target_speed,
                   train=tuple(runs[:split]), val=tuple(runs[split:]),
                   seed=seed, ema_alpha=spec.ema_alpha, poles=spec.poles,
                   true_params=true_params)


# -- candidate assembly -------------------------------------------------------


def _resolve(problem: IdentificationProblem,
             theta: dict[str, Scalar]) -> dict[str, Scalar]:
    """Decision values plus tied aliases."""
    full = dict(theta)
    for alias, canon in problem.ties.items():
        full[alias] = theta[canon]
    return full


def _candidate_vehicle(problem: IdentificationProblem,
                       full: dict[str, Scalar]) -> VehicleParams:
    fp = problem.fixed_params
    return replace(
        fp,
        mass=full.get("mass", fp.mass),
        lf=full.get("lf", fp.lf),
        lr=full.get("lr", fp.lr),
        C_Sf=full.get("C_Sf", fp.C_Sf),
        C_Sr=full.get("C_Sr", fp.C_Sr),
    )


def _controller_gains(problem: IdentificationProblem,
                      full: dict[str, Scalar]) -> GainVector:
    """Gains implied by a candidate: direct gains or placement through
    the candidate's (possibly partially fixed) model parameters."""
    if problem.mode == "gain_direct":
        return GainVector(full["k1"], full["k2"], full["k3"], full["k4"])

    vehicle = _candidate_vehicle(problem, full)
    uses_direct_stiffness = any(v in full for v in STIFFNESS_VARS)
    if uses_direct_stiffness:
        fallback = None
        if "C_af" not in full or "C_ar" not in full:
            fallback = (problem.controller_stiffness
                        or _fixed_stiffness(problem))
        c_af = full.get("C_af", fallback[0] if fallback else None)
        c_ar = full.get("C_ar", fallback[1] if fallback else None)
    elif problem.controller_stiffness is not None:
        c_af, c_ar = problem.controller_stiffness
    else:
        st = axle_cornering_stiffness(vehicle)
        c_af, c_ar = st.front, st.rear
    return derive_gains_from_stiffness(c_af, c_ar, vehicle.mass, vehicle.Iz,
                                       vehicle.lf, vehicle.lr,
                                       problem.target_speed, problem.poles)


def _fixed_stiffness(problem: IdentificationProblem) -> tuple[float, float]:
    st = axle_cornering_stiffness(problem.fixed_params)
    return (value_of(st.front), value_of(st.rear))


def _auto_stride(steps: int, target_points: int = 100) -> int:
    return max(1, (steps + 1) // target_points)


def candidate_loss(problem: IdentificationProblem, run: ReferenceRun,
                   theta: dict[str, Scalar], data: Dataset,
                   loss_cfg: LossConfig, stride: int) -> Scalar:
    """Loss of one candidate on one reference run (scalar, dual-capable)."""
    full = _resolve(problem, theta)
    if problem.mode == "trajectory_match":
        vehicle = _candidate_vehicle(problem, full)
        ro = rollout(run.initial, replay_controller(run.steer_cmds, run.v_cmds),
                     vehicle, data.cfg)
        sim = ro.trajectory().decimate(stride)
        ref = run.trajectory.decimate(stride)
        return trajectory_match_loss(sim, ref, loss_cfg)

    gains = _controller_gains(problem, full)
    _, errs, vels = closed_loop_run(
        problem.fixed_params, gains, run.circle, data.cfg, problem.target_speed,
        problem.ema_alpha, problem.scale_derivative_by_dt, run.initial)
    return lane_keeping_loss(errs, vels, loss_cfg)


def default_loss_config(problem: IdentificationProblem,
                        cfg: RolloutConfig) -> LossConfig:
    if problem.mode == "trajectory_match":
        return LossConfig.trajectory_match()
    # Offsets scale with the horizon like the reference experiment
    # (2000 and 2500 of 7000 steps).
    t_cls = int(cfg.steps * 2.0 / 7.0)
    t_vs = int(cfg.steps * 2.5 / 7.0)
    return LossConfig.lane_keeping(t_cls=t_cls, t_vs=t_vs,
                                   target_speed=problem.target_speed)


# -- identification -----------------------------------------------------------


@dataclass(frozen=True)
class OptimizerSettings:
    """Training-loop knobs shared by both optimizers."""

    kind: str = "adam"
    epochs: int = 100
    batch: int = 4
    lr: float = 0.05
    clip_norm: float = math.inf
    weight_decay: float = 0.0
    early_stopping: bool = True
    patience: int = 5
    val_every: int = 4
    sigma: Optional[float] = None
    population: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("adam", "cmaes"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.epochs < 1 or self.batch < 1:
            raise ValueError("epochs and batch must be >= 1")


def identify(problem: IdentificationProblem, data: Dataset,
             settings: OptimizerSettings, seeds: int = 1, base_seed: int = 0,
             loss_cfg: Optional[LossConfig] = None,
             loss_stride: Optional[int] = None,
             config_snapshot: Optional[dict] = None) -> list[RunReport]:
    """Run one identification per seed and return the per-run reports."""
    if loss_cfg is None:
        loss_cfg = default_loss_config(problem, data.cfg)
    if loss_stride is None:
        loss_stride = (_auto_stride(data.cfg.steps)
                       if problem.mode == "trajectory_match" else 1)
    snapshot = config_snapshot or {}
    return [
        _identify_single(problem, data, settings, base_seed + i, loss_cfg,
                         loss_stride, snapshot)
        for i in range(seeds)
    ]


def _batch_loss(problem, data, runs, theta_map, loss_cfg, stride) -> Scalar:
    total: Scalar = 0.0
    for run in runs:
        total = total + candidate_loss(problem, run, theta_map, data, loss_cfg, stride)
    return total / len(runs)


def _clamp(problem: IdentificationProblem, names: Sequence[str],
           theta: np.ndarray) -> np.ndarray:
    lo = np.array([problem.lower_bound(n) for n in names])
    hi = np.array([problem.upper_bound(n) for n in names])
    return np.clip(theta, lo, hi)


def _identify_single(problem, data, settings, seed, loss_cfg, stride,
                     snapshot) -> RunReport:
    rng = np.random.default_rng(seed)
    names = list(problem.decision)
    lo = np.array([problem.init_ranges[n][0] for n in names])
    hi = np.array([problem.init_ranges[n][1] for n in names])
    theta = rng.uniform(lo, hi)

    records: list[EpochRecord] = []
    t0 = time.perf_counter()
    evals = 0

    def val_loss_at(values: np.ndarray) -> float:
        theta_map = dict(zip(names, values.tolist()))
        return value_of(_batch_loss(problem, data, data.val, theta_map,
                                    loss_cfg, stride))

    def sample_batch():
        idx = rng.choice(len(data.train), size=settings.batch,
                         replace=len(data.train) < settings.batch)
        return [data.train[int(i)] for i in idx]

    if settings.kind == "adam":
        opt = Adam(lr=settings.lr, clip_norm=settings.clip_norm,
                   weight_decay=settings.weight_decay, names=names)
        stopper = EarlyStopping(patience=settings.patience,
                                val_every=settings.val_every)
        stop_reason = "completed"
        best_val = math.inf
        for epoch in range(settings.epochs):
            batch_runs = sample_batch()
            duals = fd.seed(ParamSeed(tuple(names), tuple(theta.tolist())))
            theta_map = dict(zip(names, duals))
            loss = _batch_loss(problem, data, batch_runs, theta_map,
                               loss_cfg, stride)
            evals += len(batch_runs)
            grad = np.array(loss.tangents, dtype=float)
            records.append(EpochRecord(
                epoch=epoch, split="train", loss=float(loss.value),
                params=dict(zip(names, theta.tolist())),
                grad_norm=float(np.linalg.norm(grad)), evals=evals,
                wallclock=time.perf_counter() - t0))
            theta = _clamp(problem, names, opt.step(theta, grad))

            if (epoch + 1) % settings.val_every == 0:
                vloss = val_loss_at(theta)
                evals += len(data.val)
                records.append(EpochRecord(
                    epoch=epoch, split="val", loss=vloss,
                    params=dict(zip(names, theta.tolist())), grad_norm=None,
                    evals=evals, wallclock=time.perf_counter() - t0))
                if stopper.update(vloss) and settings.early_stopping:
                    stop_reason = "early_stop"
                    break
        best_val = stopper.best_val
        improved = stopper.improved_ever
        final = dict(zip(names, theta.tolist()))
        optimizer_name = "adam"
    else:
        stopper = None
        stop_reason = "completed"
        sigma = settings.sigma if settings.sigma is not None \
            else float(np.mean(hi - lo)) / 4.0
        es = CmaEs(mean=theta, sigma=sigma, population=settings.population,
                   seed=seed, bounds=list(zip(lo.tolist(), hi.tolist())))
        best_val = math.inf
        improved = False
        for epoch in range(settings.epochs):
            batch_runs = sample_batch()
            pop = es.ask()
            fits = []
            for cand in pop:
                cand = _clamp(problem, names, cand)
                theta_map = dict(zip(names, cand.tolist()))
                try:
                    f = value_of(_batch_loss(problem, data, batch_runs,
                                             theta_map, loss_cfg, stride))
                except (DivergenceError, OverflowError, ValueError,
                        ZeroDivisionError):
                    f = math.nan
                if not math.isfinite(f):
                    f = math.nan
                fits.append(f)
                evals += len(batch_runs)
            es.tell(fits)
            finite = [f for f in fits if math.isfinite(f)]
            gen_best = min(finite) if finite else math.nan
            center = es.best_x if es.best_x is not None else es.mean
            records.append(EpochRecord(
                epoch=epoch, split="train", loss=gen_best,
                params=dict(zip(names, np.asarray(center).tolist())),
                grad_norm=None, evals=evals,
                wallclock=time.perf_counter() - t0))
            if (epoch + 1) % settings.val_every == 0:
                try:
                    vloss = val_loss_at(np.asarray(center))
                except (DivergenceError, OverflowError, ValueError,
                        ZeroDivisionError):
                    vloss = math.nan
                evals += len(data.val)
                records.append(EpochRecord(
                    epoch=epoch, split="val", loss=vloss,
                    params=dict(zip(names, np.asarray(center).tolist())),
                    grad_norm=None, evals=evals,
                    wallclock=time.perf_counter() - t0))
        final_vec = es.best_x if es.best_x is not None else es.mean
        final = dict(zip(names, np.asarray(final_vec).tolist()))
        best_val = es.best_fitness
        improved = es.best_x is not None
        optimizer_name = "cmaes"

    return RunReport(seed=seed, optimizer=optimizer_name, records=records,
                     final_params=final, stop_reason=stop_reason,
                     best_val=best_val, improved=improved, total_evals=evals,
                     wallclock=time.perf_counter() - t0,
                     config_snapshot=snapshot)


# -- closed-loop evaluation ----------------------------------------------------


class EvaluationDivergence(RuntimeError):
    """Closed-loop evaluation diverged; carries the gains and eigenvalues."""

    def __init__(self, message: str, gains: GainVector,
                 eigenvalues: Sequence[complex]):
        super().__init__(message)
        self.gains = gains
        self.eigenvalues = tuple(eigenvalues)


def evaluate_controller(params_for_gains: VehicleParams,
                        plant_params: VehicleParams,
                        poles: Sequence[complex], ref: ReferenceCircle,
                        cfg: RolloutConfig, vx: float, alpha: float = 1e-3,
                        scale_derivative_by_dt: bool = False,
                        initial: Optional[PlantState] = None) -> EvaluationReport:
    """Closed-loop run with gains derived from one parameter set while the
    plant runs another; reports error profiles and steady-state magnitudes
    (mean absolute error over the final 20% of steps).
    """
    validate_poles(poles)
    gains = derive_gains(params_for_gains, vx, poles)
    model = lateral_model_from_params(params_for_gains, vx)
    eigs = tuple(closed_loop_eigs(model, gains))

    try:
        ro, errs, _ = closed_loop_run(plant_params, gains, ref, cfg, vx,
                                      alpha, scale_derivative_by_dt, initial)
    except DivergenceError as err:
        raise EvaluationDivergence(
            f"closed-loop evaluation diverged: {err} "
            f"(gains {[round(g, 4) for g in gains.values()]})",
            gains, eigs) from err

    tail = max(1, int(math.ceil(0.2 * len(errs))))
    ss_e1 = float(np.mean([abs(value_of(e.e1)) for e in errs[-tail:]]))
    ss_e2 = float(np.mean([abs(value_of(e.e2)) for e in errs[-tail:]]))
    times = tuple((i + 1) * cfg.dt for i in range(len(errs)))
    return EvaluationReport(gains=gains, eigenvalues=eigs, times=times,
                            errors=tuple(errs), rollout=ro,
                            steady_state_e1=ss_e1, steady_state_e2=ss_e2)
