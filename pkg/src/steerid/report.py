"""File formats: trajectory/error/curve CSVs, dataset manifests, run reports.

CSV headers are fixed and versioned:
    trajectories  t,s_x,s_y,delta,v,psi,psidot,beta
    errors        t,e1,e1_dot,e2,e2_dot
    losses        epoch,split,loss
    params        epoch,<var names...>
NaN cells are written as empty fields.  All writes go through a temp file
plus rename so partial outputs never appear.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from typing import Iterable, Optional, Sequence

from .dynamics import PlantState, Rollout, RolloutConfig, VehicleParams
from .fwddiff import value_of
from .lateral import ErrorState, ReferenceCircle
from .losses import Trajectory
from .pipeline import Dataset, EpochRecord, ReferenceRun, RunReport

TRAJECTORY_HEADER = "t,s_x,s_y,delta,v,psi,psidot,beta"
ERRORS_HEADER = "t,e1,e1_dot,e2,e2_dot"
LOSSES_HEADER = "epoch,split,loss"


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, int):
        return str(x)
    return repr(float(x))


def atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path: str, header: str, rows: Iterable[Sequence]) -> None:
    lines = [header]
    for row in rows:
        lines.append(",".join(_fmt(c) if isinstance(c, (int, float)) or c is None
                              else str(c) for c in row))
    atomic_write_text(path, "\n".join(lines) + "\n")


def write_json(path: str, payload: dict) -> None:
    atomic_write_text(path, json.dumps(payload, indent=2) + "\n")


def write_trajectory_csv(path: str, rollout: Rollout) -> None:
    rows = []
    for t, s in zip(rollout.times, rollout.states):
        rows.append((t,) + s.values())
    write_csv(path, TRAJECTORY_HEADER, rows)


def write_errors_csv(path: str, times: Sequence[float],
                     errors: Sequence[ErrorState]) -> None:
    rows = [(t,) + e.values() for t, e in zip(times, errors)]
    write_csv(path, ERRORS_HEADER, rows)


def write_loss_curve_csv(path: str, records: Sequence[EpochRecord]) -> None:
    write_csv(path, LOSSES_HEADER,
              [(r.epoch, r.split, r.loss) for r in records])


def write_param_curve_csv(path: str, records: Sequence[EpochRecord],
                          names: Sequence[str]) -> None:
    header = "epoch," + ",".join(names)
    rows = [(r.epoch,) + tuple(r.params[n] for n in names)
            for r in records if r.split == "train"]
    write_csv(path, header, rows)


def averaged_loss_curve(reports: Sequence[RunReport], split: str = "train",
                        min_count: int = 2) -> list[tuple[int, float]]:
    """Mean loss per epoch across seeds; NaN losses are ignored in the
    average and epochs with fewer than min_count finite values are
    omitted (early-stopped runs shorten the tail).
    """
    by_epoch: dict[int, list[float]] = {}
    for rep in reports:
        for epoch, loss in rep.curve(split):
            if math.isfinite(loss):
                by_epoch.setdefault(epoch, []).append(loss)
    out = []
    for epoch in sorted(by_epoch):
        vals = by_epoch[epoch]
        if len(vals) >= min(min_count, len(reports)):
            out.append((epoch, sum(vals) / len(vals)))
    return out


def write_averaged_curve_csv(path: str, reports: Sequence[RunReport],
                             split: str = "train") -> None:
    write_csv(path, "epoch,mean_loss",
              averaged_loss_curve(reports, split=split))


# -- dataset persistence -------------------------------------------------


def _state_dict(s: PlantState) -> dict:
    return {"s_x": value_of(s.s_x), "s_y": value_of(s.s_y),
            "delta": value_of(s.delta), "v": value_of(s.v),
            "psi": value_of(s.psi), "psi_dot": value_of(s.psi_dot),
            "beta": value_of(s.beta)}


def _params_dict(p: VehicleParams) -> dict:
    return {"mass": value_of(p.mass), "lf": value_of(p.lf),
            "lr": value_of(p.lr), "Iz": value_of(p.Iz),
            "h_cg": value_of(p.h_cg), "mu": value_of(p.mu),
            "C_Sf": value_of(p.C_Sf), "C_Sr": value_of(p.C_Sr),
            "wheel_radius": value_of(p.wheel_radius),
            "max_steer": p.max_steer, "gravity": p.gravity}


def _circle_dict(c: Optional[ReferenceCircle]) -> Optional[dict]:
    if c is None:
        return None
    return {"cx": c.cx, "cy": c.cy, "radius": c.radius,
            "direction": c.direction}


def save_dataset(directory: str, data: Dataset) -> str:
    """Write one trajectory CSV per run plus a JSON manifest; returns the
    manifest path."""
    os.makedirs(directory, exist_ok=True)
    entries = []
    n_train = len(data.train)
    for pos, run in enumerate(data.runs):
        fname = f"traj_{run.index:03d}.csv"
        if run.states is not None:
            write_trajectory_csv(os.path.join(directory, fname), run.states)
        else:
            traj = run.trajectory
            rows = [(traj.times[i], value_of(traj.xs[i]), value_of(traj.ys[i]),
                     math.nan, value_of(traj.vs[i]) if traj.vs else math.nan,
                     math.nan, math.nan, math.nan)
                    for i in range(len(traj))]
            write_csv(os.path.join(directory, fname), TRAJECTORY_HEADER, rows)
        entries.append({
            "index": run.index,
            "turn": run.turn,
            "split": "train" if pos < n_train else "val",
            "file": fname,
            "initial": _state_dict(run.initial),
            "circle": _circle_dict(run.circle),
            "steer_cmds": None if run.steer_cmds is None else list(run.steer_cmds),
            "v_cmds": None if run.v_cmds is None else list(run.v_cmds),
        })
    manifest = {
        "mode": data.mode,
        "seed": data.seed,
        "target_speed": data.target_speed,
        "ema_alpha": data.ema_alpha,
        "poles": None if data.poles is None
        else [[p.real, p.imag] for p in data.poles],
        "rollout": {"dt": data.cfg.dt, "steps": data.cfg.steps,
                    "integrator": data.cfg.integrator,
                    "v_switch": data.cfg.v_switch},
        "true_params": None if data.true_params is None
        else _params_dict(data.true_params),
        "runs": entries,
    }
    path = os.path.join(directory, "manifest.json")
    write_json(path, manifest)
    return path


def _full_state_rows(directory: str, fname: str):
    with open(os.path.join(directory, fname)) as fh:
        header = fh.readline().strip()
        if header != TRAJECTORY_HEADER:
            raise ValueError(f"{fname}: unexpected header {header!r}")
        rows = []
        for line in fh:
            cells = line.rstrip("\n").split(",")
            rows.append([math.nan if c == "" else float(c) for c in cells])
    return rows


def load_dataset(directory: str) -> Dataset:
    manifest_path = os.path.join(directory, "manifest.json")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"dataset manifest not found: {manifest_path}")
    with open(manifest_path) as fh:
        manifest = json.load(fh)

    cfg = RolloutConfig(**manifest["rollout"])
    train: list[ReferenceRun] = []
    val: list[ReferenceRun] = []
    for entry in manifest["runs"]:
        rows = _full_state_rows(directory, entry["file"])
        traj = Trajectory(times=tuple(r[0] for r in rows),
                          xs=tuple(r[1] for r in rows),
                          ys=tuple(r[2] for r in rows),
                          vs=tuple(r[4] for r in rows))
        circle = None
        if entry["circle"] is not None:
            circle = ReferenceCircle(**entry["circle"])
        run = ReferenceRun(
            index=entry["index"], turn=entry["turn"],
            initial=PlantState(**entry["initial"]),
            trajectory=traj, circle=circle,
            steer_cmds=None if entry["steer_cmds"] is None
            else tuple(entry["steer_cmds"]),
            v_cmds=None if entry["v_cmds"] is None else tuple(entry["v_cmds"]),
        )
        (train if entry["split"] == "train" else val).append(run)

    true_params = None
    if manifest.get("true_params"):
        true_params = VehicleParams(**manifest["true_params"])
    poles = None
    if manifest.get("poles"):
        poles = tuple(complex(p[0], p[1]) for p in manifest["poles"])
    return Dataset(mode=manifest["mode"], cfg=cfg,
                   target_speed=manifest["target_speed"],
                   train=tuple(train), val=tuple(val),
                   seed=manifest["seed"], ema_alpha=manifest["ema_alpha"],
                   poles=poles, true_params=true_params)
