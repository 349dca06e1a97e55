"""One-step-ahead model: GPs on velocity changes, positions by integration.

For each velocity component a separate GP predicts
``delta = qdot[t+1] - qdot[t]``; the next state assumes constant acceleration
over the sample period::

    q[t+1]    = q[t] + Ts * qdot[t] + Ts / 2 * delta
    qdot[t+1] = qdot[t] + delta
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from mcpilco.core import ad
from mcpilco.core.rng import as_seed
from mcpilco.core.types import State
from mcpilco.gp import GaussianProcess, make_kernel
from mcpilco.observers import KalmanSpec, central_difference, kalman_smooth


class InputMap:
    """``(q, qdot, u) -> [q_linear, qdot, sin(q_angle), cos(q_angle), u]``.

    Angles are replaced by their sine and cosine, which removes the 2*pi
    ambiguity from the GP input. Works on single rows or particle batches.
    """

    def __init__(self, dq: int, du: int, angle_dims: Sequence[int] = ()):
        self.dq, self.du = int(dq), int(du)
        self.angle_dims = [int(i) for i in angle_dims]
        self.linear_dims = [i for i in range(self.dq) if i not in self.angle_dims]

    @property
    def state_dim(self) -> int:
        return len(self.linear_dims) + self.dq + 2 * len(self.angle_dims)

    @property
    def dim(self) -> int:
        return self.state_dim + self.du

    def state_features(self, q, qdot):
        parts = []
        if self.linear_dims:
            parts.append(q[:, self.linear_dims] if len(self.linear_dims) < self.dq else q)
        parts.append(qdot)
        if self.angle_dims:
            ang = q[:, self.angle_dims] if len(self.angle_dims) < self.dq else q
            parts += [ad.sin(ang), ad.cos(ang)]
        return ad.concatenate(parts, axis=1)

    def __call__(self, q, qdot, u):
        return ad.concatenate([self.state_features(q, qdot), u], axis=1)

    def to_dict(self):
        return {"dq": self.dq, "du": self.du, "angle_dims": self.angle_dims}


@dataclass
class Trajectory:
    """Measured positions ``(T+1, dq)`` and applied controls ``(T, du)`` at uniform spacing."""

    times: np.ndarray
    positions: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64).ravel()
        self.positions = np.atleast_2d(np.asarray(self.positions, dtype=np.float64))
        self.controls = np.asarray(self.controls, dtype=np.float64).reshape(len(self.times) - 1, -1)
        if self.positions.shape[0] != self.times.shape[0]:
            raise ValueError("positions need one row per time stamp")
        if len(self.times) > 2:
            dt = np.diff(self.times)
            if np.max(np.abs(dt - dt[0])) > 1e-9 * max(abs(dt[0]), 1e-300) + 1e-12:
                raise ValueError("time stamps must be uniformly spaced")

    @property
    def T(self) -> int:
        return len(self.times) - 1

    @property
    def Ts(self) -> float:
        return float(self.times[1] - self.times[0])

    def truncate(self, n_steps: int) -> "Trajectory":
        """Keep the first ``n_steps`` transitions, e.g. up to a collision."""
        return Trajectory(self.times[:n_steps + 1], self.positions[:n_steps + 1],
                          self.controls[:n_steps])

    def to_csv(self, path) -> None:
        dq, du = self.positions.shape[1], self.controls.shape[1]
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["t"] + [f"q_{i + 1}" for i in range(dq)] + [f"u_{i + 1}" for i in range(du)])
            for k, t in enumerate(self.times):
                u = [repr(float(v)) for v in self.controls[k]] if k < self.T else [""] * du
                w.writerow([repr(float(t))] + [repr(float(v)) for v in self.positions[k]] + u)

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with open(path, newline="") as f:
            rows = list(csv.reader(f))
        header, body = rows[0], rows[1:]
        qi = [i for i, h in enumerate(header) if h.startswith("q_")]
        ui = [i for i, h in enumerate(header) if h.startswith("u_")]
        times = [float(r[0]) for r in body]
        pos = [[float(r[i]) for i in qi] for r in body]
        ctl = [[float(r[i]) for i in ui] for r in body[:-1]]
        return cls(np.array(times), np.array(pos), np.array(ctl).reshape(len(body) - 1, len(ui)))


@dataclass
class TrainingSet:
    inputs: np.ndarray
    targets: np.ndarray
    positions: np.ndarray = field(default=None)
    velocities: np.ndarray = field(default=None)
    controls: np.ndarray = field(default=None)
    times: np.ndarray = field(default=None)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def to_csv(self, path) -> None:
        dq, du = self.positions.shape[1], self.controls.shape[1]
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["t"] + [f"q_{i + 1}" for i in range(dq)] + [f"qdot_{i + 1}" for i in range(dq)]
                       + [f"u_{i + 1}" for i in range(du)] + [f"y_{i + 1}" for i in range(dq)])
            for k in range(self.n):
                row = [self.times[k], *self.positions[k], *self.velocities[k], *self.controls[k],
                       *self.targets[k]]
                w.writerow([repr(float(v)) for v in row])


def _concat(sets: list) -> TrainingSet:
    return TrainingSet(*[np.concatenate([getattr(s, f) for s in sets], axis=0)
                         for f in ("inputs", "targets", "positions", "velocities", "controls", "times")])


def build_training_set(traj, input_map: InputMap, offline_filter: str = "central-difference",
                       kalman: KalmanSpec | None = None) -> TrainingSet:
    """GP data from measured trajectories using an acausal velocity estimate.

    With central differences the first and last samples have no velocity and
    each trajectory contributes ``T - 2`` rows. The Kalman smoother yields
    velocities everywhere and contributes ``T`` rows. Several trajectories are
    processed independently and concatenated.
    """
    if isinstance(traj, (list, tuple)):
        return _concat([build_training_set(t, input_map, offline_filter, kalman) for t in traj])
    if traj.T < 3:
        raise ValueError(f"trajectory too short for training data: T={traj.T} < 3")
    Ts = traj.Ts
    if offline_filter == "central-difference":
        vel = central_difference(traj.positions, Ts)  # rows 1..T-1
        pos = traj.positions[1:-1]
        rows = np.arange(1, traj.T - 1)
        v_now, v_next = vel[:-1], vel[1:]
        p_now = pos[:-1]
    elif offline_filter == "kalman-smoother":
        spec = kalman or KalmanSpec(Ts)
        means = kalman_smooth(spec, traj.positions)[0]  # (T+1, dq, 2)
        rows = np.arange(0, traj.T)
        p_now, v_now, v_next = means[:-1, :, 0], means[:-1, :, 1], means[1:, :, 1]
    else:
        raise ValueError(f"unknown offline filter '{offline_filter}'")
    u = traj.controls[rows]
    inputs = np.asarray(input_map(p_now, v_now, u))
    return TrainingSet(inputs, v_next - v_now, p_now, v_now, u, traj.times[rows])


def integrate(q, qdot, delta, Ts: float):
    """Constant-acceleration update for a velocity change ``delta``."""
    return q + Ts * qdot + (0.5 * Ts) * delta, qdot + delta


class DeltaModel:
    """One GP per velocity component, sharing an input map and sample time."""

    def __init__(self, gps: list, Ts: float, input_map: InputMap):
        if Ts <= 0:
            raise ValueError("sampling time must be positive")
        if len(gps) != input_map.dq:
            raise ValueError("need one GP per velocity component")
        self.gps = list(gps)
        self.Ts = float(Ts)
        self.input_map = input_map

    @property
    def dq(self) -> int:
        return self.input_map.dq

    @classmethod
    def train(cls, data: TrainingSet, Ts: float, input_map: InputMap, kernel="se",
              iters=1500, lr=0.01, warm_start=None, kernel_opts=None):
        """Fit one GP per component; ``warm_start`` seeds hyperparameters from a previous model."""
        gps, reports = [], []
        for i in range(input_map.dq):
            if warm_start is not None:
                prev = warm_start.gps[i]
                gp = GaussianProcess(prev.kernel.copy(), data.inputs, data.targets[:, i],
                                     noise_var=prev.noise_var)
            else:
                k = make_kernel(kernel, input_map.dim, **(kernel_opts or {}))
                gp = GaussianProcess.from_data(k, data.inputs, data.targets[:, i])
            reports.append(gp.optimize_hyperparameters(iters, lr))
            gps.append(gp)
        return cls(gps, Ts, input_map), reports

    def step_batch(self, q, qdot, u, eps):
        """Unchecked batched step on ``(M, dq)`` arrays or Vars; returns ``(q', qdot')``."""
        x = self.input_map(q, qdot, u)
        delta = ad.stack([gp.sample(x, eps[:, i]) for i, gp in enumerate(self.gps)], axis=1)
        return integrate(q, qdot, delta, self.Ts)

    def predict_step(self, state: State, u, eps=None, delta=None) -> State:
        """Sample the next state; ``delta`` overrides the GP draw when given."""
        q, qdot = state.q, state.qdot
        single = np.ndim(ad.value(q)) == 1
        if single:
            q, qdot = ad.reshape(q, (1, -1)), ad.reshape(qdot, (1, -1))
            u = ad.reshape(u, (1, -1))
        if delta is None:
            x = self.input_map(q, qdot, u)
            eps = np.zeros((np.shape(ad.value(q))[0], self.dq)) if eps is None \
                else np.reshape(eps, (-1, self.dq))
            cols = [gp.sample(x, eps[:, i]) for i, gp in enumerate(self.gps)]
            delta = ad.stack(cols, axis=1)
        elif single:
            delta = ad.reshape(delta, (1, -1))
        q1, qd1 = integrate(q, qdot, delta, self.Ts)
        if single:
            q1, qd1 = ad.reshape(q1, (-1,)), ad.reshape(qd1, (-1,))
        return State(q1, qd1)

    def rollout_open_loop(self, initial: State, controls, seed=0) -> list:
        controls = np.asarray(controls, dtype=np.float64).reshape(-1, self.input_map.du) \
            if np.size(controls) else np.zeros((0, self.input_map.du))
        eps = as_seed(seed).generator().standard_normal((len(controls), self.dq))
        out = [initial]
        for t, u in enumerate(controls):
            out.append(self.predict_step(out[-1], u, eps[t]))
        return out

    def to_dict(self):
        return {"Ts": self.Ts, "input_map": self.input_map.to_dict(),
                "gps": [gp.to_dict() for gp in self.gps]}

    @classmethod
    def from_dict(cls, d):
        return cls([GaussianProcess.from_dict(g) for g in d["gps"]], d["Ts"], InputMap(**d["input_map"]))


def predict_step(model: DeltaModel, state: State, control, eps=None, delta=None) -> State:
    return model.predict_step(state, control, eps, delta)


def rollout_open_loop(model: DeltaModel, initial: State, controls, seed=0) -> list:
    return model.rollout_open_loop(initial, controls, seed)


def save_model(model: DeltaModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()))


def load_model(path) -> DeltaModel:
    return DeltaModel.from_dict(json.loads(Path(path).read_text()))
