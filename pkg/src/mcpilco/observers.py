"""Measurement system and state observers.

Offline filters (central difference, Kalman smoother) see the whole recorded
trajectory and are used only to build GP training data. Online filters are
causal, run inside :class:`ObserverChain`, and see only the measurements up to
the current step; the same chain runs on the plant and inside particle
rollouts. All online stages are linear in their inputs so gradients pass
through them.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

# instrumentation: how often each filter family has been invoked
FILTER_CALLS: Counter = Counter()


@dataclass
class MeasurementModel:
    """Additive white Gaussian noise on positions."""

    noise_std: np.ndarray

    def __post_init__(self):
        self.noise_std = np.atleast_1d(np.asarray(self.noise_std, dtype=np.float64))
        if np.any(self.noise_std < 0):
            raise ValueError("measurement noise std must be non-negative")

    def measure(self, q, eps):
        return q + self.noise_std * eps


def measure(mm: MeasurementModel, q, eps):
    return mm.measure(q, eps)


# -- offline filters ----------------------------------------------------------

def central_difference(q: np.ndarray, Ts: float) -> np.ndarray:
    """Acausal velocity estimate ``(q[t+1] - q[t-1]) / 2Ts`` at the interior samples.

    Returns an array with two fewer rows than ``q`` (rows 1..T-1).
    """
    FILTER_CALLS["offline"] += 1
    q = np.asarray(q, dtype=np.float64)
    if q.shape[0] < 3:
        raise ValueError("central difference needs at least three samples")
    return (q[2:] - q[:-2]) / (2.0 * Ts)


@dataclass(frozen=True)
class KalmanSpec:
    """Constant-velocity model for one coordinate.

    ``process_noise`` is the spectral density of a white acceleration; the
    discrete process covariance follows from integrating it over ``Ts``.
    """

    Ts: float
    process_noise: float = 1.0
    measurement_var: float = 1e-4
    initial_cov: tuple = ((1e-4, 0.0), (0.0, 1.0))

    @property
    def F(self):
        return np.array([[1.0, self.Ts], [0.0, 1.0]])

    @property
    def Q(self):
        t = self.Ts
        return self.process_noise * np.array([[t**3 / 3.0, t**2 / 2.0], [t**2 / 2.0, t]])

    @property
    def H(self):
        return np.array([[1.0, 0.0]])

    @property
    def P0(self):
        return np.array(self.initial_cov, dtype=np.float64)


def _check_spd(P):
    try:
        np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        raise np.linalg.LinAlgError("covariance lost positive definiteness") from None


def kalman_predict(spec: KalmanSpec, x, P):
    F = spec.F
    return F @ x, F @ P @ F.T + spec.Q


def kalman_update(spec: KalmanSpec, x, P, y):
    H = spec.H
    S = float((H @ P @ H.T)[0, 0]) + spec.measurement_var
    K = (P @ H.T / S).ravel()
    x = x + K * (y - float((H @ x)[0]))
    P = P - np.outer(K, H @ P)
    P = 0.5 * (P + P.T)
    _check_spd(P)
    return x, P, K


def kalman_filter_step(spec: KalmanSpec, x, P, y):
    """Predict with the constant-velocity model, then update on measurement ``y``."""
    x, P = kalman_predict(spec, np.asarray(x, dtype=np.float64), np.asarray(P, dtype=np.float64))
    x, P, _ = kalman_update(spec, x, P, y)
    return x, P


def kalman_filter(spec: KalmanSpec, ys):
    """Run the filter over a 1-D measurement sequence.

    The state starts at ``[ys[0], 0]`` with covariance ``P0`` and the first
    sample is an update without prediction. Returns filtered means ``(T, 2)``,
    covariances ``(T, 2, 2)``, and the one-step predictions used by the
    smoother.
    """
    ys = np.asarray(ys, dtype=np.float64)
    T = ys.shape[0]
    xs, Ps = np.zeros((T, 2)), np.zeros((T, 2, 2))
    xp, Pp = np.zeros((T, 2)), np.zeros((T, 2, 2))
    x, P = np.array([ys[0], 0.0]), spec.P0
    for t in range(T):
        if t > 0:
            x, P = kalman_predict(spec, x, P)
        xp[t], Pp[t] = x, P
        x, P, _ = kalman_update(spec, x, P, ys[t])
        xs[t], Ps[t] = x, P
    return xs, Ps, xp, Pp


def kalman_smooth(spec: KalmanSpec, ys):
    """Rauch-Tung-Striebel smoother.

    ``ys`` is ``(T,)`` or ``(T, d)`` (coordinates smoothed independently).
    Returns ``(means, covs, filtered_means, filtered_covs)``; means have shape
    ``(T, 2)`` or ``(T, d, 2)`` holding ``[position, velocity]``.
    """
    FILTER_CALLS["offline"] += 1
    ys = np.asarray(ys, dtype=np.float64)
    if ys.shape[0] < 2:
        raise ValueError("smoothing needs at least two measurements")
    if ys.ndim == 2:
        parts = [kalman_smooth(spec, ys[:, j]) for j in range(ys.shape[1])]
        FILTER_CALLS["offline"] -= ys.shape[1]
        return tuple(np.stack([p[i] for p in parts], axis=1) for i in range(4))
    xs, Ps, xp, Pp = kalman_filter(spec, ys)
    F = spec.F
    xsm, Psm = xs.copy(), Ps.copy()
    for t in range(len(ys) - 2, -1, -1):
        G = Ps[t] @ F.T @ np.linalg.inv(Pp[t + 1])
        xsm[t] = xs[t] + G @ (xsm[t + 1] - xp[t + 1])
        P = Ps[t] + G @ (Psm[t + 1] - Pp[t + 1]) @ G.T
        Psm[t] = 0.5 * (P + P.T)
    return xsm, Psm, xs, Ps


# -- online stages ------------------------------------------------------------

def causal_difference(prev_q, q, Ts: float):
    """Backward difference ``(q_t - q_{t-1}) / Ts``; zero when there is no history."""
    if prev_q is None:
        return 0.0 * q
    return (q - prev_q) / Ts


def low_pass_first_order(prev_z, raw, alpha: float):
    """``z_t = alpha raw_t + (1 - alpha) z_{t-1}``, seeded with the first raw sample."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must lie in (0, 1]")
    if prev_z is None:
        return raw
    return alpha * raw + (1.0 - alpha) * prev_z


class CausalDifference:
    kind = "causal-difference"
    source = True
    memory = (1, 0)

    def __init__(self, Ts: float):
        self.Ts = float(Ts)

    def reset(self, qbar0):
        return qbar0

    def step(self, state, qbar, pos, vel, qdot_true):
        return qbar, pos, causal_difference(state, qbar, self.Ts)

    def to_dict(self):
        return {"type": self.kind}


class LowPass:
    """First-order low-pass on the velocity estimate of the previous stage."""

    kind = "low-pass"
    source = False
    memory = (0, 1)

    def __init__(self, alpha: float = 0.5):
        if not 0.0 < alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        self.alpha = float(alpha)

    def reset(self, qbar0):
        return None

    def step(self, state, qbar, pos, vel, qdot_true):
        z = low_pass_first_order(state, vel, self.alpha)
        return z, pos, z

    def to_dict(self):
        return {"type": self.kind, "alpha": self.alpha}


class KalmanStage:
    """Online constant-velocity Kalman filter, one per coordinate.

    The gain sequence depends only on the step index, so it is computed on
    plain arrays and enters the traced graph as a constant.
    """

    kind = "kalman"
    source = True
    memory = (0, 1)

    def __init__(self, spec: KalmanSpec):
        self.spec = spec

    def reset(self, qbar0):
        return {"pos": None, "vel": None, "P": self.spec.P0, "qbar0": qbar0}

    def step(self, state, qbar, pos, vel, qdot_true):
        spec = self.spec
        P = state["P"]
        if state["pos"] is None:
            ppos, pvel = state["qbar0"], 0.0 * qbar
        else:
            ppos, pvel = state["pos"] + spec.Ts * state["vel"], state["vel"]
            P = spec.F @ P @ spec.F.T + spec.Q
        _, P, K = kalman_update(spec, np.zeros(2), P, 0.0)
        innov = qbar - ppos
        new_pos = ppos + K[0] * innov
        new_vel = pvel + K[1] * innov
        return {"pos": new_pos, "vel": new_vel, "P": P, "qbar0": None}, new_pos, new_vel

    def to_dict(self):
        s = self.spec
        return {"type": self.kind, "process_noise": s.process_noise,
                "measurement_var": s.measurement_var, "initial_cov": [list(r) for r in s.initial_cov]}


class ExactVelocity:
    """Oracle stage that forwards the true velocity (diagnostics only)."""

    kind = "exact"
    source = True
    memory = (0, 0)

    def reset(self, qbar0):
        return None

    def step(self, state, qbar, pos, vel, qdot_true):
        if qdot_true is None:
            raise ValueError("the exact-velocity stage needs the true velocity")
        return None, pos, qdot_true

    def to_dict(self):
        return {"type": self.kind}


class ChainNotInitialized(RuntimeError):
    pass


class ObserverChain:
    """Ordered online stages mapping measured positions to an observed state.

    The first stage must be a source (it produces a velocity estimate from
    positions); later stages refine that estimate. State is kept outside the
    chain, as a list returned by :meth:`reset` and threaded through
    :meth:`step`, so one chain object serves any number of particles.
    """

    def __init__(self, stages: list):
        if not stages:
            raise ValueError("observer chain needs at least one stage")
        if not stages[0].source:
            raise ValueError(f"first stage must estimate velocity, got '{stages[0].kind}'")
        if any(s.source for s in stages[1:]):
            raise ValueError("only the first stage may be a velocity source")
        self.stages = list(stages)
        self.calls = 0

    @property
    def memory_depths(self) -> tuple[int, int]:
        """``(m_q, m_z)``: past measurements and past outputs the chain retains."""
        return (max(s.memory[0] for s in self.stages), max(s.memory[1] for s in self.stages))

    def reset(self, qbar0):
        return [s.reset(qbar0) for s in self.stages]

    def step(self, states, qbar, qdot_true=None):
        """Return ``(positions, velocities, new_states)`` for measurement ``qbar``."""
        if states is None:
            raise ChainNotInitialized("call reset() with the first measurement before step()")
        self.calls += 1
        FILTER_CALLS["online"] += 1
        pos, vel, new = qbar, None, []
        for stage, st in zip(self.stages, states):
            st, pos, vel = stage.step(st, qbar, pos, vel, qdot_true)
            new.append(st)
        return pos, vel, new

    def to_dict(self):
        return {"stages": [s.to_dict() for s in self.stages]}


def observe(chain: ObserverChain, states, qbar, qdot_true=None):
    return chain.step(states, qbar, qdot_true)


def build_chain(stages: list, Ts: float) -> ObserverChain:
    """Build a chain from config dicts such as ``[{"type": "causal-difference"}, ...]``."""
    out = []
    for cfg in stages:
        cfg = dict(cfg)
        kind = cfg.pop("type")
        if kind == "causal-difference":
            out.append(CausalDifference(Ts, **cfg))
        elif kind == "low-pass":
            out.append(LowPass(**cfg))
        elif kind == "kalman":
            if "initial_cov" in cfg:
                cfg["initial_cov"] = tuple(tuple(r) for r in cfg["initial_cov"])
            out.append(KalmanStage(KalmanSpec(Ts, **cfg)))
        elif kind == "exact":
            out.append(ExactVelocity(**cfg))
        else:
            raise ValueError(f"unknown observer stage '{kind}'")
    return ObserverChain(out)
