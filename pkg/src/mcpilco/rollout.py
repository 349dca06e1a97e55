"""Monte Carlo policy optimization on the learned model.

M particles are propagated through the GP model for T steps. In full-state
mode the policy sees each particle's predicted state directly. In observed
mode every particle also carries its own measurement noise and online
observer chain, so the policy is trained on the same delayed, noisy estimates
it will receive on the real system. The cumulative cost estimate

    J = sum_{t=0..T} mean_m c(x_t^m)

is differentiated by one reverse sweep; all randomness enters through
standard-normal draws fixed before the forward pass (reparametrization).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from mcpilco.core import ad
from mcpilco.core.ad import NonFiniteError, Tape
from mcpilco.core.optim import AdamState, adam_step
from mcpilco.core.rng import as_seed
from mcpilco.dynamics import DeltaModel
from mcpilco.observers import MeasurementModel, ObserverChain
from mcpilco.policy import RbfPolicy, evaluate

log = logging.getLogger(__name__)

__all__ = [
    "Mode", "InitialDistribution", "RolloutConfig", "NoiseDraws", "RolloutDivergedError",
    "draw_noise", "simulate_particles", "policy_gradient", "optimize_policy",
    "OptimizationResult", "AdamState", "adam_step",
]


class Mode(str, Enum):
    FULL_STATE = "full-state"
    OBSERVED_STATE = "observed"


class RolloutDivergedError(FloatingPointError):
    def __init__(self, step: int, particle: int | None, detail: str = ""):
        where = f"step {step}" + (f", particle {particle}" if particle is not None else "")
        super().__init__(f"particle state became non-finite at {where} {detail}".strip())
        self.step, self.particle = step, particle


@dataclass
class InitialDistribution:
    """Per-dimension Gaussian or uniform law over ``[q, qdot]``."""

    kind: str
    a: np.ndarray   # gaussian: mean; uniform: low
    b: np.ndarray   # gaussian: variance; uniform: high

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.kind not in ("gaussian", "uniform"):
            raise ValueError(f"unknown initial distribution '{self.kind}'")
        if self.kind == "gaussian" and np.any(self.b < 0):
            raise ValueError("variances must be non-negative")

    @classmethod
    def gaussian(cls, mean, var):
        return cls("gaussian", mean, var)

    @classmethod
    def uniform(cls, low, high):
        return cls("uniform", low, high)

    @property
    def dim(self) -> int:
        return self.a.size

    def transform(self, eps: np.ndarray) -> np.ndarray:
        """Map standard-normal draws ``(M, dim)`` to samples."""
        if self.kind == "gaussian":
            return self.a + np.sqrt(self.b) * eps
        from scipy.special import ndtr
        return self.a + (self.b - self.a) * ndtr(eps)

    def sample(self, n: int, seed=0) -> np.ndarray:
        return self.transform(as_seed(seed).generator().standard_normal((n, self.dim)))


@dataclass
class RolloutConfig:
    horizon: int
    particles: int
    mode: Mode
    cost: Callable
    initial: InitialDistribution
    policy_input: Callable
    measurement: MeasurementModel | None = None
    observer: ObserverChain | None = None
    # probability of dropping each policy basis function per (particle, step)
    dropout: float = 0.0

    def __post_init__(self):
        self.mode = Mode(self.mode)
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.particles < 1:
            raise ValueError("need at least one particle")
        if self.mode is Mode.OBSERVED_STATE and (self.measurement is None or self.observer is None):
            raise ValueError("observed-state mode needs a measurement model and an observer chain")
        self.dropout = float(self.dropout)
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass
class NoiseDraws:
    """All standard-normal draws a rollout consumes."""

    x0: np.ndarray    # (M, 2 dq)
    model: np.ndarray  # (T, M, dq)
    meas: np.ndarray   # (T, M, dq)
    keep: np.ndarray | None = None   # (T, M, n_b) scaled dropout masks


def draw_noise(cfg: RolloutConfig, dq: int, seed, n_basis: int | None = None) -> NoiseDraws:
    """Independent streams for initial states, GP samples and measurement noise.

    With dropout enabled a fourth stream yields inverted-dropout masks over the
    ``n_basis`` policy basis functions.
    """
    s = as_seed(seed)
    M, T = cfg.particles, cfg.horizon
    keep = None
    if cfg.dropout > 0.0:
        if n_basis is None:
            raise ValueError("dropout masks need n_basis")
        u = s.child(3).generator().random((T, M, n_basis))
        keep = (u >= cfg.dropout) / (1.0 - cfg.dropout)
    return NoiseDraws(s.child(0).generator().standard_normal((M, 2 * dq)),
                      s.child(1).generator().standard_normal((T, M, dq)),
                      s.child(2).generator().standard_normal((T, M, dq)), keep)


def _check_finite(t, *xs):
    for x in xs:
        v = ad.value(x)
        if not np.all(np.isfinite(v)):
            bad = np.nonzero(~np.all(np.isfinite(v.reshape(v.shape[0], -1)), axis=1))[0]
            raise RolloutDivergedError(t, int(bad[0]) if bad.size else None)


@dataclass
class RolloutResult:
    cost: object                 # scalar J (Var when traced)
    states: np.ndarray | None    # (M, T+1, 2 dq) particle states
    observed: np.ndarray | None  # (M, T, 2 dq) policy-side estimates (observed mode)
    controls: np.ndarray | None  # (M, T, du)


def _simulate(cfg: RolloutConfig, model: DeltaModel, policy: RbfPolicy, draws: NoiseDraws,
              record: bool) -> RolloutResult:
    dq = model.dq
    x0 = cfg.initial.transform(draws.x0)
    q, qdot = x0[:, :dq], x0[:, dq:]
    observed = cfg.mode is Mode.OBSERVED_STATE
    chain_state = None
    costs = []
    rec_x, rec_z, rec_u = [], [], []
    for t in range(cfg.horizon + 1):
        costs.append(cfg.cost(q, qdot))
        if record:
            rec_x.append(np.concatenate([ad.value(q), ad.value(qdot)], axis=1))
        if t == cfg.horizon:
            break
        if observed:
            qbar = cfg.measurement.measure(q, draws.meas[t])
            if chain_state is None:
                chain_state = cfg.observer.reset(qbar)
            zq, zv, chain_state = cfg.observer.step(chain_state, qbar, qdot_true=qdot)
            z = cfg.policy_input(zq, zv)
            if record:
                rec_z.append(np.concatenate([ad.value(zq), ad.value(zv)], axis=1))
        else:
            z = cfg.policy_input(q, qdot)
        u = evaluate(policy, z, None if draws.keep is None else draws.keep[t])
        if record:
            rec_u.append(np.array(ad.value(u)))
        q, qdot = model.step_batch(q, qdot, u, draws.model[t])
        _check_finite(t + 1, q, qdot)
    # pairwise summation over all (t, m) entries
    total = ad.sum(ad.stack(costs, axis=0)) / cfg.particles
    if not record:
        return RolloutResult(total, None, None, None)
    return RolloutResult(total, np.stack(rec_x, axis=1),
                         np.stack(rec_z, axis=1) if rec_z else None, np.stack(rec_u, axis=1))


def simulate_particles(cfg: RolloutConfig, model: DeltaModel, policy: RbfPolicy, seed=0,
                       draws: NoiseDraws | None = None, record: bool = True) -> RolloutResult:
    """Forward rollout. ``policy`` may hold traced parameters."""
    if draws is None:
        draws = draw_noise(cfg, model.dq, seed, policy.n_basis)
    return _simulate(cfg, model, policy, draws, record)


def policy_gradient(cfg: RolloutConfig, model: DeltaModel, policy: RbfPolicy, seed=0,
                    draws: NoiseDraws | None = None):
    """Return ``(J, dJ/dtheta)`` over the flattened policy parameters."""
    if draws is None:
        draws = draw_noise(cfg, model.dq, seed, policy.n_basis)
    tape = Tape(check_finite=False)
    theta = tape.variable(policy.flatten())
    res = _simulate(cfg, model, policy.unflatten(theta), draws, record=False)
    grad = tape.gradient(res.cost, theta)
    return float(ad.value(res.cost)), np.asarray(grad)


@dataclass
class OptimizationResult:
    policy: RbfPolicy
    history: list = field(default_factory=list)
    best_cost: float = math.inf
    best_iter: int = -1
    lr: float = 0.0
    halvings: int = 0
    stopped_early: bool = False


def optimize_policy(cfg: RolloutConfig, model: DeltaModel, policy: RbfPolicy, iters: int = 1000,
                    lr: float = 0.01, seed=0, trace_path=None, beta1: float = 0.9,
                    beta2: float = 0.999, lr_final: float | None = None) -> OptimizationResult:
    """Adam on the Monte Carlo cost with fresh particles and noise every iteration.

    With ``lr_final`` the step size decays geometrically from ``lr`` to
    ``lr_final`` over the run. The iterate with the lowest sampled ``J`` is
    returned. A non-finite cost restores that iterate and halves the learning
    rate; after three halvings the run stops.
    """
    seed = as_seed(seed)
    theta = policy.flatten()
    best = OptimizationResult(policy.unflatten(theta.copy()), lr=lr)
    state = AdamState.zeros(theta.size, lr=lr, beta1=beta1, beta2=beta2)
    decay = 1.0 if lr_final is None else lr_final / lr
    scale = 1.0   # halved on divergence
    rows = []
    for it in range(iters):
        state.lr = scale * lr * decay ** (it / max(iters - 1, 1))
        try:
            J, grad = policy_gradient(cfg, model, policy.unflatten(theta), seed=seed.child(it))
            ok = math.isfinite(J) and np.all(np.isfinite(grad))
        except (RolloutDivergedError, NonFiniteError, FloatingPointError) as exc:
            log.warning("iteration %d diverged: %s", it, exc)
            ok, J, grad = False, math.nan, None
        if not ok:
            best.history.append(math.nan)
            rows.append((it, math.nan, math.nan, state.lr))
            if best.halvings == 3:
                best.stopped_early = True
                break
            best.halvings += 1
            scale /= 2.0
            theta = best.policy.flatten()
            state = AdamState.zeros(theta.size, lr=state.lr / 2.0, beta1=beta1, beta2=beta2)
            continue
        best.history.append(J)
        rows.append((it, J, float(np.linalg.norm(grad)), state.lr))
        if J < best.best_cost:
            best.best_cost, best.best_iter = J, it
            best.policy = policy.unflatten(theta.copy())
        state, theta = adam_step(state, theta, grad)
    best.lr = state.lr
    if trace_path is not None:
        write_trace(trace_path, rows)
    return best


def write_trace(path, rows, append=False):
    with open(path, "a" if append else "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        if not append or f.tell() == 0:
            w.writerow(["iter", "J_hat", "grad_norm", "lr"])
        for it, J, gn, lr in rows:
            w.writerow([it, repr(float(J)), repr(float(gn)), repr(float(lr))])
