"""Trial loop, Monte Carlo evaluation and study data export.

Seed layout under the experiment root seed ``r``::

    (r, 0)      exploration controls
    (r, 1, k)   plant initial state and measurement noise of trial k
    (r, 2, k)   policy optimization of trial k
    (r, 3)      policy initialization
    (r, 4, k)   per-trial evaluation runs
    (r, 6)      particle panel export

Both modes use the same layout, so for a given seed they face identical plant
noise and differ only in how particles are generated.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from mcpilco.core.rng import Seed
from mcpilco.dynamics import DeltaModel, InputMap, Trajectory, build_training_set, save_model
from mcpilco.envs.cartpole import CartPoleParams, cartpole_step
from mcpilco.envs.costs import cost_cartpole_abs, cost_pilco
from mcpilco.envs.exploration import exploration_random, exploration_sum_of_sines
from mcpilco.gp.model import GpFitError
from mcpilco.harness.config import ExperimentConfig
from mcpilco.observers import FILTER_CALLS, MeasurementModel, ObserverChain, build_chain
from mcpilco.policy import RbfPolicy, evaluate
from mcpilco.rollout import InitialDistribution, Mode, RolloutConfig, optimize_policy, simulate_particles

log = logging.getLogger(__name__)

PANEL_COLUMNS = ["mode", "run", "t", "p", "pdot", "theta", "thetadot"]


class CartPoleEnv:
    """Everything derived from the environment part of a config."""

    def __init__(self, cfg: ExperimentConfig):
        e = cfg.env
        self.params = CartPoleParams(e.cart_mass, e.pole_mass, e.length, e.friction, e.gravity,
                                     e.substep, e.Ts, e.process_noise_std)
        self.Ts = e.Ts
        self.horizon = e.horizon
        self.measurement = MeasurementModel([e.measurement_noise_std] * 2)
        self.initial = InitialDistribution.gaussian(e.initial_mean, e.initial_var)
        self.input_map = InputMap(2, 1, angle_dims=[1])
        self.u_max = cfg.policy.u_max
        c = cfg.cost
        if c.variant == "cartpole-abs":
            self.cost = lambda q, qd: cost_cartpole_abs(q, qd, c.l_theta, c.l_p)
        else:
            self.cost = lambda q, qd: cost_pilco(q, qd, e.length)
        self.online_stages = cfg.online_observer

    def online_chain(self) -> ObserverChain:
        return build_chain(self.online_stages, self.Ts)

    def policy_input(self, q, qdot):
        return self.input_map.state_features(q, qdot)

    def times(self):
        return np.arange(self.horizon + 1) * self.Ts


@dataclass
class Execution:
    """Batch of plant runs: true states ``(R, T+1, 4)``, measurements, controls."""

    states: np.ndarray
    measured: np.ndarray
    controls: np.ndarray
    online_calls: int = 0

    def trajectory(self, times, r=0) -> Trajectory:
        return Trajectory(times, self.measured[r], self.controls[r])


def execute(env: CartPoleEnv, x0: np.ndarray, meas_eps: np.ndarray, policy: RbfPolicy | None = None,
            controls: np.ndarray | None = None, proc_seed: Seed | None = None) -> Execution:
    """Run the plant for ``R`` initial states.

    With a policy, actions come from the online observer chain applied to noisy
    position measurements; with ``controls`` the given open-loop sequence is
    applied. True velocities are never passed to the policy.
    """
    T = env.horizon
    R = x0.shape[0]
    x = x0.copy()
    rng = proc_seed.generator() if proc_seed is not None else None
    chain = env.online_chain() if policy is not None else None
    st = None
    states, meas, ctl = [x], [], []
    for t in range(T + 1):
        qbar = env.measurement.measure(x[:, :2], meas_eps[t])
        meas.append(qbar)
        if t == T:
            break
        if policy is not None:
            if st is None:
                st = chain.reset(qbar)
            zq, zv, st = chain.step(st, qbar)
            u = np.asarray(evaluate(policy, env.policy_input(zq, zv)))
        else:
            u = np.broadcast_to(controls[t], (R, 1))
        ctl.append(np.array(u))
        x = cartpole_step(env.params, x, u[:, 0], rng)
        states.append(x)
    return Execution(np.stack(states, axis=1), np.stack(meas, axis=1), np.stack(ctl, axis=1),
                     chain.calls if chain is not None else 0)


def plant_noise(env: CartPoleEnv, seed: Seed, n_runs: int):
    g = seed.generator()
    x0 = env.initial.transform(g.standard_normal((n_runs, 4)))
    return x0, g.standard_normal((env.horizon + 1, n_runs, 2))


def wrap_angle(theta):
    return np.angle(np.exp(1j * np.asarray(theta)))


def swing_up_success(env: CartPoleEnv, states: np.ndarray, theta_tol=0.17, p_tol=0.1, window=0.5):
    """Per-run flag: pole within pi +- tol and cart within p_tol over the final window."""
    times = env.times()
    sel = times >= times[-1] - window - 1e-9
    th = wrap_angle(states[:, sel, 1])
    p = states[:, sel, 0]
    return np.all(np.abs(th) >= math.pi - theta_tol, axis=1) & np.all(np.abs(p) <= p_tol, axis=1)


def cumulative_pilco_cost(env: CartPoleEnv, states: np.ndarray) -> np.ndarray:
    return np.sum(cost_pilco(states[..., :2], states[..., 2:], env.params.length), axis=-1)


@dataclass
class EvaluationResult:
    success_rate: float | None
    successes: np.ndarray
    cumulative_cost: np.ndarray
    bundle: Execution | None


def evaluate_policy_mc(policy: RbfPolicy, env: CartPoleEnv, n_runs: int, seed, theta_tol=0.17,
                       p_tol=0.1, window=0.5) -> EvaluationResult:
    """Execute ``policy`` ``n_runs`` times from sampled initial states."""
    if n_runs == 0:
        return EvaluationResult(None, np.zeros(0, bool), np.zeros(0), None)
    seed = seed if isinstance(seed, Seed) else Seed(int(seed))
    x0, eps = plant_noise(env, seed, n_runs)
    ex = execute(env, x0, eps, policy=policy)
    ok = swing_up_success(env, ex.states, theta_tol, p_tol, window)
    return EvaluationResult(float(np.mean(ok)), ok, cumulative_pilco_cost(env, ex.states), ex)


@dataclass
class TrialRecord:
    trial: int
    kind: str
    trajectory_path: str
    cumulative_cost: float
    success: bool
    success_rate: float | None
    interaction_seconds: float
    training_rows: int = 0
    model_path: str | None = None
    policy_path: str | None = None
    trace_path: str | None = None
    best_predicted_cost: float | None = None
    lr_halvings: int = 0
    gp_fit: list = field(default_factory=list)
    filter_calls: dict = field(default_factory=dict)
    error: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class _PhaseCounter:
    """Filter invocations attributed to one phase of a trial."""

    def __init__(self, sink: dict, name: str):
        self.sink, self.name = sink, name

    def __enter__(self):
        self.start = dict(FILTER_CALLS)
        return self

    def __exit__(self, *exc):
        self.sink[self.name] = {k: FILTER_CALLS[k] - self.start.get(k, 0) for k in ("offline", "online")}
        return False


def _rollout_config(cfg: ExperimentConfig, env: CartPoleEnv, dropout: float = 0.0) -> RolloutConfig:
    observed = cfg.mode == "observed"
    return RolloutConfig(env.horizon, cfg.optim.particles, Mode(cfg.mode), env.cost, env.initial,
                         env.policy_input, env.measurement if observed else None,
                         env.online_chain() if observed else None, dropout)


def _explore(cfg: ExperimentConfig, env: CartPoleEnv, root: int) -> np.ndarray:
    ex = cfg.exploration
    if ex.kind == "random":
        return exploration_random(env.u_max, env.horizon, Seed(root, (0,)))
    amp = ex.amplitude if ex.amplitude is not None else env.u_max / math.sqrt(ex.n_waves)
    return exploration_sum_of_sines(amp, env.horizon, env.Ts, ex.n_waves, Seed(root, (0,)), u_max=env.u_max)


@dataclass
class ExperimentResult:
    records: list
    model: DeltaModel | None
    policy: RbfPolicy | None
    out_dir: Path | None
    timings: list = field(default_factory=list)


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Explore, then alternate model learning, policy optimization and execution."""
    out = Path(out_dir or cfg.out_dir) if (out_dir or cfg.out_dir) else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "records.jsonl").write_text("")
        (out / "config.json").write_text(json.dumps(cfg.model_dump(mode="json"), sort_keys=True))
    env = CartPoleEnv(cfg)
    root = cfg.seed
    times = env.times()
    rcfg = _rollout_config(cfg, env, cfg.optim.dropout)
    ev = cfg.evaluation
    data: list[Trajectory] = []
    records, timings = [], []
    model, policy = None, None

    def emit(rec: TrialRecord, tm: dict):
        records.append(rec)
        timings.append(tm)
        if out is not None:
            with open(out / "records.jsonl", "a") as f:
                f.write(rec.to_json() + "\n")
            with open(out / "timings.jsonl", "a") as f:
                f.write(json.dumps(tm, sort_keys=True) + "\n")

    if out is not None:
        (out / "timings.jsonl").write_text("")

    for k in range(1, cfg.trials + 1):
        tdir = out / f"trial_{k}" if out is not None else None
        if tdir is not None:
            tdir.mkdir(exist_ok=True)
        calls: dict = {}
        tm = {"trial": k}
        x0, eps = plant_noise(env, Seed(root, (1, k)), 1)
        rec_kw = {}
        if k == 1:
            t0 = time.perf_counter()
            with _PhaseCounter(calls, "execute"):
                exe = execute(env, x0, eps, controls=_explore(cfg, env, root),
                              proc_seed=Seed(root, (7, k)))
            tm["execute"] = time.perf_counter() - t0
            kind = "exploration"
        else:
            if policy is None or not cfg.optim.warm_start:
                policy = RbfPolicy.initialize(cfg.policy.n_basis, env.input_map.state_dim, 1, env.u_max,
                                              cfg.policy.center_low, cfg.policy.center_high, Seed(root, (3,)),
                                              cfg.policy.init_weight_std, cfg.policy.init_lengthscale)
            t0 = time.perf_counter()
            trace = tdir / "trace.csv" if tdir is not None else None
            with _PhaseCounter(calls, "optimize"):
                res = optimize_policy(rcfg, model, policy, cfg.optim.iters, cfg.optim.lr,
                                      Seed(root, (2, k)), trace, lr_final=cfg.optim.lr_final)
            tm["optimize"] = time.perf_counter() - t0
            policy = res.policy
            rec_kw.update(best_predicted_cost=res.best_cost if math.isfinite(res.best_cost) else None,
                          lr_halvings=res.halvings)
            if trace is not None:
                rec_kw["trace_path"] = str(Path(f"trial_{k}") / "trace.csv")
            if tdir is not None:
                policy.save(tdir / "policy.json")
                rec_kw["policy_path"] = str(Path(f"trial_{k}") / "policy.json")
            t0 = time.perf_counter()
            with _PhaseCounter(calls, "execute"):
                exe = execute(env, x0, eps, policy=policy, proc_seed=Seed(root, (7, k)))
            tm["execute"] = time.perf_counter() - t0
            kind = "policy"
        traj = exe.trajectory(times)
        data.append(traj)
        ok = bool(swing_up_success(env, exe.states, ev.theta_tol, ev.p_tol, ev.window)[0])
        rate = float(ok)
        if kind == "policy" and ev.per_trial and ev.n_runs > 0:
            t0 = time.perf_counter()
            rate = evaluate_policy_mc(policy, env, ev.n_runs, Seed(root, (4, k)), ev.theta_tol,
                                      ev.p_tol, ev.window).success_rate
            tm["evaluate"] = time.perf_counter() - t0
        tpath = ""
        if tdir is not None:
            traj.to_csv(tdir / "trajectory.csv")
            _write_states(tdir / "true_states.csv", times, exe.states[0])
            tpath = str(Path(f"trial_{k}") / "trajectory.csv")
        rec = TrialRecord(k, kind, tpath, float(cumulative_pilco_cost(env, exe.states)[0]), ok, rate,
                          k * env.horizon * env.Ts, filter_calls=calls, **rec_kw)
        # refit on everything collected so far; the next trial optimizes on this model
        t0 = time.perf_counter()
        try:
            with _PhaseCounter(calls, "learn"):
                ts = build_training_set(data, env.input_map, cfg.offline_filter)
                iters = cfg.gp.iters_first if model is None else cfg.gp.iters
                model, reports = DeltaModel.train(ts, env.Ts, env.input_map, cfg.gp.kernel, iters, cfg.gp.lr,
                                                  warm_start=model if cfg.gp.warm_start else None)
        except (GpFitError, ValueError, FloatingPointError) as exc:
            log.error("model learning failed in trial %d: %s", k, exc)
            rec.error = f"model-learning: {exc}"
            emit(rec, tm)
            break
        tm["learn"] = time.perf_counter() - t0
        rec.training_rows = ts.n
        rec.gp_fit = [{"initial_lml": r.initial_lml, "final_lml": r.final_lml, "iters": r.iters,
                       "diverged": r.diverged, "noise_var": gp.noise_var}
                      for r, gp in zip(reports, model.gps)]
        if tdir is not None:
            save_model(model, tdir / "model.json")
            rec.model_path = str(Path(f"trial_{k}") / "model.json")
        emit(rec, tm)
    return ExperimentResult(records, model, policy, out, timings)


def _write_states(path, times, states):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t", "p", "theta", "pdot", "thetadot"])
        for t, x in zip(times, states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x])


def _panel_rows(mode: str, states: np.ndarray, times):
    # states are [p, theta, pdot, thetadot]; columns follow PANEL_COLUMNS
    for r in range(states.shape[0]):
        for t, x in zip(times, states[r]):
            yield [mode, r, repr(float(t)), repr(float(x[0])), repr(float(x[2])),
                   repr(float(x[1])), repr(float(x[3]))]


def emit_study_data(panels: dict, out_dir, times) -> list[Path]:
    """Write one CSV per panel.

    ``panels`` maps a panel name (e.g. ``"particles"``, ``"executed"``) to a
    dict ``{mode: states (R, T+1, 4)}``. Returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name in sorted(panels):
        p = out / f"{name}.csv"
        with open(p, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(PANEL_COLUMNS)
            for mode in sorted(panels[name]):
                w.writerows(_panel_rows(mode, panels[name][mode], times))
        paths.append(p)
    return paths


def particle_panel(cfg: ExperimentConfig, model: DeltaModel, policy: RbfPolicy) -> np.ndarray:
    env = CartPoleEnv(cfg)
    res = simulate_particles(_rollout_config(cfg, env), model, policy, seed=Seed(cfg.seed, (6,)))
    return res.states


@dataclass
class RunSummary:
    mode: str
    seed: int
    records: list
    final_success_rate: float | None
    final_mean_cost: float | None


def run_study(base: ExperimentConfig, seeds, modes=("full-state", "observed"), out_dir=None,
              n_runs: int | None = None) -> list[RunSummary]:
    """Train every (mode, seed) pair, evaluate the final policies and export panels."""
    out = Path(out_dir) if out_dir is not None else None
    runs = []
    panels = {"particles": {}, "executed": {}}
    for mode in modes:
        for s in seeds:
            cfg = base.model_copy(update={"mode": mode, "seed": int(s)})
            rdir = out / mode / f"seed_{s}" if out is not None else None
            res = run_experiment(cfg, rdir)
            env = CartPoleEnv(cfg)
            n = cfg.evaluation.n_runs if n_runs is None else n_runs
            rate, cost = None, None
            if res.policy is not None and not any(r.error for r in res.records):
                ev = evaluate_policy_mc(res.policy, env, n, Seed(cfg.seed, (5,)), cfg.evaluation.theta_tol,
                                        cfg.evaluation.p_tol, cfg.evaluation.window)
                rate = ev.success_rate
                cost = float(np.mean(ev.cumulative_cost)) if n else None
                if rdir is not None and ev.bundle is not None:
                    emit_study_data({"executed": {mode: ev.bundle.states},
                                     "particles": {mode: particle_panel(cfg, res.model, res.policy)}},
                                    rdir / "panels", env.times())
                if s == seeds[0] and ev.bundle is not None:
                    panels["executed"][mode] = ev.bundle.states
                    panels["particles"][mode] = particle_panel(cfg, res.model, res.policy)
            runs.append(RunSummary(mode, int(s), res.records, rate, cost))
    if out is not None:
        write_study_tables(runs, out)
        if all(panels.values()):
            emit_study_data(panels, out / "panels", CartPoleEnv(base).times())
    return runs


def write_study_tables(runs: list, out_dir) -> None:
    out = Path(out_dir)
    with open(out / "study_trials.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["mode", "seed", "trial", "success", "success_rate", "cumulative_cost"])
        for r in runs:
            for rec in r.records:
                w.writerow([r.mode, r.seed, rec.trial, int(rec.success),
                            "" if rec.success_rate is None else repr(rec.success_rate),
                            repr(rec.cumulative_cost)])
    with open(out / "study_final.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["mode", "seed", "success_rate", "mean_cumulative_cost"])
        for r in runs:
            w.writerow([r.mode, r.seed, "" if r.final_success_rate is None else repr(r.final_success_rate),
                        "" if r.final_mean_cost is None else repr(r.final_mean_cost)])


def trial_success_trend(runs: list, mode: str) -> list[float]:
    """Mean per-trial success rate over the seeds of one mode."""
    sel = [r for r in runs if r.mode == mode]
    n = max(len(r.records) for r in sel)
    out = []
    for k in range(n):
        vals = [r.records[k].success_rate for r in sel if k < len(r.records)]
        vals = [0.0 if v is None else v for v in vals]
        out.append(float(np.mean(vals)))
    return out
