"""Experiment configuration schema.

Configs are YAML files with the tree below; every section is optional and
unknown keys are rejected before any computation starts::

    seed: 0
    trials: 5
    mode: observed            # or full-state
    out_dir: runs/example
    env: {Ts: 0.0333333, horizon: 90, measurement_noise_std: 0.003, ...}
    cost: {variant: cartpole-abs, l_theta: 3.0, l_p: 1.0}
    gp: {kernel: se, iters_first: 1000, iters: 300, lr: 0.01, warm_start: true}
    offline_filter: central-difference
    online_observer: [{type: causal-difference}, {type: low-pass, alpha: 0.5}]
    policy: {n_basis: 200, u_max: 10.0, center_low: [...], center_high: [...]}
    optim: {particles: 50, iters: 300, lr: 0.01, warm_start: true}
    exploration: {kind: random}
    evaluation: {n_runs: 50, theta_tol: 0.17, p_tol: 0.1, window: 0.5}
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class EnvConfig(_Strict):
    name: Literal["cartpole"] = "cartpole"
    cart_mass: float = Field(0.5, gt=0)
    pole_mass: float = Field(0.5, gt=0)
    length: float = Field(0.5, gt=0)
    friction: float = Field(0.1, ge=0)
    gravity: float = Field(9.81, gt=0)
    substep: float = Field(1e-3, gt=0)
    Ts: float = Field(1.0 / 30.0, gt=0)
    process_noise_std: float = Field(0.0, ge=0)
    horizon: int = Field(90, ge=1)
    measurement_noise_std: float = Field(3e-3, ge=0)
    initial_mean: list[float] = [0.0, 0.0, 0.0, 0.0]
    initial_var: list[float] = [1e-4, 1e-4, 1e-4, 1e-4]

    @field_validator("initial_mean", "initial_var")
    @classmethod
    def _four(cls, v):
        if len(v) != 4:
            raise ValueError("cart-pole initial distribution needs 4 entries [p, theta, pdot, thetadot]")
        return v


class CostConfig(_Strict):
    variant: Literal["cartpole-abs", "pilco"] = "cartpole-abs"
    l_theta: float = Field(3.0, gt=0)
    l_p: float = Field(1.0, gt=0)


class GpConfig(_Strict):
    kernel: str = "se"
    iters_first: int = Field(1000, ge=0)
    iters: int = Field(300, ge=0)
    lr: float = Field(0.01, gt=0)
    warm_start: bool = True


class PolicyConfig(_Strict):
    n_basis: int = Field(200, ge=1)
    u_max: float = Field(10.0, gt=0)
    # policy input [p, pdot, thetadot, sin(theta), cos(theta)]
    center_low: list[float] = [-1.0, -3.0, -8.0, -1.0, -1.0]
    center_high: list[float] = [1.0, 3.0, 8.0, 1.0, 1.0]
    # None: u_max / 10 and the half-width of the center box
    init_weight_std: Optional[float] = Field(10.0, gt=0)
    init_lengthscale: Optional[list[float]] = [1.0, 1.0, 1.0, 1.0, 1.0]

    @model_validator(mode="after")
    def _ranges(self):
        if len(self.center_low) != len(self.center_high):
            raise ValueError("center_low and center_high differ in length")
        if any(h <= lo for lo, h in zip(self.center_low, self.center_high)):
            raise ValueError("center range must have positive width in every dimension")
        ls = self.init_lengthscale
        if ls is not None and (len(ls) != len(self.center_low) or min(ls) <= 0):
            raise ValueError("init_lengthscale needs one positive entry per policy input")
        return self


class OptimConfig(_Strict):
    particles: int = Field(50, ge=1)
    iters: int = Field(300, ge=0)
    lr: float = Field(0.1, gt=0)
    lr_final: Optional[float] = Field(0.02, gt=0)   # geometric decay target
    dropout: float = Field(0.0, ge=0, lt=1)          # policy basis dropout while optimizing
    warm_start: bool = True


class ExplorationConfig(_Strict):
    kind: Literal["random", "sum-of-sines"] = "random"
    amplitude: Optional[float] = None
    n_waves: int = Field(10, ge=1)


class EvaluationConfig(_Strict):
    n_runs: int = Field(50, ge=0)
    theta_tol: float = Field(0.17, gt=0)
    p_tol: float = Field(0.1, gt=0)
    window: float = Field(0.5, gt=0)
    per_trial: bool = True


class ExperimentConfig(_Strict):
    seed: int = Field(0, ge=0, lt=2**64)
    trials: int = Field(5, ge=1)
    mode: Literal["full-state", "observed"] = "observed"
    out_dir: Optional[str] = None
    env: EnvConfig = EnvConfig()
    cost: CostConfig = CostConfig()
    gp: GpConfig = GpConfig()
    offline_filter: Literal["central-difference", "kalman-smoother"] = "central-difference"
    online_observer: list[dict] = [{"type": "causal-difference"}, {"type": "low-pass", "alpha": 0.5}]
    policy: PolicyConfig = PolicyConfig()
    optim: OptimConfig = OptimConfig()
    exploration: ExplorationConfig = ExplorationConfig()
    evaluation: EvaluationConfig = EvaluationConfig()

    @field_validator("online_observer")
    @classmethod
    def _stages(cls, v):
        known = {"causal-difference", "low-pass", "kalman", "exact"}
        for st in v:
            if st.get("type") not in known:
                raise ValueError(f"unknown observer stage {st.get('type')!r}")
        if not v:
            raise ValueError("online observer needs at least one stage")
        return v


def paper_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """Particle and evaluation counts of the original study (M = 400, 400 runs)."""
    return cfg.model_copy(update={
        "optim": cfg.optim.model_copy(update={"particles": 400}),
        "evaluation": cfg.evaluation.model_copy(update={"n_runs": 400}),
    })


def load_config(path) -> ExperimentConfig:
    raw = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(raw, dict):
        raise ValueError("config root must be a mapping")
    return ExperimentConfig.model_validate(raw)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True)
