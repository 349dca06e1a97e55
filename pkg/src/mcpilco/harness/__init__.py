"""Experiment runner: configuration, trial loop, evaluation and data export."""

from mcpilco.harness.config import ExperimentConfig, dump_config, load_config, paper_scale
from mcpilco.harness.experiment import (
    CartPoleEnv, EvaluationResult, ExperimentResult, RunSummary, TrialRecord, emit_study_data,
    evaluate_policy_mc, execute, particle_panel, run_experiment, run_study, swing_up_success,
    trial_success_trend,
)

__all__ = [
    "ExperimentConfig", "load_config", "dump_config", "paper_scale", "CartPoleEnv", "TrialRecord",
    "EvaluationResult", "ExperimentResult", "RunSummary", "run_experiment", "run_study", "execute",
    "evaluate_policy_mc", "emit_study_data", "particle_panel", "swing_up_success", "trial_success_trend",
]
