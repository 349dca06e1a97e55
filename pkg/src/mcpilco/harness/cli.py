"""Command-line entry point.

    mcpilco run --config exp.yaml [--seed N] [--out DIR] [--mode full-state|observed]
    mcpilco evaluate --policy policy.json --runs N [--config exp.yaml] [--seed N]
    mcpilco emit-plots --records DIR [--out DIR]

Outputs are CSV/JSON. On failure the process exits nonzero and prints one JSON
object ``{"error": <category>, "message": ...}`` on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml
from pydantic import ValidationError

from mcpilco.core.rng import Seed
from mcpilco.dynamics import load_model
from mcpilco.harness.config import ExperimentConfig, load_config, paper_scale
from mcpilco.harness.experiment import CartPoleEnv, emit_study_data, evaluate_policy_mc, particle_panel, run_experiment
from mcpilco.policy import RbfPolicy

EXIT_CODES = {"config": 2, "io": 3, "numerical": 4, "internal": 1}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _config(path, seed=None, mode=None, out=None, paper=False) -> ExperimentConfig:
    cfg = load_config(path) if path else ExperimentConfig()
    upd = {k: v for k, v in (("seed", seed), ("mode", mode), ("out_dir", out)) if v is not None}
    cfg = ExperimentConfig.model_validate({**cfg.model_dump(), **upd})
    return paper_scale(cfg) if paper else cfg


def cmd_run(args) -> dict:
    cfg = _config(args.config, args.seed, args.mode, args.out, args.paper_scale)
    if cfg.out_dir is None:
        raise CliError("config", "no output directory: pass --out or set out_dir")
    res = run_experiment(cfg)
    errors = [r.error for r in res.records if r.error]
    summary = {"out_dir": str(res.out_dir), "trials": len(res.records),
               "success": [r.success for r in res.records],
               "success_rate": [r.success_rate for r in res.records]}
    if errors:
        raise CliError("numerical", "; ".join(errors))
    return summary


def cmd_evaluate(args) -> dict:
    cfg = _config(args.config, args.seed, paper=args.paper_scale)
    policy = RbfPolicy.load(args.policy)
    env = CartPoleEnv(cfg)
    ev = evaluate_policy_mc(policy, env, args.runs, Seed(cfg.seed, (5,)), cfg.evaluation.theta_tol,
                            cfg.evaluation.p_tol, cfg.evaluation.window)
    out = {"runs": args.runs,
           "mean_cumulative_cost": float(np.mean(ev.cumulative_cost)) if args.runs else None}
    if ev.success_rate is not None:
        out["success_rate"] = ev.success_rate
    if args.out and ev.bundle is not None:
        emit_study_data({"executed": {cfg.mode: ev.bundle.states}}, args.out, env.times())
    return out


def cmd_emit_plots(args) -> dict:
    """Export the data behind the particle and execution panels of a run directory."""
    rdir = Path(args.records)
    cfg_path = rdir / "config.json"
    if not cfg_path.exists():
        raise CliError("io", f"{cfg_path} not found")
    cfg = ExperimentConfig.model_validate(json.loads(cfg_path.read_text()))
    recs = [json.loads(line) for line in (rdir / "records.jsonl").read_text().splitlines() if line]
    last = [r for r in recs if r.get("policy_path") and r.get("model_path")]
    if not last:
        raise CliError("io", "no trial with both model and policy snapshots")
    rec = last[-1]
    model = load_model(rdir / rec["model_path"])
    policy = RbfPolicy.load(rdir / rec["policy_path"])
    env = CartPoleEnv(cfg)
    ev = evaluate_policy_mc(policy, env, cfg.evaluation.n_runs, Seed(cfg.seed, (5,)),
                            cfg.evaluation.theta_tol, cfg.evaluation.p_tol, cfg.evaluation.window)
    panels = {"particles": {cfg.mode: particle_panel(cfg, model, policy)}}
    if ev.bundle is not None:
        panels["executed"] = {cfg.mode: ev.bundle.states}
    paths = emit_study_data(panels, args.out or rdir / "panels", env.times())
    return {"files": [str(p) for p in paths], "success_rate": ev.success_rate}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mcpilco")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run the trial loop")
    r.add_argument("--config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out")
    r.add_argument("--mode", choices=["full-state", "observed"])
    r.add_argument("--paper-scale", action="store_true", help="M = 400 particles, 400 evaluation runs")
    r.set_defaults(fn=cmd_run)
    e = sub.add_parser("evaluate", help="Monte Carlo evaluation of a saved policy")
    e.add_argument("--policy", required=True)
    e.add_argument("--runs", type=int, required=True)
    e.add_argument("--config")
    e.add_argument("--seed", type=int)
    e.add_argument("--out")
    e.add_argument("--paper-scale", action="store_true")
    e.set_defaults(fn=cmd_evaluate)
    p = sub.add_parser("emit-plots", help="export panel data of a run directory")
    p.add_argument("--records", required=True)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_emit_plots)
    return ap


def _fail(category: str, message: str) -> int:
    print(json.dumps({"error": category, "message": message}), file=sys.stderr)
    return EXIT_CODES[category]


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        out = args.fn(args)
    except CliError as exc:
        return _fail(exc.category, str(exc))
    except (ValidationError, yaml.YAMLError) as exc:
        return _fail("config", str(exc))
    except (OSError, json.JSONDecodeError) as exc:
        return _fail("io", str(exc))
    except (FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail("numerical", str(exc))
    except ValueError as exc:
        return _fail("config", str(exc))
    print(json.dumps(out, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
