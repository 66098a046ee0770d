#!/usr/bin/env python3
"""
Multi-seed desk-scale sweep: constraint modes and GAE lambda presets.

Trains every (seed, variant) combination from one base config, aggregates the last
20 epochs of each run and checks the directional safety/ablation expectations.
Results go to sweep_results.json.
"""

import argparse
import copy
import json
import os
import sys
from typing import Dict, List

import numpy as np

project_root = os.path.dirname(os.path.abspath(__file__))
sys.path.insert(0, os.path.join(project_root, 'src'))

from config import LAMBDA_PRESETS, apply_overrides, load_config, save_config
from trainer import make_env_factory, train
from utils import ensure_results_dir, setup_logging

FINAL_WINDOW = 20
CVAR_TOLERANCE = 0.01


def run_variant(base, seed: int, mode: str, preset: str, out_root: str) -> Dict[str, float]:
    config = copy.deepcopy(base)
    config.train.seed = seed
    config.train.constraint_mode = mode
    config.train.lam = LAMBDA_PRESETS[preset]
    run_dir = ensure_results_dir(os.path.join(out_root, f"{mode}_{preset}_seed{seed}"))
    save_config(config, os.path.join(run_dir, "config.cfg"))

    env_factory = make_env_factory(config.env_kind, config.env, config.tabular, config.risk.gamma)
    reports = train(config.train, config.risk, env_factory, run_dir,
                    record_wall_time=config.output.record_wall_time, progress=False)
    tail = reports[-FINAL_WINDOW:]
    return {
        "seed": seed,
        "mode": mode,
        "preset": preset,
        "final_cvar": float(np.mean([r.cvar_cv_rate for r in tail])),
        "final_cv_rate": float(np.mean([r.mean_cv_rate for r in tail])),
        "final_return": float(np.mean([r.mean_return for r in tail])),
        "final_score": float(np.mean([r.score for r in tail])),
    }


def analyze_sweep(runs: List[Dict[str, float]], limit: float) -> Dict[str, object]:
    """Safety check per seed, CVaR-vs-expectation direction and lambda ablation direction."""
    def select(mode, preset):
        return [r for r in runs if r["mode"] == mode and r["preset"] == preset]

    cvar_runs = select("cvar", "gae")
    expectation_runs = select("expectation", "gae")
    safe = [r for r in cvar_runs if r["final_cvar"] <= limit + CVAR_TOLERANCE and r["final_return"] > 1.0]
    summary: Dict[str, object] = {
        "safe_seeds": len(safe),
        "total_seeds": len(cvar_runs),
        "safety_passed": len(safe) >= (len(cvar_runs) // 2 + 1) if cvar_runs else False,
    }
    if cvar_runs and expectation_runs:
        mean_cvar = float(np.mean([r["final_cvar"] for r in cvar_runs]))
        mean_exp = float(np.mean([r["final_cvar"] for r in expectation_runs]))
        summary["cvar_mode_cvar"] = mean_cvar
        summary["expectation_mode_cvar"] = mean_exp
        summary["cvar_vs_expectation_passed"] = mean_cvar <= mean_exp

    ablation = {p: select("cvar", p) for p in LAMBDA_PRESETS}
    if all(ablation.values()):
        cv = {p: float(np.mean([r["final_cv_rate"] for r in rs])) for p, rs in ablation.items()}
        score = {p: float(np.mean([r["final_score"] for r in rs])) for p, rs in ablation.items()}
        summary["ablation_cv_rate"] = cv
        summary["ablation_score"] = score
        summary["ablation_passed"] = cv["mc"] >= cv["gae"] and score["td"] == min(score.values())
    return summary


def main():
    parser = argparse.ArgumentParser(description="Multi-seed TRC sweep")
    parser.add_argument("config", help="Base config file")
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    parser.add_argument("--ablation-seeds", type=int, default=3,
                        help="Number of seeds (from --seeds) that also run the td/mc presets")
    parser.add_argument("--out", default="sweep", help="Root directory for the runs")
    args = parser.parse_args()

    base = apply_overrides(load_config(args.config), [])
    out_root = ensure_results_dir(args.out)
    setup_logging("WARNING", out_root)

    plan = [(s, m, "gae") for s in args.seeds for m in ("cvar", "expectation")]
    plan += [(s, "cvar", p) for s in args.seeds[:args.ablation_seeds] for p in ("td", "mc")]

    print(f"🚀 Sweep: {len(plan)} runs of {base.train.epochs} epochs")
    runs = []
    for i, (seed, mode, preset) in enumerate(plan, start=1):
        print(f"   [{i}/{len(plan)}] seed={seed} mode={mode} preset={preset}")
        try:
            runs.append(run_variant(base, seed, mode, preset, out_root))
        except Exception as e:
            print(f"   ❌ run failed: {e}")

    summary = analyze_sweep(runs, base.risk.limit)
    results = {"runs": runs, "summary": summary}
    path = os.path.join(out_root, "sweep_results.json")
    with open(path, 'w') as f:
        json.dump(results, f, indent=2)

    print(f"\nSafe seeds: {summary['safe_seeds']}/{summary['total_seeds']}")
    for key in ("safety_passed", "cvar_vs_expectation_passed", "ablation_passed"):
        if key in summary:
            print(f"  {'✅' if summary[key] else '❌'} {key}")
    print(f"\nResults saved to {path}")


if __name__ == "__main__":
    main()
