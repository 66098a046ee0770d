#!/usr/bin/env python3
"""Test the directional checks of the multi-seed sweep."""

import sys, os

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src")))
from seed_sweep import analyze_sweep


def run(seed, mode, preset, cvar, cv_rate=0.02, ret=5.0, score=3.0):
    return {"seed": seed, "mode": mode, "preset": preset, "final_cvar": cvar,
            "final_cv_rate": cv_rate, "final_return": ret, "final_score": score}


def test_safety_needs_a_majority_of_seeds():
    runs = [run(0, "cvar", "gae", 0.02), run(1, "cvar", "gae", 0.03), run(2, "cvar", "gae", 0.2)]
    summary = analyze_sweep(runs, limit=0.025)
    assert summary["safe_seeds"] == 2
    assert summary["safety_passed"]

    runs[1] = run(1, "cvar", "gae", 0.02, ret=0.5)
    assert not analyze_sweep(runs, limit=0.025)["safety_passed"]


def test_cvar_versus_expectation_and_ablation():
    runs = [
        run(0, "cvar", "gae", 0.02, cv_rate=0.02, score=3.0),
        run(0, "expectation", "gae", 0.08),
        run(0, "cvar", "td", 0.05, cv_rate=0.01, score=1.0),
        run(0, "cvar", "mc", 0.04, cv_rate=0.05, score=2.0),
    ]
    summary = analyze_sweep(runs, limit=0.025)
    assert summary["cvar_vs_expectation_passed"]
    assert summary["ablation_passed"]
    assert summary["ablation_cv_rate"]["mc"] == 0.05


def test_empty_sweep():
    summary = analyze_sweep([], limit=0.025)
    assert summary["total_seeds"] == 0
    assert not summary["safety_passed"]
    assert "cvar_vs_expectation_passed" not in summary


if __name__ == "__main__":
    import pytest
    sys.exit(pytest.main([__file__, "-q"]))
