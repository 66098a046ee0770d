"""CVaR-constrained trust-region safe RL package."""

__all__ = [
    "advantage",
    "config",
    "cvar_math",
    "diffnet",
    "env_nav2d",
    "evaluator",
    "plot_data",
    "tabular_oracle",
    "tr_solver",
    "trainer",
    "utils",
]
