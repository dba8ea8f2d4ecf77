"""Budget-constrained routing of questions over a cascade of LLM arms.

The package simulates answering a stream of questions by querying
(model, prompt) arms against recorded or synthetic response traces under a
shared budget, learns a routing policy with deep Q-learning, and provides
the heuristic and knapsack baselines plus the oracle-stop cascade theory.
"""

from .cost_model import BudgetLedger, PricingPolicy, combined_cost, per_query_price
from .mdp_env import Action, CascadeEnv, run_episode
from .trace_store import (SynthConfig, TraceSet, load_trace, planted_two_arm_config, save_trace,
                          synth_generate)

__version__ = "0.1.0"

__all__ = [
    "Action",
    "BudgetLedger",
    "CascadeEnv",
    "PricingPolicy",
    "SynthConfig",
    "TraceSet",
    "combined_cost",
    "load_trace",
    "per_query_price",
    "planted_two_arm_config",
    "run_episode",
    "save_trace",
    "synth_generate",
]
