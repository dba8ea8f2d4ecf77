"""Train the routing policy on the planted two-arm trace and compare it with
the baselines at a few budgets.

The cheap arm is right on 90% of easy questions and 10% of hard ones; the
expensive arm costs 20x and is right 95% of the time. The question text
carries the tier, so a good policy sends easy questions to the cheap arm,
re-queries it when unsure, and saves the expensive arm for hard ones.

Run: python3 demos/03_planted_cascade.py [--steps 50000] [--seed 0]
"""

import argparse
import logging
import time

from cascade_lab import baselines as bl
from cascade_lab.cost_model import PricingPolicy
from cascade_lab.dqn_policy import PLANTED_RECIPE, TrainConfig, evaluate, train
from cascade_lab.mdp_env import CascadeEnv
from cascade_lab.trace_store import planted_two_arm_config, synth_generate

parser = argparse.ArgumentParser()
parser.add_argument("--steps", type=int, default=50_000)
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()
logging.basicConfig(level=logging.INFO, format="%(message)s")

trace = synth_generate(planted_two_arm_config(), 0)
env = CascadeEnv(trace, PricingPolicy(), lam=PLANTED_RECIPE["lam"])
ids = trace.split_ids("test")
c = env.prior_monetary[0]
print(f"{len(ids)} test questions; cheap query ~{c:.2e}, expensive ~{env.prior_monetary[1]:.2e}")

# %% Train
cfg = TrainConfig(seed=args.seed, train_steps=args.steps, eval_every=10_000, **PLANTED_RECIPE)
t0 = time.perf_counter()
res = train(trace, cfg, embeddings=env.embeddings)
print(f"trained {res.step} steps in {time.perf_counter() - t0:.0f}s")
for row in res.curve:
    print(f"  step {row['step']:6d}  eps {row['epsilon']:.3f}  loss {row['loss']:.4f}  "
          f"val acc {row['eval_accuracy']:.3f}")

# %% Compare at budgets expressed in cheap-query units
est = bl.train_estimator(trace, env=env, seed=args.seed, reference_budget=12 * c)
print("\nbudget   rl     single majority frugal calib  online offline")
for m in (5, 8, 10, 12, 15, 18, 20):
    b = m * c * len(ids)
    accs = [
        evaluate(res.net, env, ids, b, seed=args.seed).accuracy,
        bl.single_model_run(trace, b, env=env, question_ids=ids).accuracy,
        bl.majority_vote_run(trace, b, 2, env=env, question_ids=ids).accuracy,
        bl.threshold_cascade_run(trace, b, est, env=env, question_ids=ids).accuracy,
        bl.calibrated_cascade_run(trace, b, est, env=env, question_ids=ids).accuracy,
        bl.online_knapsack_run(trace, b, env=env, question_ids=ids).accuracy,
        bl.offline_knapsack_run(trace, b, env.policy, question_ids=ids).accuracy,
    ]
    print(f"{m:3d}c   " + "  ".join(f"{a:.3f}" for a in accs))
