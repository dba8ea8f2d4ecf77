"""First-to-K self-consistency: how often does the majority answer win?

Run: python3 demos/02_self_consistency.py
"""

# %%
import numpy as np

from cascade_lab.cascade_theory import alpha_estimate, k_stop_sc_run, tail_split_dist

rng = np.random.default_rng(0)

# Two answers at 60/40: K=1 keeps the single-sample accuracy, larger K helps.
for k in (1, 2, 3):
    print(f"p=(0.6, 0.4) K={k}: alpha = {alpha_estimate([0.6, 0.4], k).value:.4f}")

# %% Simulated draws agree with the exact value
runs = [k_stop_sc_run([0.6, 0.4], 2, rng) for _ in range(20_000)]
wins = np.mean([a == 0 for a, _ in runs])
print(f"simulated first-to-2: {wins:.4f}, mean draws {np.mean([n for _, n in runs]):.2f}")

# %% A weak majority spread against a fragmented tail
# The wrong mass 0.7 is split evenly; the finer the split, the rarer a wrong repeat.
for n_tail in (3, 10, 30, 100, 300, 1000):
    est = alpha_estimate(tail_split_dist(0.3, n_tail), 2, "monte_carlo", trials=50_000, rng=rng)
    print(f"p1=0.3, {n_tail:5d} tail classes: alpha = {est.value:.4f} +- {est.stderr:.4f}")
