"""Hindsight and online knapsack routing on a toy instance.

Run: python3 demos/04_knapsack_baselines.py
"""

# %%
import numpy as np

from cascade_lab.baselines import (KnapsackInstance, offline_knapsack_solve,
                                   online_knapsack_select, psi)

# Two questions, a cheap 50% arm and an expensive 90% arm, budget 0.4.
inst = KnapsackInstance([[0.5, 0.9], [0.5, 0.9]], [[0.1, 0.3], [0.1, 0.3]], 0.4)
sol = offline_knapsack_solve(inst)
print("toy instance:", sol.selection, "value", sol.value, "cost", sol.cost)

# %% Value against budget on a random instance
rng = np.random.default_rng(1)
costs = np.sort(rng.uniform(0.01, 1.0, (10, 3)), axis=1)
values = np.sort(rng.uniform(0, 1, (10, 3)), axis=1)
ratios = values / costs
top = costs.max(axis=1).sum()
print("\nbudget  offline  online")
for b in np.linspace(0, top, 8):
    inst = KnapsackInstance(values, costs, float(b))
    off = offline_knapsack_solve(inst).value
    on = online_knapsack_select(inst, ratios.min(), ratios.max()).value
    print(f"{b:6.2f}  {off:7.3f}  {on:6.3f}")

# %% The online acceptance bar rises with the fill fraction
for z in (0.0, 0.25, 0.5, 0.75, 1.0):
    print(f"z={z:.2f}: accept value/cost >= {psi(z, ratios.min(), ratios.max()):.3f}")
