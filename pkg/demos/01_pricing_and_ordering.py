"""What a query costs, and in which order a cascade should try its arms.

Run: python3 demos/01_pricing_and_ordering.py
"""

# %% Per-query prices from token counts
import numpy as np

from cascade_lab.cascade_theory import (OracleArm, oracle_expected_cost, optimal_order,
                                        verify_ordering_bruteforce)
from cascade_lab.cost_model import PricingPolicy, alpha_price_table, combined_cost, per_query_price
from cascade_lab.trace_store import GSM8K_ARMS, SynthConfig, synth_generate

trace = synth_generate(SynthConfig(arms=GSM8K_ARMS, n_questions=2000), 0)
print("arm                          accuracy   $/query (test mean)")
for arm in trace.arms:
    recs = [trace.sample_response(q, arm.arm_id, 0) for q in trace.split_ids("test")]
    price = np.mean([per_query_price(r.input_tokens, r.output_tokens, arm) for r in recs])
    print(f"{arm.model_name:>14s} {arm.prompt_name:<14s} {arm.marginal_accuracy:6.3f}   {price:.2e}")

# %% Local models have no API price; alpha chains a price onto them
table = alpha_price_table(trace.arms, alpha=0.01)
for k, (pin, pout) in sorted(table.items()):
    print(f"arm {k}: {pin:.3g} / {pout:.3g} per 1k tokens")

# Latency can be folded in as latency / beta.
combo = PricingPolicy(mode="combo", beta=50_000)
print("3.66e-4 dollars + 6 s at beta=50k ->", f"{combined_cost(3.66e-4, 6.0, combo):.3e}")

# %% Oracle-stop ordering: sort by p / c
arms = [OracleArm(0.93, 0.03), OracleArm(0.24, 1e-5), OracleArm(0.79, 1.4e-3)]
order = optimal_order(arms)
print("ratio order:", order, "expected cost", round(oracle_expected_cost([arms[i] for i in order]), 6))
print("given order expected cost", round(oracle_expected_cost(arms), 6))
rep = verify_ordering_bruteforce(arms)
print(f"brute force over {rep.n_orderings} orders: min {rep.min_cost:.6f}, "
      f"violation={rep.violation}")
