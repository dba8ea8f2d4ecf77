import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascade_lab.cost_model import (B_CLIP, BudgetExceeded, BudgetLedger, EstimationError,
                                    PricingPolicy, alpha_price_table, alpha_scaled_prices,
                                    combined_cost, per_query_price)
from cascade_lab.trace_store import ArmSpec


def arm(arm_id=0, pin=0.0015, pout=0.002):
    return ArmSpec(arm_id, "m", "cot_fewshot", pin, pout, 6.0, 1.0, 0.5)


def ledger(budget=1.0, n=100, costs=(0.01,), lat=(0.0,), policy=None):
    return BudgetLedger(budget, n, policy or PricingPolicy(), costs, lat)


# -- pricing -------------------------------------------------------------------

def test_price_gpt35_cot_matches_published_cost():
    # published per-query cost of GPT-3.5 CoT on the test split: 1.38e-3
    assert per_query_price(773.70, 108.31, arm()) == pytest.approx(1.38e-3, abs=1e-5)


def test_price_zero_tokens():
    assert per_query_price(0, 0, arm()) == 0.0


def test_price_unit_scale():
    assert per_query_price(1000, 1000, arm()) == pytest.approx(0.0035, abs=1e-15)


def test_price_rejects_negative_tokens():
    with pytest.raises(ValueError):
        per_query_price(-1, 0, arm())


@given(st.floats(0, 1e5), st.floats(0, 1e5), st.floats(0, 1e5))
def test_price_is_linear_in_each_count(a, b, out):
    x = arm()
    lhs = per_query_price(a + b, out, x)
    rhs = per_query_price(a, out, x) + per_query_price(b, 0, x)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-15)


def test_gpt4_prices_reproduce_published_costs():
    gpt4 = arm(0, 0.03, 0.06)
    assert per_query_price(771.70, 103.62, gpt4) == pytest.approx(2.94e-2, abs=1e-4)
    assert per_query_price(88.98, 81.73, gpt4) == pytest.approx(7.57e-3, abs=1e-5)


# -- combo cost ----------------------------------------------------------------

def test_combo_cost_matches_published_table():
    p = PricingPolicy(mode="combo", beta=50_000)
    assert combined_cost(3.66e-4, 6.0, p) == pytest.approx(4.86e-4, abs=1e-6)


def test_combo_latency_only_local_arm():
    p = PricingPolicy(mode="combo", beta=500_000)
    assert combined_cost(0.0, 8.0, p) == pytest.approx(1.60e-5, abs=1e-9)


def test_combo_zero_latency_is_monetary():
    p = PricingPolicy(mode="combo", beta=1000.0)
    assert combined_cost(0.123, 0.0, p) == 0.123


def test_monetary_mode_ignores_latency():
    assert combined_cost(0.5, 100.0, PricingPolicy()) == 0.5


@pytest.mark.parametrize("beta", [0.0, -1.0, None])
def test_combo_requires_positive_beta(beta):
    with pytest.raises(ValueError):
        PricingPolicy(mode="combo", beta=beta)


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 100), st.floats(0, 100),
       st.floats(1, 1e6), st.floats(1, 1e6))
def test_combo_cost_monotone(m1, m2, l1, l2, b1, b2):
    lo = PricingPolicy(mode="combo", beta=max(b1, b2))
    hi = PricingPolicy(mode="combo", beta=min(b1, b2))
    assert combined_cost(min(m1, m2), min(l1, l2), lo) <= combined_cost(max(m1, m2), max(l1, l2), hi)


# -- alpha chaining ------------------------------------------------------------

def test_alpha_scaled_prices_ratio():
    big, small = alpha_scaled_prices(3.66e-4, 0.1)
    assert big == pytest.approx(3.66e-5)
    assert small / big == pytest.approx(0.1, rel=1e-15)


def test_alpha_one_is_identity():
    assert alpha_scaled_prices(2e-3, 1.0) == (2e-3, 2e-3)


def test_alpha_twentieth_from_published_base():
    # base recomputed from the alpha = 1/10 row (1.67e-4 / 0.1)
    big, small = alpha_scaled_prices(1.672e-3, 1 / 20)
    assert big == pytest.approx(8.36e-5, abs=5e-8)
    assert small == pytest.approx(4.18e-6, abs=5e-9)


@pytest.mark.parametrize("alpha,published", [(1 / 10, 1.61e-5), (1 / 20, 4.01e-6), (1 / 50, 6.42e-7)])
def test_alpha_chain_reproduces_smallest_local_arm_costs(alpha, published):
    # Llama-2-7b on its own tokens, per-token price alpha^2 times GPT-3.5's
    arms = [ArmSpec(0, "llama-7b", "cot_fewshot", 0, 0, 8, 0.8, 0.24),
            ArmSpec(1, "llama-13b", "cot_fewshot", 0, 0, 16, 0.8, 0.38),
            ArmSpec(2, "gpt-3.5", "cot_fewshot", 0.0015, 0.002, 6, 1.0, 0.79)]
    table = alpha_price_table(arms, alpha)
    pol = PricingPolicy(alpha=alpha, prices=table)
    cost = pol.monetary(911.43, 119.14, arms[0])
    assert cost == pytest.approx(published, rel=0.005)
    assert table[0][0] / table[1][0] == pytest.approx(alpha)


def test_alpha_chain_needs_reference_arm():
    arms = [ArmSpec(0, "l", "plain", 0, 0, 1, 0.8, 0.1)]
    with pytest.raises(ValueError):
        alpha_price_table(arms, 0.1)


# -- ledger --------------------------------------------------------------------

def test_charge_arithmetic():
    lg = ledger(1.0)
    lg.charge(0.3)
    lg.charge(0.2)
    assert lg.spent == pytest.approx(0.5)
    assert lg.remaining == pytest.approx(0.5)


def test_overdraft_raises_and_leaves_ledger_unchanged():
    lg = ledger(1.0)
    lg.charge(0.9)
    with pytest.raises(BudgetExceeded):
        lg.charge(0.2)
    assert lg.spent == pytest.approx(0.9)


def test_charges_summing_to_budget_allowed():
    lg = ledger(1.0)
    for _ in range(4):
        lg.charge(0.25)
    assert lg.spent == 1.0
    # rounding in the running sum must not turn an exact fit into an overdraft
    lg = ledger(1.0)
    for _ in range(10):
        lg.charge(0.1)
    assert lg.spent == pytest.approx(1.0) and lg.spent <= 1.0


@settings(max_examples=200)
@given(st.floats(0.0, 10.0), st.lists(st.floats(0.0, 3.0), max_size=60))
def test_spend_never_exceeds_budget(budget, attempts):
    lg = ledger(budget)
    for c in attempts:
        if lg.can_afford(c):
            lg.charge(c)
        else:
            with pytest.raises(BudgetExceeded):
                lg.charge(c)
        assert 0.0 <= lg.spent <= lg.total_budget


def test_budget_feature_exact_balance():
    assert ledger(1.0, 100, (0.01,)).normalized_budget_feature(0) == pytest.approx(1.0)


def test_budget_feature_exhausted():
    lg = ledger(1.0, 100, (0.01,))
    lg.charge(1.0)
    assert lg.normalized_budget_feature(0) == 0.0


def test_budget_feature_clipped():
    assert ledger(100.0, 1, (0.001,)).normalized_budget_feature(0) == B_CLIP


def test_budget_feature_zero_cost_is_estimation_error():
    with pytest.raises(EstimationError):
        ledger(1.0, 10, (0.0,)).normalized_budget_feature(0)


@given(st.floats(0.01, 10), st.integers(1, 1000), st.floats(1e-4, 1.0))
def test_budget_feature_homogeneous(rem, n, c):
    a = ledger(rem, n, (c,)).normalized_budget_feature(0)
    b = ledger(2 * rem, n, (2 * c,)).normalized_budget_feature(0)
    assert a == pytest.approx(b, rel=1e-12)


def test_running_mean_with_prior_weight():
    lg = ledger(1.0, 10, (0.01,))
    lg.observe(0, 0.021, 0.0)
    # prior worth 10 observations
    assert lg.avg_monetary(0) == pytest.approx((10 * 0.01 + 0.021) / 11)


def test_latency_window_mean():
    lg = ledger(1.0, 10, (0.01,), (1.0,))
    assert lg.update_latency_estimate(0, [4, 6, 8]).avg_latency(0) == 6.0
    assert lg.update_latency_estimate(0, [12]).avg_latency(0) == 12.0


def test_latency_empty_window_rejected():
    with pytest.raises(ValueError):
        ledger().update_latency_estimate(0, [])


def test_latency_updates_move_budget_feature_opposite():
    pol = PricingPolicy(mode="combo", beta=1000.0)
    lg = BudgetLedger(1.0, 50, pol, [1e-3], [5.0])
    b0 = lg.normalized_budget_feature(0)
    b1 = lg.update_latency_estimate(0, [8.0]).normalized_budget_feature(0)
    b2 = lg.update_latency_estimate(0, [2.0]).normalized_budget_feature(0)
    assert b1 < b0 < b2


def test_policy_round_trip():
    p = PricingPolicy(mode="combo", beta=50_000.0, prices={1: (0.1, 0.2)})
    assert PricingPolicy.from_dict(p.to_dict()) == p
