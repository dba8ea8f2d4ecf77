import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from cascade_lab.cascade_theory import (OracleArm, alpha_estimate, k_stop_sc_run, majority_class,
                                        oracle_expected_cost, optimal_order, random_oracle_arms,
                                        tail_split_dist, verify_ordering_bruteforce)


# -- ordering lemma ---------------------------------------------------------------

def test_expected_cost_example():
    arms = [OracleArm(0.6, 1.0), OracleArm(0.9, 0.1)]
    # cheap-and-good arm first: 0.1 + 0.1 * 1.0
    assert oracle_expected_cost([arms[1], arms[0]]) == pytest.approx(0.2)
    assert oracle_expected_cost(arms) == pytest.approx(1.0 + 0.4 * 0.1)
    assert optimal_order(arms) == [1, 0]


def test_single_arm_cost_is_its_price():
    assert oracle_expected_cost([OracleArm(0.3, 0.7)]) == 0.7


def test_ratio_ties_prefer_cheaper_arm():
    arms = [OracleArm(0.8, 2.0), OracleArm(0.4, 1.0)]
    assert optimal_order(arms) == [1, 0]


@pytest.mark.parametrize("seed", range(50))
def test_ratio_order_is_optimal(seed):
    rng = np.random.default_rng(seed)
    arms = random_oracle_arms(rng, int(rng.integers(2, 7)))
    rep = verify_ordering_bruteforce(arms)
    assert not rep.violation
    assert rep.optimal_cost == pytest.approx(rep.min_cost, abs=1e-12)
    assert rep.n_orderings == math.factorial(len(arms))


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0.01, 5)), min_size=2, max_size=5),
       st.data())
def test_adjacent_exchange(pairs, data):
    """Swapping two neighbours so the higher p/c comes first never costs more."""
    arms = [OracleArm(p, c) for p, c in pairs]
    i = data.draw(st.integers(0, len(arms) - 2))
    a, b = arms[i], arms[i + 1]
    swapped = arms[:i] + [b, a] + arms[i + 2:]
    if b.p / b.c > a.p / a.c:
        assert oracle_expected_cost(swapped) <= oracle_expected_cost(arms) + 1e-12


def test_bad_arms_rejected():
    with pytest.raises(ValueError):
        OracleArm(1.2, 1.0)
    with pytest.raises(ValueError):
        OracleArm(0.5, 0.0)
    with pytest.raises(ValueError):
        verify_ordering_bruteforce([OracleArm(0.5, 1.0)] * 8)


# -- first-to-K self-consistency ------------------------------------------------

def test_alpha_two_answer_example():
    # first-to-2 on (0.6, 0.4): AA, ABA, BAA
    assert alpha_estimate([0.6, 0.4], 2).value == pytest.approx(0.36 + 2 * 0.144, abs=1e-12)
    assert alpha_estimate([0.6, 0.4], 2).value == pytest.approx(0.648, abs=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_alpha_degenerate_certain(k):
    assert alpha_estimate([1.0], k).value == pytest.approx(1.0)


def test_alpha_k1_is_majority_mass():
    assert alpha_estimate([0.5, 0.3, 0.2], 1).value == pytest.approx(0.5)


def test_alpha_tie_favors_lowest_index():
    assert majority_class([0.5, 0.5]) == 0
    assert alpha_estimate([0.5, 0.5], 2).value == pytest.approx(0.5)


def enumerate_alpha(p, k):
    """Sum over all sequences that end with the majority's k-th hit."""
    p = np.asarray(p)
    m = int(np.argmax(p))
    total = 0.0
    max_len = (k - 1) * len(p) + 1
    for length in range(k, max_len + 1):
        for seq in itertools.product(range(len(p)), repeat=length - 1):
            if seq.count(m) != k - 1:
                continue
            if any(seq.count(j) >= k for j in range(len(p))):
                continue
            total += np.prod([p[j] for j in seq]) * p[m]
    return total


@pytest.mark.parametrize("p,k", [([0.5, 0.3, 0.2], 2), ([0.4, 0.35, 0.25], 3),
                                 ([0.7, 0.1, 0.1, 0.1], 2), ([0.45, 0.55], 3)])
def test_alpha_matches_sequence_enumeration(p, k):
    assert alpha_estimate(p, k).value == pytest.approx(enumerate_alpha(p, k), abs=1e-12)


def poissonized_alpha(p, k):
    """Independent oracle: embed the draws in unit-rate Poisson time, so class
    j arrives as a rate-p_j process and the majority wins if its k-th arrival
    comes before any other class reaches k."""
    p = np.asarray(p, dtype=float)
    m = int(np.argmax(p))
    others = np.delete(p, m)

    def integrand(t):
        return stats.gamma.pdf(t, k, scale=1 / p[m]) * np.prod(stats.poisson.cdf(k - 1, others * t))

    val, _ = integrate.quad(integrand, 0, np.inf, limit=200)
    return val


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(0.05, 1.0), min_size=2, max_size=8), st.integers(1, 3))
def test_alpha_matches_poissonization(weights, k):
    p = np.array(weights) / np.sum(weights)
    assert alpha_estimate(p, k).value == pytest.approx(poissonized_alpha(p, k), abs=1e-7)


def test_alpha_monte_carlo_within_three_sigma():
    p = [0.5, 0.3, 0.2]
    exact = alpha_estimate(p, 3).value
    mc = alpha_estimate(p, 3, "monte_carlo", trials=100_000, rng=np.random.default_rng(0))
    assert abs(mc.value - exact) <= 3 * mc.stderr


def test_alpha_increases_with_k():
    p = [0.45, 0.3, 0.25]
    vals = [alpha_estimate(p, k).value for k in (1, 2, 3)]
    assert vals[0] < vals[1] < vals[2]


def tail_alpha_quadrature(p1, n_tail):
    q = (1 - p1) / n_tail

    def f(t):
        return p1 * p1 * t * np.exp(-p1 * t) * (np.exp(-q * t) * (1 + q * t)) ** n_tail

    return integrate.quad(f, 0, np.inf, limit=400)[0]


def test_alpha_tail_split_matches_quadrature():
    est = alpha_estimate(tail_split_dist(0.3, 100), 2, "monte_carlo", trials=100_000,
                         rng=np.random.default_rng(1))
    truth = tail_alpha_quadrature(0.3, 100)
    assert truth == pytest.approx(0.8747, abs=1e-4)
    assert abs(est.value - truth) <= 3 * est.stderr


def test_alpha_tail_split_rises_toward_one():
    vals = [alpha_estimate(tail_split_dist(0.3, n), 2, "monte_carlo", trials=40_000,
                           rng=np.random.default_rng(n)).value for n in (10, 100, 1000)]
    assert vals[0] < vals[1] < vals[2]
    assert vals[2] >= 0.97


def test_exact_method_refuses_large_support():
    with pytest.raises(ValueError):
        alpha_estimate(tail_split_dist(0.3, 20), 2)
    with pytest.raises(ValueError):
        alpha_estimate([0.6, 0.4], 4)
    with pytest.raises(ValueError):
        alpha_estimate([0.6, 0.4], 2, method="bogus")
    with pytest.raises(ValueError):
        alpha_estimate([0.6, 0.3], 2)


def test_k_stop_run_empirical_rate():
    rng = np.random.default_rng(3)
    wins = [k_stop_sc_run([0.6, 0.4], 2, rng)[0] == 0 for _ in range(20_000)]
    assert np.mean(wins) == pytest.approx(0.648, abs=4 * math.sqrt(0.648 * 0.352 / 20_000))


def test_k_stop_run_draw_count_bounds():
    rng = np.random.default_rng(4)
    for _ in range(200):
        ans, draws = k_stop_sc_run([0.2, 0.3, 0.5], 3, rng)
        assert 3 <= draws <= 7
