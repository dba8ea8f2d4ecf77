"""Oracle-stop cascade theory and first-to-K self-consistency.

Under the oracle-stop model a cascade pays for arm ``k`` only if every
earlier arm was wrong, so the expected cost of an ordering is
``sum_k c_k * prod_{i<k} (1 - p_i)``. Sorting arms by ``p/c`` descending
minimizes it.

First-to-K self-consistency draws i.i.d. answers until one has occurred
``K`` times. ``alpha(p, K)`` is the probability that the winner is the
most likely answer (lowest index among exact ties).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MAX_EXACT_SUPPORT = 12


@dataclass(frozen=True)
class OracleArm:
    p: float
    c: float

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if not self.c > 0:
            raise ValueError("cost must be positive")


def oracle_expected_cost(arms: Sequence[OracleArm]) -> float:
    if not arms:
        raise ValueError("empty cascade")
    total, reach = 0.0, 1.0
    for a in arms:
        total += reach * a.c
        reach *= 1.0 - a.p
    return total


def optimal_order(arms: Sequence[OracleArm]) -> list:
    """Indices sorted by ``p/c`` descending; ties by lower cost, then input order."""
    return sorted(range(len(arms)), key=lambda i: (-arms[i].p / arms[i].c, arms[i].c, i))


@dataclass
class OrderingReport:
    n_orderings: int
    optimal_cost: float
    min_cost: float
    max_cost: float
    gap: float
    violation: bool
    counterexample: tuple | None = None


def verify_ordering_bruteforce(arms: Sequence[OracleArm], tol: float = 1e-12) -> OrderingReport:
    """Compare the ratio ordering against every permutation (M <= 7)."""
    m = len(arms)
    if not 1 <= m <= 7:
        raise ValueError("brute force supports 1..7 arms")
    opt = oracle_expected_cost([arms[i] for i in optimal_order(arms)])
    lo, hi, arg = math.inf, -math.inf, None
    for perm in itertools.permutations(range(m)):
        c = oracle_expected_cost([arms[i] for i in perm])
        if c < lo:
            lo, arg = c, perm
        hi = max(hi, c)
    bad = opt > lo + tol
    return OrderingReport(math.factorial(m), opt, lo, hi, hi - lo, bad, arg if bad else None)


def random_oracle_arms(rng: np.random.Generator, m: int) -> list:
    return [OracleArm(float(rng.uniform(0.0, 1.0)), float(rng.uniform(0.05, 2.0))) for _ in range(m)]


# ----------------------------------------------------------------------------
# first-to-K self-consistency


def _check_dist(dist) -> np.ndarray:
    p = np.asarray(dist, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("distribution must be a non-empty vector")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("distribution entries must be non-negative and sum to 1")
    return p


def majority_class(dist) -> int:
    return int(np.argmax(_check_dist(dist)))


def k_stop_sc_run(dist, k: int, rng: np.random.Generator) -> tuple[int, int]:
    """Draw until some answer occurs ``k`` times; return (answer, draws).

    The loop is capped at ``10 k |support|`` draws, after which the plurality
    answer (lowest index on ties) is returned.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    p = _check_dist(dist)
    counts = np.zeros(p.size, dtype=int)
    cap = 10 * k * p.size
    for t in range(1, cap + 1):
        a = int(rng.choice(p.size, p=p))
        counts[a] += 1
        if counts[a] >= k:
            return a, t
    return int(np.argmax(counts)), cap


def _alpha_exact(p: np.ndarray, k: int) -> float:
    # P(class 0 reaches k first) = sum over the other classes' counts n_j < k of
    # the number of orderings with the k-th zero last, times the probabilities:
    #   p0^k / (k-1)! * sum_m (k-1+m)! [t^m] prod_j sum_{n<k} (p_j t)^n / n!
    # The product is built class by class (a DP over count totals).
    maj = int(np.argmax(p))
    others = np.delete(p, maj)
    poly = np.array([1.0])
    fact = np.array([1.0 / math.factorial(n) for n in range(k)])
    for q in others:
        if q == 0:
            continue
        poly = np.convolve(poly, fact * q ** np.arange(k))
    m = np.arange(poly.size)
    log_w = np.array([math.lgamma(k + mm) - math.lgamma(k) for mm in m])
    return float(p[maj] ** k * np.sum(poly * np.exp(log_w)))


def _alpha_monte_carlo(p: np.ndarray, k: int, trials: int, rng: np.random.Generator,
                       chunk: int = 20000) -> tuple[float, float]:
    maj = int(np.argmax(p))
    length = (k - 1) * p.size + 1  # by pigeonhole some class reaches k by then
    wins = 0
    done_total = 0
    while done_total < trials:
        m = min(chunk, trials - done_total)
        draws = rng.choice(p.size, size=(m, length), p=p)
        counts = np.zeros((m, p.size), dtype=np.int32)
        winner = np.full(m, -1)
        rows = np.arange(m)
        for t in range(length):
            a = draws[:, t]
            counts[rows, a] += 1
            hit = (winner < 0) & (counts[rows, a] >= k)
            winner[hit] = a[hit]
            if not (winner < 0).any():
                break
        wins += int(np.sum(winner == maj))
        done_total += m
    est = wins / trials
    return est, math.sqrt(max(est * (1 - est), 1e-300) / trials)


@dataclass
class AlphaEstimate:
    value: float
    stderr: float = 0.0
    method: str = "exact"


def alpha_estimate(dist, k: int, method: str = "exact", trials: int = 100_000,
                   rng: np.random.Generator | None = None) -> AlphaEstimate:
    """Probability that first-to-``k`` sampling returns the majority class.

    ``method="exact"`` needs support <= 12 and ``k <= 3``; ``"monte_carlo"``
    reports a binomial standard error.
    """
    if k < 1:
        raise ValueError("K must be >= 1")
    p = _check_dist(dist)
    if method == "exact":
        if np.count_nonzero(p) > MAX_EXACT_SUPPORT:
            raise ValueError(f"exact method refuses support > {MAX_EXACT_SUPPORT}")
        if k > 3:
            raise ValueError("exact method supports K <= 3")
        return AlphaEstimate(_alpha_exact(p, k))
    if method == "monte_carlo":
        v, se = _alpha_monte_carlo(p, k, trials, rng or np.random.default_rng(0))
        return AlphaEstimate(v, se, "monte_carlo")
    raise ValueError(f"unknown method {method!r}")


def tail_split_dist(p1: float, n_tail: int) -> np.ndarray:
    """Majority mass ``p1`` plus ``1 - p1`` split evenly over ``n_tail`` classes."""
    return np.concatenate([[p1], np.full(n_tail, (1.0 - p1) / n_tail)])
