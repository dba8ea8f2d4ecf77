"""Comparison policies run against the same trace, pricing and ledger as the
learned policy.

* single model: the most capable arm whose average cost fits ``B/n``;
* majority voting: sample arms in order until an answer repeats ``N`` times;
* threshold cascade: escalate while a learned correctness estimate is low;
* calibrated cascade: like the threshold cascade, with a middle confidence
  band that triggers a re-query of the same arm;
* offline knapsack: exact best one-arm-per-question assignment with
  hindsight knowledge of correctness;
* online knapsack: threshold acceptance on value per unit cost.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cost_model import BudgetLedger, PricingPolicy
from .mdp_env import R_MAX, CascadeEnv, EnvState, EpisodeResult, Response, final_answer
from .nets import MLP, Adam, sigmoid

logger = logging.getLogger(__name__)

_TOL = 1e-12


class DegenerateEstimatorError(ValueError):
    pass


# ----------------------------------------------------------------------------
# shared query session


class _Session:
    """Ledger, rng and per-question bookkeeping shared by the heuristic runners."""

    def __init__(self, env: CascadeEnv, question_ids: Sequence[int], budget: float, seed: int):
        self.env = env
        self.trace = env.trace
        self.ids = list(question_ids)
        self.ledger = env.new_ledger(budget, len(self.ids))
        self.rng = np.random.default_rng([seed, 0xBA5E])
        self.result = EpisodeResult(len(self.ids), 0, 0, 0.0, float(budget),
                                    np.zeros(env.K, dtype=int))

    def start(self, qid: int) -> EnvState:
        return self.env.reset(qid)

    def query(self, state: EnvState, arm_id: int) -> Response | None:
        """Issue the next sample of ``arm_id``; ``None`` if its actual cost
        would overdraw the ledger (the query is then not issued)."""
        idx = int(state.requery_counts[arm_id])
        rec = self.trace.sample_response(state.question_id, arm_id, idx, self.rng,
                                         allow_synthesis=self.env.allow_synthesis)
        arm = self.trace.arms[arm_id]
        monetary = self.env.policy.monetary(rec.input_tokens, rec.output_tokens, arm)
        cost = self.env.policy.cost(monetary, rec.latency_s)
        if not self.ledger.can_afford(cost):
            return None
        self.ledger.charge(cost)
        self.ledger.observe(arm_id, monetary, rec.latency_s)
        state.k = arm_id
        state.requery_counts[arm_id] += 1
        resp = Response(arm_id, idx, rec.answer_id, rec.is_correct, rec.input_tokens,
                        rec.output_tokens, cost)
        state.responses.append(resp)
        self.result.arm_queries[arm_id] += 1
        return resp

    def finish(self, state: EnvState, answer: int | None) -> None:
        truth = self.trace.question(state.question_id).ground_truth
        state.done = True
        state.final_answer = answer
        state.final_correct = answer is not None and answer == truth
        self.result.n_correct += int(state.final_correct)
        if not state.responses:
            self.result.n_unanswered += 1
        self.ledger.finish_question()

    def close(self) -> EpisodeResult:
        self.result.spend = self.ledger.spent
        self.result.max_spend_seen = self.ledger.spent
        return self.result


def _env(trace, policy: PricingPolicy | None, env: CascadeEnv | None, **kw) -> CascadeEnv:
    if env is not None:
        return env
    return CascadeEnv(trace, policy or PricingPolicy(), **kw)


def _ids(trace, question_ids):
    return list(trace.split_ids("test") if question_ids is None else question_ids)


# ----------------------------------------------------------------------------
# single model and majority voting


def single_model_run(trace, budget: float, policy: PricingPolicy | None = None,
                     question_ids: Sequence[int] | None = None, seed: int = 0,
                     env: CascadeEnv | None = None) -> EpisodeResult:
    """Query the highest arm whose average cost fits ``B/n`` once per question."""
    env = _env(trace, policy, env)
    ids = _ids(trace, question_ids)
    s = _Session(env, ids, budget, seed)
    per_q = budget / len(ids) if ids else 0.0
    costs = [s.ledger.avg_cost(k) for k in range(env.K)]
    fits = [k for k in range(env.K) if costs[k] <= per_q * (1 + _TOL)]
    arm = max(fits) if fits else None
    for qid in ids:
        st = s.start(qid)
        if arm is not None:
            s.query(st, arm)
        s.finish(st, final_answer(st.responses))
    return s.close()


def majority_vote_run(trace, budget: float, n_votes: int = 2, policy: PricingPolicy | None = None,
                      question_ids: Sequence[int] | None = None, seed: int = 0,
                      env: CascadeEnv | None = None, r_max: int = R_MAX) -> EpisodeResult:
    """Majority voting with per-question allowance ``B/n``.

    Starting at the first affordable arm, take ``n_votes`` samples (the
    temperature-0 answer then re-queries). Return as soon as some answer has
    ``n_votes`` occurrences; otherwise move to the next arm if it fits the
    allowance, or keep re-querying the current arm (up to ``r_max``) until
    an answer reaches ``n_votes``. On a lone arm this is exactly first-to-N
    self-consistency.
    """
    if n_votes < 1:
        raise ValueError("n_votes must be >= 1")
    env = _env(trace, policy, env)
    ids = _ids(trace, question_ids)
    s = _Session(env, ids, budget, seed)
    per_q = budget / len(ids) if ids else 0.0

    for qid in ids:
        st = s.start(qid)
        spent_q = 0.0

        def fits(k):
            return spent_q + s.ledger.avg_cost(k) <= per_q * (1 + _TOL)

        k = next((a for a in range(env.K) if fits(a)), None)
        while k is not None:
            r = None
            while st.requery_counts[k] < min(n_votes, r_max) and fits(k):
                r = s.query(st, k)
                if r is None:
                    break
                spent_q += r.cost
            counts = Counter(x.answer_id for x in st.responses)
            if st.responses and max(counts.values()) >= n_votes:
                break
            nxt = k + 1 if k + 1 < env.K and fits(k + 1) else None
            if nxt is not None:
                k = nxt
                continue
            # nowhere to escalate: keep sampling this arm until an answer repeats enough
            while st.requery_counts[k] < r_max and fits(k):
                r = s.query(st, k)
                if r is None:
                    break
                spent_q += r.cost
                if max(Counter(x.answer_id for x in st.responses).values()) >= n_votes:
                    break
            break
        s.finish(st, final_answer(st.responses))
    return s.close()


# ----------------------------------------------------------------------------
# correctness estimator


class CorrectnessEstimator:
    """Two-layer network mapping a state vector to P(current response correct)."""

    def __init__(self, state_dim: int, hidden: int = 64, rng: np.random.Generator | None = None):
        self.mlp = MLP((state_dim, hidden, 1), rng)
        self.class_weights = (1.0, 1.0)
        self.threshold = 0.5
        self.p_high = 0.5
        self.p_low = 0.5

    def predict(self, x: np.ndarray) -> np.ndarray:
        z = self.mlp.forward(np.atleast_2d(x))[:, 0]
        return sigmoid(z)

    def estimate(self, x: np.ndarray, state: EnvState) -> float:
        return float(self.predict(x)[0])


class OracleEstimator:
    """Reports the ground-truth correctness of the latest response."""

    threshold = 0.5
    p_high = 0.5
    p_low = 0.5

    def estimate(self, x: np.ndarray, state: EnvState) -> float:
        return 1.0 if state.responses and state.responses[-1].is_correct else 0.0


def class_weights(y: np.ndarray) -> tuple[float, float]:
    """Inverse-frequency weights ``n / (2 n_c)`` for classes 0 and 1."""
    y = np.asarray(y).astype(bool)
    n1 = int(y.sum())
    n0 = len(y) - n1
    if n0 == 0 or n1 == 0:
        raise DegenerateEstimatorError("training labels contain a single class")
    return len(y) / (2.0 * n0), len(y) / (2.0 * n1)


def fit_estimator(X: np.ndarray, y: np.ndarray, hidden: int = 64, epochs: int = 40,
                  batch_size: int = 128, lr: float = 1e-3, seed: int = 0) -> CorrectnessEstimator:
    """Weighted binary cross-entropy fit with Adam."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    w0, w1 = class_weights(y)
    rng = np.random.default_rng([seed, 0xE57])
    est = CorrectnessEstimator(X.shape[1], hidden, rng)
    est.class_weights = (w0, w1)
    opt = Adam(est.mlp.params, lr=lr)
    sw = np.where(y > 0.5, w1, w0)
    n = len(y)
    for _ in range(epochs):
        order = rng.permutation(n)
        for start in range(0, n, batch_size):
            b = order[start:start + batch_size]
            z, acts = est.mlp.forward(X[b], cache=True)
            p = sigmoid(z[:, 0])
            # d(weighted BCE)/dz = w (p - y)
            dz = (sw[b] * (p - y[b]) / len(b))[:, None]
            grads, _ = est.mlp.backward(acts, dz)
            opt.step(est.mlp.params, grads)
    if not est.mlp.all_finite():
        raise DegenerateEstimatorError("estimator weights diverged")
    return est


def collect_estimator_data(env: CascadeEnv, question_ids: Sequence[int], seed: int = 0,
                           budgets_per_question: Sequence[float] | None = None,
                           stream_len: int = 50, max_requeries: int = 2):
    """State vectors after each response with the response's correctness.

    Each question walks every arm in order and re-queries each a random
    number of times (0..``max_requeries``), so consistency features vary.
    Questions are grouped into streams with a sampled per-question budget so
    the budget features cover their usual range.
    """
    from .dqn_policy import default_budget_grid

    rng = np.random.default_rng([seed, 0xDA7A])
    grid = budgets_per_question or default_budget_grid(env)
    X, y = [], []
    ids = list(question_ids)
    for start in range(0, len(ids), stream_len):
        chunk = ids[start:start + stream_len]
        per_q = float(grid[int(rng.integers(len(grid)))])
        s = _Session(env, chunk, per_q * len(chunk), int(rng.integers(2**31)))
        s.rng = rng
        for qid in chunk:
            st = s.start(qid)
            for k in range(env.K):
                n_req = 1 + int(rng.integers(max_requeries + 1))
                for _ in range(n_req):
                    r = s.query(st, k)
                    if r is None:
                        break
                    X.append(env.encode(st, s.ledger))
                    y.append(r.is_correct)
            s.finish(st, final_answer(st.responses))
    return np.array(X), np.array(y, dtype=bool)


THRESHOLD_GRID = tuple(np.round(np.linspace(0.0, 1.0, 21), 10))
BAND_GRID = tuple(np.round(np.linspace(0.0, 1.0, 11), 10))


def tune_threshold(trace, estimator, budget_per_question: float, env: CascadeEnv,
                   question_ids: Sequence[int], grid: Sequence[float] = THRESHOLD_GRID) -> float:
    """Threshold maximizing threshold-cascade accuracy on ``question_ids``;
    ties go to the larger threshold (more escalation)."""
    best, best_acc = None, -1.0
    for t in grid:
        acc = threshold_cascade_run(trace, budget_per_question * len(question_ids), estimator, t,
                                    env=env, question_ids=question_ids).accuracy
        if acc >= best_acc - _TOL:
            best, best_acc = float(t), max(acc, best_acc)
    return best


def tune_band(trace, estimator, budget_per_question: float, env: CascadeEnv,
              question_ids: Sequence[int], grid: Sequence[float] = BAND_GRID) -> tuple[float, float]:
    best, best_acc = (1.0, 1.0), -1.0
    for lo in grid:
        for hi in grid:
            if hi < lo:
                continue
            acc = calibrated_cascade_run(trace, budget_per_question * len(question_ids), estimator,
                                         hi, lo, env=env, question_ids=question_ids).accuracy
            if acc > best_acc + _TOL:
                best, best_acc = (float(hi), float(lo)), acc
    return best


def train_estimator(trace, policy: PricingPolicy | None = None, env: CascadeEnv | None = None,
                    seed: int = 0, reference_budget: float | None = None, hidden: int = 64,
                    epochs: int = 40, tune_questions: int = 300,
                    tune_calibrated: bool = True) -> CorrectnessEstimator:
    """Fit on the train split and tune decision thresholds on the val split.

    ``reference_budget`` is per question; it defaults to the middle of the
    training budget grid.
    """
    from .dqn_policy import default_budget_grid

    env = _env(trace, policy, env)
    X, y = collect_estimator_data(env, trace.split_ids("train"), seed)
    if len(y) == 0:
        raise DegenerateEstimatorError("no training records could be collected")
    est = fit_estimator(X, y, hidden=hidden, epochs=epochs, seed=seed)
    val = trace.split_ids("val")[:tune_questions]
    if not val:
        logger.warning("no validation questions; keeping default thresholds")
        return est
    ref = reference_budget
    if ref is None:
        ref = float(np.median(default_budget_grid(env)))
    est.threshold = tune_threshold(trace, est, ref, env, val)
    if tune_calibrated:
        est.p_high, est.p_low = tune_band(trace, est, ref, env, val)
    return est


# ----------------------------------------------------------------------------
# estimator-driven cascades


def _cascade(trace, budget, estimator, p_high, p_low, env, question_ids, seed, r_max,
             allow_requery):
    ids = _ids(trace, question_ids)
    s = _Session(env, ids, budget, seed)
    for qid in ids:
        st = s.start(qid)
        # the unspent allowance of earlier questions carries over
        allowance = s.ledger.remaining / max(s.ledger.questions_remaining, 1)
        spent_q = 0.0

        def fits(k):
            return spent_q + s.ledger.avg_cost(k) <= allowance * (1 + _TOL)

        k = next((a for a in range(env.K) if fits(a)), None)
        if k is not None and s.query(st, k) is not None:
            spent_q += st.responses[-1].cost
        while st.responses:
            conf = estimator.estimate(env.encode(st, s.ledger), st)
            if conf >= p_high:
                break
            can_next = st.k + 1 < env.K and fits(st.k + 1)
            can_again = allow_requery and st.requery_counts[st.k] < r_max and fits(st.k)
            if conf >= p_low and can_again:
                target = st.k
            elif can_next:
                target = st.k + 1
            else:
                break
            r = s.query(st, target)
            if r is None:
                break
            spent_q += r.cost
        # answer with the responses of the arm we stopped at
        here = [r for r in st.responses if r.arm_id == st.k]
        s.finish(st, final_answer(here))
    return s.close()


def threshold_cascade_run(trace, budget: float, estimator, threshold: float | None = None,
                          policy: PricingPolicy | None = None, env: CascadeEnv | None = None,
                          question_ids: Sequence[int] | None = None, seed: int = 0) -> EpisodeResult:
    """Escalate through the arms until the estimate reaches ``threshold``.

    Each question may spend the remaining budget divided by the remaining
    question count. There is no re-querying; the answer is the response of
    the arm the cascade stops at.
    """
    env = _env(trace, policy, env)
    t = estimator.threshold if threshold is None else threshold
    return _cascade(trace, budget, estimator, t, t, env, question_ids, seed, R_MAX, False)


def calibrated_cascade_run(trace, budget: float, estimator, p_high: float | None = None,
                           p_low: float | None = None, policy: PricingPolicy | None = None,
                           env: CascadeEnv | None = None, question_ids: Sequence[int] | None = None,
                           seed: int = 0, r_max: int = R_MAX) -> EpisodeResult:
    """Return above ``p_high``, re-query the same arm inside
    ``[p_low, p_high)``, escalate below ``p_low``."""
    p_high = estimator.p_high if p_high is None else p_high
    p_low = estimator.p_low if p_low is None else p_low
    if not 0.0 <= p_low <= p_high <= 1.0:
        raise ValueError("need 0 <= p_low <= p_high <= 1")
    env = _env(trace, policy, env)
    return _cascade(trace, budget, estimator, p_high, p_low, env, question_ids, seed, r_max, True)


# ----------------------------------------------------------------------------
# knapsack baselines


@dataclass
class KnapsackInstance:
    """One item per (question, arm); skipping a question is always allowed."""

    values: np.ndarray
    costs: np.ndarray
    budget: float

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.costs = np.asarray(self.costs, dtype=float)
        if self.values.shape != self.costs.shape or self.values.ndim != 2:
            raise ValueError("values and costs must be matching (n, K) arrays")
        if np.any(self.costs < 0):
            raise ValueError("costs must be non-negative")
        if np.any((self.values < 0) | (self.values > 1)):
            raise ValueError("values must lie in [0, 1]")
        if self.budget < 0:
            raise ValueError("budget must be non-negative")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def k(self) -> int:
        return self.values.shape[1]

    def evaluate(self, selection: Sequence[int]) -> tuple[float, float]:
        """(value, cost) of a selection, ``-1`` meaning skip."""
        v = c = 0.0
        for i, a in enumerate(selection):
            if a >= 0:
                v += self.values[i, a]
                c += self.costs[i, a]
        return v, c


@dataclass
class KnapsackSolution:
    selection: list
    value: float
    cost: float
    exact: bool = True


def _hull_slopes(values: np.ndarray, costs: np.ndarray) -> list:
    """Zero-cost value and incremental (slope, cost, value) segments of the
    upper concave hull through the skip item (0, 0)."""
    pts = sorted({(0.0, 0.0)} | {(float(c), float(v)) for c, v in zip(costs, values)})
    hull = []
    for c, v in pts:
        if hull and v <= hull[-1][1]:
            continue
        while len(hull) >= 2:
            (c1, v1), (c2, v2) = hull[-2], hull[-1]
            if (v2 - v1) * (c - c1) <= (v - v1) * (c2 - c1):
                hull.pop()
            else:
                break
        if hull and c == hull[-1][0]:
            hull[-1] = (c, max(v, hull[-1][1]))
            continue
        hull.append((c, v))
    segs = []
    for (c1, v1), (c2, v2) in zip(hull, hull[1:]):
        dc, dv = c2 - c1, v2 - v1
        segs.append((dv / dc, dc, dv))
    return hull[0][1], segs


def _lp_bound(hulls: list, budget: float) -> float:
    segs = sorted((s for _, segs in hulls for s in segs), key=lambda s: -s[0])
    total, cap = sum(base for base, _ in hulls), budget
    for ratio, dc, dv in segs:
        if dc <= cap:
            total += dv
            cap -= dc
        else:
            total += ratio * cap
            break
    return total


def _branch_and_bound(inst: KnapsackInstance) -> KnapsackSolution:
    n, k = inst.n, inst.k
    segs = [_hull_slopes(inst.values[i], inst.costs[i]) for i in range(n)]
    best = {"value": -1.0, "sel": None}
    sel = [-1] * n
    eps = 1e-12

    def dfs(i, value, cap):
        if i == n:
            if value > best["value"] + eps:
                best["value"], best["sel"] = value, list(sel)
            return
        if value + _lp_bound(segs[i:], cap) <= best["value"] + eps:
            return
        for a in range(-1, k):
            c = 0.0 if a < 0 else inst.costs[i, a]
            if c > cap + eps * max(1.0, inst.budget):
                continue
            sel[i] = a
            dfs(i + 1, value + (0.0 if a < 0 else inst.values[i, a]), cap - c)
        sel[i] = -1

    dfs(0, 0.0, inst.budget)
    v, c = inst.evaluate(best["sel"])
    return KnapsackSolution(best["sel"], v, c, exact=True)


def _grid_dp(inst: KnapsackInstance, grid: float) -> KnapsackSolution:
    n, k = inst.n, inst.k
    cap = int(math.floor(inst.budget / grid + 1e-9))
    # anything above the capacity is unaffordable; clip before the cast so
    # tiny budgets cannot overflow
    units = np.minimum(np.ceil(inst.costs / grid - 1e-9), cap + 1).astype(int)
    dp = np.zeros(cap + 1)
    choice = np.full((n, cap + 1), -1, dtype=np.int16)
    for i in range(n):
        new = dp.copy()
        arg = np.full(cap + 1, -1, dtype=np.int16)
        for a in range(k):
            u = units[i, a]
            if u > cap:
                continue
            cand = np.full(cap + 1, -np.inf)
            cand[u:] = dp[:cap + 1 - u] + inst.values[i, a]
            better = cand > new + 1e-12
            new = np.where(better, cand, new)
            arg = np.where(better, a, arg)
        dp = new
        choice[i] = arg
    sel = [-1] * n
    j = cap
    for i in reversed(range(n)):
        a = int(choice[i, j])
        sel[i] = a
        if a >= 0:
            j -= units[i, a]
    v, c = inst.evaluate(sel)
    return KnapsackSolution(sel, v, c, exact=False)


def offline_knapsack_solve(inst: KnapsackInstance, exact_limit: int = 12,
                           grid: float | None = None) -> KnapsackSolution:
    """Best one-item-or-skip-per-question selection within the budget.

    Exact branch and bound (LP-relaxation bound) for up to ``exact_limit``
    questions; ties resolve to the lexicographically smallest selection with
    skip ordered before arm 0. Larger instances use a DP with costs rounded
    up to multiples of ``grid`` (default ``B / (20 n)``, at least 4000 cells),
    which is feasible and worth at least the optimum at budget ``B - n*grid``.
    """
    if inst.n == 0:
        return KnapsackSolution([], 0.0, 0.0)
    if inst.budget <= 0:
        zero = [-1] * inst.n
        for i in range(inst.n):
            free = [a for a in range(inst.k) if inst.costs[i, a] == 0 and inst.values[i, a] > 0]
            if free:
                zero[i] = max(free, key=lambda a: (inst.values[i, a], -a))
        v, c = inst.evaluate(zero)
        return KnapsackSolution(zero, v, c)
    if inst.n <= exact_limit:
        return _branch_and_bound(inst)
    if grid is None:
        grid = inst.budget / max(20 * inst.n, 4000)
    return _grid_dp(inst, grid)


def trace_knapsack_instance(trace, budget: float, policy: PricingPolicy,
                            question_ids: Sequence[int]) -> KnapsackInstance:
    """Hindsight instance: value = correctness of the temperature-0 answer,
    cost = that query's actual cost."""
    ids = list(question_ids)
    v = np.zeros((len(ids), trace.n_arms))
    c = np.zeros_like(v)
    for i, qid in enumerate(ids):
        for k, arm in enumerate(trace.arms):
            rec = trace.sample_response(qid, k, 0)
            v[i, k] = float(rec.is_correct)
            c[i, k] = policy.record_cost(rec, arm)
    return KnapsackInstance(v, c, budget)


def offline_knapsack_run(trace, budget: float, policy: PricingPolicy | None = None,
                         question_ids: Sequence[int] | None = None) -> EpisodeResult:
    policy = policy or PricingPolicy()
    ids = _ids(trace, question_ids)
    inst = trace_knapsack_instance(trace, budget, policy, ids)
    sol = offline_knapsack_solve(inst)
    # skips that tie with a worthless answer still get answered if money is left
    spent = sol.cost
    for i, a in enumerate(sol.selection):
        if a < 0:
            fit = [k for k in range(inst.k) if spent + inst.costs[i, k] <= budget]
            if fit:
                sol.selection[i] = fit[0]
                spent += inst.costs[i, fit[0]]
    sol.value, sol.cost = inst.evaluate(sol.selection)
    arm_q = np.zeros(trace.n_arms, dtype=int)
    for a in sol.selection:
        if a >= 0:
            arm_q[a] += 1
    return EpisodeResult(len(ids), int(round(sol.value)), sum(a < 0 for a in sol.selection),
                         sol.cost, float(budget), arm_q, max_spend_seen=sol.cost)


def psi(z: float, lower: float, upper: float) -> float:
    """Acceptance threshold on value/cost at fill fraction ``z``."""
    return (upper * math.e / lower) ** z * (lower / math.e)


def _online_pick(values, costs, remaining, spent, budget, lower, upper, greedy):
    best, best_v = -1, -1.0
    z = min(spent / budget, 1.0) if budget > 0 else 1.0
    bar = None if greedy else psi(z, lower, upper)
    for a in range(len(values)):
        c = costs[a]
        if c > remaining * (1 + _TOL):
            continue
        ratio = math.inf if c == 0 else values[a] / c
        if greedy:
            if ratio < lower:
                continue
        elif ratio < bar:
            continue
        if values[a] > best_v:
            best, best_v = a, values[a]
    return best


def _check_bounds(lower: float, upper: float) -> bool:
    if not 0 < lower <= upper:
        raise ValueError("need 0 < L <= U")
    # L = U still works: the bar climbs from L/e to U
    return False


def online_knapsack_select(inst: KnapsackInstance, lower: float, upper: float) -> KnapsackSolution:
    """Run the threshold rule over an instance's items in question order."""
    greedy = _check_bounds(lower, upper)
    spent, sel = 0.0, []
    for i in range(inst.n):
        a = _online_pick(inst.values[i], inst.costs[i], inst.budget - spent, spent, inst.budget,
                         lower, upper, greedy)
        sel.append(a)
        if a >= 0:
            spent += inst.costs[i, a]
    v, c = inst.evaluate(sel)
    return KnapsackSolution(sel, v, c, exact=False)


def tier_value_table(trace, question_ids: Sequence[int] | None = None) -> dict:
    """Per-tier (or overall, key ``None``) accuracy of each arm's
    temperature-0 answers on the train split."""
    ids = list(trace.split_ids("train") if question_ids is None else question_ids)
    groups: dict = {}
    for qid in ids:
        groups.setdefault(trace.question(qid).tier, []).append(qid)
    groups.setdefault(None, ids)
    out = {}
    for tier, qs in groups.items():
        acc = np.zeros(trace.n_arms)
        for k in range(trace.n_arms):
            acc[k] = np.mean([trace.sample_response(q, k, 0).is_correct for q in qs]) if qs else 0.0
        out[tier] = acc
    return out


def ratio_bounds(trace, env: CascadeEnv, values: dict | None = None) -> tuple[float, float]:
    """(L, U): smallest and largest positive value-per-cost over tiers and arms."""
    values = values or tier_value_table(trace)
    costs = np.array([env.policy.cost(m, l) for m, l in zip(env.prior_monetary, env.prior_latency)])
    ratios = [v / c for acc in values.values() for v, c in zip(acc, costs) if v > 0 and c > 0]
    if not ratios:
        raise ValueError("no arm has positive value and cost")
    return min(ratios), max(ratios)


def online_knapsack_run(trace, budget: float, lower: float | None = None, upper: float | None = None,
                        policy: PricingPolicy | None = None, question_ids: Sequence[int] | None = None,
                        seed: int = 0, env: CascadeEnv | None = None) -> EpisodeResult:
    """Online threshold acceptance over the question stream.

    Values are tier-conditional train-split accuracies; costs are the
    ledger's running averages. The chosen arm is queried once.
    """
    env = _env(trace, policy, env)
    values = tier_value_table(trace)
    if lower is None or upper is None:
        lo, hi = ratio_bounds(trace, env, values)
        lower = lo if lower is None else lower
        upper = hi if upper is None else upper
    greedy = _check_bounds(lower, upper)
    ids = _ids(trace, question_ids)
    s = _Session(env, ids, budget, seed)
    for qid in ids:
        st = s.start(qid)
        tier = trace.question(qid).tier
        v = values.get(tier, values[None])
        costs = np.array([s.ledger.avg_cost(k) for k in range(env.K)])
        a = _online_pick(v, costs, s.ledger.remaining, s.ledger.spent, budget, lower, upper, greedy)
        if a >= 0:
            s.query(st, a)
        s.finish(st, final_answer(st.responses))
    return s.close()
