"""The arm-selection MDP.

Per question the agent walks forward along the sorted arm list. It may
return the current answer (A1), re-query the current arm at its re-query
temperature (A2), or move to the next arm and query it at temperature 0
(A3). Every issued query is paid from a ledger shared by all questions.

State vector layout (``D = 7 + d + 2K``)::

    [0:3]          top-3 answer frequencies, normalized, zero-padded
    [3]            responses so far / r_max
    [4]            1 if the last two responses agree
    [5]            input tokens of the last query / 1000
    [6]            output tokens of the last response / 1000
    [7:7+d]        question embedding
    [7+d:7+d+K]    per-arm query counts / r_max
    [7+d+K:]       per-arm normalized remaining budget B_k
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Sequence

import numpy as np

from .cost_model import B_CLIP, BudgetLedger, PricingPolicy
from .embedder import DEFAULT_DIM, embed_trace

R_MAX = 8
DEFAULT_LAMBDA = 5.0
N_HEAD = 7


class Action(IntEnum):
    RETURN = 0
    REQUERY = 1
    NEXT = 2


N_ACTIONS = len(Action)


class ContractViolation(RuntimeError):
    pass


@dataclass(frozen=True)
class Response:
    arm_id: int
    sample_index: int
    answer_id: int
    is_correct: bool
    input_tokens: int
    output_tokens: int
    cost: float


@dataclass
class EnvState:
    question_id: int
    n_arms: int
    k: int = 0
    responses: list = field(default_factory=list)
    requery_counts: np.ndarray = None
    done: bool = False
    final_answer: int | None = None
    final_correct: bool = False

    def __post_init__(self):
        if self.requery_counts is None:
            self.requery_counts = np.zeros(self.n_arms, dtype=int)

    @property
    def queried_arms(self) -> list:
        return [r.arm_id for r in self.responses]


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray | None
    terminal: bool
    next_legal: np.ndarray | None = None
    question_end: bool = False
    forced: bool = False


def final_answer(responses: Sequence[Response]) -> int | None:
    """Majority answer; ties go to the answer seen on the highest arm, then
    to the lowest answer id. ``None`` when nothing was queried."""
    if not responses:
        return None
    counts = Counter(r.answer_id for r in responses)
    top = max(counts.values())
    best_arm = {}
    for r in responses:
        if counts[r.answer_id] == top:
            best_arm[r.answer_id] = max(best_arm.get(r.answer_id, -1), r.arm_id)
    return min(best_arm, key=lambda a: (-best_arm[a], a))


def reward(action: Action, current_correct: bool | None, final_correct: bool | None,
           lam: float = DEFAULT_LAMBDA) -> float:
    """``[final correct] * [action is return] + lam * [current response correct]``.

    ``current_correct`` is ``None`` when no response exists (a skip).
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if current_correct is None and action != Action.RETURN:
        raise ContractViolation("query actions need the new response's correctness")
    if action == Action.RETURN and current_correct is None:
        return 0.0
    if action == Action.RETURN and final_correct is None:
        raise ContractViolation("reward needs ground truth")
    r = lam * float(bool(current_correct))
    if action == Action.RETURN:
        r += float(bool(final_correct))
    return r


class CascadeEnv:
    """Simulation context: trace, pricing, embeddings and MDP constants."""

    def __init__(self, trace, policy: PricingPolicy, embeddings=None, lam: float = DEFAULT_LAMBDA,
                 r_max: int = R_MAX, allow_requery: bool = True, b_clip: float = B_CLIP,
                 allow_synthesis: bool = True, d: int = DEFAULT_DIM):
        self.trace = trace
        self.policy = policy
        self.embeddings = embeddings if embeddings is not None else embed_trace(trace, d)
        self.d = self.embeddings.d
        self.lam = lam
        self.r_max = r_max
        self.allow_requery = allow_requery
        self.b_clip = b_clip
        self.allow_synthesis = allow_synthesis
        self.K = trace.n_arms
        mean_in, mean_out, mean_lat = trace.arm_means()
        self.prior_monetary = np.array([
            policy.monetary(mean_in[k], mean_out[k], trace.arms[k]) for k in range(self.K)])
        self.prior_latency = mean_lat
        self.state_dim = N_HEAD + self.d + 2 * self.K

    # -- setup -----------------------------------------------------------------

    def new_ledger(self, budget: float, n_questions: int) -> BudgetLedger:
        return BudgetLedger(budget, n_questions, self.policy, self.prior_monetary,
                            self.prior_latency, b_clip=self.b_clip)

    def reset(self, question_id: int) -> EnvState:
        return EnvState(question_id=question_id, n_arms=self.K)

    # -- observation -----------------------------------------------------------

    def encode(self, state: EnvState, ledger: BudgetLedger) -> np.ndarray:
        x = np.zeros(self.state_dim)
        resp = state.responses
        if resp:
            counts = sorted(Counter(r.answer_id for r in resp).values(), reverse=True)[:3]
            x[:len(counts)] = np.array(counts) / len(resp)
            x[3] = len(resp) / self.r_max
            if len(resp) >= 2 and resp[-1].answer_id == resp[-2].answer_id:
                x[4] = 1.0
            x[5] = resp[-1].input_tokens / 1000.0
            x[6] = resp[-1].output_tokens / 1000.0
        x[7:7 + self.d] = self.embeddings[state.question_id]
        off = 7 + self.d
        x[off:off + self.K] = state.requery_counts / self.r_max
        x[off + self.K:] = ledger.budget_features()
        np.clip(x[:7], 0.0, self.b_clip, out=x[:7])
        np.clip(x[off:], 0.0, self.b_clip, out=x[off:])
        return x

    def legal_actions(self, state: EnvState, ledger: BudgetLedger) -> np.ndarray:
        """Boolean mask over (RETURN, REQUERY, NEXT)."""
        mask = np.zeros(N_ACTIONS, dtype=bool)
        mask[Action.RETURN] = True
        if state.done:
            return mask
        k = state.k
        if (self.allow_requery or not state.responses) and state.requery_counts[k] < self.r_max \
                and ledger.can_afford(ledger.avg_cost(k)):
            mask[Action.REQUERY] = True
        if k < self.K - 1 and ledger.can_afford(ledger.avg_cost(k + 1)):
            mask[Action.NEXT] = True
        return mask

    # -- dynamics --------------------------------------------------------------

    def _finalize(self, state: EnvState, ledger: BudgetLedger, action: Action,
                  x: np.ndarray, forced: bool) -> Transition:
        ans = final_answer(state.responses)
        truth = self.trace.question(state.question_id).ground_truth
        state.final_answer = ans
        state.final_correct = ans is not None and ans == truth
        state.done = True
        current = state.responses[-1].is_correct if state.responses else None
        r = reward(Action.RETURN, current, state.final_correct, self.lam)
        ledger.finish_question()
        return Transition(x, int(action), r, None, True, None, question_end=True, forced=forced)

    def step(self, state: EnvState, action: Action, ledger: BudgetLedger,
             rng: np.random.Generator, x: np.ndarray | None = None) -> Transition:
        """Apply ``action`` in place and return the transition.

        On question end ``next_state`` is ``None``; the caller decides what
        follows (see :func:`run_episode`). A query whose sampled cost
        overdraws the ledger is never issued and the question is returned.
        """
        action = Action(action)
        if state.done:
            raise ContractViolation("question already finished")
        if x is None:
            x = self.encode(state, ledger)
        legal = self.legal_actions(state, ledger)
        if not legal[action]:
            raise ContractViolation(f"illegal action {action.name}")
        if action == Action.RETURN:
            return self._finalize(state, ledger, action, x, forced=False)
        arm_id = state.k if action == Action.REQUERY else state.k + 1
        idx = int(state.requery_counts[arm_id])
        rec = self.trace.sample_response(state.question_id, arm_id, idx, rng,
                                         allow_synthesis=self.allow_synthesis)
        arm = self.trace.arms[arm_id]
        monetary = self.policy.monetary(rec.input_tokens, rec.output_tokens, arm)
        cost = self.policy.cost(monetary, rec.latency_s)
        if not ledger.can_afford(cost):
            tr = self._finalize(state, ledger, action, x, forced=True)
            return Transition(tr.state, int(action), tr.reward, None, True, None,
                              question_end=True, forced=True)
        ledger.charge(cost)
        ledger.observe(arm_id, monetary, rec.latency_s)
        state.k = arm_id
        state.requery_counts[arm_id] += 1
        state.responses.append(Response(arm_id, idx, rec.answer_id, rec.is_correct,
                                        rec.input_tokens, rec.output_tokens, cost))
        r = reward(action, rec.is_correct, None, self.lam)
        x_next = self.encode(state, ledger)
        return Transition(x, int(action), r, x_next, False, self.legal_actions(state, ledger))


@dataclass
class EpisodeResult:
    n_questions: int
    n_correct: int
    n_unanswered: int
    spend: float
    budget: float
    arm_queries: np.ndarray
    total_reward: float = 0.0
    steps: int = 0
    max_spend_seen: float = 0.0

    @property
    def accuracy(self) -> float:
        return self.n_correct / self.n_questions if self.n_questions else 0.0


Chooser = Callable[[np.ndarray, np.ndarray, EnvState], int]


def run_episode(env: CascadeEnv, question_ids: Sequence[int], budget: float, choose: Chooser,
                rng: np.random.Generator, on_transition: Callable[[Transition], None] | None = None,
                bootstrap_across_questions: bool = True) -> EpisodeResult:
    """Stream ``question_ids`` through ``choose`` under one shared budget.

    With ``bootstrap_across_questions`` a returned question's transition
    continues into the next question's first state; the stream ends (terminal)
    after the last question or once no query is affordable any more.
    Otherwise each question is its own terminal episode.
    """
    ledger = env.new_ledger(budget, len(question_ids))
    res = EpisodeResult(len(question_ids), 0, 0, 0.0, budget, np.zeros(env.K, dtype=int))
    pending = None
    n = len(question_ids)
    for i, qid in enumerate(question_ids):
        state = env.reset(qid)
        x = env.encode(state, ledger)
        legal = env.legal_actions(state, ledger)
        exhausted = not legal[1:].any()
        if pending is not None:
            if bootstrap_across_questions and not exhausted:
                pending = Transition(pending.state, pending.action, pending.reward, x, False,
                                     legal, True, pending.forced)
            on_transition(pending)
            pending = None
        if exhausted:
            # nothing affordable now means nothing affordable later: skip the rest
            res.n_unanswered += n - i
            for _ in range(n - i):
                ledger.finish_question()
            break
        while not state.done:
            legal = env.legal_actions(state, ledger)
            if legal[1:].any():
                a = Action(choose(x, legal, state))
            else:
                a = Action.RETURN
            tr = env.step(state, a, ledger, rng, x)
            res.steps += 1
            res.total_reward += tr.reward
            res.max_spend_seen = max(res.max_spend_seen, ledger.spent)
            if ledger.spent > ledger.total_budget:
                raise ContractViolation("ledger overdrawn")
            if tr.question_end:
                if on_transition is not None:
                    pending = tr
            else:
                if on_transition is not None:
                    on_transition(tr)
                x = tr.next_state
        for r in state.responses:
            res.arm_queries[r.arm_id] += 1
        if not state.responses:
            res.n_unanswered += 1
        res.n_correct += int(state.final_correct)
    if pending is not None:
        on_transition(pending)
    res.spend = ledger.spent
    return res


def encode_state(env: CascadeEnv, state: EnvState, ledger: BudgetLedger) -> np.ndarray:
    return env.encode(state, ledger)


ORDERINGS = ("given", "easy-first", "hard-first", "shuffled")


def order_questions(trace, question_ids: Sequence[int], ordering: str = "given",
                    seed: int = 0) -> list:
    """Arrange a question stream.

    Difficulty is the synthetic tier when present, else the number of arms
    whose temperature-0 answer is wrong. Sorting is stable.
    """
    ids = list(question_ids)
    if ordering == "given":
        return ids
    if ordering == "shuffled":
        rng = np.random.default_rng([seed, 0x5F1E])
        return [ids[i] for i in rng.permutation(len(ids))]
    if ordering not in ORDERINGS:
        raise ValueError(f"unknown ordering {ordering!r}; expected one of {ORDERINGS}")

    def hardness(qid):
        q = trace.question(qid)
        if q.tier is not None:
            return 0 if q.tier == "easy" else 1
        wrong = 0
        for k in range(trace.n_arms):
            rec = trace.records.get((qid, k, 0))
            wrong += int(rec is not None and not rec.is_correct)
        return wrong

    return sorted(ids, key=hardness, reverse=(ordering == "hard-first"))
