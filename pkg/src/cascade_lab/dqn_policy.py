"""Deep Q-learning for the arm-selection MDP.

Value network: state -> 128 ReLU units -> 3 linear action values. Trained
with Huber loss, Adam (lr 1e-4), batches of 64 from a uniform replay buffer,
epsilon-greedy exploration decaying exponentially from 0.9 to 0.05, and a
periodically synced target network.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .cost_model import PricingPolicy
from .embedder import DEFAULT_DIM
from .mdp_env import N_ACTIONS, N_HEAD, Action, CascadeEnv, Transition, run_episode
from .nets import MLP, Adam, huber

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1


# Settings used for the planted two-arm trace (cheap query ~8.0e-4 under
# monetary pricing). Budgets span roughly 6 to 25 cheap queries per question.
PLANTED_RECIPE = {
    "lam": 0.0,
    "double_q": True,
    "questions_per_epoch": 20,
    "budgets_per_question": (0.0048, 0.0064, 0.008, 0.0096, 0.0112, 0.0136, 0.016, 0.02),
}


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    eps_start: float = 0.9
    eps_end: float = 0.05
    eps_tau: float = 1000.0
    gamma: float = 0.99
    sync_every: int = 500
    train_steps: int = 50_000
    lam: float = 5.0
    seed: int = 0
    buffer_capacity: int = 50_000
    warmup: int = 1000
    hidden: tuple = (128,)
    emb_scale: float = 1.0
    double_q: bool = False
    use_target: bool = True
    bootstrap_across_questions: bool = True
    questions_per_epoch: int = 100
    budgets_per_question: tuple | None = None
    pricing: tuple = ()
    r_max: int = 8
    allow_requery: bool = True
    huber_delta: float = 1.0
    eval_every: int = 5000
    eval_questions: int = 300
    eval_budget_per_question: float | None = None
    finetune_steps: int = 3000

    def __post_init__(self):
        if not 0.0 <= self.eps_end <= self.eps_start <= 1.0:
            raise ValueError("need 0 <= eps_end <= eps_start <= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        self.hidden = tuple(self.hidden)
        if self.budgets_per_question is not None:
            self.budgets_per_question = tuple(self.budgets_per_question)
        self.pricing = tuple(p if isinstance(p, PricingPolicy) else PricingPolicy.from_dict(p)
                             for p in self.pricing)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["pricing"] = [p.to_dict() for p in self.pricing]
        d["hidden"] = list(self.hidden)
        if self.budgets_per_question is not None:
            d["budgets_per_question"] = list(self.budgets_per_question)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys {sorted(unknown)}")
        return cls(**d)


class ValueNet:
    """Action-value network with an optional linear adapter on the embedding.

    The adapter is a ``d x d`` matrix applied to the embedding block of the
    input before the MLP. It is the identity unless trained by
    :func:`finetune` in adapter mode. The embedding block is also multiplied
    by ``emb_scale`` (default ``sqrt(d)``) so that unit-norm embeddings enter
    the network at the same scale as the other features.
    """

    def __init__(self, state_dim: int, hidden: Sequence[int] = (128,), emb_dim: int = DEFAULT_DIM,
                 emb_start: int = N_HEAD, rng: np.random.Generator | None = None,
                 n_arms: int | None = None, emb_scale: float | None = None):
        self.state_dim = state_dim
        self.emb_start = emb_start
        self.emb_dim = emb_dim
        self.emb_scale = math.sqrt(emb_dim) if emb_scale is None else float(emb_scale)
        self.n_arms = n_arms if n_arms is not None else (state_dim - emb_start - emb_dim) // 2
        self.mlp = MLP((state_dim, *hidden, N_ACTIONS), rng)
        self.adapter = np.eye(emb_dim)

    @property
    def hidden(self) -> tuple:
        return self.mlp.sizes[1:-1]

    def copy(self) -> "ValueNet":
        new = object.__new__(ValueNet)
        new.__dict__.update(self.__dict__)
        new.mlp = self.mlp.copy()
        new.adapter = self.adapter.copy()
        return new

    def load_from(self, other: "ValueNet") -> None:
        for p, q in zip(self.mlp.params, other.mlp.params):
            p[...] = q
        self.adapter[...] = other.adapter

    def _adapt(self, x: np.ndarray) -> np.ndarray:
        s = slice(self.emb_start, self.emb_start + self.emb_dim)
        x = np.array(x, dtype=float, copy=True)
        x[..., s] = (x[..., s] @ self.adapter) * self.emb_scale
        return x

    def forward(self, x: np.ndarray, cache: bool = False):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.state_dim:
            raise ValueError(f"state dimension {x.shape[-1]} != {self.state_dim}")
        return self.mlp.forward(self._adapt(x), cache=cache)

    def all_finite(self) -> bool:
        return self.mlp.all_finite() and bool(np.all(np.isfinite(self.adapter)))


def forward(net: ValueNet, state: np.ndarray) -> np.ndarray:
    return net.forward(state)


def epsilon(step: int, config: TrainConfig) -> float:
    return config.eps_end + (config.eps_start - config.eps_end) * math.exp(-step / config.eps_tau)


def select_action(net: ValueNet, state: np.ndarray, legal: np.ndarray, eps: float,
                  rng: np.random.Generator) -> Action:
    """Epsilon-greedy over legal actions; greedy ties go to the lowest action."""
    legal = np.asarray(legal, dtype=bool)
    idx = np.flatnonzero(legal)
    if idx.size == 0:
        raise ValueError("no legal action")
    if eps > 0 and rng.random() < eps:
        return Action(int(idx[rng.integers(idx.size)]))
    q = np.where(legal, net.forward(state), -np.inf)
    return Action(int(np.argmax(q)))


class ReplayBuffer:
    def __init__(self, capacity: int, state_dim: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, state_dim))
        self.s2 = np.zeros((capacity, state_dim))
        self.a = np.zeros(capacity, dtype=int)
        self.r = np.zeros(capacity)
        self.term = np.zeros(capacity, dtype=bool)
        self.legal2 = np.zeros((capacity, N_ACTIONS), dtype=bool)
        self.size = 0
        self._pos = 0

    def __len__(self) -> int:
        return self.size

    def add(self, tr: Transition) -> None:
        i = self._pos
        self.s[i] = tr.state
        self.a[i] = tr.action
        self.r[i] = tr.reward
        self.term[i] = tr.terminal
        if tr.terminal or tr.next_state is None:
            self.s2[i] = 0.0
            self.legal2[i] = True
        else:
            self.s2[i] = tr.next_state
            self.legal2[i] = tr.next_legal
        self._pos = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> "Batch":
        if self.size < batch_size:
            raise ValueError("not enough transitions to sample a batch")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.term[idx],
                     self.legal2[idx])


@dataclass
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s2: np.ndarray
    term: np.ndarray
    legal2: np.ndarray

    @classmethod
    def from_transitions(cls, trs: Sequence[Transition], state_dim: int) -> "Batch":
        buf = ReplayBuffer(len(trs), state_dim)
        for t in trs:
            buf.add(t)
        return cls(buf.s, buf.a, buf.r, buf.s2, buf.term, buf.legal2)


def td_targets(target_net: ValueNet, batch: Batch, gamma: float,
               online_net: ValueNet | None = None) -> np.ndarray:
    """Bootstrapped targets; passing ``online_net`` gives double-Q targets
    (the online net picks the next action, the target net scores it)."""
    if gamma == 0.0:
        return batch.r.astype(float).copy()
    q_t = np.where(batch.legal2, target_net.forward(batch.s2), -np.inf)
    if online_net is None:
        q2 = q_t.max(axis=1)
    else:
        a2 = np.where(batch.legal2, online_net.forward(batch.s2), -np.inf).argmax(axis=1)
        q2 = q_t[np.arange(len(a2)), a2]
    q2 = np.where(batch.term, 0.0, q2)
    return batch.r + gamma * q2


def loss_and_grads(net: ValueNet, target_net: ValueNet, batch: Batch, config: TrainConfig,
                   wrt_adapter: bool = False):
    """Mean Huber TD loss and its gradient wrt the MLP parameters (or the
    adapter when ``wrt_adapter``)."""
    y = td_targets(target_net, batch, config.gamma, net if config.double_q else None)
    x_in = net._adapt(batch.s)
    q, acts = net.mlp.forward(x_in, cache=True)
    n = len(batch.a)
    q_sa = q[np.arange(n), batch.a]
    losses, dl = huber(q_sa - y, config.huber_delta)
    dout = np.zeros_like(q)
    dout[np.arange(n), batch.a] = dl / n
    grads, dx = net.mlp.backward(acts, dout)
    if wrt_adapter:
        s = slice(net.emb_start, net.emb_start + net.emb_dim)
        return float(losses.mean()), [net.emb_scale * (batch.s[:, s].T @ dx[:, s])]
    return float(losses.mean()), grads


def train_step(net: ValueNet, target_net: ValueNet, batch: Batch, config: TrainConfig,
               opt: Adam, wrt_adapter: bool = False) -> float:
    """One Adam step on the Huber TD loss; returns the pre-update loss."""
    loss, grads = loss_and_grads(net, target_net, batch, config, wrt_adapter)
    if not math.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss} at optimizer step {opt.t}")
    params = [net.adapter] if wrt_adapter else net.mlp.params
    opt.step(params, grads)
    if not net.all_finite():
        raise TrainingError(f"non-finite weights after optimizer step {opt.t}")
    return loss


# ----------------------------------------------------------------------------
# training loop


def default_budget_grid(env: CascadeEnv, n: int = 8) -> tuple:
    """Per-question budgets spanning cheapest-arm cost to 1.5x the top arm's."""
    costs = [env.policy.cost(m, l) for m, l in zip(env.prior_monetary, env.prior_latency)]
    lo, hi = max(min(costs), 1e-12), max(costs) * 1.5
    return tuple(float(v) for v in np.geomspace(lo, hi, n))


@dataclass
class TrainResult:
    net: ValueNet
    curve: list = field(default_factory=list)
    step: int = 0
    optimizer: Adam | None = None


class _Done(Exception):
    pass


def greedy_chooser(net: ValueNet):
    zero = np.random.default_rng(0)

    def choose(x, legal, state):
        return select_action(net, x, legal, 0.0, zero)
    return choose


def evaluate(net: ValueNet, env: CascadeEnv, question_ids: Sequence[int], budget: float,
             seed: int = 0):
    """Greedy rollout of ``net`` over ``question_ids`` with total ``budget``."""
    rng = np.random.default_rng([seed, 0xE7A1])
    return run_episode(env, list(question_ids), budget, greedy_chooser(net), rng)


def _make_envs(trace, config: TrainConfig, embeddings=None, allow_requery=None) -> list:
    policies = config.pricing or (PricingPolicy(),)
    allow = config.allow_requery if allow_requery is None else allow_requery
    envs = []
    for p in policies:
        env = CascadeEnv(trace, p, embeddings, lam=config.lam, r_max=config.r_max,
                         allow_requery=allow)
        embeddings = env.embeddings
        envs.append(env)
    return envs


def train(trace, config: TrainConfig, net: ValueNet | None = None, start_step: int = 0,
          optimizer: Adam | None = None, question_ids: Sequence[int] | None = None,
          embeddings=None, wrt_adapter: bool = False, n_steps: int | None = None) -> TrainResult:
    """Train (or continue training) a value network on the trace's train split.

    Every epoch streams ``questions_per_epoch`` randomly drawn training
    questions through one fresh ledger whose per-question budget and pricing
    policy are drawn from the configured sets.
    """
    rng = np.random.default_rng([config.seed, start_step, 0xD0])
    envs = _make_envs(trace, config, embeddings)
    env0 = envs[0]
    if net is None:
        net = ValueNet(env0.state_dim, config.hidden, env0.d, rng=np.random.default_rng(config.seed),
                       n_arms=env0.K, emb_scale=config.emb_scale)
    elif net.state_dim != env0.state_dim:
        raise CheckpointError(f"network expects D={net.state_dim}, trace gives D={env0.state_dim}")
    target = net.copy()
    params = [net.adapter] if wrt_adapter else net.mlp.params
    opt = optimizer if optimizer is not None else Adam(params, lr=config.lr)
    buf = ReplayBuffer(config.buffer_capacity, env0.state_dim)
    ids = list(trace.split_ids("train") if question_ids is None else question_ids)
    if not ids:
        raise TrainingError("no training questions")
    budget_grids = [config.budgets_per_question or default_budget_grid(e) for e in envs]
    n_infeasible = 0
    for e, grid in zip(envs, budget_grids):
        costs = [e.policy.cost(m, l) for m, l in zip(e.prior_monetary, e.prior_latency)]
        if max(grid) < min(costs):
            n_infeasible += 1
            logger.warning("every training budget is below the cheapest query; "
                           "the policy can only learn to skip")
    val_ids = trace.split_ids("val")[:config.eval_questions] or ids[:config.eval_questions]
    eval_b = config.eval_budget_per_question or float(np.median(budget_grids[0]))

    total = config.train_steps if n_steps is None else n_steps
    end_step = start_step + total
    state = {"step": start_step, "losses": []}
    curve = []

    def choose(x, legal, st):
        return select_action(net, x, legal, epsilon(state["step"], config), rng)

    def on_transition(tr):
        if state["step"] >= end_step:
            raise _Done
        buf.add(tr)
        state["step"] += 1
        if len(buf) >= max(config.warmup, config.batch_size):
            batch = buf.sample(config.batch_size, rng)
            state["losses"].append(
                train_step(net, target if config.use_target else net, batch, config, opt, wrt_adapter))
        if config.use_target and state["step"] % config.sync_every == 0:
            target.load_from(net)
        if config.eval_every and state["step"] % config.eval_every == 0:
            res = evaluate(net, env0, val_ids, eval_b * len(val_ids), seed=config.seed)
            losses = state["losses"][-config.eval_every:]
            curve.append({"step": state["step"], "epsilon": epsilon(state["step"], config),
                          "loss": float(np.mean(losses)) if losses else float("nan"),
                          "eval_accuracy": res.accuracy})

    if n_infeasible == len(envs):
        # no episode can produce a single transition
        total = 0
    if total > 0:
        try:
            while True:
                e_idx = int(rng.integers(len(envs)))
                env = envs[e_idx]
                grid = budget_grids[e_idx]
                per_q = float(grid[int(rng.integers(len(grid)))])
                m = min(config.questions_per_epoch, len(ids))
                qs = [ids[i] for i in rng.choice(len(ids), size=m, replace=False)]
                run_episode(env, qs, per_q * m, choose, rng, on_transition,
                            bootstrap_across_questions=config.bootstrap_across_questions)
        except _Done:
            pass
    if config.use_target:
        target.load_from(net)
    return TrainResult(net, curve, state["step"], opt)


# ----------------------------------------------------------------------------
# checkpoints and fine-tuning


def save_checkpoint(path, net: ValueNet, config: TrainConfig, step: int = 0,
                    optimizer: Adam | None = None, meta: dict | None = None) -> None:
    arrays = {f"p{i}": p for i, p in enumerate(net.mlp.params)}
    arrays["adapter"] = net.adapter
    if optimizer is not None:
        for i, (m, v) in enumerate(zip(optimizer.m, optimizer.v)):
            arrays[f"adam_m{i}"] = m
            arrays[f"adam_v{i}"] = v
    header = {
        "version": CHECKPOINT_VERSION,
        "state_dim": net.state_dim,
        "emb_start": net.emb_start,
        "emb_dim": net.emb_dim,
        "n_arms": net.n_arms,
        "emb_scale": net.emb_scale,
        "sizes": list(net.mlp.sizes),
        "step": int(step),
        "adam_t": optimizer.t if optimizer is not None else None,
        "config": config.to_dict(),
        "meta": meta or {},
    }
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    with Path(path).open("wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path, expected_dim: int | None = None, remap_arms: int | None = None):
    """Return ``(net, config, step, optimizer, meta)``.

    Refuses a state-dimension mismatch unless ``remap_arms`` asks for the
    arm-count remap used by fine-tuning.
    """
    with np.load(Path(path)) as z:
        header = json.loads(bytes(z["header"]).decode())
        if header.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {header.get('version')}")
        sizes = header["sizes"]
        net = ValueNet(header["state_dim"], sizes[1:-1], header["emb_dim"], header["emb_start"],
                       n_arms=header["n_arms"], emb_scale=header["emb_scale"])
        for i in range(len(net.mlp.params)):
            net.mlp.params[i][...] = z[f"p{i}"]
        net.adapter[...] = z["adapter"]
        opt = None
        if header.get("adam_t") is not None:
            opt = Adam(net.mlp.params, lr=header["config"]["lr"])
            opt.t = header["adam_t"]
            opt.m = [z[f"adam_m{i}"].copy() for i in range(len(net.mlp.params))]
            opt.v = [z[f"adam_v{i}"].copy() for i in range(len(net.mlp.params))]
    config = TrainConfig.from_dict(header["config"])
    if remap_arms is not None and remap_arms != net.n_arms:
        net = remap_net(net, remap_arms)
        opt = None
    if expected_dim is not None and net.state_dim != expected_dim:
        raise CheckpointError(
            f"checkpoint state dimension {net.state_dim} != expected {expected_dim}; "
            "request an arm remap to fine-tune on a different arm set")
    return net, config, header["step"], opt, header.get("meta", {})


def remap_net(net: ValueNet, new_k: int) -> ValueNet:
    """Re-slice the per-arm input blocks for a new arm count.

    Arms present in both lists keep their weights (by index); new arms get
    zero input columns.
    """
    old_k = net.n_arms
    head = net.emb_start + net.emb_dim
    new_dim = head + 2 * new_k
    new = ValueNet(new_dim, net.hidden, net.emb_dim, net.emb_start, rng=None, n_arms=new_k,
                   emb_scale=net.emb_scale)
    for i in range(1, len(net.mlp.params)):
        new.mlp.params[i] = net.mlp.params[i].copy()
    w_old = net.mlp.params[0]
    w_new = np.zeros((new_dim, w_old.shape[1]))
    w_new[:head] = w_old[:head]
    keep = min(old_k, new_k)
    w_new[head:head + keep] = w_old[head:head + keep]
    w_new[head + new_k:head + new_k + keep] = w_old[head + old_k:head + old_k + keep]
    new.mlp.params[0] = w_new
    new.adapter = net.adapter.copy()
    return new


def finetune(net: ValueNet, trace, n_samples: int, config: TrainConfig,
             mode: str = "full", steps: int | None = None) -> ValueNet:
    """Adapt a trained network to a changed arm set or task with few samples.

    ``mode="full"`` updates all network weights; ``mode="adapter"`` freezes
    the network and trains only the embedding adapter. ``n_samples`` is the
    number of training questions used.
    """
    if mode not in ("full", "adapter"):
        raise ValueError("mode must be 'full' or 'adapter'")
    net = net.copy()
    if n_samples <= 0:
        return net
    env_dim = N_HEAD + net.emb_dim + 2 * trace.n_arms
    if net.state_dim != env_dim:
        if net.state_dim - 2 * net.n_arms != env_dim - 2 * trace.n_arms:
            raise CheckpointError("embedding dimension of checkpoint and trace differ")
        net = remap_net(net, trace.n_arms)
    ids = trace.split_ids("train")[:n_samples]
    cfg = replace(config, warmup=min(config.warmup, 10 * len(ids)),
                  eps_start=min(config.eps_start, 0.3))
    res = train(trace, cfg, net=net, question_ids=ids, wrt_adapter=(mode == "adapter"),
                n_steps=config.finetune_steps if steps is None else steps)
    return res.net
