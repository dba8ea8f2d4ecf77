"""Query pricing, cost functions and the running budget ledger.

Two cost functions are supported:

* pure monetary: token price only; local (zero-priced) arms get an
  alpha-chained price derived from a reference commercial arm;
* price-latency combination: ``monetary + latency / beta``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

B_CLIP = 10.0
PRIOR_WEIGHT = 10.0
_SPEND_TOL = 1e-12


class BudgetExceeded(RuntimeError):
    """Raised when a charge would push spend above the total budget."""


class EstimationError(ValueError):
    """Raised when a cost estimate needed for a feature is unavailable."""


def per_query_price(input_tokens: float, output_tokens: float, arm) -> float:
    """Monetary price of one query, prices given per 1000 tokens."""
    if input_tokens < 0 or output_tokens < 0:
        raise ValueError("token counts must be non-negative")
    return (input_tokens * arm.input_price_per_1k
            + output_tokens * arm.output_price_per_1k) / 1000.0


@dataclass(frozen=True)
class PricingPolicy:
    """Active cost function plus an optional per-arm price override table.

    ``mode`` is ``"monetary"`` or ``"combo"``. ``prices`` maps arm_id to
    ``(input_price_per_1k, output_price_per_1k)`` and overrides the ArmSpec
    prices (this is how alpha-chained local prices are injected).
    """

    mode: str = "monetary"
    alpha: float | None = None
    beta: float | None = None
    prices: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in ("monetary", "combo"):
            raise ValueError(f"unknown pricing mode {self.mode!r}")
        if self.mode == "combo" and (self.beta is None or self.beta <= 0):
            raise ValueError("combo pricing needs beta > 0")
        if self.alpha is not None and self.alpha <= 0:
            raise ValueError("alpha must be positive")

    def arm_prices(self, arm) -> tuple[float, float]:
        if arm.arm_id in self.prices:
            p_in, p_out = self.prices[arm.arm_id]
            return float(p_in), float(p_out)
        return arm.input_price_per_1k, arm.output_price_per_1k

    def monetary(self, input_tokens: float, output_tokens: float, arm) -> float:
        p_in, p_out = self.arm_prices(arm)
        if input_tokens < 0 or output_tokens < 0:
            raise ValueError("token counts must be non-negative")
        return (input_tokens * p_in + output_tokens * p_out) / 1000.0

    def cost(self, monetary: float, latency_s: float) -> float:
        return combined_cost(monetary, latency_s, self)

    def record_cost(self, record, arm) -> float:
        """Cost of an issued query under this policy."""
        m = self.monetary(record.input_tokens, record.output_tokens, arm)
        return self.cost(m, record.latency_s)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "alpha": self.alpha,
            "beta": self.beta,
            "prices": {str(k): list(v) for k, v in sorted(self.prices.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PricingPolicy":
        prices = {int(k): tuple(v) for k, v in (d.get("prices") or {}).items()}
        return cls(mode=d.get("mode", "monetary"), alpha=d.get("alpha"),
                   beta=d.get("beta"), prices=prices)


def combined_cost(monetary: float, latency_s: float, policy: PricingPolicy) -> float:
    """Scalar cost of a query.

    Combo mode uses ``monetary + latency / beta``; this is the convention under
    which the published per-query cost tables reproduce, and it differs from
    ``latency + beta * monetary`` only by the global factor beta.
    """
    if policy.mode == "monetary":
        return monetary
    if policy.beta is None or policy.beta <= 0:
        raise ValueError("beta must be positive")
    return monetary + latency_s / policy.beta


def alpha_scaled_prices(base_avg_cost: float, alpha: float) -> tuple[float, float]:
    """Average per-query cost of the larger and smaller local arm.

    The larger local model costs ``alpha * base``, the smaller one ``alpha``
    times that.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    larger = alpha * base_avg_cost
    return larger, alpha * larger


def alpha_price_table(arms: Sequence, alpha: float,
                      reference_arm: int | None = None) -> dict:
    """Per-token prices for local (zero-priced) arms under alpha chaining.

    The highest local arm pays ``alpha`` times the reference arm's per-token
    prices, the next one down ``alpha**2`` and so on. The reference defaults
    to the commercial arm with the lowest per-token prices.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    local = [a for a in arms if a.input_price_per_1k == 0 and a.output_price_per_1k == 0]
    commercial = [a for a in arms if a not in local]
    if not local:
        return {}
    if not commercial:
        raise ValueError("alpha pricing needs at least one priced reference arm")
    if reference_arm is None:
        ref = min(commercial, key=lambda a: (a.input_price_per_1k + a.output_price_per_1k, a.arm_id))
    else:
        ref = next(a for a in arms if a.arm_id == reference_arm)
    table = {}
    factor = 1.0
    for arm in sorted(local, key=lambda a: a.arm_id, reverse=True):
        factor *= alpha
        table[arm.arm_id] = (ref.input_price_per_1k * factor, ref.output_price_per_1k * factor)
    return table


class BudgetLedger:
    """Running spend against a total budget plus per-arm cost estimates.

    Cost estimates are running means of monetary price and latency, seeded
    with a prior (typically trace-wide averages) worth ``prior_weight``
    observations.
    """

    def __init__(self, total_budget: float, n_questions: int, policy: PricingPolicy,
                 prior_monetary: Sequence[float], prior_latency: Sequence[float],
                 prior_weight: float = PRIOR_WEIGHT, b_clip: float = B_CLIP):
        if total_budget < 0:
            raise ValueError("budget must be non-negative")
        self.total_budget = float(total_budget)
        self.spent = 0.0
        self.questions_remaining = int(n_questions)
        self.policy = policy
        self.b_clip = b_clip
        self._mon = np.asarray(prior_monetary, dtype=float).copy()
        self._lat = np.asarray(prior_latency, dtype=float).copy()
        k = len(self._mon)
        self._mon_n = np.full(k, float(prior_weight))
        self._lat_n = np.full(k, float(prior_weight))

    @property
    def remaining(self) -> float:
        return max(self.total_budget - self.spent, 0.0)

    @property
    def n_arms(self) -> int:
        return len(self._mon)

    def copy(self) -> "BudgetLedger":
        new = object.__new__(BudgetLedger)
        new.__dict__.update(self.__dict__)
        for name in ("_mon", "_lat", "_mon_n", "_lat_n"):
            setattr(new, name, getattr(self, name).copy())
        return new

    def can_afford(self, cost: float) -> bool:
        return self.spent + cost <= self.total_budget + _SPEND_TOL * max(1.0, self.total_budget)

    def charge(self, cost: float) -> "BudgetLedger":
        """Deduct ``cost``; raises BudgetExceeded and leaves the ledger untouched
        on overdraft."""
        if cost < 0:
            raise ValueError("cost must be non-negative")
        if not self.can_afford(cost):
            raise BudgetExceeded(
                f"charge {cost:.6g} exceeds remaining {self.remaining:.6g}")
        self.spent = min(self.spent + cost, self.total_budget)
        return self

    def observe(self, arm_id: int, monetary: float, latency_s: float) -> None:
        """Fold one issued query into the running cost/latency means."""
        self._mon_n[arm_id] += 1
        self._mon[arm_id] += (monetary - self._mon[arm_id]) / self._mon_n[arm_id]
        self._lat_n[arm_id] += 1
        self._lat[arm_id] += (latency_s - self._lat[arm_id]) / self._lat_n[arm_id]

    def avg_latency(self, arm_id: int) -> float:
        return float(self._lat[arm_id])

    def avg_monetary(self, arm_id: int) -> float:
        return float(self._mon[arm_id])

    def avg_cost(self, arm_id: int) -> float:
        return self.policy.cost(self._mon[arm_id], self._lat[arm_id])

    def update_latency_estimate(self, arm_id: int, window: Sequence[float]) -> "BudgetLedger":
        """Replace the arm's latency estimate with the mean of a recent window."""
        window = list(window)
        if not window:
            raise ValueError("latency window is empty")
        self._lat[arm_id] = float(np.mean(window))
        self._lat_n[arm_id] = float(len(window))
        return self

    def finish_question(self) -> None:
        self.questions_remaining = max(self.questions_remaining - 1, 0)

    def normalized_budget_feature(self, arm_id: int) -> float:
        """Remaining budget in units of 'queries of this arm per remaining question'."""
        remaining = self.remaining
        if remaining <= 0:
            return 0.0
        avg = self.avg_cost(arm_id)
        if not avg > 0:
            raise EstimationError(f"arm {arm_id} has no positive cost estimate")
        q = max(self.questions_remaining, 1)
        return float(min(max(remaining / (q * avg), 0.0), self.b_clip))

    def budget_features(self) -> np.ndarray:
        return np.array([self.normalized_budget_feature(k) for k in range(self.n_arms)])
