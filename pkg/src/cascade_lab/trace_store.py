"""Query-response traces: data model, file I/O and a synthetic generator.

A trace is a sorted list of arms (model + prompt combinations), a list of
questions, and the recorded responses. Answers are canonical integer classes;
a response is correct when its class equals the question's ground truth.

The synthetic generator plants a two-tier difficulty structure: every
question is easy or hard, arm ``k`` answers correctly with ``p_easy[k]`` or
``p_hard[k]``, and wrong answers fall on Zipf-distributed distractors. The
tier is visible in the question text (tier-specific vocabulary) and in the
output length (hard questions produce longer answers).
"""

from __future__ import annotations

import json
import logging
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

TRACE_VERSION = 1
SPLITS = ("train", "val", "test")


class TraceFormatError(ValueError):
    """Malformed trace file or record."""


class TraceValidationError(ValueError):
    """A trace violates one of its invariants."""


class SynthConfigError(ValueError):
    """The synthetic generator cannot meet the requested calibration."""


class ExhaustedTraceError(LookupError):
    """A replay-only trace has no record for the requested sample."""


@dataclass(frozen=True)
class ArmSpec:
    arm_id: int
    model_name: str
    prompt_name: str
    input_price_per_1k: float
    output_price_per_1k: float
    fixed_latency_s: float
    requery_temperature: float
    marginal_accuracy: float


@dataclass(frozen=True)
class QueryRecord:
    question_id: int
    arm_id: int
    sample_index: int
    answer_id: int
    is_correct: bool
    input_tokens: int
    output_tokens: int
    latency_s: float


@dataclass(frozen=True)
class Question:
    question_id: int
    text: str
    ground_truth: int
    split: str
    tier: str | None = None


@dataclass(frozen=True)
class ArmSampler:
    """Per-arm generator parameters kept with a synthetic trace so that
    re-queries can be drawn on demand."""

    p_easy: float
    p_hard: float
    mean_input_tokens: float
    mean_output_tokens: float


@dataclass(frozen=True)
class SamplerParams:
    seed: int
    arms: tuple
    n_distractors: int = 20
    zipf_exponent: float = 1.1
    input_sigma: float = 0.05
    output_sigma: float = 0.3
    latency_sigma: float = 0.1
    hard_output_scale: float = 1.5
    easy_fraction: float = 0.5

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arms"] = [asdict(a) for a in self.arms]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerParams":
        _check_keys(d, cls, "synth")
        d = dict(d)
        d["arms"] = tuple(_build(ArmSampler, a, "synth arm") for a in d["arms"])
        return cls(**d)


# ----------------------------------------------------------------------------
# validation helpers


def _check_keys(obj: dict, cls, what: str, line: int | None = None) -> None:
    names = {f.name for f in fields(cls)}
    required = {f.name for f in fields(cls)
                if f.default is MISSING and f.default_factory is MISSING}
    where = f" (line {line})" if line is not None else ""
    if not isinstance(obj, dict):
        raise TraceFormatError(f"{what}{where}: expected an object")
    unknown = set(obj) - names
    if unknown:
        raise TraceFormatError(f"{what}{where}: unknown fields {sorted(unknown)}")
    missing = required - set(obj)
    if missing:
        raise TraceFormatError(f"{what}{where}: missing fields {sorted(missing)}")


def _build(cls, obj: dict, what: str, line: int | None = None):
    _check_keys(obj, cls, what, line)
    return cls(**obj)


def validate_arms(arms: Sequence[ArmSpec]) -> None:
    for i, arm in enumerate(arms):
        if arm.arm_id != i:
            raise TraceValidationError(f"arm at position {i} has arm_id {arm.arm_id}")
        if min(arm.input_price_per_1k, arm.output_price_per_1k, arm.fixed_latency_s) < 0:
            raise TraceValidationError(f"arm {i}: prices and latency must be non-negative")
        if not 0.0 <= arm.marginal_accuracy <= 1.0:
            raise TraceValidationError(f"arm {i}: marginal_accuracy outside [0, 1]")
        if not 0.0 <= arm.requery_temperature <= 2.0:
            raise TraceValidationError(f"arm {i}: requery_temperature outside [0, 2]")
    for a, b in zip(arms, arms[1:]):
        key_a = (a.marginal_accuracy, a.input_price_per_1k + a.output_price_per_1k)
        key_b = (b.marginal_accuracy, b.input_price_per_1k + b.output_price_per_1k)
        if key_b < key_a:
            raise TraceValidationError(
                f"arms not sorted: arm {a.arm_id} ({a.model_name}/{a.prompt_name}, "
                f"acc {a.marginal_accuracy}) precedes arm {b.arm_id} "
                f"({b.model_name}/{b.prompt_name}, acc {b.marginal_accuracy})")


def validate_record(rec: QueryRecord, line: int | None = None) -> None:
    where = f" (line {line})" if line is not None else ""
    if rec.input_tokens <= 0:
        raise TraceValidationError(f"record{where}: input_tokens must be > 0")
    if rec.output_tokens < 0:
        raise TraceValidationError(f"record{where}: output_tokens must be >= 0")
    if rec.latency_s < 0:
        raise TraceValidationError(f"record{where}: latency_s must be >= 0")
    if rec.sample_index < 0:
        raise TraceValidationError(f"record{where}: sample_index must be >= 0")


# ----------------------------------------------------------------------------
# trace container


@dataclass
class TraceSet:
    arms: list
    questions: list
    records: dict = field(default_factory=dict)
    synth: SamplerParams | None = None

    def __post_init__(self):
        self._q_index = {q.question_id: q for q in self.questions}

    @property
    def n_arms(self) -> int:
        return len(self.arms)

    def question(self, question_id: int) -> Question:
        return self._q_index[question_id]

    def split_ids(self, split: str) -> list:
        return [q.question_id for q in self.questions if q.split == split]

    def validate(self) -> None:
        validate_arms(self.arms)
        seen = set()
        for q in self.questions:
            if q.question_id in seen:
                raise TraceValidationError(f"duplicate question_id {q.question_id}")
            seen.add(q.question_id)
            if q.split not in SPLITS:
                raise TraceValidationError(f"question {q.question_id}: bad split {q.split!r}")
        if self.synth is not None and len(self.synth.arms) != len(self.arms):
            raise TraceValidationError("sampler parameters do not match the arm list")
        for (qid, arm_id, idx), rec in self.records.items():
            if (rec.question_id, rec.arm_id, rec.sample_index) != (qid, arm_id, idx):
                raise TraceValidationError("record key does not match record contents")
            if qid not in self._q_index:
                raise TraceValidationError(f"record for unknown question {qid}")
            if not 0 <= arm_id < len(self.arms):
                raise TraceValidationError(f"record for unknown arm {arm_id}")
            validate_record(rec)
            truth = self._q_index[qid].ground_truth
            if rec.is_correct != (rec.answer_id == truth):
                raise TraceValidationError(
                    f"record ({qid}, {arm_id}, {idx}): is_correct disagrees with ground truth")
        if self.synth is None:
            for q in self.questions:
                for arm in self.arms:
                    if (q.question_id, arm.arm_id, 0) not in self.records:
                        raise TraceValidationError(
                            f"question {q.question_id} has no record for arm {arm.arm_id} "
                            "and the trace carries no sampler")

    def arm_means(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Mean (input tokens, output tokens, latency) per arm over stored
        temperature-0 records, falling back to sampler means."""
        k = self.n_arms
        tot = np.zeros((k, 3))
        cnt = np.zeros(k)
        for (qid, arm_id, idx), rec in self.records.items():
            if idx == 0:
                tot[arm_id] += (rec.input_tokens, rec.output_tokens, rec.latency_s)
                cnt[arm_id] += 1
        out = np.zeros((k, 3))
        for a in range(k):
            if cnt[a] > 0:
                out[a] = tot[a] / cnt[a]
            elif self.synth is not None:
                s = self.synth.arms[a]
                out[a] = (s.mean_input_tokens, s.mean_output_tokens, self.arms[a].fixed_latency_s)
            else:
                out[a] = (0.0, 0.0, self.arms[a].fixed_latency_s)
        return out[:, 0], out[:, 1], out[:, 2]

    def sample_response(self, question_id: int, arm_id: int, sample_index: int,
                        rng: np.random.Generator | None = None,
                        allow_synthesis: bool = True) -> QueryRecord:
        """Return the response for one (question, arm, sample) triple.

        Sample 0 is the temperature-0 query and is always the stored record.
        Re-queries (``sample_index >= 1``) use a stored record if present;
        otherwise a fresh draw is made from ``rng``.
        """
        if question_id not in self._q_index:
            raise KeyError(f"unknown question {question_id}")
        if not 0 <= arm_id < self.n_arms:
            raise KeyError(f"unknown arm {arm_id}")
        rec = self.records.get((question_id, arm_id, sample_index))
        if rec is not None:
            return rec
        if not allow_synthesis or self.synth is None:
            raise ExhaustedTraceError(
                f"no record for question {question_id}, arm {arm_id}, sample {sample_index}")
        if sample_index == 0:
            return _draw_record(self, self._q_index[question_id], arm_id, 0,
                                _t0_rng(self.synth.seed, question_id, arm_id))
        if rng is None:
            raise ValueError("re-query synthesis needs an rng stream")
        return _draw_record(self, self._q_index[question_id], arm_id, sample_index, rng)


# ----------------------------------------------------------------------------
# file I/O


def save_trace(trace: TraceSet, path) -> None:
    """Write a trace: one header object line, then one record per line."""
    header = {
        "version": TRACE_VERSION,
        "arms": [asdict(a) for a in trace.arms],
        "questions": [asdict(q) for q in trace.questions],
        "synth": trace.synth.to_dict() if trace.synth is not None else None,
    }
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps(header) + "\n")
        for key in sorted(trace.records):
            fh.write(json.dumps(asdict(trace.records[key])) + "\n")


def load_trace(path) -> TraceSet:
    """Read and validate a trace file. Unknown fields are rejected."""
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.readlines()
    if not lines:
        raise TraceFormatError("trace file is empty (line 1)")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise TraceFormatError(f"line 1: cannot parse header: {exc.msg}") from exc
    if not isinstance(header, dict):
        raise TraceFormatError("line 1: header must be an object")
    unknown = set(header) - {"version", "arms", "questions", "synth"}
    if unknown:
        raise TraceFormatError(f"line 1: unknown header fields {sorted(unknown)}")
    if header.get("version") != TRACE_VERSION:
        raise TraceFormatError(f"line 1: unsupported trace version {header.get('version')!r}")
    arms = [_build(ArmSpec, a, "arm", 1) for a in header.get("arms", [])]
    questions = [_build(Question, q, "question", 1) for q in header.get("questions", [])]
    synth = header.get("synth")
    synth = SamplerParams.from_dict(synth) if synth is not None else None
    records = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceFormatError(f"line {lineno}: {exc.msg}") from exc
        rec = _build(QueryRecord, obj, "record", lineno)
        if type(rec.is_correct) is not bool:
            raise TraceFormatError(f"line {lineno}: is_correct must be a boolean")
        validate_record(rec, lineno)
        key = (rec.question_id, rec.arm_id, rec.sample_index)
        if key in records:
            raise TraceValidationError(f"line {lineno}: duplicate record {key}")
        records[key] = rec
    trace = TraceSet(arms=arms, questions=questions, records=records, synth=synth)
    trace.validate()
    return trace


# ----------------------------------------------------------------------------
# synthetic generation


@dataclass(frozen=True)
class ArmTarget:
    """Calibration target for one synthetic arm.

    Give ``marginal_accuracy`` and let the generator split it into tiers, or
    give ``p_easy``/``p_hard`` explicitly.
    """

    model_name: str
    prompt_name: str
    input_price_per_1k: float
    output_price_per_1k: float
    fixed_latency_s: float
    requery_temperature: float
    mean_input_tokens: float
    mean_output_tokens: float
    marginal_accuracy: float | None = None
    p_easy: float | None = None
    p_hard: float | None = None


@dataclass(frozen=True)
class SynthConfig:
    arms: tuple
    n_questions: int = 5000
    easy_fraction: float = 0.5
    n_distractors: int = 20
    zipf_exponent: float = 1.1
    tier_gap: float = 0.25
    split_fractions: tuple = (0.6, 0.15, 0.25)
    input_sigma: float = 0.05
    output_sigma: float = 0.3
    latency_sigma: float = 0.1
    hard_output_scale: float = 1.5

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arms"] = [asdict(a) for a in self.arms]
        d["split_fractions"] = list(self.split_fractions)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise SynthConfigError(f"unknown synth config keys {sorted(unknown)}")
        if "arms" in d:
            arms = []
            for a in d["arms"]:
                bad = set(a) - {f.name for f in fields(ArmTarget)}
                if bad:
                    raise SynthConfigError(f"unknown arm target keys {sorted(bad)}")
                arms.append(ArmTarget(**a))
            d["arms"] = tuple(arms)
        else:
            d["arms"] = GSM8K_ARMS
        if "split_fractions" in d:
            d["split_fractions"] = tuple(d["split_fractions"])
        return cls(**d)


# Test-split accuracy, test-split mean token counts and latency per arm;
# GPT-3.5 prices are the 0613 API prices, GPT-4 prices are the ones under
# which the per-query cost table reproduces.
GSM8K_ARMS = (
    ArmTarget("llama-2-7b", "cot_fewshot", 0.0, 0.0, 8.0, 0.8, 911.43, 119.14, 0.2365),
    ArmTarget("llama-2-13b", "cot_fewshot", 0.0, 0.0, 16.0, 0.8, 911.43, 128.29, 0.3791),
    ArmTarget("gpt-3.5-turbo", "domain_expert", 0.0015, 0.002, 6.0, 1.0, 90.98, 114.58, 0.7362),
    ArmTarget("gpt-3.5-turbo", "cot_fewshot", 0.0015, 0.002, 6.0, 1.0, 773.70, 108.31, 0.7915),
    ArmTarget("gpt-4", "domain_expert", 0.03, 0.06, 6.0, 1.0, 88.98, 81.73, 0.8317),
    ArmTarget("gpt-4", "cot_fewshot", 0.03, 0.06, 6.0, 1.0, 771.70, 103.62, 0.9295),
)


def planted_two_arm_config(n_questions: int = 2000, cost_ratio: float = 20.0,
                           **overrides) -> SynthConfig:
    """Two-arm trace where the cheap arm is only good on easy questions.

    Cheap arm: 0.90 easy / 0.10 hard. Expensive arm: 0.95 on both, at
    ``cost_ratio`` times the cheap arm's per-token price.
    """
    base_in, base_out = 0.0015, 0.002
    arms = (
        ArmTarget("small", "cot_fewshot", base_in, base_out, 1.0, 1.0, 400.0, 100.0,
                  p_easy=0.90, p_hard=0.10),
        ArmTarget("large", "cot_fewshot", base_in * cost_ratio, base_out * cost_ratio, 1.0, 1.0,
                  400.0, 100.0, p_easy=0.95, p_hard=0.95),
    )
    return SynthConfig(arms=arms, n_questions=n_questions, **overrides)


def tier_probabilities(target: ArmTarget, rho: float, gap: float) -> tuple[float, float, float]:
    """Resolve (p_easy, p_hard, marginal) for one arm.

    With only a marginal ``m`` given: ``p_easy = m + 2(1-rho) g`` and
    ``p_hard = m - 2 rho g`` (``p_easy = m + g``, ``p_hard = m - g`` at
    ``rho = 0.5``), with ``g`` shrunk just enough to keep both in [0, 1].
    The marginal is preserved exactly.
    """
    if not 0.0 <= rho <= 1.0:
        raise SynthConfigError("easy_fraction must lie in [0, 1]")
    if target.p_easy is not None or target.p_hard is not None:
        if target.p_easy is None:
            if rho >= 1.0:
                raise SynthConfigError(f"{target.model_name}: p_hard alone is undefined at rho=1")
            m = target.marginal_accuracy
            if m is None:
                raise SynthConfigError(f"{target.model_name}: need p_easy or marginal_accuracy")
            p_e = (m - (1 - rho) * target.p_hard) / rho if rho > 0 else 0.0
            p_h = target.p_hard
        elif target.p_hard is None:
            m = target.marginal_accuracy
            p_e = target.p_easy
            if rho < 1.0:
                if m is None:
                    raise SynthConfigError(f"{target.model_name}: need p_hard or marginal_accuracy")
                p_h = (m - rho * p_e) / (1 - rho)
            else:
                p_h = p_e
        else:
            p_e, p_h = target.p_easy, target.p_hard
        marginal = rho * p_e + (1 - rho) * p_h
        if target.marginal_accuracy is not None and abs(marginal - target.marginal_accuracy) > 1e-9:
            raise SynthConfigError(
                f"{target.model_name}: p_easy/p_hard imply marginal {marginal:.6f}, "
                f"target is {target.marginal_accuracy}")
    else:
        m = target.marginal_accuracy
        if m is None:
            raise SynthConfigError(f"{target.model_name}: no accuracy target given")
        if not 0.0 <= m <= 1.0:
            raise SynthConfigError(f"{target.model_name}: marginal accuracy {m} outside [0, 1]")
        g = gap
        if rho < 1.0:
            g = min(g, (1.0 - m) / (2.0 * (1.0 - rho)))
        if rho > 0.0:
            g = min(g, m / (2.0 * rho))
        p_e = m + 2.0 * (1.0 - rho) * g
        p_h = m - 2.0 * rho * g
        marginal = m
    for name, p in (("p_easy", p_e), ("p_hard", p_h)):
        if not -1e-12 <= p <= 1.0 + 1e-12:
            raise SynthConfigError(f"{target.model_name}: infeasible calibration, {name}={p:.4f}")
    return min(max(p_e, 0.0), 1.0), min(max(p_h, 0.0), 1.0), marginal


_EASY_WORDS = ("apples", "sum", "add", "total", "each", "bags", "buys", "coins", "pencils",
               "cookies", "plus", "more", "left", "gives", "boxes", "eggs")
_HARD_WORDS = ("ratio", "percent", "compound", "interest", "rate", "remaining", "fraction",
               "discount", "average", "profit", "hourly", "proportion", "tax", "combined",
               "consecutive", "overtime")
_FILLER = ("how", "many", "does", "she", "he", "they", "have", "if", "the", "of", "a", "after",
           "then", "what", "is")


def _question_text(rng: np.random.Generator, tier: str, qid: int) -> str:
    vocab = _EASY_WORDS if tier == "easy" else _HARD_WORDS
    n = int(rng.integers(6, 11)) if tier == "easy" else int(rng.integers(10, 16))
    words = []
    for _ in range(n):
        pool = vocab if rng.random() < 0.6 else _FILLER
        words.append(pool[int(rng.integers(len(pool)))])
        if rng.random() < 0.3:
            words.append(str(int(rng.integers(2, 500))))
    return f"q{qid}: " + " ".join(words) + "?"


def _t0_rng(seed: int, question_id: int, arm_id: int) -> np.random.Generator:
    return np.random.default_rng([seed, question_id, arm_id, 0x7E0])


def _zipf_probs(w: int, s: float) -> np.ndarray:
    weights = 1.0 / np.arange(1, w + 1) ** s
    return weights / weights.sum()


def answer_distribution(trace: TraceSet, question_id: int, arm_id: int) -> np.ndarray:
    """Probability over answer classes ``0..W`` of one synthetic draw.

    Index 0 is the ground truth; index ``j >= 1`` is the j-th distractor.
    """
    sp = trace.synth
    q = trace.question(question_id)
    arm = sp.arms[arm_id]
    p = arm.p_easy if q.tier == "easy" else arm.p_hard
    out = np.empty(sp.n_distractors + 1)
    out[0] = p
    out[1:] = (1 - p) * _zipf_probs(sp.n_distractors, sp.zipf_exponent)
    return out


def _tier_output_factor(sp: SamplerParams, tier: str | None) -> float:
    # hard answers are longer; scaled so the mean over tiers stays at the arm mean
    rho = sp.easy_fraction
    base = 1.0 / (rho + (1.0 - rho) * sp.hard_output_scale)
    return base * sp.hard_output_scale if tier == "hard" else base


def _lognormal(rng: np.random.Generator, mean: float, sigma: float) -> float:
    # mean-preserving lognormal
    return float(mean * np.exp(sigma * rng.standard_normal() - 0.5 * sigma * sigma))


def _draw_record(trace: TraceSet, q: Question, arm_id: int, sample_index: int,
                 rng: np.random.Generator, correct: bool | None = None) -> QueryRecord:
    sp = trace.synth
    params = sp.arms[arm_id]
    p = params.p_easy if q.tier == "easy" else params.p_hard
    u = rng.random()
    if correct is None:
        correct = bool(u < p)
    if correct:
        answer = q.ground_truth
    else:
        rank = int(rng.choice(sp.n_distractors, p=_zipf_probs(sp.n_distractors, sp.zipf_exponent)))
        answer = (q.ground_truth + 1 + rank) % (sp.n_distractors + 1)
    out_mean = params.mean_output_tokens * _tier_output_factor(sp, q.tier)
    in_tok = max(1, int(round(_lognormal(rng, params.mean_input_tokens, sp.input_sigma))))
    out_tok = max(0, int(round(_lognormal(rng, out_mean, sp.output_sigma))))
    latency = _lognormal(rng, trace.arms[arm_id].fixed_latency_s, sp.latency_sigma)
    return QueryRecord(q.question_id, arm_id, sample_index, int(answer), bool(correct),
                       in_tok, out_tok, latency)


def _stratified_hits(rng: np.random.Generator, m: int, p: float) -> np.ndarray:
    """Bernoulli(p) indicators for ``m`` items, stratified so that the hit
    count is within one of ``p * m``; each item is still marginally Bernoulli(p)."""
    if m == 0:
        return np.zeros(0, dtype=bool)
    u = (rng.permutation(m) + rng.random(m)) / m
    return u < p


def synth_generate(config: SynthConfig, seed: int) -> TraceSet:
    """Generate a deterministic synthetic trace.

    Tier assignment and temperature-0 correctness are stratified within each
    split so empirical accuracies track the targets closely; every question
    is still easy with probability ``easy_fraction`` and every response still
    correct with its tier probability.
    """
    if config.n_questions < 0:
        raise SynthConfigError("n_questions must be non-negative")
    if config.n_distractors < 1:
        raise SynthConfigError("need at least one distractor")
    fr = np.asarray(config.split_fractions, dtype=float)
    if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise SynthConfigError("split_fractions must be three non-negative numbers summing to 1")
    rho = config.easy_fraction
    tiers_p = [tier_probabilities(t, rho, config.tier_gap) for t in config.arms]
    arms = [ArmSpec(i, t.model_name, t.prompt_name, t.input_price_per_1k, t.output_price_per_1k,
                    t.fixed_latency_s, t.requery_temperature, float(m))
            for i, (t, (_, _, m)) in enumerate(zip(config.arms, tiers_p))]
    try:
        validate_arms(arms)
    except TraceValidationError as exc:
        raise SynthConfigError(str(exc)) from exc
    samplers = tuple(ArmSampler(pe, ph, t.mean_input_tokens, t.mean_output_tokens)
                     for t, (pe, ph, _) in zip(config.arms, tiers_p))
    params = SamplerParams(seed=int(seed), arms=samplers, n_distractors=config.n_distractors,
                           zipf_exponent=config.zipf_exponent, input_sigma=config.input_sigma,
                           output_sigma=config.output_sigma, latency_sigma=config.latency_sigma,
                           hard_output_scale=config.hard_output_scale, easy_fraction=rho)

    n = config.n_questions
    rng = np.random.default_rng([seed, 0x5EED])
    counts = np.floor(fr * n).astype(int)
    counts[0] += n - counts.sum()
    split_of = np.repeat(np.arange(3), counts)
    split_of = split_of[rng.permutation(n)]
    easy = np.zeros(n, dtype=bool)
    for s in range(3):
        idx = np.flatnonzero(split_of == s)
        easy[idx] = _stratified_hits(rng, len(idx), rho)
    truths = rng.integers(0, config.n_distractors + 1, size=n)
    questions = []
    for qid in range(n):
        tier = "easy" if easy[qid] else "hard"
        text = _question_text(np.random.default_rng([seed, qid, 0x7E47]), tier, qid)
        questions.append(Question(qid, text, int(truths[qid]), SPLITS[split_of[qid]], tier))

    trace = TraceSet(arms=arms, questions=questions, records={}, synth=params)
    correct = np.zeros((len(arms), n), dtype=bool)
    for k, sampler in enumerate(samplers):
        for s in range(3):
            for is_easy, p in ((True, sampler.p_easy), (False, sampler.p_hard)):
                idx = np.flatnonzero((split_of == s) & (easy == is_easy))
                correct[k, idx] = _stratified_hits(rng, len(idx), p)
    for q in questions:
        for k in range(len(arms)):
            rec = _draw_record(trace, q, k, 0, _t0_rng(seed, q.question_id, k),
                               correct=bool(correct[k, q.question_id]))
            trace.records[(q.question_id, k, 0)] = rec
    return trace


def empirical_accuracy(trace: TraceSet, arm_id: int, question_ids: Iterable[int] | None = None) -> float:
    ids = [q.question_id for q in trace.questions] if question_ids is None else list(question_ids)
    if not ids:
        return float("nan")
    hits = sum(trace.records[(qid, arm_id, 0)].is_correct for qid in ids)
    return hits / len(ids)
