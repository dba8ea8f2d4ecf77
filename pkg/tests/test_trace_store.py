import json
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from cascade_lab.trace_store import (GSM8K_ARMS, ArmTarget, ExhaustedTraceError,
                                     QueryRecord, SynthConfig, SynthConfigError, TraceFormatError,
                                     TraceSet, TraceValidationError, answer_distribution,
                                     empirical_accuracy, load_trace, save_trace, synth_generate,
                                     tier_probabilities)


def two_arm_config(n=3, **kw):
    arms = (ArmTarget("s", "plain", 0.001, 0.001, 1.0, 1.0, 50.0, 20.0, 0.3),
            ArmTarget("l", "plain", 0.01, 0.01, 1.0, 1.0, 50.0, 20.0, 0.8))
    return SynthConfig(arms=arms, n_questions=n, **kw)


def write_lines(path, header, records=()):
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for r in records:
            fh.write(json.dumps(r) + "\n")


def arm_obj(i, acc, price=0.001):
    return {"arm_id": i, "model_name": f"m{i}", "prompt_name": "plain", "input_price_per_1k": price,
            "output_price_per_1k": price, "fixed_latency_s": 1.0, "requery_temperature": 1.0,
            "marginal_accuracy": acc}


def rec_obj(q=0, a=0, **kw):
    r = {"question_id": q, "arm_id": a, "sample_index": 0, "answer_id": 1, "is_correct": True,
         "input_tokens": 10, "output_tokens": 5, "latency_s": 1.0}
    r.update(kw)
    return r


HEADER_Q = [{"question_id": 0, "text": "q", "ground_truth": 1, "split": "test", "tier": None}]


# -- load / save ---------------------------------------------------------------

def test_round_trip_small(tmp_path):
    t = synth_generate(two_arm_config(3), 1)
    save_trace(t, tmp_path / "t.jsonl")
    u = load_trace(tmp_path / "t.jsonl")
    assert u.n_arms == 2 and len(u.questions) == 3
    assert u.records == t.records
    assert u.arms == t.arms and u.questions == t.questions and u.synth == t.synth


def test_round_trip_bit_identical_file(tmp_path, small_trace):
    save_trace(small_trace, tmp_path / "a.jsonl")
    save_trace(load_trace(tmp_path / "a.jsonl"), tmp_path / "b.jsonl")
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_empty_question_list(tmp_path):
    t = synth_generate(two_arm_config(0), 0)
    save_trace(t, tmp_path / "e.jsonl")
    assert len((tmp_path / "e.jsonl").read_text().splitlines()) == 1
    assert load_trace(tmp_path / "e.jsonl").questions == []


def test_large_round_trip_counts(tmp_path):
    t = synth_generate(two_arm_config(10_000), 2)
    save_trace(t, tmp_path / "big.jsonl")
    assert len(load_trace(tmp_path / "big.jsonl").records) == 20_000


def test_unsorted_arms_rejected(tmp_path):
    write_lines(tmp_path / "u.jsonl", {"version": 1, "arms": [arm_obj(0, 0.9), arm_obj(1, 0.2)],
                                       "questions": [], "synth": None})
    with pytest.raises(TraceValidationError, match="arms not sorted"):
        load_trace(tmp_path / "u.jsonl")


def test_zero_input_tokens_rejected(tmp_path):
    write_lines(tmp_path / "z.jsonl",
                {"version": 1, "arms": [arm_obj(0, 0.5)], "questions": HEADER_Q, "synth": None},
                [rec_obj(input_tokens=0)])
    with pytest.raises(TraceValidationError, match="line 2"):
        load_trace(tmp_path / "z.jsonl")


def test_malformed_line_reports_line_number(tmp_path):
    p = tmp_path / "m.jsonl"
    write_lines(p, {"version": 1, "arms": [arm_obj(0, 0.5)], "questions": HEADER_Q, "synth": None},
                [rec_obj()])
    with open(p, "a") as fh:
        fh.write("{not json\n")
    with pytest.raises(TraceFormatError, match="line 3"):
        load_trace(p)


def test_unknown_record_field_rejected(tmp_path):
    write_lines(tmp_path / "x.jsonl",
                {"version": 1, "arms": [arm_obj(0, 0.5)], "questions": HEADER_Q, "synth": None},
                [rec_obj(extra=1)])
    with pytest.raises(TraceFormatError, match="unknown fields"):
        load_trace(tmp_path / "x.jsonl")


def test_missing_record_without_sampler_rejected(tmp_path):
    write_lines(tmp_path / "n.jsonl",
                {"version": 1, "arms": [arm_obj(0, 0.5), arm_obj(1, 0.6)], "questions": HEADER_Q,
                 "synth": None}, [rec_obj()])
    with pytest.raises(TraceValidationError, match="no record"):
        load_trace(tmp_path / "n.jsonl")


def test_correctness_must_match_ground_truth(tmp_path):
    write_lines(tmp_path / "c.jsonl",
                {"version": 1, "arms": [arm_obj(0, 0.5)], "questions": HEADER_Q, "synth": None},
                [rec_obj(answer_id=2, is_correct=True)])
    with pytest.raises(TraceValidationError):
        load_trace(tmp_path / "c.jsonl")


# -- generation ----------------------------------------------------------------

def test_same_seed_identical():
    cfg = two_arm_config(200)
    a, b = synth_generate(cfg, 5), synth_generate(cfg, 5)
    assert a.records == b.records and a.questions == b.questions


def test_different_seed_differs():
    cfg = two_arm_config(200)
    assert synth_generate(cfg, 5).records != synth_generate(cfg, 6).records


def test_gsm8k_arms_calibrated_on_full_set():
    t = synth_generate(SynthConfig(arms=GSM8K_ARMS, n_questions=2000), 11)
    n = len(t.questions)
    for k, target in enumerate(GSM8K_ARMS):
        p = target.marginal_accuracy
        assert abs(empirical_accuracy(t, k) - p) <= 3 * math.sqrt(p * (1 - p) / n)


def test_single_tier_collapse():
    arms = (ArmTarget("s", "plain", 0.001, 0.001, 1.0, 1.0, 50.0, 20.0, p_easy=0.4),
            ArmTarget("l", "plain", 0.01, 0.01, 1.0, 1.0, 50.0, 20.0, p_easy=0.85))
    t = synth_generate(SynthConfig(arms=arms, n_questions=1000, easy_fraction=1.0), 0)
    assert abs(empirical_accuracy(t, 0) - 0.4) <= 0.02
    assert abs(empirical_accuracy(t, 1) - 0.85) <= 0.02


def test_tier_split_default_gap():
    pe, ph, m = tier_probabilities(ArmTarget("a", "p", 0, 0, 1, 1, 1, 1, 0.6), 0.5, 0.25)
    assert (pe, ph, m) == pytest.approx((0.85, 0.35, 0.6))


def test_tier_gap_shrinks_to_stay_feasible():
    pe, ph, m = tier_probabilities(ArmTarget("a", "p", 0, 0, 1, 1, 1, 1, 0.93), 0.5, 0.25)
    assert pe == pytest.approx(1.0) and 0.5 * pe + 0.5 * ph == pytest.approx(0.93)


def test_infeasible_explicit_tiers_rejected():
    target = ArmTarget("a", "p", 0, 0, 1, 1, 1, 1, marginal_accuracy=0.9, p_easy=0.5)
    with pytest.raises(SynthConfigError, match="infeasible"):
        tier_probabilities(target, 0.5, 0.25)


@settings(max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0), st.floats(0.1, 0.9), st.integers(0, 2**16))
def test_tier_probabilities_preserve_marginal(m, gap, rho, seed):
    pe, ph, marg = tier_probabilities(ArmTarget("a", "p", 0, 0, 1, 1, 1, 1, m), rho, gap)
    assert 0 <= ph <= pe <= 1
    assert rho * pe + (1 - rho) * ph == pytest.approx(m, abs=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 0.45), st.floats(0.5, 0.95), st.integers(0, 1000))
def test_generated_accuracy_within_three_sigma(m0, m1, seed):
    arms = (ArmTarget("s", "plain", 0.001, 0.001, 1.0, 1.0, 50.0, 20.0, m0),
            ArmTarget("l", "plain", 0.01, 0.01, 1.0, 1.0, 50.0, 20.0, m1))
    t = synth_generate(SynthConfig(arms=arms, n_questions=400), seed)
    for k, p in enumerate((m0, m1)):
        assert abs(empirical_accuracy(t, k) - p) <= 3 * math.sqrt(p * (1 - p) / 400)


def test_splits_partition_questions(small_trace):
    ids = [set(small_trace.split_ids(s)) for s in ("train", "val", "test")]
    assert sum(map(len, ids)) == len(small_trace.questions)
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])


def test_hard_questions_have_longer_outputs(planted):
    out = {"easy": [], "hard": []}
    for q in planted.questions:
        out[q.tier].append(planted.records[(q.question_id, 0, 0)].output_tokens)
    assert np.mean(out["hard"]) > 1.3 * np.mean(out["easy"])


# -- sampling ------------------------------------------------------------------

def test_temperature_zero_is_deterministic(small_trace, rng):
    a = small_trace.sample_response(5, 1, 0, rng)
    b = small_trace.sample_response(5, 1, 0, np.random.default_rng(999))
    assert a == b


def test_perfect_arm_always_correct():
    arms = (ArmTarget("p", "plain", 0.001, 0.001, 1.0, 1.0, 50.0, 20.0, p_easy=1.0, p_hard=1.0),)
    t = synth_generate(SynthConfig(arms=arms, n_questions=10), 0)
    rng = np.random.default_rng(0)
    assert all(t.sample_response(i % 10, 0, 1 + i, rng).is_correct for i in range(1000))


def test_requery_correct_rate_monte_carlo():
    arms = (ArmTarget("h", "plain", 0.001, 0.001, 1.0, 1.0, 50.0, 20.0, p_easy=0.5, p_hard=0.5),)
    t = synth_generate(SynthConfig(arms=arms, n_questions=50), 0)
    rng = np.random.default_rng(1)
    hits = [t.sample_response(i % 50, 0, 1 + i // 50, rng).is_correct for i in range(10_000)]
    assert abs(np.mean(hits) - 0.5) <= 0.02


def test_replay_mode_exhausted(small_trace, rng):
    with pytest.raises(ExhaustedTraceError):
        small_trace.sample_response(0, 0, 3, rng, allow_synthesis=False)


def test_correct_samples_share_answer_and_distractors_follow_zipf(small_trace):
    rng = np.random.default_rng(4)
    q = small_trace.questions[0]
    draws = [small_trace.sample_response(q.question_id, 0, i, rng) for i in range(1, 20_001)]
    assert {d.answer_id for d in draws if d.is_correct} == {q.ground_truth}
    wrong = Counter(d.answer_id for d in draws if not d.is_correct)
    dist = answer_distribution(small_trace, q.question_id, 0)
    n_wrong = sum(wrong.values())
    w = len(dist) - 1
    for rank in range(3):
        ans = (q.ground_truth + 1 + rank) % (w + 1)
        expected = dist[1 + rank] / dist[1:].sum()
        assert abs(wrong[ans] / n_wrong - expected) < 4 * math.sqrt(expected / n_wrong) + 0.005
