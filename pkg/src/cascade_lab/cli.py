"""Command-line experiment runner.

Subcommands: ``generate``, ``train``, ``eval``, ``theory`` and ``report``.
Each reads an optional JSON config; flags override config keys. Budgets are
given per question and multiplied by the number of evaluated questions.

Exit codes: 0 success, 2 config error, 3 data error, 4 training failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import baselines as bl
from . import cascade_theory as th
from .cost_model import PricingPolicy, alpha_price_table
from .dqn_policy import (CheckpointError, TrainConfig, TrainingError, evaluate, finetune,
                         load_checkpoint, save_checkpoint, train)
from .embedder import EmbeddingFileError, load_embeddings
from .mdp_env import ORDERINGS, CascadeEnv, order_questions
from .trace_store import (SynthConfig, SynthConfigError, TraceFormatError, TraceValidationError,
                          load_trace, planted_two_arm_config, save_trace, synth_generate)

logger = logging.getLogger("cascade_lab")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAIN = 0, 2, 3, 4
METHODS = ("rl", "single", "majority", "frugal", "calibrated", "knapsack_offline",
           "knapsack_online")
RESULTS_VERSION = 1


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


@dataclass
class RunConfig:
    trace: str | None = None
    synth: dict | None = None
    synth_seed: int = 0
    embeddings: str | None = None
    pricing: dict = field(default_factory=lambda: {"mode": "monetary"})
    budgets: list = field(default_factory=list)
    methods: list = field(default_factory=lambda: list(METHODS))
    seeds: list = field(default_factory=lambda: [0])
    ordering: str = "given"
    split: str = "test"
    lam: float | None = None
    gamma: float | None = None
    train: dict = field(default_factory=dict)
    train_pricing: list = field(default_factory=list)
    checkpoint: str | None = None
    majority_n: int = 2
    workers: int = 1
    output_dir: str = "."

    def validate(self) -> None:
        if self.trace is None and self.synth is None:
            raise ConfigError("config needs either 'trace' or 'synth'")
        if any(not (isinstance(b, (int, float)) and b > 0) for b in self.budgets):
            raise ConfigError("budgets must be positive numbers")
        if not self.methods:
            raise ConfigError("at least one method is required")
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; choose from {list(METHODS)}")
        if self.ordering not in ORDERINGS:
            raise ConfigError(f"unknown ordering {self.ordering!r}")
        if self.majority_n < 1:
            raise ConfigError("majority_n must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


# ----------------------------------------------------------------------------
# config plumbing


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: {exc}") from exc


def _csv_floats(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def _apply_overrides(d: dict, args) -> dict:
    d = dict(d)
    if getattr(args, "budget", None):
        d["budgets"] = _csv_floats(args.budget)
    if getattr(args, "methods", None):
        d["methods"] = [m.strip() for m in args.methods.split(",") if m.strip()]
    if getattr(args, "ordering", None):
        d["ordering"] = args.ordering
    pricing = dict(d.get("pricing") or {"mode": "monetary"})
    if getattr(args, "alpha", None) is not None:
        pricing.update(mode="monetary", alpha=args.alpha)
    if getattr(args, "beta", None) is not None:
        pricing.update(mode="combo", beta=args.beta)
    d["pricing"] = pricing
    for key in ("trace", "checkpoint", "embeddings", "output_dir", "workers"):
        val = getattr(args, key, None)
        if val is not None:
            d[key] = val
    return d


def synth_config_from(d: dict) -> SynthConfig:
    """``{"preset": "planted", ...}`` or a full SynthConfig dictionary."""
    d = dict(d)
    preset = d.pop("preset", None)
    if preset == "planted":
        return planted_two_arm_config(**d)
    if preset not in (None, "gsm8k"):
        raise ConfigError(f"unknown synth preset {preset!r}")
    return SynthConfig.from_dict(d)


def resolve_policy(pricing: dict, trace) -> PricingPolicy:
    """Build a PricingPolicy, filling alpha-chained prices for local arms."""
    p = dict(pricing)
    prices = {int(k): tuple(v) for k, v in (p.pop("prices", None) or {}).items()}
    mode = p.pop("mode", "monetary")
    alpha = p.pop("alpha", None)
    beta = p.pop("beta", None)
    if p:
        raise ConfigError(f"unknown pricing keys {sorted(p)}")
    if alpha is not None:
        prices = {**alpha_price_table(trace.arms, alpha), **prices}
    try:
        policy = PricingPolicy(mode=mode, alpha=alpha, beta=beta, prices=prices)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if mode == "monetary":
        free = [a.arm_id for a in trace.arms if policy.arm_prices(a) == (0.0, 0.0)]
        if free:
            raise ConfigError(f"arms {free} are free under monetary pricing; set an alpha")
    return policy


def _load_trace(cfg: RunConfig):
    try:
        if cfg.trace is not None:
            return load_trace(cfg.trace)
        return synth_generate(synth_config_from(cfg.synth), cfg.synth_seed)
    except FileNotFoundError as exc:
        raise DataError(f"trace file not found: {cfg.trace}") from exc
    except SynthConfigError as exc:
        raise ConfigError(str(exc)) from exc


def _embeddings(cfg: RunConfig):
    if cfg.embeddings is None:
        return None
    try:
        return load_embeddings(cfg.embeddings)
    except FileNotFoundError as exc:
        raise DataError(f"embedding file not found: {cfg.embeddings}") from exc


def _train_config(cfg: RunConfig, trace) -> TrainConfig:
    d = dict(cfg.train)
    if cfg.lam is not None:
        d["lam"] = cfg.lam
    if cfg.gamma is not None:
        d["gamma"] = cfg.gamma
    pricing = cfg.train_pricing or [cfg.pricing]
    d["pricing"] = [resolve_policy(p, trace) for p in pricing]
    try:
        return TrainConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train config: {exc}") from exc


# ----------------------------------------------------------------------------
# generate


def cmd_generate(args) -> int:
    d = _load_config(args.config)
    synth = d.get("synth", d) if d else {}
    try:
        sc = synth_config_from(synth)
        trace = synth_generate(sc, args.seed)
    except (SynthConfigError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    save_trace(trace, args.out)
    logger.info("wrote %d questions x %d arms to %s", len(trace.questions), trace.n_arms, args.out)
    return EXIT_OK


# ----------------------------------------------------------------------------
# train


CURVE_FIELDS = ("step", "epsilon", "loss", "eval_accuracy")


def _write_curve(path, curve) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_FIELDS)
        for row in curve:
            w.writerow([row["step"]] + [repr(float(row[k])) for k in CURVE_FIELDS[1:]])


def cmd_train(args) -> int:
    cfg = RunConfig.from_dict(_apply_overrides(_load_config(args.config), args))
    if cfg.trace is None and cfg.synth is None:
        raise ConfigError("config needs either 'trace' or 'synth'")
    trace = _load_trace(cfg)
    for split in ("train", "val"):
        if not trace.split_ids(split):
            raise DataError(f"trace has no {split} split")
    tc = _train_config(cfg, trace)
    if args.seed is not None:
        tc.seed = int(args.seed)
    emb = _embeddings(cfg)
    out = Path(args.out)
    curve_path = Path(args.curve) if args.curve else out.with_suffix(".curve.csv")
    try:
        if args.finetune:
            net, _, step, _, _ = load_checkpoint(args.finetune, remap_arms=trace.n_arms)
            net = finetune(net, trace, args.finetune_samples, tc, mode=args.finetune_mode)
            save_checkpoint(out, net, tc, step, meta={"finetuned_from": str(args.finetune)})
            _write_curve(curve_path, [])
            return EXIT_OK
        net = opt = None
        start = 0
        if args.resume:
            net, saved, start, opt, _ = load_checkpoint(args.resume)
            if opt is not None:
                opt.lr = tc.lr
        remaining = max(tc.train_steps - start, 0)
        res = train(trace, tc, net=net, start_step=start, optimizer=opt, embeddings=emb,
                    n_steps=remaining)
    except FileNotFoundError as exc:
        raise ConfigError(f"checkpoint not found: {exc.filename}") from exc
    save_checkpoint(out, res.net, tc, res.step, res.optimizer)
    _write_curve(curve_path, res.curve)
    logger.info("trained to step %d; checkpoint %s", res.step, out)
    return EXIT_OK


# ----------------------------------------------------------------------------
# eval


RESULT_FIELDS = ("method", "budget", "total_budget", "alpha", "beta", "seed", "accuracy", "spend",
                 "spend_per_question", "unanswered", "n_questions")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _eval_cell(payload) -> tuple:
    cfg, method, budget, seed, cache = payload
    t0 = time.perf_counter()
    trace = cache["trace"]
    policy = cache["policy"]
    env = cache["env"]
    ids = order_questions(trace, trace.split_ids(cfg.split), cfg.ordering, seed)
    total = budget * len(ids)
    if method == "rl":
        res = evaluate(cache["net"], env, ids, total, seed=seed)
    elif method == "single":
        res = bl.single_model_run(trace, total, env=env, question_ids=ids, seed=seed)
    elif method == "majority":
        res = bl.majority_vote_run(trace, total, cfg.majority_n, env=env, question_ids=ids,
                                   seed=seed)
    elif method == "frugal":
        res = bl.threshold_cascade_run(trace, total, cache["estimator"], env=env, question_ids=ids,
                                       seed=seed)
    elif method == "calibrated":
        res = bl.calibrated_cascade_run(trace, total, cache["estimator"], env=env,
                                        question_ids=ids, seed=seed)
    elif method == "knapsack_offline":
        res = bl.offline_knapsack_run(trace, total, policy, question_ids=ids)
    else:
        res = bl.online_knapsack_run(trace, total, env=env, question_ids=ids, seed=seed)
    if res.spend > total * (1 + 1e-12):
        raise DataError(f"{method} overspent: {res.spend} > {total}")
    row = {
        "method": method, "budget": float(budget), "total_budget": float(total),
        "alpha": policy.alpha, "beta": policy.beta, "seed": int(seed),
        "accuracy": float(res.accuracy), "spend": float(res.spend),
        "spend_per_question": float(res.spend / len(ids)) if ids else 0.0,
        "unanswered": int(res.n_unanswered), "n_questions": len(ids),
    }
    for k, q in enumerate(res.arm_queries):
        row[f"queries_arm{k}"] = int(q)
    return row, time.perf_counter() - t0


_WORKER_CACHE: dict = {}


def _worker_init(cache):
    _WORKER_CACHE.clear()
    _WORKER_CACHE.update(cache)


def _worker_cell(job):
    cfg, method, budget, seed = job
    return _eval_cell((cfg, method, budget, seed, _WORKER_CACHE))


def run_eval(cfg: RunConfig) -> tuple[list, list]:
    """Evaluate every (method, budget, seed) cell; rows come back in that order."""
    cfg.validate()
    if not cfg.budgets:
        raise ConfigError("no budgets given")
    trace = _load_trace(cfg)
    if not trace.split_ids(cfg.split):
        raise DataError(f"trace has no {cfg.split} split")
    policy = resolve_policy(cfg.pricing, trace)
    lam = cfg.lam if cfg.lam is not None else cfg.train.get("lam", TrainConfig.lam)
    env = CascadeEnv(trace, policy, _embeddings(cfg), lam=lam)
    cache = {"trace": trace, "policy": policy, "env": env}
    if "rl" in cfg.methods:
        if not cfg.checkpoint:
            raise ConfigError("method 'rl' needs a checkpoint")
        try:
            net, *_ = load_checkpoint(cfg.checkpoint, expected_dim=env.state_dim)
        except FileNotFoundError as exc:
            raise ConfigError(f"checkpoint not found: {cfg.checkpoint}") from exc
        cache["net"] = net
    if {"frugal", "calibrated"} & set(cfg.methods):
        ref = float(np.median(cfg.budgets))
        cache["estimator"] = bl.train_estimator(trace, env=env, seed=cfg.seeds[0],
                                                reference_budget=ref,
                                                tune_calibrated="calibrated" in cfg.methods)
    jobs = [(cfg, m, float(b), int(s)) for m in cfg.methods for b in cfg.budgets for s in cfg.seeds]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers, initializer=_worker_init, initargs=(cache,)) as ex:
            out = list(ex.map(_worker_cell, jobs))
    else:
        out = [_eval_cell((*job, cache)) for job in jobs]
    rows = [r for r, _ in out]
    timings = [{"method": r["method"], "budget": r["budget"], "seed": r["seed"], "wall_time_s": t}
               for r, t in out]
    return rows, timings


def write_results(path, rows: list, n_arms: int) -> None:
    cols = list(RESULT_FIELDS) + [f"queries_arm{k}" for k in range(n_arms)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# results v{RESULTS_VERSION}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in cols])


def cmd_eval(args) -> int:
    cfg = RunConfig.from_dict(_apply_overrides(_load_config(args.config), args))
    if args.seed is not None:
        cfg.seeds = [int(s) for s in _csv_floats(args.seed)]
    rows, timings = run_eval(cfg)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / "results.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    n_arms = max((int(k[len("queries_arm"):]) + 1 for r in rows for k in r
                  if k.startswith("queries_arm")), default=0)
    write_results(out, rows, n_arms)
    # wall times go to a sidecar so the results file stays reproducible
    with open(out.with_name(out.stem + ".timings.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, ["method", "budget", "seed", "wall_time_s"], lineterminator="\n")
        w.writeheader()
        w.writerows(timings)
    logger.info("wrote %d rows to %s", len(rows), out)
    return EXIT_OK


# ----------------------------------------------------------------------------
# theory


DEFAULT_ALPHA_DISTS = (
    (1.0,),
    (0.6, 0.4),
    (0.5, 0.5),
    (0.5, 0.3, 0.2),
    (0.4, 0.3, 0.2, 0.1),
    (0.3, 0.25, 0.25, 0.2),
)


def run_theory(n_instances: int = 200, seed: int = 0, mc_trials: int = 100_000) -> dict:
    rng = np.random.default_rng([seed, 0x7E0])
    ordering = []
    for i in range(n_instances):
        m = int(rng.integers(2, 7))
        arms = th.random_oracle_arms(rng, m)
        rep = th.verify_ordering_bruteforce(arms)
        if rep.violation:
            logger.error("ordering counterexample on instance %d: %s", i, rep.counterexample)
        ordering.append({"instance": i, "m": m, "optimal_cost": rep.optimal_cost,
                         "min_cost": rep.min_cost, "max_cost": rep.max_cost, "gap": rep.gap,
                         "violation": int(rep.violation)})
    alpha = []
    for dist in DEFAULT_ALPHA_DISTS:
        for k in (1, 2, 3):
            a = th.alpha_estimate(dist, k, "exact")
            alpha.append({"dist": " ".join(repr(x) for x in dist), "k": k, "method": "exact",
                          "alpha": a.value, "stderr": 0.0})
    mc_rng = np.random.default_rng([seed, 0xA1FA])
    for n_tail in (10, 30, 100):
        dist = th.tail_split_dist(0.3, n_tail)
        a = th.alpha_estimate(dist, 2, "monte_carlo", trials=mc_trials, rng=mc_rng)
        alpha.append({"dist": f"0.3 + tail/{n_tail}", "k": 2, "method": "monte_carlo",
                      "alpha": a.value, "stderr": a.stderr})
    tail = []
    for p in np.round(np.arange(0.55, 1.0, 0.05), 10):
        a = th.alpha_estimate([p, 1 - p], 2, "exact").value
        tail.append({"p": float(p), "one_minus_alpha": 1 - a, "one_minus_p_sq": (1 - p) ** 2,
                     "ratio": (1 - a) / (1 - p) ** 2})
    return {"ordering": ordering, "alpha": alpha, "alpha_tail": tail}


def _write_dicts(path, rows: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(v) for k, v in r.items()})


def cmd_theory(args) -> int:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = run_theory(args.instances, args.seed or 0, args.mc_trials)
    for name, rows in tables.items():
        _write_dicts(out / f"{name}.csv", rows)
    n_bad = sum(r["violation"] for r in tables["ordering"])
    logger.info("ordering check: %d instances, %d violations", len(tables["ordering"]), n_bad)
    return EXIT_OK


# ----------------------------------------------------------------------------
# report


def read_results(path) -> list:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if not ln.startswith("#")]
    except FileNotFoundError as exc:
        raise DataError(f"results file not found: {path}") from exc
    reader = csv.DictReader(lines)
    header = reader.fieldnames or []
    missing = [c for c in RESULT_FIELDS if c not in header]
    if missing:
        raise DataError(f"results schema mismatch: missing columns {missing}")
    rows = []
    for r in reader:
        try:
            row = {"method": r["method"], "budget": float(r["budget"]), "seed": int(r["seed"]),
                   "accuracy": float(r["accuracy"]), "spend": float(r["spend"]),
                   "n_questions": int(r["n_questions"])}
            row["queries"] = [int(r[c]) for c in header if c.startswith("queries_arm")]
        except (TypeError, ValueError) as exc:
            raise DataError(f"results row malformed: {exc}") from exc
        rows.append(row)
    return rows


def pareto_flags(points: list) -> list:
    """True where some other (budget, accuracy) point is no more expensive
    and no less accurate, and strictly better in one of the two."""
    flags = []
    for i, (b, a) in enumerate(points):
        flags.append(any(j != i and b2 <= b and a2 >= a and (b2 < b or a2 > a)
                         for j, (b2, a2) in enumerate(points)))
    return flags


def build_report(rows: list) -> tuple[list, list]:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["method"], r["budget"]), []).append(r)
    series = []
    hist = []
    for (method, budget), rs in groups.items():
        series.append({"method": method, "budget": budget,
                       "accuracy": float(np.mean([r["accuracy"] for r in rs])),
                       "spend": float(np.mean([r["spend"] for r in rs])), "n_seeds": len(rs)})
        n_arms = len(rs[0]["queries"])
        for k in range(n_arms):
            per_q = np.mean([r["queries"][k] / r["n_questions"] for r in rs])
            hist.append({"method": method, "budget": budget, "arm": k,
                         "avg_queries_per_question": float(per_q)})
    flags = pareto_flags([(s["budget"], s["accuracy"]) for s in series])
    for s, f in zip(series, flags):
        s["dominated"] = int(f)
    return series, hist


def cmd_report(args) -> int:
    rows = read_results(args.results)
    series, hist = build_report(rows)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_dicts(out / "series.csv", series)
    _write_dicts(out / "arm_histogram.csv", hist)
    logger.info("%d series points, %d histogram rows", len(series), len(hist))
    return EXIT_OK


# ----------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cascade-lab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic trace")
    g.add_argument("--config")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    def common(sp):
        sp.add_argument("--config")
        sp.add_argument("--trace")
        sp.add_argument("--embeddings")
        sp.add_argument("--alpha", type=float)
        sp.add_argument("--beta", type=float)
        sp.add_argument("--ordering", choices=ORDERINGS)

    t = sub.add_parser("train", help="train the routing policy")
    common(t)
    t.add_argument("--seed", type=int)
    t.add_argument("--out", required=True)
    t.add_argument("--curve")
    t.add_argument("--resume")
    t.add_argument("--finetune")
    t.add_argument("--finetune-samples", type=int, default=300)
    t.add_argument("--finetune-mode", choices=("full", "adapter"), default="full")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate methods over budgets and seeds")
    common(e)
    e.add_argument("--checkpoint")
    e.add_argument("--budget", help="comma-separated per-question budgets")
    e.add_argument("--methods", help=f"comma-separated subset of {','.join(METHODS)}")
    e.add_argument("--seed", help="comma-separated seeds")
    e.add_argument("--workers", type=int)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    th_p = sub.add_parser("theory", help="ordering check and self-consistency tables")
    th_p.add_argument("--out-dir", required=True)
    th_p.add_argument("--instances", type=int, default=200)
    th_p.add_argument("--mc-trials", type=int, default=100_000)
    th_p.add_argument("--seed", type=int, default=0)
    th_p.set_defaults(func=cmd_theory)

    r = sub.add_parser("report", help="series and per-arm histograms from a results CSV")
    r.add_argument("--results", required=True)
    r.add_argument("--out-dir", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, TraceFormatError, TraceValidationError, EmbeddingFileError,
            CheckpointError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingError as exc:
        print(f"training failed: {exc}", file=sys.stderr)
        return EXIT_TRAIN


if __name__ == "__main__":
    sys.exit(main())
