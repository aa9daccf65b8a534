"""Command-line entry point.

Subcommands:

* ``run``     - run the configured chains plus ancestral baselines, write
  one JSONL trace per chain and a JSON run report with CSV side tables.
* ``oracle``  - enumerate the exact target, check detailed balance, and
  compare chain / ancestral / reweighted-ancestral samples to it by total
  variation distance.
* ``compare`` - analyze existing traces against ancestral baseline files:
  set overlap, reward trajectories, acceptance statistics, accepted-index
  histogram and per-kind proposal reward-delta distributions.

All outputs are plain JSONL/CSV written atomically; rerunning a command
with the same config and seeds reproduces them byte for byte.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import metrics
from .config import (
    ConfigError,
    ExperimentConfig,
    build_chain_config,
    build_lm,
    build_proposal,
    build_reward,
    build_target,
    load_config,
)
from .engine import ChainTrace, ancestral_sample, run_chain, run_parallel_chains
from .fileio import atomic_write_text, write_csv, write_json
from .oracle import (
    EnumerationGuardError,
    detailed_balance_check,
    exact_target,
    truncated_gibbs_resample,
    tv_distance,
)
from .proposal import (
    SUFFIX_RESAMPLE,
    TOKEN_FULL_CONDITIONAL,
    TOKEN_UNIFORM,
    propose_suffix,
    propose_token_full_conditional,
    propose_token_uniform,
)


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gibbslm", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("run", "oracle", "compare"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the YAML experiment config")
        p.add_argument("--out", default=None, help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, default=None, help="base seed (overrides chain.seed)")
        p.add_argument("--jobs", type=int, default=1, help="worker threads for parallel chains")
        if name == "compare":
            p.add_argument("--traces", nargs="+", required=True, help="chain trace JSONL files")
            p.add_argument("--baselines", nargs="*", default=[], help="ancestral baseline JSONL files")
    return parser


def _setup(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, chain=replace(cfg.chain, seed=args.seed))
    if args.out is not None:
        cfg = replace(cfg, output_dir=args.out)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    lm = build_lm(cfg)
    reward = build_reward(cfg, lm)
    target = build_target(cfg, reward)
    spec = build_proposal(cfg)
    prompt = cfg.prompt if cfg.lm.backend == "remote" else ()
    return cfg, out, lm, reward, target, spec, prompt


def _trace_meta(cfg: ExperimentConfig, chain_index: int) -> dict:
    return {
        "config": cfg.to_dict(),
        "prompt": cfg.prompt,
        "chain_index": chain_index,
        "proposal_tau": cfg.proposal.tau,
    }


def _write_ancestral(path, hypotheses, tau, seed):
    lines = [json.dumps({"kind": "ancestral", "tau": tau, "seed": seed}, sort_keys=True)]
    for h in hypotheses:
        lines.append(json.dumps({"tokens": list(h.tokens), "lm_logprob": h.lm_logprob}, sort_keys=True))
    atomic_write_text(path, "\n".join(lines) + "\n")


def _read_ancestral(path) -> list[tuple]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "tokens" in rec:
                rows.append(tuple(rec["tokens"]))
    return rows


def cmd_run(args) -> int:
    cfg, out, lm, reward, target, spec, prompt = _setup(args)
    chain_cfg = build_chain_config(cfg)
    seeds = cfg.chain_seeds()
    traces = run_parallel_chains(lm, prompt, target, spec, chain_cfg, seeds, jobs=args.jobs)
    for k, trace in enumerate(traces):
        trace.meta.update(_trace_meta(cfg, k))
        trace.to_jsonl(out / f"chain_{k:03d}.jsonl")

    for tau in cfg.baselines.temperatures:
        rng = np.random.default_rng([cfg.chain.seed, 1, int(round(tau * 1000))])
        hyps = ancestral_sample(lm, prompt, tau, cfg.baselines.ancestral_samples, rng)
        _write_ancestral(out / f"ancestral_tau{tau:.1f}.jsonl", hyps, tau, cfg.chain.seed)

    report = metrics.build_run_report(traces, reward, cfg.compare.n_index_buckets)
    write_json(out / "report.json", report.to_dict())
    write_csv(out / "trajectory.csv", ["step", "mean_reward", "std_reward"], report.reward_trajectory)
    buckets = len(report.index_histogram)
    write_csv(
        out / "index_histogram.csv",
        ["bucket_low", "bucket_high", "count"],
        [(j / buckets, (j + 1) / buckets, c) for j, c in enumerate(report.index_histogram)],
    )
    write_csv(
        out / "repeats_histogram.csv",
        ["multiplicity", "unique_sequences"],
        sorted(report.repeats_histogram.items()),
    )
    return 0


def cmd_oracle(args) -> int:
    cfg, out, lm, reward, target, spec, prompt = _setup(args)
    try:
        lm_tau = spec.tau if cfg.target.variant != "plain" else 1.0
        dist = exact_target(lm, prompt, target, lm_tau=lm_tau)
    except EnumerationGuardError as exc:
        print(f"oracle: {exc}", file=sys.stderr)
        return 1
    dist.to_csv(out / "exact_target.csv", lm, prompt, reward)

    chain_cfg = build_chain_config(cfg)
    trace = run_chain(lm, prompt, target, spec, chain_cfg)
    tv_chain = tv_distance(trace.sample_states(), dist)

    rng = np.random.default_rng([cfg.chain.seed, 2])
    ancestral = ancestral_sample(lm, prompt, spec.tau, cfg.baselines.ancestral_samples, rng)
    tv_ancestral = tv_distance([h.tokens for h in ancestral], dist)

    resampled = truncated_gibbs_resample(ancestral, target, prompt, rng, cfg.baselines.resample_count, lm=lm)
    tv_resampled = tv_distance(resampled, dist)

    balance = detailed_balance_check(lm, prompt, target, spec)
    report = {
        "state_count": len(dist.states),
        "log_z": dist.log_z,
        "tv_mh_chain": tv_chain,
        "tv_ancestral": tv_ancestral,
        "tv_truncated_gibbs": tv_resampled,
        "detailed_balance_max_violation": balance.max_violation,
        "detailed_balance_pairs": balance.pairs_checked,
    }
    write_json(out / "oracle_report.json", report)
    for key in ("tv_mh_chain", "tv_ancestral", "tv_truncated_gibbs", "detailed_balance_max_violation"):
        print(f"{key}: {report[key]:.6g}")
    return 0


def _proposal_deltas(lm, reward, target, spec, prompt, state, count, top_k, rng):
    """Reward deltas r(candidate) - r(state) for `count` proposals per kind."""
    base = reward(prompt, state)
    deltas = {}
    for kind in (SUFFIX_RESAMPLE, TOKEN_UNIFORM, TOKEN_FULL_CONDITIONAL):
        vals = np.empty(count)
        for j in range(count):
            if kind == SUFFIX_RESAMPLE:
                out = propose_suffix(lm, state, prompt, spec, rng)
            elif kind == TOKEN_UNIFORM:
                out = propose_token_uniform(state, prompt, lm.vocab, rng)
            else:
                out = propose_token_full_conditional(lm, reward, target.beta, state, prompt, top_k, rng)
            vals[j] = reward(prompt, out.candidate) - base
        deltas[kind] = vals
    return deltas


def cmd_compare(args) -> int:
    cfg, out, lm, reward, target, spec, prompt = _setup(args)
    try:
        traces = [ChainTrace.from_jsonl(p) for p in args.traces]
    except FileNotFoundError as exc:
        print(f"compare: cannot read trace: {exc}", file=sys.stderr)
        return 1
    try:
        baseline_states = [s for p in args.baselines for s in _read_ancestral(p)]
    except FileNotFoundError as exc:
        print(f"compare: cannot read baseline: {exc}", file=sys.stderr)
        return 1

    if baseline_states:
        pool = metrics.HypothesisSet(prompt=cfg.prompt, hypotheses=tuple(baseline_states))
        overlaps = [
            (str(p), metrics.set_overlap(metrics.HypothesisSet(prompt=cfg.prompt, hypotheses=tuple(t.sample_states())), pool))
            for p, t in zip(args.traces, traces)
        ]
        write_csv(out / "overlap.csv", ["trace", "overlap"], overlaps)

    write_csv(out / "reward_trajectory.csv", ["step", "mean_reward", "std_reward"], metrics.reward_trajectory(traces))

    stats = [metrics.acceptance_stats(t) for t in traces]
    write_json(
        out / "acceptance_stats.json",
        {
            "per_trace": [
                {**st, "repeats_histogram": {str(k): v for k, v in st["repeats_histogram"].items()}} for st in stats
            ],
            "mean_acceptance_rate": float(np.mean([st["acceptance_rate"] for st in stats])),
        },
    )

    buckets = cfg.compare.n_index_buckets
    hist = metrics.accepted_index_histogram(traces, buckets)
    write_csv(
        out / "accepted_index_histogram.csv",
        ["bucket_low", "bucket_high", "count"],
        [(j / buckets, (j + 1) / buckets, c) for j, c in enumerate(hist)],
    )

    rng = np.random.default_rng([cfg.chain.seed, 3])
    state = ancestral_sample(lm, prompt, spec.tau, 1, rng)[0].tokens
    if state:
        deltas = _proposal_deltas(lm, reward, target, spec, prompt, state, cfg.compare.n_proposals, cfg.proposal.top_k, rng)
        rows = [(kind, repr(float(v))) for kind, vals in deltas.items() for v in vals]
        write_csv(out / "proposal_deltas.csv", ["kind", "reward_delta"], rows)
        write_json(
            out / "proposal_summary.json",
            {
                "initial_state": list(state),
                "n_proposals": cfg.compare.n_proposals,
                "positive_fraction": {k: float((v > 0).mean()) for k, v in deltas.items()},
            },
        )
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handlers = {"run": cmd_run, "oracle": cmd_oracle, "compare": cmd_compare}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
