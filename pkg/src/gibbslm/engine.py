"""The Metropolis-Hastings loop over token sequences.

A chain starts from an ancestral sample, repeatedly proposes a move,
accepts it with the Metropolis-Hastings probability for the configured
Gibbs target, and records everything. Two target variants are supported:

* ``plain`` - density proportional to exp(r(x, y) / beta); the acceptance
  ratio needs the model logprobs of the old and new suffixes.
* ``kl_regularized`` - density proportional to p_LM(y|x) exp(r(x, y) / beta);
  with the suffix proposal the model terms cancel against the proposal
  density, so the acceptance needs only rewards and the index-probability
  ratio (which is why this variant works against sampling-only APIs).

Two views of a run are kept: the canonical chain, which repeats the current
state on rejection (this is the object with the stationary-distribution
guarantee and what all convergence checks use), and the accepted-only list
of states in acceptance order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .lm import LanguageModel, Tokens
from .proposal import (
    SUFFIX_RESAMPLE,
    TOKEN_UNIFORM,
    IndexDistribution,
    ProposalOutcome,
    ProposalSpec,
    propose_suffix,
    propose_token_full_conditional,
    propose_token_uniform,
)

PLAIN = "plain"
KL_REGULARIZED = "kl_regularized"
TARGET_VARIANTS = (PLAIN, KL_REGULARIZED)


class EngineError(ValueError):
    """Invalid engine configuration."""


class ChainAborted(RuntimeError):
    """A backend failed mid-run; the partial trace survives on the exception."""

    def __init__(self, message: str, partial_trace: "ChainTrace", cause: Exception):
        super().__init__(message)
        self.partial_trace = partial_trace
        self.cause = cause


@dataclass(frozen=True)
class GibbsTarget:
    """Reward, temperature and variant defining the unnormalized target."""

    reward: object
    beta: float
    variant: str = PLAIN

    def __post_init__(self):
        if self.beta <= 0:
            raise EngineError("beta must be positive")
        if self.variant not in TARGET_VARIANTS:
            raise EngineError(f"unknown target variant {self.variant!r}")

    def log_unnormalized(self, lm: LanguageModel, x, y: Tokens, reward_value: float | None = None, lm_tau: float = 1.0) -> float:
        """Unnormalized log density (never the partition function)."""
        r = self.reward(x, y) if reward_value is None else reward_value
        if self.variant == PLAIN:
            return r / self.beta
        return lm.sequence_logprob(y, x, lm_tau) + r / self.beta


@dataclass(frozen=True)
class ChainConfig:
    """Proposal budget, burn-in, proposal temperature and seed for one chain."""

    steps: int
    burn_in: int = 0
    tau: float = 1.0
    seed: int = 0
    record_rejected: bool = True

    def __post_init__(self):
        if self.steps < 1:
            raise EngineError("steps must be >= 1")
        if not 0 <= self.burn_in < self.steps:
            raise EngineError("burn_in must satisfy 0 <= burn_in < steps")
        if self.tau <= 0:
            raise EngineError("tau must be positive")


@dataclass(frozen=True)
class Hypothesis:
    """A state with its cached model logprob and reward.

    ``token_logprobs``/``eos_logprob`` are at temperature ``tau`` and let the
    suffix proposal score reverse moves without re-querying the model.
    """

    tokens: Tokens
    lm_logprob: float
    reward: float | None = None
    tau: float = 1.0
    token_logprobs: tuple[float, ...] | None = None
    eos_logprob: float | None = None


@dataclass(frozen=True)
class StepRecord:
    step: int
    index: int
    candidate: Tokens | None
    alpha: float
    accepted: bool
    state: Tokens
    reward: float
    lm_logprob: float
    tokens_generated: int


@dataclass
class ChainTrace:
    """Full record of one chain run."""

    seed: int
    initial: Hypothesis
    steps: list[StepRecord] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def canonical_states(self) -> list[Tokens]:
        """States y^0..y^T with the current state repeated on rejection."""
        return [self.initial.tokens] + [s.state for s in self.steps]

    def canonical_rewards(self) -> list[float]:
        return [self.initial.reward] + [s.reward for s in self.steps]

    def accepted_states(self) -> list[Tokens]:
        """Initial state plus each accepted candidate, in acceptance order."""
        return [self.initial.tokens] + [s.state for s in self.steps if s.accepted]

    def sample_states(self, burn_in: int | None = None) -> list[Tokens]:
        """Canonical states after dropping the first `burn_in` of them."""
        if burn_in is None:
            burn_in = self.meta.get("burn_in", 0)
        return self.canonical_states()[burn_in:]

    def acceptance_rate(self) -> float:
        if not self.steps:
            return 0.0
        return sum(1 for s in self.steps if s.accepted) / len(self.steps)

    def tokens_generated(self) -> int:
        return self.steps[-1].tokens_generated if self.steps else len(self.initial.tokens)

    def to_jsonl(self, path):
        from .fileio import atomic_write_text

        atomic_write_text(path, self.dumps())

    def dumps(self) -> str:
        lines = [json.dumps({"seed": self.seed, **self.meta}, sort_keys=True)]
        lines.append(
            json.dumps(
                {
                    "step": 0,
                    "index": None,
                    "candidate_tokens": None,
                    "alpha": None,
                    "accepted": None,
                    "state_tokens": list(self.initial.tokens),
                    "reward": self.initial.reward,
                    "lm_logprob": self.initial.lm_logprob,
                    "tokens_generated": len(self.initial.tokens),
                },
                sort_keys=True,
            )
        )
        for s in self.steps:
            lines.append(
                json.dumps(
                    {
                        "step": s.step,
                        "index": s.index,
                        "candidate_tokens": None if s.candidate is None else list(s.candidate),
                        "alpha": s.alpha,
                        "accepted": s.accepted,
                        "state_tokens": list(s.state),
                        "reward": s.reward,
                        "lm_logprob": s.lm_logprob,
                        "tokens_generated": s.tokens_generated,
                    },
                    sort_keys=True,
                )
            )
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, path) -> "ChainTrace":
        with open(path, encoding="utf-8") as fh:
            records = [json.loads(line) for line in fh if line.strip()]
        if len(records) < 2 or "step" in records[0]:
            raise ValueError(f"{path}: expected a header record then step records")
        header, rows = records[0], records[1:]
        if rows[0]["step"] != 0:
            raise ValueError(f"{path}: first step record must be the initial state")
        initial = Hypothesis(
            tokens=tuple(rows[0]["state_tokens"]),
            lm_logprob=rows[0]["lm_logprob"],
            reward=rows[0]["reward"],
        )
        steps = [
            StepRecord(
                step=r["step"],
                index=r["index"],
                candidate=None if r["candidate_tokens"] is None else tuple(r["candidate_tokens"]),
                alpha=r["alpha"],
                accepted=r["accepted"],
                state=tuple(r["state_tokens"]),
                reward=r["reward"],
                lm_logprob=r["lm_logprob"],
                tokens_generated=r["tokens_generated"],
            )
            for r in rows[1:]
        ]
        seed = header.pop("seed", 0)
        return cls(seed=seed, initial=initial, steps=steps, meta=header)


class CachedReward:
    """Per-chain memo so each distinct state is scored exactly once."""

    def __init__(self, fn, x):
        self.fn = fn
        self.x = x
        self.evaluations = 0
        self._cache: dict[Tokens, float] = {}

    def __call__(self, x, y) -> float:
        y = tuple(y)
        hit = self._cache.get(y)
        if hit is None:
            self.evaluations += 1
            hit = self._cache[y] = float(self.fn(x, y))
        return hit


def _finish_alpha(log_alpha: float) -> float:
    if math.isnan(log_alpha):
        raise EngineError("acceptance ratio is NaN; check reward/proposal outputs")
    if log_alpha == -math.inf:
        return 0.0
    # Log-space throughout; exponentiate once and clamp against rounding.
    return min(1.0, max(0.0, math.exp(min(log_alpha, 0.0))))


def acceptance_plain(
    outcome: ProposalOutcome,
    current: Hypothesis,
    candidate_reward: float,
    target: GibbsTarget,
    index_dist: IndexDistribution,
) -> float:
    """MH acceptance for the plain Gibbs target.

    min(1, exp((r(y) - r(y^t)) / beta) * exp(reverse - forward)
           * q(i | |y|) / q(i | |y^t|)); an unreachable reverse move
    (reverse logprob -inf or undrawable index) gives 0.
    """
    if target.variant != PLAIN:
        raise EngineError("acceptance_plain requires a plain target")
    if outcome.forward_logprob == -math.inf:
        raise EngineError("forward logprob must be finite")
    log_alpha = (
        (candidate_reward - current.reward) / target.beta
        + (outcome.reverse_logprob - outcome.forward_logprob)
        + index_dist.log_prob(outcome.index, len(outcome.candidate))
        - index_dist.log_prob(outcome.index, len(current.tokens))
    )
    return _finish_alpha(log_alpha)


def acceptance_rlhf(
    outcome: ProposalOutcome,
    current: Hypothesis,
    candidate_reward: float,
    target: GibbsTarget,
    index_dist: IndexDistribution,
) -> float:
    """Simplified acceptance for the KL-regularized target with suffix moves.

    The model suffix terms cancel against the proposal (the target ratio
    contains the inverse of the probability of returning), leaving
    min(1, exp((r(y) - r(y^t)) / beta) * q(i | |y|) / q(i | |y^t|)).
    """
    if target.variant != KL_REGULARIZED:
        raise EngineError("acceptance_rlhf requires a kl_regularized target")
    if outcome.kind != SUFFIX_RESAMPLE:
        raise EngineError("the simplified acceptance is only valid for suffix proposals")
    log_alpha = (
        (candidate_reward - current.reward) / target.beta
        + index_dist.log_prob(outcome.index, len(outcome.candidate))
        - index_dist.log_prob(outcome.index, len(current.tokens))
    )
    return _finish_alpha(log_alpha)


def _propose(lm, x, spec: ProposalSpec, current: Hypothesis, reward, beta, rng) -> ProposalOutcome:
    if spec.kind == SUFFIX_RESAMPLE:
        cached = None
        if current.token_logprobs is not None and current.tau == spec.tau:
            cached = (current.token_logprobs, current.eos_logprob)
        return propose_suffix(lm, current.tokens, x, spec, rng, cached)
    if spec.kind == TOKEN_UNIFORM:
        return propose_token_uniform(current.tokens, x, lm.vocab, rng)
    return propose_token_full_conditional(lm, reward, beta, current.tokens, x, spec.top_k, rng)


def _make_hypothesis(lm, x, tokens, tau, reward_value, prefix_of=None, outcome=None) -> Hypothesis:
    """Assemble caches for a new state, splicing prefix logprobs when possible."""
    if outcome is not None and outcome.continuation is not None and prefix_of is not None:
        keep = outcome.index - 1
        token_lps = prefix_of.token_logprobs[:keep] + outcome.continuation.token_logprobs
        eos_lp = outcome.continuation.eos_logprob
        lm_lp = float(sum(token_lps) + eos_lp)
    else:
        cont_lp = lm.sequence_logprob(tokens, x, tau)
        token_lps, eos_lp, lm_lp = None, None, cont_lp
    return Hypothesis(
        tokens=tokens,
        lm_logprob=lm_lp,
        reward=reward_value,
        tau=tau,
        token_logprobs=token_lps,
        eos_logprob=eos_lp,
    )


def run_chain(lm: LanguageModel, x, target: GibbsTarget, spec: ProposalSpec, config: ChainConfig) -> ChainTrace:
    """Run one chain: ancestral start, then `config.steps` proposals.

    Identical (seed, config, inputs) reproduce the trace bit-exactly. A
    backend failure raises :class:`ChainAborted` carrying the partial trace.
    """
    if target.variant == KL_REGULARIZED and spec.kind != SUFFIX_RESAMPLE:
        raise EngineError("the kl_regularized target requires the suffix proposal")
    accept = acceptance_rlhf if target.variant == KL_REGULARIZED else acceptance_plain
    rng = np.random.default_rng(config.seed)
    reward = CachedReward(target.reward, x)

    cont = lm.sample_continuation((), x, config.tau, rng)
    current = Hypothesis(
        tokens=cont.tokens,
        lm_logprob=cont.logprob,
        reward=reward(x, cont.tokens),
        tau=config.tau,
        token_logprobs=cont.token_logprobs,
        eos_logprob=cont.eos_logprob,
    )
    trace = ChainTrace(seed=config.seed, initial=current, meta={"burn_in": config.burn_in})
    tokens_generated = len(current.tokens)

    for t in range(1, config.steps + 1):
        try:
            outcome = _propose(lm, x, spec, current, reward, target.beta, rng)
            candidate_reward = reward(x, outcome.candidate)
            alpha = accept(outcome, current, candidate_reward, target, spec.index_dist)
        except Exception as exc:
            raise ChainAborted(f"backend failure at step {t}: {exc}", trace, exc) from exc
        u = rng.random()
        accepted = u < alpha
        if accepted:
            if outcome.continuation is not None:
                current = _make_hypothesis(
                    lm, x, outcome.candidate, config.tau, candidate_reward, prefix_of=current, outcome=outcome
                )
            else:
                current = _make_hypothesis(lm, x, outcome.candidate, config.tau, candidate_reward)
        tokens_generated += outcome.tokens_generated
        trace.steps.append(
            StepRecord(
                step=t,
                index=outcome.index,
                candidate=outcome.candidate if (config.record_rejected or accepted) else None,
                alpha=alpha,
                accepted=accepted,
                state=current.tokens,
                reward=current.reward,
                lm_logprob=current.lm_logprob,
                tokens_generated=tokens_generated,
            )
        )
    trace.meta["reward_evaluations"] = reward.evaluations
    return trace


def ancestral_sample(lm: LanguageModel, x, tau: float, count: int, rng) -> list[Hypothesis]:
    """Independent draws from the model at temperature tau (rewards unset)."""
    if count < 1:
        raise EngineError("count must be >= 1")
    out = []
    for _ in range(count):
        cont = lm.sample_continuation((), x, tau, rng)
        out.append(
            Hypothesis(
                tokens=cont.tokens,
                lm_logprob=cont.logprob,
                reward=None,
                tau=tau,
                token_logprobs=cont.token_logprobs,
                eos_logprob=cont.eos_logprob,
            )
        )
    return out


def run_parallel_chains(
    lm: LanguageModel,
    x,
    target: GibbsTarget,
    spec: ProposalSpec,
    config: ChainConfig,
    seeds,
    jobs: int = 1,
    on_error: str = "raise",
):
    """Run one independent chain per seed; results are in seed order.

    Each chain owns its random stream, so traces are identical for any
    worker count. ``on_error="keep"`` leaves the exception object in the
    failed chain's slot instead of raising, isolating per-chain failures.
    """
    from concurrent.futures import ThreadPoolExecutor

    seeds = list(seeds)
    configs = [replace(config, seed=int(s)) for s in seeds]

    def one(cfg):
        return run_chain(lm, x, target, spec, cfg)

    if jobs <= 1:
        results = []
        for cfg in configs:
            try:
                results.append(one(cfg))
            except Exception as exc:
                if on_error == "raise":
                    raise
                results.append(exc)
        return results

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(one, cfg) for cfg in configs]
        results = []
        for fut in futures:
            exc = fut.exception()
            if exc is None:
                results.append(fut.result())
            elif on_error == "raise":
                raise exc
            else:
                results.append(exc)
    return results
