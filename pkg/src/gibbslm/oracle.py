"""Exact ground truth on small sequence spaces.

Everything here enumerates the full state space (all sequences up to the
model's length cap), which is the one place the partition function is ever
computed - the chain itself only ever sees density ratios. Used to verify
that the engine's transition law balances and that empirical chains
converge to the right distribution.
"""

from __future__ import annotations

import csv
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .engine import (
    KL_REGULARIZED,
    CachedReward,
    GibbsTarget,
    Hypothesis,
    acceptance_plain,
    acceptance_rlhf,
)
from .lm import LanguageModel, Tokens, Vocab
from .proposal import SUFFIX_RESAMPLE, TOKEN_UNIFORM, ProposalOutcome, ProposalSpec

ENUMERATION_GUARD = 10**7


class EnumerationGuardError(ValueError):
    """The requested state space is too large to enumerate exactly."""


def enumerate_sequences(vocab: Vocab, max_len: int) -> list[Tokens]:
    """All sequences of length 0..max_len over the content tokens.

    Shortlex order (by length, then lexicographic by content-token rank), so
    a sequence's position equals its dense prefix code and the listing is
    deterministic.
    """
    k = vocab.n_content
    total = max_len + 1 if k == 1 else (k ** (max_len + 1) - 1) // (k - 1)
    if total > ENUMERATION_GUARD:
        raise EnumerationGuardError(f"{total} states exceed the enumeration guard ({ENUMERATION_GUARD})")
    states: list[Tokens] = [()]
    level: list[Tokens] = [()]
    for _ in range(max_len):
        level = [s + (t,) for s in level for t in vocab.content_ids]
        states.extend(level)
    return states


@dataclass
class EnumeratedDistribution:
    """A fully enumerated target with its normalization."""

    states: list[Tokens]
    log_weights: np.ndarray
    log_z: float
    probabilities: np.ndarray

    def __post_init__(self):
        self._index = {s: i for i, s in enumerate(self.states)}

    def prob_of(self, tokens: Tokens) -> float:
        i = self._index.get(tuple(tokens))
        return float(self.probabilities[i]) if i is not None else 0.0

    def as_dict(self) -> dict[Tokens, float]:
        return {s: float(p) for s, p in zip(self.states, self.probabilities)}

    def to_csv(self, path, lm: LanguageModel, x, reward) -> None:
        from .fileio import atomic_writer

        with atomic_writer(path) as fh:
            writer = csv.writer(fh)
            writer.writerow(["sequence", "logprob_lm", "reward", "target_probability"])
            for s, p in zip(self.states, self.probabilities):
                writer.writerow(
                    [
                        lm.vocab.to_string(s),
                        repr(lm.sequence_logprob(s, x, 1.0)),
                        repr(float(reward(x, s))),
                        repr(float(p)),
                    ]
                )


def _log_weights(lm, x, target: GibbsTarget, states, lm_tau: float) -> np.ndarray:
    reward = CachedReward(target.reward, x)
    return np.asarray(
        [target.log_unnormalized(lm, x, s, reward_value=reward(x, s), lm_tau=lm_tau) for s in states],
        dtype=np.float64,
    )


def exact_target(lm: LanguageModel, x, target: GibbsTarget, max_len: int | None = None, lm_tau: float = 1.0) -> EnumeratedDistribution:
    """Enumerate the normalized target distribution.

    ``lm_tau`` only affects the kl_regularized variant, whose model factor
    is scored at that temperature (1 by default - the temperature the
    composite-reward definition uses).
    """
    if max_len is None:
        max_len = lm.max_len
    states = enumerate_sequences(lm.vocab, max_len)
    log_w = _log_weights(lm, x, target, states, lm_tau)
    # Log-sum-exp with max subtraction: small beta spreads weights over
    # hundreds of nats.
    m = float(log_w.max())
    log_z = m + math.log(float(np.exp(log_w - m).sum()))
    probs = np.exp(log_w - log_z)
    return EnumeratedDistribution(states=states, log_weights=log_w, log_z=log_z, probabilities=probs)


def _proposal_density(lm, x, spec: ProposalSpec, prefix: Tokens, suffix: Tokens) -> float:
    return lm.continuation_logprob(prefix, suffix, x, spec.tau)


@dataclass(frozen=True)
class BalanceReport:
    max_violation: float
    pairs_checked: int
    worst_pair: tuple


def detailed_balance_check(
    lm: LanguageModel,
    x,
    target: GibbsTarget,
    spec: ProposalSpec,
    max_len: int | None = None,
    tol: float = 1e-9,
    alpha_scale: float = 1.0,
) -> BalanceReport:
    """Verify pi(a) P_i(a->b) == pi(b) P_i(b->a) for every index component.

    The check runs per sampled index (matching how the engine actually
    transitions) over every ordered state pair sharing the prefix before
    that index, using the engine's own acceptance function. ``alpha_scale``
    multiplies every acceptance probability (clamped to 1) and exists as a
    negative control: any value != 1 must break the balance.
    """
    if max_len is None:
        max_len = lm.max_len
    if spec.kind not in (SUFFIX_RESAMPLE, TOKEN_UNIFORM):
        raise ValueError("balance check supports the suffix and token-uniform kernels")
    accept = acceptance_rlhf if target.variant == KL_REGULARIZED else acceptance_plain
    lm_tau = spec.tau if target.variant == KL_REGULARIZED else 1.0
    dist = exact_target(lm, x, target, max_len, lm_tau=lm_tau)
    states = dist.states
    reward = CachedReward(target.reward, x)

    def alpha(outcome, cur_tokens):
        cur = Hypothesis(tokens=cur_tokens, lm_logprob=0.0, reward=reward(x, cur_tokens))
        a = accept(outcome, cur, reward(x, outcome.candidate), target, spec.index_dist)
        return min(1.0, alpha_scale * a)

    max_violation = 0.0
    worst = ()
    pairs = 0

    if spec.kind == SUFFIX_RESAMPLE:

        def flow(a, b, i, suffix_lp):
            """pi(a) * q(i | |a|) * p(b's suffix | prefix) * alpha(b <- a)."""
            lq_idx = spec.index_dist.log_prob(i, len(a))
            if lq_idx == -math.inf:
                return 0.0
            rev_lp = suffix_lp[a] if spec.index_dist.log_prob(i, len(b)) != -math.inf else -math.inf
            outcome = ProposalOutcome(
                kind=SUFFIX_RESAMPLE,
                candidate=b,
                index=i,
                forward_logprob=suffix_lp[b],
                reverse_logprob=rev_lp,
                tokens_generated=0,
            )
            return dist.prob_of(a) * math.exp(lq_idx + suffix_lp[b]) * alpha(outcome, a)

        by_prefix: dict[tuple[int, Tokens], list[Tokens]] = {}
        for s in states:
            for i in range(1, max(len(s), 1) + 1):
                if spec.index_dist.log_prob(i, len(s)) != -math.inf:
                    by_prefix.setdefault((i, s[: i - 1]), []).append(s)
        for (i, prefix), sources in by_prefix.items():
            # Component i from this prefix can reach every extension of it.
            candidates = [s for s in states if s[: i - 1] == prefix]
            suffix_lp = {s: _proposal_density(lm, x, spec, prefix, s[i - 1 :]) for s in candidates}
            for a in sources:
                for b in candidates:
                    lhs = flow(a, b, i, suffix_lp)
                    rhs = flow(b, a, i, suffix_lp)
                    pairs += 1
                    v = abs(lhs - rhs)
                    if v > max_violation:
                        max_violation, worst = v, (a, b, i)
    else:

        def flow_tok(a, b, i):
            lp = -math.log(len(a) * lm.vocab.n_content)
            outcome = ProposalOutcome(
                kind=TOKEN_UNIFORM,
                candidate=b,
                index=i,
                forward_logprob=lp,
                reverse_logprob=lp,
                tokens_generated=0,
            )
            return dist.prob_of(a) * math.exp(spec.index_dist.log_prob(i, len(a)) + lp) * alpha(outcome, a)

        for a in states:
            for i in range(1, len(a) + 1):
                for t in lm.vocab.content_ids:
                    b = a[: i - 1] + (t,) + a[i:]
                    lhs = flow_tok(a, b, i)
                    rhs = flow_tok(b, a, i)
                    pairs += 1
                    v = abs(lhs - rhs)
                    if v > max_violation:
                        max_violation, worst = v, (a, b, i)
    return BalanceReport(max_violation=max_violation, pairs_checked=pairs, worst_pair=worst)


def stationary_identity_gap(
    lm: LanguageModel,
    x,
    target: GibbsTarget,
    spec: ProposalSpec,
    max_len: int | None = None,
) -> float:
    """max_y | sum_y' P(y | y') pi(y') - pi(y) | for the full mixed kernel."""
    if max_len is None:
        max_len = lm.max_len
    if spec.kind != SUFFIX_RESAMPLE:
        raise ValueError("stationarity check is implemented for the suffix kernel")
    accept = acceptance_rlhf if target.variant == KL_REGULARIZED else acceptance_plain
    lm_tau = spec.tau if target.variant == KL_REGULARIZED else 1.0
    dist = exact_target(lm, x, target, max_len, lm_tau=lm_tau)
    states = dist.states
    idx = {s: j for j, s in enumerate(states)}
    reward = CachedReward(target.reward, x)
    n = len(states)
    kernel = np.zeros((n, n))
    for a in states:
        ja = idx[a]
        row_mass = 0.0
        top = max(len(a), 1)
        for i in range(1, top + 1):
            lq = spec.index_dist.log_prob(i, len(a))
            if lq == -math.inf:
                continue
            prefix = a[: i - 1]
            for b in states:
                if b[: i - 1] != prefix:
                    continue
                fwd = _proposal_density(lm, x, spec, prefix, b[i - 1 :])
                rev = _proposal_density(lm, x, spec, prefix, a[i - 1 :])
                if spec.index_dist.log_prob(i, len(b)) == -math.inf:
                    rev = -math.inf
                outcome = ProposalOutcome(
                    kind=SUFFIX_RESAMPLE,
                    candidate=b,
                    index=i,
                    forward_logprob=fwd,
                    reverse_logprob=rev,
                    tokens_generated=0,
                )
                cur = Hypothesis(tokens=a, lm_logprob=0.0, reward=reward(x, a))
                alpha = accept(outcome, cur, reward(x, b), target, spec.index_dist)
                p = math.exp(lq + fwd) * alpha
                kernel[ja, idx[b]] += p
                row_mass += p
        kernel[ja, ja] += 1.0 - row_mass  # rejection keeps the state
    pi = dist.probabilities
    return float(np.max(np.abs(pi @ kernel - pi)))


def truncated_gibbs_resample(samples, target: GibbsTarget, x, rng, count: int, lm: LanguageModel | None = None):
    """Resample (with replacement) from the unique sampled states, weighted
    by the unnormalized target - the partition function estimated on the
    sampled support.
    """
    tokens = [s.tokens if isinstance(s, Hypothesis) else tuple(s) for s in samples]
    if not tokens:
        raise ValueError("empty sample set")
    unique = sorted(set(tokens))
    reward = CachedReward(target.reward, x)
    log_w = np.asarray(
        [target.log_unnormalized(lm, x, s, reward_value=reward(x, s)) for s in unique],
        dtype=np.float64,
    )
    log_w -= log_w.max()
    w = np.exp(log_w)
    w /= w.sum()
    picks = rng.choice(len(unique), size=count, replace=True, p=w)
    return [unique[j] for j in picks]


def _to_prob_map(obj) -> dict:
    if isinstance(obj, EnumeratedDistribution):
        return obj.as_dict()
    if isinstance(obj, (list, tuple)):
        obj = Counter(tuple(s) for s in obj)
    total = float(sum(obj.values()))
    if total <= 0:
        raise ValueError("empty distribution")
    return {s: float(v) / total for s, v in obj.items()}


def tv_distance(p, q) -> float:
    """Total variation distance: half the L1 gap over the union of supports.

    Accepts enumerated distributions, Counters/dicts of counts or weights
    keyed by any hashable state, or plain lists of sampled token sequences.
    States missing from one side count as probability zero.
    """
    pm, qm = _to_prob_map(p), _to_prob_map(q)
    keys = set(pm) | set(qm)
    return 0.5 * sum(abs(pm.get(s, 0.0) - qm.get(s, 0.0)) for s in keys)


def reward_distribution(dist: EnumeratedDistribution, reward, x=(), ndigits: int = 9) -> dict[float, float]:
    """Pushforward of an enumerated target onto reward values.

    This is the universe the toy-task comparison plots live in: states with
    equal reward merge, so modest sample counts resolve the distribution.
    """
    out: dict[float, float] = {}
    for s, p in zip(dist.states, dist.probabilities):
        key = round(float(reward(x, s)), ndigits)
        out[key] = out.get(key, 0.0) + float(p)
    return out


def reward_histogram(states, reward, x=(), ndigits: int = 9) -> Counter:
    """Empirical counterpart of :func:`reward_distribution`."""
    return Counter(round(float(reward(x, s)), ndigits) for s in states)
