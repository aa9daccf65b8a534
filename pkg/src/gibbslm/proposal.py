"""Proposal kernels for the Markov chain over token sequences.

The main kernel regenerates the suffix of the current state from a sampled
split index onward using the language model; two token-level baselines
(uniform replacement and a reward-weighted full conditional over a top-k
pool) are provided for ablation.

Index convention: positions are 1-based, ``i`` ranges over ``{1..n}`` for a
state of length n, and the kept prefix is everything strictly before
position ``i`` - so ``i = 1`` regenerates the whole sequence. From the
empty state the index is forced to 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import anneal_row
from .lm import Continuation, LanguageModel, LMError, Tokens, Vocab

SUFFIX_RESAMPLE = "suffix_resample"
TOKEN_UNIFORM = "token_uniform"
TOKEN_FULL_CONDITIONAL = "token_full_conditional"
PROPOSAL_KINDS = (SUFFIX_RESAMPLE, TOKEN_UNIFORM, TOKEN_FULL_CONDITIONAL)


class ProposalError(ValueError):
    """Invalid proposal configuration or input state."""


@dataclass(frozen=True)
class IndexDistribution:
    """Distribution over split positions ``{1..n}`` for any state length n.

    ``weights = None`` means uniform (probability 1/n each). Custom weights
    are truncated to the first n entries and renormalized, which supports
    shaping proposals away from late positions; the vector must cover every
    length that actually occurs.
    """

    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.weights is not None:
            w = tuple(float(v) for v in self.weights)
            if not w or any(v < 0 for v in w) or sum(w) <= 0:
                raise ProposalError("custom index weights must be non-negative with positive sum")
            object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls) -> "IndexDistribution":
        return cls()

    @classmethod
    def custom(cls, weights) -> "IndexDistribution":
        return cls(tuple(weights))

    def _front(self, n: int) -> np.ndarray:
        if len(self.weights) < n:
            raise ProposalError(f"index weights cover {len(self.weights)} positions, state has {n}")
        w = np.asarray(self.weights[:n], dtype=np.float64)
        total = w.sum()
        if total <= 0:
            raise ProposalError(f"index weights sum to zero over the first {n} positions")
        return w / total

    def log_prob(self, i: int, n: int) -> float:
        """log q(i | n); the empty state forces i = 1 with probability one."""
        if n == 0:
            return 0.0 if i == 1 else -math.inf
        if not 1 <= i <= n:
            return -math.inf
        if self.weights is None:
            return -math.log(n)
        p = self._front(n)[i - 1]
        return math.log(p) if p > 0 else -math.inf

    def sample(self, n: int, rng) -> int:
        """Draw an index; consumes one uniform unless the state is empty."""
        if n == 0:
            return 1
        u = rng.random()
        if self.weights is None:
            return min(int(u * n), n - 1) + 1
        c = np.cumsum(self._front(n))
        return min(int(np.searchsorted(c, u, side="right")), n - 1) + 1


@dataclass(frozen=True)
class ProposalSpec:
    """What kind of move to make and how."""

    kind: str = SUFFIX_RESAMPLE
    index_dist: IndexDistribution = field(default_factory=IndexDistribution)
    tau: float = 1.0
    top_k: int = 1

    def __post_init__(self):
        if self.kind not in PROPOSAL_KINDS:
            raise ProposalError(f"unknown proposal kind {self.kind!r}")
        if self.tau <= 0:
            raise ProposalError("tau must be positive")
        if self.kind == TOKEN_FULL_CONDITIONAL and self.top_k < 1:
            raise ProposalError("top_k must be >= 1")


@dataclass(frozen=True)
class ProposalOutcome:
    """One candidate move.

    ``forward_logprob``/``reverse_logprob`` are the move densities given the
    sampled index. For suffix moves these are the model logprobs of the new
    and old suffixes (the index-probability ratio enters the acceptance
    separately); ``reverse_logprob`` is -inf when the index cannot be drawn
    from the candidate, which forces rejection. Token-level moves fold the
    index term into both directions; lengths never change so it cancels.
    ``continuation`` carries the sampled suffix's per-token logprobs so the
    accepted state can cache them; ``tokens_generated`` counts the content
    tokens the model emitted for this move.
    """

    kind: str
    candidate: Tokens
    index: int
    forward_logprob: float
    reverse_logprob: float
    tokens_generated: int
    continuation: Continuation | None = None


def sample_index(dist: IndexDistribution, n: int, rng) -> int:
    """Draw a split position for a state of length n (1 if n == 0)."""
    if n < 0:
        raise ProposalError("state length cannot be negative")
    return dist.sample(n, rng)


def propose_suffix(
    lm: LanguageModel,
    y_t: Tokens,
    x,
    spec: ProposalSpec,
    rng,
    current_continuation_logprobs: tuple[tuple[float, ...], float] | None = None,
) -> ProposalOutcome:
    """Keep a prefix of the current state and regenerate the rest.

    The forward and reverse suffix densities are evaluated at the sampling
    temperature, so the acceptance ratio uses exactly the proposal density
    that generated the move. When the caller already holds the current
    state's per-token logprobs at this temperature (as the chain does),
    passing them as ``(token_logprobs, eos_logprob)`` avoids re-scoring.
    """
    if spec.kind != SUFFIX_RESAMPLE:
        raise ProposalError(f"expected a {SUFFIX_RESAMPLE} spec, got {spec.kind!r}")
    y_t = lm.vocab.check_sequence(y_t)
    n_t = len(y_t)
    i = sample_index(spec.index_dist, n_t, rng)
    prefix = y_t[: i - 1]
    cont = lm.sample_continuation(prefix, x, spec.tau, rng)
    candidate = prefix + cont.tokens
    if spec.index_dist.log_prob(i, len(candidate)) == -math.inf:
        reverse = -math.inf
    elif current_continuation_logprobs is not None:
        token_lps, eos_lp = current_continuation_logprobs
        reverse = float(sum(token_lps[i - 1 :]) + eos_lp)
    else:
        reverse = lm.continuation_logprob(prefix, y_t[i - 1 :], x, spec.tau)
    return ProposalOutcome(
        kind=SUFFIX_RESAMPLE,
        candidate=candidate,
        index=i,
        forward_logprob=cont.logprob,
        reverse_logprob=reverse,
        tokens_generated=len(cont.tokens),
        continuation=cont,
    )


def propose_token_uniform(y_t: Tokens, x, vocab: Vocab, rng) -> ProposalOutcome:
    """Replace one uniformly chosen position with a uniform content token.

    Symmetric by construction: forward and reverse logprobs both equal
    -log(n * K) for n positions and K content tokens (replacing a token
    with itself is allowed).
    """
    y_t = vocab.check_sequence(y_t)
    n = len(y_t)
    if n == 0:
        raise ProposalError("token-level proposals need a non-empty state")
    i = min(int(rng.random() * n), n - 1) + 1
    k = vocab.n_content
    tok = vocab.content_ids[min(int(rng.random() * k), k - 1)]
    candidate = y_t[: i - 1] + (tok,) + y_t[i:]
    lp = -math.log(n * k)
    return ProposalOutcome(
        kind=TOKEN_UNIFORM,
        candidate=candidate,
        index=i,
        forward_logprob=lp,
        reverse_logprob=lp,
        tokens_generated=1,
    )


def propose_token_full_conditional(
    lm: LanguageModel,
    reward,
    beta: float,
    y_t: Tokens,
    x,
    k: int,
    rng,
) -> ProposalOutcome:
    """Single-site move weighted by the unnormalized target over a top-k pool.

    The pool is the k most likely content tokens under the model's base
    distribution at the chosen position (ties broken by token id); each pool
    entry is weighted by exp(r(replaced sequence) / beta) and one is drawn
    from the renormalized table. Forward and reverse logprobs come from that
    same table; if the current token is outside the pool the reverse move is
    impossible and the outcome carries -inf.
    """
    if beta <= 0:
        raise ProposalError("beta must be positive")
    if k < 1:
        raise ProposalError("k must be >= 1")
    y_t = lm.vocab.check_sequence(y_t)
    n = len(y_t)
    if n == 0:
        raise ProposalError("token-level proposals need a non-empty state")
    i = min(int(rng.random() * n), n - 1) + 1
    prefix = y_t[: i - 1]
    row = anneal_row(lm.base_row(prefix, x), 1.0)
    content = np.asarray(lm.vocab.content_ids)
    probs = np.asarray([row[t] for t in content])
    order = np.lexsort((content, -probs))
    pool = [int(content[j]) for j in order[: min(k, content.shape[0])]]

    log_w = np.asarray(
        [reward(x, y_t[: i - 1] + (tok,) + y_t[i:]) / beta for tok in pool],
        dtype=np.float64,
    )
    log_w -= log_w.max()
    w = np.exp(log_w)
    total = w.sum()
    u = rng.random()
    c = np.cumsum(w)
    j = min(int(np.searchsorted(c, u * total, side="right")), len(pool) - 1)
    tok = pool[j]
    candidate = y_t[: i - 1] + (tok,) + y_t[i:]

    idx_lp = -math.log(n)
    forward = idx_lp + math.log(w[j] / total)
    old = y_t[i - 1]
    if old in pool:
        reverse = idx_lp + math.log(w[pool.index(old)] / total)
    else:
        reverse = -math.inf
    return ProposalOutcome(
        kind=TOKEN_FULL_CONDITIONAL,
        candidate=candidate,
        index=i,
        forward_logprob=forward,
        reverse_logprob=reverse,
        tokens_generated=1,
    )
