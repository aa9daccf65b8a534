"""Evaluation quantities over hypothesis sets and chain traces.

Sentence BLEU here is sentence-level 4-gram BLEU with the multiplicative
"exp" smoothing family: the k-th n-gram order with zero matches (counting
only orders that have zero matches) receives precision 1 / (2^k * total_n),
where total_n is the number of hypothesis n-grams of that order. Orders the
hypothesis is too short to realize are dropped from the geometric mean, and
the brevity penalty is exp(1 - |ref| / |hyp|) when the hypothesis is the
shorter side. Diversity numbers are therefore comparable only within this
implementation (smoothing conventions differ across BLEU tools).
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .engine import ChainTrace
from .lm import Tokens

BLEU_MAX_ORDER = 4


class MetricsError(ValueError):
    """Invalid input to a metric."""


@dataclass(frozen=True)
class HypothesisSet:
    """Hypotheses generated for one prompt, with an optional reference."""

    prompt: object
    hypotheses: tuple[Tokens, ...]
    reference: Tokens | None = None

    def __post_init__(self):
        if not self.hypotheses:
            raise MetricsError("hypothesis set cannot be empty")
        object.__setattr__(self, "hypotheses", tuple(tuple(h) for h in self.hypotheses))


@dataclass
class RunReport:
    """Summary of one experiment run; serializes to JSON via ``to_dict``."""

    mean_quality: float
    mean_diversity: float | None
    acceptance_rate: float
    unique_accepted: int
    reward_trajectory: list[tuple[int, float, float]]
    index_histogram: list[int]
    repeats_histogram: dict[int, int]
    token_cost: int

    def to_dict(self) -> dict:
        return {
            "mean_quality": self.mean_quality,
            "mean_diversity": self.mean_diversity,
            "acceptance_rate": self.acceptance_rate,
            "unique_accepted": self.unique_accepted,
            "reward_trajectory": [[s, m, d] for s, m, d in self.reward_trajectory],
            "index_histogram": list(self.index_histogram),
            "repeats_histogram": {str(k): v for k, v in sorted(self.repeats_histogram.items())},
            "token_cost": self.token_cost,
        }


def mean_quality(dataset, scorer) -> float:
    """Macro average over examples of the mean score within each set."""
    dataset = list(dataset)
    if not dataset:
        raise MetricsError("empty dataset")
    per_set = []
    for hs in dataset:
        scores = [scorer(hs.prompt, y) for y in hs.hypotheses]
        per_set.append(sum(scores) / len(scores))
    return float(sum(per_set) / len(per_set))


def _ngram_counts(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[j : j + n]) for j in range(len(tokens) - n + 1))


def sentence_bleu(y: Tokens, y_ref: Tokens) -> float:
    """Smoothed sentence-level BLEU in [0, 1] (see module docstring)."""
    y, y_ref = tuple(y), tuple(y_ref)
    if not y or not y_ref:
        raise MetricsError("BLEU is undefined for empty sequences")
    log_precisions = []
    smooth = 1.0
    for n in range(1, BLEU_MAX_ORDER + 1):
        total = len(y) - n + 1
        if total <= 0:
            break
        hyp = _ngram_counts(y, n)
        ref = _ngram_counts(y_ref, n)
        correct = sum(min(c, ref.get(g, 0)) for g, c in hyp.items())
        if correct == 0:
            smooth *= 2.0
            log_precisions.append(math.log(1.0 / (smooth * total)))
        else:
            log_precisions.append(math.log(correct / total))
    bp = 1.0 if len(y) >= len(y_ref) else math.exp(1.0 - len(y_ref) / len(y))
    return bp * math.exp(sum(log_precisions) / len(log_precisions))


def pairwise_bleu_diversity(dataset) -> float:
    """One minus the macro-averaged mean BLEU over ordered hypothesis pairs.

    Pairs range over distinct positions, so duplicated hypotheses push
    diversity toward zero; every set needs at least two hypotheses.
    """
    dataset = list(dataset)
    if not dataset:
        raise MetricsError("empty dataset")
    per_set = []
    for hs in dataset:
        hyps = hs.hypotheses
        m = len(hyps)
        if m < 2:
            raise MetricsError("diversity needs at least two hypotheses per set")
        total = 0.0
        for a in range(m):
            for b in range(m):
                if a != b:
                    total += sentence_bleu(hyps[a], hyps[b])
        per_set.append(total / (m * (m - 1)))
    return 1.0 - float(sum(per_set) / len(per_set))


def set_overlap(a: HypothesisSet, b: HypothesisSet) -> float:
    """Fraction of the distinct sequences in `a` that also occur in `b`.

    Directional on purpose: it measures containment of `a` in `b`.
    """
    distinct = set(a.hypotheses)
    pool = set(b.hypotheses)
    return len(distinct & pool) / len(distinct)


def reward_trajectory(traces) -> list[tuple[int, float, float]]:
    """Per-step (step, mean, std) of canonical-chain rewards across traces."""
    traces = list(traces)
    if not traces:
        raise MetricsError("no traces")
    lengths = {len(t.steps) for t in traces}
    if len(lengths) != 1:
        raise MetricsError(f"traces disagree on step count: {sorted(lengths)}")
    rewards = np.asarray([t.canonical_rewards() for t in traces], dtype=np.float64)
    means = rewards.mean(axis=0)
    stds = rewards.std(axis=0)
    return [(s, float(means[s]), float(stds[s])) for s in range(rewards.shape[1])]


def acceptance_stats(trace: ChainTrace) -> dict:
    """Acceptance rate plus multiplicity structure of the accepted samples."""
    if not trace.steps:
        raise MetricsError("empty trace")
    accepted = [s.state for s in trace.steps if s.accepted]
    multiplicity = Counter(accepted)
    repeats = Counter(multiplicity.values())
    return {
        "acceptance_rate": len(accepted) / len(trace.steps),
        "accepted_count": len(accepted),
        "unique_accepted": len(multiplicity),
        "repeats_histogram": dict(sorted(repeats.items())),
    }


def accepted_index_histogram(traces, n_buckets: int) -> list[int]:
    """Bucket accepted relative positions i / n^t over (0, 1].

    Buckets are right-closed: bucket j covers (j/B, (j+1)/B]. A full
    regeneration from the empty state counts as relative position 1.
    """
    if n_buckets < 1:
        raise MetricsError("n_buckets must be >= 1")
    counts = [0] * n_buckets
    for trace in traces:
        prev_len = len(trace.initial.tokens)
        for s in trace.steps:
            if s.accepted:
                rel = s.index / prev_len if prev_len > 0 else 1.0
                counts[max(0, math.ceil(rel * n_buckets) - 1)] += 1
            prev_len = len(s.state)
    return counts


def token_cost(trace: ChainTrace) -> int:
    """Total content tokens generated: initial sample plus every proposal."""
    return trace.tokens_generated()


def build_run_report(traces, scorer, n_index_buckets: int = 10) -> RunReport:
    """Aggregate a set of chains from one run into a RunReport."""
    traces = list(traces)
    sets = [HypothesisSet(prompt=t.meta.get("prompt", ""), hypotheses=tuple(t.accepted_states())) for t in traces]
    quality = mean_quality(sets, scorer)
    try:
        diversity = pairwise_bleu_diversity(
            [HypothesisSet(prompt=s.prompt, hypotheses=tuple(h for h in s.hypotheses if h)) for s in sets]
        )
    except MetricsError:
        diversity = None
    stats = [acceptance_stats(t) for t in traces]
    repeats: Counter = Counter()
    for st in stats:
        repeats.update(st["repeats_histogram"])
    return RunReport(
        mean_quality=quality,
        mean_diversity=diversity,
        acceptance_rate=float(np.mean([st["acceptance_rate"] for st in stats])),
        unique_accepted=int(sum(st["unique_accepted"] for st in stats)),
        reward_trajectory=reward_trajectory(traces),
        index_histogram=accepted_index_histogram(traces, n_index_buckets),
        repeats_histogram=dict(repeats),
        token_cost=int(sum(token_cost(t) for t in traces)),
    )
