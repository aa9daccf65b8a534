"""Sequence-level reward functions defining the Gibbs energy.

A reward is any callable ``r(x, y) -> float`` taking a prompt and a token
sequence and returning a finite, deterministic score. Bounded scores in
[0, 1] are mapped to the real line through a clamped logit; the clamp
bound defaults to 1e-2 everywhere in this package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

DEFAULT_CLAMP_EPS = 1e-2


class RewardError(ValueError):
    """Invalid input to a reward function."""


def logit_clamp(s: float, eps: float = DEFAULT_CLAMP_EPS) -> float:
    """logit(clamp(s)) with clamp(s) = max(eps, min(s, 1 - eps)).

    Monotone non-decreasing in s and bounded in [logit(eps), logit(1-eps)].
    """
    if not 0.0 < eps < 0.5:
        raise RewardError(f"eps must be in (0, 0.5), got {eps}")
    if not 0.0 <= s <= 1.0:
        raise RewardError(f"score {s} outside [0, 1]")
    c = min(max(s, eps), 1.0 - eps)
    return math.log(c / (1.0 - c))


@dataclass(frozen=True)
class ConstantReward:
    """Same score for every sequence; degenerate case used in tests."""

    value: float = 0.0

    def __call__(self, x, y) -> float:
        return self.value


@dataclass(frozen=True)
class LengthGaussianReward:
    """Clamped logit of a Gaussian density evaluated at the sequence length.

    Depends on y only through |y|. The density is computed in log space and
    exponentiated just for the clamp comparison, so far-from-mean lengths
    underflow to the clamp floor instead of to -inf.
    """

    mu: float = 7.5
    sigma: float = 3.75
    clamp_eps: float = DEFAULT_CLAMP_EPS

    def __post_init__(self):
        if self.sigma <= 0:
            raise RewardError("sigma must be positive")
        if not 0.0 < self.clamp_eps < 0.5:
            raise RewardError("clamp_eps must be in (0, 0.5)")

    def __call__(self, x, y) -> float:
        n = len(y)
        log_pdf = -0.5 * ((n - self.mu) / self.sigma) ** 2 - math.log(self.sigma * math.sqrt(2.0 * math.pi))
        return logit_clamp(min(math.exp(log_pdf), 1.0), self.clamp_eps)


@dataclass(frozen=True)
class KLRegularizedReward:
    """Composite reward log p_LM(y|x) + r(x, y) / beta.

    A Gibbs distribution at temperature 1 over this composite equals the
    model distribution tilted by exp(r / beta), the closed-form optimum of
    KL-constrained reward maximization. The model term is scored at the
    construction temperature (1 by default).
    """

    lm: object
    base: object
    beta: float
    lm_tau: float = 1.0

    def __post_init__(self):
        if self.beta <= 0:
            raise RewardError("beta must be positive")

    def __call__(self, x, y) -> float:
        return self.lm.sequence_logprob(y, x, self.lm_tau) + self.base(x, y) / self.beta
