"""Metropolis-Hastings sampling of token sequences from reward-induced
Gibbs distributions, with exact small-scale verification oracles."""

from .engine import (
    KL_REGULARIZED,
    PLAIN,
    ChainAborted,
    ChainConfig,
    ChainTrace,
    GibbsTarget,
    Hypothesis,
    StepRecord,
    acceptance_plain,
    acceptance_rlhf,
    ancestral_sample,
    run_chain,
    run_parallel_chains,
)
from .lm import (
    Continuation,
    LanguageModel,
    LMError,
    NgramLM,
    TabularLM,
    Tokens,
    UnsupportedOperation,
    Vocab,
    fit_ngram,
    load_corpus,
)
from .metrics import (
    HypothesisSet,
    RunReport,
    accepted_index_histogram,
    acceptance_stats,
    mean_quality,
    pairwise_bleu_diversity,
    reward_trajectory,
    sentence_bleu,
    set_overlap,
    token_cost,
)
from .oracle import (
    EnumeratedDistribution,
    EnumerationGuardError,
    detailed_balance_check,
    enumerate_sequences,
    exact_target,
    stationary_identity_gap,
    truncated_gibbs_resample,
    tv_distance,
)
from .proposal import (
    SUFFIX_RESAMPLE,
    TOKEN_FULL_CONDITIONAL,
    TOKEN_UNIFORM,
    IndexDistribution,
    ProposalOutcome,
    ProposalSpec,
    propose_suffix,
    propose_token_full_conditional,
    propose_token_uniform,
    sample_index,
)
from .reward import (
    ConstantReward,
    KLRegularizedReward,
    LengthGaussianReward,
    RewardError,
    logit_clamp,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
