"""Experiment configuration: YAML schema, validation and object building.

The file is a nested mapping with sections ``lm``, ``reward``, ``target``,
``proposal``, ``chain``, ``baselines``, ``compare`` and ``output_dir``.
Validation runs before any work starts and errors name the offending key
(e.g. ``target.beta``). Shipped defaults carry the standard sweep grids:
ancestral temperatures 0.2..1.0 in steps of 0.1, Gibbs temperatures
{0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0} and a 128-step budget.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, field

import numpy as np
import yaml

from .engine import KL_REGULARIZED, TARGET_VARIANTS, ChainConfig, GibbsTarget
from .lm import LMError, TabularLM, Vocab, fit_ngram, load_corpus
from .proposal import PROPOSAL_KINDS, SUFFIX_RESAMPLE, IndexDistribution, ProposalSpec
from .reward import ConstantReward, LengthGaussianReward

LM_ENDPOINT_ENV = "GIBBSLM_LM_ENDPOINT"
SCORER_ENDPOINT_ENV = "GIBBSLM_SCORER_ENDPOINT"

DEFAULT_ANCESTRAL_TAUS = tuple(round(0.2 + 0.1 * k, 1) for k in range(9))  # 0.2 .. 1.0
DEFAULT_BETA_GRID = (0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0)
DEFAULT_STEPS = 128


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending key."""


def _req(section: dict, key: str, path: str):
    if key not in section:
        raise ConfigError(f"{path}.{key}: missing required key")
    return section[key]


def _positive(value, path: str) -> float:
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a number, got {value!r}") from None
    if value <= 0:
        raise ConfigError(f"{path}: must be > 0 (got {value})")
    return value


def _positive_int(value, path: str) -> int:
    try:
        ivalue = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected an integer, got {value!r}") from None
    if ivalue < 1:
        raise ConfigError(f"{path}: must be >= 1 (got {ivalue})")
    return ivalue


@dataclass(frozen=True)
class LMSpec:
    backend: str = "tabular"
    content_tokens: tuple[str, ...] = ("a", "b", "c")
    eos_token: str = "</s>"
    max_len: int = 5
    seed: int = 12345
    concentration: float = 1.0
    corpus_path: str | None = None
    order: int = 2
    smoothing: float = 0.1
    endpoint: str | None = None
    timeout: float = 30.0
    retries: int = 2


@dataclass(frozen=True)
class RewardSpec:
    kind: str = "length_gaussian"
    mu: float = 7.5
    sigma: float = 3.75
    clamp_eps: float = 1e-2
    value: float = 0.0
    endpoint: str | None = None


@dataclass(frozen=True)
class TargetSpec:
    beta: float = 0.5
    variant: str = "plain"


@dataclass(frozen=True)
class ProposalSection:
    kind: str = SUFFIX_RESAMPLE
    tau: float = 1.0
    top_k: int = 4
    index_weights: tuple[float, ...] | None = None


@dataclass(frozen=True)
class ChainSection:
    steps: int = DEFAULT_STEPS
    burn_in: int = 0
    n_chains: int = 1
    seed: int = 0
    record_rejected: bool = True


@dataclass(frozen=True)
class BaselineSection:
    ancestral_samples: int = 128
    temperatures: tuple[float, ...] = DEFAULT_ANCESTRAL_TAUS
    resample_count: int = 128


@dataclass(frozen=True)
class CompareSection:
    n_proposals: int = 25000
    n_index_buckets: int = 10


@dataclass(frozen=True)
class ExperimentConfig:
    lm: LMSpec = field(default_factory=LMSpec)
    reward: RewardSpec = field(default_factory=RewardSpec)
    target: TargetSpec = field(default_factory=TargetSpec)
    proposal: ProposalSection = field(default_factory=ProposalSection)
    chain: ChainSection = field(default_factory=ChainSection)
    baselines: BaselineSection = field(default_factory=BaselineSection)
    compare: CompareSection = field(default_factory=CompareSection)
    beta_grid: tuple[float, ...] = DEFAULT_BETA_GRID
    prompt: str = ""
    output_dir: str = "out"

    def to_dict(self) -> dict:
        return asdict(self)

    def chain_seeds(self) -> list[int]:
        return [self.chain.seed + k for k in range(self.chain.n_chains)]


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


def _build_section(cls, raw: dict, path: str, casts: dict):
    unknown = set(raw) - set(casts)
    if unknown:
        raise ConfigError(f"{path}.{sorted(unknown)[0]}: unknown key")
    kwargs = {}
    for key, value in raw.items():
        kwargs[key] = casts[key](value, f"{path}.{key}")
    return cls(**kwargs)


def _ident(value, path):
    return value


def _str(value, path):
    if not isinstance(value, str):
        raise ConfigError(f"{path}: expected a string")
    return value


def _bool(value, path):
    if not isinstance(value, bool):
        raise ConfigError(f"{path}: expected a boolean")
    return value


def _int(value, path):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}: expected an integer")
    return value


def _str_tuple(value, path):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{path}: expected a non-empty list of strings")
    return tuple(_str(v, path) for v in value)


def _float_tuple(value, path):
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError(f"{path}: expected a non-empty list of numbers")
    return tuple(_positive(v, path) for v in value)


def _opt_float_tuple(value, path):
    return None if value is None else _float_tuple(value, path)


def _nonneg_int(value, path):
    v = _int(value, path)
    if v < 0:
        raise ConfigError(f"{path}: must be >= 0 (got {v})")
    return v


def from_dict(raw: dict) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config: expected a mapping at the top level")
    known = {"lm", "reward", "target", "proposal", "chain", "baselines", "compare", "beta_grid", "prompt", "output_dir"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{sorted(unknown)[0]}: unknown top-level key")

    lm = _build_section(
        LMSpec,
        raw.get("lm", {}),
        "lm",
        {
            "backend": _str,
            "content_tokens": _str_tuple,
            "eos_token": _str,
            "max_len": _positive_int,
            "seed": _int,
            "concentration": _positive,
            "corpus_path": _ident,
            "order": _positive_int,
            "smoothing": _positive,
            "endpoint": _ident,
            "timeout": _positive,
            "retries": _nonneg_int,
        },
    )
    if lm.backend not in ("tabular", "ngram", "remote"):
        raise ConfigError(f"lm.backend: must be one of tabular/ngram/remote (got {lm.backend!r})")

    reward = _build_section(
        RewardSpec,
        raw.get("reward", {}),
        "reward",
        {
            "kind": _str,
            "mu": lambda v, p: float(v),
            "sigma": _positive,
            "clamp_eps": _positive,
            "value": lambda v, p: float(v),
            "endpoint": _ident,
        },
    )
    if reward.kind not in ("length_gaussian", "constant", "remote"):
        raise ConfigError(f"reward.kind: must be one of length_gaussian/constant/remote (got {reward.kind!r})")
    if not 0 < reward.clamp_eps < 0.5:
        raise ConfigError(f"reward.clamp_eps: must be in (0, 0.5) (got {reward.clamp_eps})")

    target = _build_section(
        TargetSpec,
        raw.get("target", {}),
        "target",
        {"beta": _positive, "variant": _str},
    )
    variant = target.variant.replace("-", "_")
    if variant not in TARGET_VARIANTS:
        raise ConfigError(f"target.variant: must be one of {'/'.join(TARGET_VARIANTS)} (got {target.variant!r})")
    target = TargetSpec(beta=target.beta, variant=variant)

    proposal = _build_section(
        ProposalSection,
        raw.get("proposal", {}),
        "proposal",
        {"kind": _str, "tau": _positive, "top_k": _positive_int, "index_weights": _opt_float_tuple},
    )
    kind = proposal.kind.replace("-", "_")
    if kind not in PROPOSAL_KINDS:
        raise ConfigError(f"proposal.kind: must be one of {'/'.join(PROPOSAL_KINDS)} (got {proposal.kind!r})")
    proposal = ProposalSection(kind=kind, tau=proposal.tau, top_k=proposal.top_k, index_weights=proposal.index_weights)

    chain = _build_section(
        ChainSection,
        raw.get("chain", {}),
        "chain",
        {
            "steps": _positive_int,
            "burn_in": _nonneg_int,
            "n_chains": _positive_int,
            "seed": _int,
            "record_rejected": _bool,
        },
    )
    if chain.burn_in >= chain.steps:
        raise ConfigError(f"chain.burn_in: must be < chain.steps (got {chain.burn_in} >= {chain.steps})")

    baselines = _build_section(
        BaselineSection,
        raw.get("baselines", {}),
        "baselines",
        {"ancestral_samples": _positive_int, "temperatures": _float_tuple, "resample_count": _positive_int},
    )
    compare = _build_section(
        CompareSection,
        raw.get("compare", {}),
        "compare",
        {"n_proposals": _positive_int, "n_index_buckets": _positive_int},
    )

    beta_grid = _float_tuple(raw.get("beta_grid", list(DEFAULT_BETA_GRID)), "beta_grid")
    prompt = _str(raw.get("prompt", ""), "prompt")
    output_dir = _str(raw.get("output_dir", "out"), "output_dir")

    if target.variant == KL_REGULARIZED and proposal.kind != SUFFIX_RESAMPLE:
        raise ConfigError("proposal.kind: the kl_regularized target requires suffix_resample")
    return ExperimentConfig(
        lm=lm,
        reward=reward,
        target=target,
        proposal=proposal,
        chain=chain,
        baselines=baselines,
        compare=compare,
        beta_grid=beta_grid,
        prompt=prompt,
        output_dir=output_dir,
    )


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config: file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: invalid YAML in {path}: {exc}") from None
    return from_dict(raw or {})


def build_vocab(cfg: ExperimentConfig) -> Vocab:
    return Vocab.of(cfg.lm.content_tokens, cfg.lm.eos_token)


def build_lm(cfg: ExperimentConfig):
    spec = cfg.lm
    if spec.backend == "tabular":
        vocab = build_vocab(cfg)
        rng = np.random.default_rng(spec.seed)
        try:
            return TabularLM.random(vocab, spec.max_len, rng, spec.concentration)
        except LMError as exc:
            raise ConfigError(f"lm: {exc}") from None
    if spec.backend == "ngram":
        if not spec.corpus_path:
            raise ConfigError("lm.corpus_path: required for the ngram backend")
        if not os.path.exists(spec.corpus_path):
            raise ConfigError(f"lm.corpus_path: no such file: {spec.corpus_path}")
        vocab, corpus = load_corpus(spec.corpus_path, spec.eos_token)
        return fit_ngram(corpus, spec.order, spec.smoothing, vocab, spec.max_len)
    endpoint = spec.endpoint or os.environ.get(LM_ENDPOINT_ENV)
    if not endpoint:
        raise ConfigError(f"lm.endpoint: required for the remote backend (or set {LM_ENDPOINT_ENV})")
    from .remote import RemoteLM

    return RemoteLM(build_vocab(cfg), endpoint, spec.max_len, timeout=spec.timeout, retries=spec.retries)


def build_reward(cfg: ExperimentConfig, lm):
    spec = cfg.reward
    if spec.kind == "length_gaussian":
        return LengthGaussianReward(mu=spec.mu, sigma=spec.sigma, clamp_eps=spec.clamp_eps)
    if spec.kind == "constant":
        return ConstantReward(spec.value)
    endpoint = spec.endpoint or os.environ.get(SCORER_ENDPOINT_ENV)
    if not endpoint:
        raise ConfigError(f"reward.endpoint: required for the remote scorer (or set {SCORER_ENDPOINT_ENV})")
    from .remote import RemoteScorer

    return RemoteScorer(endpoint, lm.vocab, clamp_eps=spec.clamp_eps)


def build_target(cfg: ExperimentConfig, reward) -> GibbsTarget:
    return GibbsTarget(reward=reward, beta=cfg.target.beta, variant=cfg.target.variant)


def build_proposal(cfg: ExperimentConfig) -> ProposalSpec:
    dist = IndexDistribution() if cfg.proposal.index_weights is None else IndexDistribution.custom(cfg.proposal.index_weights)
    return ProposalSpec(kind=cfg.proposal.kind, index_dist=dist, tau=cfg.proposal.tau, top_k=cfg.proposal.top_k)


def build_chain_config(cfg: ExperimentConfig, seed: int | None = None) -> ChainConfig:
    c = cfg.chain
    return ChainConfig(
        steps=c.steps,
        burn_in=c.burn_in,
        tau=cfg.proposal.tau,
        seed=c.seed if seed is None else seed,
        record_rejected=c.record_rejected,
    )
