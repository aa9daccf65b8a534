"""Autoregressive language models over a finite vocabulary.

A model assigns conditional next-token distributions over the vocabulary
(including a reserved EOS symbol) given a prefix and an optional prompt.
Sequences themselves never store EOS; termination is implicit and every
sequence logprob includes the final EOS term. At the hard length cap
``max_len`` every backend emits EOS with probability one, which makes the
distribution over sequences proper and exactly enumerable.

Backends:

* :class:`TabularLM` - dense prefix-indexed conditional table (the exact,
  enumerable backend used for verification; hot paths are JIT kernels).
* :class:`NgramLM` / :func:`fit_ngram` - additive-smoothed n-gram model.
* :class:`RemoteLM` (in :mod:`gibbslm.remote`) - HTTP client for a
  sampling server.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._kernels import (
    anneal_row,
    draw_from_row,
    score_token,
    tabular_walk_sample,
    tabular_walk_score,
)

Tokens = tuple[int, ...]

MAX_TABLE_ROWS = 10**7


class LMError(ValueError):
    """Invalid input to a language-model operation."""


class UnsupportedOperation(RuntimeError):
    """The backend cannot perform this operation (e.g. remote distributions)."""


@dataclass(frozen=True)
class Vocab:
    """Ordered token inventory with one reserved EOS symbol."""

    symbols: tuple[str, ...]
    eos_id: int

    def __post_init__(self):
        if len(self.symbols) < 2:
            raise LMError("vocab needs at least one content token plus EOS")
        if len(set(self.symbols)) != len(self.symbols):
            raise LMError("vocab symbols must be unique")
        if not 0 <= self.eos_id < len(self.symbols):
            raise LMError(f"eos_id {self.eos_id} out of range")

    @classmethod
    def of(cls, content_symbols, eos_symbol="</s>"):
        """Vocab from content symbols, appending the EOS symbol last."""
        symbols = tuple(content_symbols) + (eos_symbol,)
        return cls(symbols=symbols, eos_id=len(symbols) - 1)

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def content_ids(self) -> Tokens:
        return tuple(i for i in range(self.size) if i != self.eos_id)

    @property
    def n_content(self) -> int:
        return self.size - 1

    def content_rank(self) -> np.ndarray:
        """token id -> dense rank among content tokens (-1 for EOS)."""
        rank = np.full(self.size, -1, dtype=np.int64)
        for r, t in enumerate(self.content_ids):
            rank[t] = r
        return rank

    def check_sequence(self, tokens) -> Tokens:
        tokens = tuple(int(t) for t in tokens)
        for t in tokens:
            if not 0 <= t < self.size or t == self.eos_id:
                raise LMError(f"token id {t} is not a content token of this vocab")
        return tokens

    def to_string(self, tokens) -> str:
        return " ".join(self.symbols[t] for t in tokens)

    def encode(self, symbols) -> Tokens:
        index = {s: i for i, s in enumerate(self.symbols)}
        try:
            ids = tuple(index[s] for s in symbols)
        except KeyError as exc:
            raise LMError(f"unknown symbol {exc.args[0]!r}") from None
        return self.check_sequence(ids)


@dataclass(frozen=True)
class Continuation:
    """A sampled suffix with per-token logprobs at the sampling temperature.

    ``logprob`` includes the terminating EOS term, so it is the full
    conditional logprob of "emit these tokens, then stop".
    """

    tokens: Tokens
    token_logprobs: tuple[float, ...]
    eos_logprob: float

    @property
    def logprob(self) -> float:
        return float(sum(self.token_logprobs) + self.eos_logprob)


class LanguageModel:
    """Base class. Subclasses implement :meth:`base_row`.

    Distributions are handled in probability space per row and in log space
    along sequences. All sampling draws uniforms from the caller-supplied
    ``numpy.random.Generator``; a continuation from a prefix of length k
    consumes exactly ``max_len - k`` uniforms regardless of where EOS lands,
    so random streams stay aligned across implementations.
    """

    vocab: Vocab
    max_len: int

    def __init__(self, vocab: Vocab, max_len: int):
        if max_len < 1:
            raise LMError("max_len must be >= 1")
        self.vocab = vocab
        self.max_len = max_len

    def base_row(self, prefix: Tokens, prompt=()) -> np.ndarray:
        """Unannealed next-token probabilities for ``|prefix| < max_len``."""
        raise NotImplementedError

    def _prep(self, prefix, prompt) -> Tokens:
        prefix = self.vocab.check_sequence(prefix)
        if len(prefix) > self.max_len:
            raise LMError(f"prefix length {len(prefix)} exceeds max_len {self.max_len}")
        return prefix

    def next_token_distribution(self, prefix, prompt=(), tau: float = 1.0) -> np.ndarray:
        """Temperature-annealed next-token distribution (sums to one).

        At ``|prefix| == max_len`` the model emits EOS with probability one.
        """
        if tau <= 0:
            raise LMError("tau must be positive")
        prefix = self._prep(prefix, prompt)
        if len(prefix) == self.max_len:
            row = np.zeros(self.vocab.size)
            row[self.vocab.eos_id] = 1.0
            return row
        return anneal_row(self.base_row(prefix, prompt), 1.0 / tau)

    def sample_continuation(self, prefix, prompt=(), tau: float = 1.0, rng=None) -> Continuation:
        """Sample token-by-token until EOS or the length cap."""
        if tau <= 0:
            raise LMError("tau must be positive")
        prefix = self._prep(prefix, prompt)
        us = rng.random(self.max_len - len(prefix))
        inv_tau = 1.0 / tau
        eos = self.vocab.eos_id
        ctx = prefix
        toks: list[int] = []
        lps: list[float] = []
        eos_lp = 0.0
        for j in range(us.shape[0]):
            tok, lp = draw_from_row(self.base_row(ctx, prompt), inv_tau, us[j])
            if tok == eos:
                eos_lp = float(lp)
                break
            toks.append(int(tok))
            lps.append(float(lp))
            ctx = ctx + (int(tok),)
        return Continuation(tuple(toks), tuple(lps), eos_lp)

    def continuation_logprob(self, prefix, suffix, prompt=(), tau: float = 1.0) -> float:
        """log p(suffix then EOS | prefix, prompt) at temperature tau."""
        if tau <= 0:
            raise LMError("tau must be positive")
        prefix = self._prep(prefix, prompt)
        suffix = self.vocab.check_sequence(suffix)
        if len(prefix) + len(suffix) > self.max_len:
            raise LMError("prefix + suffix exceeds max_len")
        inv_tau = 1.0 / tau
        ctx = prefix
        total = 0.0
        for t in suffix:
            total += float(score_token(self.base_row(ctx, prompt), inv_tau, t))
            ctx = ctx + (t,)
        if len(ctx) < self.max_len:
            total += float(score_token(self.base_row(ctx, prompt), inv_tau, self.vocab.eos_id))
        return total

    def sequence_logprob(self, tokens, prompt=(), tau: float = 1.0) -> float:
        """Full logprob of a sequence including the terminating EOS term."""
        return self.continuation_logprob((), tokens, prompt, tau)


def n_prefix_codes(n_content: int, max_len: int) -> int:
    """Number of sequences of length < max_len over the content alphabet."""
    if n_content == 1:
        return max_len
    return (n_content**max_len - 1) // (n_content - 1)


def prefix_code(tokens: Tokens, rank_of: np.ndarray, n_content: int) -> int:
    """Shortlex index of a sequence: empty -> 0, s + t -> code(s)*K + rank(t) + 1."""
    code = 0
    for t in tokens:
        code = code * n_content + int(rank_of[t]) + 1
    return code


class TabularLM(LanguageModel):
    """Exact model backed by a dense table of conditionals per prefix.

    Row ``i`` of the table is the next-token distribution for the prefix
    whose shortlex code is ``i``; prefixes of length ``max_len`` are not
    stored (EOS is forced there). Prompts are not supported: the table is
    unconditional by construction.
    """

    def __init__(self, vocab: Vocab, max_len: int, table: np.ndarray):
        super().__init__(vocab, max_len)
        n_rows = n_prefix_codes(vocab.n_content, max_len)
        if n_rows > MAX_TABLE_ROWS:
            raise LMError(f"table would need {n_rows} rows (limit {MAX_TABLE_ROWS})")
        table = np.ascontiguousarray(table, dtype=np.float64)
        if table.shape != (n_rows, vocab.size):
            raise LMError(f"table shape {table.shape} != ({n_rows}, {vocab.size})")
        if np.any(table < 0) or np.any(np.abs(table.sum(axis=1) - 1.0) > 1e-9):
            raise LMError("table rows must be probability distributions")
        self.table = table
        self._rank = vocab.content_rank()

    @classmethod
    def random(
        cls,
        vocab: Vocab,
        max_len: int,
        rng,
        concentration: float = 1.0,
        eos_concentration: float | None = None,
    ) -> "TabularLM":
        """Independent Dirichlet rows; every context gives EOS some mass.

        ``eos_concentration`` sets the EOS pseudo-count separately, which
        controls the model's length bias (lower means longer sequences).
        """
        n_rows = n_prefix_codes(vocab.n_content, max_len)
        if n_rows > MAX_TABLE_ROWS:
            raise LMError(f"table would need {n_rows} rows (limit {MAX_TABLE_ROWS})")
        alpha = np.full(vocab.size, concentration)
        if eos_concentration is not None:
            alpha[vocab.eos_id] = eos_concentration
        table = rng.dirichlet(alpha, size=n_rows)
        return cls(vocab, max_len, table)

    @classmethod
    def deterministic(cls, vocab: Vocab, max_len: int, path) -> "TabularLM":
        """All probability mass on one path, then EOS (off-path contexts -> EOS)."""
        path = vocab.check_sequence(path)
        if len(path) > max_len:
            raise LMError("path longer than max_len")
        n_rows = n_prefix_codes(vocab.n_content, max_len)
        table = np.zeros((n_rows, vocab.size))
        table[:, vocab.eos_id] = 1.0
        rank = vocab.content_rank()
        code = 0
        for t in path:
            table[code] = 0.0
            table[code, t] = 1.0
            code = code * vocab.n_content + int(rank[t]) + 1
        return cls(vocab, max_len, table)

    def code(self, prefix: Tokens) -> int:
        return prefix_code(prefix, self._rank, self.vocab.n_content)

    def base_row(self, prefix: Tokens, prompt=()) -> np.ndarray:
        if prompt:
            raise LMError("tabular backend is unconditional; prompt must be empty")
        return self.table[self.code(prefix)]

    def sample_continuation(self, prefix, prompt=(), tau: float = 1.0, rng=None) -> Continuation:
        if tau <= 0:
            raise LMError("tau must be positive")
        if prompt:
            raise LMError("tabular backend is unconditional; prompt must be empty")
        prefix = self._prep(prefix, prompt)
        us = rng.random(self.max_len - len(prefix))
        out_t = np.empty(us.shape[0], dtype=np.int64)
        out_lp = np.empty(us.shape[0], dtype=np.float64)
        count, eos_lp = tabular_walk_sample(
            self.table,
            self.vocab.n_content,
            self.vocab.eos_id,
            self._rank,
            self.code(prefix),
            1.0 / tau,
            us,
            out_t,
            out_lp,
        )
        return Continuation(
            tuple(int(t) for t in out_t[:count]),
            tuple(float(v) for v in out_lp[:count]),
            float(eos_lp),
        )

    def continuation_logprob(self, prefix, suffix, prompt=(), tau: float = 1.0) -> float:
        if tau <= 0:
            raise LMError("tau must be positive")
        if prompt:
            raise LMError("tabular backend is unconditional; prompt must be empty")
        prefix = self._prep(prefix, prompt)
        suffix = self.vocab.check_sequence(suffix)
        if len(prefix) + len(suffix) > self.max_len:
            raise LMError("prefix + suffix exceeds max_len")
        return float(
            tabular_walk_score(
                self.table,
                self.vocab.n_content,
                self.vocab.eos_id,
                self._rank,
                self.code(prefix),
                len(prefix),
                self.max_len,
                1.0 / tau,
                np.asarray(suffix, dtype=np.int64),
            )
        )


class NgramLM(LanguageModel):
    """Additive-smoothed n-gram model over the last ``order - 1`` tokens.

    Contexts shorter than ``order - 1`` (near the sequence start) are used
    as-is, so all conditionals normalize by construction. Prompt tokens
    extend the conditioning context but are never scored themselves.
    """

    def __init__(self, vocab: Vocab, order: int, max_len: int, counts: dict[Tokens, np.ndarray], smoothing: float):
        super().__init__(vocab, max_len)
        self.order = order
        self.smoothing = smoothing
        self._rows: dict[Tokens, np.ndarray] = {}
        v = vocab.size
        for ctx, c in counts.items():
            self._rows[ctx] = (c + smoothing) / (c.sum() + smoothing * v)
        self._uniform = np.full(v, 1.0 / v)

    def _context(self, prefix: Tokens, prompt) -> Tokens:
        full = tuple(prompt) + tuple(prefix)
        k = self.order - 1
        return full[-k:] if k > 0 else ()

    def base_row(self, prefix: Tokens, prompt=()) -> np.ndarray:
        return self._rows.get(self._context(prefix, prompt), self._uniform)


def fit_ngram(corpus, order: int, smoothing: float, vocab: Vocab, max_len: int | None = None) -> NgramLM:
    """Fit an additive-smoothed n-gram model on a list of token sequences.

    Each sequence contributes one EOS event at its end. ``max_len`` defaults
    to twice the longest training sequence (at least 1).
    """
    if order < 1:
        raise LMError("order must be >= 1")
    if smoothing <= 0:
        raise LMError("smoothing must be > 0")
    corpus = [vocab.check_sequence(seq) for seq in corpus]
    if not corpus:
        raise LMError("empty corpus")
    if max_len is None:
        max_len = max(1, 2 * max(len(s) for s in corpus))
    counts: dict[Tokens, np.ndarray] = {}
    k = order - 1
    for seq in corpus:
        events = list(seq) + [vocab.eos_id]
        for j, tok in enumerate(events):
            ctx = tuple(seq[max(0, j - k) : j]) if k > 0 else ()
            row = counts.get(ctx)
            if row is None:
                row = counts[ctx] = np.zeros(vocab.size)
            row[tok] += 1.0
    return NgramLM(vocab, order, max_len, counts, smoothing)


def load_corpus(path, eos_symbol: str = "</s>") -> tuple[Vocab, list[Tokens]]:
    """Read a newline-delimited, whitespace-tokenized corpus file.

    Returns the vocabulary (content tokens in first-appearance order plus
    the reserved EOS symbol) and the encoded sequences.
    """
    lines = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                lines.append(line.split())
    symbols: list[str] = []
    seen = set()
    for toks in lines:
        for t in toks:
            if t == eos_symbol:
                raise LMError(f"corpus contains the reserved EOS symbol {eos_symbol!r}")
            if t not in seen:
                seen.add(t)
                symbols.append(t)
    if not symbols:
        raise LMError("empty corpus")
    vocab = Vocab.of(symbols, eos_symbol)
    return vocab, [vocab.encode(toks) for toks in lines]
