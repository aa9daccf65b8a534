"""HTTP clients for a remote sampling server and a remote sequence scorer.

Wire contracts (JSON over POST):

* language model: request ``{prompt, prefix_tokens, temperature, max_tokens}``
  -> response ``{tokens, token_logprobs}`` where ``token_logprobs`` has one
  entry per returned token plus one trailing EOS logprob.
* scorer: request ``{source, hypothesis}`` -> response ``{score}`` with
  ``score`` in [0, 1].

Errors are distinguishable: :class:`RemoteTimeout` (deadline),
:class:`RemoteServerError` (5xx after retries / transport failure) and
:class:`RemoteContractError` (response violates the contract). Timeouts,
transport failures and 5xx are retried per the client's retry budget;
contract violations never are. Logprobs are never fabricated: anything the
server did not report makes the operation fail.
"""

from __future__ import annotations

import time

import httpx

from .lm import Continuation, LanguageModel, LMError, Tokens, UnsupportedOperation, Vocab


class RemoteError(RuntimeError):
    """Base class for remote-backend failures."""


class RemoteTimeout(RemoteError):
    """The server did not answer within the deadline (retriable)."""


class RemoteServerError(RemoteError):
    """Transport failure or 5xx status after exhausting retries."""


class RemoteContractError(RemoteError):
    """The response does not match the wire contract."""


def post_json(client: httpx.Client, url: str, payload: dict, retries: int, backoff: float) -> dict:
    """POST with retries on timeout / transport failure / 5xx."""
    last: Exception | None = None
    for attempt in range(retries + 1):
        try:
            resp = client.post(url, json=payload)
        except httpx.TimeoutException as exc:
            last = RemoteTimeout(f"timeout talking to {url}: {exc}")
        except httpx.HTTPError as exc:
            last = RemoteServerError(f"transport failure talking to {url}: {exc}")
        else:
            if resp.status_code >= 500:
                last = RemoteServerError(f"{url} returned {resp.status_code}")
            elif resp.status_code != 200:
                raise RemoteContractError(f"{url} returned {resp.status_code}: {resp.text[:200]}")
            else:
                try:
                    body = resp.json()
                except ValueError as exc:
                    raise RemoteContractError(f"non-JSON response from {url}: {exc}") from None
                if not isinstance(body, dict):
                    raise RemoteContractError(f"expected a JSON object from {url}")
                return body
        if attempt < retries and backoff > 0:
            time.sleep(backoff * (attempt + 1))
    raise last


class RemoteLM(LanguageModel):
    """Language model backed by a sampling server.

    The server owns the randomness, so the ``rng`` argument of
    :meth:`sample_continuation` is unused; reproducibility of remote runs
    is the server's responsibility. Per-token logprobs observed while
    sampling are cached per (prompt, context, temperature), which lets
    :meth:`sequence_logprob` score exactly those sequences assembled from
    this client's own samples; anything else raises rather than guessing.
    The logprobs are reported at whatever temperature semantics the server
    applies; the requested temperature is recorded alongside.
    """

    def __init__(
        self,
        vocab: Vocab,
        endpoint: str,
        max_len: int,
        timeout: float = 30.0,
        retries: int = 2,
        backoff: float = 0.0,
        transport: httpx.BaseTransport | None = None,
    ):
        super().__init__(vocab, max_len)
        self.endpoint = endpoint
        self.retries = retries
        self.backoff = backoff
        self._client = httpx.Client(timeout=timeout, transport=transport)
        # (prompt, context tokens, tau) -> {token id or eos: logprob}
        self._cond: dict[tuple, dict[int, float]] = {}

    def close(self):
        self._client.close()

    def base_row(self, prefix: Tokens, prompt=()):
        raise UnsupportedOperation("the wire contract exposes sampled continuations, not full distributions")

    def next_token_distribution(self, prefix, prompt=(), tau: float = 1.0):
        raise UnsupportedOperation("the wire contract exposes sampled continuations, not full distributions")

    def _check_prompt(self, prompt) -> str:
        if not isinstance(prompt, str) or not prompt:
            raise LMError("remote backend requires a non-empty string prompt")
        return prompt

    def _record(self, prompt: str, ctx: Tokens, tau: float, token: int, logprob: float):
        self._cond.setdefault((prompt, ctx, tau), {})[token] = logprob

    def sample_continuation(self, prefix, prompt=(), tau: float = 1.0, rng=None) -> Continuation:
        if tau <= 0:
            raise LMError("tau must be positive")
        prompt = self._check_prompt(prompt)
        prefix = self._prep(prefix, prompt)
        payload = {
            "prompt": prompt,
            "prefix_tokens": [self.vocab.symbols[t] for t in prefix],
            "temperature": tau,
            "max_tokens": self.max_len - len(prefix),
        }
        body = post_json(self._client, self.endpoint, payload, self.retries, self.backoff)
        if "tokens" not in body or "token_logprobs" not in body:
            raise RemoteContractError("response missing 'tokens' or 'token_logprobs'")
        symbols = body["tokens"]
        logprobs = body["token_logprobs"]
        if len(logprobs) != len(symbols) + 1:
            raise RemoteContractError(
                f"token_logprobs must have {len(symbols) + 1} entries (tokens plus EOS), got {len(logprobs)}"
            )
        if len(symbols) > self.max_len - len(prefix):
            raise RemoteContractError("server returned more tokens than requested")
        try:
            tokens = self.vocab.encode(symbols)
        except LMError as exc:
            raise RemoteContractError(f"server returned a token outside the vocabulary: {exc}") from None
        lps = [float(v) for v in logprobs]
        ctx = prefix
        for t, lp in zip(tokens, lps[:-1]):
            self._record(prompt, ctx, tau, t, lp)
            ctx = ctx + (t,)
        self._record(prompt, ctx, tau, self.vocab.eos_id, lps[-1])
        return Continuation(tokens, tuple(lps[:-1]), lps[-1])

    def continuation_logprob(self, prefix, suffix, prompt=(), tau: float = 1.0) -> float:
        prompt = self._check_prompt(prompt)
        prefix = self._prep(prefix, prompt)
        suffix = self.vocab.check_sequence(suffix)
        if len(prefix) + len(suffix) > self.max_len:
            raise LMError("prefix + suffix exceeds max_len")
        total = 0.0
        ctx = prefix
        for t in tuple(suffix) + (self.vocab.eos_id,):
            cached = self._cond.get((prompt, ctx, tau), {}).get(t)
            if cached is None:
                raise UnsupportedOperation(
                    "logprob unavailable: the server only reports logprobs for tokens it sampled"
                )
            total += cached
            ctx = ctx + (t,) if t != self.vocab.eos_id else ctx
        return total


class RemoteScorer:
    """Reward function backed by a scoring server; optional logit transform.

    ``clamp_eps`` enables ``logit(clamp(score))``; pass ``None`` to return
    the raw score. Scores outside [0, 1] are contract violations.
    """

    def __init__(
        self,
        endpoint: str,
        vocab: Vocab,
        clamp_eps: float | None = 1e-2,
        timeout: float = 30.0,
        retries: int = 2,
        backoff: float = 0.0,
        transport: httpx.BaseTransport | None = None,
    ):
        from .reward import logit_clamp  # local import to avoid a cycle

        self.endpoint = endpoint
        self.vocab = vocab
        self.clamp_eps = clamp_eps
        self.retries = retries
        self.backoff = backoff
        self._logit_clamp = logit_clamp
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def close(self):
        self._client.close()

    def __call__(self, x, y) -> float:
        source = x if isinstance(x, str) else self.vocab.to_string(x)
        payload = {"source": source, "hypothesis": self.vocab.to_string(y)}
        body = post_json(self._client, self.endpoint, payload, self.retries, self.backoff)
        if "score" not in body:
            raise RemoteContractError("response missing 'score'")
        score = float(body["score"])
        if not 0.0 <= score <= 1.0:
            raise RemoteContractError(f"score {score} outside [0, 1]")
        if self.clamp_eps is None:
            return score
        return self._logit_clamp(score, self.clamp_eps)
