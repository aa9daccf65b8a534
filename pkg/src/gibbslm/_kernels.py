"""Hot numeric kernels, JIT-compiled with numba when available.

Set ``GIBBSLM_DISABLE_NUMBA=1`` to run the same functions as plain
Python/numpy. Both modes execute identical floating-point operations in
identical order, so sampled tokens and logprobs are bit-for-bit equal;
only speed differs (see ``benchmarks/bench_chain.py``).
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("GIBBSLM_DISABLE_NUMBA", "").strip()
if _FLAG not in ("", "0"):
    NUMBA_ENABLED = False
else:
    try:
        import numba

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    njit = numba.njit(cache=True)
else:

    def njit(func):
        return func


@njit
def anneal_row(row, inv_tau):
    """Temperature-adjust a probability row: row**(1/tau), renormalized."""
    w = row**inv_tau
    s = 0.0
    for j in range(w.shape[0]):
        s += w[j]
    return w / s


@njit
def draw_from_row(row, inv_tau, u):
    """Inverse-CDF draw of one token from the annealed row.

    Returns (token, logprob of that token under the annealed row). The
    cumulative scan runs left to right, so a given uniform always selects
    the same token regardless of execution mode.
    """
    w = row**inv_tau
    s = 0.0
    for j in range(w.shape[0]):
        s += w[j]
    target = u * s
    idx = w.shape[0] - 1
    acc = 0.0
    for j in range(w.shape[0]):
        acc += w[j]
        if target < acc:
            idx = j
            break
    # Float-edge guard: never land on a zero-probability cell.
    while w[idx] == 0.0 and idx > 0:
        idx -= 1
    return idx, np.log(w[idx]) - np.log(s)


@njit
def score_token(row, inv_tau, token):
    """Log-probability of `token` under the annealed row (-inf if impossible)."""
    w = row**inv_tau
    s = 0.0
    for j in range(w.shape[0]):
        s += w[j]
    if w[token] == 0.0:
        return -np.inf
    return np.log(w[token]) - np.log(s)


@njit
def tabular_walk_sample(table, n_content, eos_id, rank_of, start_code, inv_tau, us, out_tokens, out_logprobs):
    """Sample a continuation through a dense prefix-indexed conditional table.

    `us` holds one uniform per remaining position before the hard length
    cap; the walk consumes them in order and stops at the first EOS draw.
    Content tokens go into `out_tokens` / `out_logprobs`. Returns
    (count, eos_logprob); running off the end of `us` means the length cap
    was hit, where EOS is forced with probability one (logprob 0).
    """
    code = start_code
    count = 0
    for step in range(us.shape[0]):
        tok, lp = draw_from_row(table[code], inv_tau, us[step])
        if tok == eos_id:
            return count, lp
        out_tokens[count] = tok
        out_logprobs[count] = lp
        count += 1
        code = code * n_content + rank_of[tok] + 1
    return count, 0.0


@njit
def tabular_walk_score(table, n_content, eos_id, rank_of, start_code, prefix_len, max_len, inv_tau, suffix):
    """Total annealed logprob of `suffix` then EOS, starting at `start_code`.

    The terminating EOS contributes 0 when the full sequence sits exactly
    at the length cap (EOS is forced there).
    """
    code = start_code
    pos = prefix_len
    total = 0.0
    for j in range(suffix.shape[0]):
        total += score_token(table[code], inv_tau, suffix[j])
        code = code * n_content + rank_of[suffix[j]] + 1
        pos += 1
    if pos < max_len:
        total += score_token(table[code], inv_tau, eos_id)
    return total
