"""Simplified competitor proxies: strided anti-diagonal scoring and last-block probing.

Both produce :class:`BlockScoreMatrix` objects, so Top-P selection and all
metrics apply to them unchanged.
"""

from __future__ import annotations

import math

import numpy as np

from .core import AttentionInputs, BlockGeometry, CausalMode, ProxyTag
from .scoring import BlockScoreMatrix, apply_block_causal, masked_softmax

__all__ = [
    "ProxyTag",
    "antidiagonal_offsets",
    "antidiagonal_block_scores",
    "last_block_probe_scores",
]


def antidiagonal_offsets(S: int, stride: int, q: int) -> np.ndarray:
    """Key offsets sampled inside every key block for a query at block offset ``q``."""
    return (S - 1 - q + np.arange(0, S, stride)) % S


def antidiagonal_block_scores(
    inputs: AttentionInputs,
    S: int | None = None,
    stride: int = 8,
    causal_mode=CausalMode.POST_SOFTMAX_BLOCK,
) -> BlockScoreMatrix:
    """Anti-diagonal-style scores.

    Each query samples ``S / stride`` keys per key block along strided
    anti-diagonals of the S x S tile, softmax-normalizes over all its sampled
    logits and sums the resulting weights per key block. In the pre-softmax
    causal mode sampled keys later than the query are dropped before the
    softmax; a query left with no sampled key contributes nothing.
    """
    S = inputs.S if S is None else int(S)
    stride = int(stride)
    if stride < 1 or S % stride:
        raise ValueError(f"block size {S} not divisible by stride {stride}")
    L, d = inputs.L, inputs.d_k
    if L % S:
        raise ValueError(f"L={L} not divisible by S={S}")
    mode = CausalMode(causal_mode)
    N = L // S
    n_off = S // stride
    scale = 1.0 / math.sqrt(d)
    block_base = (np.arange(N) * S)[:, None]
    scores = np.zeros((inputs.H, N, N))
    for h in range(inputs.H):
        Qh = inputs.Q[h].astype(np.float64)
        Kh = inputs.K[h].astype(np.float64)
        for q in range(S):
            q_idx = np.arange(N) * S + q
            k_idx = (block_base + antidiagonal_offsets(S, stride, q)[None, :]).reshape(-1)
            logits = (Qh[q_idx] @ Kh[k_idx].T) * scale
            allowed = None
            if mode is CausalMode.PRE_SOFTMAX_COMPRESSED:
                allowed = k_idx[None, :] <= q_idx[:, None]
                live = allowed.any(axis=1)
                allowed = allowed | ~live[:, None]
            probs = masked_softmax(logits, allowed)
            if allowed is not None:
                probs[~live] = 0.0
            scores[h] += probs.reshape(N, N, n_off).sum(axis=2)
    return BlockScoreMatrix(apply_block_causal(scores), BlockGeometry(L, S))


def last_block_probe_scores(inputs: AttentionInputs, S: int | None = None) -> BlockScoreMatrix:
    """Exact attention of the last query block against all keys, replicated to every row.

    The probe's per-key-block mass becomes ``Score(i, .)`` for each query
    block ``i``, then the block-causal mask clips it.
    """
    S = inputs.S if S is None else int(S)
    L, d = inputs.L, inputs.d_k
    if L % S:
        raise ValueError(f"L={L} not divisible by S={S}")
    N = L // S
    scale = 1.0 / math.sqrt(d)
    scores = np.empty((inputs.H, N, N))
    for h in range(inputs.H):
        q = inputs.Q[h, L - S :].astype(np.float64)
        k = inputs.K[h].astype(np.float64)
        probs = masked_softmax((q @ k.T) * scale)
        column = probs.reshape(S, N, S).sum(axis=(0, 2))
        scores[h] = column[None, :]
    return BlockScoreMatrix(apply_block_causal(scores), BlockGeometry(L, S))
