"""Dense causal attention (the oracle) and block-sparse attention under a block mask."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .compression import compress
from .core import (
    AttentionInputs,
    BlockGeometry,
    CompressionConfig,
    validate_inputs,
)
from .metrics import SparsityReport, make_report
from .scoring import BlockScoreMatrix, apply_block_causal, block_aggregate, compressed_attention
from .selection import BlockMask, build_block_mask

# Query rows per dense chunk; bounds the (chunk, L) float64 working set.
_DENSE_CHUNK = 512


@dataclass(frozen=True)
class AttentionOutput:
    O: np.ndarray  # (H, L, d_k) float32
    lse: np.ndarray  # (H, L) float64 log-sum-exp of scaled logits over attended keys


def _dense_head(q, k, v, causal, scale, block_mass_S=None):
    L = q.shape[0]
    out = np.empty_like(v)
    lse = np.empty(L)
    mass = None
    if block_mass_S is not None:
        S = block_mass_S
        N = L // S
        mass = np.zeros((N, N))
    for start in range(0, L, _DENSE_CHUNK):
        stop = min(start + _DENSE_CHUNK, L)
        logits = (q[start:stop] @ k.T) * scale
        if causal:
            rows = np.arange(start, stop)[:, None]
            logits = np.where(np.arange(L)[None, :] <= rows, logits, -np.inf)
        m = logits.max(axis=1, keepdims=True)
        e = np.exp(logits - m)
        z = e.sum(axis=1, keepdims=True)
        p = e / z
        out[start:stop] = p @ v
        lse[start:stop] = (m + np.log(z))[:, 0]
        if mass is not None:
            per_key_block = p.reshape(stop - start, N, S).sum(axis=2)
            blocks = np.arange(start, stop) // S
            np.add.at(mass, blocks, per_key_block)
    return out, lse, mass


def dense_attention(inputs: AttentionInputs, causal: bool = True) -> AttentionOutput:
    """Exact softmax attention, float64 throughout, cast to float32 at the end."""
    out, _ = dense_reference(inputs, causal=causal, with_block_mass=False)
    return out


def dense_reference(inputs: AttentionInputs, causal: bool = True, with_block_mass: bool = True):
    """Dense output and, optionally, exact block-aggregated attention mass.

    The mass is returned as a :class:`BlockScoreMatrix` with the block-causal
    sentinel applied, so it plugs into the same selection and metrics code as
    the proxies.
    """
    scale = 1.0 / math.sqrt(inputs.d_k)
    H = inputs.H
    O = np.empty((H, inputs.L, inputs.d_k), dtype=np.float32)
    lse = np.empty((H, inputs.L))
    masses = []
    for h in range(H):
        q, k, v = (x[h].astype(np.float64) for x in (inputs.Q, inputs.K, inputs.V))
        o, l, mass = _dense_head(q, k, v, causal, scale, inputs.S if with_block_mass else None)
        O[h] = o
        lse[h] = l
        masses.append(mass)
    out = AttentionOutput(O, lse)
    if not with_block_mass:
        return out, None
    scores = BlockScoreMatrix(apply_block_causal(np.stack(masses)), BlockGeometry(inputs.L, inputs.S))
    return out, scores


def exact_block_mass(inputs: AttentionInputs, causal: bool = True) -> BlockScoreMatrix:
    """Token-level attention probabilities summed per (query block, key block)."""
    return dense_reference(inputs, causal=causal, with_block_mass=True)[1]


def block_sparse_attention(inputs: AttentionInputs, mask: BlockMask) -> AttentionOutput:
    """Online-softmax attention over the selected key blocks of each query block.

    Key blocks are visited in ascending order with a running max and rescaled
    accumulators; unselected blocks are never read. Inside the diagonal block
    token-level causality is enforced.
    """
    H, L, d, S = inputs.H, inputs.L, inputs.d_k, inputs.S
    N = L // S
    m = np.asarray(mask.mask, dtype=bool)
    if m.shape != (H, N, N):
        raise ValueError(f"mask shape {m.shape} does not match (H, N, N) = {(H, N, N)}")
    if not m.any(axis=2).all():
        raise ValueError("mask has a query block with no selected key block")
    if np.triu(m, k=1).any():
        raise ValueError("mask selects key blocks above the diagonal")
    scale = 1.0 / math.sqrt(d)
    diag_allowed = np.tril(np.ones((S, S), dtype=bool))
    O = np.empty((H, L, d), dtype=np.float32)
    lse = np.empty((H, L))
    for h in range(H):
        q = inputs.Q[h].astype(np.float64)
        k = inputs.K[h].astype(np.float64)
        v = inputs.V[h].astype(np.float64)
        for i in range(N):
            qi = q[i * S : (i + 1) * S]
            run_max = np.full(S, -np.inf)
            run_sum = np.zeros(S)
            acc = np.zeros((S, d))
            for j in np.flatnonzero(m[h, i]):
                logits = (qi @ k[j * S : (j + 1) * S].T) * scale
                if j == i:
                    logits = np.where(diag_allowed, logits, -np.inf)
                new_max = np.maximum(run_max, logits.max(axis=1))
                alpha = np.exp(run_max - new_max)
                p = np.exp(logits - new_max[:, None])
                run_sum = alpha * run_sum + p.sum(axis=1)
                acc = alpha[:, None] * acc + p @ v[j * S : (j + 1) * S]
                run_max = new_max
            O[h, i * S : (i + 1) * S] = acc / run_sum[:, None]
            lse[h, i * S : (i + 1) * S] = run_max + np.log(run_sum)
    return AttentionOutput(O, lse)


def unisparse_scores(inputs: AttentionInputs, cfg: CompressionConfig) -> BlockScoreMatrix:
    """Pool, score in compressed space, aggregate per block, apply block causality."""
    validate_inputs(inputs, cfg).raise_for_errors()
    views = compress(inputs, cfg)
    attn = compressed_attention(views, inputs.d_k, cfg.causal_mode)
    return block_aggregate(attn, BlockGeometry.for_inputs(inputs, cfg))


def unisparse_attn(inputs: AttentionInputs, cfg: CompressionConfig) -> tuple[AttentionOutput, SparsityReport]:
    scores = unisparse_scores(inputs, cfg)
    mask = build_block_mask(scores, cfg.P, cfg.c_h, inputs.H)
    out = block_sparse_attention(inputs, mask)
    report = make_report(mask, scores, inputs, cfg, method="unisparse")
    return out, report
