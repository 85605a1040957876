"""Compressed-space attention and block-level importance scores."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .compression import CompressedViews
from .core import NEG_INF, BlockGeometry, CausalMode


@dataclass(frozen=True)
class CompressedAttention:
    A: np.ndarray  # (H', L'_q, L'_k), float64, row-stochastic
    scale: float
    causal_mode: CausalMode


@dataclass(frozen=True)
class BlockScoreMatrix:
    """(H', N, N) nonnegative scores; entries above the diagonal hold NEG_INF."""

    scores: np.ndarray
    geometry: BlockGeometry

    @property
    def heads(self) -> int:
        return self.scores.shape[0]

    @property
    def N(self) -> int:
        return self.scores.shape[1]

    def row(self, h: int, i: int) -> np.ndarray:
        """Causal part of row ``i``: scores for key blocks ``0..i``."""
        return self.scores[h, i, : i + 1]


def compressed_causal_allowed(Lq: int, Lk: int, c_q: int, c_k: int) -> np.ndarray:
    """Composite pair (t', s') is kept iff its last query token can see its first key token."""
    t = np.arange(Lq)[:, None]
    s = np.arange(Lk)[None, :]
    return (t + 1) * c_q - 1 >= s * c_k


def masked_softmax(logits: np.ndarray, allowed: np.ndarray | None = None) -> np.ndarray:
    """Row softmax in float64 with max subtraction; disallowed entries get weight 0."""
    x = np.asarray(logits, dtype=np.float64)
    if allowed is not None:
        x = np.where(allowed, x, -np.inf)
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def compressed_attention(
    views: CompressedViews, d_k: int | None = None, causal_mode=None
) -> CompressedAttention:
    cfg = views.config
    d_k = views.Q.shape[-1] if d_k is None else int(d_k)
    if d_k <= 0:
        raise ValueError("d_k must be positive")
    if views.Q.shape[0] != views.K.shape[0] or views.Q.shape[-1] != views.K.shape[-1]:
        raise ValueError(f"shape mismatch: {views.Q.shape} vs {views.K.shape}")
    mode = CausalMode(causal_mode if causal_mode is not None else cfg.causal_mode)
    scale = 1.0 / math.sqrt(d_k)
    Qc = views.Q.astype(np.float64)
    Kc = views.K.astype(np.float64)
    logits = np.matmul(Qc, Kc.transpose(0, 2, 1)) * scale
    allowed = None
    if mode is CausalMode.PRE_SOFTMAX_COMPRESSED:
        allowed = compressed_causal_allowed(Qc.shape[1], Kc.shape[1], cfg.c_q, cfg.c_k)
    return CompressedAttention(masked_softmax(logits, allowed), scale, mode)


def apply_block_causal(scores: np.ndarray) -> np.ndarray:
    N = scores.shape[-1]
    out = np.array(scores, dtype=np.float64)
    out[..., np.triu(np.ones((N, N), dtype=bool), k=1)] = NEG_INF
    return out


def block_aggregate(
    attn: CompressedAttention, geometry: BlockGeometry, causal_mask: bool = True
) -> BlockScoreMatrix:
    """Sum composite attention over each (query block, key block) region."""
    A = attn.A
    Hc, Lq, Lk = A.shape
    if Lq != geometry.Lq or Lk != geometry.Lk:
        raise ValueError(
            f"attention of shape {A.shape[1:]} does not match geometry "
            f"({geometry.Lq}, {geometry.Lk})"
        )
    N, rq, rk = geometry.N, geometry.q_per_block, geometry.k_per_block
    scores = A.reshape(Hc, N, rq, N, rk).sum(axis=(2, 4))
    if causal_mask:
        scores = apply_block_causal(scores)
    return BlockScoreMatrix(scores, geometry)


def dump_scores_csv(scores: BlockScoreMatrix, directory, prefix: str = "score") -> list[Path]:
    """One CSV per head; row = query block, column = key block; masked cells left empty."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for h in range(scores.heads):
        p = directory / f"{prefix}_head{h}.csv"
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            for i in range(scores.N):
                w.writerow(
                    "" if v == NEG_INF else repr(float(v)) for v in scores.scores[h, i]
                )
        paths.append(p)
    return paths
