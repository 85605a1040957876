"""Selection quality, sparsity, output fidelity and an analytic FLOP model."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import rankdata

from .core import AttentionInputs, CompressionConfig, ProxyTag
from .scoring import BlockScoreMatrix
from .selection import BlockMask, row_coverage

# Per-entry constants for the lower-order terms: softmax is max/sub/exp/sum/div,
# aggregation one add.
SOFTMAX_AGG_FLOPS_PER_ENTRY = 6


@dataclass(frozen=True)
class FlopBreakdown:
    """Integer FLOP counts; a multiply-add counts as 2."""

    compression: int
    compressed_qk: int
    softmax_aggregation: int
    top_p: int
    sparse_attention: int
    dense_attention: int
    causal_dense_attention: int

    @property
    def selection(self) -> int:
        return self.compression + self.compressed_qk + self.softmax_aggregation + self.top_p

    @property
    def total(self) -> int:
        return self.selection + self.sparse_attention

    def to_dict(self) -> dict:
        d = asdict(self)
        d["selection"] = self.selection
        d["total"] = self.total
        return d


def _log2_ceil(n: int) -> int:
    return max(1, (n - 1).bit_length())


def selection_flops(
    L: int,
    h: int,
    d_k: int,
    S: int,
    cfg: CompressionConfig | None = None,
    method=ProxyTag.UNISPARSE,
    *,
    stride: int = 8,
    selected_blocks: int | None = None,
) -> FlopBreakdown:
    """Analytic cost of building a mask with ``method`` and running the sparse pass.

    ``compressed_qk`` holds each method's scoring matmul: the compressed QK^T
    for unisparse, the strided sampled logits for antidiagonal, the last
    block's logits for the probe. ``selected_blocks`` is the total number of
    selected (head, query block, key block) tiles; ``None`` means every causal tile.
    """
    method = ProxyTag(method)
    cfg = cfg or CompressionConfig()
    N = L // S
    causal_tiles = h * N * (N + 1) // 2
    tile = 4 * S * S * d_k  # QK^T plus AV on one S x S tile
    tiles = causal_tiles if selected_blocks is None else int(selected_blocks)
    dense = 4 * L * L * h * d_k
    top_p = (h // (cfg.c_h if method is ProxyTag.UNISPARSE else 1)) * N * N * _log2_ceil(N)

    if method is ProxyTag.UNISPARSE:
        Lq, Lk, Hc = L // cfg.c_q, L // cfg.c_k, h // cfg.c_h
        compression = 2 * L * h * d_k
        if cfg.c_h > 1:
            compression += (Lq + Lk) * h * d_k
        qk = 2 * Lq * Lk * Hc * d_k
        soft = SOFTMAX_AGG_FLOPS_PER_ENTRY * Lq * Lk * Hc
    elif method is ProxyTag.ANTIDIAGONAL:
        if S % stride:
            raise ValueError(f"S={S} not divisible by stride={stride}")
        sampled = L * (L // stride)
        compression = 0
        qk = 2 * sampled * h * d_k
        soft = SOFTMAX_AGG_FLOPS_PER_ENTRY * sampled * h
    else:
        compression = 0
        qk = 2 * S * L * h * d_k
        soft = SOFTMAX_AGG_FLOPS_PER_ENTRY * S * L * h
    return FlopBreakdown(
        compression=compression,
        compressed_qk=qk,
        softmax_aggregation=soft,
        top_p=top_p,
        sparse_attention=tiles * tile,
        dense_attention=dense,
        causal_dense_attention=causal_tiles * tile,
    )


def sparsity_ratio(mask) -> np.ndarray:
    """Per-head fraction of causal block pairs that the mask skips."""
    m = mask.mask if isinstance(mask, BlockMask) else np.asarray(mask, dtype=bool)
    N = m.shape[-1]
    causal = N * (N + 1) // 2
    kept = np.tril(m).sum(axis=(-2, -1))
    return (causal - kept) / causal


def spearman_rho(a, b) -> float:
    """Spearman correlation with average ranks for ties; NaN when a ranking is constant."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"need two equal-length vectors, got {a.shape} and {b.shape}")
    if a.size < 2:
        raise ValueError("spearman_rho needs at least 2 observations")
    ra = rankdata(a) - (a.size + 1) / 2.0
    rb = rankdata(b) - (b.size + 1) / 2.0
    denom = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if denom == 0.0:
        return float("nan")
    return float(np.clip((ra @ rb) / denom, -1.0, 1.0))


def row_spearman(test: BlockScoreMatrix, reference: BlockScoreMatrix) -> np.ndarray:
    """(H, N) Spearman between causal score rows; row 0 and constant rows are NaN.

    ``test`` may have fewer heads than ``reference`` (head compression); each
    compressed head is compared against every member head.
    """
    H, N = reference.heads, reference.N
    group = H // test.heads
    out = np.full((H, N), np.nan)
    for h in range(H):
        for i in range(1, N):
            out[h, i] = spearman_rho(test.row(h // group, i), reference.row(h, i))
    return out


def output_fidelity(O_test, O_ref) -> dict:
    t = np.asarray(O_test, dtype=np.float64)
    r = np.asarray(O_ref, dtype=np.float64)
    if t.shape != r.shape:
        raise ValueError(f"shape mismatch: {t.shape} vs {r.shape}")
    if t.ndim == 2:
        t, r = t[None], r[None]
    diff = np.abs(t - r)
    rel = diff / np.maximum(np.abs(r), 1e-6)
    num = np.sum(t * r, axis=-1)
    den = np.linalg.norm(t, axis=-1) * np.linalg.norm(r, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(den > 0, num / den, np.where(np.linalg.norm(t - r, axis=-1) == 0, 1.0, 0.0))
    per_head = cos.mean(axis=1)
    return {
        "max_abs": float(diff.max()),
        "mean_rel": float(rel.mean()),
        "cosine": float(cos.mean()),
        "cosine_per_head": [float(c) for c in per_head],
    }


def _top_k(row: np.ndarray, k: int) -> np.ndarray:
    return np.argsort(-row, kind="stable")[:k]


def block_recall(mask: BlockMask, reference: BlockScoreMatrix, k: int) -> float:
    """Mean fraction of each row's exact top-k key blocks that the mask selects.

    Rows with fewer than ``k`` causal blocks use all of them.
    """
    if k < 1 or k > reference.N:
        raise ValueError(f"k={k} outside [1, N={reference.N}]")
    if mask.heads != reference.heads:
        raise ValueError("mask and reference head counts differ")
    hits = []
    for h in range(mask.heads):
        for i in range(mask.N):
            top = _top_k(reference.row(h, i), min(k, i + 1))
            hits.append(mask.mask[h, i, top].mean())
    return float(np.mean(hits))


def planted_recall(mask: BlockMask, planted) -> float:
    """Mean fraction of planted key blocks present in the mask, over rows with a planted set."""
    hits = []
    for h, rows in enumerate(planted):
        for i, blocks in enumerate(rows):
            if len(blocks):
                hits.append(mask.mask[h, i, list(blocks)].mean())
    return float(np.mean(hits)) if hits else float("nan")


@dataclass
class SparsityReport:
    method: str
    rho: np.ndarray  # per head
    selected_blocks: np.ndarray  # (H, N) per-row counts
    coverage: np.ndarray  # (H', N) attained score fraction
    flops: FlopBreakdown
    mask: BlockMask
    scores: BlockScoreMatrix | None = None
    extra: dict = field(default_factory=dict)

    @property
    def rho_mean(self) -> float:
        return float(np.mean(self.rho))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "rho": [float(r) for r in self.rho],
            "rho_mean": self.rho_mean,
            "selected_blocks": int(self.selected_blocks.sum()),
            "min_coverage": float(self.coverage.min()),
            "flops": self.flops.to_dict(),
            **self.extra,
        }


def make_report(
    mask: BlockMask,
    scores: BlockScoreMatrix,
    inputs: AttentionInputs,
    cfg: CompressionConfig,
    method=ProxyTag.UNISPARSE,
    stride: int = 8,
) -> SparsityReport:
    method = ProxyTag(method)
    counts = mask.row_counts
    flops = selection_flops(
        inputs.L, inputs.H, inputs.d_k, inputs.S, cfg, method,
        stride=stride, selected_blocks=int(np.tril(mask.mask).sum()),
    )
    return SparsityReport(
        method=method.value,
        rho=sparsity_ratio(mask),
        selected_blocks=counts,
        coverage=row_coverage(mask, scores),
        flops=flops,
        mask=mask,
        scores=scores,
    )
