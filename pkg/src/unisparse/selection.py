"""Top-P block selection and causal block masks."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scoring import BlockScoreMatrix


def top_p_row(scores, P: float) -> list[int]:
    """Minimal descending-score prefix of key blocks holding a fraction ``P`` of the row mass.

    Ties go to the lower block index. ``P >= 1`` keeps every block, including
    zero-score ones; an all-zero row otherwise keeps only its last (diagonal) block.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("top_p_row needs a non-empty 1-D score vector")
    if not 0.0 < P <= 1.0:
        raise ValueError(f"P out of (0,1]: {P}")
    if np.any(s < 0) or not np.isfinite(s).all():
        raise ValueError("row scores must be finite and nonnegative")
    order = np.argsort(-s, kind="stable")
    if P >= 1.0:
        return [int(j) for j in order]
    cum = np.cumsum(s[order])
    total = cum[-1]
    if total <= 0.0:
        return [s.size - 1]
    k = int(np.searchsorted(cum / total, P, side="left")) + 1
    return [int(j) for j in order[: min(k, s.size)]]


def prefix_fraction(scores, selected) -> float:
    """Mass fraction of ``selected`` summed in descending order, as top_p_row accumulates it."""
    s = np.asarray(scores, dtype=np.float64)
    total = np.cumsum(np.sort(s)[::-1])[-1]
    if total <= 0.0:
        return 1.0
    kept = np.cumsum(np.sort(s[list(selected)])[::-1])[-1]
    return float(kept / total)


@dataclass(frozen=True)
class BlockMask:
    mask: np.ndarray  # (H, N, N) bool
    P: float

    @property
    def heads(self) -> int:
        return self.mask.shape[0]

    @property
    def N(self) -> int:
        return self.mask.shape[1]

    @property
    def row_counts(self) -> np.ndarray:
        return self.mask.sum(axis=2)

    def selected(self, h: int, i: int) -> np.ndarray:
        """Selected key blocks for query block ``i`` in ascending order."""
        return np.flatnonzero(self.mask[h, i])


def check_mask(mask: np.ndarray) -> None:
    N = mask.shape[-1]
    if mask[..., np.triu(np.ones((N, N), dtype=bool), k=1)].any():
        raise ValueError("mask selects key blocks above the diagonal")
    if not mask.any(axis=-1).all():
        raise ValueError("mask has a query row with no selected key block")


def mask_from_scores(scores: np.ndarray, P: float) -> np.ndarray:
    """Apply top_p_row to every causal row of an (H', N, N) score stack."""
    Hc, N, _ = scores.shape
    out = np.zeros((Hc, N, N), dtype=bool)
    for h in range(Hc):
        for i in range(N):
            out[h, i, top_p_row(scores[h, i, : i + 1], P)] = True
    return out


def build_block_mask(scores: BlockScoreMatrix, P: float, c_h: int = 1, H: int | None = None) -> BlockMask:
    Hc = scores.heads
    H = Hc * c_h if H is None else int(H)
    if Hc * c_h != H:
        raise ValueError(f"{Hc} compressed heads x c_h={c_h} != H={H}")
    compact = mask_from_scores(scores.scores, P)
    full = np.repeat(compact, c_h, axis=0)
    check_mask(full)
    return BlockMask(full, float(P))


def row_coverage(mask: BlockMask, scores: BlockScoreMatrix) -> np.ndarray:
    """Fraction of each causal score row held by the selected blocks, per compressed head."""
    c_h = mask.heads // scores.heads
    compact = mask.mask[::c_h]
    cov = np.empty((scores.heads, scores.N))
    for h in range(scores.heads):
        for i in range(scores.N):
            cov[h, i] = prefix_fraction(scores.row(h, i), np.flatnonzero(compact[h, i]))
    return cov


def _runs(idx: np.ndarray) -> list[list[int]]:
    runs = []
    for j in idx.tolist():
        if runs and runs[-1][0] + runs[-1][1] == j:
            runs[-1][1] += 1
        else:
            runs.append([j, 1])
    return runs


def mask_to_json(mask: BlockMask) -> dict:
    """Per-head, per-row ``[start, length]`` runs of selected key blocks."""
    return {
        "P": mask.P,
        "H": mask.heads,
        "N": mask.N,
        "rows": [
            [_runs(mask.selected(h, i)) for i in range(mask.N)] for h in range(mask.heads)
        ],
    }


def mask_from_json(doc: dict) -> BlockMask:
    H, N = int(doc["H"]), int(doc["N"])
    m = np.zeros((H, N, N), dtype=bool)
    for h, rows in enumerate(doc["rows"]):
        for i, runs in enumerate(rows):
            for start, length in runs:
                m[h, i, start : start + length] = True
    return BlockMask(m, float(doc["P"]))


def dump_mask_json(mask: BlockMask, path) -> None:
    Path(path).write_text(json.dumps(mask_to_json(mask), separators=(",", ":")) + "\n")
