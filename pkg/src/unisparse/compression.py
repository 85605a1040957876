"""Composite tokens: pooling along the sequence and across heads."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import AttentionInputs, CompressionConfig, PoolStrategy

# Spawn-key tags so Q and K draw from unrelated streams.
_ROLE_Q = 0
_ROLE_K = 1


def window_uniforms(seed, n: int, *spawn_key: int) -> np.ndarray:
    """One uniform per pooling window from a counter-based (Philox) stream.

    Value ``w`` depends only on ``(seed, spawn_key, w)``, so any worker can
    reproduce a window's draw without replaying the others.
    """
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in spawn_key))
    gen = np.random.Generator(np.random.Philox(ss))
    return gen.random(n)


def _norm_magnitude(windows: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("wcd,wcd->wc", windows, windows))


def pool_sequence(X, c: int, strategy="mean", seed=0, *, spawn_key=(), magnitude=None):
    """Pool consecutive windows of ``c`` rows of an (L, d_k) matrix.

    ``mean`` and ``max`` reduce each window elementwise. ``stochastic`` keeps
    one row per window, drawn with probability proportional to
    ``magnitude(row)`` (Euclidean norm by default); an all-zero window falls
    back to a uniform draw.
    """
    X = np.asarray(X, dtype=np.float32)
    if X.ndim != 2:
        raise ValueError(f"expected an (L, d_k) matrix, got shape {X.shape}")
    c = int(c)
    L, d = X.shape
    if c < 1 or L % c:
        raise ValueError(f"sequence length {L} not divisible by factor {c}")
    strategy = PoolStrategy(strategy)
    if c == 1:
        return X.copy()
    windows = X.reshape(L // c, c, d)
    if strategy is PoolStrategy.MEAN:
        return windows.mean(axis=1, dtype=np.float64).astype(np.float32)
    if strategy is PoolStrategy.MAX:
        return windows.max(axis=1)

    mags = (magnitude or _norm_magnitude)(windows.astype(np.float64))
    totals = mags.sum(axis=1)
    u = window_uniforms(seed, L // c, *spawn_key)
    cum = np.cumsum(mags, axis=1)
    pick = np.sum(cum <= (u * totals)[:, None], axis=1)
    pick = np.minimum(pick, c - 1)
    zero = totals <= 0.0
    pick[zero] = np.minimum((u[zero] * c).astype(np.int64), c - 1)
    return windows[np.arange(L // c), pick].copy()


def pool_heads(stack, c_h: int) -> np.ndarray:
    """Mean over groups of ``c_h`` consecutive heads of an (H, M, d_k) stack."""
    stack = np.asarray(stack, dtype=np.float32)
    H = stack.shape[0]
    c_h = int(c_h)
    if c_h < 1 or H % c_h:
        raise ValueError(f"head count {H} not divisible by head factor {c_h}")
    if c_h == 1:
        return stack.copy()
    grouped = stack.reshape(H // c_h, c_h, *stack.shape[1:])
    return grouped.mean(axis=1, dtype=np.float64).astype(np.float32)


@dataclass(frozen=True)
class CompressedViews:
    Q: np.ndarray  # (H', L/c_q, d_k)
    K: np.ndarray  # (H', L/c_k, d_k)
    config: CompressionConfig

    @property
    def heads(self) -> int:
        return self.Q.shape[0]


def compress(inputs: AttentionInputs, cfg: CompressionConfig) -> CompressedViews:
    """Sequence pooling per head, then head pooling."""

    def _pool_stack(stack, c, role):
        return np.stack(
            [
                pool_sequence(stack[h], c, cfg.strategy, cfg.seed, spawn_key=(role, h))
                for h in range(stack.shape[0])
            ]
        )

    Qc = _pool_stack(inputs.Q, cfg.c_q, _ROLE_Q)
    Kc = _pool_stack(inputs.K, cfg.c_k, _ROLE_K)
    return CompressedViews(pool_heads(Qc, cfg.c_h), pool_heads(Kc, cfg.c_h), cfg)
