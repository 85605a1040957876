"""Shape-checked containers and block-partition arithmetic."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np


class PoolStrategy(str, Enum):
    MEAN = "mean"
    MAX = "max"
    STOCHASTIC = "stochastic"


class CausalMode(str, Enum):
    # Literal pipeline: softmax over all composite keys, causality applied to block scores.
    POST_SOFTMAX_BLOCK = "post-softmax-block-causal"
    # Composite pairs that cannot contain a causal token pair are masked before softmax.
    PRE_SOFTMAX_COMPRESSED = "pre-softmax-compressed-causal"


# Stand-in for -inf in stored score matrices; sorts below every real score.
NEG_INF = float(np.finfo(np.float32).min)


class ValidationError(ValueError):
    """Raised when inputs or config violate divisibility/finiteness invariants."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class AttentionInputs:
    """Per-head Q/K/V stacks of shape (H, L, d_k) plus the block size S."""

    Q: np.ndarray
    K: np.ndarray
    V: np.ndarray
    S: int

    def __post_init__(self):
        for name in ("Q", "K", "V"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float32)
            if arr.ndim == 2:
                arr = arr[None]
            if arr.ndim != 3:
                raise ValueError(f"{name} must have shape (H, L, d_k), got {arr.shape}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if not (self.Q.shape == self.K.shape == self.V.shape):
            raise ValueError(
                f"Q, K, V shapes differ: {self.Q.shape}, {self.K.shape}, {self.V.shape}"
            )
        if int(self.S) <= 0:
            raise ValueError(f"block size must be positive, got {self.S}")
        object.__setattr__(self, "S", int(self.S))

    @property
    def H(self) -> int:
        return self.Q.shape[0]

    @property
    def L(self) -> int:
        return self.Q.shape[1]

    @property
    def d_k(self) -> int:
        return self.Q.shape[2]

    @property
    def N(self) -> int:
        return self.L // self.S


@dataclass(frozen=True)
class CompressionConfig:
    c_q: int = 8
    c_k: int = 8
    c_h: int = 1
    strategy: PoolStrategy = PoolStrategy.MEAN
    P: float = 0.95
    causal_mode: CausalMode = CausalMode.POST_SOFTMAX_BLOCK
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "strategy", PoolStrategy(self.strategy))
        object.__setattr__(self, "causal_mode", CausalMode(self.causal_mode))
        for name in ("c_q", "c_k", "c_h"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be a positive integer")
            object.__setattr__(self, name, int(getattr(self, name)))
        object.__setattr__(self, "P", float(self.P))
        object.__setattr__(self, "seed", int(self.seed) & 0xFFFFFFFFFFFFFFFF)

    def to_dict(self) -> dict:
        return {
            "c_q": self.c_q,
            "c_k": self.c_k,
            "c_h": self.c_h,
            "strategy": self.strategy.value,
            "P": self.P,
            "causal_mode": self.causal_mode.value,
            "seed": self.seed,
        }


@dataclass
class ValidationResult:
    errors: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def __bool__(self) -> bool:
        return self.ok

    def raise_for_errors(self):
        if self.errors:
            raise ValidationError(self.errors)


def validate_inputs(inputs: AttentionInputs, cfg: CompressionConfig) -> ValidationResult:
    """Collect every violated invariant instead of stopping at the first one."""
    errors = []
    L, S, H = inputs.L, inputs.S, inputs.H
    if L % S:
        errors.append(f"L not divisible by S (L={L}, S={S})")
    if S % cfg.c_q:
        errors.append(f"S not divisible by c_q (S={S}, c_q={cfg.c_q})")
    if S % cfg.c_k:
        errors.append(f"S not divisible by c_k (S={S}, c_k={cfg.c_k})")
    if H % cfg.c_h:
        errors.append(f"H not divisible by c_h (H={H}, c_h={cfg.c_h})")
    if not (0.0 < cfg.P <= 1.0) or not np.isfinite(cfg.P):
        errors.append(f"P out of (0,1] (P={cfg.P})")
    for name in ("Q", "K", "V"):
        if not np.isfinite(getattr(inputs, name)).all():
            errors.append(f"{name} contains non-finite entries")
    return ValidationResult(errors)


@dataclass(frozen=True)
class BlockGeometry:
    """Index maps between original blocks, tokens and composite tokens."""

    L: int
    S: int
    c_q: int = 1
    c_k: int = 1

    def __post_init__(self):
        if self.L % self.S or self.S % self.c_q or self.S % self.c_k:
            raise ValueError(
                f"inconsistent geometry L={self.L} S={self.S} c_q={self.c_q} c_k={self.c_k}"
            )

    @classmethod
    def for_inputs(cls, inputs: AttentionInputs, cfg: CompressionConfig | None = None):
        if cfg is None:
            return cls(inputs.L, inputs.S)
        return cls(inputs.L, inputs.S, cfg.c_q, cfg.c_k)

    @property
    def N(self) -> int:
        return self.L // self.S

    @property
    def Lq(self) -> int:
        return self.L // self.c_q

    @property
    def Lk(self) -> int:
        return self.L // self.c_k

    @property
    def q_per_block(self) -> int:
        return self.S // self.c_q

    @property
    def k_per_block(self) -> int:
        return self.S // self.c_k

    def block_tokens(self, i: int) -> range:
        return range(i * self.S, (i + 1) * self.S)

    def query_region(self, i: int) -> range:
        """Composite query indices t' with floor(t' * c_q / S) == i."""
        n = self.q_per_block
        return range(i * n, (i + 1) * n)

    def key_region(self, j: int) -> range:
        n = self.k_per_block
        return range(j * n, (j + 1) * n)

    def query_tokens(self, t: int) -> range:
        return range(t * self.c_q, (t + 1) * self.c_q)

    def key_tokens(self, s: int) -> range:
        return range(s * self.c_k, (s + 1) * self.c_k)

    def token_index(self, block: int, offset: int) -> int:
        return block * self.S + offset

    def split_token(self, token: int) -> tuple[int, int]:
        return divmod(token, self.S)


class ProxyTag(str, Enum):
    UNISPARSE = "unisparse"
    ANTIDIAGONAL = "antidiagonal"
    LAST_BLOCK_PROBE = "last_block_probe"
