"""Dynamic block-sparse attention via compressed-space proxy scoring."""

from .attention import (
    AttentionOutput,
    block_sparse_attention,
    dense_attention,
    dense_reference,
    exact_block_mass,
    unisparse_attn,
    unisparse_scores,
)
from .baselines import antidiagonal_block_scores, last_block_probe_scores
from .compression import CompressedViews, compress, pool_heads, pool_sequence
from .core import (
    AttentionInputs,
    BlockGeometry,
    CausalMode,
    CompressionConfig,
    PoolStrategy,
    ProxyTag,
    ValidationError,
    ValidationResult,
    validate_inputs,
)
from .metrics import (
    FlopBreakdown,
    SparsityReport,
    block_recall,
    output_fidelity,
    planted_recall,
    row_spearman,
    selection_flops,
    sparsity_ratio,
    spearman_rho,
)
from .scoring import BlockScoreMatrix, CompressedAttention, block_aggregate, compressed_attention
from .selection import BlockMask, build_block_mask, top_p_row
from .workloads import Workload, gen_workload

__version__ = "0.1.0"
