import numpy as np
import pytest
from hypothesis import given, strategies as st

from unisparse import AttentionInputs, BlockGeometry, CompressionConfig, ValidationError, validate_inputs
from unisparse.core import NEG_INF

from conftest import random_inputs


def test_valid_config_passes():
    inp = random_inputs(L=256, H=4, d=8, S=128)
    res = validate_inputs(inp, CompressionConfig(8, 8, 1))
    assert res.ok and bool(res)


def test_length_not_divisible_by_block():
    inp = random_inputs(L=100, H=1, d=4, S=128)
    res = validate_inputs(inp, CompressionConfig(8, 8, 1))
    assert any("L not divisible by S" in e for e in res.errors)
    with pytest.raises(ValidationError):
        res.raise_for_errors()


def test_p_zero_rejected():
    res = validate_inputs(random_inputs(L=256, S=128), CompressionConfig(8, 8, 1, P=0.0))
    assert any("P out of (0,1]" in e for e in res.errors)


@pytest.mark.parametrize(
    "cfg, fragment",
    [
        (CompressionConfig(3, 8, 1), "S not divisible by c_q"),
        (CompressionConfig(8, 5, 1), "S not divisible by c_k"),
        (CompressionConfig(8, 8, 3), "H not divisible by c_h"),
        (CompressionConfig(8, 8, 1, P=1.5), "P out of (0,1]"),
    ],
)
def test_divisibility_errors(cfg, fragment):
    res = validate_inputs(random_inputs(L=256, H=4, d=4, S=128), cfg)
    assert any(fragment in e for e in res.errors)


def test_non_finite_reported():
    Q = np.zeros((1, 128, 4))
    Q[0, 3, 1] = np.nan
    inp = AttentionInputs(Q, np.zeros_like(Q), np.zeros_like(Q), 128)
    res = validate_inputs(inp, CompressionConfig(8, 8, 1))
    assert any("Q contains non-finite" in e for e in res.errors)


def test_inputs_are_read_only_float32():
    inp = random_inputs()
    assert inp.Q.dtype == np.float32 and not inp.Q.flags.writeable
    with pytest.raises(ValueError):
        AttentionInputs(np.zeros((1, 8, 4)), np.zeros((1, 8, 3)), np.zeros((1, 8, 4)), 4)


def test_two_dim_promoted_to_single_head():
    x = np.ones((16, 4))
    inp = AttentionInputs(x, x, x, 8)
    assert (inp.H, inp.L, inp.d_k, inp.N) == (1, 16, 4, 2)


def test_neg_inf_is_finite_float32_min():
    assert np.isfinite(NEG_INF) and NEG_INF == np.finfo(np.float32).min


@given(
    N=st.integers(1, 6),
    log_s=st.integers(0, 5),
    log_cq=st.integers(0, 5),
    log_ck=st.integers(0, 5),
)
def test_geometry_maps_are_bijective(N, log_s, log_cq, log_ck):
    S = 2 ** log_s
    c_q, c_k = 2 ** min(log_cq, log_s), 2 ** min(log_ck, log_s)
    g = BlockGeometry(N * S, S, c_q, c_k)
    tokens = [g.token_index(*g.split_token(t)) for t in range(g.L)]
    assert tokens == list(range(g.L))
    # Regions tile the composite axes exactly once.
    q_cover = sorted(t for i in range(g.N) for t in g.query_region(i))
    k_cover = sorted(s for j in range(g.N) for s in g.key_region(j))
    assert q_cover == list(range(g.Lq)) and k_cover == list(range(g.Lk))
    # Composite tokens tile each block.
    for i in range(g.N):
        covered = [x for t in g.query_region(i) for x in g.query_tokens(t)]
        assert covered == list(g.block_tokens(i))
        covered = [x for s in g.key_region(i) for x in g.key_tokens(s)]
        assert covered == list(g.block_tokens(i))
