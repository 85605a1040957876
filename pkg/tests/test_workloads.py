import numpy as np
import pytest

from unisparse import Workload, block_recall, exact_block_mass, gen_workload
from unisparse.selection import BlockMask


def test_gaussian_is_deterministic():
    a = gen_workload("gaussian", 256, 2, 16, 64, seed=7)
    b = gen_workload("gaussian", 256, 2, 16, 64, seed=7)
    assert a.inputs.Q.tobytes() == b.inputs.Q.tobytes() and a.planted is None
    c = gen_workload("gaussian", 256, 2, 16, 64, seed=8)
    assert a.inputs.Q.tobytes() != c.inputs.Q.tobytes()


def test_head_slices_are_independent_of_head_count():
    a = gen_workload("planted_blocks", 512, 1, 32, 128, seed=3)
    b = gen_workload("planted_blocks", 512, 3, 32, 128, seed=3)
    assert a.inputs.K[0].tobytes() == b.inputs.K[0].tobytes()


def _planted_top_m_recall(wl, m):
    mass = exact_block_mass(wl.inputs)
    mask = np.zeros(mass.scores.shape, bool)
    for h, rows in enumerate(wl.planted):
        for i, blocks in enumerate(rows):
            mask[h, i, blocks] = True
    top = []
    for h in range(mass.heads):
        for i in range(mass.N):
            k = len(wl.planted[h][i])
            ids = np.argsort(-mass.row(h, i), kind="stable")[:k]
            top.append(set(ids.tolist()) == set(wl.planted[h][i]))
    return np.mean(top), block_recall(BlockMask(mask, 1.0), mass, m)


def test_high_gain_top_m_equals_planted():
    wl = gen_workload("planted_blocks", 1024, 2, 64, 128, seed=0, params={"gain": 100.0})
    exact_sets, _ = _planted_top_m_recall(wl, 3)
    assert exact_sets == 1.0


@pytest.mark.parametrize("L", [1024, 4096])
def test_default_generator_oracle_recall(L):
    wl = gen_workload("planted_blocks", L, 2, 64, 128, seed=1)
    _, recall = _planted_top_m_recall(wl, 3)
    assert recall >= 0.95


def test_planted_sets_are_causal():
    wl = gen_workload("planted_blocks", 1024, 2, 32, 128, seed=2)
    for rows in wl.planted:
        for i, blocks in enumerate(rows):
            assert len(blocks) == min(3, i + 1) and all(0 <= j <= i for j in blocks)


def test_locality_shift_disjoint_from_last_row():
    wl = gen_workload("locality_shift", 2048, 2, 64, 128, seed=4)
    for rows in wl.planted:
        last = set(rows[-1])
        assert not (set(rows[0]) & last)
        assert all(not (set(r) & last) for r in rows[:-1])


def test_errors():
    with pytest.raises(ValueError, match="kind"):
        gen_workload("nope", 256, 1, 8, 128)
    with pytest.raises(ValueError, match="divisible"):
        gen_workload("gaussian", 200, 1, 8, 128)
    with pytest.raises(ValueError, match="m="):
        gen_workload("planted_blocks", 256, 1, 8, 128, params={"m": 3})


def test_save_load_round_trip(tmp_path):
    wl = gen_workload("planted_blocks", 512, 2, 16, 128, seed=5)
    wl.save(tmp_path)
    back = Workload.load(tmp_path)
    assert back.inputs.V.tobytes() == wl.inputs.V.tobytes()
    assert back.planted == wl.planted and back.kind == wl.kind and back.params == wl.params
