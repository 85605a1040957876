"""Deterministic synthetic Q/K/V with known important key blocks.

Every random slice comes from a Philox stream keyed by
``(seed, kind, head, block, role)``, so any head or block can be regenerated
alone and parallel generation is order-independent.

Planted workloads are built in logit units (``q . k / sqrt(d_k)``):

* block-level background: each query/key block carries a latent vector;
  latent pairs give logits with std ``background``;
* smooth within-sequence variation with std ``smooth`` and correlation length
  ``corr_len`` tokens, which is what pooling gradually washes out;
* for each query block, a unit direction shared with the keys of its planted
  key blocks, adding ``gain`` to those logits;
* i.i.d. token noise of scale ``sigma``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .core import AttentionInputs
from .tensor_io import dump_qkv, load_qkv

KINDS = ("gaussian", "planted_blocks", "locality_shift")

DEFAULT_PARAMS = {
    "sigma": 0.1,
    "gain": 4.0,
    "m": 3,
    "background": 0.8,
    "smooth": 0.6,
    "corr_len": 8.0,
}

_ROLE = {"q": 0, "k": 1, "v": 2, "q_latent": 3, "k_latent": 4, "q_smooth": 5,
         "k_smooth": 6, "direction": 7, "plant": 8, "q_noise": 9, "k_noise": 10, "basis": 11}


@dataclass
class Workload:
    inputs: AttentionInputs
    kind: str
    seed: int
    params: dict = field(default_factory=dict)
    planted: list | None = None  # planted[h][i] = sorted key blocks for query block i

    def sidecar(self) -> dict:
        inp = self.inputs
        return {
            "kind": self.kind,
            "seed": self.seed,
            "L": inp.L,
            "H": inp.H,
            "d_k": inp.d_k,
            "S": inp.S,
            "params": self.params,
            "planted": self.planted,
        }

    def save(self, directory) -> Path:
        directory = Path(directory)
        dump_qkv(directory, self.inputs.Q, self.inputs.K, self.inputs.V)
        path = directory / "workload.json"
        path.write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def load(cls, directory) -> "Workload":
        directory = Path(directory)
        meta = json.loads((directory / "workload.json").read_text())
        Q, K, V = load_qkv(directory)
        return cls(
            AttentionInputs(Q, K, V, meta["S"]),
            meta.get("kind", "file"),
            int(meta.get("seed", 0)),
            meta.get("params", {}),
            meta.get("planted"),
        )


def _rng(seed: int, kind: str, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(KINDS.index(kind), *map(int, key)))
    return np.random.Generator(np.random.Philox(ss))


def _normal_blocks(seed, kind, h, role, N, S, d) -> np.ndarray:
    """(N*S, d) standard normals generated block by block."""
    return np.concatenate(
        [_rng(seed, kind, h, b, _ROLE[role]).standard_normal((S, d)) for b in range(N)]
    )


def _smooth_process(seed, kind, h, role, N, S, d, corr_len) -> np.ndarray:
    white = _normal_blocks(seed, kind, h, role, N, S, d)
    if corr_len <= 0:
        return white
    sm = gaussian_filter1d(white, sigma=corr_len, axis=0, mode="nearest")
    return sm / sm.std(axis=0, keepdims=True)


def _planted_sets(seed, kind, h, N, m, rng_role="plant"):
    sets = []
    if kind == "locality_shift":
        last_pool = np.arange(1, N) if N > 1 else np.arange(N)
        r = _rng(seed, kind, h, N - 1, _ROLE[rng_role])
        last = np.sort(r.choice(last_pool, size=min(m, last_pool.size), replace=False))
        banned = set(last.tolist())
    for i in range(N):
        if kind == "locality_shift" and i == N - 1:
            sets.append([int(j) for j in last])
            continue
        pool = np.arange(i + 1)
        if kind == "locality_shift":
            pool = np.array([j for j in pool if j not in banned], dtype=np.int64)
        r = _rng(seed, kind, h, i, _ROLE[rng_role])
        pick = r.choice(pool, size=min(m, pool.size), replace=False) if pool.size else []
        sets.append(sorted(int(j) for j in pick))
    return sets


def _planted_head(seed, kind, h, N, S, d, p):
    L = N * S
    basis, _ = np.linalg.qr(_rng(seed, kind, h, 0, _ROLE["basis"]).standard_normal((d, d)))
    d_plant = max(1, d // 2)
    plant_basis, bg_basis = basis[:, :d_plant], basis[:, d_plant:]
    d_bg = bg_basis.shape[1]

    # One planting direction per key block: orthonormal when they fit.
    if N <= d_plant:
        key_dirs = plant_basis[:, :N].T
    else:
        raw = np.stack([_rng(seed, kind, h, j, _ROLE["direction"]).standard_normal(d_plant) for j in range(N)])
        key_dirs = (raw / np.linalg.norm(raw, axis=1, keepdims=True)) @ plant_basis.T
    planted = _planted_sets(seed, kind, h, N, int(p["m"]))
    query_dirs = np.zeros((N, d))
    for i, blocks in enumerate(planted):
        query_dirs[i] = key_dirs[blocks].sum(axis=0)
    g = np.sqrt(p["gain"]) * d ** 0.25

    def _bg_amp(logit_std):
        # x . y over d_bg standard normals has std sqrt(d_bg); rescale to logit_std.
        return np.sqrt(logit_std * np.sqrt(d) / np.sqrt(d_bg)) if d_bg else 0.0

    a_bg, a_sm = _bg_amp(p["background"]), _bg_amp(p["smooth"])
    q_lat = np.stack([_rng(seed, kind, h, i, _ROLE["q_latent"]).standard_normal(d_bg) for i in range(N)])
    k_lat = np.stack([_rng(seed, kind, h, j, _ROLE["k_latent"]).standard_normal(d_bg) for j in range(N)])
    q_sm = _smooth_process(seed, kind, h, "q_smooth", N, S, d_bg, p["corr_len"])
    k_sm = _smooth_process(seed, kind, h, "k_smooth", N, S, d_bg, p["corr_len"])

    blocks = np.arange(L) // S
    q = g * query_dirs[blocks] + (a_bg * q_lat[blocks] + a_sm * q_sm) @ bg_basis.T
    k = g * key_dirs[blocks] + (a_bg * k_lat[blocks] + a_sm * k_sm) @ bg_basis.T
    q += p["sigma"] * _normal_blocks(seed, kind, h, "q_noise", N, S, d)
    k += p["sigma"] * _normal_blocks(seed, kind, h, "k_noise", N, S, d)
    v = _normal_blocks(seed, kind, h, "v", N, S, d)
    return q, k, v, planted


def gen_workload(kind: str, L: int, H: int, d_k: int, S: int, seed: int = 0, params=None) -> Workload:
    if kind not in KINDS:
        raise ValueError(f"unknown workload kind {kind!r}; expected one of {KINDS}")
    if L % S:
        raise ValueError(f"L={L} not divisible by S={S}")
    N = L // S
    if kind == "gaussian":
        Q, K, V = (
            np.stack([_normal_blocks(seed, kind, h, role, N, S, d_k) for h in range(H)])
            for role in ("q", "k", "v")
        )
        return Workload(AttentionInputs(Q, K, V, S), kind, int(seed), dict(params or {}))

    p = {**DEFAULT_PARAMS, **(params or {})}
    if int(p["m"]) < 1 or int(p["m"]) > N:
        raise ValueError(f"m={p['m']} planted blocks exceeds the {N} causal blocks available")
    heads = [_planted_head(seed, kind, h, N, S, d_k, p) for h in range(H)]
    Q, K, V = (np.stack([hd[r] for hd in heads]) for r in range(3))
    planted = [hd[3] for hd in heads]
    return Workload(AttentionInputs(Q, K, V, S), kind, int(seed), p, planted)
