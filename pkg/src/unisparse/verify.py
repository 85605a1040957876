"""Acceptance checks shared by the ``verify`` subcommand and the test suite.

Each check returns a :class:`CheckResult` whose ``rows`` are flat
``(check, value, threshold, passed)`` records; ``write_metrics_csv`` turns a
list of results into a deterministic CSV.
"""

from __future__ import annotations

import csv
import itertools
import time
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .attention import block_sparse_attention, dense_reference, unisparse_attn, unisparse_scores
from .baselines import last_block_probe_scores
from .core import CausalMode, CompressionConfig, ProxyTag
from .metrics import (
    block_recall,
    output_fidelity,
    planted_recall,
    row_spearman,
    selection_flops,
    sparsity_ratio,
)
from .selection import BlockMask, build_block_mask, mask_from_scores, row_coverage
from .workloads import gen_workload

PRE = CausalMode.PRE_SOFTMAX_COMPRESSED
POST = CausalMode.POST_SOFTMAX_BLOCK


@dataclass
class CheckResult:
    criterion: int
    name: str
    rows: list = field(default_factory=list)
    elapsed: float = 0.0

    def add(self, check: str, value, threshold, passed: bool):
        self.rows.append((check, value, threshold, bool(passed)))

    @property
    def passed(self) -> bool:
        return bool(self.rows) and all(r[3] for r in self.rows)

    def line(self) -> str:
        worst = [r for r in self.rows if not r[3]]
        detail = f"{len(self.rows)} checks" if not worst else f"failed: {worst[0][0]}={worst[0][1]!r}"
        return f"[{'PASS' if self.passed else 'FAIL'}] criterion {self.criterion}: {self.name} ({detail})"


def _r(x: float, nd: int = 6) -> float:
    return round(float(x), nd)


def c1_oracle_equivalence(scale="full") -> CheckResult:
    res = CheckResult(1, "P=1.0 matches dense oracle, max abs <= 1e-5")
    combos = list(itertools.product((256, 1024, 4096), (1, 4), (32, 64)))
    n = 50 if scale == "full" else 6
    if scale != "full":
        combos = [c for c in combos if c[0] <= 1024]
    cs = (4, 8, 16)
    worst = 0.0
    t0 = time.time()
    for k in range(n):
        L, H, d = combos[k % len(combos)]
        wl = gen_workload("gaussian", L, H, d, 128, seed=1000 + k)
        c = cs[k % len(cs)]
        out, rep = unisparse_attn(wl.inputs, CompressionConfig(c, c, 1, P=1.0))
        ref, _ = dense_reference(wl.inputs, with_block_mass=False)
        err = float(np.max(np.abs(out.O.astype(np.float64) - ref.O)))
        worst = max(worst, err)
        if rep.rho_mean != 0.0:
            res.add(f"instance{k}_rho", rep.rho_mean, 0.0, False)
    elapsed = time.time() - t0
    res.add("worst_max_abs", worst, 1e-5, worst <= 1e-5)
    res.add("instances", n, n, True)
    if scale == "full":
        res.add("runtime_s_le_300", "ok" if elapsed <= 300 else "slow", 300, elapsed <= 300)
    return res


def c2_identity_compression(scale="full") -> CheckResult:
    res = CheckResult(2, "c=1 scores equal exact block mass; masks match oracle masks")
    n = 20 if scale == "full" else 4
    worst = {POST: 0.0, PRE: 0.0}
    mismatches = 0
    for k in range(n):
        L = (256, 512, 1024)[k % 3]
        H, d = (1, 2, 4)[k % 3], (32, 64)[k % 2]
        wl = gen_workload("gaussian", L, H, d, 128, seed=2000 + k)
        for mode, causal in ((POST, False), (PRE, True)):
            cfg = CompressionConfig(1, 1, 1, causal_mode=mode)
            sc = unisparse_scores(wl.inputs, cfg)
            _, mass = dense_reference(wl.inputs, causal=causal)
            tril = np.tril(np.ones((sc.N, sc.N), dtype=bool))
            worst[mode] = max(worst[mode], float(np.max(np.abs(sc.scores - mass.scores)[:, tril])))
            for P in (0.5, 0.7, 0.9, 0.95):
                if not np.array_equal(mask_from_scores(sc.scores, P), mask_from_scores(mass.scores, P)):
                    mismatches += 1
    res.add("max_abs_score_vs_noncausal_mass(post)", worst[POST], 1e-6, worst[POST] <= 1e-6)
    res.add("max_abs_score_vs_causal_mass(pre)", worst[PRE], 1e-6, worst[PRE] <= 1e-6)
    res.add("mask_mismatches", mismatches, 0, mismatches == 0)
    return res


def _rank_workloads(scale):
    if scale == "full":
        return [(L, s) for L in (2048, 4096) for s in (0, 1)]
    return [(2048, 0)]


def c3_rank_preservation(scale="full") -> CheckResult:
    res = CheckResult(3, "compressed block rankings track exact rankings (c=8), trend in c")
    H = 4 if scale == "full" else 2
    per_c = {c: [] for c in (4, 8, 16, 32)}
    rows8 = []
    for L, seed in _rank_workloads(scale):
        wl = gen_workload("planted_blocks", L, H, 64, 128, seed=3000 + seed)
        _, mass = dense_reference(wl.inputs)
        for c in per_c:
            sp = row_spearman(unisparse_scores(wl.inputs, CompressionConfig(c, c, 1, causal_mode=PRE)), mass)
            per_c[c].append(sp[:, 1:])
            if c == 8:
                rows8.append(sp[:, 1:])
        # Tracked, not gated: the literal post-softmax mode against the causal oracle.
        sp_post = row_spearman(unisparse_scores(wl.inputs, CompressionConfig(8, 8, 1)), mass)
        res.add(f"info_post_mode_spearman_L{L}_s{seed}", _r(np.nanmean(sp_post)), "", True)
    means = {c: float(np.nanmean(np.concatenate([x.ravel() for x in v]))) for c, v in per_c.items()}
    # Row index i spans different N across lengths; align on the shared leading rows per length.
    per_row = {}
    for block in rows8:
        for i in range(block.shape[1]):
            per_row.setdefault(i + 1, []).extend(block[:, i].tolist())
    row_means = {i: float(np.nanmean(v)) for i, v in per_row.items()}
    worst_row = min(row_means, key=row_means.get)
    res.add("min_per_row_mean_spearman_c8", _r(row_means[worst_row]), 0.90, row_means[worst_row] >= 0.90)
    res.add("mean_spearman_c8", _r(means[8]), 0.95, means[8] >= 0.95)
    for a, b in ((4, 8), (8, 16), (16, 32)):
        res.add(f"trend_c{a}_ge_c{b}", f"{_r(means[a])}>={_r(means[b])}", "", means[a] >= means[b])
    return res


def c4_sparsity_monotonicity(scale="full") -> CheckResult:
    res = CheckResult(4, "rho non-increasing in P, coverage >= P, rho(1.0) == 0")
    Ps = (0.7, 0.8, 0.9, 0.95, 1.0)
    cases = [("planted_blocks", 2048, 2), ("gaussian", 1024, 4)]
    if scale != "full":
        cases = [("planted_blocks", 1024, 2)]
    for kind, L, H in cases:
        wl = gen_workload(kind, L, H, 64, 128, seed=4000)
        sc = unisparse_scores(wl.inputs, CompressionConfig(8, 8, 1))
        rhos, min_cov_margin = [], np.inf
        for P in Ps:
            mask = build_block_mask(sc, P)
            rhos.append(float(sparsity_ratio(mask).mean()))
            min_cov_margin = min(min_cov_margin, float((row_coverage(mask, sc) - P).min()))
        mono = all(a >= b for a, b in zip(rhos, rhos[1:]))
        res.add(f"{kind}_rho_nonincreasing", "/".join(repr(_r(r)) for r in rhos), "", mono)
        res.add(f"{kind}_min_coverage_minus_P", _r(min_cov_margin, 9), 0.0, min_cov_margin >= 0.0)
        res.add(f"{kind}_rho_at_P1", rhos[-1], 0.0, rhos[-1] == 0.0)
    return res


def c5_output_fidelity(scale="full") -> CheckResult:
    res = CheckResult(5, "cosine vs dense and planted recall at c=8, P in {0.9, 0.95}")
    cases = _rank_workloads(scale)
    H = 4 if scale == "full" else 2
    cos = {0.95: [], 0.9: []}
    rec = []
    for L, seed in cases:
        wl = gen_workload("planted_blocks", L, H, 64, 128, seed=5000 + seed)
        ref, _ = dense_reference(wl.inputs, with_block_mass=False)
        for P in cos:
            out, rep = unisparse_attn(wl.inputs, CompressionConfig(8, 8, 1, P=P))
            cos[P].append(output_fidelity(out.O, ref.O)["cosine"])
            if P == 0.95:
                rec.append(planted_recall(rep.mask, wl.planted))
    res.add("mean_cosine_P0.95", _r(np.mean(cos[0.95])), 0.99, np.mean(cos[0.95]) >= 0.99)
    res.add("planted_recall_P0.95", _r(np.mean(rec)), 0.95, np.mean(rec) >= 0.95)
    res.add("mean_cosine_P0.9", _r(np.mean(cos[0.9])), 0.98, np.mean(cos[0.9]) >= 0.98)
    return res


def match_sparsity(scores, target: float, tol: float = 0.02, c_h: int = 1, H: int | None = None, iters: int = 60):
    """Bisect P so the mask's mean sparsity lands within ``tol`` of ``target``.

    Returns ``(P, rho, mask)`` for the closest point found.
    """
    lo, hi = 0.0, 1.0
    best = None
    for _ in range(iters):
        P = (lo + hi) / 2
        mask = build_block_mask(scores, P, c_h, H)
        rho = float(sparsity_ratio(mask).mean())
        if best is None or abs(rho - target) < abs(best[1] - target):
            best = (P, rho, mask)
        if abs(rho - target) <= tol:
            break
        if rho > target:
            lo = P
        else:
            hi = P
    return best


def c6_baseline_separation(scale="full") -> CheckResult:
    res = CheckResult(6, "unisparse recall > last-block probe at matched sparsity (locality shift)")
    seeds = range(20) if scale == "full" else range(4)
    wins, matched = 0, 0
    gaps = []
    for s in seeds:
        wl = gen_workload("locality_shift", 2048, 2, 64, 128, seed=6000 + s)
        _, mass = dense_reference(wl.inputs)
        _, rep = unisparse_attn(wl.inputs, CompressionConfig(8, 8, 1, P=0.9))
        _, rho_p, mask_p = match_sparsity(last_block_probe_scores(wl.inputs), rep.rho_mean)
        ok = abs(rho_p - rep.rho_mean) <= 0.02
        matched += ok
        ru = block_recall(rep.mask, mass, 3)
        rp = block_recall(mask_p, mass, 3)
        gaps.append(ru - rp)
        wins += ok and ru > rp
    frac = wins / len(seeds)
    res.add("fraction_instances_unisparse_wins", _r(frac), 0.90, frac >= 0.90)
    res.add("instances_matched_within_2pp", matched, len(seeds), True)
    res.add("mean_recall_gap", _r(np.mean(gaps)), "", True)
    return res


def c7_flop_model(scale="full") -> CheckResult:
    res = CheckResult(7, "compressed QK FLOPs exact: 2 L^2 h d_k / (c_q c_k c_h)")
    bad_formula, bad_ratio, bad_halving, n = 0, 0, 0, 0
    for L, h, d, cq, ck, ch in itertools.product(
        (1024, 4096, 8192), (2, 4, 8), (32, 64, 128), (1, 2, 4, 8, 16), (1, 2, 4, 8, 16), (1, 2)
    ):
        cfg = CompressionConfig(cq, ck, ch)
        f = selection_flops(L, h, d, 128, cfg, ProxyTag.UNISPARSE)
        n += 1
        num = 2 * L * L * h * d
        bad_formula += num % (cq * ck * ch) != 0 or f.compressed_qk != num // (cq * ck * ch)
        bad_ratio += Fraction(f.compressed_qk, f.dense_attention // 2) != Fraction(1, cq * ck * ch)
        if ch == 1:
            f2 = selection_flops(L, h, d, 128, CompressionConfig(cq, ck, 2), ProxyTag.UNISPARSE)
            bad_halving += 2 * f2.compressed_qk != f.compressed_qk
    res.add("grid_points", n, "", True)
    res.add("formula_mismatches", bad_formula, 0, bad_formula == 0)
    res.add("ratio_mismatches", bad_ratio, 0, bad_ratio == 0)
    res.add("head_halving_mismatches", bad_halving, 0, bad_halving == 0)
    return res


def c8_pooling_ablation(scale="full") -> CheckResult:
    res = CheckResult(8, "mean pooling ranks at least as well as max and stochastic")
    seeds = range(20) if scale == "full" else range(3)
    beats_max = beats_sto = 0
    sums = {"mean": 0.0, "max": 0.0, "stochastic": 0.0}
    for s in seeds:
        wl = gen_workload("planted_blocks", 2048, 2, 64, 128, seed=8000 + s)
        _, mass = dense_reference(wl.inputs)
        sp = {}
        for strat in sums:
            cfg = CompressionConfig(8, 8, 1, strat, P=0.95, causal_mode=PRE, seed=s)
            sp[strat] = float(np.nanmean(row_spearman(unisparse_scores(wl.inputs, cfg), mass)))
            sums[strat] += sp[strat]
        beats_max += sp["mean"] >= sp["max"]
        beats_sto += sp["mean"] >= sp["stochastic"]
    n = len(seeds)
    res.add("fraction_mean_ge_max", _r(beats_max / n), 0.80, beats_max / n >= 0.80)
    res.add("fraction_mean_ge_stochastic", _r(beats_sto / n), 0.80, beats_sto / n >= 0.80)
    for k, v in sums.items():
        res.add(f"avg_spearman_{k}", _r(v / n), "", True)
    return res


CHECKS = {
    1: c1_oracle_equivalence,
    2: c2_identity_compression,
    3: c3_rank_preservation,
    4: c4_sparsity_monotonicity,
    5: c5_output_fidelity,
    6: c6_baseline_separation,
    7: c7_flop_model,
    8: c8_pooling_ablation,
}


def run_checks(criteria=None, scale="full", echo=None) -> list[CheckResult]:
    results = []
    for c in criteria or sorted(CHECKS):
        t0 = time.time()
        r = CHECKS[c](scale)
        r.elapsed = time.time() - t0
        results.append(r)
        if echo:
            echo(r.line())
    return results


def write_metrics_csv(results: list[CheckResult], path) -> Path:
    """Timing is deliberately absent so reruns are byte-identical."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["criterion", "name", "check", "value", "threshold", "passed"])
        for r in results:
            for check, value, thr, ok in r.rows:
                w.writerow([r.criterion, r.name, check,
                            repr(value) if isinstance(value, float) else value,
                            repr(thr) if isinstance(thr, float) else thr, int(ok)])
    return path
