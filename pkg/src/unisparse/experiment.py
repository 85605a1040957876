"""Grid experiments: workload x compression grid x proxy -> JSON records + CSV."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import AttentionOutput, block_sparse_attention, dense_reference, unisparse_scores
from .baselines import antidiagonal_block_scores, last_block_probe_scores
from .core import BlockGeometry, CausalMode, CompressionConfig, ProxyTag, validate_inputs
from .metrics import (
    block_recall,
    make_report,
    output_fidelity,
    planted_recall,
    row_spearman,
)
from .scoring import BlockScoreMatrix
from .selection import build_block_mask
from .workloads import Workload, gen_workload

SCHEMA_VERSION = 1
WORKERS_ENV = "UNISPARSE_WORKERS"

CSV_COLUMNS = [
    "proxy", "c_q", "c_k", "c_h", "strategy", "P", "rho", "spearman", "recall",
    "max_abs", "cosine", "selection_flops", "attention_flops",
    # extras after the fixed columns
    "run_id", "causal_mode", "planted_recall", "mean_rel",
]

GRID_KEYS = ("c_q", "c_k", "c_h", "strategy", "P", "causal_mode")


class ConfigError(ValueError):
    """Malformed experiment config (exit code 2)."""


class ExperimentValidationError(ValueError):
    """A grid point fails input validation (exit code 3)."""


@dataclass
class ExperimentConfig:
    workload: dict
    grid: list[CompressionConfig]
    proxies: list[ProxyTag]
    out: Path
    stride: int = 8
    recall_k: int = 3
    metrics: list[str] = field(default_factory=lambda: ["rho", "spearman", "recall", "fidelity", "flops"])


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def expand_grid(grid: dict, seed: int = 0) -> list[CompressionConfig]:
    """Cartesian product over grid axes; ``c`` is shorthand for ``c_q = c_k = c``."""
    grid = dict(grid or {})
    unknown = set(grid) - set(GRID_KEYS) - {"c"}
    if unknown:
        raise ConfigError(f"unknown grid keys: {sorted(unknown)}")
    if "c" in grid:
        if "c_q" in grid or "c_k" in grid:
            raise ConfigError("grid may use 'c' or 'c_q'/'c_k', not both")
        pairs = [(c, c) for c in _as_list(grid.pop("c"))]
    else:
        pairs = list(itertools.product(_as_list(grid.pop("c_q", 8)), _as_list(grid.pop("c_k", 8))))
    axes = [
        _as_list(grid.get("c_h", 1)),
        _as_list(grid.get("strategy", "mean")),
        _as_list(grid.get("P", 0.95)),
        _as_list(grid.get("causal_mode", CausalMode.POST_SOFTMAX_BLOCK.value)),
    ]
    out = []
    try:
        for (c_q, c_k), c_h, strategy, P, mode in itertools.product(pairs, *axes):
            out.append(CompressionConfig(c_q, c_k, c_h, strategy, P, mode, seed))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad grid value: {exc}") from exc
    return out


def parse_config(doc: dict, overrides: dict | None = None) -> ExperimentConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    doc = json.loads(json.dumps(doc))
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}")
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    workload = doc.get("workload")
    if "workload" in overrides:
        w = overrides["workload"]
        workload = {"path": w} if Path(w).is_dir() else {**(workload or {}), "kind": w}
    if not isinstance(workload, dict) or not ({"kind", "path"} & set(workload)):
        raise ConfigError("config needs a workload with 'kind' or 'path'")
    if "seed" in overrides:
        workload = {**workload, "seed": int(overrides["seed"])}
    grid = doc.get("grid", {})
    if "grid" in overrides:
        g = overrides["grid"]
        try:
            grid = json.loads(Path(g).read_text()) if Path(g).is_file() else json.loads(g)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"--grid is not valid JSON: {exc}") from exc
    if not isinstance(grid, dict):
        raise ConfigError("grid must be an object of axis -> values")
    proxies = overrides.get("proxies", doc.get("proxies", ["unisparse"]))
    if isinstance(proxies, str):
        proxies = [p for p in proxies.split(",") if p]
    try:
        proxies = [ProxyTag(p) for p in proxies]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = overrides.get("out", doc.get("out", "results"))
    try:
        stride = int(doc.get("stride", 8))
        recall_k = int(doc.get("recall_k", 3))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return ExperimentConfig(
        workload=workload,
        grid=expand_grid(grid, int(workload.get("seed", 0))),
        proxies=proxies,
        out=Path(out),
        stride=stride,
        recall_k=recall_k,
        metrics=list(doc.get("metrics", ["rho", "spearman", "recall", "fidelity", "flops"])),
    )


def load_config(path, overrides=None) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(doc, overrides)


def materialize_workload(wspec: dict) -> Workload:
    if "path" in wspec:
        return Workload.load(wspec["path"])
    try:
        return gen_workload(
            wspec["kind"], int(wspec.get("L", 2048)), int(wspec.get("H", 2)),
            int(wspec.get("d_k", 64)), int(wspec.get("S", 128)), int(wspec.get("seed", 0)),
            wspec.get("params"),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad workload description: {exc}") from exc


def content_hash(wl: Workload) -> str:
    h = hashlib.sha256()
    inp = wl.inputs
    for x in (inp.Q, inp.K, inp.V):
        h.update(np.ascontiguousarray(x).tobytes())
    h.update(str((inp.S, inp.Q.shape)).encode())
    return h.hexdigest()


def cached_oracle(wl: Workload, cache_dir) -> tuple[AttentionOutput, BlockScoreMatrix]:
    """Dense output and exact causal block mass, cached on disk by content hash."""
    cache_dir = Path(cache_dir)
    path = cache_dir / f"oracle_{content_hash(wl)[:32]}.npz"
    geom = BlockGeometry(wl.inputs.L, wl.inputs.S)
    if path.exists():
        with np.load(path) as z:
            return AttentionOutput(z["O"], z["lse"]), BlockScoreMatrix(z["mass"], geom)
    out, mass = dense_reference(wl.inputs)
    cache_dir.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + f".{os.getpid()}.tmp.npz")
    np.savez(tmp, O=out.O, lse=out.lse, mass=mass.scores)
    os.replace(tmp, path)
    return out, mass


def proxy_scores(wl: Workload, cfg: CompressionConfig, proxy: ProxyTag, stride: int = 8) -> BlockScoreMatrix:
    if proxy is ProxyTag.UNISPARSE:
        return unisparse_scores(wl.inputs, cfg)
    if proxy is ProxyTag.ANTIDIAGONAL:
        return antidiagonal_block_scores(wl.inputs, stride=stride, causal_mode=cfg.causal_mode)
    return last_block_probe_scores(wl.inputs)


def evaluate_point(wl, cfg, proxy, oracle, mass, stride=8, recall_k=3, scores=None) -> dict:
    """Mask, sparse output and every metric for one (grid point, proxy)."""
    proxy = ProxyTag(proxy)
    if scores is None:
        scores = proxy_scores(wl, cfg, proxy, stride)
    c_h = cfg.c_h if proxy is ProxyTag.UNISPARSE else 1
    mask = build_block_mask(scores, cfg.P, c_h, wl.inputs.H)
    out = block_sparse_attention(wl.inputs, mask)
    report_cfg = cfg if proxy is ProxyTag.UNISPARSE else CompressionConfig(1, 1, 1, P=cfg.P)
    report = make_report(mask, scores, wl.inputs, report_cfg, proxy, stride=stride)
    fid = output_fidelity(out.O, oracle.O)
    sp = row_spearman(scores, mass)
    k = min(int(recall_k), mass.N)
    return {
        "proxy": proxy.value,
        "c_q": cfg.c_q if proxy is ProxyTag.UNISPARSE else "",
        "c_k": cfg.c_k if proxy is ProxyTag.UNISPARSE else "",
        "c_h": c_h,
        "strategy": cfg.strategy.value if proxy is ProxyTag.UNISPARSE else "",
        "P": cfg.P,
        "causal_mode": cfg.causal_mode.value,
        "rho": report.rho_mean,
        "rho_per_head": [float(r) for r in report.rho],
        "spearman": float(np.nanmean(sp)) if np.isfinite(sp).any() else float("nan"),
        "recall": block_recall(mask, mass, k),
        "planted_recall": planted_recall(mask, wl.planted) if wl.planted else float("nan"),
        "max_abs": fid["max_abs"],
        "mean_rel": fid["mean_rel"],
        "cosine": fid["cosine"],
        "cosine_per_head": fid["cosine_per_head"],
        "min_coverage": float(report.coverage.min()),
        "selection_flops": report.flops.selection,
        "attention_flops": report.flops.sparse_attention,
        "flops": report.flops.to_dict(),
    }


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(records: list[dict], path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            w.writerow(_fmt(r.get(c, "")) for c in CSV_COLUMNS)
    return path


def aggregate(out_dir) -> Path:
    """Collect per-run records into ``runs.csv`` (sorted by run id)."""
    out_dir = Path(out_dir)
    records = [json.loads(p.read_text()) for p in sorted((out_dir / "records").glob("*.json"))]
    records.sort(key=lambda r: r["run_id"])
    return write_csv(records, out_dir / "runs.csv")


# Worker state for the process pool: one workload and oracle per process.
_WORKER: dict = {}


def _init_worker(wspec, cache_dir):
    wl = materialize_workload(wspec)
    _WORKER["wl"] = wl
    _WORKER["oracle"] = cached_oracle(wl, cache_dir)


def _run_one(job):
    run_id, cfg_dict, proxy, stride, recall_k, records_dir = job
    wl = _WORKER["wl"]
    oracle, mass = _WORKER["oracle"]
    rec = evaluate_point(wl, CompressionConfig(**cfg_dict), proxy, oracle, mass, stride, recall_k)
    rec["run_id"] = run_id
    rec["workload"] = {"kind": wl.kind, "seed": wl.seed, "L": wl.inputs.L, "H": wl.inputs.H,
                       "d_k": wl.inputs.d_k, "S": wl.inputs.S}
    Path(records_dir, f"{run_id}.json").write_text(json.dumps(rec, indent=1, sort_keys=True) + "\n")
    return run_id


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> Path:
    """Execute every grid point x proxy; returns the aggregate CSV path."""
    wl = materialize_workload(config.workload)
    for cfg in config.grid:
        res = validate_inputs(wl.inputs, cfg)
        if not res.ok:
            raise ExperimentValidationError(f"grid point {cfg.to_dict()}: {'; '.join(res.errors)}")
    if ProxyTag.ANTIDIAGONAL in config.proxies and wl.inputs.S % config.stride:
        raise ExperimentValidationError(f"S={wl.inputs.S} not divisible by stride={config.stride}")
    out = Path(config.out)
    records_dir = out / "records"
    records_dir.mkdir(parents=True, exist_ok=True)
    for stale in records_dir.glob("*.json"):
        stale.unlink()
    cache_dir = out / "cache"
    wspec = {"path": config.workload["path"]} if "path" in config.workload else config.workload

    jobs = []
    for idx, cfg in enumerate(config.grid):
        for proxy in config.proxies:
            run_id = f"{idx:04d}_{proxy.value}"
            jobs.append((run_id, cfg.to_dict(), proxy.value, config.stride, config.recall_k, str(records_dir)))

    started = time.time()
    workers = workers or int(os.environ.get(WORKERS_ENV, "1") or 1)
    if workers > 1:
        cached_oracle(wl, cache_dir)
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(wspec, str(cache_dir))) as ex:
            list(ex.map(_run_one, jobs))
    else:
        _WORKER["wl"] = wl
        _WORKER["oracle"] = cached_oracle(wl, cache_dir)
        for job in jobs:
            _run_one(job)
    path = aggregate(out)
    meta = {
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "elapsed_s": round(time.time() - started, 3),
        "workers": workers,
        "runs": len(jobs),
        "synthetic_workload": "path" not in config.workload,
    }
    (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n")
    return path
