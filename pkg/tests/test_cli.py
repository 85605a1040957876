import csv
import json

import pytest

from unisparse.cli import main
from unisparse.experiment import ConfigError, expand_grid, parse_config


def _rows(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _config(tmp_path, **over):
    doc = {
        "schema_version": 1,
        "workload": {"kind": "planted_blocks", "L": 1024, "H": 2, "d_k": 32, "S": 128, "seed": 0},
        "grid": {"c": [4, 8, 16, 32], "P": 0.95},
        "proxies": ["unisparse"],
        "out": str(tmp_path / "out"),
    }
    doc.update(over)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def test_grid_expansion():
    g = expand_grid({"c": [4, 8], "c_h": [1, 2], "P": [0.9]})
    assert [(x.c_q, x.c_k, x.c_h) for x in g] == [(4, 4, 1), (4, 4, 2), (8, 8, 1), (8, 8, 2)]
    with pytest.raises(ConfigError):
        expand_grid({"c": [4], "c_q": [8]})
    with pytest.raises(ConfigError):
        expand_grid({"bogus": [1]})


def test_degenerate_p_rows(tmp_path):
    cfg = _config(tmp_path, proxies=["unisparse", "antidiagonal", "last_block_probe"])
    assert main(["run", "--config", str(cfg), "--grid", '{"P": 1.0}']) == 0
    rows = _rows(tmp_path / "out" / "runs.csv")
    assert len(rows) == 3
    assert all(float(r["rho"]) == 0.0 and float(r["max_abs"]) <= 1e-5 for r in rows)


def test_granularity_axis_flops_strictly_decrease(tmp_path):
    assert main(["run", "--config", str(_config(tmp_path))]) == 0
    rows = _rows(tmp_path / "out" / "runs.csv")
    assert [int(r["c_q"]) for r in rows] == [4, 8, 16, 32]
    flops = [int(r["selection_flops"]) for r in rows]
    assert all(a > b for a, b in zip(flops, flops[1:]))
    assert (tmp_path / "out" / "metadata.json").exists()


def test_locality_shift_recall_beats_probe(tmp_path):
    cfg = _config(tmp_path, proxies=["unisparse", "last_block_probe"], grid={"c": 8, "P": 0.9},
                  workload={"kind": "locality_shift", "L": 2048, "H": 2, "d_k": 64, "S": 128, "seed": 3})
    assert main(["run", "--config", str(cfg)]) == 0
    rec = {r["proxy"]: float(r["recall"]) for r in _rows(tmp_path / "out" / "runs.csv")}
    assert rec["unisparse"] > rec["last_block_probe"]


def test_rerun_is_byte_identical(tmp_path):
    cfg = _config(tmp_path, grid={"c": [8], "P": [0.9, 0.95], "strategy": ["mean", "stochastic"]})
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "runs.csv").read_bytes() == (tmp_path / "b" / "runs.csv").read_bytes()


def test_workers_match_serial(tmp_path, monkeypatch):
    cfg = _config(tmp_path, grid={"c": [4, 8], "P": 0.9}, proxies=["unisparse", "antidiagonal"])
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "serial")]) == 0
    monkeypatch.setenv("UNISPARSE_WORKERS", "2")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "pool")]) == 0
    assert (tmp_path / "serial" / "runs.csv").read_bytes() == (tmp_path / "pool" / "runs.csv").read_bytes()


def test_report_rebuilds_csv(tmp_path):
    cfg = _config(tmp_path, grid={"c": 8})
    assert main(["run", "--config", str(cfg)]) == 0
    out = tmp_path / "out"
    before = (out / "runs.csv").read_bytes()
    (out / "runs.csv").unlink()
    assert main(["report", str(out)]) == 0
    assert (out / "runs.csv").read_bytes() == before


def test_gen_then_run_from_files(tmp_path):
    wdir = tmp_path / "wl"
    assert main(["gen", "--kind", "planted_blocks", "--L", "512", "--H", "2", "--d-k", "32",
                 "--seed", "1", "--out", str(wdir)]) == 0
    assert {p.name for p in wdir.iterdir()} == {"q.bin", "k.bin", "v.bin", "workload.json"}
    cfg = _config(tmp_path, grid={"c": 8})
    assert main(["run", "--config", str(cfg), "--workload", str(wdir)]) == 0
    rows = _rows(tmp_path / "out" / "runs.csv")
    assert rows[0]["planted_recall"] != "nan"


def test_exit_codes(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["run", "--config", str(bad)]) == 2
    assert main(["run", "--config", str(_config(tmp_path, proxies=["nope"]))]) == 2
    assert main(["run", "--config", str(_config(tmp_path, grid={"c": 3}))]) == 3
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 4
    with pytest.raises(SystemExit) as exc:
        main(["run"])
    assert exc.value.code == 2
    assert main(["gen", "--kind", "gaussian", "--L", "100", "--out", str(tmp_path / "g")]) == 3


def test_corrupt_workload_file_is_io_error(tmp_path):
    wdir = tmp_path / "wl"
    assert main(["gen", "--kind", "gaussian", "--L", "256", "--H", "1", "--d-k", "8", "--out", str(wdir)]) == 0
    (wdir / "k.bin").write_bytes(b"garbage!" * 4)
    assert main(["run", "--config", str(_config(tmp_path, grid={"c": 8})), "--workload", str(wdir)]) == 4


def test_override_scalars():
    cfg = parse_config({"workload": {"kind": "gaussian"}}, {"seed": 9, "proxies": "unisparse,antidiagonal"})
    assert cfg.workload["seed"] == 9 and [p.value for p in cfg.proxies] == ["unisparse", "antidiagonal"]
    with pytest.raises(ConfigError):
        parse_config({"workload": {"kind": "gaussian"}, "schema_version": 2})
