"""Config validation, artifact layout, exit codes, and determinism."""

import json
import math
import subprocess
import sys

import pytest

from noisewalk.cli import CSV_HEADER, parse_config
from noisewalk.errors import ValidationError
from noisewalk.oracle import h_semigroup, tv_semigroup


def run_cli(*args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "noisewalk.cli", *args],
        capture_output=True,
        text=True,
        cwd=cwd,
        timeout=300,
    )


# ---------------------------------------------------------------------------
# config parsing (in process)


def test_parse_config_defaults_and_flags(tmp_path):
    cfgfile = tmp_path / "c.json"
    cfgfile.write_text(json.dumps({
        "spec_version": 1,
        "group": "free_semigroup:2",
        "rho": 0.5,
        "seed": 4,
        "n": 100,
    }))
    cfg = parse_config("drift", str(cfgfile), {"trials": 77})
    assert cfg.seed == 4
    assert cfg.n == 100
    assert cfg.trials == 77  # flag overrides the drift default
    assert cfg.measure.inverse_free and cfg.measure.rank == 2
    assert cfg.workers == 1 and not cfg.plot


def test_parse_config_flag_overrides_file(tmp_path):
    cfgfile = tmp_path / "c.json"
    cfgfile.write_text(json.dumps({
        "spec_version": 1, "group": "free_semigroup:2",
        "rho": 0.2, "seed": 4,
    }))
    cfg = parse_config("drift", str(cfgfile), {"rho": 0.9, "seed": 10})
    assert cfg.rho == 0.9
    assert cfg.seed == 10


def test_parse_config_rejects_unknown_keys():
    with pytest.raises(ValidationError, match="unknown config keys"):
        parse_config("drift", None, {"group": "free_semigroup:2", "seed": 1,
                                     "bogus": 3})


def test_parse_config_requires_seed():
    with pytest.raises(ValidationError, match="seed is mandatory"):
        parse_config("drift", None, {"group": "free_semigroup:2"})


def test_parse_config_group_strings():
    cfg = parse_config("drift", None, {"group": "free_group:3", "seed": 1})
    assert cfg.measure.rank == 3 and not cfg.measure.inverse_free
    for bad in ("braid:2", "free_group", "free_group:x", "free_group:1"):
        with pytest.raises(ValidationError):
            parse_config("drift", None, {"group": bad, "seed": 1})


def test_parse_config_rho_grid_forms():
    cfg = parse_config("sweep", None, {"group": "free_semigroup:2", "seed": 1,
                                       "rho_grid": "0:1:0.5"})
    assert cfg.rho_grid == (0.0, 0.5, 1.0)
    cfg = parse_config("sweep", None, {"group": "free_semigroup:2", "seed": 1,
                                       "rho_grid": [0.1, 0.4]})
    assert cfg.rho_grid == (0.1, 0.4)
    # flag form may also carry a JSON list
    cfg = parse_config("sweep", None, {"group": "free_semigroup:2", "seed": 1,
                                       "rho_grid": "[0.2, 1.0]"})
    assert cfg.rho_grid == (0.2, 1.0)
    for bad in ("1:0:0.5", "0:1:0", [0.5, 0.2], [2.0], [], "[0.2,", '["a"]'):
        with pytest.raises(ValidationError):
            parse_config("sweep", None, {"group": "free_semigroup:2", "seed": 1,
                                         "rho_grid": bad})


def test_parse_config_inline_measure_and_conflicts():
    inline = {
        "rank": 2,
        "kind": "single",
        "atoms": [
            {"word": [1], "weight": "1/2"},
            {"word": [2], "weight": "1/2"},
        ],
    }
    cfg = parse_config("drift", None, {"measure": inline, "seed": 1, "rho": 0.5})
    assert cfg.measure.support_size == 2
    with pytest.raises(ValidationError, match="conflicts with group rank"):
        parse_config("drift", None, {"measure": inline, "seed": 1,
                                     "group": "free_semigroup:3"})
    withinv = dict(inline, atoms=[
        {"word": [1], "weight": "1/2"},
        {"word": [-1], "weight": "1/2"},
    ])
    with pytest.raises(ValidationError, match="inverse letters"):
        parse_config("drift", None, {"measure": withinv, "seed": 1,
                                     "group": "free_semigroup:2"})


# ---------------------------------------------------------------------------
# exit codes (subprocess)


def test_cli_validation_errors_exit_two(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({
        "spec_version": 1, "group": "free_semigroup:2",
        "rho": 0.5, "seed": 1, "mystery": True,
    }))
    r = run_cli("drift", "--config", str(bad), "--out", str(tmp_path / "o"))
    assert r.returncode == 2
    assert "unknown config keys" in r.stderr

    noseed = tmp_path / "noseed.json"
    noseed.write_text(json.dumps({
        "spec_version": 1, "group": "free_semigroup:2", "rho": 0.5,
    }))
    r = run_cli("drift", "--config", str(noseed), "--out", str(tmp_path / "o"))
    assert r.returncode == 2
    assert "seed is mandatory" in r.stderr

    r = run_cli("drift", "--group", "free_semigroup:2", "--rho", "1.5",
                "--seed", "1", "--out", str(tmp_path / "o"))
    assert r.returncode == 2
    assert "rho" in r.stderr


def test_cli_missing_spec_version_exits_two(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"group": "free_semigroup:2", "seed": 1}))
    r = run_cli("drift", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert r.returncode == 2
    assert "spec_version" in r.stderr


def test_cli_budget_error_exits_three(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "spec_version": 1, "group": "free_group:2", "rho": 0.5, "seed": 1,
        "method": "exact", "n_max": 8, "cap": 1000,
    }))
    r = run_cli("entropy", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert r.returncode == 3
    assert "cap" in r.stderr


def test_cli_pointwise_on_group_exits_two(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "spec_version": 1, "group": "free_group:2", "rho": 0.5, "seed": 1,
        "method": "pointwise",
    }))
    r = run_cli("entropy", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert r.returncode == 2
    assert "pointwise entropy" in r.stderr


# ---------------------------------------------------------------------------
# artifacts


def test_cli_drift_artifacts(tmp_path):
    out = tmp_path / "run"
    r = run_cli("drift", "--group", "free_semigroup:2", "--rho", "0.5",
                "--n", "100", "--trials", "60", "--seed", "3",
                "--out", str(out))
    assert r.returncode == 0, r.stderr
    lines = (out / "table.csv").read_text().splitlines()
    assert lines[0] == CSV_HEADER
    cells = lines[1].split(",")
    assert cells[:5] == ["0.5", "100", "60", "3", "drift-mc"]
    assert float(cells[5]) == 1.0
    records = [json.loads(l) for l in (out / "results.json").read_text().splitlines()]
    assert records[0]["method"] == "drift-mc"
    # every Monte Carlo row must be reproducible in isolation
    for rec in records:
        if rec.get("std_error") is not None:
            assert rec["seed"] is not None
            assert rec["trials"] is not None and rec["trials"] > 0
            assert rec["method"]
    meta = json.loads((out / "meta.json").read_text())
    assert meta["seed"] == 3 and meta["subcommand"] == "drift"


def test_cli_entropy_matches_closed_form(tmp_path):
    out = tmp_path / "run"
    r = run_cli("entropy", "--group", "free_semigroup:3", "--rho", "0.25",
                "--n", "2000", "--trials", "100", "--seed", "5",
                "--out", str(out))
    assert r.returncode == 0, r.stderr
    rec = [json.loads(l) for l in (out / "results.json").read_text().splitlines()][0]
    h = h_semigroup(3, 0.25)
    assert rec["details"]["closed_form"] == h
    assert abs(rec["value"] - h) / h < 0.02


def test_cli_tv_oracle_rows_golden(tmp_path):
    out = tmp_path / "run"
    r = run_cli("tv", "--group", "free_semigroup:2", "--rho", "0.3",
                "--n", "12", "--trials", "2000", "--seed", "6",
                "--out", str(out))
    assert r.returncode == 0, r.stderr
    records = [json.loads(l) for l in (out / "results.json").read_text().splitlines()]
    oracle_rows = [rec for rec in records if rec["method"] == "tv-oracle"]
    assert [rec["n"] for rec in oracle_rows] == list(range(1, 13))
    for rec in oracle_rows:
        assert rec["value"] == tv_semigroup(2, 0.3, rec["n"])
    exact_rows = [rec for rec in records if rec["method"] == "tv-exact"]
    for rec in exact_rows:
        assert abs(rec["value"] - tv_semigroup(2, 0.3, rec["n"])) < 1e-12
    assert records[-1]["method"] == "tv-lower-mc"


def test_cli_sweep_artifacts_and_plot(tmp_path):
    out = tmp_path / "run"
    r = run_cli("sweep", "--group", "free_semigroup:2", "--rho-grid",
                "0:1:0.5", "--n", "400", "--trials", "60", "--seed", "8",
                "--out", str(out), "--plot")
    assert r.returncode == 0, r.stderr
    sweep_lines = (out / "sweep.csv").read_text().splitlines()
    assert sweep_lines[0].startswith("rho,h_value,h_std_error,h_closed_form")
    assert len(sweep_lines) == 4
    for line in sweep_lines[1:]:
        cells = line.split(",")
        assert float(cells[3]) == h_semigroup(2, float(cells[0]))
    svg = (out / "plot.svg").read_text()
    assert svg.startswith("<svg ")
    assert "<polyline" in svg and svg.rstrip().endswith("</svg>")


def test_cli_dimension_artifacts(tmp_path):
    out = tmp_path / "run"
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({
        "spec_version": 1, "group": "free_semigroup:2", "rho": 1.0,
        "seed": 9, "trials": 4000, "horizon": 30,
        "t_grid": [1, 2, 3, 4, 5, 6, 7, 8], "centers": 80,
        "export_tree_depth": 1,
    }))
    r = run_cli("dimension", "--config", str(cfg), "--out", str(out))
    assert r.returncode == 0, r.stderr
    rec = [json.loads(l) for l in (out / "results.json").read_text().splitlines()][0]
    assert rec["method"] == "local-dimension"
    expect = 2 * math.log(2)
    assert abs(rec["value"] - expect) / expect < 0.15
    tree_lines = (out / "tree.txt").read_text().splitlines()
    # depth-1 export of the independent coupling: all four letter pairs
    assert len(tree_lines) == 4
    assert sum(int(l.split()[2]) for l in tree_lines) == 4000


def test_cli_rerun_and_workers_byte_identical(tmp_path):
    args = ("sweep", "--group", "free_semigroup:2", "--rho-grid", "0:1:0.5",
            "--n", "300", "--trials", "50", "--seed", "12")
    outs = []
    for name, extra in (("a", ()), ("b", ()), ("c", ("--workers", "4"))):
        out = tmp_path / name
        r = run_cli(*args, "--out", str(out), *extra)
        assert r.returncode == 0, r.stderr
        outs.append(out)
    a, b, c = outs
    for fname in ("table.csv", "results.json", "sweep.csv"):
        ref = (a / fname).read_bytes()
        assert (b / fname).read_bytes() == ref
        assert (c / fname).read_bytes() == ref


def test_cli_report_roundtrip(tmp_path):
    out = tmp_path / "run"
    r = run_cli("tv", "--group", "free_semigroup:2", "--rho", "0.4",
                "--n", "8", "--trials", "500", "--seed", "2",
                "--out", str(out))
    assert r.returncode == 0, r.stderr
    original = (out / "table.csv").read_bytes()
    (out / "table.csv").unlink()
    r = run_cli("report", "--out", str(out), "--plot")
    assert r.returncode == 0, r.stderr
    assert (out / "table.csv").read_bytes() == original
    assert (out / "plot.svg").exists()


def test_cli_report_without_results_exits_two(tmp_path):
    r = run_cli("report", "--out", str(tmp_path / "nothing"))
    assert r.returncode == 2
