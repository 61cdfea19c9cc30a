"""Command-line contract tests.

The exit-code contract (0 benign, 2 security event, 1 usage/config error) and
byte-for-byte reproducibility of written reports are stable interfaces; these
tests drive `main` in process with real files in a temp directory.
"""

import csv
import json
import re

import pytest

from enclavesim.cli import EXIT_OK, EXIT_SECURITY, EXIT_USAGE, main
from enclavesim.sim import REPORT_COLUMNS


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    return tmp_path


def write_config(workdir, name="run.json", **overrides):
    cfg = {
        "model": "secscale",
        "total_size": "16M",
        "epc_size": "256K",
        "workload": {"footprint": "512K", "n_accesses": 300},
    }
    cfg.update(overrides)
    path = workdir / name
    path.write_text(json.dumps(cfg))
    return str(path)


# ---------------------------------------------------------------- exit codes
def test_benign_run_exits_zero_and_writes_reports(workdir):
    rc = main(["run", write_config(workdir), "--out", "rep"])
    assert rc == EXIT_OK
    report = json.loads((workdir / "rep.json").read_text())
    assert report["model"] == "secscale"
    assert report["security_failure"] is None
    with open(workdir / "rep.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == list(REPORT_COLUMNS)
    assert len(rows) == 2


def test_attack_run_exits_security_code(workdir):
    cfg = write_config(workdir, attack={"kinds": ["tamper-data"], "seeds": 2})
    rc = main(["run", cfg, "--out", "atk"])
    assert rc == EXIT_SECURITY
    rows = json.loads((workdir / "atk.json").read_text())
    assert len(rows) == 2
    assert all(r["detected"] for r in rows)


def test_usage_errors_exit_one(workdir, capsys):
    assert main(["run", "--model", "warp-drive"]) == EXIT_USAGE
    assert main(["definitely-not-a-command"]) == EXIT_USAGE
    assert main(["run", str(workdir / "missing.json")]) == EXIT_USAGE
    assert "error:" in capsys.readouterr().err


def test_unknown_config_key_exits_one_with_path(workdir, capsys):
    path = workdir / "bad.json"
    path.write_text(json.dumps({"workload": {"patern": "zipf"}}))
    assert main(["run", str(path)]) == EXIT_USAGE
    assert "workload.patern" in capsys.readouterr().err


# ------------------------------------------------------------ reproducibility
def test_same_config_twice_is_byte_identical(workdir):
    cfg = write_config(workdir)
    assert main(["run", cfg, "--out", "a"]) == EXIT_OK
    assert main(["run", cfg, "--out", "b"]) == EXIT_OK
    assert (workdir / "a.json").read_bytes() == (workdir / "b.json").read_bytes()
    assert (workdir / "a.csv").read_bytes() == (workdir / "b.csv").read_bytes()


def test_seed_flag_overrides_file(workdir):
    cfg = write_config(workdir, seed=1)
    assert main(["run", cfg, "--seed", "2", "--out", "s"]) == EXIT_OK
    assert json.loads((workdir / "s.json").read_text())["seed"] == 2


# -------------------------------------------------------------------- storage
def test_storage_table_at_512_gib(capsys):
    assert main(["storage"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "MAC forest            1096.00 MB" in out
    assert "EPC counter tree      2.06 MB over 128 MiB" in out
    assert "combined metadata     1098.06 MB" in out
    assert "key table             2.00 GiB" in out
    assert "1048576 entries, 8.00 MB in EPC" in out


def _exact(capsys, *argv):
    assert main(["storage", *argv]) == EXIT_OK
    out = capsys.readouterr().out
    return {
        k: int(v) for k, v in re.findall(r"(\w+)=(\d+)", out.splitlines()[-1])
    }


def test_client_counter_storage_grows_linearly(capsys):
    sizes = ["64G", "128G", "256G", "512G"]
    curve = [_exact(capsys, "--total-size", s)["client_tree"] for s in sizes]
    for smaller, larger in zip(curve, curve[1:]):
        assert 1.99 < larger / smaller < 2.01


def test_single_region_forest_is_one_subtree(capsys):
    got = _exact(capsys, "--total-size", "512K", "--epc-size", "512K")
    # 128 leaves + 8 group digests + 1 region digest, 8 bytes each
    assert got["forest"] == (128 + 8 + 1) * 8


# -------------------------------------------------------------------- compare
def test_compare_needs_two_models(workdir, capsys):
    cfg = write_config(workdir, models=["secscale"])
    assert main(["compare", cfg]) == EXIT_USAGE
    assert "at least two models" in capsys.readouterr().err


def test_compare_duplicate_models_yield_identical_rows(workdir):
    cfg = write_config(workdir, models=["baseline", "secscale", "baseline"])
    assert main(["compare", cfg, "--out", "dup"]) == EXIT_OK
    with open(workdir / "dup.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 4
    assert rows[1] == rows[3]  # same model, same row, twice
    assert rows[1] != rows[2]


def test_compare_reports_slowdown_vs_baseline(workdir):
    cfg = write_config(workdir, models=["baseline", "secscale"])
    assert main(["compare", cfg, "--out", "cmp"]) == EXIT_OK
    rows = json.loads((workdir / "cmp.json").read_text())
    by_model = {r["model"]: r for r in rows}
    assert by_model["baseline"]["slowdown"] == 1.0
    assert by_model["secscale"]["slowdown"] > 1.0
    assert by_model["secscale"]["dram_forest"] > 0


def test_compare_sweep_rows_normalize_to_first(workdir):
    cfg = write_config(
        workdir,
        model="sgx-client",
        sweep=[
            {"latency": {"sgx_fault_penalty": p}} for p in (5000, 20000, 40000)
        ],
    )
    assert main(["compare", cfg, "--out", "sw"]) == EXIT_OK
    rows = json.loads((workdir / "sw.json").read_text())
    slows = [r["slowdown"] for r in rows]
    assert slows[0] == 1.0
    assert slows == sorted(slows)  # harsher penalty never helps


# ------------------------------------------------------------------ gen-trace
def test_gen_trace_run_round_trip(workdir):
    rc = main(
        ["gen-trace", "--pattern", "zipf", "--footprint", "256K",
         "--n-accesses", "120", "--seed", "4", "--out", "t.trace"]
    )
    assert rc == EXIT_OK
    cfg = write_config(workdir, workload={"trace": "t.trace"})
    assert main(["run", cfg, "--out", "replay"]) == EXIT_OK
    assert json.loads((workdir / "replay.json").read_text())["accesses"] == 120


def test_gen_trace_writes_gzip(workdir):
    import gzip

    assert main(["gen-trace", "--n-accesses", "10", "--out", "t.gz"]) == EXIT_OK
    with gzip.open(workdir / "t.gz", "rt") as fh:
        assert len(fh.readlines()) == 10


def test_gen_trace_rejects_bad_spec(workdir, capsys):
    rc = main(["gen-trace", "--read-frac", "1.5", "--out", "t.trace"])
    assert rc == EXIT_USAGE
    assert "read_frac" in capsys.readouterr().err


# --------------------------------------------------------------------- attack
def test_attack_subcommand_summarizes_and_exits_two(workdir, capsys):
    rc = main(["attack", "--kinds", "tamper-data,tamper-key-slot", "--seeds", "2"])
    assert rc == EXIT_SECURITY
    out = capsys.readouterr().out
    assert "tamper-data" in out and "detected 2/2" in out
    rows = json.loads((workdir / "attacks.json").read_text())
    assert {r["kind"] for r in rows} == {"tamper-data", "tamper-key-slot"}


def test_attack_rejects_unknown_kind(capsys):
    assert main(["attack", "--kinds", "tamper-nothing"]) == EXIT_USAGE
    assert "tamper-nothing" in capsys.readouterr().err
