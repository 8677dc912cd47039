from __future__ import annotations

import csv
import json

import numpy as np
import pytest
from click.testing import CliRunner

from ovtensor.cli import log_log_slope, main
from ovtensor.instances import build_tensor, write_components_csv
from ovtensor.io import read_tnsr, write_tnsr


@pytest.fixture()
def runner():
    return CliRunner()


def test_gen_writes_outputs(runner, tmp_path):
    out = tmp_path / "inst"
    res = runner.invoke(main, ["gen", "--ensemble", "spherical", "--d", "8", "--n", "16", "--seed", "7", "--out", str(out)])
    assert res.exit_code == 0, res.output
    for name in ("tensor.tnsr", "truth.csv", "manifest.json"):
        assert (out / name).exists()
    assert read_tnsr(out / "tensor.tnsr").shape == (8, 8, 8, 8)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["inputs"]["seed"] == 7 and "numpy" in manifest["versions"]


def test_gen_records_noise_norm(runner, tmp_path):
    res = runner.invoke(main, ["gen", "--d", "5", "--n", "6", "--eta", "0.05", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["measured_noise_norm"] == pytest.approx(0.05, abs=1e-10)


def test_gen_rejects_small_d(runner, tmp_path):
    res = runner.invoke(main, ["gen", "--d", "1", "--n", "2", "--out", str(tmp_path / "x")])
    assert res.exit_code == 2
    assert "d must be ≥ 2" in res.output
    assert not (tmp_path / "x").exists()


def test_gen_deterministic(runner, tmp_path):
    for sub in ("a", "b"):
        runner.invoke(main, ["gen", "--d", "4", "--n", "5", "--seed", "3", "--out", str(tmp_path / sub)])
    assert (tmp_path / "a" / "tensor.tnsr").read_bytes() == (tmp_path / "b" / "tensor.tnsr").read_bytes()


def _orthonormal_instance(tmp_path):
    a = np.eye(4)
    write_tnsr(tmp_path / "t.tnsr", build_tensor(a).array)
    write_components_csv(tmp_path / "truth.csv", a)
    return tmp_path / "t.tnsr", tmp_path / "truth.csv"


def test_decompose_orthonormal(runner, tmp_path):
    tnsr, truth = _orthonormal_instance(tmp_path)
    out = tmp_path / "dec"
    args = ["decompose", "--in", str(tnsr), "--n", "4", "--truth", str(truth), "--repetitions", "60", "--out", str(out)]
    res = runner.invoke(main, args)
    assert res.exit_code == 0, res.output
    report = json.loads((out / "report.json").read_text())
    assert report["covered_fraction"] == 1.0
    assert "signed_hausdorff" in report and report["seed"] == 0
    assert set(report["timings"]) == {"lift", "truncate", "round"}
    rows = list(csv.reader(open(out / "components.csv")))
    assert len(rows) == report["recovered_count"]
    assert json.loads((out / "manifest.json").read_text())["status"] == "ok"


def test_decompose_missing_file(runner, tmp_path):
    res = runner.invoke(main, ["decompose", "--in", str(tmp_path / "nope.tnsr"), "--n", "3", "--out", str(tmp_path)])
    assert res.exit_code == 2


def test_decompose_bad_file(runner, tmp_path):
    (tmp_path / "bad.tnsr").write_bytes(b"nonsense")
    res = runner.invoke(main, ["decompose", "--in", str(tmp_path / "bad.tnsr"), "--n", "3", "--out", str(tmp_path / "o")])
    assert res.exit_code == 2


def test_decompose_condition_failure(runner, tmp_path):
    tnsr, _ = _orthonormal_instance(tmp_path)
    out = tmp_path / "cf"
    res = runner.invoke(main, ["decompose", "--in", str(tnsr), "--n", "4", "--sigma-floor", "5", "--out", str(out)])
    assert res.exit_code == 3
    assert "sigma" in res.output
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["status"] == "condition_failure" and manifest["failure"]["quantity"] == "sigma"


def test_kappa_sweep(runner, tmp_path):
    args = ["kappa", "--ensemble", "spherical", "--ensemble", "hypercube", "--d-list", "5",
            "--nratio-list", "0.2,0.4", "--trials", "2", "--out", str(tmp_path)]
    res = runner.invoke(main, args)
    assert res.exit_code == 0, res.output
    rows = list(csv.DictReader(open(tmp_path / "kappa.csv")))
    assert len(rows) == 2 * 2 * 2
    assert set(rows[0]) == {"ensemble", "d", "n", "n_over_d2", "trial", "kappa"}
    again = tmp_path / "again"
    runner.invoke(main, args[:-1] + [str(again)])
    assert (again / "kappa.csv").read_text() == (tmp_path / "kappa.csv").read_text()


def test_kappa_plot(runner, tmp_path):
    pytest.importorskip("matplotlib")
    args = ["kappa", "--d-list", "4", "--nratio-list", "0.2,0.5", "--trials", "1", "--plot", "--out", str(tmp_path)]
    assert runner.invoke(main, args).exit_code == 0
    assert (tmp_path / "kappa.svg").read_text().lstrip().startswith("<?xml")


def test_kappa_zero_trials(runner, tmp_path):
    assert runner.invoke(main, ["kappa", "--trials", "0", "--out", str(tmp_path)]).exit_code == 2


def test_bench_runs_and_is_repeatable(runner, tmp_path):
    args = ["bench", "--d-list", "4,5", "--n-list", "3,6", "--repetitions", "20", "--out"]
    res = runner.invoke(main, args + [str(tmp_path / "a")])
    assert res.exit_code == 0, res.output
    runner.invoke(main, args + [str(tmp_path / "b")])
    strip = lambda p: [{k: v for k, v in r.items() if k not in ("lift", "truncate", "round")} for r in csv.DictReader(open(p))]
    assert strip(tmp_path / "a" / "bench.csv") == strip(tmp_path / "b" / "bench.csv")
    slopes = json.loads((tmp_path / "a" / "manifest.json").read_text())["slopes"]
    assert {"lift_vs_d", "total_vs_d", "round_vs_n"} <= set(slopes)


def test_bench_records_condition_failure(runner, tmp_path):
    res = runner.invoke(main, ["bench", "--d-list", "3", "--n-rule", "0.7", "--repetitions", "5", "--out", str(tmp_path)])
    assert res.exit_code == 0, res.output
    rows = list(csv.DictReader(open(tmp_path / "bench.csv")))
    assert rows[0]["status"].startswith("condition_failure")


def test_log_log_slope():
    assert log_log_slope([1, 2, 4], [3, 12, 48]) == pytest.approx(2.0)


def test_selftest_passes(runner):
    res = runner.invoke(main, ["selftest"])
    assert res.exit_code == 0, res.output
    assert "FAIL " not in res.output


def test_selftest_fault_injection(runner):
    res = runner.invoke(main, ["selftest", "--inject-fault", "pi_sym"])
    assert res.exit_code == 1
    assert "FAIL  pi_sym_oracle" in res.output


def test_threads_env(runner, tmp_path, monkeypatch):
    monkeypatch.setenv("OVT_THREADS", "2")
    res = runner.invoke(main, ["kappa", "--d-list", "4", "--nratio-list", "0.2", "--trials", "1", "--out", str(tmp_path)])
    assert res.exit_code == 0
    assert json.loads((tmp_path / "manifest.json").read_text())["threads"] == 2
