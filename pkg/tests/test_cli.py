import json
import subprocess
import sys

import numpy as np
import pytest

from condist.cli import main
from condist.core import load_dataset
from condist.neural import load_checkpoint


def run(args):
    assert main(args) == 0


def test_gen_and_estimate_round_trip(tmp_path):
    data_path = tmp_path / "d.bin"
    csv_path = tmp_path / "d.csv"
    run(["gen", "--kernel", "intro_uniform", "--m", "200", "--seed", "3",
         "--out", str(data_path), "--csv", str(csv_path)])
    data = load_dataset(data_path)
    assert data.m == 200
    assert csv_path.read_text().startswith("x0,y0")
    assert (tmp_path / "d.bin.manifest.json").exists()

    atoms_csv = tmp_path / "atoms.csv"
    run(["estimate", "--data", str(data_path), "--x", "0.5", "--scheme", "knn",
         "--k", "10", "--out", str(atoms_csv)])
    lines = atoms_csv.read_text().strip().split("\n")
    assert lines[0] == "kind,atom_index,y0"
    assert len(lines) == 11

    atoms_json = tmp_path / "atoms.json"
    run(["estimate", "--data", str(data_path), "--x", "0.5", "--scheme", "rbox",
         "--r", "0.05", "--format", "json", "--out", str(atoms_json)])
    payload = json.loads(atoms_json.read_text())
    assert payload["kind"] in ("atoms", "lebesgue-box")


def test_estimate_unknown_scheme_fails(tmp_path):
    data_path = tmp_path / "d.bin"
    run(["gen", "--m", "50", "--out", str(data_path)])
    assert main(["estimate", "--data", str(data_path), "--scheme", "huh"]) == 2


def test_rates_writes_rows_and_summary(tmp_path):
    out = tmp_path / "rates.csv"
    run(["rates", "--kernel", "intro_uniform", "--scheme", "knn",
         "--m-list", "256,512,1024", "--seeds", "2", "--eval-points", "21",
         "--out", str(out)])
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "M,seed,mean_w"
    assert len(lines) == 1 + 3 * 2
    summary = json.loads((tmp_path / "rates.summary.json").read_text())
    assert summary["slope"] < 0


def test_rates_byte_identical_across_processes(tmp_path):
    outs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        cmd = [sys.executable, "-m", "condist.cli", "rates", "--kernel",
               "intro_uniform", "--scheme", "rbox", "--m-list", "128,256,512",
               "--seeds", "2", "--eval-points", "11", "--out", str(out)]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_variance_summary(tmp_path):
    out = tmp_path / "var.csv"
    run(["variance", "--kernel", "intro_uniform", "--scheme", "knn", "--m", "200",
         "--k", "14", "--repeats", "50", "--eval-points", "11", "--out", str(out)])
    summary = json.loads((tmp_path / "var.summary.json").read_text())
    assert summary["sample_variance"] >= 0.0
    assert summary["bound"] == 1.0 / 14


def test_error_vs_x_with_config_file(tmp_path):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("kernel: intro_uniform\nm: 300\nestimators: knn:20\ngrid: 9\n")
    out = tmp_path / "evx.csv"
    run(["error-vs-x", "--config", str(cfg), "--out", str(out)])
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "x,estimator,w1"
    assert len(lines) == 1 + 9


def test_train_and_eval_pipeline(tmp_path):
    ckpt = tmp_path / "net.bin"
    loss_csv = tmp_path / "loss.csv"
    run(["train", "--kernel", "intro_uniform", "--m", "500", "--k", "8",
         "--epochs", "5", "--n-batch", "8", "--seed", "1",
         "--out", str(ckpt), "--loss-out", str(loss_csv)])
    params, seed, done = load_checkpoint(ckpt)
    assert done == 5
    lines = loss_csv.read_text().strip().split("\n")
    assert lines[0] == "epoch,loss" and len(lines) == 6

    out = tmp_path / "eval.csv"
    run(["eval", "--kernel", "intro_uniform", "--checkpoint", str(ckpt),
         "--grid", "11", "--out", str(out),
         "--atoms-out", str(tmp_path / "atoms.csv"),
         "--deriv-out", str(tmp_path / "deriv.csv")])
    summary = json.loads((tmp_path / "eval.summary.json").read_text())
    assert np.isfinite(summary["mean_w1"])
    assert "sup_w_bound" in summary
    assert (tmp_path / "atoms.csv").read_text().startswith("x,atom,y")
    assert (tmp_path / "deriv.csv").read_text().startswith("x,avg_abs_der")


def test_ann_bench_outputs(tmp_path):
    out = tmp_path / "bench.csv"
    samples = tmp_path / "samples.csv"
    run(["ann-bench", "--m", "1000", "--d-x", "2", "--k", "8", "--depth", "2",
         "--seeds", "1", "--n-sims", "3", "--n-batch", "8",
         "--out", str(out), "--samples-out", str(samples)])
    header = out.read_text().strip().split("\n")[0]
    assert header == ("M,d_x,k,depth,seed,delta_mean,delta_p50,delta_p95,"
                      "wall_ms_exact,wall_ms_anns")
    assert len(samples.read_text().strip().split("\n")) == 1 + 3


def test_project_hist_outputs(tmp_path):
    out = tmp_path / "hist.csv"
    raw = tmp_path / "raw.csv"
    run(["project-hist", "--kernel", "model3", "--m", "3000", "--k", "50",
         "--n-queries", "10", "--out", str(out), "--raw-out", str(raw)])
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "estimator,bin_index,bin_lo,bin_hi,count"
    assert len(lines) == 1 + 20
    counts = sum(int(l.split(",")[-1]) for l in lines[1:])
    assert counts == 10


def test_eval_model3_projections(tmp_path):
    ckpt = tmp_path / "net3.bin"
    run(["train", "--kernel", "model3", "--m", "3000", "--k", "16",
         "--epochs", "2", "--seed", "2", "--depth", "2", "--out", str(ckpt)])
    out = tmp_path / "eval3.csv"
    run(["eval", "--kernel", "model3", "--checkpoint", str(ckpt),
         "--x", "0.12,-0.33,0.1", "--proj-vectors", "2", "--out", str(out),
         "--proj-cdf-out", str(tmp_path / "cdf.csv")])
    assert out.read_text().startswith("vector,a0,a1,a2,w1")
    assert (tmp_path / "cdf.csv").read_text().startswith("panel,t,series,F")


def test_manifest_written_and_versioned(tmp_path):
    out = tmp_path / "r.csv"
    run(["rates", "--kernel", "intro_uniform", "--m-list", "64,128,256",
         "--seeds", "1", "--eval-points", "5", "--out", str(out)])
    manifest = json.loads((tmp_path / "r.csv.manifest.json").read_text())
    assert manifest["command"] == "rates"
    assert "numpy" in manifest["versions"]
    assert manifest["config"]["m-list"] == "64,128,256"


def test_error_vs_x_byte_identical_across_processes(tmp_path):
    outs = []
    for name in ("e1.csv", "e2.csv"):
        out = tmp_path / name
        cmd = [sys.executable, "-m", "condist.cli", "error-vs-x", "--kernel",
               "intro_uniform", "--m", "200", "--estimators", "knn:10,rbox:0.1",
               "--grid", "7", "--out", str(out)]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
