import csv
import json
from pathlib import Path

import numpy as np
import pytest

from bhchain.cli import main
from bhchain.config import ConfigError, ExperimentConfig, apply_override, default_u_grid
from bhchain.liouville import read_checkpoint
from bhchain.pipeline import crossover


def _csv_rows(path):
    with open(path) as fh:
        return list(csv.reader(line for line in fh if not line.startswith("#")))


def test_default_u_grid():
    g = default_u_grid()
    assert len(g) == 26 and g[0] == 0.0
    assert g[1] == pytest.approx(0.05) and g[-1] == pytest.approx(10.0)
    assert np.allclose(np.diff(np.log(g[1:])), np.log(200) / 24)


def test_overrides_and_validation(tmp_path):
    cfg = ExperimentConfig.load(overrides=["model.U=1.5", "run.method=propagate", "sweep.N=[2,3]"])
    assert cfg.params().U == 1.5 and cfg.run["method"] == "propagate"
    assert [p.N for p in cfg.sweep_points()][:1] == [2]
    with pytest.raises(ConfigError):
        apply_override(dict(cfg.data), "model.nonsense=3")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(overrides=["model.L=1"])
    with pytest.raises(ConfigError):
        ExperimentConfig.load(overrides=["run.method=magic"])
    with pytest.raises(ConfigError):
        ExperimentConfig.load(overrides=["sweep.U=[]"]).sweep_points()
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"model": {"L": 4, "N": 2}, "seed": 5}))
    cfg = ExperimentConfig.load(path, ["model.U=2"])
    assert (cfg.params().L, cfg.params().U, cfg["seed"]) == (4, 2.0, 5)
    path.write_text(json.dumps({"modle": {}}))
    with pytest.raises(ConfigError):
        ExperimentConfig.load(path)


def test_exit_codes(tmp_path, capsys):
    assert main(["run", "--set", "model.L=1", "--out", str(tmp_path)]) == 2
    assert "L >= 2" in capsys.readouterr().err
    assert main(["run", "--set", "model.L=10", "--set", "model.N=5", "--out", str(tmp_path)]) == 2
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    # a propagation that cannot converge within t_max
    args = ["run", "--set", "model.L=4", "--set", "model.N=2", "--set", "run.method=propagate",
            "--set", "run.t_max=20", "--out", str(tmp_path)]
    assert main(args) == 3


def test_run_fig3_point(tmp_path):
    out = tmp_path / "o"
    assert main(["run", "--set", "model.L=6", "--set", "model.N=3", "--set", "model.U=1", "--out", str(out)]) == 0
    rec = json.loads((out / "run_L6_N3_U1.json").read_text())
    assert rec["dim"] == 56 and rec["converged"]
    for key, path in rec["files"].items():
        assert Path(path).exists(), key
        if path.endswith(".csv"):
            assert Path(path).read_text().startswith("# config {")
    mag = np.loadtxt(rec["files"]["rtilde_current_basis"], delimiter=",", comments="#")
    assert mag.shape == (56, 56) and (mag >= 0).all()
    R = read_checkpoint(rec["files"]["checkpoint"])
    rep = json.loads(Path(rec["files"]["report"]).read_text())
    assert rep["config"]["model"]["U"] == 1
    assert np.allclose(np.linalg.eigvalsh(R.data), rep["lambda"], atol=1e-12)
    assert rec["current"] == pytest.approx(rep["current"])


def test_run_fig1_point_and_reproducibility(tmp_path):
    args = ["run", "--set", "model.L=8", "--set", "model.N=4"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    a = _csv_rows(tmp_path / "a" / "lambda_sigma_L8_N4_U0.csv")
    b = _csv_rows(tmp_path / "b" / "lambda_sigma_L8_N4_U0.csv")
    assert a[0] == ["j", "x", "scaled_lambda", "sigma"] and len(a) == 331
    va, vb = np.array(a[1:], dtype=float), np.array(b[1:], dtype=float)
    assert np.abs(va - vb).max() <= 1e-9
    assert (np.diff(va[:, 2]) >= 0).all() and (np.diff(va[:, 3]) >= 0).all()


def test_sweep_order_parallel_and_single_point(tmp_path):
    base = ["sweep", "--set", "model.L=4", "--set", "sweep.U=[0,1,4]", "--set", "sweep.N=[1,2]"]
    assert main(base + ["--out", str(tmp_path / "s1")]) == 0
    assert main(base + ["--jobs", "2", "--out", str(tmp_path / "s2")]) == 0
    r1 = _csv_rows(tmp_path / "s1" / "sweep_summary.csv")
    r2 = _csv_rows(tmp_path / "s2" / "sweep_summary.csv")
    assert r1[0][:6] == ["U", "N", "dim", "current", "ks_poisson", "ks_gue"]
    assert r1[1:] == r2[1:]
    assert [(float(r[0]), int(r[1])) for r in r1[1:]] == [(0, 1), (1, 1), (4, 1), (0, 2), (1, 2), (4, 2)]
    cross = json.loads((tmp_path / "s1" / "sweep_crossover.json").read_text())
    assert set(cross["crossover_U"]) == {"1", "2"}
    # a single-point sweep reproduces the run command's current
    assert main(["sweep", "--set", "model.L=4", "--set", "model.N=2", "--set", "sweep.U=[1]",
                 "--out", str(tmp_path / "one")]) == 0
    assert main(["run", "--set", "model.L=4", "--set", "model.N=2", "--set", "model.U=1",
                 "--out", str(tmp_path / "one")]) == 0
    row = _csv_rows(tmp_path / "one" / "sweep_summary.csv")[1]
    rec = json.loads((tmp_path / "one" / "run_L4_N2_U1.json").read_text())
    assert float(row[3]) == rec["current"]


def test_crossover_estimate():
    rows = [{"U": u, "N": 2, "current": c} for u, c in [(0, 1.0), (1, 0.8), (2, 0.45), (3, 0.3)]]
    rows += [{"U": 1, "N": 3, "current": 1.0}]
    assert crossover(rows) == {2: 2, 3: None}


def test_sweep_records_failures(tmp_path, monkeypatch):
    import bhchain.pipeline as pl

    real = pl.solve_point

    def flaky(p, run):
        if p.U == 1:
            raise RuntimeError("boom")
        return real(p, run)

    monkeypatch.setattr(pl, "solve_point", flaky)
    code = main(["sweep", "--set", "model.L=3", "--set", "model.N=2", "--set", "sweep.U=[0,1,2]",
                 "--out", str(tmp_path)])
    assert code == 3
    rows = _csv_rows(tmp_path / "sweep_summary.csv")
    assert len(rows) == 4
    assert "boom" in rows[2][-1] and rows[1][-1] == "" and rows[3][-1] == ""


def test_spectra_fast_preset(tmp_path, capsys):
    code = main(["spectra", "--set", "model.L=8", "--set", "model.N=4", "--set", "sweep.U=[0,1]",
                 "--out", str(tmp_path)])
    assert code == 0
    out = capsys.readouterr().out
    assert "U=0: " in out and "favours poisson" in out.splitlines()[0]
    assert "favours gue" in out.splitlines()[1]
    rows = _csv_rows(tmp_path / "spacing_L8_N4_U1.csv")
    assert rows[0] == ["s", "empirical", "poisson_ref", "gue_ref"] and len(rows) == 202
    meta = json.loads((tmp_path / "spacing_L8_N4_U1.meta.json").read_text())
    assert meta["config"]["model"]["L"] == 8


def test_spectra_small_sample_warns(tmp_path, caplog):
    with caplog.at_level("WARNING"):
        main(["spectra", "--set", "model.L=6", "--set", "model.N=3", "--out", str(tmp_path)])
    assert any("noisy" in r.message for r in caplog.records)


def test_verify_passes_and_mutation_fails(capsys):
    assert main(["verify", "--set", "verify.sizes=[[3,2]]"]) == 0
    out = capsys.readouterr().out
    assert "FAIL" not in out and "current identity" in out
    assert main(["verify", "--set", "verify.sizes=[[3,2]]", "--set", "verify.mutate_current_sign=true"]) == 4
    captured = capsys.readouterr()
    assert "FAIL  current identity" in captured.out
    assert "current identity" in captured.err
