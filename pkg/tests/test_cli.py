import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from geoaggregator.cli import main
from geoaggregator.table import SplitSpec, load_csv, split


def sha(p):
    return hashlib.sha256(p.read_bytes()).hexdigest()


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("data")
    assert run("generate", "--process", "lin", "--cov", "r", "--grid", "12x12", "--seed", 7, "--out-dir", d) == 0
    return d


@pytest.fixture(scope="module")
def trained(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    argv = ["train", "--variant", "mini", "--data", data_dir / "lin_r.csv", "--seed", 1, "--epochs", 2,
            "--l-max", 16, "--out-dir", out]
    assert run(*argv) == 0
    return out, argv


def test_generate_default_grid(tmp_path):
    assert run("generate", "--process", "sl", "--cov", "r", "--grid", "50x50", "--seed", 7, "--out-dir", tmp_path) == 0
    t = load_csv(tmp_path / "sl_r.csv", ["x1", "x2"], y_col="y")
    assert t.n_points == 2500
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["subcommand"] == "generate" and man["seeds"]["seed"] == 7


def test_generate_deterministic(tmp_path):
    for d in ("a", "b"):
        run("generate", "--process", "durbin", "--cov", "d", "--grid", "9x11", "--seed", 3, "--out-dir", tmp_path / d)
    assert sha(tmp_path / "a" / "durbin_d.csv") == sha(tmp_path / "b" / "durbin_d.csv")


def test_generate_sl_rho_zero_equals_lin(tmp_path):
    run("generate", "--process", "sl", "--rho", 0, "--grid", "8x8", "--seed", 4, "--out-dir", tmp_path, "--name", "a")
    run("generate", "--process", "lin", "--grid", "8x8", "--seed", 4, "--out-dir", tmp_path, "--name", "b")
    a = load_csv(tmp_path / "a.csv", ["x1", "x2"], y_col="y").target
    b = load_csv(tmp_path / "b.csv", ["x1", "x2"], y_col="y").target
    assert np.array_equal(a, b)


def test_generate_invalid_spec_is_usage_error(tmp_path):
    assert run("generate", "--process", "sl", "--rho", 1.5, "--out-dir", tmp_path) == 2
    assert run("generate", "--process", "sl", "--grid", "fifty", "--out-dir", tmp_path) == 2
    with pytest.raises(SystemExit) as exc:
        run("generate", "--process", "nope")
    assert exc.value.code == 2


def test_train_writes_artifacts(trained):
    out, _ = trained
    for name in ("model.json", "model.bin", "history.csv", "metrics.json", "manifest.json"):
        assert (out / name).is_file()
    man = json.loads((out / "manifest.json").read_text())
    assert man["config"]["model"]["l_max"] == 16 and len(man["inputs"]["data"]) == 64


def test_train_small_config_echo(data_dir, tmp_path, capsys):
    run("train", "--variant", "small", "--l-max", 32, "--data", data_dir / "lin_r.csv", "--epochs", 1,
        "--out-dir", tmp_path)
    echo = json.loads(capsys.readouterr().out.splitlines()[0])
    assert (echo["L"], echo["l_hidden"], echo["l_max"]) == (1, 4, 32)
    run("train", "--variant", "small", "--data", data_dir / "lin_r.csv", "--out-dir", tmp_path / "x")
    echo = json.loads(capsys.readouterr().out.splitlines()[0])
    assert (echo["L"], echo["l_hidden"], echo["l_max"]) == (1, 4, 144)


def test_train_missing_file_leaves_nothing(tmp_path):
    out = tmp_path / "never"
    assert run("train", "--data", tmp_path / "missing.csv", "--out-dir", out) == 1
    assert not out.exists()


def test_eval_checkpoint_reproduces_val_mae(trained, capsys):
    out, _ = trained
    stored = json.loads((out / "metrics.json").read_text())["val_mae"]
    capsys.readouterr()
    assert run("eval", "--model", out / "model", "--part", "val") == 0
    got = json.loads(capsys.readouterr().out)["mae"]
    assert abs(got - stored) < 1e-9


def test_rerun_from_manifest_reproduces_metrics(trained, tmp_path):
    out, _ = trained
    man = json.loads((out / "manifest.json").read_text())
    argv = list(man["argv"])
    argv[argv.index("--out-dir") + 1] = str(tmp_path / "again")
    assert run(*argv) == 0
    a = json.loads((out / "metrics.json").read_text())
    b = json.loads((tmp_path / "again" / "metrics.json").read_text())
    assert a == b


def test_eval_m_mismatch(trained, tmp_path):
    out, _ = trained
    p = tmp_path / "one.csv"
    p.write_text("x1,l1,l2,y\n" + "".join(f"{i},{i},{i % 3},{i * 2}\n" for i in range(20)))
    assert run("eval", "--model", out / "model", "--data", p, "--x-cols", "x1") == 2


def test_eval_ols_matches_normal_equations(data_dir, capsys):
    capsys.readouterr()
    assert run("eval", "--model", "ols", "--data", data_dir / "lin_r.csv", "--split-seed", 0) == 0
    got = json.loads(capsys.readouterr().out)
    t = load_csv(data_dir / "lin_r.csv", ["x1", "x2"], y_col="y")
    tr, _, te = split(t, SplitSpec(seed=0))
    X = np.column_stack([np.ones(tr.n_points), tr.covariates])
    beta = np.linalg.solve(X.T @ X, X.T @ tr.target)
    pred = np.column_stack([np.ones(te.n_points), te.covariates]) @ beta
    assert abs(got["mae"] - np.mean(np.abs(pred - te.target))) < 1e-12


def test_eval_gwr_reports_bandwidth(data_dir, capsys, tmp_path):
    capsys.readouterr()
    assert run("eval", "--model", "gwr", "--data", data_dir / "lin_r.csv", "--out-dir", tmp_path) == 0
    got = json.loads(capsys.readouterr().out)
    assert got["bandwidth"] > 0 and "r2" in got
    assert (tmp_path / "manifest.json").is_file()


def test_bench_three_curves(tmp_path, capsys):
    assert run("bench", "--mechanisms", "full,inducing,mcpa", "--lmax", "64..1024", "--out-dir", tmp_path) == 0
    slopes = json.loads(capsys.readouterr().out)
    assert set(slopes) == {"full", "inducing", "mcpa"}
    assert len((tmp_path / "flops.csv").read_text().splitlines()) == 1 + 3 * 5


def test_bench_bad_mechanism(tmp_path):
    assert run("bench", "--mechanisms", "sparse", "--out-dir", tmp_path) == 2


def test_ablate_empty_grid_usage_error(data_dir, tmp_path):
    assert run("ablate", "--sweep", "lambda", "--grid", "", "--data", data_dir / "lin_r.csv",
               "--out-dir", tmp_path) == 2


def test_ablate_lambda_grid_rows(data_dir, tmp_path):
    assert run("ablate", "--sweep", "lambda", "--data", data_dir / "lin_r.csv", "--seeds", "0",
               "--epochs", 1, "--variant", "mini", "--out-dir", tmp_path) == 0
    lines = (tmp_path / "lambda_grid.csv").read_text().splitlines()
    assert len(lines) == 1 + 8 + 1 and lines[-1].startswith("learnable")


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "geoaggregator", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "generate" in r.stdout
