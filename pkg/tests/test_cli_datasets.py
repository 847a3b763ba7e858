import json
import subprocess
import sys

import numpy as np
import pytest

from sdive.cli import main
from sdive.datasets import Dataset, load_dataset, read_values, verify_fingerprint
from sdive.exceptions import DatasetIntegrityError, InvalidInputError
from sdive.quadrature import QuadratureSpec


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


# ---------------------------------------------------------------- datasets

@pytest.mark.parametrize("name,n,mle,tol", [("short", 17, (8.378, 0.846), 1e-3),
                                             ("newcomb", 66, (26.21, 10.66), 1e-2)])
def test_shipped_fingerprints(name, n, mle, tol):
    ds = load_dataset(f"dataset:{name}")
    assert ds.n == n
    np.testing.assert_allclose([ds.values.mean(), ds.values.std()], mle, atol=tol)
    assert len(ds.checksum) == 64 and ds.checksum == load_dataset(name).checksum


def test_fingerprint_mismatch():
    ds = Dataset("x", np.array([1.0, 2.0, 3.0]), "test")
    with pytest.raises(DatasetIntegrityError):
        verify_fingerprint(ds, (5.0, 1.0), 1e-3)


def test_read_values_comments_and_errors(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("# header\n1.5\n\n2.5 # trailing\n")
    np.testing.assert_array_equal(read_values(p), [1.5, 2.5])
    p.write_text("1.0\n2.0\nabc\n")
    with pytest.raises(InvalidInputError, match="line 3"):
        read_values(p)
    p.write_text("1.0\nnan\n")
    with pytest.raises(InvalidInputError, match="line 2"):
        read_values(p)
    p.write_text("# nothing\n")
    with pytest.raises(InvalidInputError):
        read_values(p)


def test_unknown_dataset():
    with pytest.raises(InvalidInputError):
        load_dataset("dataset:nope")


def test_quad_tol_environment(monkeypatch):
    monkeypatch.setenv("SDIVE_QUAD_TOL", "1e-9")
    assert QuadratureSpec.from_env().abs_tol == 1e-9
    monkeypatch.setenv("SDIVE_QUAD_TOL", "tiny")
    with pytest.raises(InvalidInputError):
        QuadratureSpec.from_env()


# ---------------------------------------------------------------- fit

def test_fit_short_json(capsys):
    code, out, _ = run(capsys, "fit", "--data", "dataset:short", "--alpha", "0.5", "--lambda", "-0.5", "--cov")
    assert code == 0
    d = json.loads(out)
    assert list(d) == ["method", "alpha", "lambda", "bandwidth", "theta_hat", "objective", "estimating_eq_norm",
                       "converged", "iterations", "asymptotic_cov", "dataset_n"]
    assert d["theta_hat"]["mu"] == pytest.approx(8.39894, abs=1e-4)
    assert d["theta_hat"]["sigma"] == pytest.approx(0.34961, abs=1e-4)
    assert d["converged"] is True and d["dataset_n"] == 17
    cov = np.array(d["asymptotic_cov"])
    assert cov.shape == (2, 2) and np.all(np.linalg.eigvalsh(cov) > 0)


def test_fit_bandwidth_round_trip(capsys):
    _, out, _ = run(capsys, "fit", "--data", "dataset:newcomb", "--alpha", "0.3", "--lambda", "-0.3")
    a = json.loads(out)
    _, out, _ = run(capsys, "fit", "--data", "dataset:newcomb", "--alpha", "0.3", "--lambda", "-0.3",
                    "--bandwidth", repr(a["bandwidth"]))
    b = json.loads(out)
    assert b["bandwidth"] == a["bandwidth"]
    assert b["theta_hat"] == a["theta_hat"]


def test_fit_mdpde_alpha_zero_is_mle(capsys):
    _, out, _ = run(capsys, "fit", "--data", "dataset:short", "--method", "mdpde", "--alpha", "0", "--lambda", "0")
    d = json.loads(out)
    assert d["theta_hat"]["mu"] == pytest.approx(8.37765, abs=1e-5)
    assert d["theta_hat"]["sigma"] == pytest.approx(0.845539, abs=1e-6)


def test_fit_non_convergence_exit_two(capsys, tmp_path, monkeypatch):
    import sdive.cli as cli
    from sdive import estimator

    real = estimator.FitConfig

    def capped(**kw):
        kw["max_iter"] = 1
        return real(**kw)

    monkeypatch.setattr(cli, "FitConfig", capped)
    code, out, _ = run(capsys, "fit", "--data", "dataset:short", "--alpha", "0.5", "--lambda", "0")
    assert code == 2
    assert json.loads(out)["converged"] is False


@pytest.mark.parametrize("argv", [
    ["fit", "--data", "/nonexistent.csv", "--alpha", "0.5", "--lambda", "0"],
    ["fit", "--data", "dataset:short", "--alpha", "-1", "--lambda", "0"],
    ["fit", "--data", "dataset:short", "--alpha", "0.5"],
    ["fit", "--data", "dataset:short", "--alpha", "0.5", "--lambda", "0", "--method", "msde-beran", "--cov"],
    ["fit", "--data", "dataset:short", "--alpha", "0.5", "--lambda", "0", "--bandwidth", "-2"],
    ["simulate", "--config", "/nonexistent.cfg", "--out", "x"],
    ["nonsense"],
])
def test_errors_exit_one(capsys, argv):
    code, out, err = run(capsys, *argv)
    assert code == 1
    assert err.strip()


def test_bad_csv_line_reported(capsys, tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1\n2\nx\n")
    code, _, err = run(capsys, "fit", "--data", str(p), "--alpha", "0.5", "--lambda", "0")
    assert code == 1 and "line 3" in err


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "sdive.cli", "fit", "--data", "dataset:short", "--alpha", "1",
                        "--lambda", "0"], capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    assert json.loads(r.stdout)["method"] == "msde-star"


# ---------------------------------------------------------------- diagnose

def test_diagnose_alpha_zero_sandwich(capsys, tmp_path):
    out_csv = tmp_path / "if.csv"
    code, out, _ = run(capsys, "diagnose", "--mu", "0", "--sigma", "2", "--alpha", "0", "--bandwidth", "0.5",
                       "--grid", "-3:3:1", "--out", str(out_csv), "--transparency")
    assert code == 0
    d = json.loads(out)
    assert d["sandwich"][0][0] == pytest.approx(4.0, abs=1e-5)
    assert d["transparency"]["transparent"] is True
    lines = out_csv.read_text().strip().split("\n")
    assert lines[0] == "y,IF_mu,IF_sigma" and len(lines) == 8


def test_diagnose_stdout_csv_stderr_json(capsys):
    code, out, err = run(capsys, "diagnose", "--mu", "0", "--sigma", "1", "--alpha", "0.5", "--bandwidth", "0",
                         "--grid", "-1:1:0.5")
    assert code == 0
    assert out.startswith("y,IF_mu,IF_sigma")
    assert "J_star" in json.loads(err)


def test_diagnose_second_order_alpha_one_lambda_free(capsys):
    outs = []
    for lam in ("-1", "0", "2"):
        code, out, _ = run(capsys, "diagnose", "--model", "normal-mean", "--mu", "0", "--sigma", "1", "--alpha", "1",
                           "--lambda", lam, "--bandwidth", "0.5", "--grid", "-2:2:1", "--second-order")
        assert code == 0
        outs.append(out)
    assert outs[0] == outs[1] == outs[2]
    assert outs[0].startswith("y,IF_mu,T2")


def test_diagnose_second_order_needs_scalar_model(capsys):
    code, _, _ = run(capsys, "diagnose", "--mu", "0", "--sigma", "1", "--alpha", "0.5", "--bandwidth", "0.5",
                     "--grid", "-2:2:1", "--second-order")
    assert code == 1


@pytest.mark.parametrize("grid", ["1:0:0.5", "0:1:0", "a:b:c", "0:1"])
def test_diagnose_bad_grid(capsys, grid):
    assert run(capsys, "diagnose", "--mu", "0", "--sigma", "1", "--alpha", "0.5", "--bandwidth", "0.5",
               "--grid", grid)[0] == 1


# ---------------------------------------------------------------- tune, simulate

def test_tune_single_cell(capsys, tmp_path):
    surf = tmp_path / "s.csv"
    code, out, _ = run(capsys, "tune", "--data", "dataset:short", "--alpha-grid", "0.5", "--lambda-grid", "-0.5",
                       "--surface", str(surf))
    assert code == 0
    d = json.loads(out)
    assert (d["best_alpha"], d["best_lambda"]) == (0.5, -0.5)
    assert d["surface_path"] == str(surf) and len(surf.read_text().strip().split("\n")) == 2


def test_tune_newcomb_downweights_outliers(capsys, tmp_path):
    code, out, _ = run(capsys, "tune", "--data", "dataset:newcomb", "--alpha-grid", "0,0.5,1",
                       "--lambda-grid", "-0.5,0", "--surface", str(tmp_path / "s.csv"))
    assert code == 0
    d = json.loads(out)
    assert d["best_alpha"] > 0
    _, out, _ = run(capsys, "fit", "--data", "dataset:newcomb", "--alpha", str(d["best_alpha"]),
                    "--lambda", str(d["best_lambda"]))
    assert json.loads(out)["theta_hat"]["sigma"] < 6


def test_tune_too_small(capsys, tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("\n".join(str(v) for v in range(5)))
    assert run(capsys, "tune", "--data", str(p))[0] == 1


def test_simulate_small(capsys, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("[target]\ndist = normal(0,3)\n[grid]\nalpha = 0.5\nlambda = 0\n[run]\nn = 20\nreplications = 50\n")
    code, out, _ = run(capsys, "simulate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--replications", "4")
    assert code == 0
    d = json.loads(out)
    assert d["cells"] == 1
    text = (tmp_path / "o" / "report.csv").read_text()
    assert len(text.strip().split("\n")) == 3
    meta = json.loads((tmp_path / "o" / "meta.json").read_text())
    assert meta["config"]["replications"] == 4
