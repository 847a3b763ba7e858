import numpy as np
import pytest

from sdive.exceptions import ConfigError, InvalidInputError
from sdive.models import NormalModel
from sdive.simulation import (
    CONTAMINATION_CASES,
    SimulationConfig,
    aggregate,
    bandwidth_stability_experiment,
    load_config,
    parse_config,
    replication_sample,
    run_simulation,
    shipped_config,
)

SMALL = """
[target]
dist = normal(0,3)
[contaminant]
dist = normal(15,3)
epsilon = {eps}
[grid]
alpha = 0, 0.5
lambda = -0.5
[run]
n = 30
replications = {reps}
seed = 7
workers = {workers}
"""


def _small(eps=0.1, reps=8, workers=1):
    return parse_config(SMALL.format(eps=eps, reps=reps, workers=workers))


def test_parse_small_config():
    c = _small()
    assert c.n == 30 and c.replications == 8 and c.epsilon == 0.1
    assert c.cells() == [(0.0, -0.5), (0.5, -0.5)]
    np.testing.assert_array_equal(c.theta_true, [0.0, 3.0])


@pytest.mark.parametrize("bad,line", [
    ("n = ten", 11),
    ("color = red", 11),
])
def test_config_error_names_line(bad, line):
    text = SMALL.format(eps=0.1, reps=8, workers=1).replace("n = 30", bad)
    with pytest.raises(ConfigError, match=f"line {line}"):
        parse_config(text)


@pytest.mark.parametrize("text", [
    "[target]\ndist = normal(0,3)\n[grid]\nalpha = 0\n",
    "[target]\ndist = normal(0,3)\n[grid]\nalpha = 0\nlambda = 0\n[extra]\nk = 1\n",
    "[target]\ndist = normal(0,3)\n[contaminant]\nepsilon = 0.2\n[grid]\nalpha = 0\nlambda = 0\n",
    "[target]\ndist = normal(0,3)\n[grid]\nalpha = 0\nlambda = 0\n[run]\nmethod = mdpde\n".replace(
        "lambda = 0", "lambda = 0.5"),
    "not an ini file",
])
def test_invalid_configs_rejected(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_config_file():
    with pytest.raises(ConfigError):
        load_config("/nonexistent/x.cfg")


def test_variance_reading_of_normal_spec():
    c = parse_config(SMALL.format(eps=0.1, reps=8, workers=1) + "normal_scale = variance\n")
    np.testing.assert_allclose(c.theta_true, [0.0, np.sqrt(3.0)])


def test_shipped_table2_grid():
    c = load_config(shipped_config("table2.cfg"))
    assert len(c.alpha_grid) == 7 and len(c.lambda_grid) == 9
    assert len(c.cells()) == 63
    assert c.n == 50 and c.replications == 1000 and c.epsilon == 0.0


@pytest.mark.parametrize("case", sorted(CONTAMINATION_CASES))
def test_shipped_contamination_cases(case):
    c = load_config(shipped_config(f"case_{case}.cfg"))
    assert c.epsilon == 0.1 and str(c.contaminant).replace(" ", "") == CONTAMINATION_CASES[case]


def test_epsilon_zero_ignores_contaminant():
    a = _small(eps=0.0)
    b = SimulationConfig(target=a.target, contaminant=None, epsilon=0.0, n=a.n, alpha_grid=a.alpha_grid,
                         lambda_grid=a.lambda_grid, seed=a.seed)
    for r in range(3):
        assert replication_sample(a, r).tobytes() == replication_sample(b, r).tobytes()


def test_replication_samples_are_independent_of_each_other():
    c = _small()
    assert not np.array_equal(replication_sample(c, 0), replication_sample(c, 1))
    assert replication_sample(c, 3).tobytes() == replication_sample(c, 3).tobytes()


def test_deterministic_across_worker_counts():
    one = run_simulation(_small(reps=6, workers=1)).to_csv()
    two = run_simulation(_small(reps=6, workers=2)).to_csv()
    assert one == two


def test_report_layout_and_invariants(tmp_path):
    rep = run_simulation(_small(reps=12))
    lines = rep.to_csv().strip().split("\n")
    assert lines[0] == "alpha,lambda,parameter,bias,mse,mc_stderr,failures,unreliable"
    assert len(lines) == 1 + 2 * 2
    for r in rep.records:
        assert r["mse"] >= r["bias"] ** 2 - 1e-12
        assert r["mse"] >= r["bias"] ** 2 - 3 * r["mc_stderr"]
    csv_path, meta_path = rep.write(tmp_path)
    assert open(csv_path).read() == rep.to_csv()
    assert "wall_time_seconds" in open(meta_path).read()
    # the robust cell resists the far contaminant better than the MLE cell
    assert rep.cell(0.5, -0.5, "mu")["mse"] < rep.cell(0.0, -0.5, "mu")["mse"]


def test_aggregate_counts_failures():
    est = np.zeros((20, 1, 2))
    est[:, 0, 1] = 1.0
    est[:2, 0, :] = np.nan
    rec = aggregate(est, np.array([0.0, 1.0]), [(0.5, 0.0)])
    assert rec[0]["failures"] == 2 and rec[0]["unreliable"]
    assert rec[0]["bias"] == 0.0 and rec[0]["mse"] == 0.0
    est[:2, 0, :] = 0.0
    assert not aggregate(est, np.array([0.0, 1.0]), [(0.5, 0.0)])[0]["unreliable"]


def test_bandwidth_stability_smoothed_model_is_stable():
    x = np.random.default_rng(40).normal(0, 1, 50)
    res = bandwidth_stability_experiment(x, NormalModel(), [(0.0, 1.0)], [0.4, 0.7, 1.0])
    s = res.summary[0]
    assert s["range_msde_star"] < 0.05
    assert s["ratio"] >= 3.0
    assert len(res.rows) == 6
    assert res.to_csv().startswith("alpha,lambda,method,h0,sigma_hat\n")


def test_bandwidth_stability_single_h0_ratio_undefined():
    x = np.random.default_rng(40).normal(0, 1, 50)
    assert bandwidth_stability_experiment(x, NormalModel(), [(0.5, 0.0)], [0.5]).summary[0]["ratio"] is None


def test_bandwidth_stability_empty_sample():
    with pytest.raises(InvalidInputError):
        bandwidth_stability_experiment([], NormalModel(), [(0.5, 0.0)], [0.5])
