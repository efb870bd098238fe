import csv
import io
import math

import numpy as np
import pytest

from folms import cli
from folms.folms import StepSizes
from folms.harness import (
    CSV_COLUMNS,
    ConfigError,
    ExperimentConfig,
    ExperimentFailed,
    SweepAxis,
    auto_preroll,
    convergence_time,
    parse_config,
    run_monte_carlo,
    sweep_step_sizes,
    sweep_system_params,
)
from folms.theory import predict_emse_complete
from folms.world import SystemParams

QUIET = SystemParams(cfo_hz=0.0, sfo_hz=0.0, sigma2_q=1e-12)
SMALL = ExperimentConfig(params=QUIET, steps=StepSizes(1e-2), replicas=3, iterations=5000, preroll=2000)

MINIMAL = """
[system]
sigma2_q = 1e-12
cfo_hz = 0.0

[estimator]
mu_w = 2e-3

[experiment]
replicas = 2
iterations = 4000
preroll = 1000
seed = 5
"""


def test_parse_minimal_config():
    cfg = parse_config(MINIMAL)
    assert cfg.params.sigma2_q == 1e-12 and cfg.params.cfo_hz == 0.0
    assert cfg.params.sfo_hz == 1.0  # baseline default kept
    assert cfg.steps == StepSizes(2e-3)
    assert cfg.replicas == 2 and cfg.seed == 5
    assert parse_config("").replicas == 16


def test_parse_sweep_axes():
    cfg = parse_config(MINIMAL + """
[[sweep.axis]]
name = "mu_w"
start = 1e-4
stop = 1e-2
num = 3

[[sweep.axis]]
name = "mu_eps"
values = [1e-6, 1e-5]
""")
    assert cfg.sweep[0].values == pytest.approx((1e-4, 1e-3, 1e-2))
    assert cfg.sweep[1] == SweepAxis("mu_eps", (1e-6, 1e-5))


@pytest.mark.parametrize("text,needle", [
    ("[system]\nsigma2_q = -1.0\n", ":2: [system] sigma2_q"),
    ("[system]\nbogus = 1\n", ":2: [system] bogus: unknown field"),
    ("[wat]\nx = 1\n", ":1: [wat]: unknown section"),
    ("[experiment]\n\nreplicas = 0\n", "[experiment]"),
    ("[system\n", "TOML syntax error"),
    ("[[sweep.axis]]\nname = 'mu_w'\nvalues = [1e-3, 1e-4]\n", "strictly increasing"),
    ("[[sweep.axis]]\nname = 'nope'\nvalues = [1]\n", "unknown sweep parameter"),
])
def test_config_errors_carry_context(text, needle):
    with pytest.raises(ConfigError) as info:
        parse_config(text, "cfg.toml")
    msg = str(info.value)
    assert msg.startswith("cfg.toml")
    assert needle in msg


def test_monte_carlo_is_deterministic_and_replicas_isolated():
    a = run_monte_carlo(SMALL)
    b = run_monte_carlo(SMALL)
    np.testing.assert_array_equal(a.values, b.values)
    more = run_monte_carlo(SMALL.replace(replicas=5))
    np.testing.assert_array_equal(more.values[:3], a.values)
    assert a.diverged == 0 and a.stderr > 0
    assert a.prediction.total == predict_emse_complete(QUIET, SMALL.steps).total


def test_static_noiseless_world_gives_numerical_floor():
    p = SystemParams(cfo_hz=0.0, sfo_hz=0.0, noise_floor=0.0)
    r = run_monte_carlo(ExperimentConfig(params=p, steps=StepSizes(1e-3), replicas=2, iterations=2000, preroll=0))
    assert r.mean_db < -120


def test_all_diverged_is_an_error():
    with pytest.raises(ExperimentFailed):
        run_monte_carlo(SMALL.replace(steps=StepSizes(5.0)))


def test_vss_monte_carlo_reports_mean_step_sizes():
    cfg = SMALL.replace(estimator="vss", preroll=1000, iterations=3000, vss=SMALL.vss.replace(lambda_e=0.99))
    r = run_monte_carlo(cfg)
    assert 1e-5 <= r.steps.mu_w <= 1e-1


def test_auto_preroll():
    fixed = ExperimentConfig(params=QUIET)
    assert auto_preroll(fixed, StepSizes(1e-3)) == 50_000
    assert auto_preroll(fixed, StepSizes(1e-5)) == 1_000_000
    # slow sampling-offset loop: ten periods of sqrt(mu_eta G sigma_x^2)
    assert auto_preroll(fixed, StepSizes(1e-3, 0.0, 1e-9)) == math.ceil(10.0 / math.sqrt(1e-9))
    assert auto_preroll(fixed.replace(preroll=7), StepSizes(1e-3)) == 7
    v = auto_preroll(fixed.replace(estimator="vss"))
    assert v > 150_000


def test_step_sweep_flags_unstable_points_and_keeps_going():
    cfg = SMALL.replace(sweep=(SweepAxis("mu_w", (1e-2, 0.5)),))
    res = sweep_step_sizes(cfg)
    assert len(res.rows) == 2
    good, bad = res.rows
    assert good.diverged == 0 and math.isfinite(good.zeta_sim)
    assert bad.gamma < 0 and bad.diverged == cfg.replicas and math.isnan(bad.zeta_sim)
    assert res.optimum is not None


def test_two_dimensional_sweep_and_csv_schema():
    cfg = SMALL.replace(
        params=QUIET.replace(sigma2_eps=1e-8),
        steps=StepSizes(1e-2, 1e-5),
        replicas=2,
        sweep=(SweepAxis("mu_w", (1e-2, 2e-2)), SweepAxis("mu_eps", (1e-5, 1e-4))),
    )
    res = sweep_step_sizes(cfg)
    rows = list(csv.reader(io.StringIO(res.to_csv())))
    assert tuple(rows[0]) == ("swept_param_1", "swept_param_2") + CSV_COLUMNS
    assert len(rows) == 5
    for row, r in zip(rows[1:], res.rows):
        assert float(row[0]) == r.swept[0] and float(row[1]) == r.swept[1]
        pred = predict_emse_complete(cfg.params, r.steps)
        assert float(row[5]) == pytest.approx(10 * math.log10(pred.total), abs=1e-12)


def test_system_sweep_uses_optimal_steps():
    cfg = ExperimentConfig(params=QUIET, replicas=2, iterations=3000, preroll=2000,
                           sweep=(SweepAxis("sigma2_q", (1e-14, 1e-12)),))
    res = sweep_system_params(cfg)
    assert res.rows[0].steps.mu_w < res.rows[1].steps.mu_w
    assert list(csv.reader(io.StringIO(res.to_csv())))[0][0] == "swept_param_1"


def test_convergence_time():
    x = np.concatenate([np.full(20000, 1.0), np.full(80000, 1e-3)])
    assert convergence_time(x, window=1000) == 20000
    assert convergence_time(np.full(10000, 1.0), window=1000) == 0
    with pytest.raises(ValueError):
        convergence_time(np.ones(10), window=100)


# -- command line -------------------------------------------------------------


def write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_cli_predict_zero_drift(tmp_path, capsys):
    p = write(tmp_path, "[system]\ncfo_hz = 0.0\nsfo_hz = 0.0\n[estimator]\nmu_w = 1e-3\n")
    assert cli.main(["predict", str(p)]) == 0
    out = capsys.readouterr().out
    assert "zeta_w     = 2.5075e-09 W (-86.0 dB)" in out


def test_cli_optimize_reports_steps(tmp_path, capsys):
    p = write(tmp_path, "[system]\nsigma2_q = 1e-12\ncfo_hz = 0.0\nsfo_hz = 0.0\n"
                        "[estimator]\npin_mu_eps = 0.0\npin_mu_eta = 0.0\n")
    out_csv = tmp_path / "opt.csv"
    assert cli.main(["optimize", str(p), "-o", str(out_csv)]) == 0
    assert "mu_w" in capsys.readouterr().out
    rows = list(csv.reader(out_csv.open()))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert float(rows[1][0]) == pytest.approx(1e-3, rel=0.05)


def test_cli_simulate_and_seed_override(tmp_path, monkeypatch):
    p = write(tmp_path, MINIMAL)
    a, b, c = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "c.csv"
    assert cli.main(["simulate", str(p), "-o", str(a)]) == 0
    monkeypatch.setenv("FOLMS_SEED", "5")
    assert cli.main(["simulate", str(p), "-o", str(b)]) == 0
    assert cli.main(["simulate", str(p), "-o", str(c), "--seed", "6"]) == 0

    def body(f):
        rows = list(csv.reader(f.open()))
        return [r[:-1] for r in rows]  # drop wall time

    assert body(a) == body(b)
    assert body(a) != body(c)


def test_cli_sweep_writes_csv(tmp_path):
    p = write(tmp_path, MINIMAL + "[[sweep.axis]]\nname = 'mu_w'\nvalues = [1e-3, 1e-2]\n")
    out = tmp_path / "s.csv"
    assert cli.main(["sweep", str(p), "-o", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0][0] == "swept_param_1" and len(rows) == 3


def test_cli_missing_config_leaves_no_file(tmp_path, capsys):
    out = tmp_path / "never.csv"
    assert cli.main(["simulate", str(tmp_path / "missing.toml"), "-o", str(out)]) == 2
    assert not out.exists()
    assert "cannot read" in capsys.readouterr().err


def test_cli_exit_codes(tmp_path):
    bad = write(tmp_path, "[system]\nsigma2_q = 'x'\n")
    assert cli.main(["predict", str(bad)]) == 2
    diverge = write(tmp_path, MINIMAL.replace("mu_w = 2e-3", "mu_w = 5.0"), "d.toml")
    out = tmp_path / "d.csv"
    assert cli.main(["simulate", str(diverge), "-o", str(out)]) == 3
    assert not out.exists()
    assert cli.main(["predict", str(write(tmp_path, "", "e.toml"))]) == 2


def test_cli_infeasible_exit_code(tmp_path, monkeypatch):
    from folms import theory

    def boom(*a, **k):
        raise theory.InfeasibleError("no stable point")

    monkeypatch.setattr(cli, "solve_optimal_step_sizes", boom)
    p = write(tmp_path, "[system]\nsigma2_q = 1e-12\n")
    assert cli.main(["optimize", str(p)]) == 4


def test_bad_seed_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("FOLMS_SEED", "abc")
    assert cli.main(["predict", str(write(tmp_path, MINIMAL))]) == 2
