import math
import os

import numpy as np
import pytest

from steindyn import cli, runner
from steindyn.config import ExperimentConfig
from steindyn.errors import FitError

COS = {"kind": "trig", "terms": [{"component": 0, "freq": [1], "amp": 1.0}]}
COS2 = {"kind": "trig", "dim": 2, "phase_dim": 2,
        "terms": [{"component": 0, "freq": [1, 0], "amp": 1.0},
                  {"component": 1, "freq": [0, 1], "amp": 1.0}]}
CAT = {"kind": "toral", "matrix": [[2, 1], [1, 1]]}


def small(**kw):
    cfg = ExperimentConfig(observable=dict(COS), N_list=[16, 32, 64, 128], M=10_000, seed=7,
                           k_max=12, n_boot=20,
                           scheme={"N": 16, "n_list": [0, 8], "K_list": [0, 2], "M": 5000})
    for k, v in kw.items():
        setattr(cfg, k, v)
    return cfg


N = np.array([16, 32, 64, 128, 256, 512], dtype=float)


def test_fit_pure_power():
    fits = runner.fit_rate(N, N ** -0.5)
    assert fits["pure_power"].parameter == pytest.approx(0.5, abs=1e-12)
    assert fits["pure_power"].r2 == pytest.approx(1.0, abs=1e-12)


def test_fit_log_over_sqrt():
    fits = runner.fit_rate(N, 3 * np.log(N) / np.sqrt(N))
    r = fits["log_over_sqrt"]
    assert r.parameter == pytest.approx(3.0, rel=1e-12) and r.residual < 1e-14
    assert 0 <= fits["pure_power"].r2 <= 1


def test_fit_drops_nonpositive():
    d = N ** -0.5
    d[0] = 0.0
    fits = runner.fit_rate(N, d)
    assert fits["pure_power"].n_points == 5
    with pytest.raises(FitError):
        runner.fit_rate(N[:4], [1.0, 0.5, -1.0, 0.2])


@pytest.mark.parametrize("obs,system", [(COS, {"kind": "doubling"}), (COS2, CAT)])
def test_run_bundle(tmp_path, obs, system):
    b = runner.run(small(observable=obs, system=system), str(tmp_path))
    assert [r.N for r in b.results] == [16, 32, 64, 128]
    assert b.all_pass
    for name in ("config.ini", "profile.csv", "sigma.csv", "constants.csv", "metrics.csv",
                 "bounds.csv", "summary.csv", "ratefit.csv"):
        assert os.path.exists(tmp_path / name), name
    assert set(b.fits) == {"pure_power", "log_over_sqrt"}


def _dir_bytes(d):
    return {n: open(os.path.join(d, n), "rb").read() for n in sorted(os.listdir(d))}


@pytest.mark.parametrize("obs,system", [(COS, {"kind": "doubling"}), (COS2, CAT)])
def test_run_deterministic_across_workers(tmp_path, obs, system):
    runner.run(small(observable=obs, system=system), str(tmp_path / "a"), workers=1)
    runner.run(small(observable=obs, system=system), str(tmp_path / "b"), workers=8)
    runner.run(small(observable=obs, system=system), str(tmp_path / "c"), workers=1)
    a, b, c = (_dir_bytes(tmp_path / x) for x in "abc")
    assert a == b == c


def test_run_seed_changes_output(tmp_path):
    runner.run(small(), str(tmp_path / "a"))
    runner.run(small(seed=8), str(tmp_path / "b"))
    assert _dir_bytes(tmp_path / "a")["metrics.csv"] != _dir_bytes(tmp_path / "b")["metrics.csv"]


def test_run_rejects_zero_observable(tmp_path):
    from steindyn.errors import ConfigError
    with pytest.raises(ConfigError):
        runner.run(small(observable={"kind": "poly", "coeffs": [0.0]}), str(tmp_path))


# ------------------------------------------------------------------ CLI

@pytest.fixture()
def cfg_path(tmp_path):
    p = tmp_path / "cfg.ini"
    small().save(p)
    return str(p)


@pytest.mark.parametrize("cmd", ["simulate", "correlations", "bound", "distance", "scheme"])
def test_cli_subcommands(cmd, cfg_path, tmp_path):
    out = tmp_path / cmd
    assert cli.main([cmd, "--config", cfg_path, "--out", str(out), "--workers", "2"]) == 0
    assert os.listdir(out)


def test_cli_run_check(cfg_path, tmp_path, capsys):
    assert cli.main(["run", "--config", cfg_path, "--out", str(tmp_path / "o"), "--check"]) == 0
    assert "pure_power" in capsys.readouterr().out


def test_cli_run_check_fails_exit3(cfg_path, tmp_path, monkeypatch):
    # exit-code mapping: a bundle with a failed N gives 3 under --check, 0 without
    real = runner.run

    def failing(cfg, out, workers=1):
        b = real(cfg, out, workers)
        b.results[-1].passed = False
        return b
    monkeypatch.setattr(runner, "run", failing)
    assert cli.main(["run", "--config", cfg_path, "--out", str(tmp_path / "o"), "--check"]) == 3
    assert cli.main(["run", "--config", cfg_path, "--out", str(tmp_path / "o")]) == 0


def test_cli_seed_override(cfg_path, tmp_path):
    cli.main(["simulate", "--config", cfg_path, "--out", str(tmp_path / "a")])
    cli.main(["simulate", "--config", cfg_path, "--out", str(tmp_path / "b"), "--seed", "9"])
    assert _dir_bytes(tmp_path / "a") != _dir_bytes(tmp_path / "b")


def test_cli_validation_exit1(tmp_path, capsys):
    p = tmp_path / "bad.ini"
    p.write_text('[observable]\nterms = [{"freq": [1], "amp": 1.0}]\n'
                 "[experiment]\nN_list = [16, 24]\n")
    assert cli.main(["run", "--config", str(p), "--out", str(tmp_path / "o")]) == 1
    assert "experiment.N_list[1]" in capsys.readouterr().err
    assert cli.main(["bound", "--out", str(tmp_path / "o")]) == 1
    assert cli.main(["bound", "--config", str(tmp_path / "missing.ini")]) == 1


def test_cli_numerical_exit2(tmp_path):
    # amplitude below the float range of its products: the pair table underflows to
    # zero and the decay fit has nothing to fit
    p = tmp_path / "deg.ini"
    cfg = small(observable={"kind": "trig", "terms": [{"freq": [1], "amp": 1e-300}]})
    cfg.save(p)
    assert cli.main(["correlations", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_cli_stein_check(tmp_path, capsys):
    assert cli.main(["stein-check", "--out", str(tmp_path)]) == 0
    assert "max |residual|" in capsys.readouterr().out
    assert os.path.exists(tmp_path / "stein_check.csv")


def test_cli_rate_fit(tmp_path, capsys):
    src = tmp_path / "m.csv"
    rows = ["N,M,metric,estimate,ci_lo,ci_hi"]
    for n in (16, 32, 64, 128, 256):
        rows.append(f"{n},1000,wasserstein,{n ** -0.5!r},0,1")
        rows.append(f"{n},1000,kolmogorov,{2 * n ** -0.25!r},0,1")
    src.write_text("\n".join(rows) + "\n")
    assert cli.main(["rate-fit", "--input", str(src), "--metric", "wasserstein",
                     "--out", str(tmp_path)]) == 0
    text = (tmp_path / "ratefit.csv").read_text().splitlines()
    assert text[0] == "model,parameter,residual,r2,points"
    assert math.isclose(float(text[1].split(",")[1]), 0.5, abs_tol=1e-12)
    assert cli.main(["rate-fit", "--input", str(src), "--metric", "nope",
                     "--out", str(tmp_path)]) == 2
