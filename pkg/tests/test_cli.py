"""Test the command line."""
import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
import yaml

from direct_integral.cli import main
from direct_integral.const import (
    EXIT_IO,
    EXIT_NON_IDENTIFIABLE,
    EXIT_OK,
    EXIT_VALIDATION,
)

from .conftest import CONFIG_DIR


def _config(tmp_path, name="run.yaml", **overrides):
    config = {
        "model": "exponential",
        "true": {"theta": [0.5], "xi": [1.0]},
        "design": {"kind": "grid", "horizon": 1.0, "points": 201},
        "noise": {"distribution": "gaussian", "variance": 0.0},
        "pipeline": {"estimator": "smooth", "order": 3, "bandwidth": 0.1},
        "seed": 3,
    }
    config.update(overrides)
    path = tmp_path / name
    path.write_text(yaml.safe_dump(config), encoding="utf-8")
    return path


def _simulate(tmp_path, config, name="data.csv"):
    out = tmp_path / name
    assert main(["simulate", "--config", str(config), "--out", str(out)]) == EXIT_OK
    return out


def test_simulate_grid(tmp_path):
    """Test the FitzHugh-Nagumo dataset has one row per grid point."""
    out = _simulate(tmp_path, CONFIG_DIR / "fhn_variance_cell.yaml")
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["t", "replicate", "y1", "y2", "seed"]
    assert len(frame) == 201
    assert (frame["replicate"] == 1).all()
    assert (frame["seed"] == 20240101).all()


def test_simulate_repeated(tmp_path):
    """Test the repeated design writes J rows per time."""
    frame = pd.read_csv(_simulate(tmp_path, CONFIG_DIR / "lv_setup2.yaml"))
    assert len(frame) == 180
    assert frame.groupby("t").size().eq(6).all()
    assert sorted(frame["replicate"].unique()) == [1, 2, 3, 4, 5, 6]


def test_noiseless_simulation_is_exact(tmp_path):
    """Test zero variance writes the solution itself."""
    frame = pd.read_csv(_simulate(tmp_path, _config(tmp_path)))
    np.testing.assert_allclose(frame["y1"], np.exp(0.5 * frame["t"]), rtol=1e-10)


def test_simulation_is_byte_identical(tmp_path):
    """Test reruns with the same seed produce the same file."""
    config = _config(tmp_path, noise={"distribution": "laplace", "variance": 0.5})
    first = _simulate(tmp_path, config, "first.csv").read_bytes()
    second = _simulate(tmp_path, config, "second.csv").read_bytes()
    assert first == second
    third = tmp_path / "third.csv"
    main(["simulate", "--config", str(config), "--out", str(third), "--seed", "4"])
    assert third.read_bytes() != first


def test_fit_regression(tmp_path):
    """Test the estimates for noiseless exponential growth."""
    config = _config(tmp_path)
    data = _simulate(tmp_path, config)
    out = tmp_path / "fit.json"
    code = main(["fit", "--config", str(config), "--data", str(data), "--out", str(out)])
    assert code == EXIT_OK
    payload = json.loads(out.read_text(encoding="utf-8"))
    assert sorted(payload) == [
        "cond_c",
        "converged",
        "criterion_value",
        "nu_hat",
        "sigma_hat",
        "theta_hat",
        "xi_hat",
    ]
    rounded = {
        key: np.round(payload[key], 4).tolist() for key in ("cond_c", "theta_hat", "xi_hat")
    }
    assert rounded == {"cond_c": 1.0, "theta_hat": [0.5], "xi_hat": [1.0]}
    assert payload["nu_hat"] is None
    assert payload["sigma_hat"] is None
    assert payload["converged"] is True


GOLDEN_DIR = Path(__file__).parent / "golden"


def _fit_json(tmp_path, config, data, name):
    out = tmp_path / name
    argv = ["fit", "--config", str(config), "--data", str(data), "--out", str(out)]
    assert main(argv) == EXIT_OK
    return out


def test_fit_fitzhugh_nagumo_noisy_golden(tmp_path):
    """Test one noisy FitzHugh-Nagumo dataset against its locked estimates."""
    config = CONFIG_DIR / "fhn_variance_cell.yaml"
    data = _simulate(tmp_path, config)
    first = _fit_json(tmp_path, config, data, "first.json")
    second = _fit_json(tmp_path, config, data, "second.json")
    assert first.read_bytes() == second.read_bytes()
    payload = json.loads(first.read_text(encoding="utf-8"))
    assert payload["converged"] is True
    assert np.array(payload["sigma_hat"]).shape == (4, 4)
    alpha, beta, gamma = payload["nu_hat"]
    assert gamma == pytest.approx(3.0, rel=0.05)
    assert alpha == pytest.approx(0.34, rel=0.05)
    assert beta == pytest.approx(0.2, abs=0.1)

    golden = GOLDEN_DIR / "fhn_variance_cell_fit.json"
    if not golden.exists():
        golden.parent.mkdir(exist_ok=True)
        golden.write_text(first.read_text(encoding="utf-8"), encoding="utf-8")
        pytest.skip(f"Locked new estimates in {golden.name}")
    locked = json.loads(golden.read_text(encoding="utf-8"))
    assert sorted(payload) == sorted(locked)
    assert payload["converged"] == locked["converged"]
    for key in ("theta_hat", "xi_hat", "nu_hat", "sigma_hat", "cond_c", "criterion_value"):
        np.testing.assert_allclose(payload[key], locked[key], rtol=1e-8, atol=1e-12)


def test_fit_lotka_volterra_round_trip(tmp_path):
    """Test a noiseless dense dataset returns the parameters."""
    config = _config(
        tmp_path,
        model="lotka_volterra",
        true={"theta": [0.5, 0.5, 0.5, 0.5], "xi": [1.0, 0.5]},
        design={"kind": "grid", "horizon": 14.9, "points": 1491},
        pipeline={"estimator": "smooth", "order": 3, "bandwidth": 0.01},
    )
    data = _simulate(tmp_path, config)
    out = tmp_path / "fit.json"
    assert main(["fit", "--config", str(config), "--data", str(data), "--out", str(out)]) == 0
    payload = json.loads(out.read_text(encoding="utf-8"))
    np.testing.assert_allclose(payload["theta_hat"], [0.5] * 4, atol=1e-3)
    np.testing.assert_allclose(payload["xi_hat"], [1.0, 0.5], atol=1e-3)


def test_fit_with_bootstrap(tmp_path, capsys):
    """Test the bootstrap covariance is written when requested."""
    config = _config(
        tmp_path,
        noise={"variance": 0.01},
        pipeline={"order": 1, "bandwidth": 0.3},
        bootstrap=5,
    )
    data = _simulate(tmp_path, config)
    assert main(["fit", "--config", str(config), "--data", str(data)]) == EXIT_OK
    payload = json.loads(capsys.readouterr().out)
    sigma = np.array(payload["sigma_hat"])
    assert sigma.shape == (1, 1)
    assert sigma[0, 0] > 0


def test_fit_non_identifiable(tmp_path, capsys):
    """Test dependent columns exit with the rank and null vector."""
    config = CONFIG_DIR / "duplicated_column.yaml"
    data = _simulate(tmp_path, config)
    code = main(["fit", "--config", str(config), "--data", str(data)])
    assert code == EXIT_NON_IDENTIFIABLE
    err = capsys.readouterr().err
    assert "rank 1 of 2" in err
    assert "null vector" in err


def test_identify(tmp_path, capsys):
    """Test the identifiability report for the duplicated model."""
    assert main(["identify", "--config", str(CONFIG_DIR / "duplicated_column.yaml")]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["rank"] == 1
    assert payload["p"] == 2
    assert payload["identifiable"] is False
    assert len(payload["null_space"]) == 1
    assert abs(abs(payload["null_space"][0][0]) - np.sqrt(0.5)) < 1e-6


def test_identify_from_data(tmp_path, capsys):
    """Test the report along a smoothed dataset."""
    config = _config(tmp_path)
    data = _simulate(tmp_path, config)
    assert main(["identify", "--config", str(config), "--data", str(data)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["identifiable"] is True
    assert payload["null_space"] == []


def test_monte_carlo(tmp_path):
    """Test one replicate writes a summary with zero SD and the raw table."""
    config = _config(tmp_path, noise={"variance": 0.01})
    out = tmp_path / "mc.csv"
    code = main(
        ["mc", "--config", str(config), "--out", str(out), "--replicates", "1"]
    )
    assert code == EXIT_OK
    summary = pd.read_csv(out).set_index("param")
    assert summary.loc["rate", "sd"] == 0.0
    assert list(summary.columns) == ["true", "mean", "sd", "are_pct"]
    raw = pd.read_csv(tmp_path / "mc_replicates.csv")
    assert len(raw) == 1
    assert not raw["failed"].any()


def test_monte_carlo_threads_are_byte_identical(tmp_path):
    """Test the worker count does not change the output."""
    config = _config(tmp_path, noise={"variance": 0.01})
    outputs = []
    for threads in ("1", "2"):
        out = tmp_path / f"mc{threads}.csv"
        argv = ["mc", "--config", str(config), "--out", str(out), "--replicates", "4"]
        assert main(argv + ["--threads", threads]) == EXIT_OK
        outputs.append((out.read_bytes(), (tmp_path / f"mc{threads}_replicates.csv").read_bytes()))
    assert outputs[0] == outputs[1]


def test_monte_carlo_with_reference(tmp_path):
    """Test the reference values are juxtaposed."""
    config = _config(
        tmp_path,
        model="fitzhugh_nagumo",
        true={"nu": [0.34, 0.2, 3.0], "xi": [0.0, 0.1]},
        design={"kind": "grid", "horizon": 20.0, "points": 201},
        noise={"variance": [0.05, 0.05]},
        pipeline={"order": 1, "bandwidth_units": "time"},
        reference={"kind": "derivative", "cell": [0.05, 0.05]},
    )
    out = tmp_path / "fhn.csv"
    argv = ["mc", "--config", str(config), "--out", str(out), "--replicates", "2"]
    assert main(argv) == EXIT_OK
    summary = pd.read_csv(out).set_index("param")
    assert summary.loc["alpha", "ref_are_pct"] == pytest.approx(6.21)


def test_monte_carlo_with_lotka_volterra_reference(tmp_path):
    """Test the step-estimator cells are juxtaposed for the configured J."""
    out = tmp_path / "lv.csv"
    config = CONFIG_DIR / "lv_laplace_setup1.yaml"
    argv = ["mc", "--config", str(config), "--out", str(out), "--replicates", "2"]
    assert main(argv) == EXIT_OK
    summary = pd.read_csv(out).set_index("param")
    assert summary.loc["theta1", "ref_mean"] == pytest.approx(0.476)
    assert summary.loc["traj_l2", "ref_sd"] == pytest.approx(0.041)


def test_rate(tmp_path):
    """Test the rate table ends with the slope rows."""
    config = _config(
        tmp_path,
        noise={"variance": 0.01},
        pipeline={"order": 1},
        rate={"ladder": [50, 100, 200], "replicates": 2},
    )
    out = tmp_path / "rate.csv"
    assert main(["rate", "--config", str(config), "--out", str(out)]) == EXIT_OK
    frame = pd.read_csv(out, dtype={"n": str})
    assert list(frame["n"]) == ["50", "100", "200", "slope", "slope_stderr"]
    assert np.isfinite(frame["rmse_theta"]).all()


def test_validation_exit_code(tmp_path):
    """Test an invalid configuration exits with 1."""
    config = _config(tmp_path, colour="blue")
    out = tmp_path / "data.csv"
    assert main(["simulate", "--config", str(config), "--out", str(out)]) == EXIT_VALIDATION
    assert not out.exists()


def test_io_exit_code(tmp_path):
    """Test missing files exit with 3."""
    missing = tmp_path / "missing.yaml"
    out = tmp_path / "data.csv"
    assert main(["simulate", "--config", str(missing), "--out", str(out)]) == EXIT_IO
    config = _config(tmp_path)
    code = main(["fit", "--config", str(config), "--data", str(tmp_path / "none.csv")])
    assert code == EXIT_IO


def test_dataset_mismatch_exit_code(tmp_path):
    """Test a dataset that does not fit the design exits with 1."""
    data = _simulate(tmp_path, _config(tmp_path))
    config = _config(tmp_path, "other.yaml", design={"kind": "grid", "horizon": 1.0, "points": 51})
    assert main(["fit", "--config", str(config), "--data", str(data)]) == EXIT_VALIDATION


def test_help_lists_configuration_keys(capsys):
    """Test the subcommand help documents every key."""
    with pytest.raises(SystemExit) as err:
        main(["mc", "--help"])
    assert err.value.code == 0
    out = capsys.readouterr().out
    assert "pipeline.bandwidth" in out
    assert "monte_carlo.replicates" in out
