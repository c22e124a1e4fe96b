"""End-to-end command-line tests running the installed package in subprocesses.

Each test drives ``python -m oscov.cli`` the way a user would, then checks
exit codes, written artifacts, and agreement with direct library calls.
"""

import json
import math
import subprocess
import sys

import numpy as np
import pytest

from oscov.estimate import EmpiricalVariogram, VariogramKind
from oscov.kernel_core import (
    Dispersion,
    KernelModel,
    LdhoParams,
    Regime,
    interaction_ratio,
)
from oscov.presets import preset_model


def run_cli(*args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "oscov.cli", *[str(a) for a in args]],
        capture_output=True,
        text=True,
        cwd=cwd,
    )


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


@pytest.fixture(scope="module")
def model_file(workdir):
    p = LdhoParams.from_damped_frequency(
        c0=1.0,
        tau_c=1.0,
        omega_d=2.0,
        regime=Regime.UNDERDAMPED,
        epsilon=1.0,
        interaction=0.3,
        dispersion=Dispersion.QUADRATIC,
        dim=2,
    )
    path = workdir / "model.json"
    path.write_text(KernelModel(params=p, nugget=0.1).to_json())
    return path


@pytest.fixture(scope="module")
def sim_dir(workdir, model_file):
    """One simulated field shared by the variogram and fit tests."""
    out = workdir / "sim"
    res = run_cli(
        "simulate",
        "--model", model_file,
        "--ns", "16,16",
        "--ds", "1.0,1.0",
        "--nt", "32",
        "--dt", "0.25",
        "--seed", "7",
        "--out", out,
        "--prefix", "field",
    )
    assert res.returncode == 0, res.stderr
    return out


# ---------------------------------------------------------------------------
# argument handling
# ---------------------------------------------------------------------------


def test_no_command_prints_help_and_exits_config():
    res = run_cli()
    assert res.returncode == 1
    assert "usage" in res.stdout.lower()


def test_unknown_flag_exits_config():
    res = run_cli("eval", "--no-such-flag")
    assert res.returncode == 1


def test_eval_requires_a_model(tmp_path):
    res = run_cli("eval", "--out", tmp_path)
    assert res.returncode == 1
    assert "--model" in res.stderr


def test_model_and_figure_are_mutually_exclusive(tmp_path, model_file):
    res = run_cli("eval", "--model", model_file, "--figure", "fig1", "--out", tmp_path)
    assert res.returncode == 1
    assert "not both" in res.stderr


def test_missing_model_file_exits_config(tmp_path):
    res = run_cli("eval", "--model", tmp_path / "nope.json", "--out", tmp_path)
    assert res.returncode == 1
    assert "not found" in res.stderr


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def test_eval_degenerate_grid_is_the_origin(tmp_path):
    res = run_cli(
        "eval", "--figure", "fig1", "--nr", 1, "--ntau", 1,
        "--r-max", 0, "--tau-max", 0, "--out", tmp_path,
    )
    assert res.returncode == 0
    lines = (tmp_path / "kernel_grid.csv").read_text().splitlines()
    assert lines[0] == "r,tau,C,C_norm,Cs,Ct,Qint"
    assert len(lines) == 2
    row = [float(x) for x in lines[1].split(",")]
    assert row[0] == 0.0 and row[1] == 0.0
    assert row[3] == 1.0  # normalized covariance at the origin
    assert row[6] == 1.0  # interaction ratio at the origin


def test_eval_grid_matches_direct_library_calls(tmp_path, model_file):
    res = run_cli(
        "eval", "--model", model_file, "--nr", 5, "--ntau", 4,
        "--r-max", 2.0, "--tau-max", 0.4, "--out", tmp_path,
    )
    assert res.returncode == 0, res.stderr
    table = np.loadtxt(tmp_path / "kernel_grid.csv", delimiter=",", skiprows=1)
    assert table.shape == (20, 7)

    m = KernelModel.from_json(model_file.read_text())
    rs = np.linspace(0.0, 2.0, 5)
    taus = np.linspace(0.0, 0.4, 4)
    r_grid, tau_grid = np.meshgrid(rs, taus)
    # 17 significant digits round-trip float64 exactly
    assert np.array_equal(table[:, 0].reshape(4, 5), r_grid)
    assert np.array_equal(table[:, 1].reshape(4, 5), tau_grid)
    c = np.asarray(m.covariance(r_grid, tau_grid), dtype=float)
    assert np.array_equal(table[:, 2].reshape(4, 5), c)
    assert np.array_equal(table[:, 3].reshape(4, 5), c / m.variance())
    assert np.array_equal(
        table[:, 4].reshape(4, 5), np.asarray(m.marginal_spatial(r_grid), dtype=float)
    )
    assert np.array_equal(
        table[:, 5].reshape(4, 5), np.asarray(m.marginal_temporal(tau_grid), dtype=float)
    )
    assert np.array_equal(
        table[:, 6].reshape(4, 5),
        np.asarray(interaction_ratio(m, r_grid, tau_grid), dtype=float),
    )


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def test_simulate_is_byte_deterministic(workdir, model_file, sim_dir):
    rerun = workdir / "sim_again"
    res = run_cli(
        "simulate",
        "--model", model_file,
        "--ns", "16,16",
        "--ds", "1.0,1.0",
        "--nt", "32",
        "--dt", "0.25",
        "--seed", "7",
        "--out", rerun,
        "--prefix", "field",
    )
    assert res.returncode == 0, res.stderr
    assert (rerun / "field.bin").read_bytes() == (sim_dir / "field.bin").read_bytes()
    assert (rerun / "field.json").read_bytes() == (sim_dir / "field.json").read_bytes()


def test_simulate_different_seed_changes_the_field(workdir, model_file, sim_dir):
    other = workdir / "sim_seed8"
    res = run_cli(
        "simulate",
        "--model", model_file,
        "--ns", "16,16",
        "--ds", "1.0,1.0",
        "--nt", "32",
        "--dt", "0.25",
        "--seed", "8",
        "--out", other,
        "--prefix", "field",
    )
    assert res.returncode == 0, res.stderr
    assert (other / "field.bin").read_bytes() != (sim_dir / "field.bin").read_bytes()


def test_simulate_grid_model_dimension_mismatch(tmp_path, model_file):
    res = run_cli(
        "simulate", "--model", model_file, "--ns", "16", "--ds", "1.0",
        "--nt", "8", "--dt", "0.5", "--out", tmp_path,
    )
    assert res.returncode == 1
    assert "2-dimensional" in res.stderr


# ---------------------------------------------------------------------------
# variogram
# ---------------------------------------------------------------------------


def test_variogram_writes_loadable_json(tmp_path, sim_dir):
    res = run_cli(
        "variogram",
        "--field", sim_dir / "field.bin",
        "--kind", "space_time",
        "--r-bins", "0,1,2",
        "--tau-bins", "0,0.5",
        "--out", tmp_path,
    )
    assert res.returncode == 0, res.stderr
    v = EmpiricalVariogram.from_json(
        (tmp_path / "variogram_space_time.json").read_text()
    )
    assert v.kind is VariogramKind.SPACE_TIME
    assert len(v) == 5  # 3 x 2 lag classes minus the excluded origin
    assert np.all(v.counts >= 1) and np.all(v.gamma >= 0.0)


def test_variogram_with_unreachable_bins_exits_numerical(tmp_path, sim_dir):
    res = run_cli(
        "variogram",
        "--field", sim_dir / "field.bin",
        "--kind", "spatial",
        "--r-bins", "500",
        "--out", tmp_path,
    )
    assert res.returncode == 2
    assert "empty" in res.stderr


def test_variogram_requires_input(tmp_path):
    res = run_cli("variogram", "--kind", "spatial", "--out", tmp_path)
    assert res.returncode == 1
    assert "--field" in res.stderr


# ---------------------------------------------------------------------------
# fit
# ---------------------------------------------------------------------------


def test_fit_is_byte_deterministic(workdir, sim_dir):
    args = (
        "fit",
        "--field", sim_dir / "field.bin",
        "--stage", "marginals",
        "--r-bins", "1,2,3",
        "--tau-bins", "0.25,0.5,0.75,1.0,1.25,1.5,1.75,2.0",
    )
    out_a, out_b = workdir / "fit_a", workdir / "fit_b"
    res_a = run_cli(*args, "--out", out_a)
    res_b = run_cli(*args, "--out", out_b)
    assert res_a.returncode == 0, res_a.stderr
    assert res_b.returncode == 0, res_b.stderr
    assert (out_a / "fit.json").read_bytes() == (out_b / "fit.json").read_bytes()
    result = json.loads((out_a / "fit.json").read_text())
    assert math.isfinite(result["objective"]) and result["objective"] >= 0.0
    rebuilt = KernelModel.from_dict(result["model"])
    assert rebuilt.dim == 2


# ---------------------------------------------------------------------------
# predict
# ---------------------------------------------------------------------------


def test_predict_interpolates_observations(tmp_path):
    data = tmp_path / "obs.csv"
    data.write_text(
        "s1,s2,t,z\n"
        "0.0,0.0,0.0,1.2\n"
        "1.0,0.0,0.5,-0.4\n"
        "0.0,1.0,1.0,0.7\n"
        "1.5,1.5,0.25,0.3\n"
    )
    query = tmp_path / "query.csv"
    query.write_text("s1,s2,t\n0.0,0.0,0.0\n20.0,20.0,50.0\n")
    res = run_cli(
        "predict", "--figure", "fig1", "--data", data, "--query", query,
        "--out", tmp_path,
    )
    assert res.returncode == 0, res.stderr
    lines = (tmp_path / "predictions.csv").read_text().splitlines()
    assert lines[0] == "s1,s2,t,mean,variance"
    rows = [[float(x) for x in line.split(",")] for line in lines[1:]]
    assert len(rows) == 2
    # fig1 carries no nugget, so the mean interpolates the observed value
    assert rows[0][3] == pytest.approx(1.2, abs=1e-8)
    assert abs(rows[0][4]) <= 1e-10
    # nearly decorrelated from every observation (|C|/C00 ~ 2e-6 at this
    # lag), the prediction relaxes to the prior mean and variance
    c00 = preset_model("fig1").variance()
    assert abs(rows[1][3]) < 1e-4
    assert rows[1][4] == pytest.approx(c00, rel=1e-5)


def test_predict_with_zero_observations_names_the_file(tmp_path):
    data = tmp_path / "empty.csv"
    data.write_text("s1,s2,t,z\n")
    query = tmp_path / "query.csv"
    query.write_text("s1,s2,t\n0.0,0.0,0.5\n")
    res = run_cli(
        "predict", "--figure", "fig1", "--data", data, "--query", query,
        "--out", tmp_path,
    )
    assert res.returncode == 1
    assert "empty.csv" in res.stderr and "zero observations" in res.stderr


def test_predict_rejects_malformed_query_header(tmp_path):
    data = tmp_path / "obs.csv"
    data.write_text("s1,s2,t,z\n0.0,0.0,0.0,1.0\n")
    query = tmp_path / "query.csv"
    query.write_text("x,y,when\n0.0,0.0,0.5\n")
    res = run_cli(
        "predict", "--figure", "fig1", "--data", data, "--query", query,
        "--out", tmp_path,
    )
    assert res.returncode == 1
    assert "header" in res.stderr


# ---------------------------------------------------------------------------
# checks
# ---------------------------------------------------------------------------


def test_checks_pass_for_a_named_preset(tmp_path):
    res = run_cli("checks", "--figure", "fig1", "--out", tmp_path)
    assert res.returncode == 0, res.stderr
    report = json.loads((tmp_path / "checks.json").read_text())
    assert report["all_passed"] is True
    names = {c["name"] for c in report["checks"]}
    assert names == {"admissibility", "oracle_agreement", "ode_order", "gram_psd"}
    assert res.stdout.count(" pass") == 4


def test_checks_run_every_preset_by_default(tmp_path):
    res = run_cli("checks", "--out", tmp_path)
    assert res.returncode == 0, res.stderr
    report = json.loads((tmp_path / "checks.json").read_text())
    assert report["all_passed"] is True
    assert len(report["checks"]) == 20  # five presets, four checks each
    assert {c["model"] for c in report["checks"]} == {
        "fig1", "fig2", "fig3", "ou1", "ou2"
    }


def test_checks_flag_a_separable_surrogate(tmp_path):
    # the surrogate shares the marginals but not the joint structure, so the
    # spectral oracle must catch the disagreement at mixed lags
    surrogate = KernelModel.surrogate_of(preset_model("fig1"))
    path = tmp_path / "surrogate.json"
    path.write_text(surrogate.to_json())
    res = run_cli("checks", "--model", path, "--out", tmp_path)
    assert res.returncode == 3
    report = json.loads((tmp_path / "checks.json").read_text())
    assert report["all_passed"] is False
    by_name = {c["name"]: c["passed"] for c in report["checks"]}
    assert by_name["oracle_agreement"] is False
    assert by_name["admissibility"] is True
