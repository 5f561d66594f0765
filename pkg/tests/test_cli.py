import json

import numpy as np
import pytest

from dpmkalman import cli
from dpmkalman.gaussian import NIWParams
from dpmkalman.rng import RngStream


# ---------------------------------------------------------------------------
# config parsing


def _minimal_mcmc_config(input_path):
    return {
        "mode": "mcmc",
        "model": {
            "f_mat": [[1.0]],
            "g_mat": [[1.0]],
            "h_mat": [[1.0]],
            "init_mean": [0.0],
            "init_cov": [[1.0]],
        },
        "hyper": {
            "v": {
                "type": "dp",
                "alpha": 1.0,
                "base": {"mu0": [0.0], "kappa0": 0.1, "nu0": 4.0, "lambda0": [[1.0]]},
            },
            "w": {"type": "fixed", "mean": [0.0], "cov": [[0.5]]},
        },
        "run": {"n_iter": 30, "burn_in": 15},
        "io": {"input": str(input_path)},
    }


def _write_series(path, zs):
    cli.write_timeseries(path, np.asarray(zs, dtype=float))


def test_unknown_top_level_field_rejected(tmp_path):
    cfg = _minimal_mcmc_config(tmp_path / "d.csv")
    cfg["extra"] = 1
    with pytest.raises(cli.ConfigError, match="extra"):
        cli.parse_config(cfg)


def test_unknown_section_field_rejected(tmp_path):
    cfg = _minimal_mcmc_config(tmp_path / "d.csv")
    cfg["run"]["iters"] = 10
    with pytest.raises(cli.ConfigError, match="iters"):
        cli.parse_config(cfg)


def test_unknown_side_field_rejected(tmp_path):
    cfg = _minimal_mcmc_config(tmp_path / "d.csv")
    cfg["hyper"]["v"]["concentration"] = 2.0
    with pytest.raises(cli.ConfigError, match="concentration"):
        cli.parse_config(cfg)


def test_bad_mode_rejected():
    with pytest.raises(cli.ConfigError, match="mode"):
        cli.parse_config({"mode": "smooth"})


def test_bad_side_type_rejected():
    with pytest.raises(cli.ConfigError, match="type"):
        cli.build_side({"type": "gamma"}, "hyper.v")


# ---------------------------------------------------------------------------
# time series I/O


def test_load_timeseries_roundtrip(tmp_path):
    path = tmp_path / "d.csv"
    data = np.array([[1.5, -0.25], [0.125, 3.0], [2.0, 0.5]])
    _write_series(path, data)
    out = cli.load_timeseries(str(path))
    assert np.array_equal(out, data)


def test_load_timeseries_header_error(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("time,z1\n1,0.5\n")
    with pytest.raises(cli.DataError, match="line 1"):
        cli.load_timeseries(str(path))


def test_load_timeseries_gap_error(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("t,z1\n1,0.5\n3,0.7\n")
    with pytest.raises(cli.DataError, match="gap in t at t=2"):
        cli.load_timeseries(str(path))


def test_load_timeseries_dimension_error(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("t,z1,z2\n1,0.5,0.2\n2,0.7\n")
    with pytest.raises(cli.DataError, match="line 3"):
        cli.load_timeseries(str(path))


def test_load_timeseries_parse_error(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("t,z1\n1,abc\n")
    with pytest.raises(cli.DataError, match="line 2"):
        cli.load_timeseries(str(path))


# ---------------------------------------------------------------------------
# density grid


def test_density_grid_single_atom_alpha_zero():
    # alpha -> 0 with one occupied atom: the grid is exactly that Gaussian
    from dpmkalman.mcmc import IterationRecord

    rec = IterationRecord(
        alpha_v=1e-12,
        alpha_w=None,
        v_atoms=[(np.array([2.0]), np.array([[0.5]]), 40)],
        w_atoms=[],
        v_path_length=40,
    )
    grid = np.linspace(-2.0, 6.0, 201)
    base = NIWParams(np.zeros(1), 0.1, 4.0, np.eye(1))
    dens = cli.density_grid([rec], grid, base, rng=RngStream(0))
    expect = np.exp(-0.5 * (grid - 2.0) ** 2 / 0.5) / np.sqrt(2 * np.pi * 0.5)
    assert np.allclose(dens, expect, atol=1e-9)


def test_density_grid_integrates_to_one():
    from dpmkalman.mcmc import IterationRecord

    rec = IterationRecord(
        alpha_v=1.0,
        alpha_w=None,
        v_atoms=[
            (np.array([2.0]), np.array([[0.5]]), 30),
            (np.array([-1.0]), np.array([[0.1]]), 10),
        ],
        w_atoms=[],
        v_path_length=40,
    )
    grid = np.linspace(-12.0, 14.0, 1301)
    base = NIWParams(np.zeros(1), 0.1, 4.0, np.eye(1))
    dens = cli.density_grid([rec], grid, base, n_mc=400, rng=RngStream(1))
    integral = np.trapezoid(dens, grid)
    assert integral == pytest.approx(1.0, abs=0.02)


# ---------------------------------------------------------------------------
# end-to-end runs


def test_simulate_then_mcmc_roundtrip(tmp_path):
    sim_dir = tmp_path / "sim"
    code = cli.run(
        {"mode": "simulate", "model": {"preset": "changepoint"}},
        str(sim_dir),
        seed=3,
        quiet=True,
    )
    assert code == cli.EXIT_OK
    zs = cli.load_timeseries(str(sim_dir / "data.csv"))
    assert zs.shape == (120, 1)

    cfg = {
        "mode": "changepoint",
        "run": {"n_iter": 40, "burn_in": 20, "method": "mcmc"},
        "io": {"input": str(sim_dir / "data.csv")},
    }
    out_dir = tmp_path / "cp"
    assert cli.run(cfg, str(out_dir), seed=5, quiet=True) == cli.EXIT_OK
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["mode"] == "changepoint"
    assert "wall_time_s" in summary
    est = (out_dir / "estimates.csv").read_text().splitlines()
    assert est[0] == "t,xhat_1,xhat_2,cov_diag_1,cov_diag_2,jump_prob"
    assert len(est) == 121
    assert (out_dir / "plotdata" / "jump_probabilities.csv").exists()


def test_mcmc_mode_outputs(tmp_path):
    data = tmp_path / "d.csv"
    rng = RngStream(4)
    _write_series(data, 0.5 * rng.standard_normal((40, 1)))
    cfg = _minimal_mcmc_config(data)
    out_dir = tmp_path / "out"
    assert cli.run(cfg, str(out_dir), seed=1, quiet=True) == cli.EXIT_OK
    est = (out_dir / "estimates.csv").read_text().splitlines()
    assert est[0] == "t,xhat_1,cov_diag_1"
    assert len(est) == 42  # header + t=0..40
    assert (out_dir / "trace.jsonl").exists()
    assert (out_dir / "plotdata" / "density_fv.csv").exists()


def test_rbpf_mode_outputs(tmp_path):
    data = tmp_path / "d.csv"
    rng = RngStream(5)
    _write_series(data, 0.5 * rng.standard_normal((30, 1)))
    cfg = {
        "mode": "rbpf",
        "model": {
            "f_mat": [[0.9]],
            "g_mat": [[1.0]],
            "h_mat": [[1.0]],
            "init_mean": [0.0],
            "init_cov": [[1.0]],
        },
        "hyper": {
            "v": {"type": "fixed", "mean": [0.0], "cov": [[0.3]]},
            "w": {"type": "fixed", "mean": [0.0], "cov": [[0.25]]},
        },
        "run": {"particles": 50},
        "io": {"input": str(data)},
    }
    out_dir = tmp_path / "out"
    assert cli.run(cfg, str(out_dir), seed=2, quiet=True) == cli.EXIT_OK
    est = (out_dir / "estimates.csv").read_text().splitlines()
    assert est[0] == "t,xhat_1,cov_diag_1,N_eff"
    assert len(est) == 31


def test_exit_code_config_error(tmp_path):
    code = cli.run({"mode": "mcmc"}, str(tmp_path / "o"), seed=0, quiet=True)
    assert code == cli.EXIT_CONFIG


def test_exit_code_data_error(tmp_path):
    cfg = _minimal_mcmc_config(tmp_path / "missing.csv")
    code = cli.run(cfg, str(tmp_path / "o"), seed=0, quiet=True)
    assert code == cli.EXIT_DATA


def test_main_mode_mismatch(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"mode": "simulate", "model": {"preset": "deconv"}}))
    code = cli.main(["mcmc", "--config", str(cfg_path), "--out", str(tmp_path / "o")])
    assert code == cli.EXIT_CONFIG


def test_main_simulate_deconv(tmp_path):
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({"mode": "simulate", "model": {"preset": "deconv"}}))
    out = tmp_path / "o"
    code = cli.main(
        ["simulate", "--config", str(cfg_path), "--seed", "7", "--out", str(out),
         "--quiet"]
    )
    assert code == cli.EXIT_OK
    zs = cli.load_timeseries(str(out / "data.csv"))
    assert zs.shape == (120, 1)


def test_rerun_byte_identical_estimates(tmp_path):
    data = tmp_path / "d.csv"
    rng = RngStream(6)
    _write_series(data, 0.5 * rng.standard_normal((25, 1)))
    cfg = _minimal_mcmc_config(data)
    blobs = []
    for name in ("a", "b"):
        out_dir = tmp_path / name
        assert cli.run(cfg, str(out_dir), seed=9, quiet=True) == cli.EXIT_OK
        blobs.append((out_dir / "estimates.csv").read_bytes())
    assert blobs[0] == blobs[1]
