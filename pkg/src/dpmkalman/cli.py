"""Experiment runner: config parsing, data I/O, and artifact emission.

Subcommands select the mode (mcmc | rbpf | deconv-bench | changepoint |
simulate). Every run reads one JSON config, executes the inference or
simulation, and writes a stable set of artifacts into the output
directory: estimates.csv, trace.jsonl, summary.json, and plotdata/ CSVs.
Exit codes: 0 success, 2 config error, 3 data error, 4 inference
degeneracy.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import changepoint as cpt
from . import deconv, mcmc, rbpf
from . import statespace as ss
from .dpm import AlphaPrior, DpHyper
from .gaussian import GaussianCluster, NIWParams, mvn_logpdf, sample_niw
from .rng import RngStream

MODES = ("mcmc", "rbpf", "deconv-bench", "changepoint", "simulate")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_DEGENERACY = 4


class ConfigError(ValueError):
    pass


class DataError(ValueError):
    pass


# ---------------------------------------------------------------------------
# configuration

_SECTION_FIELDS = {
    "model": {"preset", "h", "f_mat", "g_mat", "h_mat", "c_mat", "input",
              "init_mean", "init_cov"},
    "hyper": {"v", "w"},
    "run": {"n_iter", "burn_in", "particles", "lag", "ess_threshold",
            "seeds", "variants", "method", "threshold", "workers"},
    "io": {"input", "out_dir"},
}
_SIDE_FIELDS = {
    "type", "alpha", "base", "sample_alpha", "alpha_prior", "spike_prob",
    "zeta", "tau", "mean", "cov", "atoms", "probs",
}
_TOP_FIELDS = {"mode", "model", "hyper", "run", "io"}


def _check_fields(section: dict, allowed: set, where: str):
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown field(s) in {where}: {sorted(unknown)}")


def parse_config(raw: dict) -> dict:
    """Validate the raw config dict; unknown fields are errors."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    _check_fields(raw, _TOP_FIELDS, "config")
    mode = raw.get("mode")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    for name in ("model", "hyper", "run", "io"):
        section = raw.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"{name} section must be an object")
        _check_fields(section, _SECTION_FIELDS[name], name)
    for side in ("v", "w"):
        spec = raw.get("hyper", {}).get(side, {})
        if not isinstance(spec, dict):
            raise ConfigError(f"hyper.{side} must be an object")
        _check_fields(spec, _SIDE_FIELDS, f"hyper.{side}")
    run = raw.get("run", {})
    seeds = run.get("seeds")
    if seeds is not None and (not isinstance(seeds, list) or not seeds):
        raise ConfigError("run.seeds must be a nonempty list")
    if mode in ("mcmc", "rbpf", "changepoint") and not raw.get("io", {}).get("input"):
        raise ConfigError(f"{mode} mode requires io.input")
    if mode in ("mcmc", "rbpf") and "model" not in raw:
        raise ConfigError(f"{mode} mode requires a model section")
    if mode == "mcmc" and "hyper" not in raw:
        raise ConfigError("mcmc mode requires a hyper section")
    return raw


def load_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw)


def _cluster_from(spec: dict, what: str) -> GaussianCluster:
    try:
        return GaussianCluster(
            np.atleast_1d(np.asarray(spec["mean"], dtype=float)),
            np.atleast_2d(np.asarray(spec["cov"], dtype=float)),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad cluster spec for {what}: {exc}") from exc


def _niw_from(spec: dict, what: str) -> NIWParams:
    try:
        return NIWParams(
            mu0=np.atleast_1d(np.asarray(spec["mu0"], dtype=float)),
            kappa0=float(spec["kappa0"]),
            nu0=float(spec["nu0"]),
            lambda0=np.atleast_2d(np.asarray(spec["lambda0"], dtype=float)),
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad NIW base spec for {what}: {exc}") from exc


def build_side(spec: dict, where: str):
    """Noise side + hyper sampling flag from a hyper.{v,w} spec."""
    kind = spec.get("type")
    if kind == "dp":
        hyper = DpHyper(alpha=float(spec.get("alpha", 1.0)),
                        base=_niw_from(spec.get("base", {}), where))
        return mcmc.DpUrnSide(hyper), bool(spec.get("sample_alpha", False))
    if kind == "spike_dp":
        hyper = DpHyper(alpha=float(spec.get("alpha", 1.0)),
                        base=_niw_from(spec.get("base", {}), where))
        d = hyper.base.mu0.size
        spike = GaussianCluster(np.zeros(d), np.zeros((d, d)))
        side = mcmc.SpikeDpUrnSide(
            hyper, spike,
            zeta=spec.get("zeta"), tau=spec.get("tau"),
            spike_prob=spec.get("spike_prob"),
        )
        return side, bool(spec.get("sample_alpha", False))
    if kind == "fixed":
        return mcmc.FixedSide(_cluster_from(spec, where)), False
    if kind == "mixture":
        atoms = [_cluster_from(a, where) for a in spec.get("atoms", [])]
        try:
            return mcmc.FiniteMixtureSide(atoms, spec["probs"]), False
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"bad mixture spec for {where}: {exc}") from exc
    raise ConfigError(
        f"{where}.type must be dp | spike_dp | fixed | mixture, got {kind!r}"
    )


def build_model(spec: dict) -> ss.LinearGaussianModel:
    preset = spec.get("preset")
    if preset == "deconv":
        return deconv.build_deconv_statespace(spec.get("h", deconv.GEN_H))
    if preset == "changepoint":
        kwargs = {}
        if "init_mean" in spec:
            kwargs["init_mean"] = np.asarray(spec["init_mean"], dtype=float)
        if "init_cov" in spec:
            kwargs["init_cov"] = np.asarray(spec["init_cov"], dtype=float)
        return cpt.build_changepoint_statespace(**kwargs)
    if preset is not None:
        raise ConfigError(f"unknown model preset {preset!r}")
    try:
        return ss.LinearGaussianModel(
            f_mat=np.asarray(spec["f_mat"], dtype=float),
            g_mat=np.asarray(spec["g_mat"], dtype=float),
            h_mat=np.asarray(spec["h_mat"], dtype=float),
            init_mean=np.asarray(spec["init_mean"], dtype=float),
            init_cov=np.asarray(spec["init_cov"], dtype=float),
            c_mat=np.asarray(spec["c_mat"], dtype=float) if "c_mat" in spec else None,
            input=np.asarray(spec["input"], dtype=float) if "input" in spec else None,
        )
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"bad model spec: {exc}") from exc


# ---------------------------------------------------------------------------
# data I/O

def load_timeseries(path: str) -> np.ndarray:
    """Read a "t,z1[,z2,...]" CSV into a dense (T, n_z) array.

    Rows must carry strictly increasing integer t starting at 1 with no
    gaps; malformed rows raise DataError naming the line.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise DataError(f"{path}: empty file")
    header = [c.strip() for c in lines[0].split(",")]
    if header[0] != "t" or len(header) < 2 or any(
        h != f"z{i + 1}" for i, h in enumerate(header[1:])
    ):
        raise DataError(f"{path}: line 1: header must be t,z1[,z2,...]")
    n_z = len(header) - 1
    rows = []
    expected_t = 1
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != n_z + 1:
            raise DataError(
                f"{path}: line {lineno}: expected {n_z + 1} values, got {len(cells)}"
            )
        try:
            t = int(cells[0])
            vals = [float(c) for c in cells[1:]]
        except ValueError as exc:
            raise DataError(f"{path}: line {lineno}: {exc}") from exc
        if t != expected_t:
            if t > expected_t:
                raise DataError(f"{path}: line {lineno}: gap in t at t={expected_t}")
            raise DataError(f"{path}: line {lineno}: t must increase from 1, got {t}")
        expected_t += 1
        rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.asarray(rows, dtype=float)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path: Path, header: list[str], rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(
                c if isinstance(c, str)
                else str(int(c)) if isinstance(c, (int, np.integer))
                else _fmt(c)
                for c in row
            ) + "\n")


def write_timeseries(path: Path, zs: np.ndarray):
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    if zs.shape[0] == 1 and zs.shape[1] > 1:
        zs = zs.T
    header = ["t"] + [f"z{j + 1}" for j in range(zs.shape[1])]
    write_csv(path, header, ([t + 1, *zs[t]] for t in range(zs.shape[0])))


def write_jsonl(path: Path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _jsonable(val):
    if isinstance(val, np.ndarray):
        return val.tolist()
    if isinstance(val, (np.floating, np.integer)):
        return val.item()
    return val


# ---------------------------------------------------------------------------
# density grid (posterior predictive of the DP-mixture noise pdf)

def density_grid(
    records: list[mcmc.IterationRecord],
    grid: np.ndarray,
    base: NIWParams,
    n_mc: int = 200,
    rng: RngStream | None = None,
) -> np.ndarray:
    """Estimated noise pdf on a 1-d grid, averaged over retained sweeps.

    Per sweep the urn predictive mixes the occupied atoms (weight
    count/(T'+alpha)) with the base predictive (weight alpha/(T'+alpha));
    the base predictive is a Monte Carlo average of base draws, computed
    once and shared across sweeps.
    """
    if not records:
        raise ValueError("empty trace")
    grid = np.asarray(grid, dtype=float).reshape(-1)
    rng = rng or RngStream(0)
    base_pred = np.zeros_like(grid)
    for _ in range(n_mc):
        atom = sample_niw(base, rng)
        mu, var = float(atom.mean[0]), float(atom.cov[0, 0])
        base_pred += np.exp(-0.5 * (grid - mu) ** 2 / var) / np.sqrt(2 * np.pi * var)
    base_pred /= n_mc
    dens = np.zeros_like(grid)
    for rec in records:
        alpha = rec.alpha_v if rec.alpha_v is not None else 0.0
        total = rec.v_path_length + alpha
        if total <= 0:
            continue
        cur = alpha / total * base_pred
        for mean, cov, count in rec.v_atoms:
            mu, var = float(np.atleast_1d(mean)[0]), float(np.atleast_2d(cov)[0, 0])
            if var <= 0:
                continue
            cur += (count / total) * np.exp(
                -0.5 * (grid - mu) ** 2 / var
            ) / np.sqrt(2 * np.pi * var)
        dens += cur
    return dens / len(records)


# ---------------------------------------------------------------------------
# per-mode runners

def _write_common(out_dir: Path, summary: dict, trace_records):
    write_jsonl(out_dir / "trace.jsonl", trace_records)
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _mcmc_trace_records(trace: mcmc.ChainTrace):
    for k, rec in enumerate(trace.records):
        out = {
            "iter": trace.burn_in + k + 1,
            "alpha_v": rec.alpha_v,
            "alpha_w": rec.alpha_w,
            "n_clusters_v": len(rec.v_atoms),
            "t_prime": rec.v_path_length,
        }
        for key, val in rec.extras.items():
            out[key] = _jsonable(val)
        yield out


def run_mcmc_mode(config: dict, out_dir: Path, seed: int, quiet: bool) -> dict:
    zs = load_timeseries(config["io"]["input"])
    model = build_model(config["model"])
    hyper = config.get("hyper", {})
    v_side, sample_alpha_v = build_side(hyper.get("v", {"type": "fixed"}), "hyper.v")
    w_side, sample_alpha_w = build_side(hyper.get("w", {"type": "fixed"}), "hyper.w")
    run = config.get("run", {})
    n_iter = int(run.get("n_iter", 500))
    burn_in = int(run.get("burn_in", n_iter // 2))
    hp = mcmc.HyperParams(alpha_prior=AlphaPrior(3.0, 3.0))
    hp.flags.sample_alpha_v = sample_alpha_v
    hp.flags.sample_alpha_w = sample_alpha_w
    chain_config = mcmc.ChainConfig(
        burn_in=burn_in, retained=n_iter - burn_in, seed=seed, hyper=hp
    )
    trace = mcmc.run_chain(model, zs, v_side, w_side, chain_config, RngStream(seed))
    xhat = trace.mmse_state
    cov_diag = trace.smoothed_covs.mean(axis=0).diagonal(axis1=1, axis2=2)
    n_x = model.n_x
    header = ["t"] + [f"xhat_{i+1}" for i in range(n_x)] + [
        f"cov_diag_{i+1}" for i in range(n_x)
    ]
    write_csv(
        out_dir / "estimates.csv", header,
        ([t, *xhat[t], *cov_diag[t]] for t in range(xhat.shape[0])),
    )
    _emit_mcmc_plotdata(out_dir, model, zs, trace, v_side, seed)
    summary = {
        "seed": seed,
        "mode": "mcmc",
        "n_iter": n_iter,
        "burn_in": burn_in,
        "accept_rate": float(np.mean([s.rate for s in trace.acceptance])),
    }
    _write_common(out_dir, {**summary, "config": config}, _mcmc_trace_records(trace))
    return summary


def _emit_mcmc_plotdata(out_dir, model, zs, trace, v_side, seed):
    plot = out_dir / "plotdata"
    plot.mkdir(exist_ok=True)
    xhat = trace.mmse_state
    T = zs.shape[0]
    H = model.H(1)
    zhat = np.array([H @ xhat[t] for t in range(1, T + 1)])
    write_csv(
        plot / "signal_vs_estimate.csv", ["t", "z1", "zhat1"],
        ([t + 1, zs[t, 0], zhat[t, 0]] for t in range(T)),
    )
    write_csv(
        plot / "residuals.csv", ["t", "residual1"],
        ([t + 1, zs[t, 0] - zhat[t, 0]] for t in range(T)),
    )
    alphas = [r.alpha_v for r in trace.records]
    if any(a is not None for a in alphas):
        write_csv(
            plot / "alpha_trace.csv", ["iter", "alpha_v"],
            ([trace.burn_in + k + 1, a] for k, a in enumerate(alphas) if a is not None),
        )
    if hasattr(v_side, "hyper") and trace.records and trace.records[0].v_atoms is not None:
        lo = min((np.atleast_1d(m)[0] for r in trace.records for m, _, _ in r.v_atoms),
                 default=-1.0)
        hi = max((np.atleast_1d(m)[0] for r in trace.records for m, _, _ in r.v_atoms),
                 default=1.0)
        if model.n_v == 1:
            grid = np.linspace(lo - 3.0, hi + 3.0, 241)
            dens = density_grid(
                trace.records, grid, v_side.hyper.base, rng=RngStream(seed, 999)
            )
            write_csv(plot / "density_fv.csv", ["y", "density"], zip(grid, dens))
    hs = [r.extras.get("h") for r in trace.records]
    if trace.records and hs[0] is not None:
        L = len(hs[0])
        write_csv(
            plot / "h_trace.csv",
            ["iter"] + [f"h{j+1}" for j in range(L)],
            ([trace.burn_in + k + 1, *h] for k, h in enumerate(hs)),
        )


def run_rbpf_mode(config: dict, out_dir: Path, seed: int, quiet: bool) -> dict:
    zs = load_timeseries(config["io"]["input"])
    model = build_model(config["model"])
    hyper = config.get("hyper", {})
    v_side, _ = build_side(hyper.get("v", {"type": "fixed"}), "hyper.v")
    w_side, _ = build_side(hyper.get("w", {"type": "fixed"}), "hyper.w")
    run = config.get("run", {})
    rb_config = rbpf.RbpfConfig(
        n_particles=int(run.get("particles", 500)),
        ess_threshold=float(run.get("ess_threshold", 0.5)),
        lag=int(run.get("lag", 0)),
    )
    out = rbpf.run_rbpf(model, zs, v_side, w_side, rb_config, RngStream(seed))
    T, n_x = zs.shape[0], model.n_x
    header = (
        ["t"] + [f"xhat_{i+1}" for i in range(n_x)]
        + [f"cov_diag_{i+1}" for i in range(n_x)] + ["N_eff"]
    )
    write_csv(
        out_dir / "estimates.csv", header,
        ([t + 1, *out["means"][t], *np.diag(out["covs"][t]), out["ess"][t]]
         for t in range(T)),
    )
    plot = out_dir / "plotdata"
    plot.mkdir(exist_ok=True)
    H = model.H(1)
    zhat = np.array([H @ out["means"][t] for t in range(T)])
    write_csv(plot / "signal_vs_estimate.csv", ["t", "z1", "zhat1"],
              ([t + 1, zs[t, 0], zhat[t, 0]] for t in range(T)))
    write_csv(plot / "residuals.csv", ["t", "residual1"],
              ([t + 1, zs[t, 0] - zhat[t, 0]] for t in range(T)))
    summary = {
        "seed": seed,
        "mode": "rbpf",
        "particles": rb_config.n_particles,
        "lag": rb_config.lag,
        "mean_ess": float(out["ess"].mean()),
        "resample_fraction": float(out["resampled"].mean()),
    }
    records = (
        {"t": t + 1, "ess": float(out["ess"][t]), "resampled": bool(out["resampled"][t])}
        for t in range(T)
    )
    _write_common(out_dir, {**summary, "config": config}, records)
    return summary


def run_deconv_bench_mode(config: dict, out_dir: Path, seed: int, quiet: bool) -> dict:
    run = config.get("run", {})
    variants = run.get("variants", list(deconv.VARIANTS))
    bad = [v for v in variants if v not in deconv.VARIANTS]
    if bad:
        raise ConfigError(f"unknown deconv variants: {bad}")
    seeds = [int(s) for s in run.get("seeds", [seed])]
    n_iter = int(run.get("n_iter", 2500))
    burn_in = int(run.get("burn_in", 1875))
    results = deconv.run_deconv_benchmark(
        variants, seeds, n_iter=n_iter, burn_in=burn_in,
        n_workers=int(run.get("workers", 1)),
    )
    write_csv(
        out_dir / "estimates.csv", ["variant", "seed", "e_mse"],
        ([v, s, e] for v in variants for s, e in zip(seeds, results[v]["errors"])),
    )
    plot = out_dir / "plotdata"
    plot.mkdir(exist_ok=True)
    write_csv(
        plot / "table.csv", ["variant", "mean_e_mse", "std_e_mse"],
        ([v, results[v]["mean"], results[v]["std"]] for v in variants),
    )
    if not quiet:
        for v in variants:
            print(f"{v}: e_MSE mean {results[v]['mean']:.3f} "
                  f"std {results[v]['std']:.3f}")
    summary = {
        "seed": seed,
        "mode": "deconv-bench",
        "variants": {v: {"mean": results[v]["mean"], "std": results[v]["std"]}
                     for v in variants},
    }
    records = (
        {"variant": v, "seed": s, "e_mse": e}
        for v in variants for s, e in zip(seeds, results[v]["errors"])
    )
    _write_common(out_dir, {**summary, "config": config}, records)
    return summary


def run_changepoint_mode(config: dict, out_dir: Path, seed: int, quiet: bool) -> dict:
    zs = load_timeseries(config["io"]["input"])
    run = config.get("run", {})
    method = run.get("method", "mcmc")
    cp = cpt.ChangePointModel()
    T = zs.shape[0]
    if method == "mcmc":
        n_iter = int(run.get("n_iter", 300))
        burn_in = int(run.get("burn_in", n_iter // 2))
        trace, jp = cpt.run_changepoint_mcmc(zs, cp, n_iter, burn_in, seed)
        xhat = trace.mmse_state[1:]
        cov_diag = trace.smoothed_covs.mean(axis=0)[1:].diagonal(axis1=1, axis2=2)
        records = list(_mcmc_trace_records(trace))
        extra = {"n_iter": n_iter, "burn_in": burn_in}
    elif method == "rbpf":
        rb_config = rbpf.RbpfConfig(
            n_particles=int(run.get("particles", 1000)),
            ess_threshold=float(run.get("ess_threshold", 0.5)),
            lag=int(run.get("lag", 10)),
        )
        out, jp = cpt.run_changepoint_rbpf(
            zs, cp, rb_config.n_particles, rb_config.lag, seed,
            ess_threshold=rb_config.ess_threshold,
        )
        xhat = out["lag_means"]
        cov_diag = np.array([np.diag(out["covs"][t]) for t in range(T)])
        records = [
            {"t": t + 1, "ess": float(out["ess"][t]),
             "resampled": bool(out["resampled"][t]),
             "jump_prob": float(jp[t])}
            for t in range(T)
        ]
        extra = {"particles": rb_config.n_particles, "lag": rb_config.lag}
    else:
        raise ConfigError(f"run.method must be mcmc or rbpf, got {method!r}")
    header = (
        ["t"] + [f"xhat_{i+1}" for i in range(2)]
        + [f"cov_diag_{i+1}" for i in range(2)] + ["jump_prob"]
    )
    write_csv(
        out_dir / "estimates.csv", header,
        ([t + 1, *xhat[t], *cov_diag[t], jp[t]] for t in range(T)),
    )
    plot = out_dir / "plotdata"
    plot.mkdir(exist_ok=True)
    write_csv(plot / "jump_probabilities.csv", ["t", "jump_prob"],
              ([t + 1, jp[t]] for t in range(T)))
    write_csv(plot / "signal_vs_estimate.csv", ["t", "z1", "level_hat"],
              ([t + 1, zs[t, 0], xhat[t][0]] for t in range(T)))
    threshold = float(run.get("threshold", 0.5))
    det = cpt.detections(jp, threshold)
    summary = {
        "seed": seed,
        "mode": "changepoint",
        "method": method,
        "threshold": threshold,
        "detections": det.tolist(),
        **extra,
    }
    _write_common(out_dir, {**summary, "config": config}, records)
    if not quiet:
        print(f"detected jumps at t = {det.tolist()}")
    return summary


def run_simulate_mode(config: dict, out_dir: Path, seed: int, quiet: bool) -> dict:
    preset = config.get("model", {}).get("preset")
    rng = RngStream(seed)
    if preset == "deconv":
        v, zs = deconv.simulate_deconv_data(rng)
        truth = v[:, None]
    elif preset == "changepoint":
        cfg = cpt.SynthChangePointConfig()
        zs, levels, jumps = cpt.synth_changepoint_data(cfg, rng)
        truth = levels[:, None]
    else:
        raise ConfigError("simulate mode requires model.preset deconv | changepoint")
    write_timeseries(out_dir / "data.csv", zs)
    n = truth.shape[1]
    header = ["t"] + [f"xhat_{i+1}" for i in range(n)] + [
        f"cov_diag_{i+1}" for i in range(n)
    ]
    write_csv(
        out_dir / "estimates.csv", header,
        ([t + 1, *truth[t], *np.zeros(n)] for t in range(truth.shape[0])),
    )
    summary = {"seed": seed, "mode": "simulate", "preset": preset,
               "T": int(zs.shape[0])}
    _write_common(out_dir, {**summary, "config": config}, iter(()))
    return summary


_RUNNERS = {
    "mcmc": run_mcmc_mode,
    "rbpf": run_rbpf_mode,
    "deconv-bench": run_deconv_bench_mode,
    "changepoint": run_changepoint_mode,
    "simulate": run_simulate_mode,
}


def run(config: dict, out_dir: str, seed: int | None = None, quiet: bool = False) -> int:
    """Execute one configured run; returns the process exit code."""
    try:
        config = parse_config(config)
        if seed is None:
            seeds = config.get("run", {}).get("seeds")
            seed = int(seeds[0]) if seeds else 0
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.time()
        summary = _RUNNERS[config["mode"]](config, out, int(seed), quiet)
        wall = time.time() - t0
        # summary.json is rewritten with the wall time included
        with open(out / "summary.json", "r", encoding="utf-8") as fh:
            full = json.load(fh)
        full["wall_time_s"] = wall
        with open(out / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(full, fh, indent=2, sort_keys=True, default=_jsonable)
            fh.write("\n")
        if not quiet:
            print(f"done in {wall:.1f}s -> {out}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (rbpf.DegeneracyError, ss.FilterError) as exc:
        print(f"inference degeneracy: {exc}", file=sys.stderr)
        return EXIT_DEGENERACY


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="dpmkalman",
        description="State estimation with DP-mixture noise models",
    )
    sub = parser.add_subparsers(dest="mode", required=True)
    for mode in MODES:
        p = sub.add_parser(mode)
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="override run seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        if config["mode"] != args.mode:
            raise ConfigError(
                f"config mode {config['mode']!r} does not match subcommand {args.mode!r}"
            )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    return run(config, args.out, seed=args.seed, quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())
