"""Pipelines behind the CLI subcommands: config in, files + manifest out.

Each pipeline builds its inputs from a RunConfig, runs its jobs (the TMM
scan optionally in a process pool), and writes NDJSON records, CSV plot
data, and manifest entries into the output directory. Determinism contract:
every data file is byte-identical for identical (config, seed) whatever the
worker count - jobs are keyed and written in sorted key order, values never
depend on scheduling, and timestamps exist only in the manifest.

Numerical failures (non-convergence, norm drift, failed jobs) raise
PipelineFailure carrying a structured diagnostic; the CLI writes it next to
the outputs and exits 2. Missing prerequisites are ConfigError (exit 1).
"""

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict

import numpy as np

from . import __version__
from .config import ConfigError
from .disorder import DisorderSpec, eval_h, eval_veff, gen_coeffs
from .driven1d import G_SAWTOOTH, drive_spec, propagate, effective_compare, \
    resonant_initial_state, secular_check
from .fss import extract_xi, fit_scaling
from .lattice import Grid, build_hamiltonian
from .manifest import RunManifest
from .spectral import MarginalProfile, fit_localization_length, interior_eigs, \
    lab_frame_trace, marginal
from .tmm import BarGeometry, TmmScan, from_record, lyapunov_run, run_record
from .wfio import ensure_dir, read_csv, read_ndjson, write_csv, write_ndjson, \
    write_wavefunction


class PipelineFailure(RuntimeError):
    """Numerical failure; carries the diagnostic dict the CLI writes out."""

    def __init__(self, message, diagnostic):
        super().__init__(message)
        self.diagnostic = diagnostic


def _manifest(cfg, out, command):
    ensure_dir(out)
    man = RunManifest(os.path.join(out, "manifest.ndjson"))
    man.start_run(cfg.config_hash, __version__, command)
    return man


def _disorder_spec(cfg):
    kwargs = {
        "k0": cfg.get("disorder", "k0"),
        "V0": cfg.get("disorder", "v0", 0.0),
        "dims": cfg.get("disorder", "dims", 3),
        "master_seed": cfg.get("run", "master_seed", 0),
    }
    k_cut = cfg.get("disorder", "k_cut", None)
    if k_cut is not None:
        kwargs["k_cut"] = k_cut
    normalization = cfg.get("disorder", "normalization", None)
    if normalization is not None:
        kwargs["normalization"] = normalization
    try:
        return DisorderSpec(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# ---------------------------------------------------------------- gen

def run_gen(cfg, out):
    """Synthesize one disorder realization: coefficient table + axis fields."""
    spec = _disorder_spec(cfg)
    man = _manifest(cfg, out, "gen")
    n = cfg.get("grid", "n", 256)
    realization = cfg.get("spectral", "realization", 0)
    grid = Grid.torus(n, dims=1)
    x = grid.axis_points(0)
    files = []
    records = []
    for axis in range(1, spec.dims + 1):
        c = gen_coeffs(spec, axis, realization)
        for k, ck in enumerate(c.c_pos, start=1):
            records.append({
                "axis": axis, "k": k, "re": float(ck.real),
                "im": float(ck.imag), "modulus": float(abs(ck)),
                "seed": spec.master_seed, "realization": realization,
            })
        h = eval_h(c, x)
        path = os.path.join(out, f"h_axis{axis}.csv")
        write_csv(path, {"x": x, "h": h.values})
        files.append(path)
    coeff_path = os.path.join(out, "coeffs.ndjson")
    write_ndjson(coeff_path, records)
    files.insert(0, coeff_path)
    for path in files:
        man.record_file(path, cfg.config_hash)
    return {"files": files, "harmonics_per_axis": spec.k_cut, "dims": spec.dims}


# ---------------------------------------------------------------- tmm

def _tmm_job(args):
    """One (M, E, realization) bar; module-level so a process pool can pickle it."""
    spec_dict, m, e, r, delta, l_max, mode, qr_period, rtol, boundary = args
    spec = DisorderSpec.from_dict(spec_dict)
    geom = BarGeometry(M=m, L=l_max, delta=delta, transverse_boundary=boundary)
    try:
        run = lyapunov_run(geom, e, spec, mode=mode, realization=r,
                           qr_period=qr_period, rtol=rtol)
    except Exception as exc:  # keep the pool alive; the key is reported failed
        return {"__error__": str(exc), "M": m, "E": e, "realization": r}
    return run_record(run, spec)


def _record_key(rec):
    return (int(rec["M"]), float(rec["E"]), int(rec["realization"]))


def run_tmm(cfg, out, workers=1, resume=False):
    spec = _disorder_spec(cfg)
    man = _manifest(cfg, out, "tmm")
    e_over = cfg.get("tmm", "energies_over_esigma")
    energies = [x * spec.e_sigma for x in e_over]
    m_values = cfg.get("tmm", "m_values")
    delta = cfg.get("tmm", "delta")
    l_max = cfg.get("tmm", "l_max")
    realizations = cfg.get("tmm", "realizations", 1)
    mode = cfg.get("tmm", "mode", "factorized")
    qr_period = cfg.get("tmm", "qr_period", 8)
    rtol = cfg.get("tmm", "rtol", 0.03)
    boundary = cfg.get("tmm", "transverse_boundary", "periodic")

    jobs = []
    for m in sorted(m_values):
        n_real = realizations[m] if isinstance(realizations, dict) else realizations
        for e in sorted(energies):
            for r in range(n_real):
                jobs.append((m, e, r))

    records_path = os.path.join(out, "tmm_records.ndjson")
    old = {}
    if resume and os.path.exists(records_path):
        done = man.completed_keys("tmm")
        for rec in read_ndjson(records_path):
            key = _record_key(rec)
            if key in done:
                old[key] = rec
    todo = [key for key in jobs if key not in old]

    args = [
        (spec.to_dict(), m, e, r, delta, l_max, mode, qr_period, rtol, boundary)
        for (m, e, r) in todo
    ]
    if workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_tmm_job, args))
    else:
        results = [_tmm_job(a) for a in args]

    failures = []
    fresh = {}
    for key, rec in zip(todo, results):
        if "__error__" in rec:
            failures.append(rec)
            man.record_job("tmm", key, "failed", error=rec["__error__"])
        else:
            fresh[key] = rec
            man.record_job("tmm", key, "done")

    merged = dict(old)
    merged.update(fresh)
    ordered = [merged[k] for k in sorted(merged)]
    write_ndjson(records_path, ordered)
    man.record_file(records_path, cfg.config_hash)

    summary = {
        "jobs_total": len(jobs), "jobs_run": len(todo),
        "jobs_skipped": len(jobs) - len(todo), "jobs_failed": len(failures),
        "records": len(ordered), "records_path": records_path,
    }
    if failures:
        raise PipelineFailure(
            f"{len(failures)} transfer-matrix jobs failed",
            {"pipeline": "tmm", "failures": failures, "summary": summary},
        )
    return summary


def load_tmm_scan(cfg, out):
    """Rebuild a TmmScan from the records a tmm run left in `out`."""
    spec = _disorder_spec(cfg)
    records_path = os.path.join(out, "tmm_records.ndjson")
    if not os.path.exists(records_path):
        raise ConfigError(f"no tmm records at {records_path}; run tmm first")
    records = read_ndjson(records_path)
    if not records:
        raise ConfigError(f"{records_path} is empty")
    scan = TmmScan(spec=spec, delta=cfg.get("tmm", "delta"),
                   mode=cfg.get("tmm", "mode", "factorized"))
    scan.runs = [from_record(r) for r in records]
    return scan


# ---------------------------------------------------------------- fss

def run_fss(cfg, out):
    spec = _disorder_spec(cfg)
    scan = load_tmm_scan(cfg, out)
    man = _manifest(cfg, out, "fss")
    window = cfg.get("fss", "window", None)
    if window is not None:
        window = (window[0] * spec.e_sigma, window[1] * spec.e_sigma)
    model = fit_scaling(
        scan,
        n_u=cfg.get("fss", "n_u", 2),
        n_F=cfg.get("fss", "n_f", 3),
        window=window,
        n_boot=cfg.get("fss", "n_boot", 200),
        seed=cfg.get("run", "master_seed", 0),
        e_sigma=spec.e_sigma,
    )
    files = []
    model_path = os.path.join(out, "scaling_model.json")
    write_ndjson(model_path, [model.to_dict()])
    files.append(model_path)

    # one Lambda(E) curve per M: the Fig.-1-style crossing plot data
    by_m = {}
    for r in scan.aggregated():
        by_m.setdefault(r.M, []).append(r)
    for m in sorted(by_m):
        rows = sorted(by_m[m], key=lambda r: r.energy)
        path = os.path.join(out, f"lambda_M{m}.csv")
        write_csv(path, {
            "E": [r.energy for r in rows],
            "E_over_Esigma": [r.energy / spec.e_sigma for r in rows],
            "Lambda": [r.Lambda for r in rows],
            "Lambda_stderr": [r.stderr / r.M for r in rows],
        })
        files.append(path)

    if model.reliable and math.isfinite(model.e_c):
        curve = extract_xi(scan, model=model, sigma=spec.sigma,
                           delta=cfg.get("tmm", "delta"))
        xi_path = os.path.join(out, "xi_curve.json")
        write_ndjson(xi_path, [{
            "e_c": curve.e_c, "sigma": curve.sigma, "nu": curve.nu,
            "amplitude": curve.amplitude, "points": curve.points,
            "flags": curve.flags,
        }])
        files.append(xi_path)

    for path in files:
        man.record_file(path, cfg.config_hash)
    summary = {"files": files, "e_c": model.e_c, "nu": model.nu,
               "reliable": model.reliable, "flags": model.flags}
    if not model.reliable:
        raise PipelineFailure(
            "scaling fit flagged unreliable",
            {"pipeline": "fss", "model": model.to_dict(), "summary": summary},
        )
    return summary


# ---------------------------------------------------------------- eig

def _field_3d(spec, grid, realization):
    cs = [gen_coeffs(spec, axis, realization) for axis in (1, 2, 3)]
    x = [grid.axis_points(i) for i in range(3)]
    return eval_veff(spec, *cs, x)


def run_eig(cfg, out):
    spec = _disorder_spec(cfg)
    man = _manifest(cfg, out, "eig")
    n_side = cfg.get("grid", "n")
    dims = cfg.get("grid", "dims", spec.dims)
    if dims != spec.dims:
        raise ConfigError(f"grid dims {dims} != disorder dims {spec.dims}")
    grid = Grid.torus(n_side, dims=dims)
    grid.check_nyquist(spec.k_cut)
    realization = cfg.get("spectral", "realization", 0)
    if dims == 3:
        veff = _field_3d(spec, grid, realization)
    else:
        c = gen_coeffs(spec, 1, realization)
        veff = spec.V0 * eval_h(c, grid.axis_points(0)).values
    h = build_hamiltonian(grid, veff)
    target = cfg.get("spectral", "target_over_esigma") * spec.e_sigma
    bundle = interior_eigs(
        h, target,
        n=cfg.get("spectral", "n_states", 1),
        tol=cfg.get("spectral", "tol", 1e-8),
        seed=spec.master_seed,
    )
    bundle.spec = spec
    bundle.realization = realization

    files = []
    states = []
    floor = cfg.get("spectral", "floor", 1e-6)
    for i in range(len(bundle)):
        wf_path = os.path.join(out, f"state{i}.wf")
        write_wavefunction(
            wf_path, bundle.states[i], grid, spec=spec,
            energy=float(bundle.energies[i]),
            residual=float(bundle.residuals[i]),
            seed=spec.master_seed,
            extra={"target": target, "realization": realization},
        )
        files += [wf_path, wf_path + ".json"]
        axes = []
        for axis in range(dims):
            prof = marginal(bundle.states[i], grid, axis)
            fit = fit_localization_length(prof, sigma_core=2.0 * spec.sigma,
                                          floor=floor)
            path = os.path.join(out, f"marginal_state{i}_axis{axis}.csv")
            write_csv(path, {"x": prof.x, "intensity": prof.values})
            files.append(path)
            axes.append({
                "axis": axis, "xi": fit.xi, "xi_over_sigma": fit.xi / spec.sigma,
                "center": fit.center, "decades": fit.decades,
                "reliable": fit.reliable, "flags": fit.flags,
            })
        states.append({
            "state": i, "E": float(bundle.energies[i]),
            "E_over_Esigma": float(bundle.energies[i] / spec.e_sigma),
            "residual": float(bundle.residuals[i]), "axes": axes,
        })
    summary_path = os.path.join(out, "eig_summary.json")
    write_ndjson(summary_path, [{
        "target": target, "target_over_esigma": target / spec.e_sigma,
        "converged": bundle.converged, "n_iter": bundle.n_iter,
        "seed": spec.master_seed, "realization": realization,
        "states": states,
    }])
    files.insert(0, summary_path)
    for path in files:
        man.record_file(path, cfg.config_hash)
    summary = {"files": files, "energies": [s["E"] for s in states],
               "residuals": [s["residual"] for s in states],
               "converged": bundle.converged}
    if not bundle.converged:
        raise PipelineFailure(
            "interior eigensolve did not reach tolerance",
            {"pipeline": "eig", "summary": summary,
             "residuals": [float(r) for r in bundle.residuals]},
        )
    return summary


# ---------------------------------------------------------------- trace

def run_trace(cfg, out):
    """Lab-frame time trace from a stored marginal (eig must have run)."""
    spec = _disorder_spec(cfg)
    state = 0
    axis = cfg.get("spectral", "axis", 0)
    marg_path = os.path.join(out, f"marginal_state{state}_axis{axis}.csv")
    summary_path = os.path.join(out, "eig_summary.json")
    if not (os.path.exists(marg_path) and os.path.exists(summary_path)):
        raise ConfigError(f"no eig outputs in {out}; run eig first")
    man = _manifest(cfg, out, "trace")
    cols = read_csv(marg_path)
    eig_summary = read_ndjson(summary_path)[0]
    ax_info = eig_summary["states"][state]["axes"][axis]
    x = cols["x"]
    profile = MarginalProfile(axis=axis, x=x, values=cols["intensity"],
                              delta=float(x[1] - x[0]))
    omega1 = cfg.get("driven1d", "omega1")
    xi = ax_info["xi"] if math.isfinite(ax_info["xi"]) else None
    trace = lab_frame_trace(profile, omega1, theta_star=ax_info["center"],
                            xi_fit=xi)
    trace_path = os.path.join(out, f"trace_state{state}_axis{axis}.csv")
    write_csv(trace_path, {"t": trace.times, "P": trace.values})
    meta_path = os.path.join(out, "trace.json")
    write_ndjson(meta_path, [{
        "omega1": omega1, "theta_star": trace.theta_star,
        "temporal_xi": trace.temporal_xi, "xi_fit": xi,
        "state": state, "axis": axis, "E": eig_summary["states"][state]["E"],
    }])
    for path in (trace_path, meta_path):
        man.record_file(path, cfg.config_hash)
    return {"files": [trace_path, meta_path], "temporal_xi": trace.temporal_xi,
            "omega1": omega1}


# ---------------------------------------------------------------- drive1d

def run_drive1d(cfg, out):
    man = _manifest(cfg, out, "drive1d")
    k0 = cfg.get("driven1d", "k0", 3)
    spec1d = drive_spec(
        cfg.get("driven1d", "v0"),
        cfg.get("driven1d", "omega1"),
        k0=k0,
        seed=cfg.get("run", "master_seed", 0),
        envelope=cfg.get("driven1d", "envelope", "flat"),
        g_mode=cfg.get("driven1d", "g_mode", G_SAWTOOTH),
        realization=cfg.get("driven1d", "realization", 0),
    )
    n = cfg.get("driven1d", "n", 512)
    periods = cfg.get("driven1d", "periods", 50)
    steps = cfg.get("driven1d", "steps_per_period", 0)
    if steps <= 0:
        steps = int(math.ceil(25 * k0))
    dt = spec1d.period / steps
    psi0 = resonant_initial_state(spec1d, n)
    try:
        traj = propagate(spec1d, psi0, dt, periods * spec1d.period)
    except FloatingPointError as exc:
        raise PipelineFailure(
            "propagation aborted on norm drift",
            {"pipeline": "drive1d", "error": str(exc),
             "params": {"v0": spec1d.V0, "omega1": spec1d.omega1,
                        "n": n, "dt": dt}},
        ) from exc
    fid = effective_compare(traj)
    fid_path = os.path.join(out, "fidelity.csv")
    write_csv(fid_path, {"t": fid.times, "fidelity": fid.values})
    meta_path = os.path.join(out, "drive1d.json")
    write_ndjson(meta_path, [{
        "v0": spec1d.V0, "omega1": spec1d.omega1, "k0": k0,
        "g_mode": spec1d.g_mode, "n": n, "periods": periods,
        "steps_per_period": steps, "final_fidelity": float(fid.values[-1]),
        "min_fidelity": float(np.min(fid.values)),
        "momentum_shift": fid.momentum_shift,
        "norm_drift": traj.norm_drift,
        "seed": cfg.get("run", "master_seed", 0),
    }])
    for path in (fid_path, meta_path):
        man.record_file(path, cfg.config_hash)
    return {"files": [fid_path, meta_path],
            "final_fidelity": float(fid.values[-1]),
            "min_fidelity": float(np.min(fid.values))}


# ---------------------------------------------------------------- secular

def run_check_secular(cfg, out):
    man = _manifest(cfg, out, "check-secular")
    report = secular_check(
        cfg.get("driven1d", "v0"),
        cfg.get("driven1d", "omega1"),
        omega2=cfg.get("driven1d", "omega2", 0.0),
        omega3=cfg.get("driven1d", "omega3", 0.0),
        k0=cfg.get("driven1d", "k0", 3),
        n_worst=cfg.get("driven1d", "n_worst", 5),
    )
    d = asdict(report)
    d["argmax"] = list(d["argmax"])
    d["omegas"] = list(d["omegas"])
    path = os.path.join(out, "secular.json")
    write_ndjson(path, [d])
    man.record_file(path, cfg.config_hash)
    # a violated condition is a finding, not a failure
    return {"files": [path], "max_term": report.max_term,
            "condition_ok": report.condition_ok}
