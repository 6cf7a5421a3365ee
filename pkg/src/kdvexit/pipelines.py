"""The five experiment pipelines behind the command line.

Each pipeline turns a validated :class:`RunConfig` into a dict of payloads
(file name -> text).  :func:`run` adds the manifest and writes everything
once the computation has finished, so a directory never holds outputs
without their manifest.
"""

from __future__ import annotations

import hashlib
import os
import time
import traceback
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import __version__
from .action import (
    VariationalProblem,
    action_fixed_frame_bound,
    heuristic_escape_path,
    optimal_action_endpoint,
    optimize_path,
    verify_control,
)
from .config import RunConfig
from .experiments import (
    EnsembleStats,
    ExperimentFailure,
    InsufficientDataError,
    cdf_table,
    check_failure_rate,
    collapse_check,
    failure_fraction,
    fit_exit_scaling,
    group_by_epsilon,
    median_exit_time,
    record_digest,
    run_exit_ensemble,
)
from .integrator import IntegrationError, IntegratorConfig, StochasticForcing, evolve
from .io import dumps, read_records, records_csv, table_csv
from .modulation import Decomposer
from .noise import MULTIPLIERS, NoiseSpec, WienerSampler
from .soliton import hamiltonian, mass, profile_values
from .spectral import SpectralField, make_grid, norm_h1

SNAPSHOT_COLUMNS = ("t", "x_peak", "c_fit", "eta_h1", "M", "H")
CDF_COLUMNS = ("epsilon", "T", "p_hat", "ci_low", "ci_high", "n")


class PipelineError(RuntimeError):
    """A pipeline finished but its result is not acceptable; payloads are kept."""

    def __init__(self, message: str, payloads: dict):
        super().__init__(message)
        self.payloads = payloads


@dataclass
class RunResult:
    status: int
    directory: str
    files: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()


def _payload_digest(payloads: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(payloads):
        h.update(name.encode() + b"\0" + payloads[name].encode() + b"\0")
    return h.hexdigest()


# --- simulate ----------------------------------------------------------------


def x_peak(u: np.ndarray, x: np.ndarray, dx: float) -> float:
    """Crest position: grid maximum refined by a parabola through its neighbours."""
    i = int(np.argmax(u))
    n = u.size
    um, u0, up = u[(i - 1) % n], u[i], u[(i + 1) % n]
    den = um - 2 * u0 + up
    off = 0.0 if den == 0 else 0.5 * (um - up) / den
    return float(x[i] + off * dx)


def simulate(cfg: RunConfig) -> dict:
    e, ph = cfg.experiment, cfg.physics
    grid = make_grid(cfg.grid.n_points, cfg.grid.length)
    spec = NoiseSpec(grid, cfg.mode_cutoff, MULTIPLIERS[cfg.noise.multiplier])
    sampler = WienerSampler(spec, e.master_seed, e.trial)
    icfg = IntegratorConfig(
        grid,
        dt=cfg.integrator.dt,
        frame_velocity=cfg.frame_velocity,
        midpoint_sweeps=cfg.integrator.midpoint_sweeps,
        blowup_h1=100.0 * norm_h1(SpectralField(grid, profile_values(ph.c0, grid.x))),
    )
    dec = Decomposer(grid, ph.c0)
    guess = {"c": ph.c0, "x": 0.0, "n": 0}
    drift = cfg.frame_velocity - ph.c0

    def row(t, u: SpectralField):
        r = dec.solve(u.rcoefficients[None, :], guess["c"], guess["x"] - drift * t)
        c_fit, x_fit = float(r.c[0]), float(r.x0[0])
        if r.converged[0]:
            guess["c"], guess["x"] = c_fit, x_fit + drift * t
        else:
            c_fit = float("nan")
        eta = float(r.eta_h1[0]) if r.converged[0] else float("nan")
        return (t, x_peak(u.values, grid.x, grid.dx), c_fit, eta, mass(u), hamiltonian(u))

    def observe(t, u):
        guess["n"] += 1
        if guess["n"] % e.snapshot_every == 0:
            return row(t, u)
        return None

    u0 = SpectralField(grid, profile_values(ph.c0, grid.x))
    rows = [row(0.0, u0)]
    status = "completed"
    message = ""
    try:
        res = evolve(u0, e.horizon, icfg, StochasticForcing(e.epsilon, sampler), observe)
        rows.extend(res.outputs)
        if guess["n"] % e.snapshot_every:
            rows.append(row(res.time, res.final))
    except IntegrationError as exc:
        status, message = "numerical-failure", str(exc)
    out = {}
    if "csv" in cfg.output.formats:
        out["snapshots.csv"] = table_csv(SNAPSHOT_COLUMNS, rows)
    if "json" in cfg.output.formats:
        out["summary.json"] = dumps(
            {
                "status": status,
                "message": message,
                "epsilon": e.epsilon,
                "trial": e.trial,
                "n_snapshots": len(rows),
                "final": dict(zip(SNAPSHOT_COLUMNS, rows[-1])),
            }
        )
    if status != "completed":
        raise PipelineError(message, out)
    return out


# --- exit-scan and report ------------------------------------------------------


def _statistics(records, horizons, exit_type) -> tuple[dict, dict, list]:
    cells = cdf_table(records, horizons)
    groups = group_by_epsilon(records)
    fits: dict = {
        "exit_type": exit_type,
        "medians": [{"epsilon": eps, "median_exit_time": median_exit_time(g)} for eps, g in groups.items()],
        "failures": {
            "fraction": failure_fraction(records),
            "count": sum(1 for r in records if r.failed),
            "by_epsilon": [{"epsilon": eps, "count": sum(1 for r in g if r.failed)} for eps, g in groups.items()],
        },
        "censored_fraction": [
            {"epsilon": eps, "fraction": sum(1 for r in g if r.censored) / len(g)} for eps, g in groups.items()
        ],
        "cdf": [vars(c) for c in cells],
    }
    try:
        f = fit_exit_scaling(records)
        fits["scaling"] = {"exponent": f.exponent, "intercept": f.intercept, "r_squared": f.r_squared, "n_points": f.n_points}
    except InsufficientDataError as exc:
        fits["scaling"] = {"error": str(exc), "rerun_epsilons": exc.epsilons}
    try:
        d = collapse_check(cells, exit_type)
        collapse = {
            "mode": d.mode,
            "abscissa": "1/T" if d.mode == "modulated" else "1/T^3",
            "slope": d.slope,
            "intercept": d.intercept,
            "r_squared": d.r_squared,
            "points": [{"epsilon": p[0], "T": p[1], "x": p[2], "y": p[3]} for p in d.points],
            "excluded": [{"epsilon": c[0], "T": c[1], "p_hat": c[2]} for c in d.excluded],
        }
    except InsufficientDataError as exc:
        collapse = {"mode": exit_type, "error": str(exc)}
    return fits, collapse, cells


def _emit_statistics(cfg, records, horizons, exit_type, extra: dict) -> dict:
    fits, collapse, cells = _statistics(records, horizons, exit_type)
    fits.update(extra)
    out = {}
    if "csv" in cfg.output.formats:
        out["cdf.csv"] = table_csv(CDF_COLUMNS, [(c.epsilon, c.horizon, c.p_hat, c.ci_low, c.ci_high, c.n) for c in cells])
    if "json" in cfg.output.formats:
        out["fits.json"] = dumps(fits)
        out["collapse.json"] = dumps(collapse)
    return out


def exit_scan(cfg: RunConfig) -> dict:
    plan = cfg.to_plan()
    stats = EnsembleStats()
    records = run_exit_ensemble(plan, stats)
    total = sum(stats.newton_iterations.values())
    extra = {
        "newton_iterations": {str(k): v for k, v in sorted(stats.newton_iterations.items())},
        "newton_le5_fraction": (sum(v for k, v in stats.newton_iterations.items() if k <= 5) / total) if total else None,
        "max_edge_level": stats.max_edge_level,
        "edge_flagged_trajectories": stats.edge_flagged,
        "record_digest": record_digest(records),
    }
    out = _emit_statistics(cfg, records, cfg.horizons, plan.exit_type, extra)
    out["records.csv"] = records_csv(records)  # always written: the digest is defined on it
    try:
        check_failure_rate(records)
    except ExperimentFailure as exc:
        raise PipelineError(str(exc), out) from None
    return out


def report(cfg: RunConfig) -> dict:
    src = cfg.experiment.source or cfg.output.directory
    with open(os.path.join(src, "records.csv"), encoding="utf-8") as fh:
        records = read_records(fh.read())
    out = _emit_statistics(cfg, records, cfg.horizons, cfg.experiment.exit_type, {"record_digest": record_digest(records)})
    return {("report_" + k): v for k, v in out.items()}


# --- action and verify-control -----------------------------------------------


def action_table(cfg: RunConfig) -> dict:
    ph, e = cfg.physics, cfg.experiment
    grid = make_grid(cfg.grid.n_points, cfg.grid.length)
    rows = []
    for T in cfg.horizons:
        closed = optimal_action_endpoint(ph.c0, ph.alpha, T, grid=grid)
        opt = optimize_path(VariationalProblem("endpoint", ph.c0, ph.alpha, T, ph.c_inf), e.m_nodes, grid=grid)
        esc = heuristic_escape_path(ph.c0, ph.alpha, T, c_inf=ph.c_inf)
        fixed = action_fixed_frame_bound(ph.c0, ph.alpha, T, grid=grid, c_inf=ph.c_inf)
        rows.append(
            {
                "c0": ph.c0,
                "alpha": ph.alpha,
                "T": T,
                "closed_form": closed.value,
                "optimizer": opt.action,
                "optimizer_converged": opt.converged,
                "optimizer_relative_gap": (opt.action - closed.value) / closed.value,
                "T_times_value": T * closed.value,
                "fixed_frame_bound": fixed,
                "T3_times_fixed_frame_bound": T**3 * fixed,
                "escape_delta": esc.delta,
                "escape_gamma": esc.gamma,
                "escape_shift": esc.shift,
                "escape_condition_satisfied": esc.condition_satisfied,
            }
        )
    tv = np.array([r["T_times_value"] for r in rows])
    t3 = np.array([r["T3_times_fixed_frame_bound"] for r in rows])
    summary = {
        "rows": rows,
        "T_times_value_relative_spread": float(np.ptp(tv) / np.mean(tv)),
        "T3_fixed_frame_relative_spread": float(np.ptp(t3) / np.min(t3)),
    }
    return {"action.json": dumps(summary)}


def control_check(cfg: RunConfig) -> dict:
    ph, e = cfg.physics, cfg.experiment
    grid = make_grid(cfg.grid.n_points, cfg.grid.length)
    r = verify_control(ph.c0, ph.alpha, e.horizon, grid=grid, dt=cfg.integrator.dt, m_nodes=e.m_nodes + 1)
    out = {}
    if "json" in cfg.output.formats:
        out["control.json"] = dumps(
            {
                "target_c": r.target_c,
                "terminal_c": r.terminal_c,
                "terminal_relative_error": r.relative_error,
                "terminal_within_5_percent": r.relative_error < 0.05,
                "sup_relative_error": r.sup_relative_error,
                "action": r.action,
                "control_energy": r.control_energy,
                "energy_action_relative_error": abs(r.control_energy - r.action) / r.action,
            }
        )
    if "csv" in cfg.output.formats:
        out["control_samples.csv"] = table_csv(("t", "c_path", "c_fit"), r.samples)
    return out


PIPELINES: dict[str, Callable[[RunConfig], dict]] = {
    "simulate": simulate,
    "exit-scan": exit_scan,
    "action": action_table,
    "verify-control": control_check,
    "report": report,
}


def run(cfg: RunConfig, directory: str | None = None) -> RunResult:
    """Execute the configured pipeline and write its payloads plus ``manifest.json``.

    Returns status 0 on success and 1 on failure; failures also write
    ``error.json``.  The report pipeline names its manifest
    ``report_manifest.json``.
    """
    directory = directory or cfg.output.directory
    start = time.perf_counter()
    status = 0
    error = None
    try:
        payloads = PIPELINES[cfg.kind](cfg)
    except PipelineError as exc:
        payloads, status = exc.payloads, 1
        error = {"type": type(exc).__name__, "message": str(exc)}
    except Exception as exc:  # reported, not swallowed: status 1 plus error.json
        payloads, status = {}, 1
        error = {"type": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc()}
    if error is not None:
        payloads["error.json"] = dumps(error)
    if cfg.kind == "exit-scan" and "records.csv" in payloads:
        digest = _sha(payloads["records.csv"])
    else:
        digest = _payload_digest(payloads)
    manifest = {
        "kind": cfg.kind,
        "status": "ok" if status == 0 else "error",
        "config": cfg.to_dict(),
        "version": __version__,
        "seed": cfg.experiment.master_seed,
        "digest": digest,
        "outputs": {name: _sha(text) for name, text in sorted(payloads.items())},
        "wall_time_seconds": time.perf_counter() - start,
    }
    os.makedirs(directory, exist_ok=True)
    for name, text in sorted(payloads.items()):
        with open(os.path.join(directory, name), "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    # a report usually lands next to the scan it summarizes; keep both manifests
    manifest_name = "report_manifest.json" if cfg.kind == "report" else "manifest.json"
    with open(os.path.join(directory, manifest_name), "w", encoding="utf-8", newline="") as fh:
        fh.write(dumps(manifest))
    return RunResult(status, directory, sorted(payloads) + [manifest_name], manifest)
