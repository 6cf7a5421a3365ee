"""Monte Carlo exit-time ensembles, CDF estimates, scaling fits and LDP collapse.

Trajectories are integrated in fixed-size chunks.  Each chunk is a batch of
rows advanced together by the split-step propagator; rows that exit are
dropped from the batch.  Every per-row operation (FFT, reductions, the
Newton solve) is independent of the other rows, and each trajectory draws
from its own Philox stream keyed by ``(master_seed, trial)``.  Record lists
are therefore identical for any chunk size or thread count.

The same trial index sees the same Brownian path at every noise level
(common random numbers), which keeps the ensemble curves monotone in ``eps``
without extra variance.
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import norm

from .integrator import IntegratorConfig, Propagator, time_steps
from .modulation import Decomposer, fixed_distance_h1, operational_alpha0
from .noise import MULTIPLIERS, NoiseSpec, WienerSampler
from .soliton import profile_values
from .spectral import Grid1D, make_grid, rnorm_h1_sq

#: edge radiation above this fraction of the soliton amplitude flags a trajectory
EDGE_FLAG_FRACTION = 1e-3

EXIT_KINDS = ("h1-threshold", "velocity-threshold", "parametrization-lost", "censored", "numerical-failure")

_Z95 = float(norm.ppf(0.975))


class InsufficientDataError(ValueError):
    """Not enough uncensored trajectories to fit a scaling law."""

    def __init__(self, message: str, epsilons: Sequence[float] = ()):
        super().__init__(message)
        self.epsilons = list(epsilons)


@lru_cache(maxsize=16)
def _alpha0(grid: Grid1D, c0: float) -> float:
    return operational_alpha0(grid, c0)


@dataclass(frozen=True)
class ExperimentPlan:
    c0: float = 1.0
    alpha: float = 0.2
    epsilons: tuple = (0.02, 0.03, 0.05, 0.08)
    horizon: float = 5.0
    trials: int = 200
    master_seed: int = 0
    exit_type: str = "fixed"
    n_points: int = 1024
    length: float = 80 * math.pi
    dt: float = 1e-3
    midpoint_sweeps: int = 3
    mode_cutoff: Optional[int] = None
    multiplier: str = "bessel_half"
    chunk_size: int = 50
    threads: int = 1
    noise_block: int = 32

    def __post_init__(self):
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        problems = self.validate()
        if problems:
            raise ValueError("invalid experiment plan: " + "; ".join(problems))

    def validate(self) -> list[str]:
        """Every violated precondition, as human-readable messages."""
        out = []
        if self.trials < 1:
            out.append("trials must be >= 1")
        if not self.epsilons:
            out.append("at least one epsilon is required")
        if any(e < 0 for e in self.epsilons):
            out.append("epsilons must be >= 0")
        if list(self.epsilons) != sorted(self.epsilons):
            out.append("epsilons must be sorted")
        if self.exit_type not in ("fixed", "modulated"):
            out.append(f"exit_type must be 'fixed' or 'modulated', got {self.exit_type!r}")
        if not self.horizon > 0:
            out.append("horizon must be positive")
        if not self.dt > 0:
            out.append("dt must be positive")
        if self.midpoint_sweeps < 1:
            out.append("midpoint_sweeps must be >= 1")
        if self.chunk_size < 1 or self.threads < 1 or self.noise_block < 1:
            out.append("chunk_size, threads and noise_block must be >= 1")
        if not self.c0 > 0:
            out.append("c0 must be positive")
        if not self.alpha > 0:
            out.append("alpha must be positive")
        try:
            grid = self.grid
        except ValueError as exc:
            out.append(str(exc))
            return out
        if self.multiplier not in MULTIPLIERS:
            out.append(f"unknown multiplier {self.multiplier!r}")
        else:
            try:
                self.noise_spec(grid)
            except ValueError as exc:
                out.append(str(exc))
        if self.c0 > 0 and self.alpha > 0:
            a0 = _alpha0(grid, float(self.c0))
            if self.alpha >= a0:
                out.append(f"alpha={self.alpha} is not below the operational alpha0={a0:.6g}")
        return out

    @property
    def grid(self) -> Grid1D:
        return make_grid(self.n_points, self.length)

    def noise_spec(self, grid: Optional[Grid1D] = None) -> NoiseSpec:
        return NoiseSpec(grid or self.grid, self.mode_cutoff, MULTIPLIERS[self.multiplier])


@dataclass(frozen=True)
class ExitRecord:
    trial_index: int
    epsilon: float
    exit_time: float  # math.inf when censored
    exit_kind: str
    final_c: float
    final_eta_h1: float

    @property
    def censored(self) -> bool:
        return self.exit_kind == "censored"

    @property
    def failed(self) -> bool:
        return self.exit_kind == "numerical-failure"


@dataclass(frozen=True)
class ScalingFit:
    exponent: float
    intercept: float
    r_squared: float
    n_points: int


@dataclass
class EnsembleStats:
    """By-products of an ensemble run that do not belong in the records."""

    newton_iterations: dict = field(default_factory=dict)  # iterations -> count
    max_edge_level: float = 0.0  # max |u - edge mean| near the box edge at exit or horizon
    edge_flagged: int = 0  # trajectories whose edge level exceeded EDGE_FLAG_FRACTION * amplitude

    def merge(self, other: "EnsembleStats"):
        for k, v in other.newton_iterations.items():
            self.newton_iterations[k] = self.newton_iterations.get(k, 0) + v
        self.max_edge_level = max(self.max_edge_level, other.max_edge_level)
        self.edge_flagged += other.edge_flagged


class _ChunkRunner:
    """Integrates one chunk of trials at one noise level."""

    def __init__(self, plan: ExperimentPlan):
        self.plan = plan
        self.grid = plan.grid
        self.spec = plan.noise_spec(self.grid)
        self.phi0 = profile_values(plan.c0, self.grid.x)
        self.phi0_hat = np.fft.rfft(self.phi0)
        self.blowup = 100.0 * math.sqrt(float(rnorm_h1_sq(self.phi0_hat, self.grid)))
        self.cfg = IntegratorConfig(
            self.grid, dt=plan.dt, frame_velocity=plan.c0, midpoint_sweeps=plan.midpoint_sweeps
        )
        self.steps = time_steps(plan.horizon, plan.dt)
        self.props = {h: Propagator(self.cfg, h) for h in set(self.steps)}
        self.decomposer = Decomposer(self.grid, plan.c0)
        self.edge = np.abs(self.grid.x) >= 0.45 * self.grid.length
        self.edge_limit = EDGE_FLAG_FRACTION * 1.5 * plan.c0

    def _edge(self, u_hat: np.ndarray, stats: "EnsembleStats"):
        if u_hat.shape[0] == 0:
            return
        edge = np.fft.irfft(u_hat, n=self.grid.n_points)[:, self.edge]
        # oscillation about the local mean: a spatially constant noise offset is not radiation
        level = np.max(np.abs(edge - edge.mean(axis=-1, keepdims=True)), axis=-1)
        stats.max_edge_level = max(stats.max_edge_level, float(level.max()))
        stats.edge_flagged += int(np.count_nonzero(level > self.edge_limit))

    def run(self, epsilon: float, trials: Sequence[int]) -> tuple[list[ExitRecord], EnsembleStats]:
        plan = self.plan
        b = len(trials)
        samplers = [WienerSampler(self.spec, plan.master_seed, t, block=plan.noise_block) for t in trials]
        rows = np.arange(b)  # chunk-local index of each live row
        u = np.tile(self.phi0_hat, (b, 1))
        c_prev = np.full(b, plan.c0)
        x_prev = np.zeros(b)
        out: dict[int, ExitRecord] = {}
        stats = EnsembleStats()
        modulated = plan.exit_type == "modulated"
        block = plan.noise_block
        xi = None
        t = 0.0
        n_steps = len(self.steps)
        for i, h in enumerate(self.steps):
            if rows.size == 0:
                break
            if i % block == 0:
                n_draw = min(block, n_steps - i)
                xi = np.stack([samplers[r].normals(n_draw) for r in rows])
            u = self.props[h](u)
            if epsilon:
                u = u + epsilon * self.spec.increment_rfft(xi[:, i % block], h)
            t = plan.dt * (i + 1) if h == plan.dt else plan.horizon

            h1 = np.sqrt(rnorm_h1_sq(u, self.grid))
            bad = ~np.isfinite(h1) | (h1 > self.blowup)
            exited = bad.copy()
            kinds = np.where(bad, "numerical-failure", "").astype(object)
            fin_c = np.full(rows.size, np.nan)
            fin_eta = np.full(rows.size, np.nan)
            if modulated:
                okr = ~bad
                d = self.decomposer.solve(u[okr], c_prev[okr], x_prev[okr])
                idx = np.flatnonzero(okr)
                iters, counts = np.unique(d.newton_iters, return_counts=True)
                for it, cn in zip(iters.tolist(), counts.tolist()):
                    stats.newton_iterations[it] = stats.newton_iterations.get(it, 0) + cn
                lost = ~d.converged
                vel = d.converged & (np.abs(d.c - plan.c0) >= plan.alpha)
                eta = d.converged & ~vel & (d.eta_h1 >= plan.alpha)
                kinds[idx[lost]] = "parametrization-lost"
                kinds[idx[vel]] = "velocity-threshold"
                kinds[idx[eta]] = "h1-threshold"
                exited[idx] = lost | vel | eta
                c_prev[idx] = np.where(d.converged, d.c, c_prev[idx])
                x_prev[idx] = np.where(d.converged, d.x0, x_prev[idx])
                fin_c[idx] = d.c
                fin_eta[idx] = d.eta_h1
            else:
                dist = fixed_distance_h1(u, self.phi0_hat, self.grid)
                hit = (dist >= plan.alpha) & ~bad
                kinds[hit] = "h1-threshold"
                exited |= hit

            if exited.any():
                leaving = np.flatnonzero(exited)
                self._edge(u[leaving[~bad[leaving]]], stats)
                if not modulated:
                    fin_c[leaving], fin_eta[leaving] = self._final_diagnostics(u[leaving], c_prev[leaving], x_prev[leaving])
                for j in leaving:
                    r = int(rows[j])
                    out[r] = ExitRecord(int(trials[r]), float(epsilon), t, str(kinds[j]), float(fin_c[j]), float(fin_eta[j]))
                keep = ~exited
                rows, u, c_prev, x_prev, xi = rows[keep], u[keep], c_prev[keep], x_prev[keep], xi[keep]

        if rows.size:
            self._edge(u, stats)
            if modulated:
                d = self.decomposer.solve(u, c_prev, x_prev)
                fc, fe = d.c, d.eta_h1
            else:
                fc, fe = self._final_diagnostics(u, c_prev, x_prev)
            for j, r in enumerate(rows):
                out[int(r)] = ExitRecord(int(trials[r]), float(epsilon), math.inf, "censored", float(fc[j]), float(fe[j]))
        return [out[r] for r in range(b)], stats

    def _final_diagnostics(self, u, c_guess, x_guess):
        d = self.decomposer.solve(u, c_guess, x_guess)
        return np.where(d.converged, d.c, np.nan), np.where(d.converged, d.eta_h1, np.nan)


def _chunks(trials: int, size: int) -> list[range]:
    return [range(s, min(s + size, trials)) for s in range(0, trials, size)]


def run_exit_ensemble(plan: ExperimentPlan, stats: Optional[EnsembleStats] = None) -> list[ExitRecord]:
    """Run ``plan.trials`` trajectories at every noise level of the plan.

    Records come back sorted by ``(epsilon, trial_index)``.  Numerical
    failures are kept as records of kind ``numerical-failure``.
    """
    runner = _ChunkRunner(plan)
    tasks = [(eps, chunk) for eps in plan.epsilons for chunk in _chunks(plan.trials, plan.chunk_size)]

    def work(task):
        eps, chunk = task
        return runner.run(eps, list(chunk))

    if plan.threads > 1:
        with ThreadPoolExecutor(max_workers=plan.threads) as pool:
            results = list(pool.map(work, tasks))
    else:
        results = [work(t) for t in tasks]
    records = []
    for recs, st in results:
        records.extend(recs)
        if stats is not None:
            stats.merge(st)
    records.sort(key=lambda r: (r.epsilon, r.trial_index))
    return records


# --- statistics -------------------------------------------------------------

MAX_FAILURE_FRACTION = 0.01


class ExperimentFailure(RuntimeError):
    """Too many trajectories ended in numerical failure."""


def failure_fraction(records: Sequence[ExitRecord]) -> float:
    if not records:
        return 0.0
    return sum(1 for r in records if r.failed) / len(records)


def check_failure_rate(records: Sequence[ExitRecord], limit: float = MAX_FAILURE_FRACTION):
    frac = failure_fraction(records)
    if frac > limit:
        raise ExperimentFailure(f"{100 * frac:.3g}% of trajectories failed numerically (limit {100 * limit:.3g}%)")


def wilson_interval(successes: int, n: int, z: float = _Z95) -> tuple[float, float]:
    if n <= 0:
        raise ValueError("empty sample")
    p = successes / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def estimate_cdf(records: Iterable[ExitRecord], t: float) -> tuple[float, float, float]:
    """Fraction of trajectories with ``exit_time <= t`` and its 95% Wilson interval.

    Numerical failures are left out of both counts.
    """
    recs = [r for r in records if not r.failed]
    if not recs:
        raise ValueError("no records to estimate from")
    eps = {r.epsilon for r in recs}
    if len(eps) > 1:
        raise ValueError(f"records mix noise levels {sorted(eps)}")
    hits = sum(1 for r in recs if r.exit_time <= t)
    lo, hi = wilson_interval(hits, len(recs))
    return hits / len(recs), lo, hi


def group_by_epsilon(records: Iterable[ExitRecord]) -> dict[float, list[ExitRecord]]:
    groups: dict[float, list[ExitRecord]] = {}
    for r in records:
        groups.setdefault(r.epsilon, []).append(r)
    return dict(sorted(groups.items()))


def median_exit_time(records: Sequence[ExitRecord]) -> float:
    """Lower median; finite as soon as half of the valid trajectories exited."""
    times = np.array([r.exit_time for r in records if not r.failed])
    if times.size == 0:
        return math.inf
    return float(np.quantile(times, 0.5, method="inverted_cdf"))


def _linear_fit(x, y) -> tuple[float, float, float]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    ss_res = float(np.sum(resid**2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    return float(slope), float(intercept), float(min(1.0, max(0.0, r2)))


def fit_exit_scaling(records: Iterable[ExitRecord]) -> ScalingFit:
    """Least-squares fit of ``log(median exit time)`` against ``log(eps)``."""
    groups = group_by_epsilon(records)
    short = []
    xs, ys = [], []
    for eps, recs in groups.items():
        m = median_exit_time(recs)
        if not math.isfinite(m) or eps <= 0:
            short.append(eps)
            continue
        xs.append(math.log(eps))
        ys.append(math.log(m))
    if short:
        raise InsufficientDataError(
            "fewer than half of the trajectories exited at eps = "
            + ", ".join(f"{e:g}" for e in short)
            + "; re-run these noise levels with a longer horizon",
            short,
        )
    if len(xs) < 3:
        raise InsufficientDataError(f"need at least 3 noise levels, got {len(xs)}", list(groups))
    slope, intercept, r2 = _linear_fit(xs, ys)
    return ScalingFit(slope, intercept, r2, len(xs))


@dataclass(frozen=True)
class CdfCell:
    epsilon: float
    horizon: float
    p_hat: float
    ci_low: float
    ci_high: float
    n: int


def cdf_table(records: Iterable[ExitRecord], horizons: Sequence[float]) -> list[CdfCell]:
    cells = []
    for eps, recs in group_by_epsilon(records).items():
        n = sum(1 for r in recs if not r.failed)
        for T in horizons:
            p, lo, hi = estimate_cdf(recs, T)
            cells.append(CdfCell(eps, float(T), p, lo, hi, n))
    return cells


@dataclass(frozen=True)
class CollapseDiagnostic:
    mode: str
    slope: float
    intercept: float
    r_squared: float
    used: list
    excluded: list
    points: list  # (eps, T, x, y)


def collapse_check(cells: Iterable, mode: str) -> CollapseDiagnostic:
    """Fit ``eps^2 log p`` against ``1/T`` (modulated) or ``1/T^3`` (fixed).

    ``cells`` holds :class:`CdfCell` objects or ``(eps, T, p)`` tuples.
    Cells with ``p`` in ``{0, 1}`` carry no large-deviation information and
    are excluded and listed.
    """
    if mode not in ("fixed", "modulated"):
        raise ValueError("mode must be 'fixed' or 'modulated'")
    power = 1 if mode == "modulated" else 3
    used, excluded, points = [], [], []
    for cell in cells:
        if isinstance(cell, CdfCell):
            eps, T, p = cell.epsilon, cell.horizon, cell.p_hat
        else:
            eps, T, p = cell
        if not 0.0 < p < 1.0:
            excluded.append((eps, T, p))
            continue
        x = T**-power
        y = eps * eps * math.log(p)
        used.append((eps, T, p))
        points.append((eps, T, x, y))
    if len(points) < 2:
        raise InsufficientDataError(f"collapse needs at least 2 cells with 0 < p < 1, got {len(points)}")
    slope, intercept, r2 = _linear_fit([p[2] for p in points], [p[3] for p in points])
    return CollapseDiagnostic(mode, slope, intercept, r2, used, excluded, points)


def record_digest(records: Iterable[ExitRecord]) -> str:
    """SHA-256 over the canonical CSV rendering of the sorted records."""
    from .io import records_csv

    recs = sorted(records, key=lambda r: (r.epsilon, r.trial_index))
    return hashlib.sha256(records_csv(recs).encode()).hexdigest()
