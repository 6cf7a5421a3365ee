"""Split-step integration of deterministic, stochastic and controlled KdV.

In the frame moving at speed ``c0`` the equation reads

    du = (-u_xxx + c0 u_x - (u^2)_x) dt + eps dW      (stochastic)
    u_t = -u_xxx + c0 u_x - (u^2)_x + Phi h(t)          (controlled)

Each step is a Strang composition: exact half step of the dispersive part,
midpoint-rule step of the dealiased nonlinearity, exact half step.  The
midpoint stage is found by a fixed number of fixed-point sweeps.  One sweep
is the explicit midpoint rule; three reach the implicit midpoint rule to
round-off, which conserves the mass exactly.  The forcing is added
afterwards (Lie composition).  All the work happens on rfft coefficients
with an optional leading batch axis, which is how the Monte Carlo driver
pushes many independent trajectories through one FFT call.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Union

import numpy as np

from .noise import MULTIPLIERS, WienerSampler, bessel_half
from .spectral import Grid1D, SpectralField, dealiased_square_rfft, rnorm_h1_sq


class IntegrationError(RuntimeError):
    """The state became non-finite or exceeded the blow-up threshold."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} at t={time:.17g}")
        self.time = time


@dataclass(frozen=True)
class IntegratorConfig:
    grid: Grid1D
    dt: float = 1e-3
    frame_velocity: float = 0.0
    dealias: bool = True
    nonlinear: bool = True  # test hook: False leaves only the dispersive flow
    blowup_h1: Optional[float] = None
    midpoint_sweeps: int = 3

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if self.midpoint_sweeps < 1:
            raise ValueError("midpoint_sweeps must be >= 1")
        if self.frame_velocity < 0:
            raise ValueError("frame_velocity must be >= 0")

    def cfl_limit(self, max_abs_u: float) -> float:
        """Advective bound ``dx / (4 max|u|)``; the dispersive part is exact."""
        return math.inf if max_abs_u == 0 else self.grid.dx / (4.0 * max_abs_u)


@dataclass(frozen=True)
class NoForcing:
    pass


@dataclass(frozen=True)
class StochasticForcing:
    epsilon: float
    sampler: WienerSampler

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


@dataclass(frozen=True)
class ControlForcing:
    """Deterministic source ``h(t)``; the integrator applies ``multiplier`` to it.

    ``source(t)`` returns either a :class:`SpectralField` or rfft coefficients.
    """

    source: Callable[[float], Any]
    multiplier: Callable = bessel_half
    horizon: float = math.inf

    def rfft_at(self, t: float, grid: Grid1D) -> np.ndarray:
        h = self.source(t)
        h_hat = h.rcoefficients if isinstance(h, SpectralField) else np.asarray(h)
        return np.asarray(self.multiplier(grid.rwavenumbers), dtype=float) * h_hat


@dataclass(frozen=True)
class CompositeForcing:
    """Sum of several forcings, e.g. a control plus small noise."""

    parts: tuple


Forcing = Union[NoForcing, StochasticForcing, ControlForcing, CompositeForcing]


class Propagator:
    """Deterministic Strang step on (batched) rfft coefficients."""

    def __init__(self, cfg: IntegratorConfig, dt: Optional[float] = None):
        self.cfg = cfg
        self.dt = cfg.dt if dt is None else dt
        grid = cfg.grid
        k = grid.rwavenumbers
        self.half_linear = np.exp(0.5j * (k**3 + cfg.frame_velocity * k) * self.dt)
        self.half_linear[-1] = 1.0  # odd symbol, dropped at Nyquist as in spectral.derivative
        ik = 1j * k
        ik[-1] = 0.0
        self.ik = ik
        self.n = grid.n_points

    def nonlinear_rhs(self, u_hat: np.ndarray) -> np.ndarray:
        if self.cfg.dealias:
            sq = dealiased_square_rfft(u_hat, self.n)
        else:
            u = np.fft.irfft(u_hat, n=self.n)
            sq = np.fft.rfft(u * u)
        return -self.ik * sq

    def __call__(self, u_hat: np.ndarray) -> np.ndarray:
        u_hat = self.half_linear * u_hat
        if self.cfg.nonlinear:
            half = 0.5 * self.dt
            mid = u_hat + half * self.nonlinear_rhs(u_hat)
            for _ in range(self.cfg.midpoint_sweeps):
                mid = u_hat + half * self.nonlinear_rhs(mid)
            u_hat = 2.0 * mid - u_hat
        return self.half_linear * u_hat


def _forcing_rfft(forcing: Forcing, cfg: IntegratorConfig, t: float, dt: float):
    if isinstance(forcing, StochasticForcing):
        if forcing.epsilon == 0:
            return None
        return forcing.epsilon * forcing.sampler.increment_rfft(dt)
    if isinstance(forcing, ControlForcing):
        return dt * forcing.rfft_at(t, cfg.grid)
    if isinstance(forcing, CompositeForcing):
        total = None
        for part in forcing.parts:
            f = _forcing_rfft(part, cfg, t, dt)
            if f is not None:
                total = f if total is None else total + f
        return total
    return None


def check_state(u_hat: np.ndarray, cfg: IntegratorConfig, t: float):
    """Raise :class:`IntegrationError` on non-finite or blown-up states."""
    if not np.all(np.isfinite(u_hat)):
        raise IntegrationError("non-finite state", t)
    if cfg.blowup_h1 is not None:
        h1 = float(np.sqrt(np.max(rnorm_h1_sq(u_hat, cfg.grid))))
        if h1 > cfg.blowup_h1:
            raise IntegrationError(f"H1 norm {h1:.6g} exceeds blow-up threshold {cfg.blowup_h1:.6g}", t)


def _advance(u_hat, cfg, forcing, t, prop):
    u_hat = prop(u_hat)
    f = _forcing_rfft(forcing, cfg, t, prop.dt)
    if f is not None:
        u_hat = u_hat + f
    check_state(u_hat, cfg, t + prop.dt)
    return u_hat


def step(u: SpectralField, cfg: IntegratorConfig, forcing: Forcing = NoForcing(), t: float = 0.0) -> SpectralField:
    """One step of size ``cfg.dt`` starting at time ``t``."""
    if u.grid != cfg.grid:
        raise ValueError("field and integrator live on different grids")
    out = _advance(np.array(u.rcoefficients), cfg, forcing, t, Propagator(cfg))
    return SpectralField.from_rfft(cfg.grid, out)


@dataclass
class EvolveResult:
    final: SpectralField
    time: float
    n_steps: int
    outputs: list = field(default_factory=list)


def time_steps(horizon: float, dt: float) -> list[float]:
    """Step sizes covering ``[0, horizon]``: full steps plus one partial step."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    n_full = int(math.floor(horizon / dt + 1e-9))
    steps = [dt] * n_full
    rest = horizon - n_full * dt
    if rest > 1e-12 * max(1.0, horizon):
        steps.append(rest)
    return steps


def evolve(
    u0: SpectralField,
    horizon: float,
    cfg: IntegratorConfig,
    forcing: Forcing = NoForcing(),
    observer: Optional[Callable[[float, SpectralField], Any]] = None,
) -> EvolveResult:
    """Integrate ``u0`` over ``[0, horizon]``.

    ``observer(t, u)`` is called after every step; non-``None`` return values
    are collected in ``outputs``.  An observer may return the sentinel
    :data:`STOP` to end the integration early.
    """
    if u0.grid != cfg.grid:
        raise ValueError("field and integrator live on different grids")
    max_u = float(np.max(np.abs(u0.values)))
    if cfg.dt > cfg.cfl_limit(max_u):
        raise ValueError(f"dt={cfg.dt} exceeds the advective limit {cfg.cfl_limit(max_u):.6g}")
    parts = forcing.parts if isinstance(forcing, CompositeForcing) else (forcing,)
    if any(isinstance(f, ControlForcing) and horizon > f.horizon * (1 + 1e-12) for f in parts):
        raise ValueError("control source is not defined on the whole horizon")
    u_hat = np.array(u0.rcoefficients)
    props: dict[float, Propagator] = {}
    outputs = []
    t = 0.0
    n = 0
    for i, h in enumerate(time_steps(horizon, cfg.dt)):
        prop = props.get(h)
        if prop is None:
            prop = props[h] = Propagator(cfg, h)
        u_hat = _advance(u_hat, cfg, forcing, t, prop)
        n += 1
        t = (i + 1) * cfg.dt if h == cfg.dt else horizon
        if observer is not None:
            out = observer(t, SpectralField.from_rfft(cfg.grid, u_hat))
            if out is STOP:
                break
            if out is not None:
                outputs.append(out)
    final = u0 if n == 0 else SpectralField.from_rfft(cfg.grid, u_hat)
    return EvolveResult(final, t, n, outputs)


class _Stop:
    def __repr__(self):
        return "STOP"


STOP = _Stop()


def controlled_solution(
    h: ControlForcing,
    u0: SpectralField,
    horizon: float,
    cfg: IntegratorConfig,
    observer: Optional[Callable[[float, SpectralField], Any]] = None,
) -> EvolveResult:
    """Solution of the control equation driven by ``Phi h`` (the control map)."""
    return evolve(u0, horizon, cfg, h, observer)


def multiplier_by_name(name: str) -> Callable:
    try:
        return MULTIPLIERS[name]
    except KeyError:
        raise ValueError(f"unknown multiplier {name!r}; choose from {sorted(MULTIPLIERS)}") from None
