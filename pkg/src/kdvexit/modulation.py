"""Soliton modulation: ``u = phi_c(. - x0) + remainder`` and the two exit tests.

The velocity ``c`` and phase ``x0`` are fixed by requiring the remainder
``u(. + x0) - phi_c`` to be L2-orthogonal to the *fixed* functions ``phi_c0``
and ``d_x phi_c0``.  The 2x2 system is solved by damped Newton iteration with
the analytic Jacobian

    dF1/dc = -(d_c phi_c, phi_c0)     dF1/dx0 = -(u(.+x0), d_x phi_c0)
    dF2/dc = -(d_c phi_c, d_x phi_c0) dF2/dx0 = -(u(.+x0), d_xx phi_c0)

:class:`Decomposer` works on a batch of rfft states so that the Monte Carlo
driver can track every trajectory of an ensemble at once.  Row results never
depend on which other rows share the batch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .soliton import SolitonParams, dc_profile_values, profile_values
from .spectral import Grid1D, SpectralField, rinner, rnorm_h1_sq, rshift_phase


@dataclass(frozen=True)
class DecompositionResult:
    c: float
    x0: float
    eta: SpectralField
    eta_h1: float
    newton_iters: int
    converged: bool
    residual: tuple = (0.0, 0.0)


@dataclass
class BatchDecomposition:
    c: np.ndarray
    x0: np.ndarray
    eta_h1: np.ndarray
    newton_iters: np.ndarray
    converged: np.ndarray
    residual: np.ndarray  # shape (B, 2)


_RUNNING, _POLISHING, _DONE, _FAILED = 0, 1, 2, 3


class Decomposer:
    """Newton solver for the orthogonality conditions around ``phi_c0``."""

    def __init__(self, grid: Grid1D, c0: float, tol: float = 1e-10, max_iter: int = 50, max_halvings: int = 30):
        if not c0 > 0:
            raise ValueError("c0 must be positive")
        self.grid = grid
        self.c0 = float(c0)
        self.tol = tol
        self.max_iter = max_iter
        self.max_halvings = max_halvings
        x = grid.x
        k = grid.rwavenumbers
        self.phi0 = profile_values(c0, x)
        phi0_hat = np.fft.rfft(self.phi0)
        ik = 1j * k
        ik[-1] = 0.0
        self.phi0_hat = phi0_hat
        self.phi0x_hat = ik * phi0_hat
        self.phi0xx_hat = -(k**2) * phi0_hat
        self.phi0x = np.fft.irfft(self.phi0x_hat, n=grid.n_points)

    # -- pieces of F and J ------------------------------------------------

    def _profile_terms(self, c: np.ndarray):
        """``(phi_c, phi0), (phi_c, phi0'), (d_c phi_c, phi0), (d_c phi_c, phi0')``."""
        x = self.grid.x
        dx = self.grid.dx
        cc = c[:, None]
        p = profile_values(cc, x)
        d = dc_profile_values(cc, x)
        return (
            dx * np.sum(p * self.phi0, axis=-1),
            dx * np.sum(p * self.phi0x, axis=-1),
            dx * np.sum(d * self.phi0, axis=-1),
            dx * np.sum(d * self.phi0x, axis=-1),
        )

    def _shifted_terms(self, u_hat: np.ndarray, x0: np.ndarray):
        us = u_hat * rshift_phase(self.grid, x0)
        g = self.grid
        return rinner(us, self.phi0_hat, g), rinner(us, self.phi0x_hat, g), rinner(us, self.phi0xx_hat, g)

    def residual(self, u_hat: np.ndarray, c: np.ndarray, x0: np.ndarray) -> np.ndarray:
        a0, a1, _ = self._shifted_terms(u_hat, x0)
        p0, p1, _, _ = self._profile_terms(c)
        return np.stack([a0 - p0, a1 - p1], axis=-1)

    def _system(self, u_hat, c, x0):
        a0, a1, a2 = self._shifted_terms(u_hat, x0)
        p0, p1, d0, d1 = self._profile_terms(c)
        F = np.stack([a0 - p0, a1 - p1], axis=-1)
        J = np.empty(c.shape + (2, 2))
        J[:, 0, 0] = -d0
        J[:, 0, 1] = -a1
        J[:, 1, 0] = -d1
        J[:, 1, 1] = -a2
        return F, J

    # -- Newton ------------------------------------------------------------

    def solve(self, u_hat: np.ndarray, c_guess, x_guess) -> BatchDecomposition:
        """Damped Newton on every row of ``u_hat``.

        A row below ``tol`` takes one more (polishing) step, which brings the
        orthogonality residuals down to round-off.  Rows that hit
        ``max_iter``, a singular Jacobian, or a line search without decrease
        are reported as not converged.
        """
        u_hat = np.atleast_2d(u_hat)
        b = u_hat.shape[0]
        c = np.broadcast_to(np.asarray(c_guess, dtype=float), (b,)).copy()
        x = np.broadcast_to(np.asarray(x_guess, dtype=float), (b,)).copy()
        iters = np.zeros(b, dtype=int)
        status = np.full(b, _RUNNING)

        F, J = self._system(u_hat, c, x)
        fnorm = np.linalg.norm(F, axis=-1)
        status[~np.isfinite(fnorm)] = _FAILED
        status[fnorm <= self.tol] = _POLISHING

        while True:
            live = np.flatnonzero((status == _RUNNING) | (status == _POLISHING))
            capped = live[iters[live] >= self.max_iter]
            status[capped] = np.where(status[capped] == _POLISHING, _DONE, _FAILED)
            live = live[iters[live] < self.max_iter]
            if live.size == 0:
                break
            Ja, Fa = J[live], F[live]
            det = Ja[:, 0, 0] * Ja[:, 1, 1] - Ja[:, 0, 1] * Ja[:, 1, 0]
            scale = np.abs(Ja).max(axis=(1, 2)) ** 2
            singular = ~(np.abs(det) > 1e-14 * scale)
            status[live[singular]] = np.where(status[live[singular]] == _POLISHING, _DONE, _FAILED)
            keep = ~singular
            live, Ja, Fa, det = live[keep], Ja[keep], Fa[keep], det[keep]
            if live.size == 0:
                continue
            dc = -(Ja[:, 1, 1] * Fa[:, 0] - Ja[:, 0, 1] * Fa[:, 1]) / det
            dxs = -(Ja[:, 0, 0] * Fa[:, 1] - Ja[:, 1, 0] * Fa[:, 0]) / det
            lam = np.ones(live.size)
            pending = np.arange(live.size)
            accepted = np.zeros(live.size, dtype=bool)
            for _ in range(self.max_halvings + 1):
                rows = live[pending]
                ct = c[rows] + lam[pending] * dc[pending]
                xt = x[rows] + lam[pending] * dxs[pending]
                pos = ct > 0
                nt = np.full(pending.size, np.inf)
                if pos.any():
                    Fp, Jp = self._system(u_hat[rows[pos]], ct[pos], xt[pos])
                    nt[pos] = np.linalg.norm(Fp, axis=-1)
                ok = nt <= fnorm[rows]
                # near round-off a polishing step need not decrease |F|
                ok |= (status[rows] == _POLISHING) & (nt <= self.tol)
                if ok.any():
                    okpos = ok[pos]
                    sel = rows[ok]
                    c[sel] = ct[ok]
                    x[sel] = xt[ok]
                    F[sel] = Fp[okpos]
                    J[sel] = Jp[okpos]
                    fnorm[sel] = nt[ok]
                    accepted[pending[ok]] = True
                pending = pending[~ok]
                if pending.size == 0:
                    break
                lam[pending] *= 0.5
            iters[live] += 1
            was_polishing = status[live] == _POLISHING
            status[live[was_polishing]] = _DONE
            running = live[~was_polishing]
            stuck = running[~accepted[~was_polishing]]
            status[stuck] = _FAILED
            status[running[(fnorm[running] <= self.tol) & (status[running] == _RUNNING)]] = _POLISHING

        converged = (status == _DONE) & (fnorm <= self.tol)
        eta_h1 = self.eta_h1(u_hat, c, x)
        return BatchDecomposition(c, x, eta_h1, iters, converged, F)

    def eta_hat(self, u_hat: np.ndarray, c: np.ndarray, x0: np.ndarray) -> np.ndarray:
        """rfft of ``u(. + x0) - phi_c``."""
        us = u_hat * rshift_phase(self.grid, x0)
        phic = np.fft.rfft(profile_values(np.asarray(c)[..., None], self.grid.x), axis=-1)
        return us - phic

    def eta_h1(self, u_hat, c, x0) -> np.ndarray:
        ok = np.asarray(c) > 0
        out = np.full(np.shape(c), np.inf)
        if np.any(ok):
            out[ok] = np.sqrt(rnorm_h1_sq(self.eta_hat(u_hat[ok], c[ok], x0[ok]), self.grid))
        return out


def decompose(u: SpectralField, guess: SolitonParams, c0: float, tol: float = 1e-10, max_iter: int = 50) -> DecompositionResult:
    """Split ``u`` into a modulated soliton and a remainder orthogonal to ``phi_c0``, ``phi_c0'``."""
    dec = Decomposer(u.grid, c0, tol=tol, max_iter=max_iter)
    u_hat = np.array(u.rcoefficients)[None, :]
    r = dec.solve(u_hat, guess.c, guess.x0)
    c, x = float(r.c[0]), float(r.x0[0])
    if c > 0:
        eta = SpectralField.from_rfft(u.grid, dec.eta_hat(u_hat, r.c, r.x0)[0])
    else:
        eta = SpectralField(u.grid, np.full(u.grid.n_points, np.nan))
    return DecompositionResult(
        c=c,
        x0=x,
        eta=eta,
        eta_h1=float(r.eta_h1[0]),
        newton_iters=int(r.newton_iters[0]),
        converged=bool(r.converged[0]),
        residual=(float(r.residual[0, 0]), float(r.residual[0, 1])),
    )


def exit_check_modulated(d: DecompositionResult, alpha: float, c0: float) -> bool:
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    return (not d.converged) or abs(d.c - c0) >= alpha or d.eta_h1 >= alpha


def fixed_distance_h1(u_hat: np.ndarray, phi0_hat: np.ndarray, grid: Grid1D) -> np.ndarray:
    return np.sqrt(rnorm_h1_sq(u_hat - phi0_hat, grid))


def exit_check_fixed(u: SpectralField, alpha: float, c0: float) -> bool:
    """True once the co-moving state leaves the H1 ball of radius ``alpha`` around ``phi_c0``."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    phi0_hat = np.fft.rfft(profile_values(c0, u.grid.x))
    return bool(fixed_distance_h1(u.rcoefficients, phi0_hat, u.grid) >= alpha)


def _probe_directions(grid: Grid1D, c0: float) -> list[np.ndarray]:
    """Unit-H1 perturbation shapes used to probe the Newton basin."""
    x = grid.x
    w = 1.0 / np.sqrt(c0)
    shapes = [
        dc_profile_values(c0, x),
        -np.gradient(profile_values(c0, x), grid.dx),
        np.exp(-(((x - 6.0 * w) / w) ** 2)),
        np.exp(-(((x + 6.0 * w) / w) ** 2)),
        np.ones_like(x),
    ]
    out = []
    for s in shapes:
        s_hat = np.fft.rfft(s)
        out.append(s_hat / np.sqrt(rnorm_h1_sq(s_hat, grid)))
    return out


def operational_alpha0(grid: Grid1D, c0: float, upper: float | None = None, resolution: float = 1e-3) -> float:
    """Empirical radius of the Newton basin around ``phi_c0``.

    For each probe shape ``psi`` (unit H1 norm, both signs) the largest ``r``
    such that ``phi_c0 + r psi`` decomposes from the guess ``(c0, 0)`` is
    found by bisection; the smallest such ``r`` is returned.  The search is
    capped at ``upper`` (default ``c0``, which also keeps the velocity window
    ``|c - c0| < alpha`` inside ``c > 0``).
    """
    dec = Decomposer(grid, c0)
    base = np.fft.rfft(profile_values(c0, grid.x))
    hi0 = float(c0 if upper is None else upper)
    best = hi0
    for psi in _probe_directions(grid, c0):
        for sign in (1.0, -1.0):

            def ok(r):
                u = (base + sign * r * psi)[None, :]
                return bool(dec.solve(u, c0, 0.0).converged[0])

            if ok(hi0):
                continue
            lo, hi = 0.0, hi0
            while hi - lo > resolution:
                mid = 0.5 * (lo + hi)
                lo, hi = (mid, hi) if ok(mid) else (lo, mid)
            best = min(best, lo)
    return best
