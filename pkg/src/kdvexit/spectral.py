"""Periodic-grid fields with spectral differentiation, multipliers and Sobolev norms.

The real line is truncated to the box ``[-L/2, L/2)`` sampled at ``N`` uniform
points.  Wavenumbers follow numpy's FFT ordering, so for ``N = 8`` and
``L = 2*pi`` they are ``[0, 1, 2, 3, -4, -3, -2, -1]``.

Besides the immutable :class:`SpectralField` value type, the module exposes a
few helpers working directly on (possibly batched) ``rfft`` coefficient arrays.
The integrator and the modulation tracker use those to avoid round trips
through physical space.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

Multiplier = Callable[[np.ndarray], np.ndarray]


class GridMismatchError(ValueError):
    """Two fields living on different grids were combined."""


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic grid on ``[-L/2, L/2)``."""

    n_points: int
    length: float

    def __post_init__(self):
        n = self.n_points
        if not isinstance(n, (int, np.integer)) or n < 8 or n & (n - 1):
            raise ValueError(f"n_points must be a power of two >= 8, got {n!r}")
        if not np.isfinite(self.length) or self.length <= 0:
            raise ValueError(f"length must be positive, got {self.length!r}")

    @property
    def dx(self) -> float:
        return self.length / self.n_points

    @cached_property
    def x(self) -> np.ndarray:
        x = -0.5 * self.length + self.dx * np.arange(self.n_points)
        x.setflags(write=False)
        return x

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers ``2*pi*j/L`` in FFT ordering."""
        k = 2.0 * np.pi * np.fft.fftfreq(self.n_points, d=self.dx)
        k.setflags(write=False)
        return k

    @cached_property
    def rwavenumbers(self) -> np.ndarray:
        """Non-negative wavenumbers matching ``np.fft.rfft`` output."""
        k = 2.0 * np.pi * np.fft.rfftfreq(self.n_points, d=self.dx)
        k.setflags(write=False)
        return k

    @cached_property
    def rweights(self) -> np.ndarray:
        """Parseval weights for rfft coefficients: ``dx/N`` times mode multiplicity."""
        w = np.full(self.n_points // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        w *= self.dx / self.n_points
        w.setflags(write=False)
        return w

    @property
    def nyquist_index(self) -> int:
        return self.n_points // 2


def make_grid(n_points: int, length: float) -> Grid1D:
    return Grid1D(n_points, float(length))


class SpectralField:
    """Real field on a :class:`Grid1D` with cached Fourier coefficients.

    Instances are immutable: the sample array is flagged read-only and the
    coefficients are computed once on first access.
    """

    __slots__ = ("grid", "_values", "_coefficients")

    def __init__(self, grid: Grid1D, values):
        values = np.array(values, dtype=float)
        if values.shape != (grid.n_points,):
            raise ValueError(f"expected {grid.n_points} samples, got shape {values.shape}")
        values.setflags(write=False)
        self.grid = grid
        self._values = values
        self._coefficients = None

    @classmethod
    def from_coefficients(cls, grid: Grid1D, coefficients) -> "SpectralField":
        coefficients = np.asarray(coefficients, dtype=complex)
        field = cls(grid, np.fft.ifft(coefficients).real)
        return field

    @classmethod
    def from_rfft(cls, grid: Grid1D, rcoefficients) -> "SpectralField":
        return cls(grid, np.fft.irfft(rcoefficients, n=grid.n_points))

    @classmethod
    def from_function(cls, grid: Grid1D, func: Callable[[np.ndarray], np.ndarray]) -> "SpectralField":
        return cls(grid, func(grid.x))

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def coefficients(self) -> np.ndarray:
        if self._coefficients is None:
            c = np.fft.fft(self._values)
            c.setflags(write=False)
            self._coefficients = c
        return self._coefficients

    @property
    def rcoefficients(self) -> np.ndarray:
        return self.coefficients[: self.grid.n_points // 2 + 1]

    def __add__(self, other):
        if isinstance(other, SpectralField):
            _check_same_grid(self, other)
            return SpectralField(self.grid, self._values + other._values)
        return SpectralField(self.grid, self._values + other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, SpectralField):
            _check_same_grid(self, other)
            return SpectralField(self.grid, self._values - other._values)
        return SpectralField(self.grid, self._values - other)

    def __neg__(self):
        return SpectralField(self.grid, -self._values)

    def __mul__(self, scalar):
        if isinstance(scalar, SpectralField):
            raise TypeError("pointwise products of fields are not supported; use .values")
        return SpectralField(self.grid, self._values * scalar)

    __rmul__ = __mul__

    def __repr__(self):
        return f"SpectralField(N={self.grid.n_points}, L={self.grid.length:.6g})"


def zeros(grid: Grid1D) -> SpectralField:
    return SpectralField(grid, np.zeros(grid.n_points))


def _check_same_grid(f: SpectralField, g: SpectralField):
    if f.grid != g.grid:
        raise GridMismatchError(f"grid mismatch: {f.grid} vs {g.grid}")


def derivative(f: SpectralField, order: int = 1) -> SpectralField:
    """Spectral derivative of order 1, 2 or 3; Nyquist is dropped for odd orders."""
    if order not in (1, 2, 3):
        raise ValueError(f"order must be 1, 2 or 3, got {order!r}")
    grid = f.grid
    sym = (1j * grid.wavenumbers) ** order
    if order % 2:
        sym[grid.nyquist_index] = 0.0
    return SpectralField.from_coefficients(grid, f.coefficients * sym)


def apply_multiplier(f: SpectralField, m: Multiplier) -> SpectralField:
    """Apply the Fourier symbol ``m(k)`` mode by mode.

    ``m`` must be real and finite on the grid wavenumbers; evenness is what
    keeps the output real, and the imaginary round-off is discarded.
    """
    sym = np.broadcast_to(np.asarray(m(f.grid.wavenumbers), dtype=float), f.grid.wavenumbers.shape)
    if not np.all(np.isfinite(sym)):
        raise ValueError("multiplier is not finite on every grid wavenumber")
    return SpectralField.from_coefficients(f.grid, f.coefficients * sym)


def shift(f: SpectralField, x0: float) -> SpectralField:
    """Return ``f(. + x0)`` via the exact phase factor ``exp(i k x0)``."""
    grid = f.grid
    phase = np.exp(1j * grid.wavenumbers * x0)
    phase[grid.nyquist_index] = np.cos(grid.wavenumbers[grid.nyquist_index] * x0)
    return SpectralField.from_coefficients(grid, f.coefficients * phase)


def inner_l2(f: SpectralField, g: SpectralField) -> float:
    _check_same_grid(f, g)
    return float(f.grid.dx * np.dot(f.values, g.values))


def norm_l2(f: SpectralField) -> float:
    return float(np.sqrt(inner_l2(f, f)))


def norm_h1(f: SpectralField) -> float:
    grid = f.grid
    k2 = grid.wavenumbers**2
    s = np.sum((1.0 + k2) * np.abs(f.coefficients) ** 2) * grid.dx / grid.n_points
    return float(np.sqrt(s))


# --- batched rfft-coefficient helpers --------------------------------------


def h1_symbol(grid: Grid1D) -> np.ndarray:
    return 1.0 + grid.rwavenumbers**2


def rinner(a_hat: np.ndarray, b_hat: np.ndarray, grid: Grid1D) -> np.ndarray:
    """L2 inner product from rfft coefficients, batched over leading axes."""
    return np.sum(grid.rweights * (a_hat * np.conj(b_hat)).real, axis=-1)


def rnorm_h1_sq(a_hat: np.ndarray, grid: Grid1D) -> np.ndarray:
    w = grid.rweights * h1_symbol(grid)
    return np.sum(w * (a_hat.real**2 + a_hat.imag**2), axis=-1)


def rshift_phase(grid: Grid1D, x0) -> np.ndarray:
    """Phase factors realising ``u -> u(. + x0)`` on rfft coefficients.

    ``x0`` may be an array; the result then has shape ``x0.shape + (N//2+1,)``.
    The Nyquist entry is the real part so that the shifted field stays real.
    """
    kx = np.multiply.outer(np.asarray(x0, dtype=float), grid.rwavenumbers)
    phase = np.exp(1j * kx)
    phase[..., -1] = phase[..., -1].real
    return phase


def dealiased_square_rfft(u_hat: np.ndarray, n_points: int) -> np.ndarray:
    """rfft coefficients of ``u**2`` computed on a 3/2 zero-padded grid.

    Works on a leading batch axis.  The returned coefficients use the
    unpadded normalisation so they combine directly with ``u_hat``.
    """
    m = 3 * n_points // 2
    nr = n_points // 2 + 1
    pad = np.zeros(u_hat.shape[:-1] + (m // 2 + 1,), dtype=complex)
    pad[..., : nr - 1] = u_hat[..., : nr - 1]
    u = np.fft.irfft(pad, n=m) * (m / n_points)
    sq_hat = np.fft.rfft(u * u)[..., :nr] * (n_points / m)
    sq_hat[..., -1] = 0.0
    return sq_hat


def padded_values(u_hat: np.ndarray, n_points: int) -> np.ndarray:
    """Physical samples of the field on the 3/2 padded grid (Nyquist dropped)."""
    m = 3 * n_points // 2
    nr = n_points // 2 + 1
    pad = np.zeros(u_hat.shape[:-1] + (m // 2 + 1,), dtype=complex)
    pad[..., : nr - 1] = u_hat[..., : nr - 1]
    return np.fft.irfft(pad, n=m) * (m / n_points)
