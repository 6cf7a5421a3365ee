"""Colored Wiener increments ``dW = sum_i d(beta_i) Phi e_i`` on the periodic box.

``Phi`` is a Fourier multiplier truncated to the modes ``|j| <= K``; the
orthonormal system is the real Fourier basis

    1/sqrt(L),  sqrt(2/L) cos(k_j x),  sqrt(2/L) sin(k_j x),   j = 1..K.

Each trajectory owns a :class:`WienerSampler` whose Philox stream is keyed by
``(master_seed, trajectory_index)`` only, so ensembles are reproducible and
independent of scheduling.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .spectral import Grid1D, SpectralField


def bessel_half(k):
    """Default symbol ``(1 + k^2)^{-1/2}``; saturates the L2 -> H1 bound."""
    return 1.0 / np.sqrt(1.0 + np.asarray(k, dtype=float) ** 2)


def bessel_one(k):
    return 1.0 / (1.0 + np.asarray(k, dtype=float) ** 2)


def zero_symbol(k):
    return np.zeros_like(np.asarray(k, dtype=float))


MULTIPLIERS: dict[str, Callable] = {
    "bessel_half": bessel_half,
    "bessel_one": bessel_one,
    "zero": zero_symbol,
}


@dataclass(frozen=True)
class NoiseSpec:
    grid: Grid1D
    mode_cutoff: int | None = None
    multiplier: Callable = bessel_half

    def __post_init__(self):
        n = self.grid.n_points
        if self.mode_cutoff is None:
            object.__setattr__(self, "mode_cutoff", n // 4)
        K = self.mode_cutoff
        if not isinstance(K, (int, np.integer)) or K < 0:
            raise ValueError(f"mode_cutoff must be a non-negative integer, got {K!r}")
        if 3 * K > n:
            raise ValueError(f"mode_cutoff K={K} exceeds N/3={n / 3:.6g} (dealiased band)")
        k = self.retained_wavenumbers
        m = np.asarray(self.multiplier(k), dtype=float)
        m_neg = np.asarray(self.multiplier(-k), dtype=float)
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("noise multiplier must be finite and non-negative")
        if not np.allclose(m, m_neg, rtol=1e-14, atol=0.0):
            raise ValueError("noise multiplier must be even in k")

    @property
    def retained_wavenumbers(self) -> np.ndarray:
        """``k_j`` for ``j = 0..K``."""
        return self.grid.rwavenumbers[: self.mode_cutoff + 1]

    @property
    def n_modes(self) -> int:
        return 2 * self.mode_cutoff + 1

    @property
    def symbol(self) -> np.ndarray:
        return np.asarray(self.multiplier(self.retained_wavenumbers), dtype=float)

    def increment_rfft(self, xi: np.ndarray, dt: float) -> np.ndarray:
        """Map standard normals of shape ``(..., 2K+1)`` to rfft coefficients of ``dW``.

        Column 0 drives the constant mode, columns ``1..K`` the cosines and
        ``K+1..2K`` the sines.
        """
        grid = self.grid
        K = self.mode_cutoff
        n = grid.n_points
        L = grid.length
        xi = np.asarray(xi, dtype=float)
        m = self.symbol
        out = np.zeros(xi.shape[:-1] + (n // 2 + 1,), dtype=complex)
        out[..., 0] = n * m[0] / np.sqrt(L) * xi[..., 0]
        if K:
            j = np.arange(1, K + 1)
            sign = np.where(j % 2, -1.0, 1.0)
            amp = 0.5 * n * np.sqrt(2.0 / L) * sign * m[1:]
            out[..., 1 : K + 1] = amp * (xi[..., 1 : K + 1] - 1j * xi[..., K + 1 :])
        return np.sqrt(dt) * out

    def basis_function(self, j: int, kind: str = "cos") -> SpectralField:
        """The orthonormal mode ``e_j`` (``kind`` is ignored for ``j = 0``)."""
        grid = self.grid
        if j == 0:
            return SpectralField(grid, np.full(grid.n_points, 1.0 / np.sqrt(grid.length)))
        k = grid.rwavenumbers[j]
        trig = np.cos if kind == "cos" else np.sin
        return SpectralField(grid, np.sqrt(2.0 / grid.length) * trig(k * grid.x))


def hs_norm_squared(spec: NoiseSpec) -> float:
    """``sum_i ||Phi e_i||_{H1}^2`` over the retained modes."""
    k = spec.retained_wavenumbers
    w = (1.0 + k**2) * spec.symbol**2
    return float(w[0] + 2.0 * np.sum(w[1:]))


def op_norm(spec: NoiseSpec) -> float:
    """Operator norm of ``Phi`` from L2 to H1."""
    k = spec.retained_wavenumbers
    return float(np.max(np.sqrt(1.0 + k**2) * spec.symbol))


def trajectory_generator(master_seed: int, index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return np.random.Generator(np.random.Philox(seq))


@dataclass
class WienerSampler:
    """Seeded stream of increments for one trajectory.

    Normals are drawn ``block`` steps at a time; the stream position depends
    only on how many increments have been consumed, not on the block size.
    """

    spec: NoiseSpec
    master_seed: int = 0
    index: int = 0
    block: int = 256
    _rng: np.random.Generator = field(init=False, repr=False)
    _buffer: np.ndarray = field(init=False, repr=False)
    _pos: int = field(init=False, repr=False)

    def __post_init__(self):
        self._rng = trajectory_generator(self.master_seed, self.index)
        self._buffer = np.empty((0, self.spec.n_modes))
        self._pos = 0

    def normals(self, n_steps: int) -> np.ndarray:
        out = np.empty((n_steps, self.spec.n_modes))
        filled = 0
        while filled < n_steps:
            if self._pos == len(self._buffer):
                self._buffer = self._rng.standard_normal((self.block, self.spec.n_modes))
                self._pos = 0
            take = min(n_steps - filled, len(self._buffer) - self._pos)
            out[filled : filled + take] = self._buffer[self._pos : self._pos + take]
            filled += take
            self._pos += take
        return out

    def increment_rfft(self, dt: float) -> np.ndarray:
        if not dt > 0:
            raise ValueError(f"dt must be positive, got {dt!r}")
        return self.spec.increment_rfft(self.normals(1)[0], dt)


def sample_increment(sampler: WienerSampler, dt: float) -> SpectralField:
    return SpectralField.from_rfft(sampler.spec.grid, sampler.increment_rfft(dt))
