"""Periodic lattices standing in for R^d, and their Fourier conjugates."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    """Periodic lattice with ``n`` points per axis on a box ``[0, L)^d``.

    Sites sit at ``x_j = j * h``. Fields on the grid are real arrays of shape
    ``grid.shape``; batched fields carry extra leading axes.
    """

    n: int
    L: float
    dim: int = 1

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError(f"grid dimension must be 1 or 2, got {self.dim}")
        if self.n < 2 or self.n & (self.n - 1):
            raise ValueError(f"points per axis must be a power of two, got {self.n}")
        if not self.L > 0:
            raise ValueError(f"box length must be positive, got {self.L}")

    @property
    def h(self) -> float:
        return self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def size(self) -> int:
        return self.n**self.dim

    @property
    def cell(self) -> float:
        """Volume ``h^d`` of one lattice cell."""
        return self.h**self.dim

    @property
    def spatial_axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    @property
    def rshape(self) -> tuple[int, ...]:
        """Shape of the half spectrum produced by ``rfftn``."""
        return (self.n,) * (self.dim - 1) + (self.n // 2 + 1,)

    def coordinates(self) -> tuple[np.ndarray, ...]:
        """Site coordinates, one broadcastable array per axis."""
        x = np.arange(self.n) * self.h
        return tuple(np.meshgrid(*([x] * self.dim), indexing="ij"))

    def center(self) -> tuple[int, ...]:
        return (self.n // 2,) * self.dim

    def lag_norm(self, site) -> np.ndarray:
        """Periodic distance from every site to ``site`` (minimum image)."""
        site = tuple(np.atleast_1d(site))
        sq = np.zeros(self.shape)
        for ax, c in enumerate(self.coordinates()):
            d = c - site[ax] * self.h
            d = (d + self.L / 2) % self.L - self.L / 2
            sq += d**2
        return np.sqrt(sq)

    def delta(self, site) -> np.ndarray:
        """Discrete delta of unit mass: value ``1/h^d`` at ``site``."""
        f = np.zeros(self.shape)
        f[tuple(np.atleast_1d(site))] = 1.0 / self.cell
        return f

    def integrate(self, f: np.ndarray) -> np.ndarray:
        """Lattice quadrature ``sum f h^d`` over the spatial axes."""
        return np.sum(f, axis=self.spatial_axes) * self.cell

    def frequencies(self) -> FrequencyGrid:
        return _frequency_grid(self)

    # -- spectral helpers -------------------------------------------------

    def rfft(self, f: np.ndarray) -> np.ndarray:
        return np.fft.rfftn(f, axes=self.spatial_axes)

    def irfft(self, fhat: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(fhat, s=self.shape, axes=self.spatial_axes)


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    """Discrete frequencies ``xi_k = 2 pi k / L`` conjugate to a :class:`GridSpec`.

    Arrays are laid out like ``numpy.fft.rfftn`` output; ``multiplicity`` counts
    how many full-spectrum modes each half-spectrum entry stands for, so that a
    sum over the full spectrum equals ``sum(multiplicity * value)``.
    """

    grid: GridSpec

    @property
    def spacing(self) -> float:
        return 2 * np.pi / self.grid.L

    @property
    def cell(self) -> float:
        """Frequency cell volume ``(2 pi / L)^d``."""
        return self.spacing**self.grid.dim

    @cached_property
    def axes(self) -> tuple[np.ndarray, ...]:
        g = self.grid
        full = np.fft.fftfreq(g.n, d=g.h) * 2 * np.pi
        half = np.fft.rfftfreq(g.n, d=g.h) * 2 * np.pi
        return tuple(np.meshgrid(*([full] * (g.dim - 1) + [half]), indexing="ij"))

    @cached_property
    def norm_sq(self) -> np.ndarray:
        """``|xi|^2`` on the half spectrum."""
        return sum(a**2 for a in self.axes)

    @cached_property
    def multiplicity(self) -> np.ndarray:
        n = self.grid.n
        m = np.full(self.grid.rshape, 2.0)
        m[..., 0] = 1.0
        m[..., n // 2] = 1.0
        return m

    def point_weights(self, site) -> np.ndarray:
        """Complex weights ``w`` with ``f[site] == Re(sum(w * rfftn(f)))``."""
        g = self.grid
        site = tuple(np.atleast_1d(site))
        phase = sum(a * (s * g.h) for a, s in zip(self.axes, site))
        return self.multiplicity * np.exp(1j * phase) / g.size


@lru_cache(maxsize=64)
def _frequency_grid(grid: GridSpec) -> FrequencyGrid:
    return FrequencyGrid(grid)
