"""Time increments of a spatially homogeneous Wiener process on a periodic grid.

Increments are synthesized in frequency space: each discrete mode gets an
independent complex Gaussian of variance ``dt * w_k`` (``w_k`` the lattice
spectral mass from :func:`shen.spectral.grid_weights`), arranged with Hermitian
symmetry so the inverse transform is real. The covariance of the result is
exactly ``dt`` times the periodized, band-limited ``Lambda``.

Randomness is counter based. Paths are grouped in blocks of
:data:`PATH_BLOCK`; the Philox key is ``(seed, block)`` and the counter encodes
the time step, so any ``(seed, path, step)`` increment can be regenerated on
its own, in any order, on any worker.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .grid import GridSpec
from .spectral import SpectralMeasure, grid_weights

__all__ = [
    "GridSpec",
    "PATH_BLOCK",
    "NoisePath",
    "block_rng",
    "standard_block",
    "color",
    "spectral_increments",
    "block_increments",
    "sample_increment",
    "make_path",
    "dump_increment",
    "load_increment",
]

PATH_BLOCK = 128
_U64 = 1 << 64


def _check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed < _U64:
        raise ValueError(f"seed must fit in an unsigned 64-bit integer, got {seed}")
    return seed


def block_rng(seed: int, block: int, step: int) -> np.random.Generator:
    """Generator for one ``(seed, block, step)`` cell of the random stream."""
    key = np.array([_check_seed(seed), int(block)], dtype=np.uint64)
    counter = np.array([0, 0, int(step), 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key, counter=counter))


def standard_block(grid: GridSpec, seed: int, block: int, step: int) -> np.ndarray:
    """Standard normals of shape ``(PATH_BLOCK, *grid.shape)``; row ``i`` is path ``block * PATH_BLOCK + i``."""
    return block_rng(seed, block, step).standard_normal((PATH_BLOCK,) + grid.shape)


def _unit_modes(grid: GridSpec, w: np.ndarray) -> np.ndarray:
    """Map real standard normals to unit-variance Hermitian modes in ``rfftn`` layout."""
    n = grid.n
    if grid.dim == 1:
        z = np.empty(w.shape[:-1] + (n // 2 + 1,), dtype=complex)
        z[..., 0] = w[..., 0]
        z[..., n // 2] = w[..., 1]
        pairs = w[..., 2:].reshape(w.shape[:-1] + (n // 2 - 1, 2))
        z[..., 1 : n // 2] = (pairs[..., 0] + 1j * pairs[..., 1]) * np.sqrt(0.5)
        return z
    # the DFT of white noise is already Hermitian with E|z|^2 = size
    return grid.rfft(w) / np.sqrt(grid.size)


def _amplitude(grid: GridSpec, m: SpectralMeasure, dt: float) -> np.ndarray:
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    # irfftn carries 1/size, so E|mode|^2 must be size^2 * dt * w_k
    return grid.size * np.sqrt(dt * grid_weights(m, grid))


def color(grid: GridSpec, m: SpectralMeasure, dt: float, w: np.ndarray) -> np.ndarray:
    """Turn standard normals ``w`` (trailing axes ``grid.shape``) into spectral increments."""
    return _amplitude(grid, m, dt) * _unit_modes(grid, w)


def spectral_increments(grid: GridSpec, m: SpectralMeasure, dt: float, seed: int, block: int, step: int) -> np.ndarray:
    """Half-spectrum increments for a whole path block at one step."""
    return color(grid, m, dt, standard_block(grid, seed, block, step))


def block_increments(grid: GridSpec, m: SpectralMeasure, dt: float, seed: int, block: int, step: int) -> np.ndarray:
    """Real increment fields for a whole path block at one step."""
    return grid.irfft(spectral_increments(grid, m, dt, seed, block, step))


def sample_increment(grid: GridSpec, m: SpectralMeasure, dt: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    """One increment field (or ``size`` of them) drawn from an arbitrary generator."""
    shape = grid.shape if size is None else (size,) + grid.shape
    return grid.irfft(color(grid, m, dt, rng.standard_normal(shape)))


@dataclass(frozen=True)
class NoisePath:
    """Increments of one path, regenerated on demand from ``(seed, path_index)``."""

    grid: GridSpec
    measure: SpectralMeasure
    dt: float
    steps: int
    seed: int
    path_index: int

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("a noise path needs at least one step")
        if self.path_index < 0:
            raise ValueError("path index must be non-negative")
        _check_seed(self.seed)

    @property
    def block(self) -> int:
        return self.path_index // PATH_BLOCK

    @property
    def row(self) -> int:
        return self.path_index % PATH_BLOCK

    def spectral(self, step: int) -> np.ndarray:
        if not 0 <= step < self.steps:
            raise IndexError(f"step {step} outside [0, {self.steps})")
        w = standard_block(self.grid, self.seed, self.block, step)[self.row]
        return color(self.grid, self.measure, self.dt, w)

    def increment(self, step: int) -> np.ndarray:
        return self.grid.irfft(self.spectral(step))

    def __len__(self) -> int:
        return self.steps

    def __getitem__(self, step: int) -> np.ndarray:
        return self.increment(step)

    def __iter__(self):
        return (self.increment(k) for k in range(self.steps))

    def increments(self) -> np.ndarray:
        return np.stack(list(self))


def make_path(grid: GridSpec, m: SpectralMeasure, dt: float, steps: int, master_seed: int, path_index: int) -> NoisePath:
    grid_weights(m, grid)  # fail early on a bad measure/grid pairing
    return NoisePath(grid, m, float(dt), int(steps), int(master_seed), int(path_index))


# -- binary dumps -----------------------------------------------------------

MAGIC = b"SHEN1"
_HEADER = struct.Struct("<5sqqddq")


def dump_increment(path, field: np.ndarray, grid: GridSpec, dt: float, step: int) -> Path:
    """Write one increment: header ``SHEN1, n, d, L, dt, step`` then little-endian float64, row-major."""
    field = np.asarray(field, dtype="<f8")
    if field.shape != grid.shape:
        raise ValueError(f"field shape {field.shape} does not match grid {grid.shape}")
    path = Path(path)
    with path.open("wb") as fh:
        fh.write(_HEADER.pack(MAGIC, grid.n, grid.dim, float(grid.L), float(dt), int(step)))
        fh.write(np.ascontiguousarray(field).tobytes())
    return path


def load_increment(path) -> tuple[GridSpec, float, int, np.ndarray]:
    raw = Path(path).read_bytes()
    magic, n, d, L, dt, step = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a SHEN1 increment file")
    grid = GridSpec(n, L, d)
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if data.size != grid.size:
        raise ValueError(f"{path}: expected {grid.size} values, found {data.size}")
    return grid, dt, step, data.reshape(grid.shape).astype(float)
