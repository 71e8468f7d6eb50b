"""Exponential-Euler solver for the stochastic heat equation on a periodic grid.

One step is ``u_{k+1} = S_dt (u_k + b(u_k) dt + sigma(u_k) dW_k)`` with ``S_tau`` the
heat semigroup applied exactly in Fourier space. Paths are simulated a block
at a time (rows share one array), matching the keying of :mod:`shen.noise`, so
an ensemble run and a single-path replay produce the same numbers.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .grid import GridSpec
from .noise import PATH_BLOCK, NoisePath, make_path, spectral_increments
from .spectral import SpectralMeasure


# -- coefficient functions --------------------------------------------------


@dataclass(frozen=True)
class Trig:
    """``const + amp * sin(v)`` (or ``cos``)."""

    const: float = 0.0
    amp: float = 0.0
    kind: str = "sin"

    def __post_init__(self):
        if self.kind not in ("sin", "cos"):
            raise ValueError(f"kind must be 'sin' or 'cos', got {self.kind!r}")

    def __call__(self, v):
        if self.amp == 0.0:
            return np.full_like(np.asarray(v, dtype=float), self.const)
        f = np.sin if self.kind == "sin" else np.cos
        return self.const + self.amp * f(v)

    def derivative(self) -> Trig:
        if self.kind == "sin":
            return Trig(0.0, self.amp, "cos")
        return Trig(0.0, -self.amp, "sin")

    @property
    def is_constant(self) -> bool:
        return self.amp == 0.0

    @property
    def sup(self) -> float:
        return abs(self.const) + abs(self.amp)

    @property
    def inf_abs(self) -> float:
        return max(abs(self.const) - abs(self.amp), 0.0)


@dataclass(frozen=True)
class Affine:
    """``const + slope * v``; unbounded unless ``slope == 0`` (test fixture only)."""

    const: float = 0.0
    slope: float = 0.0

    def __call__(self, v):
        return self.const + self.slope * np.asarray(v, dtype=float)

    def derivative(self) -> Affine:
        return Affine(self.slope, 0.0)

    @property
    def is_constant(self) -> bool:
        return self.slope == 0.0

    @property
    def sup(self) -> float:
        return abs(self.const) if self.slope == 0.0 else math.inf

    @property
    def inf_abs(self) -> float:
        return abs(self.const) if self.slope == 0.0 else 0.0


class ScalarFunction(Protocol):
    def __call__(self, v): ...
    def derivative(self) -> ScalarFunction: ...
    is_constant: bool
    sup: float
    inf_abs: float


@dataclass(frozen=True)
class Coefficients:
    """Diffusion ``sigma`` and drift ``b``; ``sigma_lower`` certifies ``|sigma| >= sigma_lower``."""

    sigma: ScalarFunction
    b: ScalarFunction
    name: str = "custom"

    @classmethod
    def trig(cls, a: float = 1.0, c: float = 0.0, beta: float = 0.0, gamma: float = 0.0, name: str = "custom") -> Coefficients:
        """``sigma = a + c sin v``, ``b = beta + gamma cos v``."""
        return cls(Trig(a, c, "sin"), Trig(beta, gamma, "cos"), name)

    @property
    def sigma_lower(self) -> float:
        return self.sigma.inf_abs

    @property
    def sigma_sup(self) -> float:
        return self.sigma.sup

    @property
    def b_sup(self) -> float:
        return self.b.sup

    @property
    def nondegenerate(self) -> bool:
        return self.sigma_lower > 0

    @property
    def additive(self) -> bool:
        return self.sigma.is_constant and self.b.is_constant

    def dsigma(self, v):
        return self.sigma.derivative()(v)

    def db(self, v):
        return self.b.derivative()(v)


COEFFICIENT_PRESETS = {
    "linear": Coefficients.trig(1.0, 0.0, 0.0, 0.0, name="linear"),
    "sine-diffusion": Coefficients.trig(1.0, 0.5, 0.0, 0.0, name="sine-diffusion"),
    "drift": Coefficients.trig(1.0, 0.5, 0.0, 0.3, name="drift"),
}


# -- configuration ----------------------------------------------------------


class InstabilityError(RuntimeError):
    """Too many paths produced non-finite values to aggregate."""


@dataclass(frozen=True, eq=False)
class SolverConfig:
    grid: GridSpec
    measure: SpectralMeasure
    coeffs: Coefficients
    u0: np.ndarray
    dt: float
    steps: int
    x_obs: tuple[int, ...]

    def __post_init__(self):
        u0 = np.array(self.u0, dtype=float)
        if u0.ndim == 0:
            u0 = np.full(self.grid.shape, float(u0))
        if u0.shape != self.grid.shape:
            raise ValueError(f"initial field has shape {u0.shape}, grid needs {self.grid.shape}")
        u0.flags.writeable = False
        object.__setattr__(self, "u0", u0)
        x = tuple(int(i) for i in np.atleast_1d(self.x_obs))
        if len(x) != self.grid.dim or not all(0 <= i < self.grid.n for i in x):
            raise ValueError(f"observation site {x} is not on the grid")
        object.__setattr__(self, "x_obs", x)
        if not self.dt > 0:
            raise ValueError(f"time step must be positive, got {self.dt}")
        if int(self.steps) < 1:
            raise ValueError("need at least one time step")
        object.__setattr__(self, "steps", int(self.steps))
        if self.measure.dim != self.grid.dim:
            raise ValueError("measure and grid dimensions differ")

    @property
    def T(self) -> float:
        return self.dt * self.steps

    def times(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def with_(self, **changes) -> SolverConfig:
        kw = {f: getattr(self, f) for f in ("grid", "measure", "coeffs", "u0", "dt", "steps", "x_obs")}
        kw.update(changes)
        return SolverConfig(**kw)

    # spectral helpers shared by every routine that reads the field at x_obs
    def decay(self, steps: float) -> np.ndarray:
        """Fourier multiplier of ``S`` over ``steps`` time steps."""
        return np.exp(-(steps * self.dt) * self.grid.frequencies().norm_sq)

    def obs_weights(self) -> np.ndarray:
        return self.grid.frequencies().point_weights(self.x_obs)


def heat_semigroup(phi: np.ndarray, tau: float, grid: GridSpec) -> np.ndarray:
    """Convolve with ``Gamma(tau)`` by multiplying the DFT with ``exp(-tau |xi|^2)``."""
    if tau < 0:
        raise ValueError(f"semigroup time must be non-negative, got {tau}")
    phi = np.asarray(phi, dtype=float)
    if tau == 0:
        return phi.copy()
    return grid.irfft(grid.rfft(phi) * np.exp(-tau * grid.frequencies().norm_sq))


def step(u: np.ndarray, dW: np.ndarray, cfg: SolverConfig) -> np.ndarray:
    c = cfg.coeffs
    return heat_semigroup(u + c.b(u) * cfg.dt + c.sigma(u) * dW, cfg.dt, cfg.grid)


def f0(cfg: SolverConfig, t: float | None = None) -> float:
    """``(Gamma(t) * u0)(x_obs)``; ``t`` defaults to the final time."""
    t = cfg.T if t is None else t
    return float(heat_semigroup(cfg.u0, t, cfg.grid)[cfg.x_obs])


def observation_kernel(cfg: SolverConfig, tau: float) -> np.ndarray:
    """``S_tau`` applied to the unit-mass delta at ``x_obs``: the lattice ``Gamma(tau, x_obs - .)``."""
    return heat_semigroup(cfg.grid.delta(cfg.x_obs), tau, cfg.grid)


# -- block runner -----------------------------------------------------------


class StepObserver(Protocol):
    """Hook called inside :func:`run_block` before each step.

    ``u`` and ``uhat`` are the state at step ``k`` (real and half spectrum),
    ``dW`` the increment about to be applied (``None`` on the final call, which
    carries ``k == steps``).
    """

    def observe(self, k: int, u: np.ndarray, uhat: np.ndarray, dW: np.ndarray | None) -> None: ...
    def result(self): ...


@dataclass
class BlockRun:
    """Output of one path block.

    ``u_obs[:, k]`` is ``u(t_k, x_obs)``; ``projected[:, k]`` is
    ``(S_{t - t_k} u(t_k))(x_obs)`` for the horizon step, the ``F`` trajectory.
    """

    block: int
    paths: np.ndarray
    u_obs: np.ndarray
    projected: np.ndarray
    final: np.ndarray
    unstable: np.ndarray
    horizon: int
    states: np.ndarray | None = None
    increments: np.ndarray | None = None
    snapshots: dict = field(default_factory=dict)
    extras: dict = field(default_factory=dict)


def run_block(
    cfg: SolverConfig,
    seed: int,
    block: int,
    rows: int = PATH_BLOCK,
    *,
    keep: bool = False,
    snapshots: Sequence[int] = (),
    observers: dict[str, StepObserver] | None = None,
    horizon: int | None = None,
    fast: bool | None = None,
) -> BlockRun:
    """Simulate paths ``block * PATH_BLOCK + [0, rows)``.

    The additive fast path (constant coefficients, nothing kept) stays in
    Fourier space and never transforms the state back.
    """
    if not 1 <= rows <= PATH_BLOCK:
        raise ValueError(f"rows must lie in [1, {PATH_BLOCK}]")
    observers = dict(observers or {})
    horizon = cfg.steps if horizon is None else int(horizon)
    if not 0 <= horizon <= cfg.steps:
        raise ValueError("horizon must be a step index")
    snaps = sorted(set(int(s) for s in snapshots))
    if snaps and not all(0 <= s <= cfg.steps for s in snaps):
        raise ValueError("snapshot steps must lie in [0, steps]")
    can_fast = cfg.coeffs.additive and not keep and not observers and not snaps
    fast = can_fast if fast is None else fast
    if fast and not can_fast:
        raise ValueError("fast path needs constant coefficients and no field outputs")

    grid, m, dt, c = cfg.grid, cfg.measure, cfg.dt, cfg.coeffs
    E = cfg.decay(1)
    pw = cfg.obs_weights()
    # (S_{(horizon-k) dt} f)(x_obs) = Re sum pw * E^(horizon-k) * fhat
    proj_w = pw[None] * np.exp(-(np.maximum(horizon - np.arange(cfg.steps + 1), 0) * dt)[:, None] * grid.frequencies().norm_sq.ravel()[None]).reshape((cfg.steps + 1,) + pw.shape)

    def read(uhat, k):
        ax = grid.spatial_axes
        return np.sum((uhat * pw).real, axis=ax), np.sum((uhat * proj_w[k]).real, axis=ax)

    u_obs = np.empty((rows, cfg.steps + 1))
    proj = np.empty((rows, cfg.steps + 1))
    u = np.broadcast_to(cfg.u0, (rows,) + grid.shape).copy()
    uhat = grid.rfft(u)
    states = np.empty((rows, cfg.steps + 1) + grid.shape) if keep else None
    incs = np.empty((rows, cfg.steps) + grid.shape) if keep else None
    snap_out = {}

    if fast:
        sig = float(c.sigma(0.0))
        drift_hat = np.zeros(grid.rshape, dtype=complex)
        drift_hat[(0,) * grid.dim] = float(c.b(0.0)) * dt * grid.size
        for k in range(cfg.steps):
            u_obs[:, k], proj[:, k] = read(uhat, k)
            dWhat = spectral_increments(grid, m, dt, seed, block, k)[:rows]
            uhat = E * (uhat + sig * dWhat + drift_hat)
        u_obs[:, -1], proj[:, -1] = read(uhat, cfg.steps)
        u = grid.irfft(uhat)
    else:
        for k in range(cfg.steps):
            u_obs[:, k], proj[:, k] = read(uhat, k)
            if k in snaps:
                snap_out[k] = u.copy()
            if keep:
                states[:, k] = u
            dW = grid.irfft(spectral_increments(grid, m, dt, seed, block, k)[:rows])
            if keep:
                incs[:, k] = dW
            for ob in observers.values():
                ob.observe(k, u, uhat, dW)
            with np.errstate(over="ignore", invalid="ignore"):
                uhat = E * grid.rfft(u + c.b(u) * dt + c.sigma(u) * dW)
            u = grid.irfft(uhat)
        u_obs[:, -1], proj[:, -1] = read(uhat, cfg.steps)
        if cfg.steps in snaps:
            snap_out[cfg.steps] = u.copy()
        if keep:
            states[:, -1] = u
        for ob in observers.values():
            ob.observe(cfg.steps, u, uhat, None)

    bad = ~np.isfinite(u).all(axis=grid.spatial_axes) | ~np.isfinite(u_obs).all(axis=1)
    paths = block * PATH_BLOCK + np.arange(rows)
    return BlockRun(block, paths, u_obs, proj, u, bad, horizon, states, incs, snap_out,
                    {name: ob.result() for name, ob in observers.items()})


def default_threads() -> int:
    env = os.environ.get("SHEN_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def block_layout(paths: int) -> list[tuple[int, int]]:
    """``(block, rows)`` pairs covering path indices ``[0, paths)``."""
    if paths < 1:
        raise ValueError("need at least one path")
    full, rest = divmod(paths, PATH_BLOCK)
    out = [(b, PATH_BLOCK) for b in range(full)]
    if rest:
        out.append((full, rest))
    return out


def map_blocks(fn: Callable, cfg, paths: int, seed: int, threads: int | None = None, **kwargs) -> list:
    """Evaluate ``fn(cfg, seed, block, rows, **kwargs)`` over all blocks, in block order."""
    layout = block_layout(paths)
    threads = default_threads() if threads is None else max(1, int(threads))
    if threads == 1 or len(layout) == 1:
        return [fn(cfg, seed, b, r, **kwargs) for b, r in layout]
    with ProcessPoolExecutor(max_workers=min(threads, len(layout))) as pool:
        futures = [pool.submit(fn, cfg, seed, b, r, **kwargs) for b, r in layout]
        return [f.result() for f in futures]


MAX_UNSTABLE_FRACTION = 1e-3


def check_stability(unstable: np.ndarray, max_fraction: float = MAX_UNSTABLE_FRACTION) -> int:
    """Count unstable paths; raise when the fraction exceeds ``max_fraction``."""
    count = int(np.count_nonzero(unstable))
    if count > max_fraction * unstable.size:
        raise InstabilityError(f"{count} of {unstable.size} paths produced non-finite values")
    return count


def _obs_block(cfg, seed, block, rows, horizon=None, snapshots=(), trajectories=True):
    run = run_block(cfg, seed, block, rows, horizon=horizon, snapshots=snapshots)
    if not trajectories:
        # copies, so the block's full trajectories can be freed
        return run.u_obs[:, -1:].copy(), run.projected[:, -1:].copy(), run.unstable, run.snapshots
    return run.u_obs, run.projected, run.unstable, run.snapshots


@dataclass
class Ensemble:
    """Observation-point trajectories of many paths."""

    cfg: SolverConfig
    seed: int
    u_obs: np.ndarray
    projected: np.ndarray
    unstable: np.ndarray
    snapshots: dict

    @property
    def stable(self) -> np.ndarray:
        return ~self.unstable

    def final(self) -> np.ndarray:
        return self.u_obs[self.stable, -1]


def run_ensemble(cfg: SolverConfig, paths: int, seed: int, threads: int | None = None,
                 horizon: int | None = None, snapshots: Sequence[int] = (), trajectories: bool = True) -> Ensemble:
    """Simulate ``paths`` paths and keep ``u`` at ``x_obs``; refuses to aggregate unstable runs.

    With ``trajectories=False`` only the last time column is kept, which is all
    large sample collections need.
    """
    parts = map_blocks(_obs_block, cfg, paths, seed, threads, horizon=horizon, snapshots=tuple(snapshots),
                       trajectories=trajectories)
    u_obs = np.concatenate([p[0] for p in parts])
    proj = np.concatenate([p[1] for p in parts])
    bad = np.concatenate([p[2] for p in parts])
    snaps = {k: np.concatenate([p[3][k] for p in parts]) for k in parts[0][3]}
    check_stability(bad)
    return Ensemble(cfg, seed, u_obs, proj, bad, snaps)


# -- single paths -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SolutionPath:
    """States ``u(t_k, .)`` for ``k = 0..steps`` and the increments that produced them."""

    cfg: SolverConfig
    noise: NoisePath
    states: np.ndarray
    increments: np.ndarray

    @property
    def u_obs(self) -> np.ndarray:
        return self.states[(slice(None),) + self.cfg.x_obs]

    def __len__(self) -> int:
        return self.states.shape[0]


def solve_path(cfg: SolverConfig, seed: int, path_index: int) -> SolutionPath:
    """Replay one path of an ensemble; bit-identical to its row in :func:`run_block`."""
    block, row = divmod(int(path_index), PATH_BLOCK)
    run = run_block(cfg, seed, block, row + 1, keep=True)
    if run.unstable[row]:
        raise InstabilityError(f"path {path_index} produced non-finite values")
    noise = make_path(cfg.grid, cfg.measure, cfg.dt, cfg.steps, seed, path_index)
    states, incs = run.states[row], run.increments[row]
    states.flags.writeable = False
    incs.flags.writeable = False
    return SolutionPath(cfg, noise, states, incs)


def _check_partition(partition: Sequence[int], steps: int) -> list[int]:
    part = [int(p) for p in partition]
    if len(part) < 2 or part[0] != 0 or any(b <= a for a, b in zip(part[:-1], part[1:])):
        raise ValueError("partition must start at 0 and increase strictly")
    if part[-1] > steps:
        raise ValueError("partition runs past the simulated path")
    return part


def simulate_fn_sequence(path: SolutionPath, partition: Sequence[int]) -> list[float]:
    """``F_0, ..., F_N`` for a partition of step indices ending at the observation step.

    ``F_n`` adds, for every step ``k < t_n``, the lattice integral of
    ``Gamma(t - t_k, x_obs - .)`` against ``sigma(u_k) dW_k + b(u_k) dt``.
    """
    cfg = path.cfg
    part = _check_partition(partition, cfg.steps)
    horizon = part[-1]
    c, g = cfg.coeffs, cfg.grid
    out = [f0(cfg, horizon * cfg.dt)]
    total = out[0]
    for a, b in zip(part[:-1], part[1:]):
        for k in range(a, b):
            u = path.states[k]
            kern = observation_kernel(cfg, (horizon - k) * cfg.dt)
            total += float(np.sum(kern * (c.sigma(u) * path.increments[k] + c.b(u) * cfg.dt)) * g.cell)
        out.append(total)
    return out


def fn_sequence(ens: Ensemble, partition: Sequence[int]) -> np.ndarray:
    """``F_n`` for every path of an ensemble run with horizon ``partition[-1]``; shape ``(paths, N + 1)``."""
    part = _check_partition(partition, ens.cfg.steps)
    return ens.projected[ens.stable][:, part]


def truncated_field(path: SolutionPath, start: int, s: int) -> np.ndarray:
    """``u_{n-1}(t_s, .) = S_{t_s - t_start} u(t_start, .)``."""
    if not 0 <= start <= s:
        raise ValueError("need 0 <= start <= s")
    return heat_semigroup(path.states[start], (s - start) * path.cfg.dt, path.cfg.grid)


def truncated_field_direct(path: SolutionPath, start: int, s: int) -> np.ndarray:
    """Same field as :func:`truncated_field`, by summing the mild form term by term."""
    cfg = path.cfg
    c = cfg.coeffs
    out = heat_semigroup(cfg.u0, s * cfg.dt, cfg.grid)
    for k in range(start):
        u = path.states[k]
        out += heat_semigroup(c.sigma(u) * path.increments[k] + c.b(u) * cfg.dt, (s - k) * cfg.dt, cfg.grid)
    return out


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    stderr: float
    samples: int


def _moment(x: np.ndarray) -> MomentEstimate:
    return MomentEstimate(float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size)) if x.size > 1 else math.nan, int(x.size))


def difference_values(ens: Ensemble, start: int, s: int) -> np.ndarray:
    """``u(t_s, x_obs) - u_{n-1}(t_s, x_obs)`` per path; ``start`` must be an ensemble snapshot."""
    if not start <= s <= ens.cfg.steps:
        raise ValueError("need start <= s <= steps")
    if start not in ens.snapshots:
        raise KeyError(f"ensemble has no snapshot at step {start}")
    cfg = ens.cfg
    snap = ens.snapshots[start][ens.stable]
    trunc = np.sum((cfg.grid.rfft(snap) * cfg.decay(s - start) * cfg.obs_weights()).real, axis=cfg.grid.spatial_axes)
    return ens.u_obs[ens.stable, s] - trunc


def difference_moments(ens: Ensemble, start: int, s: int, p: int = 2) -> MomentEstimate:
    """Monte Carlo ``E|u(s, x_obs) - u_{n-1}(s, x_obs)|^p`` with its standard error."""
    if p not in (2, 4):
        raise ValueError("p must be 2 or 4")
    return _moment(np.abs(difference_values(ens, start, s)) ** p)


# -- pathwise martingale bounds ---------------------------------------------


def quadratic_variation(path: SolutionPath, horizon: int | None = None) -> float:
    """Discrete ``<M>_t = sum_k dt ||Gamma(t - t_k, x_obs - .) sigma(u_k)||_H^2``."""
    from .spectral import h_norm_sq

    cfg = path.cfg
    horizon = cfg.steps if horizon is None else horizon
    ks = np.arange(horizon)
    kern = np.stack([observation_kernel(cfg, (horizon - k) * cfg.dt) for k in ks])
    fields = kern * cfg.coeffs.sigma(path.states[ks])
    return float(cfg.dt * np.sum(h_norm_sq(fields, cfg.measure, cfg.grid)))


def drift_integral(path: SolutionPath, horizon: int | None = None) -> float:
    """``sum_k dt <Gamma(t - t_k, x_obs - .), b(u_k)>`` on the lattice."""
    cfg = path.cfg
    horizon = cfg.steps if horizon is None else horizon
    total = 0.0
    for k in range(horizon):
        kern = observation_kernel(cfg, (horizon - k) * cfg.dt)
        total += float(np.sum(kern * cfg.coeffs.b(path.states[k]))) * cfg.grid.cell * cfg.dt
    return total


def stability_envelope(cfg: SolverConfig, phi_T: float) -> float:
    """Sanity bound on ``sup |u|`` used to flag runaway paths."""
    c = cfg.coeffs
    return 10 * (np.abs(cfg.u0).max() + c.b_sup * cfg.T + 4 * c.sigma_sup * math.sqrt(phi_T) * math.sqrt(math.log(cfg.grid.size)))


__all__ = [
    "Trig",
    "Affine",
    "Coefficients",
    "COEFFICIENT_PRESETS",
    "SolverConfig",
    "InstabilityError",
    "heat_semigroup",
    "step",
    "f0",
    "observation_kernel",
    "BlockRun",
    "run_block",
    "map_blocks",
    "block_layout",
    "default_threads",
    "check_stability",
    "Ensemble",
    "run_ensemble",
    "SolutionPath",
    "solve_path",
    "simulate_fn_sequence",
    "fn_sequence",
    "truncated_field",
    "truncated_field_direct",
    "MomentEstimate",
    "difference_values",
    "difference_moments",
    "quadratic_variation",
    "drift_integral",
    "stability_envelope",
]
