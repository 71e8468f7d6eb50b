"""First Malliavin derivative of the discrete solution.

Differentiating one exponential-Euler step with respect to the noise gives

    D u_{k+1} = S_dt(m_k * D u_k),   m_k = 1 + b'(u_k) dt + sigma'(u_k) dW_k,

with a fresh kick ``S_dt(sigma(u_k(z)) delta_z)`` for the source ``(k, z)``.
``delta_z`` has unit mass (value ``1/h^d``), so the linear case reproduces the
continuum heat kernel.

Two routes compute the same numbers. :func:`propagate_derivative` carries the
whole (source x space) tensor forward in time for one path. The batched
routine :func:`derivative_at_obs` runs the transposed recursion backward from
the observation functional, which is all the ensemble estimators need.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernel import grid_phi, phi
from .noise import PATH_BLOCK
from .scaling import ScalingReport, build_report
from .solver import SolutionPath, SolverConfig, check_stability, map_blocks, observation_kernel, run_block
from .spectral import h_norm_sq

MAX_TENSOR_SITES = 128
MAX_TENSOR_STEPS = 256


class DegenerateCoefficients(ValueError):
    """The estimator needs ``|sigma| >= c > 0``."""


@dataclass(frozen=True, eq=False)
class DerivativeField:
    """``values[r, z, x] = D_{r,z} u(t_obs, x)`` for sources ``r < obs_step``."""

    cfg: SolverConfig
    obs_step: int
    values: np.ndarray

    def source(self, r: int) -> np.ndarray:
        """Field ``x -> D_{r,.} u(t_obs, x)`` as an ``(n, n)`` array; zero once ``r >= obs_step``."""
        if r >= self.obs_step:
            return np.zeros_like(self.values[0])
        return self.values[r]

    def at_obs(self) -> np.ndarray:
        """``(r, z) -> D_{r,z} u(t_obs, x_obs)``."""
        return self.values[(slice(None), slice(None)) + self.cfg.x_obs]


def _check_tensor_size(cfg: SolverConfig, steps: int):
    if cfg.grid.dim != 1 or cfg.grid.n > MAX_TENSOR_SITES or steps > MAX_TENSOR_STEPS:
        raise ValueError(
            f"derivative tensor limited to d=1, n<={MAX_TENSOR_SITES}, steps<={MAX_TENSOR_STEPS};"
            f" got d={cfg.grid.dim}, n={cfg.grid.n}, steps={steps}"
        )


def propagate_derivative(path: SolutionPath, obs_step: int | None = None) -> DerivativeField:
    """Push every source ``(r, z)`` forward to ``obs_step`` along one path."""
    cfg = path.cfg
    N = cfg.steps if obs_step is None else int(obs_step)
    _check_tensor_size(cfg, N)
    g, c, dt = cfg.grid, cfg.coeffs, cfg.dt
    n = g.n
    E = cfg.decay(1)
    R = np.zeros((N, n, n))
    for k in range(N):
        u = path.states[k]
        mult = 1.0 + c.db(u) * dt + c.dsigma(u) * path.increments[k]
        if k:
            R[:k] = g.irfft(g.rfft(R[:k] * mult) * E)
        R[k] = g.irfft(g.rfft(np.diag(c.sigma(u) / g.cell)) * E)
    return DerivativeField(cfg, N, R)


def derivative_at_obs(cfg: SolverConfig, states: np.ndarray, increments: np.ndarray, end: int,
                      start: int = 0, weight: np.ndarray | None = None) -> np.ndarray:
    """``D_{r,z} <weight, u_end>`` for ``start <= r < end`` by the backward recursion.

    ``states[..., k, :]`` and ``increments[..., k, :]`` are indexed by absolute
    step for ``k`` in ``[start, end)``; leading axes are a batch. The default
    weight reads ``u_end(x_obs)``. Returns an array ``(..., end - start, n...)``.
    """
    g, c, dt = cfg.grid, cfg.coeffs, cfg.dt
    if weight is None:
        weight = np.zeros(g.shape)
        weight[cfg.x_obs] = 1.0
    batch = states.shape[: states.ndim - g.dim - 1]
    E = cfg.decay(1)
    lam = np.broadcast_to(weight, batch + g.shape).astype(float)
    out = np.empty(batch + (end - start,) + g.shape)
    sel = lambda a, k: a[(Ellipsis, k) + (slice(None),) * g.dim]
    for k in range(end - 1, start - 1, -1):
        gk = g.irfft(g.rfft(lam) * E)
        u = sel(states, k)
        sel(out, k - start)[...] = c.sigma(u) * gk / g.cell
        if k > start:
            lam = (1.0 + c.db(u) * dt + c.dsigma(u) * sel(increments, k)) * gk
    return out


def ht_norm_sq(D, cfg: SolverConfig | None = None, window: tuple[int, int] | None = None) -> np.ndarray:
    """``sum_{r in window} dt ||D_{r,.}||_H^2`` of the observation-point slices.

    ``D`` is a :class:`DerivativeField` or an array ``(..., sources, n...)``
    with source index ``r`` counted from 0; ``window = (a, e)`` in steps.
    """
    if isinstance(D, DerivativeField):
        cfg, slices = D.cfg, D.at_obs()
    else:
        slices = np.asarray(D)
    if cfg is None:
        raise ValueError("a raw derivative array needs its SolverConfig")
    axis = slices.ndim - cfg.grid.dim - 1
    lo, hi = (0, slices.shape[axis]) if window is None else window
    if not 0 <= lo <= hi:
        raise ValueError("window must satisfy 0 <= a <= e")
    hi = min(hi, slices.shape[axis])
    lo = min(lo, hi)
    part = np.take(slices, np.arange(lo, hi), axis=axis)
    return cfg.dt * np.sum(h_norm_sq(part, cfg.measure, cfg.grid), axis=-1)


class WindowRecorder:
    """Observer keeping states and increments for steps ``[start, end)``."""

    def __init__(self, start: int, end: int):
        self.start, self.end = start, end
        self.states, self.incs = [], []

    def observe(self, k, u, uhat, dW):
        if self.start <= k < self.end:
            self.states.append(u.copy())
            self.incs.append(dW.copy())

    def result(self):
        if not self.states:
            return None
        return np.stack(self.states, axis=1), np.stack(self.incs, axis=1)


def _window_norms_block(cfg, seed, block, rows, end, widths, powers=(1,)):
    """Per-path ``||D u(t_end, x_obs)||^2`` over windows ``[end - w, end)`` for each width."""
    wmax = max(widths)
    run = run_block(cfg, seed, block, rows, observers={"win": WindowRecorder(end - wmax, end)})
    states, incs = run.extras["win"]
    D = derivative_at_obs(cfg, states, incs, end=wmax, start=0)
    per_source = cfg.dt * h_norm_sq(D, cfg.measure, cfg.grid)  # (rows, wmax)
    tail = np.cumsum(per_source[:, ::-1], axis=1)
    return tail[:, [w - 1 for w in widths]], run.unstable


def _window_norms(cfg, paths, seed, end, widths, threads=None):
    parts = map_blocks(_window_norms_block, cfg, paths, seed, threads, end=end, widths=tuple(widths))
    norms = np.concatenate([p[0] for p in parts])
    bad = np.concatenate([p[1] for p in parts])
    check_stability(bad)
    return norms[~bad]


def lemma4_scaling(cfg: SolverConfig, end: int, widths, p: int = 1, paths: int = 2000, seed: int = 0,
                   threads: int | None = None, expected: float | None = None, tol: float | None = None) -> ScalingReport:
    """``E ||D u(t_end, x_obs)||_{H_{e-delta,e}}^{2p}`` against ``Phi(delta)`` for window widths in steps."""
    widths = sorted(int(w) for w in widths)
    if widths[0] < 1 or widths[-1] > end:
        raise ValueError("window widths must lie in [1, end]")
    norms = _window_norms(cfg, paths, seed, end, widths, threads) ** p
    est, se = norms.mean(axis=0), norms.std(axis=0, ddof=1) / np.sqrt(norms.shape[0])
    scale = grid_phi(np.array(widths), cfg.measure, cfg.grid, cfg.dt) ** p
    cont = np.array([phi(w * cfg.dt, cfg.measure) for w in widths]) ** p
    expected = float(p) if expected is None else expected
    tol = 0.15 * p if tol is None else tol
    return build_report(f"lemma4 p={p}", widths, scale, cont, est, se, expected, tol)


def _fn_derivative_block(cfg, seed, block, rows, start, stop):
    run = run_block(cfg, seed, block, rows, observers={"win": WindowRecorder(start, stop)})
    states, incs = run.extras["win"]
    weight = observation_kernel(cfg, (cfg.steps - stop) * cfg.dt) * cfg.grid.cell
    D = derivative_at_obs(cfg, states, incs, end=stop - start, start=0, weight=weight)
    return ht_norm_sq(D, cfg), run.unstable


@dataclass(frozen=True)
class NegativeMomentProbe:
    interval: tuple[int, int]
    delta: float
    p: float
    samples: np.ndarray
    estimate: float
    estimate_half: float
    levels: tuple[float, ...]
    probabilities: tuple[float, ...]

    @property
    def relative_change(self) -> float:
        return abs(self.estimate - self.estimate_half) / abs(self.estimate)

    @property
    def stable(self) -> bool:
        return self.relative_change < 0.10

    @property
    def decay_ok(self) -> bool:
        """``P(X < eps/2) <= P(X < eps)/4`` for each consecutive pair of levels."""
        P = self.probabilities
        return all(b <= a / 4 for a, b in zip(P[:-1], P[1:]))

    @property
    def passed(self) -> bool:
        return self.stable and self.decay_ok

    def summary(self) -> dict:
        return {
            "interval": list(self.interval),
            "delta": self.delta,
            "p": self.p,
            "samples": int(self.samples.size),
            "neg_moment": self.estimate,
            "neg_moment_half": self.estimate_half,
            "relative_change": self.relative_change,
            "stable": self.stable,
            "levels": list(self.levels),
            "probabilities": list(self.probabilities),
            "decay_ok": self.decay_ok,
            "pass": self.passed,
        }


SMALL_BALL_LEVELS = (0.5, 0.25, 0.125, 0.0625)


def negative_moment_probe(cfg: SolverConfig, interval: tuple[int, int], p: float = 1.0, paths: int = 2000,
                          seed: int = 0, threads: int | None = None) -> NegativeMomentProbe:
    """Normalized derivative norm ``X = Delta^-1 int ||D_r F_n||_H^2 dr`` over one partition interval.

    ``paths`` is the doubled sample size: the estimate from the first half is
    compared with the estimate from all paths. Small-ball probabilities are
    read at :data:`SMALL_BALL_LEVELS` times the median of ``X``.
    """
    if not cfg.coeffs.nondegenerate:
        raise DegenerateCoefficients("negative moments need a diffusion coefficient bounded away from 0")
    a, b = (int(v) for v in interval)
    if not 0 <= a < b <= cfg.steps:
        raise ValueError("interval must satisfy 0 <= a < b <= steps")
    parts = map_blocks(_fn_derivative_block, cfg, paths, seed, threads, start=a, stop=b)
    norms = np.concatenate([q[0] for q in parts])
    bad = np.concatenate([q[1] for q in parts])
    check_stability(bad)
    norms = norms[~bad]
    N = cfg.steps
    delta = float(grid_phi(N - a, cfg.measure, cfg.grid, cfg.dt) - grid_phi(N - b, cfg.measure, cfg.grid, cfg.dt))
    X = norms / delta
    half = X[: X.size // 2]
    med = float(np.median(X))
    levels = tuple(f * med for f in SMALL_BALL_LEVELS)
    probs = tuple(float(np.mean(X < eps)) for eps in levels)
    return NegativeMomentProbe((a, b), delta, float(p), X, float(np.mean(X ** -p)), float(np.mean(half ** -p)), levels, probs)


__all__ = [
    "DerivativeField",
    "DegenerateCoefficients",
    "propagate_derivative",
    "derivative_at_obs",
    "ht_norm_sq",
    "lemma4_scaling",
    "negative_moment_probe",
    "NegativeMomentProbe",
    "WindowRecorder",
    "PATH_BLOCK",
]
