"""Order-one and order-two terms of the increment ``F_n - F_{n-1}``.

Over a partition interval ``[a, b)`` (step indices) with frozen field
``v_k = S_{t_k - t_a} u_a``::

    F_n - F_{n-1} = J1 + J2 + R1 + R2
    J1 = sum_k <w_k, sigma(v_k) dW_k>          J2 = sum_k <w_k, b(v_k)> dt
    R1 = sum_k <w_k, q_sigma (u_k - v_k) dW_k>  R2 = sum_k <w_k, q_b (u_k - v_k)> dt

where ``w_k`` is the lattice kernel ``Gamma(t - t_k, x_obs - .) h^d`` and
``q_f = (f(u) - f(v)) / (u - v)`` replaces ``int_0^1 f'(lambda u + (1 - lambda) v) d lambda``
exactly. ``R1_drift = sum_k <w_k, b(u_k)> dt`` is the first-order drift residue.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .kernel import grid_phi, phi
from .scaling import ScalingReport, build_report
from .solver import SolutionPath, SolverConfig, check_stability, map_blocks, run_block

DD_SWITCH = 1e-12


class TermKind(str, enum.Enum):
    J1 = "J1"
    J2 = "J2"
    R1_STOCH = "R1_stoch"
    R1_DRIFT = "R1_drift"
    R2_DRIFT = "R2_drift"


KINDS = tuple(TermKind)
# short names used on the command line
TERM_ALIASES = {"j1": TermKind.J1, "j2": TermKind.J2, "r1": TermKind.R1_STOCH, "r2": TermKind.R2_DRIFT,
                "r1_drift": TermKind.R1_DRIFT}
EXPECTED_SLOPE = {TermKind.J1: 0.5, TermKind.J2: 1.0, TermKind.R1_STOCH: 1.0, TermKind.R1_DRIFT: 1.0, TermKind.R2_DRIFT: 1.5}
SLOPE_TOLERANCE = {TermKind.J1: 0.1, TermKind.J2: 0.2, TermKind.R1_STOCH: 0.2, TermKind.R1_DRIFT: 0.2, TermKind.R2_DRIFT: 0.3}


def divided_difference(f, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``(f(u) - f(v)) / (u - v)``, or ``f'(v)`` where ``|u - v| < 1e-12``."""
    diff = u - v
    close = np.abs(diff) < DD_SWITCH
    safe = np.where(close, 1.0, diff)
    return np.where(close, f.derivative()(v), (f(u) - f(v)) / safe)


@dataclass(frozen=True)
class TaylorTerm:
    kind: TermKind
    value: float
    interval: tuple[int, int]
    horizon: int


@dataclass(frozen=True)
class PartitionPlan:
    """Partition ``0 = t_0 < ... < t_N = t`` in step indices; ``t`` is the observation time."""

    cfg: SolverConfig
    points: tuple[int, ...]

    def __post_init__(self):
        pts = tuple(int(p) for p in self.points)
        if len(pts) < 2 or pts[0] != 0 or any(b <= a for a, b in zip(pts[:-1], pts[1:])):
            raise ValueError("partition must start at 0 and increase strictly")
        if pts[-1] > self.cfg.steps:
            raise ValueError("partition runs past the simulated horizon")
        object.__setattr__(self, "points", pts)

    @classmethod
    def final_interval(cls, cfg: SolverConfig, width: int, horizon: int | None = None) -> PartitionPlan:
        """``[0, t - width, t]``: one interval of ``width`` steps abutting the observation time."""
        horizon = cfg.steps if horizon is None else horizon
        pts = (0, horizon - width, horizon) if width < horizon else (0, horizon)
        return cls(cfg, pts)

    @property
    def horizon(self) -> int:
        return self.points[-1]

    @property
    def intervals(self) -> int:
        return len(self.points) - 1

    def interval(self, n: int) -> tuple[int, int]:
        if not 1 <= n <= self.intervals:
            raise IndexError(f"interval index {n} outside [1, {self.intervals}]")
        return self.points[n - 1], self.points[n]

    def delta_g(self, n: int) -> float:
        """``Phi(t - t_{n-1}) - Phi(t - t_n)``."""
        a, b = self.interval(n)
        dt, m = self.cfg.dt, self.cfg.measure
        return phi((self.horizon - a) * dt, m) - phi((self.horizon - b) * dt, m)

    def delta_g_grid(self, n: int) -> float:
        """Lattice counterpart of :meth:`delta_g`: the exact variance of the additive increment."""
        a, b = self.interval(n)
        c = self.cfg
        return float(grid_phi(self.horizon - a, c.measure, c.grid, c.dt) - grid_phi(self.horizon - b, c.measure, c.grid, c.dt))


class _TermAccumulator:
    """Accumulates all term kinds over one interval for a block of paths."""

    def __init__(self, cfg: SolverConfig, start: int, stop: int, horizon: int):
        self.cfg, self.start, self.stop, self.horizon = cfg, start, stop, horizon
        self.vhat = None
        self.sums = None
        self._E = cfg.decay(1)
        self._pw = cfg.obs_weights()

    def observe(self, k, u, uhat, dW):
        if k < self.start or k >= self.stop:
            return
        cfg = self.cfg
        g, c, dt = cfg.grid, cfg.coeffs, cfg.dt
        if k == self.start:
            self.vhat = uhat.copy()
            self.sums = np.zeros((len(KINDS),) + u.shape[: u.ndim - g.dim])
        else:
            self.vhat = self.vhat * self._E
        v = g.irfft(self.vhat)
        d = u - v
        fields = np.stack([
            c.sigma(v) * dW,
            c.b(v) * dt,
            divided_difference(c.sigma, u, v) * d * dW,
            c.b(u) * dt,
            divided_difference(c.b, u, v) * d * dt,
        ])
        wk = self._pw * cfg.decay(self.horizon - k)
        self.sums += np.sum((g.rfft(fields) * wk).real, axis=g.spatial_axes)

    def result(self):
        return self.sums


def compute_terms(path: SolutionPath, plan: PartitionPlan, n: int) -> list[TaylorTerm]:
    """All term kinds on interval ``n`` of ``plan`` for one path."""
    a, b = plan.interval(n)
    acc = _TermAccumulator(path.cfg, a, b, plan.horizon)
    g = path.cfg.grid
    for k in range(a, b):
        u = path.states[k]
        acc.observe(k, u, g.rfft(u), path.increments[k])
    return [TaylorTerm(kind, float(val), (a, b), plan.horizon) for kind, val in zip(KINDS, acc.result())]


def decomposition_residual(F_prev: float, F_next: float, terms: list[TaylorTerm]) -> float:
    """``|(F_n - F_{n-1}) - (J1 + J2 + R1 + R2)| / (1 + |F_n|)``."""
    by = {t.kind: t.value for t in terms}
    total = by[TermKind.J1] + by[TermKind.J2] + by[TermKind.R1_STOCH] + by[TermKind.R2_DRIFT]
    return abs((F_next - F_prev) - total) / (1 + abs(F_next))


def _terms_block(cfg, seed, block, rows, intervals, horizon):
    obs = {f"{a}:{b}": _TermAccumulator(cfg, a, b, horizon) for a, b in intervals}
    run = run_block(cfg, seed, block, rows, observers=obs, horizon=horizon)
    terms = np.stack([run.extras[f"{a}:{b}"] for a, b in intervals])  # (intervals, kinds, rows)
    F = np.stack([run.projected[:, [a, b]] for a, b in intervals])  # (intervals, rows, 2)
    return terms, F, run.unstable


@dataclass
class TermEnsemble:
    intervals: tuple[tuple[int, int], ...]
    horizon: int
    terms: np.ndarray  # (intervals, kinds, paths)
    F: np.ndarray  # (intervals, paths, 2): F_{n-1}, F_n
    reports: dict = field(default_factory=dict)

    def values(self, interval: int, kind: TermKind) -> np.ndarray:
        return self.terms[interval, KINDS.index(TermKind(kind))]

    def residuals(self) -> np.ndarray:
        """Decomposition residual per interval and path, relative to ``1 + |F_n|``."""
        idx = [KINDS.index(k) for k in (TermKind.J1, TermKind.J2, TermKind.R1_STOCH, TermKind.R2_DRIFT)]
        total = self.terms[:, idx].sum(axis=1)
        inc = self.F[..., 1] - self.F[..., 0]
        return np.abs(inc - total) / (1 + np.abs(self.F[..., 1]))


def ensemble_terms(cfg: SolverConfig, intervals, paths: int, seed: int, horizon: int | None = None,
                   threads: int | None = None) -> TermEnsemble:
    horizon = cfg.steps if horizon is None else horizon
    intervals = tuple((int(a), int(b)) for a, b in intervals)
    if any(not 0 <= a < b <= horizon for a, b in intervals):
        raise ValueError("intervals must lie inside [0, horizon]")
    parts = map_blocks(_terms_block, cfg, paths, seed, threads, intervals=intervals, horizon=horizon)
    terms = np.concatenate([p[0] for p in parts], axis=2)
    F = np.concatenate([p[1] for p in parts], axis=1)
    bad = np.concatenate([p[2] for p in parts])
    check_stability(bad)
    return TermEnsemble(intervals, horizon, terms[:, :, ~bad], F[:, ~bad])


def _kind(kind) -> TermKind:
    if isinstance(kind, str) and kind.lower() in TERM_ALIASES:
        return TERM_ALIASES[kind.lower()]
    return TermKind(kind)


def _check_widths(widths) -> list[int]:
    widths = sorted(int(w) for w in widths)
    if len(widths) < 5 or widths[-1] < 10 * widths[0]:
        raise ValueError("need at least five widths spanning one decade")
    return widths


def reports_from_ensemble(cfg: SolverConfig, widths, ens: TermEnsemble, kinds, p: int = 2) -> dict[TermKind, ScalingReport]:
    """One :class:`ScalingReport` per term kind; interval ``i`` of ``ens`` must have width ``widths[i]``."""
    plans = [PartitionPlan.final_interval(cfg, w, ens.horizon) for w in widths]
    scale = [pl.delta_g_grid(pl.intervals) for pl in plans]
    cont = [pl.delta_g(pl.intervals) for pl in plans]
    out = {}
    for kind in map(_kind, kinds):
        est, se = [], []
        for i in range(len(widths)):
            x = np.abs(ens.values(i, kind)) ** p
            mom = x.mean()
            est.append(mom ** (1 / p))
            # delta method for the p-th root
            se.append(x.std(ddof=1) / np.sqrt(x.size) * mom ** (1 / p - 1) / p)
        out[kind] = build_report(f"{kind.value} p={p}", widths, scale, cont, est, se, EXPECTED_SLOPE[kind], SLOPE_TOLERANCE[kind])
    return out


def scaling_experiment(cfg: SolverConfig, widths, kind, p: int = 2, paths: int = 20000, seed: int = 0,
                       threads: int | None = None, kinds=None) -> tuple[ScalingReport, TermEnsemble]:
    """``(E|term|^p)^{1/p}`` on final intervals of each width against ``Delta_{n-1}(g)``.

    The intervals ``[t - w, t)`` all come from one ensemble, so passing
    ``kinds`` fills in reports for further term kinds at no extra cost; they are
    attached as ``ens.reports``.
    """
    widths = _check_widths(widths)
    N = cfg.steps
    ens = ensemble_terms(cfg, [(N - w, N) for w in widths], paths, seed, threads=threads)
    kinds = [kind] + [k for k in (kinds or ()) if _kind(k) is not _kind(kind)]
    ens.reports = reports_from_ensemble(cfg, widths, ens, kinds, p)
    return ens.reports[_kind(kind)], ens


__all__ = [
    "TermKind",
    "KINDS",
    "TERM_ALIASES",
    "TaylorTerm",
    "PartitionPlan",
    "divided_difference",
    "compute_terms",
    "decomposition_residual",
    "TermEnsemble",
    "ensemble_terms",
    "scaling_experiment",
    "reports_from_ensemble",
]
