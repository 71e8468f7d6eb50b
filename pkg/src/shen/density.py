"""Density of ``u(t, x_obs)``: samples, kernel estimate, Gaussian envelopes."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, stats

from .kernel import phi
from .solver import SolverConfig, check_stability, map_blocks, observation_kernel, run_block, run_ensemble
from .spectral import h_norm_sq

KS_COEFFICIENT = 1.63
RELIABLE_REL_SE = 0.20
MIN_SAMPLES = 1000


class DegenerateSamples(ValueError):
    pass


def collect_samples(cfg: SolverConfig, M: int, seed: int, threads: int | None = None) -> np.ndarray:
    """``u(t, x_obs)`` on ``M`` paths; refuses to aggregate when too many paths blew up."""
    if M < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {M}")
    return run_ensemble(cfg, M, seed, threads, trajectories=False).final()


# -- kernel density estimate ------------------------------------------------


def silverman_bandwidth(samples: np.ndarray) -> float:
    return 1.06 * float(np.std(samples, ddof=1)) * samples.size ** (-0.2)


@dataclass(frozen=True)
class KDEResult:
    y: np.ndarray
    p_hat: np.ndarray
    stderr: np.ndarray
    bandwidth: float
    samples: int

    @property
    def rel_se(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.p_hat > 0, self.stderr / self.p_hat, np.inf)

    @property
    def reliable(self) -> np.ndarray:
        """Mask of the contiguous run around the mode with relative standard error below 20%."""
        ok = self.rel_se < RELIABLE_REL_SE
        mask = np.zeros_like(ok)
        i = int(np.argmax(self.p_hat))
        if not ok[i]:
            return mask
        lo = i
        while lo > 0 and ok[lo - 1]:
            lo -= 1
        hi = i
        while hi < ok.size - 1 and ok[hi + 1]:
            hi += 1
        mask[lo : hi + 1] = True
        return mask

    @property
    def reliable_range(self) -> tuple[float, float]:
        r = self.y[self.reliable]
        return (float(r[0]), float(r[-1])) if r.size else (math.nan, math.nan)

    def integral(self) -> float:
        return float(np.trapezoid(self.p_hat, self.y))


def default_ygrid(samples: np.ndarray, bandwidth: float, points: int = 801) -> np.ndarray:
    return np.linspace(samples.min() - 6 * bandwidth, samples.max() + 6 * bandwidth, points)


def kde(samples, y=None) -> KDEResult:
    """Gaussian KDE with bandwidth ``1.06 std M^-1/5`` and its pointwise standard error.

    The estimator is a mean of ``K_h(y - X_i)``; its variance per sample is
    ``E K_h^2 - p^2`` with ``E K_h^2 = p_{h/sqrt 2}(y) / (2 sqrt(pi) h)``.
    """
    x = np.asarray(samples, dtype=float).ravel()
    M = x.size
    if M < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {M}")
    sd = float(np.std(x, ddof=1))
    if not sd > 0:
        raise DegenerateSamples("samples have zero variance")
    h = silverman_bandwidth(x)
    y = default_ygrid(x, h) if y is None else np.asarray(y, dtype=float)
    factor = h / sd
    p = stats.gaussian_kde(x, bw_method=factor)(y)
    p_half = stats.gaussian_kde(x, bw_method=factor / math.sqrt(2))(y)
    var = np.maximum(p_half / (2 * math.sqrt(math.pi) * h) - p**2, 0.0)
    return KDEResult(y, p, np.sqrt(var / M), h, M)


# -- Gaussian case ----------------------------------------------------------


@dataclass(frozen=True)
class GaussianCheck:
    samples: int
    mean: float
    variance: float
    target_mean: float
    target_variance: float
    ks_statistic: float
    ks_pvalue: float
    threshold: float

    @property
    def variance_rel_error(self) -> float:
        return abs(self.variance - self.target_variance) / self.target_variance

    @property
    def passed(self) -> bool:
        return self.ks_statistic < self.threshold

    def summary(self) -> dict:
        return {
            "samples": self.samples,
            "mean": self.mean,
            "variance": self.variance,
            "F0": self.target_mean,
            "phi_t": self.target_variance,
            "variance_rel_error": self.variance_rel_error,
            "ks": self.ks_statistic,
            "ks_pvalue": self.ks_pvalue,
            "ks_threshold": self.threshold,
            "pass": self.passed,
        }


def gaussian_case_check(samples, F0: float, variance: float) -> GaussianCheck:
    """Kolmogorov-Smirnov distance to ``Normal(F0, variance)``; passes below ``1.63 / sqrt(M)``."""
    x = np.asarray(samples, dtype=float).ravel()
    res = stats.kstest(x, "norm", args=(F0, math.sqrt(variance)))
    return GaussianCheck(x.size, float(x.mean()), float(x.var(ddof=1)), float(F0), float(variance),
                         float(res.statistic), float(res.pvalue), KS_COEFFICIENT / math.sqrt(x.size))


# -- envelope fit -----------------------------------------------------------


@dataclass(frozen=True)
class EnvelopeFit:
    """Constants of ``C1 exp(-z^2/C2) <= sqrt(Phi) p <= c1 exp(-(|z| - c3 T / sqrt Phi)_+^2 / c2)``."""

    C1: float
    C2: float
    c1: float
    c2: float
    c3: float
    lower_residual: float
    upper_residual: float

    def lower(self, z):
        return self.C1 * np.exp(-np.asarray(z) ** 2 / self.C2)

    def upper(self, z, shift: float):
        a = np.maximum(np.abs(z) - shift, 0.0)
        return self.c1 * np.exp(-a**2 / self.c2)


@dataclass(frozen=True)
class DensityReport:
    samples: int
    F0: float
    phi_t: float
    T: float
    kde: KDEResult
    fit: EnvelopeFit | None
    lower_holds: bool
    upper_holds: bool
    consistent: bool
    tail_curvature: float

    @property
    def reliable_range(self):
        return self.kde.reliable_range

    @property
    def z(self) -> np.ndarray:
        return (self.kde.y - self.F0) / math.sqrt(self.phi_t)

    @property
    def shift(self) -> float:
        return self.fit.c3 * self.T / math.sqrt(self.phi_t) if self.fit else math.nan

    def lower_envelope(self) -> np.ndarray:
        return self.fit.lower(self.z) / math.sqrt(self.phi_t)

    def upper_envelope(self) -> np.ndarray:
        return self.fit.upper(self.z, self.shift) / math.sqrt(self.phi_t)

    @property
    def constants_ok(self) -> bool:
        f = self.fit
        return f is not None and all(math.isfinite(v) and v > 0 for v in (f.C1, f.C2, f.c1, f.c2)) and f.c3 >= 0

    @property
    def gap_ok(self) -> bool:
        return self.constants_ok and self.fit.C2 <= 10 * self.fit.c2

    @property
    def curvature_in_bracket(self) -> bool:
        """Fitted tail curvature inside ``[1/c2, 1/C2]``, the range both envelopes allow."""
        if not self.constants_ok:
            return False
        lo, hi = sorted((1 / self.fit.c2, 1 / self.fit.C2))
        return lo <= self.tail_curvature <= hi

    @property
    def passed(self) -> bool:
        return self.constants_ok and self.lower_holds and self.upper_holds and self.gap_ok and self.consistent

    def summary(self) -> dict:
        f = self.fit
        lo, hi = self.reliable_range
        out = {
            "samples": self.samples,
            "F0": self.F0,
            "phi_t": self.phi_t,
            "bandwidth": self.kde.bandwidth,
            "reliable_lo": lo,
            "reliable_hi": hi,
            "kde_integral": self.kde.integral(),
            "tail_curvature": self.tail_curvature,
            "curvature_in_bracket": self.curvature_in_bracket,
            "lower_holds": self.lower_holds,
            "upper_holds": self.upper_holds,
            "consistent": self.consistent,
            "pass": self.passed,
        }
        if f is not None:
            out.update({"C1": f.C1, "C2": f.C2, "c1": f.c1, "c2": f.c2, "c3": f.c3})
        return out

    def rows(self) -> list[dict]:
        lower = self.lower_envelope() if self.fit else np.full_like(self.kde.y, np.nan)
        upper = self.upper_envelope() if self.fit else np.full_like(self.kde.y, np.nan)
        return [
            {"y": y, "p_hat": p, "stderr": s, "lower_env": lo, "upper_env": up, "reliable": int(r)}
            for y, p, s, lo, up, r in zip(self.kde.y, self.kde.p_hat, self.kde.stderr, lower, upper, self.kde.reliable)
        ]


_LP_TOL = 1e-9


def _fit_upper(z, ell, shift):
    """``min sum(alpha - beta a^2 - ell)`` subject to ``alpha - beta a_i^2 >= ell_i``, ``beta >= 0``."""
    a2 = np.maximum(np.abs(z) - shift, 0.0) ** 2
    # variables (alpha, beta); constraint -alpha + beta a2 <= -ell
    res = optimize.linprog(c=[z.size, -a2.sum()], A_ub=np.column_stack([-np.ones_like(a2), a2]), b_ub=-ell,
                           bounds=[(None, None), (0, None)], method="highs")
    if not res.success:
        return None
    alpha, beta = res.x
    return alpha, beta, float(np.sum(alpha - beta * a2 - ell) / z.size)


def _fit_lower(z, ell):
    """``max sum(gamma - eps z^2)`` subject to ``gamma - eps z_i^2 <= ell_i``, ``eps >= 0``."""
    z2 = z**2
    res = optimize.linprog(c=[-z.size, z2.sum()], A_ub=np.column_stack([np.ones_like(z2), -z2]), b_ub=ell,
                           bounds=[(None, None), (0, None)], method="highs")
    if not res.success:
        return None
    gamma, eps = res.x
    return gamma, eps, float(np.sum(ell - gamma + eps * z2) / z.size)


def tail_curvature(z, ell, inner: float = 1.0) -> float:
    """``-q2`` of the parabola ``q0 + q1 z + q2 z^2`` fitted to ``ell`` where ``|z| >= inner``."""
    sel = np.abs(z) >= inner
    if sel.sum() < 3:
        return math.nan
    return float(-np.polyfit(z[sel], ell[sel], 2)[0])


def envelope_check(samples, F0: float, phi_t: float, T: float, b_sup: float, sigma_lower: float,
                   kde_result: KDEResult | None = None) -> DensityReport:
    """Fit both Gaussian envelopes to the log-KDE on its reliable range.

    With ``z = (y - F0)/sqrt(Phi)`` and ``ell = log(sqrt(Phi) p_hat)``, the upper
    curve ``log c1 - a(z)^2 / c2`` (``a = (|z| - c3 T / sqrt Phi)_+``, ``c3 = ||b||_inf``)
    and the lower curve ``log C1 - z^2 / C2`` are fitted as linear programs:
    each must lie on its side of every reliable point while staying as close
    to the data as possible in total.
    """
    if not sigma_lower > 0:
        from .malliavin import DegenerateCoefficients

        raise DegenerateCoefficients("the envelope check needs a nondegenerate diffusion coefficient")
    x = np.asarray(samples, dtype=float).ravel()
    res = kde(x) if kde_result is None else kde_result
    mask = res.reliable
    sq = math.sqrt(phi_t)
    z = (res.y[mask] - F0) / sq
    ell = np.log(res.p_hat[mask] * sq)
    c3 = float(b_sup)
    shift = c3 * T / sq
    up = _fit_upper(z, ell, shift) if z.size >= 3 else None
    lo = _fit_lower(z, ell) if z.size >= 3 else None
    if up is None or lo is None:
        return DensityReport(x.size, F0, phi_t, T, res, None, False, False, False, math.nan)
    alpha, beta, up_res = up
    gamma, eps, lo_res = lo
    inf = math.inf
    fit = EnvelopeFit(math.exp(gamma), 1 / eps if eps > 0 else inf, math.exp(alpha), 1 / beta if beta > 0 else inf, c3,
                      lo_res, up_res)
    a2 = np.maximum(np.abs(z) - shift, 0.0) ** 2
    upper_log = alpha - beta * a2
    lower_log = gamma - eps * z**2
    upper_ok = bool(np.all(ell <= upper_log + _LP_TOL))
    lower_ok = bool(np.all(ell >= lower_log - _LP_TOL))
    consistent = bool(np.all(lower_log <= upper_log + _LP_TOL))
    return DensityReport(x.size, F0, phi_t, T, res, fit, lower_ok, upper_ok, consistent, tail_curvature(z, ell))


# -- pathwise martingale bounds for whole blocks ----------------------------


class MartingaleObserver:
    """Accumulates ``<M>_t`` and the drift integral at the horizon for a block of paths."""

    def __init__(self, cfg: SolverConfig, horizon: int | None = None):
        self.cfg = cfg
        self.horizon = cfg.steps if horizon is None else horizon
        self.qv = None
        self.drift = None
        self._pw = cfg.obs_weights()

    def observe(self, k, u, uhat, dW):
        if k >= self.horizon:
            return
        cfg = self.cfg
        g = cfg.grid
        if self.qv is None:
            batch = u.shape[: u.ndim - g.dim]
            self.qv, self.drift = np.zeros(batch), np.zeros(batch)
        decay = cfg.decay(self.horizon - k)
        kern = observation_kernel(cfg, (self.horizon - k) * cfg.dt)
        self.qv += cfg.dt * h_norm_sq(kern * cfg.coeffs.sigma(u), cfg.measure, g)
        b_hat = g.rfft(cfg.coeffs.b(u))
        self.drift += cfg.dt * np.sum((b_hat * self._pw * decay).real, axis=g.spatial_axes)

    def result(self):
        return self.qv, self.drift


def _martingale_block(cfg, seed, block, rows):
    run = run_block(cfg, seed, block, rows, observers={"mg": MartingaleObserver(cfg)})
    qv, drift = run.extras["mg"]
    return qv, drift, run.unstable


@dataclass(frozen=True)
class MartingaleBounds:
    qv: np.ndarray
    drift: np.ndarray
    qv_bound: float
    drift_bound: float

    @property
    def qv_fraction(self) -> float:
        return float(np.mean(self.qv <= self.qv_bound))

    @property
    def drift_fraction(self) -> float:
        return float(np.mean(np.abs(self.drift) <= self.drift_bound))

    @property
    def passed(self) -> bool:
        return self.qv_fraction == 1.0 and self.drift_fraction == 1.0

    def summary(self) -> dict:
        return {
            "paths": int(self.qv.size),
            "qv_max": float(self.qv.max()),
            "qv_bound": self.qv_bound,
            "qv_fraction": self.qv_fraction,
            "drift_abs_max": float(np.abs(self.drift).max()),
            "drift_bound": self.drift_bound,
            "drift_fraction": self.drift_fraction,
            "pass": self.passed,
        }


def martingale_bounds(cfg: SolverConfig, paths: int, seed: int, threads: int | None = None, slack: float = 0.02) -> MartingaleBounds:
    """Per-path ``<M>_t <= ||sigma||^2 Phi(t)`` and ``|drift| <= ||b|| T``, each with 2% slack."""
    parts = map_blocks(_martingale_block, cfg, paths, seed, threads)
    qv = np.concatenate([p[0] for p in parts])
    drift = np.concatenate([p[1] for p in parts])
    bad = np.concatenate([p[2] for p in parts])
    check_stability(bad)
    c = cfg.coeffs
    return MartingaleBounds(qv[~bad], drift[~bad], c.sigma_sup**2 * phi(cfg.T, cfg.measure) * (1 + slack),
                            c.b_sup * cfg.T * (1 + slack))


__all__ = [
    "collect_samples",
    "silverman_bandwidth",
    "KDEResult",
    "kde",
    "GaussianCheck",
    "gaussian_case_check",
    "EnvelopeFit",
    "DensityReport",
    "envelope_check",
    "tail_curvature",
    "MartingaleObserver",
    "MartingaleBounds",
    "martingale_bounds",
    "DegenerateSamples",
]
