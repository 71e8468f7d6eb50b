"""Heat kernel, its Fourier transform and the variance functional.

``J(t) = int |F Gamma(t)(xi)|^2 mu(dxi)`` is the rate and
``Phi(t) = int_0^t J(s) ds`` the variance of the additive-noise solution.
Closed forms are used for white noise and Riesz kernels; everything else goes
through radial quadrature.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import integrate, special

from .grid import GridSpec
from .spectral import Family, SpectralMeasure, dalang_integral, grid_weights, radial_density, radial_integral, sphere_area


class DalangDivergence(ValueError):
    """Raised when ``Phi`` is requested for a measure violating Dalang's condition."""


def gamma(t: float, x) -> np.ndarray:
    """Gaussian heat kernel of variance ``2t``; ``x`` has the dimension on its last axis.

    A scalar or 1-D array ``x`` is read as points of R^1.
    """
    if not t > 0:
        raise ValueError(f"heat kernel needs t > 0, got {t}")
    x = np.asarray(x, dtype=float)
    if x.ndim <= 1:
        d, sq = 1, x**2
    else:
        d, sq = x.shape[-1], np.sum(x**2, axis=-1)
    return (4 * np.pi * t) ** (-d / 2) * np.exp(-sq / (4 * t))


def fourier_gamma(t: float, xi) -> np.ndarray:
    """``F Gamma(t)(xi) = exp(-t |xi|^2)``; same shape rules as :func:`gamma`."""
    if not t > 0:
        raise ValueError(f"heat kernel needs t > 0, got {t}")
    xi = np.asarray(xi, dtype=float)
    sq = xi**2 if xi.ndim <= 1 else np.sum(xi**2, axis=-1)
    return np.exp(-t * sq)


def _closed_form_available(m: SpectralMeasure) -> bool:
    return m.family in (Family.WHITE, Family.RIESZ)


def _check_dalang(m: SpectralMeasure):
    if m.family is Family.WHITE and m.dim >= 2:
        raise DalangDivergence(f"white noise in dimension {m.dim} violates Dalang's condition")
    if m.family is Family.BESSEL and not 2 * m.param + 2 > m.dim:
        raise DalangDivergence(dalang_integral(m).describe())


def _rate_prefactor(m: SpectralMeasure) -> tuple[float, float]:
    """``J(t) = A t^-a`` for the scale-free families; returns ``(A, a)``."""
    d = m.dim
    if m.family is Family.WHITE:
        return (2 * np.pi) ** -d * (np.pi / 2) ** (d / 2), d / 2
    eta = m.param
    # int_0^inf r^(eta-1) exp(-2 t r^2) dr = Gamma(eta/2) (2t)^(-eta/2) / 2
    return sphere_area(d) * m.constant * special.gamma(eta / 2) * 2 ** (-eta / 2) / 2, eta / 2


def j_rate(t: float, m: SpectralMeasure, method: str = "auto") -> float:
    """``J(t) = int exp(-2 t |xi|^2) mu(dxi)``.

    ``method`` is ``"auto"`` (closed form when known), ``"closed"`` or ``"quad"``.
    """
    if not t > 0:
        raise DalangDivergence("J(t) diverges at t = 0 unless mu is finite") if t == 0 else ValueError("t must be positive")
    if method == "closed" or (method == "auto" and _closed_form_available(m)):
        if not _closed_form_available(m):
            raise ValueError(f"no closed form for the {m.family.value} family")
        A, a = _rate_prefactor(m)
        return float(A * t**-a)
    return _j_rate_rescaled(t, m)


def _j_rate_rescaled(t: float, m: SpectralMeasure) -> float:
    # r = rho / sqrt(2t) puts the Gaussian factor at unit width for every t
    d, c = m.dim, np.sqrt(2 * t)
    area = sphere_area(d)
    f = lambda rho: area * rho ** (d - 1) * radial_density(m, rho / c) * np.exp(-rho * rho)
    kw = dict(epsabs=0.0, epsrel=1e-12, limit=200)
    if m.singular_at_origin:
        # rho^(d-1) g(rho / c) = const * c^(d-eta) * rho^(eta-1)
        k = area * m.constant * c ** (d - m.param)
        head = integrate.quad(lambda rho: k * np.exp(-rho * rho), 0.0, 1.0, weight="alg", wvar=(m.param - 1, 0.0), **kw)[0]
    else:
        # the density turns over at |xi| ~ 1/scale, i.e. rho ~ c/scale after rescaling
        knee = c / (m.param if m.family is Family.EXPONENTIAL else 1.0)
        pts = [p for p in (knee, 10 * knee) if p < 1.0]
        head = integrate.quad(f, 0.0, 1.0, points=pts or None, **kw)[0]
    tail = integrate.quad(f, 1.0, 8.0, **kw)[0]
    return float((head + tail) / c**d)


def phi(t: float, m: SpectralMeasure, method: str = "auto") -> float:
    """``Phi(t) = int_0^t J(s) ds``.

    The quadrature route swaps the two integrals, giving the single radial
    integral ``int (1 - exp(-2 t |xi|^2)) / (2 |xi|^2) mu(dxi)`` with no
    singularity in time.
    """
    if t < 0:
        raise ValueError(f"Phi needs t >= 0, got {t}")
    _check_dalang(m)
    if t == 0:
        return 0.0
    if method == "closed" or (method == "auto" and _closed_form_available(m)):
        if not _closed_form_available(m):
            raise ValueError(f"no closed form for the {m.family.value} family")
        A, a = _rate_prefactor(m)
        if a >= 1:
            raise DalangDivergence(f"Phi diverges: J(t) ~ t^-{a}")
        return float(A * t ** (1 - a) / (1 - a))

    def w(r):
        r = np.asarray(r, dtype=float)
        x = 2 * t * r * r
        with np.errstate(invalid="ignore", divide="ignore"):
            out = np.where(x > 0, -np.expm1(-x) / np.where(x > 0, x, 1.0), 1.0) * t
        return out

    return radial_integral(m, w)


def phi_by_time_quadrature(t: float, m: SpectralMeasure, levels: int = 12) -> float:
    """``Phi(t)`` as the time integral of ``J``; independent of :func:`phi`'s radial route.

    With ``s = u^4`` the integrand ``4 u^3 J(u^4)`` stays bounded whenever
    ``J(s) = O(s^-3/4)``; the ``u`` range is split dyadically toward 0.
    """
    _check_dalang(m)
    if t == 0:
        return 0.0
    f = lambda u: 4 * u**3 * j_rate(u**4, m, method="quad")
    total, hi = 0.0, t**0.25
    # deep levels evaluate J near s = 1e-16 where quad reports roundoff; each
    # level carries at most a 2^-k share of the total, so the warnings are moot
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for _ in range(levels):
            lo = hi / 2
            total += integrate.quad(f, lo, hi, epsabs=1e-15, epsrel=1e-11)[0]
            hi = lo
        # the Gauss-Kronrod rule never touches the endpoint u = 0
        return total + integrate.quad(f, 0.0, hi, epsabs=1e-15, epsrel=1e-10)[0]


@dataclass(frozen=True)
class PhiEvaluator:
    """Bundles a measure with the evaluation route for ``J`` and ``Phi``."""

    measure: SpectralMeasure
    method: str = "auto"

    @property
    def closed_form(self) -> str | None:
        m = self.measure
        if m.family is Family.WHITE and m.dim == 1:
            return "WhiteNoise1D"
        if m.family is Family.RIESZ:
            return "Riesz"
        return None

    def j_rate(self, t: float) -> float:
        return j_rate(t, self.measure, self.method)

    def phi(self, t: float) -> float:
        return phi(t, self.measure, self.method)

    def __call__(self, t):
        return np.vectorize(self.phi, otypes=[float])(t)


@dataclass(frozen=True)
class IncrementBound:
    lhs: float
    rhs: float

    @property
    def holds(self) -> bool:
        return self.rhs >= self.lhs


def phi_increment_lower(t: float, tau1: float, tau2: float, m: SpectralMeasure, T: float | None = None) -> IncrementBound:
    """Compare ``C (tau2 - tau1)`` with ``int_{tau1}^{tau2} J(t - s) ds`` using ``C = J(T)``."""
    T = t if T is None else T
    if not 0 <= tau1 < tau2 <= t <= T:
        raise ValueError("need 0 <= tau1 < tau2 <= t <= T")
    lhs = j_rate(T, m) * (tau2 - tau1)
    rhs = phi(t - tau1, m) - phi(t - tau2, m)
    return IncrementBound(float(lhs), float(rhs))


def grid_phi(steps, m: SpectralMeasure, grid: GridSpec, dt: float) -> np.ndarray:
    """Variance functional of the lattice scheme after ``steps`` time steps.

    ``Phi_h(j) = sum_k w_k sum_{i=1}^{j} dt exp(-2 |xi_k|^2 i dt)`` with ``w_k`` the
    lattice spectral weights. This is exactly ``Var u(j dt, x)`` for the
    exponential-Euler scheme with ``sigma = 1, b = 0`` and the lattice analogue of
    :func:`phi`.
    """
    steps = np.asarray(steps)
    fg = grid.frequencies()
    w = (grid_weights(m, grid) * fg.multiplicity).ravel()
    q = np.exp(-2 * fg.norm_sq.ravel() * dt)
    j = steps[..., None].astype(float)
    with np.errstate(invalid="ignore", divide="ignore"):
        geo = np.where(q < 1, q * (1 - q**j) / np.where(q < 1, 1 - q, 1.0), j)
    return dt * np.sum(w * geo, axis=-1)
