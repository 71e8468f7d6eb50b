"""
The variance functional for three noise families
================================================

Every estimate in the package is measured against ``Phi(t)``, the integral over
``[0, t]`` of ``J(s) = int exp(-2 s |xi|^2) mu(dxi)``. Here it is evaluated for
white, Riesz and exponential-covariance noise, first by closed form and then by
two quadratures that share no code with it.
"""

import numpy as np

from shen import GridSpec, SpectralMeasure, dalang_integral, grid_phi, phi
from shen.kernel import phi_by_time_quadrature

measures = {
    "white": SpectralMeasure.white(1),
    "riesz(0.5)": SpectralMeasure.riesz(0.5, 1),
    "exponential(1)": SpectralMeasure.exponential(1.0, 1),
}

# A measure is admissible only if int mu(dxi) / (1 + |xi|^2) converges.
for name, m in measures.items():
    print(f"{name:15s} {dalang_integral(m).describe()}")

###############################################################################
# White noise has ``Phi(t) = sqrt(t / 2 pi)``. The radial and the time
# quadratures should both agree with it to quadrature accuracy.
for t in (0.1, 0.5, 1.0):
    m = measures["white"]
    print(f"t={t:4.1f}  closed {np.sqrt(t / (2 * np.pi)):.10f}  radial {phi(t, m, method='quad'):.10f}"
          f"  time {phi_by_time_quadrature(t, m):.10f}")

###############################################################################
# Short-time behaviour decides every scaling exponent downstream: ``Phi`` grows
# like ``t^(1/2)`` for white noise and like ``t^(1 - eta/2)`` for Riesz noise,
# while a finite measure gives ``Phi ~ mu(R) t``.
t = np.array([1e-3, 1e-2, 1e-1])
for name, m in measures.items():
    values = np.array([phi(s, m) for s in t])
    slopes = np.diff(np.log(values)) / np.diff(np.log(t))
    print(f"{name:15s} local log-log slopes {np.round(slopes, 3)}")

###############################################################################
# On a periodic lattice the scheme sees ``Phi_h``, a finite sum over Fourier
# modes. It approaches ``Phi`` at first order in the mesh width.
m = measures["white"]
for n in (64, 128, 256):
    grid = GridSpec(n, 16.0, 1)
    dt = grid.h**2 / 4
    steps = int(round(0.5 / dt))
    print(f"n={n:4d}  Phi_h(0.5) / Phi(0.5) = {grid_phi(steps, m, grid, dt) / phi(steps * dt, m):.4f}")
