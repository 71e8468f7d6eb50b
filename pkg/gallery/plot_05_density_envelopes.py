"""
Gaussian envelopes around a simulated density
=============================================

The density of ``u(t, x)`` is estimated by a kernel density estimate and
sandwiched between two Gaussian curves in the normalised variable
``z = (y - F0) / sqrt(Phi(t))``. The constants are fitted by linear programs.
"""

from shen import PRESETS, envelope_check, kde, phi, run_ensemble
from shen.solver import f0

cfg = PRESETS["sine-diffusion-white"].solver_config()
samples = run_ensemble(cfg, 20000, seed=0).final()
estimate = kde(samples)
lo, hi = estimate.reliable_range
print(f"bandwidth {estimate.bandwidth:.4f}, reliable range [{lo:.3f}, {hi:.3f}], mass {estimate.integral():.4f}")

###############################################################################
# Lower envelope ``C1 exp(-z^2/C2)`` and upper envelope
# ``c1 exp(-(|z| - c3 t / sqrt Phi)_+^2 / c2)``.
c = cfg.coeffs
report = envelope_check(samples, f0(cfg), phi(cfg.T, cfg.measure), cfg.T, c.b_sup, c.sigma_lower, kde_result=estimate)
f = report.fit
print(f"C1 {f.C1:.3f}  C2 {f.C2:.3f}  c1 {f.c1:.3f}  c2 {f.c2:.3f}  c3 {f.c3:.3f}")
print(f"tail curvature {report.tail_curvature:.3f}, envelope check passed: {report.passed}")
