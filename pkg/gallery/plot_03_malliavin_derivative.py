"""
Malliavin derivative of a single path
=====================================

The derivative ``D_{r,z} u(t, x)`` is propagated through the linearised scheme.
For linear coefficients it no longer depends on the path, and its squared norm
over ``[0, t]`` equals the variance functional exactly.
"""

import numpy as np

from shen import PRESETS, grid_phi, ht_norm_sq, phi, propagate_derivative, solve_path

cfg = PRESETS["linear-white"].solver_config()
D = propagate_derivative(solve_path(cfg, seed=0, path_index=0))
norm = float(ht_norm_sq(D))
print(f"||D u||^2 = {norm:.6f}   Phi_h = {float(grid_phi(cfg.steps, cfg.measure, cfg.grid, cfg.dt)):.6f}"
      f"   Phi = {phi(cfg.T, cfg.measure):.6f}")

###############################################################################
# For state-dependent diffusion the norm restricted to a final window
# ``[t - delta, t]`` fluctuates from path to path but scales like
# ``Phi(delta)``, bounded above and below by ``sigma``.
cfg = PRESETS["sine-diffusion-white"].solver_config()
D = propagate_derivative(solve_path(cfg, seed=0, path_index=3))
N = cfg.steps
for width in (10, 20, 40, 80):
    window = float(ht_norm_sq(D, cfg, window=(N - width, N)))
    scale = float(grid_phi(width, cfg.measure, cfg.grid, cfg.dt))
    print(f"width {width:3d}  window norm / Phi_h(delta) = {window / scale:.3f}"
          f"   bracket [{cfg.coeffs.sigma_lower**2:.2f}, {cfg.coeffs.sigma_sup**2:.2f}]")

###############################################################################
# Negative moments of the window norm stay finite: the small-ball probabilities
# fall off quickly as the level halves.
from shen import negative_moment_probe

probe = negative_moment_probe(cfg, (N - 40, N), p=1, paths=1000, seed=0)
print("levels       ", np.round(probe.levels, 5))
print("probabilities", np.round(probe.probabilities, 4))
print(f"E[X^-1] = {probe.estimate:.3f}, on half the paths {probe.estimate_half:.3f}")
