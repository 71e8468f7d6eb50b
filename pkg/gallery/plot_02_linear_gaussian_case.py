"""
Additive noise: a Gaussian check on the solver
==============================================

With ``sigma = 1`` and ``b = 0`` the solution at a point is Gaussian with
variance equal to the lattice variance functional. That makes the linear case
a clean end-to-end test of the noise generator and the time stepper.
"""

import numpy as np

from shen import GridSpec, SpectralMeasure, grid_phi, run_ensemble
from shen.config import ExperimentConfig
from shen.density import gaussian_case_check
from shen.solver import f0

grid = GridSpec(64, 16.0, 1)
noise = SpectralMeasure.white(1)
cfg = ExperimentConfig(grid, noise, "linear", {"kind": "constant", "value": 0.0},
                       dt=0.01, T=0.5, x_obs=grid.center(), paths=8192, seed=11).solver_config()

samples = run_ensemble(cfg, 8192, seed=11).final()
lattice = float(grid_phi(cfg.steps, noise, grid, cfg.dt))
print(f"sample mean {samples.mean():+.4f}   sample variance {samples.var(ddof=1):.4f}   Phi_h {lattice:.4f}")

###############################################################################
# Kolmogorov-Smirnov against the exact lattice law. The threshold ``1.63/sqrt(M)``
# is the 1% critical value.
check = gaussian_case_check(samples, f0(cfg), lattice)
print(f"KS statistic {check.ks_statistic:.4f}  threshold {check.threshold:.4f}  passed {check.passed}")

###############################################################################
# Paths are addressed by ``(seed, path index)``, so any one of them can be
# replayed alone and matches its ensemble value.
from shen import solve_path

single = solve_path(cfg, 11, 4321)
print(f"replayed path 4321: {single.u_obs[-1]:+.6f}  ensemble: {samples[4321]:+.6f}")
assert np.isclose(single.u_obs[-1], samples[4321], atol=1e-12)
