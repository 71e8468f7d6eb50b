"""
Splitting a martingale increment into Taylor terms
==================================================

Over a partition ``t_0 < ... < t_N`` the increment ``F_n - F_{n-1}`` of
``F_n = E[u(t, x) | F_{t_n}]`` splits into a leading Gaussian term ``J1``,
a second-order term ``J2`` and two remainders. The identity holds path by path
to rounding error, and each term has its own size in the window width.
"""

import numpy as np

from shen import PRESETS, TermKind
from shen.taylor import ensemble_terms, scaling_experiment

cfg = PRESETS["drift-riesz"].solver_config()
intervals = [(0, 100), (100, 200), (200, 240), (240, 250)]
ens = ensemble_terms(cfg, intervals, paths=256, seed=0)
print(f"largest identity residual over 256 paths: {ens.residuals().max():.2e}")

for n, (a, b) in enumerate(intervals):
    sizes = {k.value: np.sqrt(np.mean(ens.values(n, k) ** 2)) for k in TermKind}
    print(f"[{a:3d}, {b:3d})  " + "  ".join(f"{k} {v:.2e}" for k, v in sizes.items()))

###############################################################################
# On final windows the second moments scale like powers of ``Phi(delta)``:
# ``J1`` like the square root, ``J2`` and ``R1`` linearly. Smooth noise with a
# bounded drift keeps the lattice in the regime where these show up clearly.
from shen import preset

cfg = preset("drift", "exponential").solver_config()
report, ens = scaling_experiment(cfg, [5, 10, 20, 40, 80], "j1", p=2, paths=2000, seed=0, kinds=["j2", "r1"])
for kind, rep in ens.reports.items():
    print(f"{kind.value:9s} slope {rep.slope:.3f}  (expected {rep.expected_slope} +- {rep.tolerance})")
