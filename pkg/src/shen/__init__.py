"""Numerical companion for densities of the stochastic heat equation with colored noise.

Spectral noise measures and the variance functional ``Phi``, a pseudo-spectral
exponential-Euler solver on the periodic lattice, Malliavin derivatives,
Taylor-term decompositions of the martingale increments, and Monte Carlo
density envelopes.
"""

__version__ = "0.1.0"

from .grid import GridSpec
from .spectral import Family, SpectralMeasure, dalang_integral, grid_weights, h_norm_sq
from .kernel import DalangDivergence, PhiEvaluator, gamma, fourier_gamma, grid_phi, j_rate, phi, phi_increment_lower
from .noise import NoisePath, make_path, sample_increment
from .solver import (
    COEFFICIENT_PRESETS,
    Coefficients,
    InstabilityError,
    SolverConfig,
    f0,
    fn_sequence,
    run_ensemble,
    simulate_fn_sequence,
    solve_path,
)
from .malliavin import derivative_at_obs, ht_norm_sq, lemma4_scaling, negative_moment_probe, propagate_derivative
from .taylor import TermKind, compute_terms, scaling_experiment
from .density import envelope_check, gaussian_case_check, kde, martingale_bounds
from .config import PRESETS, ConfigError, ExperimentConfig, emit_config, parse_config, preset

__all__ = [name for name in dir() if not name.startswith("_")]
