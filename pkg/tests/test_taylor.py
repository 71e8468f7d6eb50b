import numpy as np
import pytest
from hypothesis import given, strategies as st

from shen import SpectralMeasure, TermKind, compute_terms, grid_phi, phi, scaling_experiment, solve_path
from shen.solver import Trig, run_ensemble, fn_sequence
from shen.taylor import PartitionPlan, decomposition_residual, divided_difference, ensemble_terms

from conftest import small_config

finite = st.floats(-20, 20, allow_nan=False)


@given(finite, finite, st.sampled_from([Trig(1.0, 0.5, "sin"), Trig(0.0, 0.3, "cos")]))
def test_divided_difference_is_mean_derivative(u, v, f):
    # int_0^1 f'(l u + (1 - l) v) dl by Gauss-Legendre
    x, w = np.polynomial.legendre.leggauss(40)
    lam = (x + 1) / 2
    mean = np.sum(w / 2 * f.derivative()(lam * u + (1 - lam) * v))
    assert float(divided_difference(f, np.array(u), np.array(v))) == pytest.approx(mean, abs=1e-9)


def test_divided_difference_switches_to_derivative():
    f = Trig(0.0, 1.0, "sin")
    v = np.array([0.3, 1.0])
    assert np.allclose(divided_difference(f, v + 1e-14, v), np.cos(v))


@pytest.mark.parametrize("coeffs", ["linear", "sine-diffusion", "drift"])
def test_decomposition_identity_per_path(coeffs):
    cfg = small_config(coeffs, SpectralMeasure.riesz(0.5, 1))
    plan = PartitionPlan(cfg, (0, 7, 19, 33, 40))
    path = solve_path(cfg, 2, 5)
    F = fn_sequence(run_ensemble(cfg, 6, 2, threads=1), plan.points)[5]
    for n in range(1, plan.intervals + 1):
        terms = compute_terms(path, plan, n)
        assert decomposition_residual(F[n - 1], F[n], terms) < 1e-12


def test_ensemble_matches_single_path_terms():
    cfg = small_config("drift")
    ens = ensemble_terms(cfg, [(30, 40), (10, 40)], 5, 1, threads=1)
    plan = PartitionPlan(cfg, (0, 30, 40))
    terms = compute_terms(solve_path(cfg, 1, 3), plan, 2)
    assert np.allclose([t.value for t in terms], ens.terms[0, :, 3], atol=1e-13)
    assert ens.residuals().max() < 1e-12


def test_linear_case_has_only_the_gaussian_term():
    cfg = small_config("linear")
    ens = ensemble_terms(cfg, [(20, 40)], 2048, 4, threads=1)
    for kind in (TermKind.J2, TermKind.R1_STOCH, TermKind.R1_DRIFT, TermKind.R2_DRIFT):
        assert np.all(ens.values(0, kind) == 0)
    j1 = ens.values(0, TermKind.J1)
    assert np.allclose(j1, ens.F[0, :, 1] - ens.F[0, :, 0], atol=1e-13)
    target = PartitionPlan(cfg, (0, 20, 40)).delta_g_grid(2)
    assert abs(j1.var() - target) < 4 * target * np.sqrt(2 / j1.size)


def test_drift_free_terms_vanish():
    cfg = small_config("sine-diffusion")
    ens = ensemble_terms(cfg, [(25, 40)], 8, 0, threads=1)
    assert np.all(ens.values(0, TermKind.J2) == 0)
    assert np.all(ens.values(0, TermKind.R2_DRIFT) == 0)
    assert np.any(ens.values(0, TermKind.R1_STOCH) != 0)


def test_partition_plan():
    cfg = small_config()
    plan = PartitionPlan.final_interval(cfg, 8)
    assert plan.points == (0, 32, 40) and plan.interval(2) == (32, 40)
    assert plan.delta_g(2) == pytest.approx(phi(8 * cfg.dt, cfg.measure))
    assert plan.delta_g_grid(2) == pytest.approx(grid_phi(8, cfg.measure, cfg.grid, cfg.dt))
    assert PartitionPlan.final_interval(cfg, 40).points == (0, 40)
    for bad in [(1, 5), (0, 5, 5), (0, 50)]:
        with pytest.raises(ValueError):
            PartitionPlan(cfg, bad)
    with pytest.raises(IndexError):
        plan.interval(3)


def test_scaling_experiment_reports_every_kind():
    cfg = small_config("drift")
    rep, ens = scaling_experiment(cfg, [2, 4, 8, 16, 32], "j1", paths=128, seed=0, threads=1, kinds=["j2", "r1", "r2"])
    assert set(ens.reports) == {TermKind.J1, TermKind.J2, TermKind.R1_STOCH, TermKind.R2_DRIFT}
    assert rep.expected_slope == 0.5 and rep.tolerance == 0.1
    assert ens.terms.shape == (5, 5, 128)
    with pytest.raises(ValueError):
        scaling_experiment(cfg, [2, 4, 8], "j1", paths=8)
