import numpy as np
import pytest

from shen import SpectralMeasure, derivative_at_obs, grid_phi, ht_norm_sq, lemma4_scaling, negative_moment_probe
from shen import propagate_derivative, solve_path
from shen.malliavin import DegenerateCoefficients
from shen.solver import Coefficients, step

from conftest import small_config


def final_obs(cfg, increments):
    u = cfg.u0.copy()
    for dW in increments:
        u = step(u, dW, cfg)
    return u[cfg.x_obs]


@pytest.mark.parametrize("coeffs", ["sine-diffusion", "drift"])
@pytest.mark.parametrize("r, z", [(0, 16), (17, 14), (39, 16), (25, 3)])
def test_derivative_matches_finite_difference(coeffs, r, z):
    cfg = small_config(coeffs, SpectralMeasure.riesz(0.5, 1))
    path = solve_path(cfg, 5, 2)
    D = propagate_derivative(path).at_obs()
    eps = 1e-6
    inc = path.increments.copy()
    inc[r, z] += eps
    up = final_obs(cfg, inc)
    inc[r, z] -= 2 * eps
    down = final_obs(cfg, inc)
    # D carries the unit-mass delta, so one lattice site weighs 1/h
    fd = (up - down) / (2 * eps) / cfg.grid.h
    assert D[r, z] == pytest.approx(fd, rel=1e-6, abs=1e-9)


def test_forward_and_adjoint_routes_agree():
    cfg = small_config("drift", SpectralMeasure.exponential(1.0, 1))
    path = solve_path(cfg, 1, 0)
    fwd = propagate_derivative(path).at_obs()
    adj = derivative_at_obs(cfg, path.states, path.increments, end=cfg.steps)
    assert np.allclose(fwd, adj, rtol=0, atol=1e-12 * np.abs(fwd).max())


def test_adjoint_batches_and_windows():
    cfg = small_config("drift")
    paths = [solve_path(cfg, 3, i) for i in range(3)]
    states = np.stack([p.states for p in paths])
    incs = np.stack([p.increments for p in paths])
    full = derivative_at_obs(cfg, states, incs, end=cfg.steps)
    for i, p in enumerate(paths):
        assert np.allclose(full[i], derivative_at_obs(cfg, p.states, p.increments, end=cfg.steps))
    # sources inside [a, end) do not depend on what happened before a
    part = derivative_at_obs(cfg, states[:, 20:], incs[:, 20:], end=20)
    assert np.allclose(part, full[:, 20:])


def test_source_after_observation_is_zero():
    cfg = small_config("drift")
    D = propagate_derivative(solve_path(cfg, 0, 0), obs_step=20)
    assert np.all(D.source(25) == 0)
    assert D.values.shape[0] == 20


@pytest.mark.parametrize("m", [SpectralMeasure.white(1), SpectralMeasure.riesz(0.5, 1)])
def test_linear_norm_equals_lattice_variance(m):
    cfg = small_config("linear", m)
    D = propagate_derivative(solve_path(cfg, 0, 0))
    N = cfg.steps
    assert ht_norm_sq(D) == pytest.approx(grid_phi(N, m, cfg.grid, cfg.dt), rel=1e-12)
    assert ht_norm_sq(D, window=(N - 10, N)) == pytest.approx(grid_phi(10, m, cfg.grid, cfg.dt), rel=1e-12)
    assert ht_norm_sq(D, window=(5, 5)) == 0.0


def test_window_scaling_linear_is_exact():
    cfg = small_config("linear")
    rep = lemma4_scaling(cfg, cfg.steps, [2, 4, 8, 16, 32], paths=16, seed=0, threads=1)
    assert np.allclose(rep.estimate, rep.scale, rtol=1e-12)
    assert rep.slope == pytest.approx(1.0, abs=1e-12)
    assert max(rep.stderr) < 1e-12


def test_window_scaling_squared_norm():
    cfg = small_config("sine-diffusion")
    rep = lemma4_scaling(cfg, cfg.steps, [2, 4, 8, 16, 32], p=2, paths=64, seed=0, threads=1)
    assert rep.expected_slope == 2.0
    assert np.all(np.array(rep.estimate) > 0)


def test_linear_negative_moment_is_one():
    cfg = small_config("linear")
    probe = negative_moment_probe(cfg, (20, 40), paths=32, seed=0, threads=1)
    assert np.allclose(probe.samples, 1.0, rtol=1e-10)
    assert probe.estimate == pytest.approx(1.0)


def test_probe_shapes_and_errors():
    cfg = small_config("drift")
    probe = negative_moment_probe(cfg, (25, 40), paths=256, seed=0, threads=1)
    assert probe.samples.size == 256 and np.all(probe.samples > 0)
    assert list(probe.probabilities) == sorted(probe.probabilities, reverse=True)
    assert np.isclose(np.median(probe.samples) * 0.5, probe.levels[0])
    assert probe.probabilities[0] < 0.5
    with pytest.raises(ValueError):
        negative_moment_probe(cfg, (30, 20), paths=8)
    degenerate = cfg.with_(coeffs=Coefficients.trig(0.0, 1.0))
    with pytest.raises(DegenerateCoefficients):
        negative_moment_probe(degenerate, (20, 40), paths=8)


def test_tensor_size_guard():
    cfg = small_config("linear", steps=300, dt=0.001)
    with pytest.raises(ValueError):
        propagate_derivative(solve_path(cfg, 0, 0))
