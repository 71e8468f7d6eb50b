import numpy as np
import pytest
from hypothesis import given, strategies as st

from shen import GridSpec, SpectralMeasure, make_path, sample_increment
from shen.noise import PATH_BLOCK, block_increments, dump_increment, load_increment
from shen.spectral import grid_weights, radial_density

G1 = GridSpec(32, 8.0, 1)


def covariance_from_spectrum(m, g, dt, lag):
    """dt * sum over the full spectrum of w_k exp(i xi_k lag h)."""
    xi = np.fft.fftfreq(g.n, g.h) * 2 * np.pi
    w = np.concatenate([grid_weights(m, g), grid_weights(m, g)[1 : g.n // 2][::-1]])
    return dt * np.sum(w * np.cos(xi * lag * g.h))


@given(st.integers(0, 2**63), st.integers(0, 3 * PATH_BLOCK), st.integers(0, 9))
def test_path_replays_block_row(seed, index, step):
    m = SpectralMeasure.riesz(0.5, 1)
    path = make_path(G1, m, 0.01, 10, seed, index)
    block = block_increments(G1, m, 0.01, seed, index // PATH_BLOCK, step)
    assert np.array_equal(path.increment(step), block[index % PATH_BLOCK])


def test_random_access_matches_sequential():
    path = make_path(G1, SpectralMeasure.white(1), 0.01, 8, 7, 3)
    seq = path.increments()
    assert np.array_equal(path[5], seq[5])
    assert np.array_equal(path[0], seq[0])


def test_seeds_and_paths_differ():
    m = SpectralMeasure.white(1)
    a = make_path(G1, m, 0.01, 2, 1, 0)[0]
    assert not np.array_equal(a, make_path(G1, m, 0.01, 2, 2, 0)[0])
    assert not np.array_equal(a, make_path(G1, m, 0.01, 2, 1, 1)[0])
    assert not np.array_equal(a, make_path(G1, m, 0.01, 2, 1, 0)[1])


@pytest.mark.parametrize("m, g", [
    (SpectralMeasure.white(1), G1),
    (SpectralMeasure.riesz(0.5, 1), G1),
    (SpectralMeasure.exponential(1.0, 1), G1),
    (SpectralMeasure.riesz(1.0, 2), GridSpec(16, 6.0, 2)),
])
def test_increment_covariance_matches_spectrum(m, g):
    dt, M = 0.01, 20000
    x = sample_increment(g, m, dt, np.random.default_rng(5), size=M).reshape(M, -1)
    for lag in (0, 1, 3):
        prod = x[:, 0] * x[:, lag]
        if g.dim == 1:
            expected = covariance_from_spectrum(m, g, dt, lag)
        else:
            xi = np.fft.fftfreq(g.n, g.h) * 2 * np.pi
            kx, ky = np.meshgrid(xi, xi, indexing="ij")
            r = np.hypot(kx, ky)
            with np.errstate(divide="ignore"):
                w = radial_density(m, r) * (2 * np.pi / g.L) ** 2
            w[0, 0] = grid_weights(m, g)[0, 0]
            expected = dt * np.sum(w * np.cos(kx * lag * g.h))
        se = prod.std() / np.sqrt(M)
        assert abs(prod.mean() - expected) < 5 * se


def test_white_variance_is_dt_over_h():
    dt = 0.004
    x = sample_increment(G1, SpectralMeasure.white(1), dt, np.random.default_rng(0), size=40000)
    assert x.var() == pytest.approx(dt / G1.h, rel=0.02)
    assert covariance_from_spectrum(SpectralMeasure.white(1), G1, dt, 0) == pytest.approx(dt / G1.h, rel=1e-12)


def test_dump_load_round_trip(tmp_path):
    path = make_path(G1, SpectralMeasure.white(1), 0.01, 3, 11, 4)
    field = path[2]
    f = dump_increment(tmp_path / "inc.bin", field, G1, 0.01, 2)
    grid, dt, step, data = load_increment(f)
    assert (grid, dt, step) == (G1, 0.01, 2)
    assert np.array_equal(data, field)
    f.write_bytes(b"XXXXX" + f.read_bytes()[5:])
    with pytest.raises(ValueError):
        load_increment(f)


def test_bad_arguments():
    m = SpectralMeasure.white(1)
    with pytest.raises(ValueError):
        make_path(G1, m, 0.01, 3, -1, 0)
    with pytest.raises(ValueError):
        make_path(G1, m, 0.01, 3, 2**64, 0)
    with pytest.raises(ValueError):
        make_path(G1, m, 0.01, 0, 1, 0)
    with pytest.raises(IndexError):
        make_path(G1, m, 0.01, 3, 1, 0)[3]
