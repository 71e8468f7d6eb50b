import json

import numpy as np
import pytest
from hypothesis import given, strategies as st

from shen import COEFFICIENT_PRESETS, PRESETS, ConfigError, ExperimentConfig, GridSpec, SpectralMeasure
from shen import emit_config, parse_config, preset
from shen.config import config_hash

BASE = {"grid": {"n": 64, "L": 8.0, "dim": 1}, "noise": {"family": "white"}, "dt": 0.002, "T": 0.2}

measures = st.sampled_from([
    SpectralMeasure.white(1), SpectralMeasure.riesz(0.5, 1), SpectralMeasure.exponential(1.5, 1),
    SpectralMeasure.bessel(1.0, 1),
])
u0s = st.one_of(
    st.builds(lambda v: {"kind": "constant", "value": v}, st.floats(-5, 5)),
    st.builds(lambda a, k: {"kind": "sine", "amplitude": a, "mode": k}, st.floats(-2, 2), st.integers(1, 4)),
    st.builds(lambda s: {"kind": "delta", "site": [s]}, st.integers(0, 63)),
    st.builds(lambda a, w: {"kind": "bump", "amplitude": a, "width": w}, st.floats(-1, 1), st.floats(0.2, 3)),
)
coeffs = st.one_of(
    st.sampled_from(sorted(COEFFICIENT_PRESETS)),
    st.builds(lambda a, c, b, g: {"a": a, "c": c, "beta": b, "gamma": g}, *[st.floats(-2, 2)] * 4),
)


@given(measures, u0s, coeffs, st.integers(1, 50), st.integers(0, 2**64 - 1), st.integers(1, 10**6), st.integers(0, 63))
def test_round_trip(m, u0, co, steps, seed, paths, site):
    cfg = ExperimentConfig(GridSpec(64, 8.0, 1), m, co, u0, 0.002, steps * 0.002, (site,), paths, seed, "out")
    cfg = parse_config(emit_config(cfg))  # normalizes T to the parsed float
    assert parse_config(emit_config(cfg)) == cfg
    assert config_hash(parse_config(emit_config(cfg))) == config_hash(cfg)


def test_defaults_are_filled():
    cfg = parse_config(json.dumps(BASE))
    assert cfg.x_obs == (32,) and cfg.coefficients == "linear" and cfg.seed == 0
    assert cfg.steps == 100
    assert json.loads(emit_config(cfg))["x_obs"] == [32]


def test_every_problem_is_listed():
    bad = {"grid": {"n": 48, "L": -1, "typo": 1}, "noise": {"family": "riesz", "eta": 3.0}, "dt": -0.1,
           "coefficients": "nope", "u0": {"kind": "spline"}, "seed": -4, "extra": True}
    with pytest.raises(ConfigError) as err:
        parse_config(json.dumps(bad))
    text = "\n".join(err.value.problems)
    for needle in ("unknown key 'extra'", "unknown key 'typo'", "power of two", "grid.L", "eta", "dt",
                   "unknown preset", "u0", "seed"):
        assert needle in text
    assert len(err.value.problems) >= 9


def test_dalang_divergence_rejected_with_diagnostics():
    cfg = dict(BASE, grid={"n": 32, "L": 8.0, "dim": 2}, noise={"family": "white"})
    with pytest.raises(ConfigError, match="Dalang.*diverges"):
        parse_config(json.dumps(cfg))


def test_stability_guard():
    with pytest.raises(ConfigError, match="h\\^2/4"):
        parse_config(json.dumps(dict(BASE, dt=0.01, T=0.2)))


@pytest.mark.parametrize("patch", [
    {"T": 0.2005}, {"x_obs": [64]}, {"x_obs": [1, 2]}, {"paths": 0}, {"paths": 1.5}, {"u0": {"kind": "file"}},
    {"noise": {"family": "white", "dim": 2}}, {"coefficients": {"a": 1, "sigma": 2}}, {"dt": "0.1"},
])
def test_invalid_fields(patch):
    with pytest.raises(ConfigError):
        parse_config(json.dumps({**BASE, **patch}))


def test_invalid_json():
    with pytest.raises(ConfigError, match="JSON"):
        parse_config("{")
    with pytest.raises(ConfigError):
        parse_config("[1, 2]")


@pytest.mark.parametrize("suffix", [".npy", ".txt"])
def test_initial_field_from_file(tmp_path, suffix):
    data = np.linspace(0, 1, 64)
    f = tmp_path / f"u0{suffix}"
    np.save(f, data) if suffix == ".npy" else np.savetxt(f, data)
    cfg = parse_config(json.dumps(dict(BASE, u0={"kind": "file", "path": f.name})))
    assert np.allclose(cfg.solver_config(tmp_path).u0, data)


def test_initial_field_kinds():
    g = GridSpec(64, 8.0, 1)
    cfg = parse_config(json.dumps(dict(BASE, u0={"kind": "delta", "site": [3]})))
    assert g.integrate(cfg.initial_field()) == pytest.approx(1.0)
    cfg = parse_config(json.dumps(dict(BASE, u0={"kind": "sine", "amplitude": 2.0, "mode": 1})))
    assert cfg.initial_field()[16] == pytest.approx(2.0)


def test_presets():
    assert len(PRESETS) == 9
    lin = PRESETS["linear-white"].coeffs
    assert lin.sigma(0.7) == 1.0 and lin.b(0.7) == 0.0
    sd = PRESETS["sine-diffusion-riesz"]
    assert sd.measure == SpectralMeasure.riesz(0.5, 1)
    assert sd.coeffs.sigma(np.pi / 2) == pytest.approx(1.5) and sd.coeffs.b(1.0) == 0.0
    dr = PRESETS["drift-white"].coeffs
    assert dr.b(0.0) == pytest.approx(0.3) and dr.sigma(0.0) == 1.0
    for cfg in PRESETS.values():
        assert parse_config(emit_config(cfg)) == cfg
        assert cfg.dt <= cfg.grid.h**2 / 4
    assert preset("drift", "white", seed=5).seed == 5
