import numpy as np
import pytest
from hypothesis import given, strategies as st

from shen.scaling import build_report, loglog_fit


@given(st.floats(-3, 3), st.floats(0.01, 100))
def test_exact_power_law(slope, prefactor):
    x = np.geomspace(0.01, 1, 6)
    fit = loglog_fit(x, prefactor * x**slope)
    assert fit.slope == pytest.approx(slope, abs=1e-9)
    assert fit.intercept == pytest.approx(np.log(prefactor), abs=1e-9)


def test_interval_covers_truth_at_nominal_rate():
    rng = np.random.default_rng(0)
    x = np.geomspace(0.01, 1, 5)
    hits = 0
    for _ in range(2000):
        fit = loglog_fit(x, x**1.5 * np.exp(0.1 * rng.standard_normal(5)))
        hits += fit.ci_low <= 1.5 <= fit.ci_high
    assert hits / 2000 == pytest.approx(0.95, abs=0.015)


def test_bad_input():
    with pytest.raises(ValueError):
        loglog_fit([1, 2], [1, 2])
    with pytest.raises(ValueError):
        loglog_fit([1, 2, 3], [1, 0, 2])


def test_report_pass_flag_and_continuum_slope():
    w = [5, 10, 20, 40, 80]
    scale = np.array(w) * 0.01
    cont = scale**0.5
    rep = build_report("t", w, scale, cont, scale**1.1, [0] * 5, expected=1.0, tol=0.15)
    assert rep.passed and rep.slope == pytest.approx(1.1)
    assert rep.slope_continuum == pytest.approx(2.2)
    assert not build_report("t", w, scale, cont, scale**1.2, [0] * 5, 1.0, 0.15).passed
    assert rep.to_dict()["pass"] and len(rep.rows()) == 5
