"""Log-log regression of Monte Carlo moments against a scale variable."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class LogLogFit:
    slope: float
    intercept: float
    stderr: float
    ci_low: float
    ci_high: float


def loglog_fit(x, y, level: float = 0.95) -> LogLogFit:
    """Least-squares line through ``(log x, log y)`` with a t-based interval on the slope."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size < 3:
        raise ValueError("need at least three points for a slope with an interval")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("log-log fit needs positive data")
    r = stats.linregress(np.log(x), np.log(y))
    q = stats.t.ppf(0.5 + level / 2, x.size - 2)
    return LogLogFit(float(r.slope), float(r.intercept), float(r.stderr),
                     float(r.slope - q * r.stderr), float(r.slope + q * r.stderr))


@dataclass(frozen=True)
class ScalingReport:
    """Moments ``estimate`` at scales ``scale`` and their fitted log-log slope.

    ``scale`` is the lattice variance functional of each window, the exact
    discrete counterpart of ``Phi``; ``scale_continuum`` holds the continuum
    values and ``slope_continuum`` the slope against them.
    """

    label: str
    widths: tuple
    scale: tuple
    scale_continuum: tuple
    estimate: tuple
    stderr: tuple
    fit: LogLogFit
    slope_continuum: float
    expected_slope: float
    tolerance: float

    @property
    def slope(self) -> float:
        return self.fit.slope

    @property
    def passed(self) -> bool:
        return abs(self.fit.slope - self.expected_slope) <= self.tolerance

    def summary(self) -> dict:
        return {
            "label": self.label,
            "slope": self.fit.slope,
            "ci_low": self.fit.ci_low,
            "ci_high": self.fit.ci_high,
            "slope_continuum": self.slope_continuum,
            "expected_slope": self.expected_slope,
            "tolerance": self.tolerance,
            "pass": self.passed,
        }

    def rows(self) -> list[dict]:
        return [
            {"width": w, "scale": s, "scale_continuum": sc, "moment_estimate": e, "stderr": se}
            for w, s, sc, e, se in zip(self.widths, self.scale, self.scale_continuum, self.estimate, self.stderr)
        ]

    def to_dict(self) -> dict:
        out = asdict(self)
        out["fit"] = asdict(self.fit)
        out["pass"] = self.passed
        return out


def build_report(label, widths, scale, scale_continuum, estimate, stderr, expected, tol) -> ScalingReport:
    fit = loglog_fit(scale, estimate)
    cont = loglog_fit(scale_continuum, estimate).slope
    tup = lambda a: tuple(float(v) for v in np.asarray(a, float))
    return ScalingReport(label, tuple(widths), tup(scale), tup(scale_continuum), tup(estimate), tup(stderr),
                         fit, float(cont), float(expected), float(tol))
