"""Experiment configuration: JSON parsing, validation, presets."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .grid import GridSpec
from .solver import COEFFICIENT_PRESETS, Coefficients, SolverConfig
from .spectral import Family, SpectralMeasure, dalang_integral

U0_KINDS = {
    "constant": {"value"},
    "sine": {"amplitude", "mode"},
    "delta": {"site"},
    "bump": {"amplitude", "width"},
    "file": {"path"},
}
TOP_KEYS = {"grid", "noise", "coefficients", "u0", "dt", "T", "x_obs", "paths", "seed", "output"}
TRIG_KEYS = {"a", "c", "beta", "gamma"}
NOISE_PARAM = {"white": set(), "riesz": {"eta"}, "bessel": {"order"}, "exponential": {"scale"}}


class ConfigError(ValueError):
    """Every problem found in a configuration, not just the first."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


@dataclass(frozen=True)
class ExperimentConfig:
    grid: GridSpec
    measure: SpectralMeasure
    coefficients: str | dict = "linear"
    u0: dict = field(default_factory=lambda: {"kind": "constant", "value": 0.0})
    dt: float = 0.002
    T: float = 0.5
    x_obs: tuple[int, ...] | None = None
    paths: int = 1000
    seed: int = 0
    output: str = "shen-out"

    @property
    def steps(self) -> int:
        return int(round(self.T / self.dt))

    @property
    def site(self) -> tuple[int, ...]:
        return self.grid.center() if self.x_obs is None else tuple(self.x_obs)

    @property
    def coeffs(self) -> Coefficients:
        if isinstance(self.coefficients, str):
            return COEFFICIENT_PRESETS[self.coefficients]
        c = self.coefficients
        return Coefficients.trig(c.get("a", 1.0), c.get("c", 0.0), c.get("beta", 0.0), c.get("gamma", 0.0))

    def initial_field(self, base_dir: Path | None = None) -> np.ndarray:
        return build_u0(self.u0, self.grid, base_dir)

    def solver_config(self, base_dir: Path | None = None) -> SolverConfig:
        return SolverConfig(self.grid, self.measure, self.coeffs, self.initial_field(base_dir), self.dt, self.steps, self.site)

    def to_dict(self) -> dict:
        out = {
            "grid": {"n": self.grid.n, "L": self.grid.L, "dim": self.grid.dim},
            "noise": self.measure.to_dict(),
            "coefficients": self.coefficients if isinstance(self.coefficients, str) else dict(self.coefficients),
            "u0": dict(self.u0),
            "dt": self.dt,
            "T": self.T,
            "x_obs": list(self.site),
            "paths": self.paths,
            "seed": self.seed,
            "output": self.output,
        }
        return out

    def with_(self, **kw) -> ExperimentConfig:
        return replace(self, **kw)

    def digest(self) -> str:
        return config_hash(self)


def build_u0(spec: dict, grid: GridSpec, base_dir: Path | None = None) -> np.ndarray:
    kind = spec["kind"]
    coords = grid.coordinates()
    if kind == "constant":
        return np.full(grid.shape, float(spec.get("value", 0.0)))
    if kind == "sine":
        k = int(spec.get("mode", 1))
        return float(spec.get("amplitude", 1.0)) * np.sin(2 * np.pi * k * coords[0] / grid.L)
    if kind == "delta":
        site = spec.get("site")
        return grid.delta(grid.center() if site is None else tuple(site))
    if kind == "bump":
        width = float(spec.get("width", 1.0))
        r2 = sum((c - grid.L / 2) ** 2 for c in coords)
        return float(spec.get("amplitude", 0.5)) * np.exp(-r2 / (2 * width**2))
    if kind == "file":
        path = Path(spec["path"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        data = np.load(path) if path.suffix == ".npy" else np.loadtxt(path)
        data = np.asarray(data, dtype=float).reshape(grid.shape)
        return data
    raise ValueError(f"unknown initial condition kind {kind!r}")


def _number(problems, where, value, positive=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        problems.append(f"{where}: expected a number, got {value!r}")
        return None
    if integer and (not float(value).is_integer()):
        problems.append(f"{where}: expected an integer, got {value!r}")
        return None
    if not math.isfinite(value):
        problems.append(f"{where}: must be finite")
        return None
    if positive and not value > 0:
        problems.append(f"{where}: must be positive, got {value!r}")
        return None
    return int(value) if integer else float(value)


def _unknown(problems, where, d, allowed):
    for k in sorted(set(d) - set(allowed)):
        problems.append(f"{where}: unknown key {k!r}")


def parse_config(text: str) -> ExperimentConfig:
    """Validate a JSON document; raises :class:`ConfigError` listing every violation."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"not valid JSON: {exc}"]) from None
    if not isinstance(raw, dict):
        raise ConfigError(["top level must be a JSON object"])
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    problems: list[str] = []
    _unknown(problems, "config", raw, TOP_KEYS)

    grid = None
    g = raw.get("grid")
    if not isinstance(g, dict):
        problems.append("grid: required object with keys n, L, dim")
    else:
        _unknown(problems, "grid", g, {"n", "L", "dim"})
        n = _number(problems, "grid.n", g.get("n"), positive=True, integer=True)
        L = _number(problems, "grid.L", g.get("L"), positive=True)
        dim = _number(problems, "grid.dim", g.get("dim", 1), integer=True)
        if n is not None and (n < 2 or n & (n - 1)):
            problems.append(f"grid.n: must be a power of two, got {n}")
            n = None
        if dim is not None and dim not in (1, 2):
            problems.append(f"grid.dim: must be 1 or 2, got {dim}")
            dim = None
        if None not in (n, L, dim):
            grid = GridSpec(n, L, dim)

    measure = None
    nz = raw.get("noise")
    if not isinstance(nz, dict):
        problems.append("noise: required object with key family")
    else:
        fam = nz.get("family")
        if fam not in NOISE_PARAM:
            problems.append(f"noise.family: expected one of {sorted(NOISE_PARAM)}, got {fam!r}")
        else:
            _unknown(problems, "noise", nz, {"family", "dim"} | NOISE_PARAM[fam])
            spec = dict(nz)
            spec.setdefault("dim", grid.dim if grid else 1)
            if grid is not None and spec["dim"] != grid.dim:
                problems.append(f"noise.dim: {spec['dim']} differs from grid.dim {grid.dim}")
            try:
                measure = SpectralMeasure.from_dict(spec)
            except (ValueError, TypeError) as exc:
                problems.append(f"noise: {exc}")
        if measure is not None:
            dal = dalang_integral(measure)
            if not dal.converges:
                problems.append(f"noise: violates Dalang's condition; {dal.describe()}")

    coeffs = raw.get("coefficients", "linear")
    if isinstance(coeffs, str):
        if coeffs not in COEFFICIENT_PRESETS:
            problems.append(f"coefficients: unknown preset {coeffs!r}; known: {sorted(COEFFICIENT_PRESETS)}")
    elif isinstance(coeffs, dict):
        _unknown(problems, "coefficients", coeffs, TRIG_KEYS)
        coeffs = {k: _number(problems, f"coefficients.{k}", v) for k, v in coeffs.items() if k in TRIG_KEYS}
    else:
        problems.append("coefficients: expected a preset name or an object with keys a, c, beta, gamma")

    u0 = raw.get("u0", {"kind": "constant", "value": 0.0})
    if not isinstance(u0, dict) or u0.get("kind") not in U0_KINDS:
        problems.append(f"u0: expected an object with kind in {sorted(U0_KINDS)}")
    else:
        _unknown(problems, "u0", u0, {"kind"} | U0_KINDS[u0["kind"]])
        if u0["kind"] == "file" and not isinstance(u0.get("path"), str):
            problems.append("u0.path: required string for kind 'file'")
        if u0["kind"] == "delta" and grid is not None and u0.get("site") is not None:
            s = u0["site"]
            if not (isinstance(s, list) and len(s) == grid.dim and all(isinstance(i, int) and 0 <= i < grid.n for i in s)):
                problems.append(f"u0.site: must be a list of {grid.dim} grid indices")

    dt = _number(problems, "dt", raw.get("dt", 0.002), positive=True)
    T = _number(problems, "T", raw.get("T", 0.5), positive=True)
    if dt and T:
        steps = T / dt
        if abs(steps - round(steps)) > 1e-9 * max(steps, 1):
            problems.append(f"T / dt must be an integer number of steps, got {steps}")
        if grid is not None and dt > grid.h**2 / 4:
            problems.append(f"dt: stability guard dt <= h^2/4 = {grid.h ** 2 / 4:g} violated (dt = {dt:g})")

    x_obs = raw.get("x_obs")
    if x_obs is not None:
        if not (isinstance(x_obs, list) and all(isinstance(i, int) and not isinstance(i, bool) for i in x_obs)):
            problems.append("x_obs: expected a list of grid indices")
            x_obs = None
        else:
            x_obs = tuple(x_obs)
            if grid is not None and (len(x_obs) != grid.dim or not all(0 <= i < grid.n for i in x_obs)):
                problems.append(f"x_obs: {list(x_obs)} is not a site of the grid")

    paths = _number(problems, "paths", raw.get("paths", 1000), positive=True, integer=True)
    seed = _number(problems, "seed", raw.get("seed", 0), integer=True)
    if seed is not None and not 0 <= seed < 2**64:
        problems.append("seed: must fit in an unsigned 64-bit integer")
    output = raw.get("output", "shen-out")
    if not isinstance(output, str):
        problems.append("output: expected a directory name")

    if problems:
        raise ConfigError(problems)
    if isinstance(u0, dict) and u0["kind"] == "delta" and "site" in u0:
        u0 = {**u0, "site": list(u0["site"])}
    return ExperimentConfig(grid, measure, coeffs, dict(u0), dt, T, x_obs if x_obs is not None else grid.center(),
                            paths, seed, output)


def emit_config(cfg: ExperimentConfig) -> str:
    """Canonical JSON text with every default filled in."""
    return json.dumps(cfg.to_dict(), sort_keys=True, indent=2) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    canon = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def load_config(path) -> ExperimentConfig:
    return parse_config(Path(path).read_text())


# -- presets ----------------------------------------------------------------

PRESET_GRID = GridSpec(128, 16.0, 1)
PRESET_DT = 0.002
PRESET_T = 0.5
BUMP = {"kind": "bump", "amplitude": 0.5, "width": 1.0}
ZERO = {"kind": "constant", "value": 0.0}
NOISES = {
    "white": SpectralMeasure.white(1),
    "riesz": SpectralMeasure.riesz(0.5, 1),
    "exponential": SpectralMeasure.exponential(1.0, 1),
}


def preset(coefficients: str, noise: str = "white", **overrides) -> ExperimentConfig:
    """Frozen configuration ``<coefficients>`` over ``<noise>`` on the shared desk-scale grid."""
    if coefficients not in COEFFICIENT_PRESETS:
        raise KeyError(f"unknown coefficient preset {coefficients!r}")
    cfg = ExperimentConfig(
        grid=PRESET_GRID,
        measure=NOISES[noise],
        coefficients=coefficients,
        u0=dict(ZERO if coefficients == "linear" else BUMP),
        dt=PRESET_DT,
        T=PRESET_T,
        x_obs=PRESET_GRID.center(),
        paths=1000,
        seed=0,
        output=f"shen-out/{coefficients}-{noise}",
    )
    return cfg.with_(**overrides) if overrides else cfg


PRESETS = {f"{c}-{nz}": preset(c, nz) for c in COEFFICIENT_PRESETS for nz in NOISES}

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "config_from_dict",
    "emit_config",
    "config_hash",
    "load_config",
    "build_u0",
    "preset",
    "PRESETS",
    "NOISES",
]
