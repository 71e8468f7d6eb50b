"""Command-line orchestration: every check writes CSV/JSON artifacts plus a manifest.

Exit codes: 0 all checks pass, 2 configuration error, 3 numerical instability,
4 a check ran but failed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import PRESETS, ConfigError, ExperimentConfig, load_config
from .density import collect_samples, envelope_check, gaussian_case_check, martingale_bounds
from .kernel import PhiEvaluator, grid_phi, j_rate, phi
from .malliavin import (
    MAX_TENSOR_SITES,
    MAX_TENSOR_STEPS,
    SMALL_BALL_LEVELS,
    DegenerateCoefficients,
    derivative_at_obs,
    ht_norm_sq,
    lemma4_scaling,
    negative_moment_probe,
    propagate_derivative,
)
from .scaling import build_report, loglog_fit
from .solver import COEFFICIENT_PRESETS, InstabilityError, difference_moments, f0, fn_sequence, run_ensemble, solve_path
from .spectral import dalang_integral, h_norm_sq
from .taylor import TERM_ALIASES, ensemble_terms, reports_from_ensemble

EXIT_OK, EXIT_CONFIG, EXIT_UNSTABLE, EXIT_FAIL = 0, 2, 3, 4
WIDTH_FRACTIONS = (0.02, 0.04, 0.08, 0.16, 0.32)
SMALLBALL_FRACTION = 0.16
IDENTITY_TOL = 1e-9


# -- artifact writing -------------------------------------------------------


def _plain(x):
    """JSON-safe, deterministic view of numpy scalars, arrays and non-finite floats."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple, np.ndarray)):
        return [_plain(v) for v in x]
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(x) if math.isfinite(x) else None
    return x


def _cell(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Artifacts:
    """Writes files under one directory and remembers them for the manifest."""

    def __init__(self, root: Path, cfg: ExperimentConfig):
        self.root = Path(root)
        self.cfg = cfg
        self.files: list[Path] = []
        self.root.mkdir(parents=True, exist_ok=True)

    def sub(self, name: str) -> Artifacts:
        child = Artifacts(self.root / name, self.cfg)
        child.files = self.files
        return child

    def csv(self, name: str, header, rows) -> Path:
        path = self.root / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])
        self.files.append(path)
        return path

    def json(self, name: str, summary: dict) -> Path:
        path = self.root / name
        body = {"config_hash": self.cfg.digest(), **_plain(summary)}
        path.write_text(json.dumps(body, sort_keys=True, indent=2, allow_nan=False) + "\n")
        self.files.append(path)
        return path


def write_manifest(root: Path, files, cfg: ExperimentConfig, results: dict, started: float) -> Path:
    root = Path(root)
    listing = {str(Path(f).resolve().relative_to(root.resolve())): sha256(f) for f in files}
    manifest = {
        "tool": "shen",
        "version": __version__,
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "paths": cfg.paths,
        "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
        "results": results,
        "files": dict(sorted(listing.items())),
    }
    path = root / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


# -- helpers ----------------------------------------------------------------


@dataclass
class Context:
    cfg: ExperimentConfig
    args: argparse.Namespace
    threads: int | None
    base_dir: Path | None = None
    _solver: object = field(default=None, repr=False)

    @property
    def solver(self):
        if self._solver is None:
            self._solver = self.cfg.solver_config(self.base_dir)
        return self._solver


def default_widths(steps: int) -> list[int]:
    # one-step windows make the remainder terms vanish identically
    widths = sorted({max(2, round(f * steps)) for f in WIDTH_FRACTIONS})
    if len(widths) < 5:
        raise ValueError(f"{steps} time steps are too few for five distinct window widths")
    return widths


def _widths(ctx: Context) -> list[int]:
    w = getattr(ctx.args, "widths", None)
    return sorted(int(v) for v in w) if w else default_widths(ctx.solver.steps)


def _require_nondegenerate(ctx: Context, what: str):
    if not ctx.solver.coeffs.nondegenerate:
        raise DegenerateCoefficients(f"{what} needs a diffusion coefficient bounded away from zero")


# -- subcommands ------------------------------------------------------------


def cmd_phi(ctx: Context, out: Artifacts) -> bool:
    m, T = ctx.cfg.measure, ctx.cfg.T
    times = ctx.args.times or [max(T, 1.0) * i / 100 for i in range(1, 101)]
    ev = PhiEvaluator(m)
    rows = [(t, j_rate(t, m), phi(t, m)) for t in times]
    out.csv("phi.csv", ["t", "j_rate", "phi"], rows)
    values = np.array([r[2] for r in rows])
    summary = {"measure": m.to_dict(), "closed_form": ev.closed_form, "phi_T": phi(T, m),
               "monotone": bool(np.all(np.diff(values[np.argsort(times)]) > 0))}
    ok = summary["monotone"]
    if ev.closed_form:
        quad = np.array([phi(t, m, method="quad") for t in times])
        err = float(np.max(np.abs(quad - values) / values))
        summary["max_rel_error_quadrature"] = err
        ok = ok and err < 1e-6
    summary["pass"] = ok
    out.json("phi.json", summary)
    return ok


def cmd_dalang(ctx: Context, out: Artifacts) -> bool:
    res = dalang_integral(ctx.cfg.measure)
    out.csv("dalang.csv", ["cutoff", "truncation"], zip(res.cutoffs, res.truncations))
    out.json("dalang.json", {"verdict": res.verdict, "ratio": res.ratio, "value": res.value, "pass": res.converges})
    return res.converges


def cmd_simulate(ctx: Context, out: Artifacts) -> bool:
    cfg, sc = ctx.cfg, ctx.solver
    ens = run_ensemble(sc, cfg.paths, cfg.seed, ctx.threads)
    every = ctx.args.every or sc.steps
    ks = list(range(0, sc.steps + 1, every))
    if ks[-1] != sc.steps:
        ks.append(sc.steps)
    idx = np.flatnonzero(ens.stable)
    u = ens.u_obs[idx]
    rows = ((int(p), k * sc.dt, u[i, k]) for i, p in enumerate(idx) for k in ks)
    out.csv(ctx.args.csv_name or "simulate.csv", ["path", "t", "u_at_x_obs"], rows)
    final = u[:, -1]
    out.json("simulate.json", {
        "paths": int(idx.size),
        "unstable": int(ens.unstable.sum()),
        "F0": f0(sc),
        "mean_T": float(final.mean()),
        "var_T": float(final.var(ddof=1)) if final.size > 1 else math.nan,
        "phi_T": phi(sc.T, sc.measure),
        "grid_phi_T": float(grid_phi(sc.steps, sc.measure, sc.grid, sc.dt)),
        "pass": True,
    })
    return True


def cmd_fn_seq(ctx: Context, out: Artifacts) -> bool:
    cfg, sc = ctx.cfg, ctx.solver
    N = sc.steps
    part = ctx.args.partition or sorted({round(i * N / 5) for i in range(6)})
    ens = run_ensemble(sc, cfg.paths, cfg.seed, ctx.threads)
    F = fn_sequence(ens, part)
    idx = np.flatnonzero(ens.stable)
    rows = ((int(p), n, part[n] * sc.dt, F[i, n]) for i, p in enumerate(idx) for n in range(len(part)))
    out.csv("fn_seq.csv", ["path", "n", "t_n", "F_n"], rows)
    # F_0 is the deterministic mean and F_N is the solution itself
    err0 = float(np.max(np.abs(F[:, 0] - f0(sc, part[-1] * sc.dt))))
    errN = float(np.max(np.abs(F[:, -1] - ens.u_obs[idx, part[-1]])))
    ok = err0 < IDENTITY_TOL and errN < IDENTITY_TOL
    out.json("fn_seq.json", {"partition": part, "paths": int(idx.size), "F0_error": err0, "FN_error": errN, "pass": ok})
    return ok


def cmd_malliavin_check(ctx: Context, out: Artifacts) -> bool:
    cfg = ctx.cfg
    sc = ctx.solver.with_(coeffs=COEFFICIENT_PRESETS["linear"])
    N = sc.steps
    path = solve_path(sc, cfg.seed, 0)
    D = derivative_at_obs(sc, path.states, path.increments, end=N)
    per_source = sc.dt * h_norm_sq(D, sc.measure, sc.grid)
    summary = {}
    if sc.grid.dim == 1 and sc.grid.n <= MAX_TENSOR_SITES and N <= MAX_TENSOR_STEPS:
        forward = propagate_derivative(path).at_obs()
        summary["route_agreement"] = float(np.max(np.abs(forward - D)) / np.max(np.abs(D)))
    total = float(per_source.sum())
    target = phi(sc.T, sc.measure)
    tail = np.cumsum(per_source[::-1])
    widths = np.arange(1, N + 1)
    out.csv("malliavin.csv", ["r", "t_r", "norm_sq", "window_norm_sq", "grid_phi_window"],
            zip(range(N), np.arange(N) * sc.dt, per_source, tail[::-1], grid_phi(widths, sc.measure, sc.grid, sc.dt)[::-1]))
    fit = loglog_fit(grid_phi(widths, sc.measure, sc.grid, sc.dt), tail)
    rel = abs(total - target) / target
    ok = rel < 0.05 and summary.get("route_agreement", 0.0) < 1e-10
    summary.update({"ht_norm_sq": total, "phi_t": target, "grid_phi_t": float(grid_phi(N, sc.measure, sc.grid, sc.dt)),
                    "rel_error": rel, "slope": fit.slope, "ci_low": fit.ci_low, "ci_high": fit.ci_high, "pass": ok})
    out.json("malliavin.json", summary)
    return ok


def _report_csv(out: Artifacts, name: str, report):
    rows = [(r["width"], r["scale"], r["scale_continuum"], r["moment_estimate"], r["stderr"]) for r in report.rows()]
    out.csv(name, ["width", "scale", "scale_continuum", "moment_estimate", "stderr"], rows)


def cmd_lemma4(ctx: Context, out: Artifacts) -> bool:
    cfg, sc = ctx.cfg, ctx.solver
    rep = lemma4_scaling(sc, sc.steps, _widths(ctx), p=ctx.args.p, paths=cfg.paths, seed=cfg.seed, threads=ctx.threads)
    _report_csv(out, "lemma4.csv", rep)
    out.json("lemma4.json", rep.summary())
    return rep.passed


def cmd_difference(ctx: Context, out: Artifacts) -> bool:
    cfg, sc = ctx.cfg, ctx.solver
    widths = _widths(ctx)
    N = sc.steps
    ens = run_ensemble(sc, cfg.paths, cfg.seed, ctx.threads, snapshots=[N - w for w in widths])
    p = ctx.args.p
    moments = [difference_moments(ens, N - w, N, p=2 * p) for w in widths]
    est = [mo.value ** (1 / p) for mo in moments]
    se = [mo.stderr * mo.value ** (1 / p - 1) / p for mo in moments]
    scale = grid_phi(np.array(widths), sc.measure, sc.grid, sc.dt)
    cont = [phi(w * sc.dt, sc.measure) for w in widths]
    rep = build_report(f"difference p={2 * p}", widths, scale, cont, est, se, 1.0, 0.15)
    _report_csv(out, "difference.csv", rep)
    out.json("difference.json", rep.summary())
    return rep.passed


def _smallball_interval(ctx: Context) -> tuple[int, int]:
    if ctx.args.interval:
        return tuple(ctx.args.interval)
    N = ctx.solver.steps
    return (N - max(1, round(SMALLBALL_FRACTION * N)), N)


def cmd_smallball(ctx: Context, out: Artifacts) -> bool:
    cfg, sc = ctx.cfg, ctx.solver
    _require_nondegenerate(ctx, "smallball")
    probe = negative_moment_probe(sc, _smallball_interval(ctx), p=ctx.args.p, paths=cfg.paths, seed=cfg.seed,
                                  threads=ctx.threads)
    out.csv("smallball.csv", ["level_factor", "epsilon", "probability"],
            zip(SMALL_BALL_LEVELS, probe.levels, probe.probabilities))
    out.json("smallball.json", probe.summary())
    return probe.passed


def _taylor(ctx: Context, out: Artifacts, terms) -> bool:
    cfg, sc = ctx.cfg, ctx.solver
    widths = _widths(ctx)
    N = sc.steps
    ens = ensemble_terms(sc, [(N - w, N) for w in widths], cfg.paths, cfg.seed, threads=ctx.threads)
    reports = reports_from_ensemble(sc, widths, ens, [TERM_ALIASES[t] for t in terms], p=ctx.args.p)
    residual = float(ens.residuals().max())
    ok = residual < IDENTITY_TOL
    for t in terms:
        rep = reports[TERM_ALIASES[t]]
        rows = [(r["width"], r["scale"], r["scale_continuum"], r["moment_estimate"], r["stderr"]) for r in rep.rows()]
        out.csv(f"taylor_{t}.csv", ["width", "delta_g", "delta_g_continuum", "moment_estimate", "stderr"], rows)
        s = rep.summary()
        s.update({"ci": [s["ci_low"], s["ci_high"]], "term": t, "identity_residual": residual,
                  "identity_pass": residual < IDENTITY_TOL})
        s["pass"] = bool(rep.passed and residual < IDENTITY_TOL)
        out.json(f"taylor_{t}.json", s)
        ok = ok and rep.passed
    return ok


def cmd_taylor(ctx: Context, out: Artifacts) -> bool:
    return _taylor(ctx, out, [ctx.args.term])


def cmd_density(ctx: Context, out: Artifacts) -> bool:
    cfg, sc = ctx.cfg, ctx.solver
    _require_nondegenerate(ctx, "density-envelope")
    x = collect_samples(sc, cfg.paths, cfg.seed, ctx.threads)
    out.csv("samples.csv", ["path", "value"], enumerate(x))
    F0, phi_t = f0(sc), phi(sc.T, sc.measure)
    c = sc.coeffs
    rep = envelope_check(x, F0, phi_t, sc.T, c.b_sup, c.sigma_lower)
    rows = [(r["y"], r["p_hat"], r["stderr"], r["lower_env"], r["upper_env"]) for r in rep.rows()]
    out.csv("kde.csv", ["y", "p_hat", "stderr", "lower_env", "upper_env"], rows)
    summary = rep.summary()
    ok = rep.passed
    if c.additive:
        g = gaussian_case_check(x, F0, phi_t)
        summary["gaussian"] = g.summary()
        ok = ok and g.passed
    summary["pass"] = ok
    out.json("density.json", summary)
    return ok


def cmd_bounds(ctx: Context, out: Artifacts) -> bool:
    cfg, sc = ctx.cfg, ctx.solver
    mb = martingale_bounds(sc, cfg.paths, cfg.seed, ctx.threads)
    out.csv("bounds.csv", ["path", "quadratic_variation", "drift_integral"], zip(range(mb.qv.size), mb.qv, mb.drift))
    out.json("bounds.json", mb.summary())
    return mb.passed


ALL_TERMS = ("j1", "j2", "r1", "r2")
COMMANDS = {
    "phi": cmd_phi,
    "dalang": cmd_dalang,
    "simulate": cmd_simulate,
    "fn-seq": cmd_fn_seq,
    "malliavin-check": cmd_malliavin_check,
    "lemma4-scaling": cmd_lemma4,
    "difference-scaling": cmd_difference,
    "smallball": cmd_smallball,
    "taylor-scaling": cmd_taylor,
    "density-envelope": cmd_density,
    "pathwise-bounds": cmd_bounds,
}


def _run_one(name, fn, ctx, out) -> str:
    try:
        return "pass" if fn(ctx, out) else "fail"
    except InstabilityError as exc:
        print(f"{name}: {exc}", file=sys.stderr)
        return "unstable"
    except (DegenerateCoefficients, ValueError) as exc:
        print(f"{name}: {exc}", file=sys.stderr)
        return "error"


def cmd_all(ctx: Context, out: Artifacts) -> dict:
    results = {}
    for name, fn in COMMANDS.items():
        if name in ("smallball", "density-envelope") and not ctx.solver.coeffs.nondegenerate:
            results[name] = "skipped"
            continue
        if name == "taylor-scaling":
            results[name] = _run_one(name, lambda c, o: _taylor(c, o, ALL_TERMS), ctx, out.sub(name))
        else:
            results[name] = _run_one(name, fn, ctx, out.sub(name))
    return results


# -- argument parsing -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--preset", choices=sorted(PRESETS), help="built-in configuration")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--paths", type=int, help="Monte Carlo sample size (overrides the config)")
    common.add_argument("--out", help="output directory, or a .csv file for the primary table")
    common.add_argument("--threads", type=int, help="worker processes (default: SHEN_THREADS or all cores)")

    parser = argparse.ArgumentParser(prog="shen", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"shen {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return subs.add_parser(name, parents=[common], help=help_)

    add("phi", "tabulate J(t) and Phi(t)").add_argument("--times", type=float, nargs="+")
    add("dalang", "truncations of the Dalang integral")
    add("simulate", "solution at x_obs").add_argument("--every", type=int, help="record every k-th step")
    add("fn-seq", "martingale approximation F_n").add_argument("--partition", type=int, nargs="+")
    add("malliavin-check", "linear-case identity for the Malliavin derivative")
    for name, help_ in (("lemma4-scaling", "derivative norm over shrinking windows"),
                        ("difference-scaling", "solution minus its frozen extension over shrinking windows")):
        sp = add(name, help_)
        sp.add_argument("--p", type=int, default=1)
        sp.add_argument("--widths", type=int, nargs="+")
    sp = add("smallball", "small-ball probabilities and negative moments")
    sp.add_argument("--interval", type=int, nargs=2)
    sp.add_argument("--p", type=float, default=1.0)
    sp = add("taylor-scaling", "scaling of one Taylor term")
    sp.add_argument("--term", choices=ALL_TERMS, default="j1")
    sp.add_argument("--p", type=int, default=2)
    sp.add_argument("--widths", type=int, nargs="+")
    add("density-envelope", "KDE and two-sided Gaussian envelope")
    add("pathwise-bounds", "quadratic variation and drift bounds per path")
    sp = add("all-checks", "run every check")
    sp.add_argument("--widths", type=int, nargs="+")
    return parser


_DEFAULTS = {"times": None, "every": None, "partition": None, "p": None, "widths": None, "interval": None,
             "term": "j1", "csv_name": None}


def _resolve_config(args) -> tuple[ExperimentConfig, Path | None]:
    if args.config and args.preset:
        raise ConfigError(["give either --config or --preset, not both"])
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError([f"config file {path} does not exist"])
        cfg, base = load_config(path), path.parent
    elif args.preset:
        cfg, base = PRESETS[args.preset], None
    else:
        raise ConfigError(["one of --config or --preset is required"])
    problems = []
    if args.seed is not None and not 0 <= args.seed < 2**64:
        problems.append("--seed must fit in an unsigned 64-bit integer")
    if args.paths is not None and args.paths < 1:
        problems.append("--paths must be positive")
    if args.threads is not None and args.threads < 1:
        problems.append("--threads must be positive")
    if problems:
        raise ConfigError(problems)
    if args.seed is not None:
        cfg = cfg.with_(seed=args.seed)
    if args.paths is not None:
        cfg = cfg.with_(paths=args.paths)
    return cfg, base


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for k, v in _DEFAULTS.items():
        if not hasattr(args, k):
            setattr(args, k, v)
    if args.p is None:
        args.p = 2 if args.command == "taylor-scaling" else 1
    started = time.time()
    try:
        cfg, base = _resolve_config(args)
        out_dir = Path(args.out or cfg.output)
        if out_dir.suffix == ".csv":
            args.csv_name = out_dir.name
            out_dir = out_dir.parent
        ctx = Context(cfg, args, args.threads, base)
        ctx.solver  # surfaces initial-condition problems as config errors
        out = Artifacts(out_dir, cfg)
        if args.command == "all-checks":
            results = cmd_all(ctx, out)
        else:
            try:
                results = {args.command: "pass" if COMMANDS[args.command](ctx, out) else "fail"}
            except InstabilityError as exc:
                print(f"{args.command}: {exc}", file=sys.stderr)
                results = {args.command: "unstable"}
    except (ConfigError, DegenerateCoefficients, ValueError, OSError) as exc:
        print(f"shen: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_manifest(out.root, out.files, cfg, results, started)
    for name, verdict in results.items():
        print(f"{name}: {verdict}")
    states = set(results.values())
    if "error" in states:
        return EXIT_CONFIG
    if "unstable" in states:
        return EXIT_UNSTABLE
    if "fail" in states:
        return EXIT_FAIL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
