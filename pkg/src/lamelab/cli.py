"""Batch experiment driver.

    lamelab <subcommand> --config <path> [--out <dir>] [--seed <n>] [--quiet]

Exit codes: 0 success, 2 invalid config, 3 numerical failure,
4 property-check failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .carleman import CarlemanWeights, carleman_scan, polynomial_bump, write_scan_csv
from .cauchy import stability_experiment
from .config import EXPERIMENTS, SCHEMA, ConfigError, ExperimentConfig
from .fields import PolyVectorField, radial_profile_field, smooth_coefficients, validate_ellipticity
from .geometry import BallSpec, Grid3
from .lame import apply_lame_full, factorization_residual
from .solutions import SolverError, grid_l2_error, solve_dirichlet
from .svg import line_chart
from .three_spheres import ThreeRadii, fit_sigma_C, iteration_plan, vanishing_profile, verify_three_spheres

log = logging.getLogger("lamelab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_PROPERTY = 0, 2, 3, 4


class PropertyFailure(RuntimeError):
    pass


class Outputs:
    """Single writer for one run; records every file for the manifest."""

    def __init__(self, root: Path):
        self.root = root
        self.files = []

    def _path(self, name):
        self.root.mkdir(parents=True, exist_ok=True)
        self.files.append(name)
        return self.root / name

    def json(self, name, obj):
        self._path(name).write_text(json.dumps(obj, indent=2, default=_jsonable) + "\n", encoding="utf-8")

    def csv(self, name, header, rows):
        with open(self._path(name), "w", newline="", encoding="utf-8") as fh:
            wr = csv.writer(fh)
            wr.writerow(header)
            for row in rows:
                wr.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])

    def svg(self, name, text):
        self._path(name).write_text(text, encoding="utf-8")


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"not JSON serializable: {type(o)}")


# ---------------------------------------------------------------- experiments


def run_ellipticity(cfg, out):
    coeffs = cfg.build_coefficients()
    p = cfg.params
    rep = validate_ellipticity(coeffs, BallSpec((0, 0, 0), cfg.geometry.get("radius", 1.0)), p.get("samples", 4096))
    out.json("ellipticity.json", rep.__dict__)
    if not rep.passed:
        raise PropertyFailure(f"ellipticity violated at {rep.worst_point} (value {rep.worst_value:.4g})")


def run_factorization(cfg, out):
    p = cfg.params
    coeffs = cfg.build_coefficients() if cfg.coefficients else smooth_coefficients()
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for k in range(p.get("n_fields", 10)):
        u = PolyVectorField.random(p.get("degree", 3), rng).as_field()
        probes = rng.uniform(-1, 1, (p.get("n_probes", 50), 3))
        first, second = factorization_residual(coeffs, u, probes)
        rows.append((k, first, second))
    out.csv("factorization.csv", ["field", "first_residual", "second_residual"], rows)
    worst = (max(r[1] for r in rows), max(r[2] for r in rows))
    out.json("factorization.json", {"max_first": worst[0], "max_second": worst[1]})
    if worst[0] > p.get("tol_first", 1e-8) or worst[1] > p.get("tol_second", 1e-12):
        raise PropertyFailure(f"factorization residual too large: {worst}")


def run_carleman(cfg, out):
    p = cfg.params
    R, theta, s = p.get("R", 1.0), p.get("theta", 0.5), p.get("s", 2.0)
    w = CarlemanWeights(R, theta, s)
    u = radial_profile_field(polynomial_bump(theta, R, p.get("bump_power", 3)))
    rows = carleman_scan(cfg.build_coefficients(), w, u, p.get("tau_list", [1, 2, 4, 8, 16]))
    write_scan_csv(rows, out._path("carleman_scan.csv"))
    out.json("carleman_scan.json", {"R": R, "theta": theta, "s": s, "phi_star": w.phi_star,
                                    "rows": [dict(zip(["tau", "t1", "t2", "t3", "rhs", "ratio"], r)) for r in rows]})
    taus = [r[0] for r in rows]
    out.svg("carleman_scan.svg", line_chart([("(t1+t2+t3)/rhs", taus, [r[5] for r in rows])],
                                            "Carleman ratio", "tau", "ratio", logx=True, logy=True))
    if any(not math.isfinite(r[5]) for r in rows):
        raise PropertyFailure("non-finite Carleman ratio")


def run_three_spheres(cfg, out):
    p = cfg.params
    r1, r2, r3 = p.get("radii", [0.25, 0.5, 1.0])
    u = cfg.build_solution()
    rep = verify_three_spheres(u, ThreeRadii(r1, r2, r3))
    out.json("three_spheres.json", rep.to_dict())
    if not rep.degenerate:
        curve = fit_sigma_C([rep])
        out.csv("sigma_C.csv", ["sigma", "C"], zip(curve.sigma, curve.C))
        out.svg("sigma_C.svg", line_chart([("C(sigma)", curve.sigma, curve.C)], "Admissible (sigma, C)", "sigma", "C", logy=True))
    if rep.degenerate and p.get("require_nondegenerate", True):
        raise PropertyFailure("degenerate three-spheres report")


def run_iteration_plan(cfg, out):
    p = cfg.params
    plan = iteration_plan(p.get("R1", 0.1), p.get("R2", 0.5), p.get("R_out", 1.0), p.get("eps", 0.5), p.get("s", 1.0))
    checks = plan.check()
    out.json("iteration_plan.json", {**plan.to_dict(), "checks": checks})
    if not all(checks.values()):
        raise PropertyFailure(f"plan invariants violated: {[k for k, v in checks.items() if not v]}")


def run_vanishing(cfg, out):
    p = cfg.params
    u = cfg.build_solution()
    radii = p.get("radii") or np.geomspace(p.get("r_min", 0.05), p.get("r_max", 0.4), p.get("n_radii", 8)).tolist()
    prof = vanishing_profile(u, tuple(p.get("center", [0, 0, 0])), radii)
    out.csv("vanishing.csv", ["radius", "mass"], prof.rows())
    out.json("vanishing.json", {"slope": prof.slope, "exp_fit": prof.exp_fit, "classification": prof.classification,
                                "radii": prof.radii, "masses": prof.masses})
    out.svg("vanishing.svg", line_chart([("mass", prof.radii, prof.masses)], "Ball mass profile", "r", "m(r)", logx=True, logy=True))


def run_cauchy(cfg, out):
    p = cfg.params
    coeffs = cfg.build_coefficients()
    u = cfg.build_solution(coeffs)
    h = cfg.geometry.get("h", 1 / 32)
    R_out = p.get("R_out", 1.0)
    grid = Grid3.cube(-R_out, R_out, h)
    rep = stability_experiment(coeffs, u, p.get("theta", 0.4), R_out, p.get("s", 1.0),
                               p.get("noise_list", [1e-1, 1e-2, 1e-3]), grid, seed=cfg.seed, tol=p.get("tol", 1e-4))
    out.json("stability.json", rep.to_dict())
    rep.to_csv(out._path("stability.csv"))
    out.svg("stability.svg", line_chart([("error on omega", rep.zeta0, rep.errors)], "Holder stability", "zeta0", "error",
                                        logx=True, logy=True))
    if rep.verdict != "Holder-consistent" and p.get("require_consistent", False):
        raise PropertyFailure(f"stability verdict: {rep.verdict}")


def run_solver_convergence(cfg, out):
    p = cfg.params
    coeffs = cfg.build_coefficients() if cfg.coefficients else smooth_coefficients()
    rng = np.random.default_rng(cfg.seed)
    u = PolyVectorField.random(3, rng).as_field()
    lo, hi = p.get("box", [0.0, 1.0])
    rows = []
    for h in p.get("h_list", [1 / 8, 1 / 16, 1 / 32]):
        sol = solve_dirichlet(coeffs, lambda x: apply_lame_full(coeffs, u, x), u.value, Grid3.cube(lo, hi, h), tol=p.get("tol", 1e-11))
        rows.append([h, grid_l2_error(sol, u), sol.iterations])
    ratios = [None] + [rows[k - 1][1] / rows[k][1] for k in range(1, len(rows))]
    out.csv("convergence.csv", ["h", "l2_error", "iterations", "ratio"], [r + [q if q is not None else ""] for r, q in zip(rows, ratios)])
    out.json("convergence.json", {"rows": rows, "ratios": ratios[1:]})
    out.svg("convergence.svg", line_chart([("L2 error", [r[0] for r in rows], [r[1] for r in rows])], "Manufactured solution",
                                          "h", "error", logx=True, logy=True))
    lo_r, hi_r = p.get("ratio_bounds", [3.2, 4.8])
    if any(not lo_r <= q <= hi_r for q in ratios[1:]):
        raise PropertyFailure(f"convergence ratios {ratios[1:]} outside [{lo_r}, {hi_r}]")


RUNNERS = {
    "ellipticity-check": run_ellipticity,
    "factorization-check": run_factorization,
    "carleman-scan": run_carleman,
    "three-spheres": run_three_spheres,
    "iteration-plan": run_iteration_plan,
    "vanishing": run_vanishing,
    "cauchy-stability": run_cauchy,
    "solver-convergence": run_solver_convergence,
}


def run(subcommand, config_path, out_dir=None, seed=None, quiet=False):
    """Run one experiment; returns the process exit code."""
    try:
        cfg = ExperimentConfig.load(config_path)
        if cfg.experiment != subcommand:
            raise ConfigError(f"config is for {cfg.experiment!r}, not {subcommand!r}")
    except ConfigError as exc:
        print(f"lamelab: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if seed is not None:
        cfg.seed = seed
    out = Outputs(Path(out_dir or cfg.output_dir))
    t0 = time.perf_counter()
    code, message = EXIT_OK, "ok"
    try:
        RUNNERS[subcommand](cfg, out)
    except ConfigError as exc:
        code, message = EXIT_CONFIG, str(exc)
    except (SolverError, FloatingPointError, OverflowError, ZeroDivisionError) as exc:
        code, message = EXIT_NUMERIC, f"numerical failure: {exc}"
    except PropertyFailure as exc:
        code, message = EXIT_PROPERTY, f"property check failed: {exc}"
    except ValueError as exc:
        code, message = EXIT_CONFIG, f"invalid parameters: {exc}"
    if out.files:
        out.json("manifest.json", {
            "experiment": subcommand,
            "config_sha256": cfg.digest(),
            "version": __version__,
            "seed": cfg.seed,
            "exit_code": code,
            "files": list(out.files),
            "elapsed_s": round(time.perf_counter() - t0, 3),
        })
    if code != EXIT_OK:
        print(f"lamelab {subcommand}: {message}", file=sys.stderr)
    elif not quiet:
        print(f"lamelab {subcommand}: wrote {len(out.files)} files to {out.root}", file=sys.stderr)
    return code


def main(argv=None):
    parser = argparse.ArgumentParser(prog="lamelab", description=__doc__.splitlines()[0])
    parser.add_argument("--print-schema", action="store_true", help="print the config JSON schema and exit")
    sub = parser.add_subparsers(dest="subcommand")
    for name in EXPERIMENTS:
        sp_ = sub.add_parser(name)
        sp_.add_argument("--config", required=True)
        sp_.add_argument("--out")
        sp_.add_argument("--seed", type=int)
        sp_.add_argument("--quiet", action="store_true")
    args = parser.parse_args(argv)
    if args.print_schema:
        print(json.dumps(SCHEMA, indent=2))
        return EXIT_OK
    if not args.subcommand:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(name)s: %(message)s")
    return run(args.subcommand, args.config, args.out, args.seed, args.quiet)


if __name__ == "__main__":
    sys.exit(main())
