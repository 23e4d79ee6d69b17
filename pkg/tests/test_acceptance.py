"""Acceptance suite: one test per criterion, each at the contract tolerance.

Every test prints a single ``[criterion k] PASS|FAIL ...`` line (visible with
``pytest -s`` or in the captured output of a failure) before asserting.
"""
import math
import time

import numpy as np
import pytest

from lamelab.carleman import CarlemanWeights, carleman_scan, polynomial_bump
from lamelab.cauchy import stability_experiment
from lamelab.fields import PolyVectorField, constant_coefficients, radial_profile_field, smooth_coefficients
from lamelab.geometry import BallSpec, Grid3, ProductBallRule, integrate_ball, l2_mass_ball
from lamelab.lame import apply_lame_full, factorization_residual
from lamelab.solutions import KelvinSource, grid_l2_error, interior_ratio, kelvin_field, solve_dirichlet, xyz_gradient
from lamelab.three_spheres import (
    ThreeRadii, decay_limit_check, fit_sigma_C, inv_ln_a_for, iteration_plan, vanishing_profile,
    verify_three_spheres,
)


def verdict(k, ok, detail, elapsed, budget):
    ok = bool(ok) and elapsed < budget
    print(f"[criterion {k}] {'PASS' if ok else 'FAIL'} {detail} (runtime {elapsed:.2f}s / {budget:g}s)")
    assert ok, detail


def test_criterion_01_quadrature_oracle():
    t = time.perf_counter()
    rule = ProductBallRule(n_r=5, n_p=8, n_a=16)
    unit = BallSpec((0, 0, 0), 1.0)
    got = [
        integrate_ball(lambda x: np.ones(len(x)), unit, rule),
        integrate_ball(lambda x: x[:, 0] ** 2 * x[:, 1] ** 2, unit, rule),
        l2_mass_ball(xyz_gradient(), unit, rule),
    ]
    ref = [4 * math.pi / 3, 4 * math.pi / 105, 4 * math.pi / 35]
    rel = [abs(g / r - 1) for g, r in zip(got, ref)]
    verdict(1, max(rel) <= 1e-10, f"max relative error {max(rel):.2e}", time.perf_counter() - t, 1.0)


def test_criterion_02_homogeneous_three_spheres():
    t = time.perf_counter()
    rep = verify_three_spheres(xyz_gradient(), ThreeRadii(0.25, 0.5, 1.0))
    q = rep.n2**2 / (rep.n1 * rep.nR)
    ok = abs(rep.sigma_star - 0.5) <= 1e-6 and abs(q - 1) <= 1e-8
    verdict(2, ok, f"sigma_star {rep.sigma_star:.12f}, n2^2/(n1 nR) - 1 = {q - 1:.1e}", time.perf_counter() - t, 1.0)


def test_criterion_03_factorization_identity():
    t = time.perf_counter()
    rng = np.random.default_rng(2024)
    c = smooth_coefficients()
    first = second = 0.0
    for _ in range(10):
        u = PolyVectorField.random(3, rng).as_field()
        a, b = factorization_residual(c, u, rng.uniform(-1, 1, (50, 3)))
        first, second = max(first, a), max(second, b)
    verdict(3, first <= 1e-8 and second <= 1e-12, f"max residuals {first:.2e} / {second:.2e}",
            time.perf_counter() - t, 1.0)


def test_criterion_04_kelvin_residual():
    t = time.perf_counter()
    rng = np.random.default_rng(4)
    worst_rel = worst_fd = 0.0
    for k in range(100):
        d = rng.normal(size=3)
        src = KelvinSource(tuple(d / np.linalg.norm(d) * rng.uniform(1.6, 3.0)), tuple(np.eye(3)[k % 3]))
        u = kelvin_field(src)
        while True:
            x = rng.uniform(-1, 1, (1, 3))
            if np.linalg.norm(x - np.array(src.y)) >= 0.5:
                break
        scale = float(np.linalg.norm(u.value(x)))
        worst_rel = max(worst_rel, float(np.abs(apply_lame_full(constant_coefficients(1.0, 1.0), u, x)).max()) / scale)
        h = 1e-4
        H = np.stack([(u.jacobian(x + h * e) - u.jacobian(x - h * e)) / (2 * h) for e in np.eye(3)], -1)
        fd = np.einsum("nijj->ni", H) + 2 * np.einsum("njji->ni", H)
        worst_fd = max(worst_fd, float(np.abs(fd).max()) / scale)
    ok = worst_rel <= 1e-6 and worst_fd <= 1e-6
    verdict(4, ok, f"analytic {worst_rel:.1e}, finite-difference oracle {worst_fd:.1e} (x local scale)",
            time.perf_counter() - t, 1.0)


def test_criterion_05_kelvin_three_spheres():
    t = time.perf_counter()
    rng = np.random.default_rng(5)
    rule = ProductBallRule(16, 24, 48)
    reps = []
    for _ in range(20):
        d = rng.normal(size=3)
        b = rng.normal(size=3)
        src = KelvinSource(tuple(d / np.linalg.norm(d) * rng.uniform(1.1, 3.0)), tuple(b / np.linalg.norm(b)))
        reps.append(verify_three_spheres(kelvin_field(src), ThreeRadii(0.25, 0.5, 1.0), rule))
    curve = fit_sigma_C(reps)
    ok = all(not r.degenerate and 0 < r.sigma_star < 1 for r in reps) and abs(curve.C_at_sigma_min - 1) <= 1e-10
    verdict(5, ok, f"min sigma_star {curve.sigma_min:.4f}, C - 1 = {curve.C_at_sigma_min - 1:.1e}",
            time.perf_counter() - t, 10.0)


def test_criterion_06_iteration_plan():
    t = time.perf_counter()
    p = iteration_plan(0.1, 0.5, 1.0, 0.5, 1.0)
    exact = (math.isclose(p.theta, 2 / 3, rel_tol=1e-15) and p.N == 21 and p.sigma == 2.0**-21
             and math.isclose(p.eta, math.exp(22 / 21), rel_tol=1e-15))
    brackets = all(p.check().values())
    rng = np.random.default_rng(6)
    bad = 0
    for _ in range(1000):
        R = rng.uniform(0.2, 10)
        R2 = rng.uniform(0.05, 0.95) * R
        R1 = rng.uniform(0.01, 0.99) * R2
        plan = iteration_plan(R1, R2, R, rng.uniform(0.01, 0.99), rng.uniform(0.05, 10) / R**2)
        bad += not all(plan.check().values())
    verdict(6, exact and brackets and bad == 0, f"N = {p.N}, invariant violations {bad}/1000",
            time.perf_counter() - t, 1.0)


def test_criterion_07_decay_limit_dichotomy():
    t = time.perf_counter()
    R1 = [1e-1, 1e-2, 1e-3, 1e-4]
    small = inv_ln_a_for(1.0, 1.0, 0.02)
    large = inv_ln_a_for(1.0, 1.0, 0.05)
    good = decay_limit_check(0.5, small, 1.0, R1)
    bad = decay_limit_check(0.5, large, 1.0, R1)
    ok = (small < 0.5 and good.verdict == "-> 0" and good.monotone_on_list
          and large > 0.5 and bad.verdict == "no conclusion")
    detail = (f"inv_ln_a {small:.4f} / {large:.4f}, verdicts {good.verdict!r} / {bad.verdict!r}, "
              f"values {['%.3g' % v for v in good.values]} monotone={good.monotone_on_list} "
              f"(decrease starts below R1 = {good.turnover_R1:.2e})")
    verdict(7, ok, detail, time.perf_counter() - t, 1.0)


def test_criterion_08_solver_convergence():
    t = time.perf_counter()
    c = smooth_coefficients()
    u = PolyVectorField([
        {(3, 0, 0): 1.0, (1, 1, 1): 0.5, (0, 2, 0): -0.3},
        {(0, 3, 0): -0.7, (2, 0, 1): 0.4, (0, 0, 1): 1.0},
        {(1, 0, 2): 0.6, (0, 1, 2): 0.2, (3, 0, 0): -0.1},
    ]).as_field()
    errs = [grid_l2_error(solve_dirichlet(c, lambda x: apply_lame_full(c, u, x), u.value, Grid3.cube(0, 1, h)), u)
            for h in (1 / 16, 1 / 32)]
    ratio = errs[0] / errs[1]
    verdict(8, 3.2 <= ratio <= 4.8, f"errors {errs[0]:.3e}, {errs[1]:.3e}, ratio {ratio:.3f}",
            time.perf_counter() - t, 60.0)


def test_criterion_09_interior_scaling():
    t = time.perf_counter()
    u = kelvin_field(KelvinSource((0.8, 0.6, 1.6), tuple(np.ones(3) / math.sqrt(3))))
    rule = ProductBallRule(16, 24, 48)
    vals = [interior_ratio(u, r, 1.0, rule) * (1 - r) ** 2 for r in (0.5, 0.75, 0.875)]
    verdict(9, max(vals) <= 3 * vals[0], f"ratio (R-r)^2 = {['%.4g' % v for v in vals]}", time.perf_counter() - t, 10.0)


def test_criterion_10_carleman_scan():
    t = time.perf_counter()
    w = CarlemanWeights(1.0, 0.5, 2.0)
    u = radial_profile_field(polynomial_bump(0.5, 1.0))
    rows = carleman_scan(constant_coefficients(1.0, 1.0), w, u, [1, 2, 4, 8, 16])
    finite = all(all(math.isfinite(v) and v > 0 for v in r[1:]) for r in rows)
    ratios = [r[5] for r in rows]
    spread = max(ratios) / min(ratios)
    verdict(10, finite and spread <= 1e2, f"ratios {['%.4g' % v for v in ratios]}, max/min {spread:.1f}",
            time.perf_counter() - t, 10.0)


@pytest.mark.slow
def test_criterion_11_cauchy_holder_slope():
    t = time.perf_counter()
    u = kelvin_field(KelvinSource((0.8, 0.6, 1.6), tuple(np.ones(3) / math.sqrt(3))))
    rep = stability_experiment(constant_coefficients(1.0, 1.0), u, 0.4, 1.0, 1.0, [1e-1, 1e-2, 1e-3],
                               Grid3.cube(-1, 1, 1 / 32), seed=0)
    e = rep.errors
    monotone = all(b <= 1.5 * a for a, b in zip(e, e[1:]))
    ok = monotone and 0.05 < rep.eps_emp <= 1.05
    detail = (f"relative errors {['%.4f' % v for v in rep.rel_errors]}, betas {rep.betas}, "
              f"eps_emp {rep.eps_emp:.3f}, verdict {rep.verdict}")
    verdict(11, ok, detail, time.perf_counter() - t, 600.0)


def test_criterion_12_vanishing_slopes():
    t = time.perf_counter()
    s_xyz = vanishing_profile(xyz_gradient(), (0, 0, 0), np.geomspace(0.05, 0.4, 8)).slope
    u = kelvin_field(KelvinSource((0.8, 0.6, 1.6), tuple(np.ones(3) / math.sqrt(3))))
    s_kel = vanishing_profile(u, (0.1, -0.2, 0.3), np.geomspace(1e-3, 1e-2, 6)).slope
    ok = abs(s_xyz - 7) <= 0.05 and abs(s_kel - 3) <= 0.05
    verdict(12, ok, f"slopes {s_xyz:.4f} and {s_kel:.4f}", time.perf_counter() - t, 5.0)
