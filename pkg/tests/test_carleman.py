import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lamelab.carleman import (
    CarlemanWeights, SupportError, half_level_radius, carleman_log_sides, carleman_scan, carleman_sides, cutoff_build,
    cutoff_gradient_bound, polynomial_bump, sublevel_radius, weights_eval, write_scan_csv,
)
from lamelab.fields import constant_coefficients, radial_profile_field, smooth_coefficients, zero_field
from lamelab.geometry import ProductBallRule
from lamelab.solutions import xyz_gradient

W = CarlemanWeights(1.0, 2 / 3, 1.0)
RULE = ProductBallRule(24, 12, 24)


def bump(a=0.5, b=1.0, power=3):
    return radial_profile_field(polynomial_bump(a, b, power))


def test_weight_examples():
    psi, phi, g = weights_eval(W, np.zeros((1, 3)))
    assert psi[0] == 1.0 and phi[0] == pytest.approx(math.e - 1) and not g.any()
    edge = np.array([[0.6, 0.8, 0.0]])
    psi, phi, _ = weights_eval(W, edge)
    assert abs(psi[0]) < 1e-15 and abs(phi[0]) < 1e-15
    assert W.phi_star == pytest.approx(math.exp(5 / 9) - 1, rel=1e-15)
    assert np.allclose(W.grad_psi(np.array([[1.0, 2, 3]])), [[-2.0, -4, -6]])


def test_invalid_weights():
    for args in ((1.0, 1.0, 1.0), (1.0, 0.0, 1.0), (1.0, 0.5, 0.0)):
        with pytest.raises(ValueError):
            CarlemanWeights(*args)


def test_sublevel_examples():
    assert sublevel_radius(W, 0.0) == 1.0
    assert sublevel_radius(W, W.phi_star) == pytest.approx(2 / 3, rel=1e-12)
    expect = math.sqrt(1 - math.log((math.exp(5 / 9) + 1) / 2))
    assert sublevel_radius(W, W.phi_star / 2) == pytest.approx(expect, rel=1e-14)
    assert round(expect, 4) == 0.8271
    with pytest.raises(ValueError):
        sublevel_radius(W, -0.1)
    with pytest.raises(ValueError):
        sublevel_radius(W, 1.01 * W.phi_star)


def test_phi_range_on_closed_annulus():
    r = np.linspace(W.theta, W.R, 20001)
    phi = W.phi(np.stack([r, 0 * r, 0 * r], -1))
    assert abs(phi.min()) <= 1e-10 and abs(phi.max() - W.phi_star) <= 1e-10
    assert np.all(np.diff(phi) < 0)


@settings(max_examples=60, deadline=None)
@given(R=st.floats(0.5, 3.0), frac=st.floats(0.05, 0.95), s=st.floats(0.1, 5.0))
def test_sublevel_monotone_and_half_level_above_theta(R, frac, s):
    w = CarlemanWeights(R, frac * R, s)
    deltas = np.linspace(0, w.phi_star, 9)
    rho = [sublevel_radius(w, d) for d in deltas]
    assert all(b < a for a, b in zip(rho, rho[1:]))
    assert sublevel_radius(w, w.phi_star / 2) > w.theta
    assert half_level_radius(w) == pytest.approx(sublevel_radius(w, w.phi_star / 2), rel=1e-12)


def test_half_level_radius_without_overflow():
    w = CarlemanWeights(10.0, 4.0, 9.0)
    with pytest.raises(OverflowError):
        w.phi_star
    rho = half_level_radius(w)
    # for huge s D the half level sits ln 2 / s below the theta level in rho^2
    assert rho**2 == pytest.approx(w.theta**2 + math.log(2) / w.s, rel=1e-12)


def test_cutoff_conditions_dense():
    m = W.phi_star / 4
    chi, (r_in, r_out) = cutoff_build(W, m)
    r = np.linspace(0, W.R, 5001)
    pts = np.stack([r, 0 * r, 0 * r], -1)
    v = chi.value(pts)
    phi = W.phi(pts)
    assert np.all((v >= 0) & (v <= 1))
    assert np.all(v[(phi >= m) | (r <= W.theta)] == 1.0)
    assert np.all(v[phi <= m / 2] == 0.0)
    assert r_in == pytest.approx(sublevel_radius(W, m)) and r_out == pytest.approx(sublevel_radius(W, m / 2))
    bound = cutoff_gradient_bound(W, m)
    assert math.isfinite(bound) and bound == pytest.approx(15 / 8 / (r_out - r_in), rel=1e-3)
    with pytest.raises(ValueError):
        cutoff_build(W, W.phi_star / 2)


def test_cutoff_derivatives_match_differences(rng):
    chi, (a, b) = cutoff_build(W, W.phi_star / 4)
    d = rng.normal(size=(50, 3))
    x = d / np.linalg.norm(d, axis=1)[:, None] * rng.uniform(a, b, 50)[:, None]
    h = 1e-5
    E = np.eye(3)
    g = np.stack([(chi.value(x + h * e) - chi.value(x - h * e)) / (2 * h) for e in E], -1)
    H = np.stack([(chi.gradient(x + h * e) - chi.gradient(x - h * e)) / (2 * h) for e in E], -1)
    # the band is thin, so derivatives are large; compare relative to their size
    assert np.abs(g - chi.gradient(x)).max() < 1e-6 * np.abs(g).max()
    assert np.abs(H - chi.hessian(x)).max() < 1e-5 * np.abs(H).max()


def test_zero_field_sides():
    sd = carleman_sides(constant_coefficients(), W, 1.0, zero_field(), rule=RULE)
    assert (sd.t1, sd.t2, sd.t3, sd.rhs) == (0.0, 0.0, 0.0, 0.0)
    assert math.isnan(sd.ratio)


def test_bump_sides_positive_and_quadratic():
    w = CarlemanWeights(1.0, 0.5, 1.0)
    u = bump()
    a = carleman_sides(constant_coefficients(), w, 1.0, u, rule=RULE)
    b = carleman_sides(constant_coefficients(), w, 1.0, u.scaled(2.0), rule=RULE)
    for x, y in zip((a.t1, a.t2, a.t3, a.rhs), (b.t1, b.t2, b.t3, b.rhs)):
        assert x > 0 and math.isfinite(x)
        assert y == pytest.approx(4 * x, rel=1e-12)
    assert b.ratio == pytest.approx(a.ratio, rel=1e-12)


def test_support_violation():
    with pytest.raises(SupportError):
        carleman_sides(constant_coefficients(), CarlemanWeights(1.0, 0.5, 1.0), 1.0, xyz_gradient(), rule=RULE)


def test_t1_lower_bound_from_weight_minimum():
    w = CarlemanWeights(1.0, 0.5, 2.0)
    a, b = 0.6, 0.9
    u = radial_profile_field(polynomial_bump(a, b))
    min_phi = math.expm1(w.s * (1 - b * b))
    base = carleman_sides(constant_coefficients(), w, 1e-9, u, rule=RULE).t1 / (1e-9) ** 2 / w.s**4
    for tau in (1.0, 2.0, 4.0):
        t1 = carleman_sides(constant_coefficients(), w, tau, u, rule=RULE).t1
        assert t1 / (w.s**4 * base) >= tau**2 * math.exp(2 * tau * min_phi) * (1 - 1e-9)


def test_log_sides_survive_overflow():
    w = CarlemanWeights(1.0, 0.5, 4.0)
    logs = carleman_log_sides(constant_coefficients(), w, 64.0, bump(), rule=RULE)
    assert max(logs) > 709 and all(math.isfinite(v) for v in logs)
    with pytest.raises(OverflowError):
        carleman_sides(constant_coefficients(), w, 64.0, bump(), rule=RULE)


def test_scan_table_and_csv(tmp_path):
    w = CarlemanWeights(1.0, 0.5, 2.0)
    assert carleman_scan(smooth_coefficients(), w, bump(), [], rule=RULE) == []
    rows = carleman_scan(smooth_coefficients(), w, bump(), [1, 2, 4], rule=RULE)
    assert [r[0] for r in rows] == [1.0, 2.0, 4.0]
    assert all(np.isfinite(r).all() for r in map(np.array, rows))
    # ratio(4 tau) / ratio(tau) stays bounded
    assert 1e-3 < rows[2][5] / rows[0][5] < 1e3
    path = tmp_path / "scan.csv"
    write_scan_csv(rows, path)
    back = list(csv.reader(open(path)))
    assert back[0] == ["tau", "t1", "t2", "t3", "rhs", "ratio"]
    assert float(back[2][5]) == rows[1][5]
