import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lamelab.fields import linear_field, constant_field
from lamelab.solutions import xyz_gradient
from lamelab.geometry import (
    AnnulusSpec, BallSpec, Grid3, ProductBallRule, QuadratureError, ball_moment, integrate_ball,
    l2_mass_ball, log_weighted_integral, sobolev_norms_grid, weighted_l2_annulus,
)

UNIT = BallSpec((0, 0, 0), 1.0)


def test_specs_reject_bad_geometry():
    with pytest.raises(ValueError):
        BallSpec((0, 0, 0), 0.0)
    with pytest.raises(ValueError):
        AnnulusSpec((0, 0, 0), 1.0, 0.5)
    with pytest.raises(ValueError):
        Grid3((0, 0, 0), 0.1, (2, 5, 5))
    with pytest.raises(ValueError):
        ProductBallRule(n_r=1)


def test_weights_positive_and_sum_to_volume():
    rule = ProductBallRule(5, 8, 16)
    for R in (0.3, 1.0, 2.5):
        _, w = rule.ball_nodes(BallSpec((1, -2, 0.5), R))
        assert (w > 0).all()
        assert math.isclose(w.sum(), 4 * math.pi * R**3 / 3, rel_tol=1e-12)


def test_ball_examples():
    rule = ProductBallRule(5, 8, 16)
    assert math.isclose(integrate_ball(lambda x: np.ones(len(x)), UNIT, rule), 4 * math.pi / 3, rel_tol=1e-12)
    assert math.isclose(integrate_ball(lambda x: (x**2).sum(-1), UNIT, rule), 4 * math.pi / 5, rel_tol=1e-12)
    val = integrate_ball(lambda x: x[:, 0] ** 2 * x[:, 1] ** 2, UNIT, rule)
    assert math.isclose(val, 4 * math.pi / 105, rel_tol=1e-12)


def test_x2y2_monte_carlo_oracle():
    # independent check of the closed form 4 pi / 105 by rejection sampling
    rng = np.random.default_rng(7)
    x = rng.uniform(-1, 1, (2_000_000, 3))
    inside = (x**2).sum(1) < 1
    est = 8 * np.mean(np.where(inside, x[:, 0] ** 2 * x[:, 1] ** 2, 0.0))
    assert abs(est - 4 * math.pi / 105) < 4e-4
    assert math.isclose(ball_moment(2, 2, 0), 4 * math.pi / 105, rel_tol=1e-14)


def test_l2_mass_examples(xyz):
    rule = ProductBallRule(5, 8, 16)
    assert l2_mass_ball(constant_field((0, 0, 0)), UNIT, rule) == 0.0
    assert math.isclose(l2_mass_ball(xyz, UNIT, rule), 4 * math.pi / 35, rel_tol=1e-12)
    for r in (0.25, 0.7, 1.9):
        assert math.isclose(l2_mass_ball(xyz, BallSpec((0, 0, 0), r), rule), 4 * math.pi / 35 * r**7, rel_tol=1e-12)


def test_non_finite_integrand_names_node():
    with pytest.raises(QuadratureError, match="node"):
        integrate_ball(lambda x: 1.0 / x[:, 0] * 0 + np.where(x[:, 2] > 0.5, np.nan, 1.0), UNIT)


@pytest.mark.parametrize("n_r,n_p", [(2, 2), (3, 5), (5, 8), (6, 6)])
def test_monomial_exactness(n_r, n_p):
    rule = ProductBallRule(n_r, n_p, 2 * max(n_r, n_p) + 2)
    dmax = 2 * min(n_r, n_p) - 2
    for a in range(dmax + 1):
        for b in range(dmax + 1 - a):
            for c in range(dmax + 1 - a - b):
                got = integrate_ball(lambda x: x[:, 0] ** a * x[:, 1] ** b * x[:, 2] ** c, UNIT, rule)
                ref = ball_moment(a, b, c)
                if ref == 0.0:
                    assert abs(got) < 1e-13
                else:
                    assert math.isclose(got, ref, rel_tol=1e-10)


@settings(max_examples=30, deadline=None)
@given(t=st.floats(0.1, 5.0), r=st.floats(0.1, 2.0), a=st.integers(0, 4), b=st.integers(0, 4))
def test_scaling_law(t, r, a, b):
    f = lambda x: x[:, 0] ** a * x[:, 1] ** b + 1.0
    big = integrate_ball(f, BallSpec((0, 0, 0), t * r))
    small = integrate_ball(lambda x: f(t * x), BallSpec((0, 0, 0), r))
    assert math.isclose(big, t**3 * small, rel_tol=1e-12)


@settings(max_examples=25, deadline=None)
@given(r=st.floats(0.05, 3.0))
def test_homogeneity_exponent(r):
    xyz = xyz_gradient()
    ratio = l2_mass_ball(xyz, BallSpec((0, 0, 0), r)) / l2_mass_ball(xyz, UNIT)
    assert math.isclose(ratio, r**7, rel_tol=1e-10)


def test_annulus_examples():
    ann = AnnulusSpec((0, 0, 0), 0.5, 1.0)
    rule = ProductBallRule(8, 8, 16)
    assert math.isclose(weighted_l2_annulus(lambda x: np.ones(len(x)), ann, rule), 7 * math.pi / 6, rel_tol=1e-12)
    assert weighted_l2_annulus(lambda x: np.zeros(len(x)), ann, rule) == 0.0
    got = weighted_l2_annulus(lambda x: np.ones(len(x)), ann, rule, weight=lambda x: 1.0 / (x**2).sum(-1))
    assert math.isclose(got, 2 * math.pi, rel_tol=1e-12)


def test_log_weight_matches_direct_and_overflows_cleanly():
    ann = AnnulusSpec((0, 0, 0), 0.5, 1.0)
    g = lambda x: (x**2).sum(-1)
    direct = weighted_l2_annulus(g, ann, weight=lambda x: np.exp(3 * x[:, 0]))
    logged = weighted_l2_annulus(g, ann, log_weight=lambda x: 3 * x[:, 0])
    assert math.isclose(direct, logged, rel_tol=1e-13)
    big = lambda x: 2000.0 + x[:, 0]
    with pytest.raises(OverflowError, match="rescale"):
        weighted_l2_annulus(g, ann, log_weight=big)
    lv = log_weighted_integral(g, big, ann)
    assert math.isclose(lv - 2000.0, math.log(weighted_l2_annulus(g, ann, log_weight=lambda x: x[:, 0])), rel_tol=1e-12)
    with pytest.raises(ValueError):
        weighted_l2_annulus(g, ann, weight=lambda x: -np.ones(len(x)))


def test_sobolev_grid_constant_and_linear():
    grid = Grid3.cube(-1.25, 1.25, 1 / 16)
    mask = grid.ball_mask(UNIT)
    c = np.array([1.0, -2.0, 0.5])
    vals = np.broadcast_to(c, grid.dims + (3,))
    l2, h1, h2 = sobolev_norms_grid(vals, grid, mask)
    assert math.isclose(l2, math.sqrt(mask.sum() * grid.h**3) * np.linalg.norm(c), rel_tol=1e-12)
    assert h1 == 0 and h2 == 0
    A = np.arange(9.0).reshape(3, 3) / 9
    vals = linear_field(A).value(grid.points)
    _, h1, h2 = sobolev_norms_grid(vals, grid, mask)
    assert h2 < 1e-10
    assert math.isclose(h1, math.sqrt(mask.sum() * grid.h**3) * np.linalg.norm(A), rel_tol=1e-10)


def test_sobolev_grid_xyz_l2(xyz):
    grid = Grid3.cube(-1.0 - 2 / 64, 1.0 + 2 / 64, 1 / 64)
    l2, h1, h2 = sobolev_norms_grid(xyz.value(grid.points), grid, grid.ball_mask(UNIT))
    assert abs(l2 / math.sqrt(4 * math.pi / 35) - 1) < 0.02
    assert h1 > 0 and h2 > 0


def test_sobolev_grid_rejects_boundary_mask():
    grid = Grid3.cube(-1, 1, 0.25)
    with pytest.raises(ValueError, match="boundary"):
        sobolev_norms_grid(np.zeros(grid.dims + (3,)), grid, grid.ball_mask(BallSpec((0, 0, 0), 1.5)))
