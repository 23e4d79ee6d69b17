"""Balls, annuli, Cartesian grids and quadrature over them.

Two backends are provided: a spherical product rule for analytically defined
integrands, and a masked midpoint sum on a :class:`Grid3` for grid samples.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

# largest exponent that np.exp can take without overflowing a float64
_LOG_MAX = 709.0


class QuadratureError(ValueError):
    """Raised when an integrand produces a non-finite value at a node."""


@dataclass(frozen=True)
class BallSpec:
    center: tuple = (0.0, 0.0, 0.0)
    radius: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"ball radius must be positive, got {self.radius}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def volume(self):
        return 4.0 * math.pi * self.radius**3 / 3.0


@dataclass(frozen=True)
class AnnulusSpec:
    center: tuple = (0.0, 0.0, 0.0)
    r_inner: float = 0.5
    r_outer: float = 1.0

    def __post_init__(self):
        if not 0 < self.r_inner < self.r_outer:
            raise ValueError(
                f"annulus needs 0 < r_inner < r_outer, got {self.r_inner}, {self.r_outer}"
            )
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def volume(self):
        return 4.0 * math.pi * (self.r_outer**3 - self.r_inner**3) / 3.0


@dataclass(frozen=True)
class Grid3:
    """Uniform node grid; node (i, j, k) sits at origin + h * (i, j, k)."""

    origin: tuple
    h: float
    dims: tuple

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")
        if len(self.dims) != 3 or min(self.dims) < 3:
            raise ValueError(f"grid needs at least 3 nodes per axis, got {self.dims}")
        object.__setattr__(self, "origin", tuple(float(c) for c in self.origin))
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))

    @classmethod
    def cube(cls, lo, hi, h):
        """Grid covering [lo, hi]^3; (hi - lo) / h must be an integer."""
        n = round((hi - lo) / h)
        if not math.isclose(n * h, hi - lo, rel_tol=1e-9):
            raise ValueError("box length is not a multiple of h")
        return cls((lo, lo, lo), (hi - lo) / n, (n + 1,) * 3)

    @property
    def size(self):
        nx, ny, nz = self.dims
        return nx * ny * nz

    def axes(self):
        return [self.origin[a] + self.h * np.arange(self.dims[a]) for a in range(3)]

    @cached_property
    def points(self):
        """Node coordinates, shape (nx, ny, nz, 3)."""
        return np.stack(np.meshgrid(*self.axes(), indexing="ij"), axis=-1)

    def interior_mask(self):
        mask = np.zeros(self.dims, dtype=bool)
        mask[1:-1, 1:-1, 1:-1] = True
        return mask

    def ball_mask(self, ball: BallSpec):
        d = self.points - np.asarray(ball.center)
        return np.einsum("...i,...i", d, d) < ball.radius**2

    def shell_mask(self, r_inner, r_outer, center=(0.0, 0.0, 0.0)):
        d = np.linalg.norm(self.points - np.asarray(center), axis=-1)
        return (d > r_inner) & (d < r_outer)


@dataclass(frozen=True)
class ProductBallRule:
    """Spherical product rule: Gauss in radius (weight rho^2), Gauss-Legendre
    in cos(polar angle), uniform periodic rule in azimuth."""

    n_r: int = 8
    n_p: int = 12
    n_a: int = 24

    def __post_init__(self):
        if self.n_r < 2 or self.n_p < 2 or self.n_a < 4:
            raise ValueError("product rule needs n_r >= 2, n_p >= 2, n_a >= 4")

    def sphere(self):
        """Unit-sphere nodes (m, 3) and weights summing to 4 pi."""
        c, wc = roots_legendre(self.n_p)
        az = 2.0 * np.pi * np.arange(self.n_a) / self.n_a
        s = np.sqrt(1.0 - c**2)
        pts = np.stack(
            [
                np.outer(s, np.cos(az)),
                np.outer(s, np.sin(az)),
                np.outer(c, np.ones_like(az)),
            ],
            axis=-1,
        ).reshape(-1, 3)
        w = np.outer(wc, np.full(self.n_a, 2.0 * np.pi / self.n_a)).ravel()
        return pts, w

    def ball_nodes(self, ball: BallSpec):
        # Gauss-Jacobi(0, 2) absorbs the rho^2 Jacobian exactly
        t, wt = roots_jacobi(self.n_r, 0.0, 2.0)
        R = ball.radius
        rho = 0.5 * R * (1.0 + t)
        w_rho = wt * (0.5 * R) ** 3
        return self._assemble(rho, w_rho, ball.center)

    def shell_nodes(self, ann: AnnulusSpec):
        t, wt = roots_legendre(self.n_r)
        a, b = ann.r_inner, ann.r_outer
        rho = 0.5 * (b - a) * t + 0.5 * (a + b)
        w_rho = 0.5 * (b - a) * wt * rho**2
        return self._assemble(rho, w_rho, ann.center)

    def _assemble(self, rho, w_rho, center):
        dirs, w_dir = self.sphere()
        pts = rho[:, None, None] * dirs[None, :, :] + np.asarray(center)
        w = w_rho[:, None] * w_dir[None, :]
        return pts.reshape(-1, 3), w.ravel()


def _checked(values, pts):
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        i = int(np.argwhere(bad.reshape(len(pts), -1).any(axis=1))[0, 0])
        raise QuadratureError(f"non-finite integrand at node {pts[i].tolist()}")
    return values


def _wsum(w, values):
    # math.fsum keeps the result independent of summation order
    return math.fsum(np.asarray(w * values, dtype=float).ravel())


def integrate_ball(f, ball: BallSpec, rule: ProductBallRule = ProductBallRule()):
    """Integral of a scalar point function over a ball. ``f`` maps (n, 3) -> (n,)."""
    pts, w = rule.ball_nodes(ball)
    return _wsum(w, _checked(f(pts), pts))


def l2_mass_ball(u, ball: BallSpec, rule: ProductBallRule = ProductBallRule()):
    """Integral of |u|^2 over the ball for a displacement field ``u``."""
    pts, w = rule.ball_nodes(ball)
    v = _checked(u.value(pts), pts)
    return _wsum(w, np.einsum("ni,ni->n", v, v))


def log_weighted_integral(g, log_w, ann: AnnulusSpec, rule: ProductBallRule = ProductBallRule()):
    """log of the integral of exp(log_w) * g over an annulus, g >= 0.

    Returns -inf when the integral vanishes.
    """
    pts, w = rule.shell_nodes(ann)
    gv = _checked(g(pts), pts)
    lw = _checked(log_w(pts), pts)
    shift = float(lw.max())
    total = _wsum(w, gv * np.exp(lw - shift))
    if total <= 0.0:
        return -math.inf
    return shift + math.log(total)


def weighted_l2_annulus(g, ann: AnnulusSpec, rule: ProductBallRule = ProductBallRule(), weight=None, log_weight=None):
    """Integral of w * g over the annulus.

    The weight may be passed directly (``weight``, must be positive) or in log
    form (``log_weight``), in which case the exponent is accumulated before a
    single exponential.
    """
    if weight is not None and log_weight is not None:
        raise ValueError("pass either weight or log_weight, not both")
    pts, w = rule.shell_nodes(ann)
    gv = _checked(g(pts), pts)
    if log_weight is None:
        wv = np.ones(len(pts)) if weight is None else _checked(weight(pts), pts)
        if (wv <= 0).any():
            raise ValueError("annulus weight must be positive")
        return _wsum(w, wv * gv)
    lw = _checked(log_weight(pts), pts)
    shift = float(lw.max())
    total = _wsum(w, gv * np.exp(lw - shift))
    if total != 0.0 and shift + math.log(abs(total)) > _LOG_MAX:
        raise OverflowError(
            "weighted integral exceeds float range; rescale (compare log values "
            "from log_weighted_integral instead)"
        )
    return total * math.exp(shift)


def ball_moment(a, b, c, radius=1.0):
    """Closed-form integral of x^a y^b z^c over the centered ball."""
    if a % 2 or b % 2 or c % 2:
        return 0.0
    al, be, ga = (a + 1) / 2, (b + 1) / 2, (c + 1) / 2
    d = a + b + c
    log_sphere = math.lgamma(al) + math.lgamma(be) + math.lgamma(ga) - math.lgamma(al + be + ga)
    return 2.0 * math.exp(log_sphere) * radius ** (d + 3) / (d + 3)


def grid_derivatives(values, h):
    """Central-difference jacobian and hessians of nodal vector data.

    ``values`` has shape (nx, ny, nz, 3). Returns arrays on the interior nodes
    (shape reduced by 2 per axis): jac[..., i, j] = d_j u_i and
    hess[..., i, j, k] = d_j d_k u_i.
    """
    v = np.asarray(values, dtype=float)
    core = (slice(1, -1),) * 3

    def shifted(offset):
        sl = tuple(slice(1 + o, v.shape[a] - 1 + o) for a, o in enumerate(offset))
        return v[sl]

    e = np.eye(3, dtype=int)
    jac = np.stack([(shifted(e[j]) - shifted(-e[j])) / (2 * h) for j in range(3)], axis=-1)
    hess = np.empty(jac.shape[:-2] + (3, 3, 3))
    center = v[core]
    for j in range(3):
        hess[..., j, j] = (shifted(e[j]) - 2 * center + shifted(-e[j])) / h**2
        for k in range(j + 1, 3):
            d = (
                shifted(e[j] + e[k]) - shifted(e[j] - e[k])
                - shifted(-e[j] + e[k]) + shifted(-e[j] - e[k])
            ) / (4 * h**2)
            hess[..., j, k] = d
            hess[..., k, j] = d
    return jac, hess


def sobolev_norms_grid(values, grid: Grid3, mask):
    """(L2 norm, H1 seminorm, H2 seminorm) of nodal vector data over a mask.

    Each masked node stands for one cell of volume h^3 (midpoint rule); the
    boundary error of the masked region is O(h).
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != grid.dims:
        raise ValueError("mask shape does not match the grid")
    if mask[[0, -1], :, :].any() or mask[:, [0, -1], :].any() or mask[:, :, [0, -1]].any():
        raise ValueError("region mask touches the grid boundary; central differences need a margin")
    v = np.asarray(values, dtype=float)
    jac, hess = grid_derivatives(v, grid.h)
    inner = mask[1:-1, 1:-1, 1:-1]
    dv = grid.h**3
    l2 = math.sqrt(dv * math.fsum((v[mask] ** 2).ravel()))
    h1 = math.sqrt(dv * math.fsum((jac[inner] ** 2).ravel()))
    h2 = math.sqrt(dv * math.fsum((hess[inner] ** 2).ravel()))
    return l2, h1, h2
