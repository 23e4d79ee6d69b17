"""Coefficient fields (Lame moduli) and displacement fields with derivatives.

All callables are vectorized: they take points of shape (..., 3) and return
arrays with the same leading shape. Jacobians follow the gradient-matrix
convention ``jac[..., i, j] = d_j u_i``; hessians are
``hess[..., i, j, k] = d_j d_k u_i``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.stats import qmc

from .geometry import BallSpec


@dataclass(frozen=True)
class ScalarFieldC1:
    value: Callable
    gradient: Callable
    hessian: Optional[Callable] = None

    @classmethod
    def constant(cls, c):
        c = float(c)
        return cls(
            value=lambda x: np.full(np.shape(x)[:-1], c),
            gradient=lambda x: np.zeros(np.shape(x)),
            hessian=lambda x: np.zeros(np.shape(x) + (3,)),
        )

    @classmethod
    def affine(cls, c0, g):
        g = np.asarray(g, dtype=float)
        return cls(
            value=lambda x: c0 + np.asarray(x) @ g,
            gradient=lambda x: np.broadcast_to(g, np.shape(x)).copy(),
            hessian=lambda x: np.zeros(np.shape(x) + (3,)),
        )


@dataclass(frozen=True)
class CoefficientPair:
    mu: ScalarFieldC1
    lam: ScalarFieldC1
    alpha0: float
    beta0: float
    name: str = "custom"

    def __post_init__(self):
        if not (self.alpha0 > 0 and self.beta0 > 0):
            raise ValueError("ellipticity floors alpha0, beta0 must be positive")


def constant_coefficients(mu0=1.0, lam0=1.0):
    return CoefficientPair(
        ScalarFieldC1.constant(mu0),
        ScalarFieldC1.constant(lam0),
        alpha0=mu0,
        beta0=2 * mu0 + lam0,
        name="constant",
    )


def smooth_coefficients():
    """mu = 1 + 0.2 sin x1, lam = 0.5 + 0.1 x2.

    Floors hold on |x| <= 2: mu >= 0.8, 2 mu + lam >= 1.4.
    """
    mu = ScalarFieldC1(
        value=lambda x: 1.0 + 0.2 * np.sin(np.asarray(x)[..., 0]),
        gradient=lambda x: _stack_grad(x, 0.2 * np.cos(np.asarray(x)[..., 0]), 0),
    )
    lam = ScalarFieldC1.affine(0.5, (0.0, 0.1, 0.0))
    return CoefficientPair(mu, lam, alpha0=0.8, beta0=1.4, name="smooth")


def _stack_grad(x, comp, axis):
    g = np.zeros(np.shape(x))
    g[..., axis] = comp
    return g


COEFFICIENT_FAMILIES = {
    "constant": constant_coefficients,
    "smooth": smooth_coefficients,
}


@dataclass
class EllipticityReport:
    min_mu: float
    min_2mu_lam: float
    passed: bool
    worst_point: tuple
    worst_value: float


def validate_ellipticity(coeffs: CoefficientPair, region: BallSpec, samples=1024):
    """Check mu >= alpha0 and 2 mu + lam >= beta0 on a scrambled-free Sobol set."""
    if samples < 1:
        raise ValueError("need at least one sample")
    pts = _ball_samples(region, samples)
    mu = coeffs.mu.value(pts)
    s = 2 * mu + coeffs.lam.value(pts)
    i_mu, i_s = int(np.argmin(mu)), int(np.argmin(s))
    ok_mu = mu[i_mu] >= coeffs.alpha0
    ok_s = s[i_s] >= coeffs.beta0
    # report the point with the larger relative violation (or the mu minimum)
    if ok_mu and not ok_s:
        worst, val = pts[i_s], s[i_s]
    elif not ok_mu and ok_s:
        worst, val = pts[i_mu], mu[i_mu]
    elif (mu[i_mu] - coeffs.alpha0) / coeffs.alpha0 <= (s[i_s] - coeffs.beta0) / coeffs.beta0:
        worst, val = pts[i_mu], mu[i_mu]
    else:
        worst, val = pts[i_s], s[i_s]
    return EllipticityReport(float(mu[i_mu]), float(s[i_s]), bool(ok_mu and ok_s), tuple(worst.tolist()), float(val))


def _ball_samples(ball: BallSpec, n):
    # deterministic: unscrambled Sobol points mapped into the ball, plus the
    # center and the six axis extremes so boundary minima are not missed
    m = max(1, math.ceil(math.log2(max(n, 2))))
    u = qmc.Sobol(d=3, scramble=False).random_base2(m)[:n]
    r = ball.radius * u[:, 0] ** (1 / 3)
    c = 1 - 2 * u[:, 1]
    az = 2 * np.pi * u[:, 2]
    s = np.sqrt(1 - c**2)
    pts = np.stack([r * s * np.cos(az), r * s * np.sin(az), r * c], axis=-1)
    extra = np.vstack([np.zeros(3), ball.radius * np.eye(3), -ball.radius * np.eye(3)])
    return np.vstack([extra, pts]) + np.asarray(ball.center)


@dataclass(frozen=True)
class DisplacementField:
    value: Callable
    jacobian: Callable
    hessian: Callable
    name: str = "field"

    def divergence(self, x):
        return np.trace(self.jacobian(x), axis1=-2, axis2=-1)

    def __add__(self, other):
        return DisplacementField(
            lambda x: self.value(x) + other.value(x),
            lambda x: self.jacobian(x) + other.jacobian(x),
            lambda x: self.hessian(x) + other.hessian(x),
            name=f"({self.name}+{other.name})",
        )

    def scaled(self, c):
        return DisplacementField(
            lambda x: c * self.value(x),
            lambda x: c * self.jacobian(x),
            lambda x: c * self.hessian(x),
            name=f"{c}*{self.name}",
        )


def zero_field():
    return DisplacementField(
        lambda x: np.zeros(np.shape(x)),
        lambda x: np.zeros(np.shape(x) + (3,)),
        lambda x: np.zeros(np.shape(x) + (3, 3)),
        name="zero",
    )


def constant_field(c):
    c = np.asarray(c, dtype=float)
    return DisplacementField(
        lambda x: np.broadcast_to(c, np.shape(x)).copy(),
        lambda x: np.zeros(np.shape(x) + (3,)),
        lambda x: np.zeros(np.shape(x) + (3, 3)),
        name="constant",
    )


def linear_field(A, b=(0.0, 0.0, 0.0)):
    """u(x) = A x + b."""
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    return DisplacementField(
        lambda x: np.asarray(x) @ A.T + b,
        lambda x: np.broadcast_to(A, np.shape(x)[:-1] + (3, 3)).copy(),
        lambda x: np.zeros(np.shape(x) + (3, 3)),
        name="linear",
    )


class PolyVectorField:
    """Vector field with polynomial components ``sum c[i, (a,b,c)] x^a y^b z^c``.

    Derivatives are exact (coefficient arithmetic).
    """

    def __init__(self, terms):
        # terms: list (per component) of dict {(a, b, c): coeff}
        self.terms = [dict(t) for t in terms]

    @classmethod
    def random(cls, degree, rng):
        exps = [e for e in itertools.product(range(degree + 1), repeat=3) if sum(e) <= degree]
        return cls([{e: float(rng.normal()) for e in exps} for _ in range(3)])

    @staticmethod
    def _eval(terms, x, deriv):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for exp, c in terms.items():
            coef = c
            e = list(exp)
            for axis in deriv:
                coef *= e[axis]
                e[axis] -= 1
                if coef == 0:
                    break
            if coef == 0:
                continue
            out = out + coef * x[..., 0] ** e[0] * x[..., 1] ** e[1] * x[..., 2] ** e[2]
        return out

    def value(self, x):
        return np.stack([self._eval(t, x, ()) for t in self.terms], axis=-1)

    def jacobian(self, x):
        return np.stack(
            [np.stack([self._eval(t, x, (j,)) for j in range(3)], axis=-1) for t in self.terms],
            axis=-2,
        )

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        out = np.empty(x.shape[:-1] + (3, 3, 3))
        for i, t in enumerate(self.terms):
            for j in range(3):
                for k in range(j, 3):
                    d = self._eval(t, x, (j, k))
                    out[..., i, j, k] = d
                    out[..., i, k, j] = d
        return out

    def as_field(self, name="polynomial"):
        return DisplacementField(self.value, self.jacobian, self.hessian, name=name)


def product_field(chi: ScalarFieldC1, v: DisplacementField):
    """The field chi * v by the product rule (chi needs a hessian)."""
    if chi.hessian is None:
        raise ValueError("product_field needs second derivatives of chi")

    def value(x):
        return chi.value(x)[..., None] * v.value(x)

    def jacobian(x):
        return chi.value(x)[..., None, None] * v.jacobian(x) + v.value(x)[..., :, None] * chi.gradient(x)[..., None, :]

    def hessian(x):
        c, g, H = chi.value(x), chi.gradient(x), chi.hessian(x)
        vv, J, Hv = v.value(x), v.jacobian(x), v.hessian(x)
        return (
            c[..., None, None, None] * Hv
            + J[..., :, :, None] * g[..., None, None, :]
            + J[..., :, None, :] * g[..., None, :, None]
            + vv[..., :, None, None] * H[..., None, :, :]
        )

    return DisplacementField(value, jacobian, hessian, name=f"chi*{v.name}")


def radial_profile_field(profile, direction=(1.0, 0.0, 0.0), center=(0.0, 0.0, 0.0), name="radial"):
    """u(x) = eta(|x - c|) * direction, with ``profile(r) -> (eta, eta', eta'')``."""
    e = np.asarray(direction, dtype=float)
    c0 = np.asarray(center, dtype=float)

    def parts(x):
        d = np.asarray(x, dtype=float) - c0
        r = np.linalg.norm(d, axis=-1)
        safe = np.where(r > 0, r, 1.0)
        n = d / safe[..., None]
        eta, d1, d2 = profile(r)
        return r, safe, n, eta, d1, d2

    def value(x):
        _, _, _, eta, _, _ = parts(x)
        return eta[..., None] * e

    def jacobian(x):
        _, _, n, _, d1, _ = parts(x)
        return e[:, None] * (d1[..., None] * n)[..., None, :]

    def hessian(x):
        r, safe, n, _, d1, d2 = parts(x)
        nn = n[..., :, None] * n[..., None, :]
        ratio = np.where(r > 0, d1 / safe, d2)
        H = d2[..., None, None] * nn + ratio[..., None, None] * (np.eye(3) - nn)
        return e[:, None, None] * H[..., None, :, :]

    return DisplacementField(value, jacobian, hessian, name=name)


def derivative_consistency(field: DisplacementField, probes, step=1e-4):
    """Worst relative mismatch between declared and finite-difference derivatives.

    The scale for the relative error is the largest declared entry (floored
    at 1) so that vanishing derivatives are compared absolutely.
    """
    x = np.atleast_2d(np.asarray(probes, dtype=float))
    J = field.jacobian(x)
    H = field.hessian(x)
    fd_J = np.empty_like(J)
    fd_H = np.empty_like(H)
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        fd_J[..., j] = (field.value(x + e) - field.value(x - e)) / (2 * step)
        fd_H[..., j, :] = (field.jacobian(x + e) - field.jacobian(x - e)) / (2 * step)
    scale_J = max(1.0, float(np.abs(J).max()))
    scale_H = max(1.0, float(np.abs(H).max()))
    return max(float(np.abs(J - fd_J).max()) / scale_J, float(np.abs(H - fd_H).max()) / scale_H)
