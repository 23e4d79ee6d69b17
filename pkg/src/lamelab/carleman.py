"""Carleman weights psi, phi, the sublevel family, the cutoff, and both sides
of the weighted estimate evaluated by quadrature."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .fields import CoefficientPair, DisplacementField, ScalarFieldC1
from .geometry import AnnulusSpec, ProductBallRule, log_weighted_integral
from .lame import apply_lame_principal

SUPPORT_TOL = 1e-8


class SupportError(ValueError):
    pass


@dataclass(frozen=True)
class CarlemanWeights:
    """psi = R^2 - |x|^2 and phi = exp(s psi) - 1 on the annulus theta < |x| < R."""

    R: float
    theta: float
    s: float

    def __post_init__(self):
        if not 0 < self.theta < self.R:
            raise ValueError("need 0 < theta < R")
        if not self.s > 0:
            raise ValueError("s must be positive")

    def psi(self, x):
        x = np.asarray(x, dtype=float)
        return self.R**2 - np.einsum("...i,...i", x, x)

    def phi(self, x):
        return np.expm1(self.s * self.psi(x))

    def grad_psi(self, x):
        return -2.0 * np.asarray(x, dtype=float)

    @property
    def phi_star(self):
        return math.expm1(self.s * (self.R**2 - self.theta**2))

    @property
    def annulus(self):
        return AnnulusSpec((0.0, 0.0, 0.0), self.theta, self.R)


def weights_eval(w: CarlemanWeights, x):
    return w.psi(x), w.phi(x), w.grad_psi(x)


def sublevel_radius(w: CarlemanWeights, delta):
    """Outer radius rho of omega(delta) = {theta < |x| < rho} = {phi > delta}."""
    if not 0 <= delta <= w.phi_star * (1 + 1e-15):
        raise ValueError(f"delta must lie in [0, phi*] = [0, {w.phi_star}]")
    rho2 = w.R**2 - math.log1p(delta) / w.s
    return math.sqrt(max(rho2, w.theta**2)) if delta >= w.phi_star else math.sqrt(rho2)


def half_level_radius(w: CarlemanWeights):
    """sublevel_radius(w, phi*/2) evaluated without forming phi*.

    ln(1 + phi*/2) = s D + ln((1 + e^(-s D)) / 2) with D = R^2 - theta^2, so the
    radius stays finite even when phi* itself overflows.
    """
    D = w.R**2 - w.theta**2
    log_level = w.s * D + math.log1p(math.exp(-w.s * D)) - math.log(2.0)
    return math.sqrt(w.R**2 - log_level / w.s)


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t**3 * (10 - 15 * t + 6 * t**2), 30 * t**2 * (1 - t) ** 2, 60 * t * (1 - t) * (1 - 2 * t)


def cutoff_build(w: CarlemanWeights, m):
    """chi = 1 on omega(m) and inside B_theta, chi = 0 outside omega(m/2).

    Quintic smoothstep in |x| between the two sublevel radii; C^2.
    """
    if not 0 < m < w.phi_star / 2:
        raise ValueError("cutoff level must satisfy 0 < m < phi*/2")
    r_in = sublevel_radius(w, m)
    r_out = sublevel_radius(w, m / 2)
    width = r_out - r_in

    def radial(x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        S, dS, d2S = _smoothstep((r - r_in) / width)
        return x, r, 1.0 - S, -dS / width, -d2S / width**2

    def value(x):
        return radial(x)[2]

    def gradient(x):
        x, r, _, d1, _ = radial(x)
        safe = np.where(r > 0, r, 1.0)
        return (d1 / safe)[..., None] * x

    def hessian(x):
        x, r, _, d1, d2 = radial(x)
        safe = np.where(r > 0, r, 1.0)
        n = x / safe[..., None]
        nn = n[..., :, None] * n[..., None, :]
        return d2[..., None, None] * nn + (d1 / safe)[..., None, None] * (np.eye(3) - nn)

    chi = ScalarFieldC1(value, gradient, hessian)
    return chi, (r_in, r_out)


def cutoff_gradient_bound(w: CarlemanWeights, m, samples=4001):
    chi, _ = cutoff_build(w, m)
    r = np.linspace(0.0, w.R, samples)
    pts = np.stack([r, np.zeros_like(r), np.zeros_like(r)], axis=-1)
    return float(np.linalg.norm(chi.gradient(pts), axis=-1).max())


def polynomial_bump(a, b, power=3, scale=None):
    """Radial profile ((r-a)(b-r))^power on (a, b), zero elsewhere; C^(power-1)."""
    scale = scale if scale is not None else (2.0 / (b - a)) ** (2 * power)

    def profile(r):
        r = np.asarray(r, dtype=float)
        inside = (r > a) & (r < b)
        q = (r - a) * (b - r)
        dq = a + b - 2 * r
        p = power
        eta = np.where(inside, q**p, 0.0)
        d1 = np.where(inside, p * q ** (p - 1) * dq, 0.0)
        d2 = np.where(inside, p * (p - 1) * q ** max(p - 2, 0) * dq**2 - 2 * p * q ** (p - 1), 0.0)
        return scale * eta, scale * d1, scale * d2

    return profile


@dataclass
class CarlemanSides:
    tau: float
    t1: float
    t2: float
    t3: float
    rhs: float

    @property
    def ratio(self):
        return (self.t1 + self.t2 + self.t3) / self.rhs if self.rhs > 0 else math.nan


def _check_support(u: DisplacementField, ann: AnnulusSpec, rule: ProductBallRule):
    dirs, _ = rule.sphere()
    c = np.asarray(ann.center)
    worst = 0.0
    for rad in (ann.r_inner, ann.r_outer):
        pts = c + rad * dirs
        worst = max(
            worst,
            float(np.abs(u.value(pts)).max()),
            float(np.abs(u.jacobian(pts)).max()),
            float(np.abs(u.hessian(pts)).max()),
        )
    if worst > SUPPORT_TOL:
        raise SupportError(f"field or its derivatives do not vanish on the annulus boundary (max {worst:.3e})")


def carleman_log_sides(coeffs: CoefficientPair, w: CarlemanWeights, tau, u: DisplacementField,
                       ann: AnnulusSpec = None, rule: ProductBallRule = ProductBallRule(n_r=48, n_p=24, n_a=32)):
    """Natural logs of (t1, t2, t3, rhs); -inf marks a vanishing term."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    ann = ann or w.annulus
    _check_support(u, ann, rule)
    s = w.s

    def lw(extra):
        return lambda x: 2 * tau * w.phi(x) + extra(x)

    zero = lambda x: 0.0
    l1 = log_weighted_integral(lambda x: (u.value(x) ** 2).sum(-1), lw(lambda x: 2 * s * w.psi(x)), ann, rule)
    l2 = log_weighted_integral(lambda x: (u.jacobian(x) ** 2).sum((-1, -2)), lw(zero), ann, rule)
    l3 = log_weighted_integral(lambda x: (u.hessian(x) ** 2).sum((-1, -2, -3)), lw(lambda x: -2 * s * w.psi(x)), ann, rule)
    lr = log_weighted_integral(lambda x: (apply_lame_principal(coeffs, u, x) ** 2).sum(-1), lw(zero), ann, rule)
    return (
        l1 + 2 * math.log(tau) + 4 * math.log(s),
        l2 + 2 * math.log(s),
        l3 - 2 * math.log(tau),
        lr,
    )


def carleman_sides(coeffs, w, tau, u, ann=None, rule=ProductBallRule(n_r=48, n_p=24, n_a=32)):
    logs = carleman_log_sides(coeffs, w, tau, u, ann, rule)
    if max(logs) > 709:
        raise OverflowError("Carleman integrals exceed float range; use carleman_log_sides")
    vals = [math.exp(v) if v > -math.inf else 0.0 for v in logs]
    return CarlemanSides(tau, *vals)


def carleman_scan(coeffs, w, u, tau_list, ann=None, rule=ProductBallRule(n_r=48, n_p=24, n_a=32)):
    """Rows (tau, t1, t2, t3, rhs, ratio) in input order."""
    rows = []
    for tau in tau_list:
        sd = carleman_sides(coeffs, w, tau, u, ann, rule)
        rows.append((float(tau), sd.t1, sd.t2, sd.t3, sd.rhs, sd.ratio))
    return rows


def write_scan_csv(rows, path):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["tau", "t1", "t2", "t3", "rhs", "ratio"])
        for row in rows:
            wr.writerow([repr(float(v)) for v in row])
