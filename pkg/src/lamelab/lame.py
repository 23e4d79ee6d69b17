"""Pointwise Lame operators, the first-order factorization A, A_alpha, and commutators.

Everything here consumes declared derivatives of the fields; there is no
internal finite differencing.
"""
from __future__ import annotations

import numpy as np

from .fields import CoefficientPair, DisplacementField, ScalarFieldC1


class EllipticityError(ValueError):
    pass


def _laplacian(H):
    return np.einsum("...ijj->...i", H)


def _grad_div(H):
    return np.einsum("...iik->...k", H)


def principal_from_jet(mu, lam, H):
    """mu Lap u + (lam + mu) grad div u from the hessian jet."""
    return mu[..., None] * _laplacian(H) + (lam + mu)[..., None] * _grad_div(H)


def apply_lame_principal(coeffs: CoefficientPair, u: DisplacementField, x):
    """L u = mu Lap u + (lam + mu) grad div u."""
    return principal_from_jet(coeffs.mu.value(x), coeffs.lam.value(x), u.hessian(x))


def lower_order_terms(coeffs: CoefficientPair, u: DisplacementField, x):
    """(grad u + grad u^T) grad mu + (div u) grad lam."""
    J = u.jacobian(x)
    sym = J + np.swapaxes(J, -1, -2)
    div = np.trace(J, axis1=-2, axis2=-1)
    return np.einsum("...ij,...j->...i", sym, coeffs.mu.gradient(x)) + div[..., None] * coeffs.lam.gradient(x)


def apply_lame_full(coeffs: CoefficientPair, u: DisplacementField, x):
    """div(mu (grad u + grad u^T)) + grad(lam div u), expanded pointwise."""
    return apply_lame_principal(coeffs, u, x) + lower_order_terms(coeffs, u, x)


def curl_from_jac(J):
    return np.stack(
        [J[..., 2, 1] - J[..., 1, 2], J[..., 0, 2] - J[..., 2, 0], J[..., 1, 0] - J[..., 0, 1]],
        axis=-1,
    )


def apply_A(v1_jac, v2_grad):
    """A(d)(v1, v2) = (curl v1 + grad v2, -div v1) from first derivatives."""
    v1_jac = np.asarray(v1_jac, dtype=float)
    return curl_from_jac(v1_jac) + np.asarray(v2_grad, dtype=float), -np.trace(v1_jac, axis1=-2, axis2=-1)


def alpha_field(coeffs: CoefficientPair, x):
    """alpha = (2 mu + lam) / mu."""
    mu = coeffs.mu.value(x)
    if np.any(mu <= 0):
        raise EllipticityError("mu must be positive to form alpha = (2 mu + lam)/mu")
    return (2 * mu + coeffs.lam.value(x)) / mu


def apply_A_alpha(coeffs: CoefficientPair, x, v1_jac, v2_grad):
    """A_alpha(x, d)(v1, v2) = (curl v1 + alpha grad v2, -div v1); alpha is not differentiated."""
    alpha = alpha_field(coeffs, x)
    v1_jac = np.asarray(v1_jac, dtype=float)
    return (
        curl_from_jac(v1_jac) + alpha[..., None] * np.asarray(v2_grad, dtype=float),
        -np.trace(v1_jac, axis1=-2, axis2=-1),
    )


def composed_factorization(coeffs: CoefficientPair, u: DisplacementField, x):
    """-mu A_alpha A (u, 0), assembled from the exact hessians of u.

    A(u, 0) = (w, q) with w = curl u and q = -div u; the jet of (w, q) is read
    off the hessian of u, then A_alpha is applied with alpha frozen at x.
    """
    H = u.hessian(x)
    # d_m w_i for w = curl u
    w_jac = np.stack(
        [H[..., 2, 1, :] - H[..., 1, 2, :], H[..., 0, 2, :] - H[..., 2, 0, :], H[..., 1, 0, :] - H[..., 0, 1, :]],
        axis=-2,
    )
    q_grad = -_grad_div(H)
    first, second = apply_A_alpha(coeffs, x, w_jac, q_grad)
    mu = coeffs.mu.value(x)
    return -mu[..., None] * first, -mu * second


def factorization_residual(coeffs: CoefficientPair, u: DisplacementField, probes):
    """(max |L u - first component|, max |second component|) over the probes."""
    x = np.atleast_2d(np.asarray(probes, dtype=float))
    first, second = composed_factorization(coeffs, u, x)
    lu = apply_lame_principal(coeffs, u, x)
    return float(np.abs(lu - first).max()), float(np.abs(second).max())


def commutator_apply(coeffs: CoefficientPair, chi: ScalarFieldC1, v: DisplacementField, x, full=False):
    """[L, chi] v = L(chi v) - chi L v using only v and its jacobian.

    With ``full=True`` the commutator of the full operator is returned; the
    extra terms are of order zero in v.
    """
    if chi.hessian is None:
        raise ValueError("commutator needs second derivatives of chi")
    mu, lam = coeffs.mu.value(x), coeffs.lam.value(x)
    g, Hc = chi.gradient(x), chi.hessian(x)
    vv, J = v.value(x), v.jacobian(x)
    lap_chi = np.trace(Hc, axis1=-2, axis2=-1)
    div = np.trace(J, axis1=-2, axis2=-1)
    Jg = np.einsum("...ij,...j->...i", J, g)
    JTg = np.einsum("...ji,...j->...i", J, g)
    Hv = np.einsum("...ij,...j->...i", Hc, vv)
    out = mu[..., None] * (2 * Jg + lap_chi[..., None] * vv) + (lam + mu)[..., None] * (div[..., None] * g + JTg + Hv)
    if full:
        gmu, glam = coeffs.mu.gradient(x), coeffs.lam.gradient(x)
        vg = np.einsum("...i,...i->...", vv, g)
        out = out + vv * np.einsum("...i,...i->...", g, gmu)[..., None] + g * np.einsum("...i,...i->...", vv, gmu)[..., None]
        out = out + vg[..., None] * glam
    return out
