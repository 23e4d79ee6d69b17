"""Exact solutions, the finite-difference Dirichlet solver and the interior-estimate probe."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .fields import CoefficientPair, DisplacementField, PolyVectorField
from .geometry import BallSpec, Grid3, ProductBallRule, l2_mass_ball, sobolev_norms_grid


class SolverError(RuntimeError):
    def __init__(self, message, residual=None, history=None):
        super().__init__(message)
        self.residual = residual
        self.history = history or []


# ---------------------------------------------------------------- exact fields


@dataclass(frozen=True)
class KelvinSource:
    y: tuple
    b: tuple
    mu0: float = 1.0
    lambda0: float = 1.0
    study_radius: float = 1.0

    def __post_init__(self):
        y = np.asarray(self.y, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if np.linalg.norm(y) <= self.study_radius:
            raise ValueError("Kelvin source must lie outside the study ball")
        if not math.isclose(np.linalg.norm(b), 1.0, rel_tol=1e-12):
            raise ValueError("Kelvin direction must be a unit vector")
        if not (self.mu0 > 0 and self.lambda0 > 0):
            raise ValueError("Kelvin moduli must be positive")
        object.__setattr__(self, "y", tuple(y.tolist()))
        object.__setattr__(self, "b", tuple(b.tolist()))

    @property
    def nu(self):
        return self.lambda0 / (2 * (self.lambda0 + self.mu0))


def kelvin_field(src: KelvinSource):
    """Point-force solution of the constant-coefficient system, singular at ``src.y``.

    u(x) = c [ (3 - 4 nu) b / rho + (b . r) r / rho^3 ],  r = x - y,
    c = 1 / (16 pi mu0 (1 - nu)).
    """
    y = np.asarray(src.y)
    b = np.asarray(src.b)
    nu = src.nu
    c = 1.0 / (16 * math.pi * src.mu0 * (1 - nu))
    A = 3 - 4 * nu
    I = np.eye(3)

    def geom(x):
        r = np.asarray(x, dtype=float) - y
        rho = np.linalg.norm(r, axis=-1)
        if np.any(rho == 0):
            raise ZeroDivisionError("Kelvin field evaluated at its source point")
        return r, rho[..., None], np.einsum("...i,i->...", r, b)[..., None]

    def value(x):
        r, rho, br = geom(x)
        return c * (A * b / rho + br * r / rho**3)

    def jacobian(x):
        r, rho, br = geom(x)
        rho, br = rho[..., None], br[..., None]
        ri = r[..., :, None]
        rj = r[..., None, :]
        J = (
            -A * b[:, None] * rj / rho**3
            + ri * b[None, :] / rho**3
            + br * I / rho**3
            - 3 * br * ri * rj / rho**5
        )
        return c * J

    def hessian(x):
        r, rho, br = geom(x)
        rho = rho[..., None, None]
        br = br[..., None, None]
        ri = r[..., :, None, None]
        rj = r[..., None, :, None]
        rk = r[..., None, None, :]
        bi = b[:, None, None]
        bj = b[None, :, None]
        bk = b[None, None, :]
        d_ij = I[:, :, None]
        d_ik = I[:, None, :]
        d_jk = I[None, :, :]
        H = (
            A * bi * (-d_jk / rho**3 + 3 * rj * rk / rho**5)
            + bj * (d_ik / rho**3 - 3 * ri * rk / rho**5)
            + bk * d_ij / rho**3
            - 3 * br * d_ij * rk / rho**5
            - 3 * (bk * ri * rj + br * (d_ik * rj + ri * d_jk)) / rho**5
            + 15 * br * ri * rj * rk / rho**7
        )
        return c * H

    return DisplacementField(value, jacobian, hessian, name="kelvin")


@dataclass(frozen=True)
class HarmonicGradient:
    """Polynomial h, stored as {(a, b, c): coefficient}, with Lap h = 0."""

    h: dict

    def __post_init__(self):
        lap = {}
        for (a, b, c), coef in self.h.items():
            for axis, e in enumerate((a, b, c)):
                if e >= 2:
                    key = [a, b, c]
                    key[axis] -= 2
                    lap[tuple(key)] = lap.get(tuple(key), 0.0) + coef * e * (e - 1)
        bad = {k: v for k, v in lap.items() if abs(v) > 1e-12}
        if bad:
            k, v = next(iter(bad.items()))
            raise ValueError(f"h is not harmonic: Laplacian coefficient of x^{k} is {v}")


def harmonic_gradient_field(hg: HarmonicGradient):
    terms = []
    for axis in range(3):
        t = {}
        for exp, coef in hg.h.items():
            if exp[axis] == 0:
                continue
            e = list(exp)
            e[axis] -= 1
            t[tuple(e)] = t.get(tuple(e), 0.0) + coef * exp[axis]
        terms.append(t)
    return PolyVectorField(terms).as_field(name="harmonic_gradient")


def xyz_gradient():
    """u = grad(x1 x2 x3), the degree-2 homogeneous solution used throughout."""
    return harmonic_gradient_field(HarmonicGradient({(1, 1, 1): 1.0}))


# ----------------------------------------------------------- discretization


def node_index(grid: Grid3):
    nx, ny, nz = grid.dims
    return np.arange(grid.size).reshape((nx, ny, nz), order="F")


def to_nodal(vec, grid: Grid3):
    """Component-major unknown vector (3N,) -> nodal array (nx, ny, nz, 3)."""
    N = grid.size
    return np.stack([vec[c * N:(c + 1) * N].reshape(grid.dims, order="F") for c in range(3)], axis=-1)


def from_nodal(values, grid: Grid3):
    return np.concatenate([values[..., c].ravel(order="F") for c in range(3)])


def assemble_lame_operator(coeffs: CoefficientPair, grid: Grid3, rows_mask=None):
    """Sparse flux-form discretization of div(mu(grad u + grad u^T)) + grad(lam div u).

    Rows are produced for nodes in ``rows_mask`` (default: all grid-interior
    nodes) and every component; unknowns are ordered component-major with
    x-fastest node numbering. Pure second derivatives use face-averaged
    moduli; mixed derivatives use nested central differences with nodal
    moduli, which keeps the interior block symmetric.
    """
    nx, ny, nz = grid.dims
    N = grid.size
    h = grid.h
    pts = grid.points.reshape(-1, 3, order="F")
    mu = coeffs.mu.value(pts)
    lam = coeffs.lam.value(pts)
    if rows_mask is None:
        rows_mask = grid.interior_mask()
    rows_mask = rows_mask & grid.interior_mask()
    P = node_index(grid)[rows_mask]
    stride = np.array([1, nx, nx * ny])
    R, C, V = [], [], []

    for k in range(3):
        row = k * N + P
        diag = np.zeros(len(P))
        for j in range(3):
            s = stride[j]
            for sgn in (1, -1):
                q = P + sgn * s
                cf = 0.5 * (mu[P] + mu[q])
                if j == k:
                    cf = cf + 0.5 * (mu[P] + mu[q]) + 0.5 * (lam[P] + lam[q])
                cf = cf / h**2
                R.append(row)
                C.append(k * N + q)
                V.append(cf)
                diag -= cf
        R.append(row)
        C.append(row)
        V.append(diag)
        for l in range(3):
            if l == k:
                continue
            for sl in (1, -1):
                for sk in (1, -1):
                    q = P + sl * stride[l] + sk * stride[k]
                    cf = sl * sk * (mu[P + sl * stride[l]] + lam[P + sk * stride[k]]) / (4 * h**2)
                    R.append(row)
                    C.append(l * N + q)
                    V.append(cf)
    A = sp.csr_matrix(
        (np.concatenate(V), (np.concatenate(R), np.concatenate(C))), shape=(3 * N, 3 * N)
    )
    A.sum_duplicates()
    return A


def pcg(A, b, tol, maxiter, x0=None, M_diag=None):
    """Jacobi-preconditioned conjugate gradients for SPD ``A``.

    Returns (x, relative residual, iterations, history).
    """
    x = np.zeros_like(b) if x0 is None else x0.copy()
    Minv = 1.0 / (A.diagonal() if M_diag is None else M_diag)
    r = b - A @ x
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros_like(b), 0.0, 0, [0.0]
    z = Minv * r
    p = z.copy()
    rz = r @ z
    history = [np.linalg.norm(r) / bnorm]
    it = 0
    while history[-1] > tol and it < maxiter:
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        z = Minv * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        history.append(np.linalg.norm(r) / bnorm)
    return x, history[-1], it, history


@dataclass
class GridSolution:
    grid: Grid3
    values: np.ndarray  # (nx, ny, nz, 3)
    boundary: np.ndarray  # bool (nx, ny, nz)
    residual: float
    iterations: int = 0
    meta: dict = field(default_factory=dict)

    def save(self, path):
        """Binary layout: little-endian int64 dims[3], float64 h, float64
        origin[3], then float64 node values (3 per node) with x fastest."""
        path = Path(path)
        nx, ny, nz = self.grid.dims
        with open(path, "wb") as fh:
            fh.write(struct.pack("<3q", nx, ny, nz))
            fh.write(struct.pack("<d", self.grid.h))
            fh.write(struct.pack("<3d", *self.grid.origin))
            fh.write(np.ascontiguousarray(self.values.transpose(2, 1, 0, 3), dtype="<f8").tobytes())
        sidecar = {
            "dims": [nx, ny, nz],
            "h": self.grid.h,
            "origin": list(self.grid.origin),
            "residual": self.residual,
            "iterations": self.iterations,
            **self.meta,
        }
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(sidecar, indent=2))

    @classmethod
    def load(cls, path):
        path = Path(path)
        raw = path.read_bytes()
        nx, ny, nz = struct.unpack_from("<3q", raw, 0)
        (h,) = struct.unpack_from("<d", raw, 24)
        origin = struct.unpack_from("<3d", raw, 32)
        vals = np.frombuffer(raw, dtype="<f8", offset=56).reshape(nz, ny, nx, 3).transpose(2, 1, 0, 3)
        side = path.with_suffix(path.suffix + ".json")
        meta = json.loads(side.read_text()) if side.exists() else {}
        grid = Grid3(origin, h, (nx, ny, nz))
        boundary = ~grid.interior_mask()
        return cls(grid, vals.copy(), boundary, meta.pop("residual", float("nan")), meta.pop("iterations", 0), meta)


def _nodal_eval(fun, grid: Grid3):
    pts = grid.points.reshape(-1, 3)
    return np.asarray(fun(pts)).reshape(grid.dims + (3,))


def solve_dirichlet(coeffs: CoefficientPair, forcing, boundary, grid: Grid3, tol=1e-10, maxiter=None):
    """Solve L_h u = f in the grid interior with u = g on the box boundary.

    ``forcing`` and ``boundary`` map points (n, 3) -> (n, 3); ``forcing`` may
    be None for the homogeneous equation.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    pts = grid.points.reshape(-1, 3)
    mu = coeffs.mu.value(pts)
    lam = coeffs.lam.value(pts)
    if np.any(lam < 0):
        raise ValueError("solve_dirichlet requires lam >= 0 on the grid (energy coercivity)")
    if np.any(mu < coeffs.alpha0) or np.any(2 * mu + lam < coeffs.beta0):
        raise ValueError("coefficients violate the declared ellipticity floors on the grid")

    N = grid.size
    interior = grid.interior_mask()
    A = assemble_lame_operator(coeffs, grid)
    g = from_nodal(_nodal_eval(boundary, grid), grid)
    inner_nodes = node_index(grid)[interior]
    I = np.concatenate([c * N + inner_nodes for c in range(3)])
    u = g.copy()
    u[I] = 0.0
    f = np.zeros(3 * N) if forcing is None else from_nodal(_nodal_eval(forcing, grid), grid)
    rhs = f[I] - (A @ u)[I]
    K = -A[I][:, I]
    maxiter = maxiter or int(20 * math.sqrt(len(I)))
    x, res, its, hist = pcg(K.tocsr(), -rhs, tol, maxiter)
    if res > tol:
        raise SolverError(f"CG did not converge in {its} iterations (residual {res:.3e})", res, hist)
    u[I] = x
    return GridSolution(grid, to_nodal(u, grid), ~interior, float(res), its, {"solver": "pcg-jacobi", "tol": tol})


def stencil_residual(coeffs: CoefficientPair, sol: GridSolution, forcing=None):
    """max over interior nodes of |L_h u - f|, relative to max |f| (or 1)."""
    grid = sol.grid
    A = assemble_lame_operator(coeffs, grid)
    Au = to_nodal(A @ from_nodal(sol.values, grid), grid)
    f = np.zeros_like(Au) if forcing is None else _nodal_eval(forcing, grid)
    m = grid.interior_mask()
    scale = max(1.0, float(np.abs(f[m]).max()))
    return float(np.abs(Au[m] - f[m]).max()) / scale


def grid_l2_error(sol: GridSolution, exact: DisplacementField, mask=None):
    ref = _nodal_eval(exact.value, sol.grid)
    m = sol.grid.interior_mask() if mask is None else mask
    return math.sqrt(sol.grid.h**3 * float(((sol.values - ref)[m] ** 2).sum()))


# ------------------------------------------------------------ interior probe


def h2_norm_ball(u: DisplacementField, ball: BallSpec, rule: ProductBallRule = ProductBallRule()):
    pts, w = rule.ball_nodes(ball)
    dens = (u.value(pts) ** 2).sum(-1) + (u.jacobian(pts) ** 2).sum((-1, -2)) + (u.hessian(pts) ** 2).sum((-1, -2, -3))
    return math.sqrt(math.fsum(w * dens))


def interior_ratio(u, r, R, rule: ProductBallRule = ProductBallRule(), center=(0.0, 0.0, 0.0)):
    """||u||_{H^2(B_r)} / ||u||_{L^2(B_R)} for an analytic field or a GridSolution."""
    if not 0 < r < R:
        raise ValueError("need 0 < r < R")
    if isinstance(u, GridSolution):
        grid = u.grid
        l2, h1, h2 = sobolev_norms_grid(u.values, grid, grid.ball_mask(BallSpec(center, r)))
        den, _, _ = sobolev_norms_grid(u.values, grid, grid.ball_mask(BallSpec(center, R)))
        num = math.sqrt(l2**2 + h1**2 + h2**2)
    else:
        num = h2_norm_ball(u, BallSpec(center, r), rule)
        den = math.sqrt(l2_mass_ball(u, BallSpec(center, R), rule))
    if den == 0:
        raise ValueError("interior_ratio is undefined for a field vanishing on B_R")
    return num / den
