"""Cauchy problem on the annulus theta < |x| < R: noisy trace data, a
quasi-reversibility least-squares continuation, and the Holder-slope experiment."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .carleman import CarlemanWeights, sublevel_radius
from .fields import CoefficientPair, DisplacementField
from .geometry import AnnulusSpec, Grid3, ProductBallRule
from .solutions import GridSolution, SolverError, assemble_lame_operator, from_nodal, node_index, to_nodal

log = logging.getLogger(__name__)

OUTER_WEIGHT = 1e-2
BETA_GRID = tuple(10.0**k for k in range(1, 9))
PLATEAU = 0.9


@dataclass
class CauchyData:
    theta: float
    nodes: np.ndarray  # (m, 3) points on |x| = theta
    weights: np.ndarray  # surface quadrature weights
    f0: np.ndarray  # (m, 3)
    f1: np.ndarray  # (m, 3, 3), f1[:, i, j] = d_j u_i
    noise_level: float = 0.0
    zeta0: float = 0.0

    def __add__(self, other):
        if not np.array_equal(self.nodes, other.nodes):
            raise ValueError("Cauchy data live on different node sets")
        return replace(self, f0=self.f0 + other.f0, f1=self.f1 + other.f1, zeta0=math.nan)

    def scaled(self, c):
        return replace(self, f0=c * self.f0, f1=c * self.f1, zeta0=abs(c) * self.zeta0)

    def trace_norm(self):
        return math.sqrt(float(self.weights @ ((self.f0**2).sum(-1) + (self.f1**2).sum((-1, -2)))))


def sphere_rule(radius, rule: ProductBallRule):
    dirs, w = rule.sphere()
    return radius * dirs, w * radius**2


def make_cauchy_data(u_exact: DisplacementField, theta, rule: ProductBallRule = ProductBallRule(n_r=2, n_p=16, n_a=32),
                     zeta_rel=0.0, seed=0):
    """Sample u and grad u on |x| = theta and add seeded uniform noise.

    Noise is independent per sample with root-mean-square equal to
    ``zeta_rel`` times the root-mean-square of the trace it perturbs. The
    reported ``zeta0`` is the surface-weighted L2 norm of the injected
    perturbation over both traces (a discrete stand-in for the trace norms).
    """
    nodes, w = sphere_rule(theta, rule)
    f0 = u_exact.value(nodes)
    f1 = u_exact.jacobian(nodes)
    rng = np.random.default_rng(seed)
    half = math.sqrt(3.0)
    d0 = rng.uniform(-half, half, f0.shape) * zeta_rel * math.sqrt(float(np.mean(f0**2)))
    d1 = rng.uniform(-half, half, f1.shape) * zeta_rel * math.sqrt(float(np.mean(f1**2)))
    zeta0 = math.sqrt(float(w @ ((d0**2).sum(-1) + (d1**2).sum((-1, -2)))))
    return CauchyData(theta, nodes, w, f0 + d0, f1 + d1, float(zeta_rel), zeta0)


# ------------------------------------------------------------- discretization


def trilinear_matrix(grid: Grid3, pts):
    """Sparse (len(pts), N) trilinear interpolation from grid nodes."""
    pts = np.asarray(pts, dtype=float)
    x = (pts - np.asarray(grid.origin)) / grid.h
    hi = np.asarray(grid.dims) - 2
    i0 = np.clip(np.floor(x).astype(int), 0, hi)
    t = x - i0
    if np.any(t < -1e-9) or np.any(t > 1 + 1e-9):
        raise ValueError("interpolation point outside the grid")
    nx, ny, _ = grid.dims
    rows, cols, vals = [], [], []
    ar = np.arange(len(pts))
    for dx in (0, 1):
        for dy in (0, 1):
            for dz in (0, 1):
                wv = (t[:, 0] if dx else 1 - t[:, 0]) * (t[:, 1] if dy else 1 - t[:, 1]) * (t[:, 2] if dz else 1 - t[:, 2])
                idx = (i0[:, 0] + dx) + nx * ((i0[:, 1] + dy) + ny * (i0[:, 2] + dz))
                rows.append(ar)
                cols.append(idx)
                vals.append(wv)
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(len(pts), grid.size))
    M.sum_duplicates()
    return M


def central_difference_matrix(grid: Grid3, axis):
    """Nodal d/dx_axis by central differences (rows only where both neighbours exist)."""
    nx, ny, _ = grid.dims
    stride = (1, nx, nx * ny)[axis]
    m = np.zeros(grid.dims, dtype=bool)
    sl = [slice(None)] * 3
    sl[axis] = slice(1, -1)
    m[tuple(sl)] = True
    P = node_index(grid)[m]
    c = 1.0 / (2 * grid.h)
    return sp.csr_matrix(
        (np.concatenate([np.full(len(P), c), np.full(len(P), -c)]), (np.concatenate([P, P]), np.concatenate([P + stride, P - stride]))),
        shape=(grid.size, grid.size),
    )


def _blockdiag3(M):
    return sp.block_diag([M, M, M], format="csr")


class CauchySystem:
    """Least-squares blocks for one (coefficients, grid, annulus, trace nodes) setup.

    J(u) = h^3 |L_h u|^2 over nodes in G
         + beta * sum_j w_j (|u(x_j) - f0_j|^2 + |grad u(x_j) - f1_j|^2)
         + beta * OUTER_WEIGHT * sum_k w_k |u(y_k)|^2,  |y_k| = R_out
    """

    def __init__(self, coeffs: CoefficientPair, grid: Grid3, theta, R_out, trace_nodes, trace_weights,
                 outer_rule: ProductBallRule = ProductBallRule(n_r=2, n_p=24, n_a=48)):
        pts = grid.points.reshape(-1, 3, order="F")
        if np.any(coeffs.lam.value(pts) < 0):
            raise ValueError("continuation requires lam >= 0 on the grid")
        self.grid, self.theta, self.R_out = grid, theta, R_out
        N = grid.size
        rad = np.linalg.norm(pts, axis=1).reshape(grid.dims, order="F")
        rows_mask = (rad > theta) & (rad < R_out) & grid.interior_mask()
        A = assemble_lame_operator(coeffs, grid, rows_mask)
        rows = np.concatenate([c * N + node_index(grid)[rows_mask] for c in range(3)])
        self.A_res = (A[rows] * math.sqrt(grid.h**3)).tocsr()
        P = trilinear_matrix(grid, trace_nodes)
        self.P0 = _blockdiag3(P)
        D = [central_difference_matrix(grid, j) for j in range(3)]
        # rows ordered (i, j) for f1[:, i, j]
        self.P1 = sp.vstack([_blockdiag3(P @ D[j])[i * len(trace_nodes):(i + 1) * len(trace_nodes)]
                             for i in range(3) for j in range(3)]).tocsr()
        onodes, ow = sphere_rule(R_out * (1 - 1e-12), outer_rule)
        self.Pout = _blockdiag3(trilinear_matrix(grid, onodes))
        self.w0 = np.tile(np.sqrt(trace_weights), 3)
        self.w1 = np.tile(np.sqrt(trace_weights), 9)
        self.wo = np.tile(np.sqrt(ow), 3)
        self.trace_weights = trace_weights

    def stacked(self, beta):
        sb = math.sqrt(beta)
        M = sp.vstack([
            self.A_res,
            sp.diags(sb * self.w0) @ self.P0,
            sp.diags(sb * self.w1) @ self.P1,
            sp.diags(math.sqrt(beta * OUTER_WEIGHT) * self.wo) @ self.Pout,
        ]).tocsc()
        return M

    def rhs(self, data: CauchyData, beta):
        sb = math.sqrt(beta)
        b0 = data.f0.T.ravel()
        b1 = np.concatenate([data.f1[:, i, j] for i in range(3) for j in range(3)])
        return np.concatenate([
            np.zeros(self.A_res.shape[0]), sb * self.w0 * b0, sb * self.w1 * b1, np.zeros(self.Pout.shape[0])
        ])

    def misfit(self, x, data: CauchyData):
        """Surface-weighted L2 misfit of u and grad u on gamma."""
        r0 = (self.P0 @ x - data.f0.T.ravel()) * self.w0
        b1 = np.concatenate([data.f1[:, i, j] for i in range(3) for j in range(3)])
        r1 = (self.P1 @ x - b1) * self.w1
        return math.sqrt(float(r0 @ r0 + r1 @ r1))

    def residual_norm(self, x):
        return float(np.linalg.norm(self.A_res @ x))

    def solve(self, data: CauchyData, beta, tol=1e-4, maxiter=20000, x0=None, strict=True, callback=None):
        """CGLS on the column-scaled stacked system; returns (x, info).

        With ``strict`` a SolverError is raised when ``tol`` is not reached.
        """
        M = self.stacked(beta)
        b = self.rhs(data, beta)
        active = np.flatnonzero(np.diff(M.indptr))
        M = M[:, active].tocsr()
        cn = np.sqrt(np.asarray(M.multiply(M).sum(axis=0)).ravel())
        Ms = (M @ sp.diags(1.0 / cn)).tocsr()
        MsT = Ms.T.tocsr()
        y = np.zeros(len(active)) if x0 is None else x0[active] * cn
        r = b - Ms @ y
        s = MsT @ r
        s0 = np.linalg.norm(MsT @ b)
        if s0 == 0:
            return np.zeros(M.shape[1] and 3 * self.grid.size), {"iterations": 0, "relres": 0.0, "J": [0.0]}
        p = s.copy()
        gam = s @ s
        J = [float(r @ r)]
        it = 0
        relres = math.sqrt(gam) / s0
        while relres > tol and it < maxiter:
            q = Ms @ p
            alpha = gam / (q @ q)
            y += alpha * p
            r -= alpha * q
            s = MsT @ r
            gnew = s @ s
            p = s + (gnew / gam) * p
            gam = gnew
            it += 1
            relres = math.sqrt(gam) / s0
            J.append(float(r @ r))
            if callback is not None and it % 100 == 0:
                xc = np.zeros(3 * self.grid.size)
                xc[active] = y / cn
                callback(it, relres, xc)
        x = np.zeros(3 * self.grid.size)
        x[active] = y / cn
        info = {"iterations": it, "relres": relres, "J": J}
        if strict and relres > tol:
            raise SolverError(f"CGLS stopped at relative residual {relres:.3e} after {it} iterations", relres, J)
        return x, info


def coarsen(grid: Grid3):
    """Grid with spacing 2h on the same box, or None if the node counts are even."""
    if any(n % 2 == 0 or n < 9 for n in grid.dims):
        return None
    return Grid3(grid.origin, 2 * grid.h, tuple((n + 1) // 2 for n in grid.dims))


def prolong(x_coarse, coarse: Grid3, fine: Grid3):
    P = trilinear_matrix(coarse, fine.points.reshape(-1, 3, order="F"))
    return np.concatenate([P @ x_coarse[c * coarse.size:(c + 1) * coarse.size] for c in range(3)])


def continue_solution(coeffs: CoefficientPair, data: CauchyData, R_out, grid: Grid3, beta, tol=1e-4,
                      levels=2, coarse_tol=None, maxiter=20000, systems=None):
    """Quasi-reversibility continuation of Cauchy data into the annulus.

    Nested iteration: the problem is solved first on ``levels - 1`` coarser
    grids (to ``coarse_tol``, default tol / 100) and each result is
    interpolated up as the starting guess for the next grid. Returns a
    GridSolution on ``grid``; nodes outside the active set stay zero.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    coarse_tol = tol / 100 if coarse_tol is None else coarse_tol
    chain = [grid]
    while len(chain) < levels and coarsen(chain[-1]) is not None:
        chain.append(coarsen(chain[-1]))
    chain.reverse()
    systems = {} if systems is None else systems
    x = None
    info = {}
    for k, g in enumerate(chain):
        sysg = _system(systems, coeffs, g, data, R_out)
        x0 = None if x is None else prolong(x, chain[k - 1], g)
        level_tol = tol if g is grid else coarse_tol
        x, info = sysg.solve(data, beta, tol=level_tol, maxiter=maxiter if g is grid else 4 * maxiter, x0=x0)
        log.debug("level h=%g: %d iterations, relres %.2e", g.h, info["iterations"], info["relres"])
    return _as_solution(_system(systems, coeffs, grid, data, R_out), x, data, beta, info)


def _system(cache, coeffs, grid, data, R_out):
    key = (grid.h, grid.dims, data.theta, R_out, len(data.nodes))
    if key not in cache:
        cache[key] = CauchySystem(coeffs, grid, data.theta, R_out, data.nodes, data.weights)
    return cache[key]


def _as_solution(sysg: CauchySystem, x, data, beta, info):
    grid = sysg.grid
    meta = {
        "beta": beta,
        "misfit": sysg.misfit(x, data),
        "pde_residual": sysg.residual_norm(x),
        "objective_history": info["J"],
    }
    return GridSolution(grid, to_nodal(x, grid), ~grid.interior_mask(), info["relres"], info["iterations"], meta)


# ----------------------------------------------------------------- experiment


@dataclass
class StabilityReport:
    zeta0: list
    noise_rel: list
    errors: list
    rel_errors: list
    betas: list
    M0: float
    eps_emp: float
    omega: tuple
    verdict: str
    misfits: list = field(default_factory=list)
    solver_relres: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["noise_rel", "zeta0", "beta", "misfit", "error", "rel_error", "solver_relres"])
            for row in zip(self.noise_rel, self.zeta0, self.betas, self.misfits, self.errors, self.rel_errors,
                           self.solver_relres):
                wr.writerow([repr(float(v)) for v in row])


def h1_norm_annulus(u: DisplacementField, ann: AnnulusSpec, rule=ProductBallRule(n_r=24, n_p=24, n_a=48)):
    pts, w = rule.shell_nodes(ann)
    dens = (u.value(pts) ** 2).sum(-1) + (u.jacobian(pts) ** 2).sum((-1, -2))
    return math.sqrt(math.fsum(w * dens))


def omega_error(sol: GridSolution, u_exact: DisplacementField, theta, theta1):
    grid = sol.grid
    mask = grid.shell_mask(theta, theta1)
    ref = u_exact.value(grid.points[mask])
    dv = grid.h**3
    return math.sqrt(dv * float(((sol.values[mask] - ref) ** 2).sum())), math.sqrt(dv * float((ref**2).sum()))


def select_beta(sysg: CauchySystem, data: CauchyData, tol, beta_grid=BETA_GRID, maxiter=5000):
    """Discrepancy principle over a geometric beta grid on one system.

    Misfit shrinks as beta grows; the scan stops at the first beta whose
    misfit drops below zeta0, and the beta with misfit closest to zeta0 in
    log scale wins. The scan also stops when a tenfold beta no longer cuts
    the misfit by PLATEAU: the remaining misfit is then discretization error
    that no beta can remove, and the last beta before the plateau is kept.
    With zeta0 = 0 the grid midpoint is used.

    Scan solves are warm-started and capped at ``maxiter`` iterations: the
    misfit is only needed to within the factor-2 tolerance of the rule.
    Returns (beta, solution vector for that beta, [(beta, misfit), ...]).
    """
    if data.zeta0 == 0:
        beta = beta_grid[len(beta_grid) // 2]
        x, _ = sysg.solve(data, beta, tol=tol, maxiter=maxiter, strict=False)
        return beta, x, [(beta, sysg.misfit(x, data))]
    trail, sols = [], {}
    x = None
    for beta in beta_grid:
        x, info = sysg.solve(data, beta, tol=tol, maxiter=maxiter, x0=x, strict=False)
        log.debug("beta %.1e: relres %.2e after %d iterations", beta, info["relres"], info["iterations"])
        sols[beta] = x
        trail.append((beta, sysg.misfit(x, data)))
        if trail[-1][1] <= data.zeta0:
            break
        if len(trail) >= 2 and trail[-1][1] > PLATEAU * trail[-2][1]:
            best = trail[-2]
            return best[0], sols[best[0]], trail
    best = min(trail, key=lambda t: abs(math.log(t[1] / data.zeta0)))
    return best[0], sols[best[0]], trail


def stability_experiment(coeffs: CoefficientPair, u_exact: DisplacementField, theta, R_out, s, zeta_list,
                         grid: Grid3, seed=0, tol=1e-4, beta_grid=BETA_GRID,
                         trace_rule: ProductBallRule = ProductBallRule(n_r=2, n_p=16, n_a=32), fine_maxiter=2000):
    """Holder-slope experiment: error on omega(phi*/2) versus data noise.

    Per level, beta comes from the discrepancy rule on the 2h grid. The fine
    solve starts from the interpolated coarse solution and runs at most
    ``fine_maxiter`` iterations; the achieved residual is reported rather
    than enforced, because the error on omega settles long before the
    normal-equation residual of the noisy, inconsistent system reaches tol.
    """
    zeta_list = [float(z) for z in zeta_list]
    if len(zeta_list) < 3 or any(b >= a for a, b in zip(zeta_list, zeta_list[1:])):
        raise ValueError("zeta_list needs at least 3 strictly decreasing levels")
    G = AnnulusSpec((0.0, 0.0, 0.0), theta, R_out)
    M0 = h1_norm_annulus(u_exact, G)
    if M0 == 0:
        raise ValueError("exact solution vanishes on G; the experiment is degenerate")
    w = CarlemanWeights(R_out, theta, s)
    theta1 = sublevel_radius(w, w.phi_star / 2)
    coarse = coarsen(grid)
    systems = {}
    z0s, errs, rels, betas, misfits, relres = [], [], [], [], [], []
    for zr in zeta_list:
        data = make_cauchy_data(u_exact, theta, trace_rule, zr, seed)
        if coarse is None:
            beta, x, trail = select_beta(_system(systems, coeffs, grid, data, R_out), data, tol, beta_grid)
            info = {"iterations": 0, "relres": math.nan, "J": []}
        else:
            # beta is chosen on the 2h grid; its solution seeds the fine solve
            beta, xc, trail = select_beta(_system(systems, coeffs, coarse, data, R_out), data, tol / 10, beta_grid)
            x, info = _system(systems, coeffs, grid, data, R_out).solve(
                data, beta, tol=tol, maxiter=fine_maxiter, x0=prolong(xc, coarse, grid), strict=False)
        log.info("noise %.1e: zeta0 %.3e, beta %.1e, trail %s", zr, data.zeta0, beta, trail)
        sol = _as_solution(_system(systems, coeffs, grid, data, R_out), x, data, beta, info)
        e, ref = omega_error(sol, u_exact, theta, theta1)
        z0s.append(data.zeta0)
        errs.append(e)
        rels.append(e / ref)
        betas.append(beta)
        misfits.append(sol.meta["misfit"])
        relres.append(float(info["relres"]))
    lz = np.log(z0s)
    eps_emp = float(np.polyfit(lz, np.log(errs), 1)[0]) if all(e > 0 for e in errs) else math.nan
    # errors should not grow as zeta0 shrinks, beyond a factor 1.5
    monotone = all(b <= 1.5 * a for a, b in zip(errs, errs[1:]))
    ok = monotone and math.isfinite(eps_emp) and 0.05 < eps_emp <= 1.05
    return StabilityReport(z0s, zeta_list, errs, rels, betas, M0, eps_emp, (theta, theta1),
                           "Holder-consistent" if ok else "inconsistent", misfits, relres)
