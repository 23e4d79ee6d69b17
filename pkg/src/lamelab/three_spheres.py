"""Three spheres inequality checks, exponent extraction, the iteration
bookkeeping behind the proofs, and vanishing-order diagnostics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .carleman import CarlemanWeights, half_level_radius
from .fields import DisplacementField
from .geometry import BallSpec, ProductBallRule, l2_mass_ball
from .solutions import GridSolution


@dataclass(frozen=True)
class ThreeRadii:
    r1: float
    r2: float
    r_out: float

    def __post_init__(self):
        if not 0 < self.r1 < self.r2 < self.r_out:
            raise ValueError("need 0 < r1 < r2 < r_out")


@dataclass
class ThreeSpheresReport:
    n1: float
    n2: float
    nR: float
    sigma_star: float
    degenerate: bool

    def to_dict(self):
        return asdict(self)


def sigma_star_from_masses(n1, n2, nR):
    """Largest sigma with n2 <= n1^sigma nR^(1-sigma); None when degenerate."""
    if not (0 < n1 < n2 < nR):
        return None
    return math.log(nR / n2) / math.log(nR / n1)


def ball_mass(u, ball: BallSpec, rule: ProductBallRule = ProductBallRule()):
    """Integral of |u|^2 over a ball: product rule for analytic fields, masked
    midpoint sum for a GridSolution."""
    if isinstance(u, GridSolution):
        m = u.grid.ball_mask(ball)
        return u.grid.h**3 * math.fsum((u.values[m] ** 2).ravel())
    return l2_mass_ball(u, ball, rule)


def verify_three_spheres(u, radii: ThreeRadii, rule: ProductBallRule = ProductBallRule(),
                         center=(0.0, 0.0, 0.0)):
    n1, n2, nR = (ball_mass(u, BallSpec(center, r), rule) for r in (radii.r1, radii.r2, radii.r_out))
    sig = sigma_star_from_masses(n1, n2, nR)
    return ThreeSpheresReport(n1, n2, nR, math.nan if sig is None else sig, sig is None)


@dataclass
class SigmaCurve:
    sigma: np.ndarray
    C: np.ndarray
    sigma_min: float
    C_at_sigma_min: float


def fit_sigma_C(reports, n_sigma=99):
    """C(sigma) = max over reports of n2 / (n1^sigma nR^(1-sigma)).

    The grid covers (0, 1) and always contains the smallest sigma_star.
    """
    good = [r for r in reports if not r.degenerate]
    if not good:
        raise ValueError("fit_sigma_C needs at least one nondegenerate report")
    s_min = min(r.sigma_star for r in good)
    sig = np.union1d(np.linspace(0, 1, n_sigma + 2)[1:-1], [s_min])
    n1 = np.array([r.n1 for r in good])
    n2 = np.array([r.n2 for r in good])
    nR = np.array([r.nR for r in good])

    def logC(s):
        return np.max(np.log(n2) - s * np.log(n1) - (1 - s) * np.log(nR))

    C = np.exp([logC(s) for s in sig])
    return SigmaCurve(sig, C, s_min, float(math.exp(logC(s_min))))


# ------------------------------------------------------------ iteration plan


@dataclass
class IterationPlan:
    R1: float
    R2: float
    R_out: float
    eps: float
    s: float
    R0: float = field(init=False)
    theta: float = field(init=False)
    theta1: float = field(init=False)
    theta2: float = field(init=False)
    a: float = field(init=False)
    r: float = field(init=False)
    N: int = field(init=False)
    sigma: float = field(init=False)
    eta: float = field(init=False)
    inv_ln_a: float = field(init=False)

    def __post_init__(self):
        if not 0 < self.R1 < self.R2 < self.R_out:
            raise ValueError("need 0 < R1 < R2 < R_out")
        if not 0 < self.eps < 1:
            raise ValueError("eps must lie in (0, 1)")
        if not self.s > 0:
            raise ValueError("s must be positive")
        self.R0 = 0.5 * (self.R_out + self.R2)
        self.theta = self.R2 * self.R_out / self.R0
        self.theta1 = half_level_radius(CarlemanWeights(self.R_out, self.theta, self.s))
        self.theta2 = 0.5 * (self.theta + self.theta1)
        self.a = self.theta2 / self.theta
        self.r = self.R1 / 2
        self.N = steps_to_cover(self.r, self.R2, self.a)
        self.sigma = self.eps**self.N
        self.eta = math.exp(1.0 / self.N + 1.0)
        self.inv_ln_a = 1.0 / math.log(self.a)

    def check(self):
        """Dict of named invariants -> bool."""
        q = self.inv_ln_a * math.log(2 * self.R2 / self.R1)
        return {
            "R2 < R0 < R_out": self.R2 < self.R0 < self.R_out,
            "theta < theta1 <= R_out": self.theta < self.theta1 <= self.R_out,
            "a > 1": self.a > 1,
            "r a^(N-1) < R2 <= r a^N": self.r * self.a ** (self.N - 1) < self.R2 <= self.r * self.a**self.N * (1 + 1e-12),
            "N bracket": q * (1 - 1e-12) <= self.N < q + 1,
            "eta > 2": self.eta > 2,
        }

    def to_dict(self):
        return asdict(self)


def steps_to_cover(r, R2, a):
    """Smallest N >= 1 with R2 <= r a^N (so that r a^(N-1) < R2)."""
    q = math.log(R2 / r) / math.log(a)
    n = round(q)
    if abs(q - n) <= 1e-12 * max(1.0, q):
        return max(1, int(n))
    return max(1, math.ceil(q))


def iteration_plan(R1, R2, R_out, eps, s):
    return IterationPlan(R1, R2, R_out, eps, s)


def chain_bound(plan: IterationPlan, E1, mass_r):
    """Telescoped bound E1^((1 - eps^N)/(1 - eps)) * mass_r^(eps^N)."""
    if not E1 > 0 or mass_r < 0:
        raise ValueError("need E1 > 0 and mass_r >= 0")
    sN = plan.eps**plan.N
    if mass_r == 0:
        return 0.0
    return math.exp((1 - sN) / (1 - plan.eps) * math.log(E1) + sN * math.log(mass_r))


def inv_ln_a_for(R_out, s, theta):
    """(ln a)^-1 for a = (theta + theta1) / (2 theta) with theta chosen freely."""
    theta1 = half_level_radius(CarlemanWeights(R_out, theta, s))
    return 1.0 / math.log(0.5 * (theta + theta1) / theta)


@dataclass
class DecayCheck:
    R1: list
    log_values: list
    values: list
    exponent: float
    verdict: str
    monotone_on_list: bool
    turnover_R1: float


def decay_limit_check(eps, inv_ln_a, C_tilde, R1_list):
    """Evaluate (C/R1^4) exp(-e^-2 R1^-(eps - inv_ln_a)) along decreasing R1.

    The verdict is "-> 0" exactly when eps > inv_ln_a, where the exponential
    eventually beats the R1^-4 prefactor. ``turnover_R1`` is the radius below
    which the values decrease monotonically (inf when they never do).
    """
    R1 = [float(v) for v in R1_list]
    if any(v <= 0 for v in R1) or any(b >= a for a, b in zip(R1, R1[1:])):
        raise ValueError("R1_list must be positive and strictly decreasing")
    k = eps - inv_ln_a
    logs = [math.log(C_tilde) - 4 * math.log(r) - math.exp(-2) * r ** (-k) for r in R1]
    vals = [math.exp(v) if v > -745 else 0.0 for v in logs]
    monotone = all(b < a for a, b in zip(logs, logs[1:]))
    if k > 0:
        # d/dx [4x - e^-2 e^(k x)] < 0 for x = -ln R1 > ln(4 e^2 / k) / k
        turnover = math.exp(-math.log(4 * math.exp(2) / k) / k)
        verdict = "-> 0"
    else:
        turnover = 0.0
        verdict = "no conclusion"
    return DecayCheck(R1, logs, vals, k, verdict, monotone, turnover)


# ------------------------------------------------------------ vanishing order


@dataclass
class VanishingProfile:
    radii: list
    masses: list
    slope: float
    exp_fit: tuple  # (c, eps_hat) or None
    classification: str

    def rows(self):
        return list(zip(self.radii, self.masses))


def vanishing_profile(u, center, radii, rule: ProductBallRule = ProductBallRule()):
    radii = [float(r) for r in radii]
    if any(r <= 0 for r in radii) or any(b <= a for a, b in zip(radii, radii[1:])):
        raise ValueError("radii must be positive and increasing")
    m = [ball_mass(u, BallSpec(center, r), rule) for r in radii]
    if m[0] == 0.0:
        return VanishingProfile(radii, m, math.nan, None, "identically zero on smallest ball")
    lr, lm = np.log(radii), np.log(m)
    slope = float(np.polyfit(lr, lm, 1)[0])

    fit = None
    m_max = max(m)
    sel = [i for i, v in enumerate(m) if v < 0.5 * m_max]
    if len(sel) >= 3:
        y = np.log(-np.log(np.array(m)[sel] / m_max))
        b, a = np.polyfit(lr[sel], y, 1)
        fit = (float(math.exp(a)), float(-b))

    local = np.diff(lm) / np.diff(lr)
    k = (slope - 3) / 2
    if len(local) >= 2 and local[0] > 1.5 * local[-1] and local[0] - local[-1] > 2:
        tag = "exponential-type"
    elif abs(k - round(k)) < 0.25 and round(k) == 0:
        tag = "nonvanishing"
    elif abs(k - round(k)) < 0.25:
        tag = f"polynomial order {int(round(k))}"
    else:
        tag = f"polynomial order ~{k:.2f}"
    return VanishingProfile(radii, m, slope, fit, tag)


def partial_field(u: DisplacementField, axis, step=1e-4):
    """d_axis u as a field; its hessian is a central difference of u's hessian."""
    def hessian(x):
        return _partial_hess(u, np.asarray(x, dtype=float), axis, step)

    return DisplacementField(
        lambda x: u.jacobian(x)[..., :, axis],
        lambda x: u.hessian(x)[..., :, axis, :],
        hessian,
        name=f"d{axis}({u.name})",
    )


def _partial_hess(u, x, axis, step):
    # third derivative d_j d_k d_axis u_i by differencing the hessian along j
    out = np.empty(np.shape(x)[:-1] + (3, 3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = step
        out[..., :, j, :] = (u.hessian(x + e)[..., :, axis, :] - u.hessian(x - e)[..., :, axis, :]) / (2 * step)
    return out
