"""Radial collocation solver for the curvature equation

    f(lam(g^{-1} V[u])) = c * psi(r) * e^{2 varsigma u},
    V[u] = (Delta u) g - rho Hess u + gamma |grad u|^2 g + rho du x du + A,

on balls and annuli with finite or infinite boundary data.  Infinite data is
realized exactly as the increasing family u^(k) with boundary value log k;
the monotone sequence itself is the verification object.  The scheme is a
damped Newton iteration on a graded mesh with tridiagonal linearizations;
every accepted iterate keeps the eigenvalues inside the admissible cone by a
quantified margin.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from . import cone as cone_mod
from .cone import ConeSpec
from .errors import (FeasibilityError, NonConvergenceError, ParameterError,
                     RateUnavailableError, SchemeError)
from .symfunc import OperatorSpec, f_eval, f_grad
from .transform import ConformalParams

__all__ = [
    "RadialProblem",
    "RadialSolution",
    "BarrierSpec",
    "graded_mesh",
    "radial_reduce",
    "solve_finite",
    "solve_infinite",
    "exhaustion_solve",
    "barrier_check",
    "asymptotic_rate",
    "comparison_ordering",
    "loewner_nirenberg_problem",
]


# ---------------------------------------------------------------------------
# problem and solution containers
# ---------------------------------------------------------------------------

@dataclass
class RadialProblem:
    """Radial instance of the curvature equation.

    psi is a positive callable of r (vectorized); A_rad/A_tan are the radial
    and tangential eigenvalue profiles of the background term (zero for the
    flat background, which covers conformal backgrounds after absorbing the
    log factor into the unknown).
    """

    domain_r0: float
    domain_R: float
    params: ConformalParams
    op: OperatorSpec
    cone: ConeSpec
    psi: Callable = None
    A_rad: Optional[Callable] = None
    A_tan: Optional[Callable] = None

    def __post_init__(self):
        if self.psi is None:
            self.psi = lambda r: np.ones_like(r)
        if not 0.0 <= self.domain_r0 < self.domain_R:
            raise ValueError("need 0 <= r0 < R")
        if self.op.n != self.cone.n:
            raise ValueError("operator and cone dimension mismatch")

    @property
    def n(self):
        return self.op.n

    @property
    def is_ball(self):
        return self.domain_r0 == 0.0

    @property
    def rhs_const(self):
        return self.params.rhs_const_direct

    def sigma(self, r):
        """Distance to the domain boundary."""
        if self.is_ball:
            return self.domain_R - r
        return np.minimum(self.domain_R - r, r - self.domain_r0)

    def background(self, r):
        a_rad = self.A_rad(r) if self.A_rad is not None else np.zeros_like(r)
        a_tan = self.A_tan(r) if self.A_tan is not None else np.zeros_like(r)
        return a_rad, a_tan


@dataclass
class RadialSolution:
    r: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    sigma: np.ndarray = field(repr=False)
    residual_norm: float = np.inf
    newton_history: list = field(default_factory=list, repr=False)
    margins: np.ndarray = field(default=None, repr=False)
    k_index: Optional[int] = None
    boundary_value: Optional[float] = None

    def interp(self, r_new):
        return np.interp(r_new, self.r, self.u)


# ---------------------------------------------------------------------------
# meshes and difference weights
# ---------------------------------------------------------------------------

def graded_mesh(r0, R, num, grading="power", power=2.0, ratio=0.95, blend=0.02):
    """Mesh on [r0, R] clustered toward the blow-up boundary.

    "power" places r = R - (R - r0) map(1 - xi) over uniform xi with
    map(s) = (1-blend) s^power + blend s: a smooth grading whose
    between-node ratio tends to 1 under refinement (so the three-point
    stencils stay second order) while the linear blend keeps the smallest
    spacing above blend*(R-r0)/num, bounding stencil round-off
    amplification.  A fixed-"ratio" geometric option is kept for small node
    counts.  Annuli cluster toward both ends.
    """
    if num < 8:
        raise ValueError("need at least 8 mesh nodes")
    xi = np.linspace(0.0, 1.0, num)
    if grading == "uniform":
        return r0 + (R - r0) * xi
    if grading == "geometric":
        w = ratio ** np.arange(num - 1)
        s = np.concatenate([[0.0], np.cumsum(w)])
        return r0 + (R - r0) * s / s[-1]
    if grading != "power":
        raise ValueError(f"unknown grading {grading!r}")

    def clustering(s):
        return (1.0 - blend) * s ** power + blend * s

    if r0 == 0.0:
        return R * (1.0 - clustering(1.0 - xi))
    t = 2.0 * xi - 1.0
    s = 0.5 * (1.0 + np.sign(t) * clustering(np.abs(t)))
    return r0 + (R - r0) * s


def _difference_weights(r):
    """Nonuniform three-point weights for u' and u'' at interior nodes.

    Returns (w1, w2) with shape (num-2, 3) applying to (u_{i-1}, u_i, u_{i+1}).
    """
    hm = np.diff(r)[:-1]
    hp = np.diff(r)[1:]
    w1 = np.stack([-hp / (hm * (hm + hp)),
                   (hp - hm) / (hm * hp),
                   hm / (hp * (hm + hp))], axis=1)
    w2 = np.stack([2.0 / (hm * (hm + hp)),
                   -2.0 / (hm * hp),
                   2.0 / (hp * (hm + hp))], axis=1)
    return w1, w2


# ---------------------------------------------------------------------------
# the radial reduction
# ---------------------------------------------------------------------------

def radial_reduce(problem: RadialProblem, u, u1, u2, r):
    """Eigenvalues of g^{-1} V[u] for a radial profile, in closed form.

    Column 0 is the radial eigenvalue (1 - rho) u'' + (n-1) u'/r
    + (gamma + rho) u'^2 + A_rad; columns 1..n-1 the tangential eigenvalue
    u'' + (n-1-rho) u'/r + gamma u'^2 + A_tan.  At r = 0 (smooth center,
    balls only) u'/r is replaced by its limit u''.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    u1 = np.atleast_1d(np.asarray(u1, dtype=float))
    u2 = np.atleast_1d(np.asarray(u2, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    n = problem.n
    rho, gamma = problem.params.rho, problem.params.gamma
    center = r == 0.0
    if center.any() and not problem.is_ball:
        raise ValueError("r = 0 is only admissible on ball domains")
    over_r = np.where(center, u2, u1 / np.where(center, 1.0, r))
    a_rad, a_tan = problem.background(r)
    lam = np.empty((r.size, n))
    lam[:, 0] = (1.0 - rho) * u2 + (n - 1) * over_r + (gamma + rho) * u1 ** 2 + a_rad
    lam[:, 1:] = (u2 + (n - 1 - rho) * over_r + gamma * u1 ** 2 + a_tan)[:, None]
    return lam


# ---------------------------------------------------------------------------
# discretization
# ---------------------------------------------------------------------------

class _Discretization:
    """Finite-difference machinery for one mesh of one problem."""

    def __init__(self, problem: RadialProblem, r):
        self.problem = problem
        self.r = np.asarray(r, dtype=float)
        self.num = self.r.size
        self.w1, self.w2 = _difference_weights(self.r)
        self.psi = problem.psi(self.r)
        if np.any(self.psi <= 0.0):
            raise ValueError("psi must be positive on the domain closure")
        self.a_rad, self.a_tan = problem.background(self.r)
        # equation rows: ball -> nodes 0..num-2 (center + interior);
        # annulus -> nodes 1..num-2 (both ends Dirichlet)
        self.center_row = problem.is_ball
        self.rows = np.arange(0 if self.center_row else 1, self.num - 1)
        wsum = (np.abs(self.w1) + np.abs(self.w2)).sum(axis=1)
        if self.center_row:
            h0 = self.r[1] - self.r[0]
            wsum = np.concatenate([[4.0 / h0 ** 2], wsum])
        self.stencil_weight_sum = wsum  # eigenvalue noise per unit eps and |u|

    def derivatives(self, u):
        """(u', u'') at the equation rows, center handled by symmetry."""
        i = np.arange(1, self.num - 1)
        u1 = (self.w1 * np.stack([u[i - 1], u[i], u[i + 1]], axis=1)).sum(axis=1)
        u2 = (self.w2 * np.stack([u[i - 1], u[i], u[i + 1]], axis=1)).sum(axis=1)
        if self.center_row:
            h = self.r[1] - self.r[0]
            u1 = np.concatenate([[0.0], u1])
            u2 = np.concatenate([[2.0 * (u[1] - u[0]) / h ** 2], u2])
        return u1, u2

    def eigenvalues(self, u):
        u1, u2 = self.derivatives(u)
        return radial_reduce(self.problem, u[self.rows], u1, u2, self.r[self.rows])

    def slack(self, u):
        return cone_mod.slack(self.problem.cone, self.eigenvalues(u))

    def rhs(self, u):
        p = self.problem
        return p.rhs_const * self.psi[self.rows] * np.exp(
            2.0 * p.params.varsigma * u[self.rows])

    def residual(self, u, check=True):
        """Nodewise f(lam) - c psi e^{2 varsigma u} at the equation rows."""
        p = self.problem
        lam = self.eigenvalues(u)
        if check:
            sl = cone_mod.slack(p.cone, lam)
            bad = sl <= p.cone.margin
            if bad.any():
                j = int(np.argmax(bad))
                raise FeasibilityError(
                    f"iterate infeasible at node r={self.r[self.rows[j]]:.6g}",
                    lam=lam[j], value=float(sl[j]))
        vals = f_eval(p.op, lam)
        return vals - self.rhs(u)

    def scaled_norm(self, u, F):
        """Sup norm of the residual relative to 1 + rhs, nodewise.

        Near the blow-up boundary both equation sides grow like 1/sigma^2;
        the relative norm is what double precision can actually resolve.
        """
        return float((np.abs(F) / (1.0 + self.rhs(u))).max())

    def noise_floor(self, u):
        """Residual magnitude indistinguishable from stencil round-off.

        The difference weights amplify float noise in u by sum|w|, which
        propagates into the residual through the operator gradient; the rhs
        contributes its own relative eps.
        """
        eps = np.finfo(float).eps
        lam = self.eigenvalues(u)
        gsum = f_grad(self.problem.op, lam).sum(axis=1)
        eig_noise = eps * self.stencil_weight_sum * (1.0 + np.abs(u).max())
        return gsum * eig_noise + 4.0 * eps * self.rhs(u)

    def converged(self, u, F, tol):
        """Residual within tol of the rhs scale, up to the noise floor."""
        gap = np.abs(F) - 4.0 * self.noise_floor(u)
        return bool((gap <= tol * (1.0 + self.rhs(u))).all())

    def noise_cap(self, u):
        """Largest scaled-residual level attributable to stencil round-off.

        Boundary-node noise propagates through the linearization into the
        interior residual, so a stalled line search below this level is
        convergence, not failure; the induced solution error is O(h^2) times
        smaller.
        """
        return float((4.0 * self.noise_floor(u) / (1.0 + self.rhs(u))).max())

    def jacobian_bands(self, u):
        """Tridiagonal Jacobian in solve_banded layout for the equation rows."""
        p = self.problem
        n = p.n
        rho, gamma = p.params.rho, p.params.gamma
        u1, u2 = self.derivatives(u)
        lam = self.eigenvalues(u)
        grads = f_grad(p.op, lam)
        g_rad = grads[:, 0]
        g_tan = grads[:, 1:].sum(axis=1)
        m = self.rows.size
        J = np.zeros((m, 3))  # coefficients on (u_{i-1}, u_i, u_{i+1})
        if self.center_row:
            ii = np.arange(1, m)
            r_i = self.r[self.rows[ii]]
            u1_i, u2_i = u1[ii], u2[ii]
        else:
            ii = np.arange(0, m)
            r_i = self.r[self.rows]
            u1_i, u2_i = u1, u2
        c_rad = (n - 1) / r_i + 2.0 * (gamma + rho) * u1_i
        c_tan = (n - 1 - rho) / r_i + 2.0 * gamma * u1_i
        w1 = self.w1[self.rows[ii] - 1]
        w2 = self.w2[self.rows[ii] - 1]
        gr = g_rad[ii, None]
        gt = g_tan[ii, None]
        J[ii] = gr * ((1.0 - rho) * w2 + c_rad[:, None] * w1) \
            + gt * (w2 + c_tan[:, None] * w1)
        if self.center_row:
            h = self.r[1] - self.r[0]
            total = (n - rho) * (g_rad[0] + g_tan[0])
            # lam = (n - rho) u''(0) + A; u''(0) = 2(u_1 - u_0)/h^2
            J[0, 1] = -2.0 * total / h ** 2
            J[0, 2] = 2.0 * total / h ** 2
        c = p.rhs_const
        vs = p.params.varsigma
        J[:, 1] -= 2.0 * vs * c * self.psi[self.rows] * np.exp(2.0 * vs * u[self.rows])
        return J


def _newton(disc: _Discretization, u_full, boundary, tol, max_iter=200,
            max_halvings=40, armijo=1e-4):
    """Damped Newton with feasibility-preserving backtracking.

    boundary = (left_value_or_None, right_value); fixed Dirichlet entries are
    not unknowns.  A step is accepted only if every node stays inside the
    cone by the margin, then must pass the Armijo decrease test on the
    residual sup norm.
    """
    u = u_full.copy()
    left, right = boundary
    u[-1] = right
    if left is not None:
        u[0] = left
    history = []
    F = disc.residual(u)
    res = disc.scaled_norm(u, F)
    for it in range(max_iter):
        if res < tol or disc.converged(u, F, tol):
            margins = disc.slack(u)
            return u, res, history, margins
        J = disc.jacobian_bands(u)
        m = disc.rows.size
        ab = np.zeros((3, m))
        # rows couple to (row-1, row, row+1); Dirichlet neighbors drop out
        ab[1, :] = J[:, 1]
        ab[0, 1:] = J[:-1, 2]   # superdiagonal
        ab[2, :-1] = J[1:, 0]   # subdiagonal
        try:
            step = scipy.linalg.solve_banded((1, 1), ab, -F)
        except scipy.linalg.LinAlgError as exc:
            raise NonConvergenceError(f"singular linearization at iteration {it}",
                                      history=history) from exc
        t = 1.0
        accepted = False
        for _ in range(max_halvings + 1):
            cand = u.copy()
            cand[disc.rows] += t * step
            sl = cone_mod.slack(disc.problem.cone, disc.eigenvalues(cand))
            if (sl > disc.problem.cone.margin).all():
                Fc = disc.residual(cand, check=False)
                res_c = disc.scaled_norm(cand, Fc)
                if res_c <= (1.0 - armijo * t) * res:
                    u, F, res = cand, Fc, res_c
                    accepted = True
                    break
            t *= 0.5
        history.append({"iter": it, "residual": res, "step_scale": t})
        if not accepted:
            if disc.converged(u, F, tol) or res <= max(tol, 4.0 * disc.noise_cap(u)):
                # decrease blocked only by stencil round-off
                history.append({"iter": it, "residual": res, "stalled_at_noise": True})
                margins = disc.slack(u)
                return u, res, history, margins
            blocking = int(np.argmin(sl))
            raise NonConvergenceError(
                f"line search exhausted at iteration {it} (residual {res:.3e})",
                history=history, node=blocking)
    raise NonConvergenceError(f"Newton stagnated after {max_iter} iterations "
                              f"(residual {res:.3e})", history=history)


# ---------------------------------------------------------------------------
# admissible initial profiles
# ---------------------------------------------------------------------------

def _admissible_profile(disc: _Discretization):
    """Feasible start a + b r^2/2: b from a log-scale scan, a from the
    C^0 bracket so the profile starts as a discrete subsolution."""
    p = disc.problem
    r = disc.r
    q = 0.5 * r ** 2
    best = None
    for b in 10.0 ** np.linspace(-3, 2, 26):
        u = b * q
        try:
            lam = disc.eigenvalues(u)
        except ValueError:
            continue
        sl = cone_mod.slack(p.cone, lam)
        sl_min = float(sl.min())
        if sl_min > p.cone.margin and (best is None or sl_min > best[1]):
            best = (b, sl_min)
    if best is None:
        raise NonConvergenceError("no admissible quadratic start found")
    b = best[0]
    u = b * q
    lam = disc.eigenvalues(u)
    vals = f_eval(p.op, lam)
    vs = p.params.varsigma
    shift = (np.log(vals / (p.rhs_const * disc.psi[disc.rows]))
             / (2.0 * vs) - u[disc.rows])
    a = float(shift.min()) - 0.5
    return u + a


# ---------------------------------------------------------------------------
# finite boundary data
# ---------------------------------------------------------------------------

def solve_finite(problem: RadialProblem, phi, num=400, tol=1e-10,
                 grading="power", u_start=None, max_iter=200, r_nodes=None):
    """Dirichlet problem with constant boundary value phi.

    Starts from an admissible profile and continues in the boundary value
    (warm starts, step halving on failure) until the target phi is reached.
    An explicit node array r_nodes overrides the built-in graded mesh.
    """
    if r_nodes is not None:
        r = np.asarray(r_nodes, dtype=float)
    else:
        r = graded_mesh(problem.domain_r0, problem.domain_R, num, grading=grading)
    disc = _Discretization(problem, r)
    if u_start is not None:
        u = np.asarray(u_start, dtype=float).copy()
    else:
        u = _admissible_profile(disc)
    history_all = []

    def bc(value):
        return (None, value) if problem.is_ball else (value, value)

    target = float(phi)
    current = float(u[-1])
    u, res, hist, margins = _newton(disc, u, bc(current), tol, max_iter=max_iter)
    history_all += hist
    step = target - current
    guard = 0
    while current != target and guard < 200:
        guard += 1
        remaining = target - current
        if abs(step) >= abs(remaining):
            step = remaining
        value = target if step == remaining else current + step
        # constant shift keeps the eigenvalues (hence feasibility) unchanged
        u_warm = u + (value - u[-1])
        try:
            u2, res, hist, margins = _newton(disc, u_warm, bc(value), tol,
                                             max_iter=max_iter)
        except (NonConvergenceError, FeasibilityError) as exc:
            step *= 0.5
            if abs(step) < 1e-10:
                if isinstance(exc, FeasibilityError):
                    raise NonConvergenceError(
                        "boundary-value continuation infeasible at minimal step",
                        history=history_all) from exc
                raise
            continue
        u = u2
        current = value
        history_all += hist
        step *= 2.0
    if current != target:
        raise NonConvergenceError("boundary-value continuation did not finish",
                                  history=history_all)
    sol = RadialSolution(r=r, u=u, sigma=problem.sigma(r), residual_norm=res,
                         newton_history=history_all, margins=margins,
                         boundary_value=target)
    return sol


# ---------------------------------------------------------------------------
# infinite boundary data: the increasing family
# ---------------------------------------------------------------------------

def _check_increasing_family_structure(problem: RadialProblem):
    """Boundary data log k requires (gamma, ..., gamma, gamma+rho+1) in Gamma."""
    vec = problem.params.increasing_family_vector()
    return bool(cone_mod.contains(problem.cone, vec))


def solve_infinite(problem: RadialProblem, K=10, num=1200, tol=1e-10,
                   grading="power", settle_tol=1e-6, monotone_tol=1e-9,
                   r_nodes=None):
    """Increasing family u^(k), k = 1, 2, 4, ..., 2^K, boundary value log k.

    Asserts the nodewise monotone increase of the family, then returns the
    solutions together with an Aitken-extrapolated interior limit and the
    settled mask (successive differences below settle_tol).
    """
    if not _check_increasing_family_structure(problem):
        raise ParameterError(
            "increasing family with epsilon = 1 requires "
            "(gamma, ..., gamma, gamma+rho+1) inside the cone")
    ks = [2 ** j for j in range(K + 1)]
    sols = []
    u_prev = None
    for k in ks:
        phi = float(np.log(k))
        sol = solve_finite(problem, phi, num=num, tol=tol, grading=grading,
                           u_start=u_prev, r_nodes=r_nodes)
        sol.k_index = k
        sols.append(sol)
        if u_prev is not None:
            drop = float((sol.u - u_prev).min())
            if drop < -monotone_tol:
                raise SchemeError(
                    f"monotone increase violated by {-drop:.3e} between "
                    f"k={sols[-2].k_index} and k={k}; discretization too coarse")
        u_prev = sol.u
    limit, settled = _aitken_limit([s.u for s in sols], settle_tol)
    return {
        "solutions": sols,
        "r": sols[-1].r,
        "sigma": problem.sigma(sols[-1].r),
        "limit": limit,
        "settled": settled,
        "correction": np.abs(limit - sols[-1].u),
        "ks": ks,
    }


def _aitken_pass(us):
    """One Delta-squared pass along the k-doubling direction."""
    out = []
    for i in range(2, len(us)):
        u0, u1, u2 = us[i - 2], us[i - 1], us[i]
        d0 = u1 - u0
        d1 = u2 - u1
        denom = d1 - d0
        safe = np.abs(denom) > 1e-14
        lim = u2 - np.where(safe, d1 ** 2 / np.where(safe, denom, 1.0), 0.0)
        # trusted only where the differences look geometric and contracting
        ratio = np.where(np.abs(d0) > 1e-14, d1 / np.where(np.abs(d0) > 1e-14, d0, 1.0), 0.0)
        good = safe & (ratio > -0.1) & (ratio < 0.97)
        out.append(np.where(good, lim, u2))
    return out


def _aitken_limit(us, settle_tol):
    """Two-level Aitken extrapolation of the increasing family.

    The boundary deficit decays like 1/k with k doubling, so one pass
    removes the leading term and a second pass the next one.
    """
    if len(us) < 3:
        u = us[-1]
        return u.copy(), np.zeros_like(u, dtype=bool)
    level1 = _aitken_pass(us)
    limit = _aitken_pass(level1)[-1] if len(level1) >= 3 else level1[-1]
    settled = np.abs(us[-1] - us[-2]) < settle_tol
    return limit, settled


# ---------------------------------------------------------------------------
# exhaustion on nested balls
# ---------------------------------------------------------------------------

def _nested_exhaustion_meshes(radii, num, collar_frac=0.35, collar_power=2.5):
    """Meshes for nested balls that agree exactly on shared interior nodes.

    Each mesh is a uniform master lattice up to R_k - delta_k plus a graded
    collar clustered at R_k.  Master nodes below every smaller ball's collar
    coincide exactly across meshes, so monotonicity checks on the overlap
    carry no interpolation error.
    """
    R_max = max(radii)
    n_master = max(16, num // 3)
    h = R_max / n_master
    master = np.arange(0, n_master + 1) * h
    meshes = {}
    blend = 0.02
    for R in radii:
        delta = collar_frac * min(radii)
        core = master[master <= R - delta]
        n_collar = max(8, num - core.size)
        xi = np.linspace(0.0, 1.0, n_collar + 1)
        s = 1.0 - ((1.0 - blend) * (1.0 - xi) ** collar_power + blend * (1.0 - xi))
        collar = core[-1] + (R - core[-1]) * s
        meshes[R] = np.unique(np.concatenate([core, collar]))
    return meshes, master


def exhaustion_solve(problem_factory, radii, K=8, num=900, tol=1e-10,
                     u_lower=None, monotone_tol=1e-9):
    """Maximal-solution scheme on an exhausting family of balls.

    problem_factory(R) must yield the RadialProblem on the ball of radius R
    (same equation restricted).  Solves the infinite-boundary problem on each
    ball.  The decrease on overlaps is asserted between like-for-like family
    members (the common top boundary value log 2^K) at exactly shared nodes;
    the Aitken limit is reported as the maximal-solution estimate, and the
    lower bound u >= u_lower is checked nodewise.
    """
    radii = sorted(radii)
    meshes, _ = _nested_exhaustion_meshes(radii, num)
    runs = []
    prev = None
    for R in radii:
        problem = problem_factory(R)
        fam = solve_infinite(problem, K=K, num=num, tol=tol, r_nodes=meshes[R])
        run = {"R": R, "family": fam, "limit": fam["limit"], "r": fam["r"],
               "top": fam["solutions"][-1].u}
        if prev is not None:
            shared = np.intersect1d(prev["r"], run["r"])
            ia = np.searchsorted(prev["r"], shared)
            ib = np.searchsorted(run["r"], shared)
            rise_top = float((run["top"][ib] - prev["top"][ia]).max())
            rise_lim = float((run["limit"][ib] - prev["limit"][ia]).max())
            run["overlap_excess_top"] = rise_top
            run["overlap_excess_limit"] = rise_lim
            if rise_top > monotone_tol:
                raise SchemeError(
                    f"exhaustion decrease violated by {rise_top:.3e} between "
                    f"R={prev['R']} and R={R}")
        if u_lower is not None:
            low = u_lower(run["r"])
            run["lower_bound_defect_top"] = float((low - run["top"]).max())
            run["lower_bound_defect"] = float((low - run["limit"]).max())
        runs.append(run)
        prev = run
    return runs


# ---------------------------------------------------------------------------
# barriers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BarrierSpec:
    """Barrier on the collar sigma < delta.

    kind "lower-finite":  w = eps log(delta^2/(k sigma + delta^2)) + phi
    kind "upper-finite":  w = eps log(1 + sigma/delta^2) + phi
    kind "infinite-lower": h = log(k/(k sigma + 1)) + shift + 1/(sigma+delta) - 1/delta
    """

    kind: str
    eps: float = 1.0
    delta: float = 0.1
    k: float = 1.0
    phi: float = 0.0
    shift: float = 0.0

    def value(self, sig):
        sig = np.asarray(sig, dtype=float)
        if self.kind == "lower-finite":
            return self.eps * np.log(self.delta ** 2 / (self.k * sig + self.delta ** 2)) + self.phi
        if self.kind == "upper-finite":
            return self.eps * np.log1p(sig / self.delta ** 2) + self.phi
        if self.kind == "infinite-lower":
            return (np.log(self.k / (self.k * sig + 1.0)) + self.shift
                    + 1.0 / (sig + self.delta) - 1.0 / self.delta)
        raise ValueError(f"unknown barrier kind {self.kind!r}")

    def d_dsigma(self, sig):
        sig = np.asarray(sig, dtype=float)
        if self.kind == "lower-finite":
            return -self.eps * self.k / (self.k * sig + self.delta ** 2)
        if self.kind == "upper-finite":
            return self.eps / (self.delta ** 2 + sig)
        return -self.k / (self.k * sig + 1.0) - 1.0 / (sig + self.delta) ** 2

    def d2_dsigma2(self, sig):
        sig = np.asarray(sig, dtype=float)
        if self.kind == "lower-finite":
            return self.eps * self.k ** 2 / (self.k * sig + self.delta ** 2) ** 2
        if self.kind == "upper-finite":
            return -self.eps / (self.delta ** 2 + sig) ** 2
        return (self.k ** 2 / (self.k * sig + 1.0) ** 2
                + 2.0 / (sig + self.delta) ** 3)


def infinite_lower_barrier(problem: RadialProblem, k, eps, delta):
    """h_{k,eps,delta} with the shift built from the problem data."""
    psi_boundary = float(problem.psi(np.array([problem.domain_R]))[0])
    scale = problem.params.alpha * (problem.n * problem.params.tau + 2.0
                                    - 2.0 * problem.n)
    shift = 0.5 * np.log((1.0 - eps) ** 2 * scale
                         / (2.0 * (problem.n - 2) * (psi_boundary + eps)))
    return BarrierSpec(kind="infinite-lower", eps=eps, delta=delta, k=k, shift=shift)


def _barrier_eigenvalues(problem: RadialProblem, bar: BarrierSpec, r):
    """lam(g^{-1} V[h(sigma(r))]) on the outer collar (sigma = R - r there)."""
    sig = problem.domain_R - r
    u1 = -bar.d_dsigma(sig)       # d sigma/dr = -1 on the outer collar
    u2 = bar.d2_dsigma2(sig)
    u = bar.value(sig)
    return u, radial_reduce(problem, u, u1, u2, r)


def barrier_subsolution_check(problem: RadialProblem, bar: BarrierSpec, r_nodes):
    """Nodewise f(lam(g^{-1}V[h])) >= c psi e^{2h} on the collar; returns violations."""
    u, lam = _barrier_eigenvalues(problem, bar, r_nodes)
    sl = cone_mod.slack(problem.cone, lam)
    feasible = sl > problem.cone.margin
    lhs = np.full(r_nodes.size, -np.inf)
    if feasible.any():
        lhs[feasible] = f_eval(problem.op, lam[feasible])
    rhs = problem.rhs_const * problem.psi(r_nodes) * np.exp(
        2.0 * problem.params.varsigma * u)
    ok = feasible & (lhs >= rhs)
    return {
        "passed": bool(ok.all()),
        "violations": r_nodes[~ok].tolist(),
        "min_gap": float((lhs - rhs).min()),
    }


def barrier_check(problem: RadialProblem, solution: RadialSolution, phi,
                  eps_grid=(0.01, 0.05, 0.1, 0.5, 1.0),
                  delta_grid=(0.2, 0.1, 0.05, 0.025),
                  subsolution_k=None):
    """Search the documented (eps, delta) grid for verified barriers.

    Checks the sandwich w <= u <= w-bar nodewise on the collar sigma < delta
    for the finite problem with boundary value phi, and the subsolution
    property of the infinite-data barrier at the collar nodes.  Diagnostic:
    returns the violations instead of raising.
    """
    sig = solution.sigma
    report = {"upper": None, "lower": None, "subsolution": None, "tried": []}
    for delta in delta_grid:
        collar = (sig < delta) & (sig > 0.0)
        if collar.sum() < 4:
            continue
        for eps in eps_grid:
            upper = BarrierSpec("upper-finite", eps=eps, delta=delta, phi=phi)
            lower = BarrierSpec("lower-finite", eps=eps, delta=delta, k=1.0, phi=phi)
            up_ok = bool((solution.u[collar] <= upper.value(sig[collar]) + 1e-12).all())
            lo_ok = bool((solution.u[collar] >= lower.value(sig[collar]) - 1e-12).all())
            report["tried"].append({"eps": eps, "delta": delta,
                                    "upper_ok": up_ok, "lower_ok": lo_ok})
            if up_ok and report["upper"] is None:
                report["upper"] = {"eps": eps, "delta": delta}
            if lo_ok and report["lower"] is None:
                report["lower"] = {"eps": eps, "delta": delta}
    for delta in delta_grid:
        for eps in eps_grid:
            if eps >= 1.0:
                continue  # the shift needs (1 - eps) > 0
            k = subsolution_k if subsolution_k is not None else int(np.ceil(1.0 / delta)) * 2
            bar = infinite_lower_barrier(problem, k, eps, delta)
            r_nodes = solution.r[(sig < delta) & (sig > 1e-9)]
            if r_nodes.size < 4:
                continue
            sub = barrier_subsolution_check(problem, bar, r_nodes)
            if sub["passed"]:
                report["subsolution"] = {"eps": eps, "delta": delta, "k": k,
                                         "min_gap": sub["min_gap"]}
                break
        if report["subsolution"] is not None:
            break
    return report


# ---------------------------------------------------------------------------
# asymptotic rate
# ---------------------------------------------------------------------------

def asymptotic_rate(family, bands=((0.05, 0.15), (0.07, 0.2), (0.1, 0.25)),
                    settle_cap=0.08):
    """Boundary rate lim (u + log sigma) by linear extrapolation in sigma.

    family is the dict returned by solve_infinite.  Each band [lo, hi] in
    sigma gives an intercept of the linear fit of u + log sigma on the
    extrapolated limit; the estimate is their mean and the confidence their
    spread.  A band is usable only where the Aitken correction magnitude is
    below settle_cap (the limit has settled there); requires varsigma = 1.
    """
    sols = family["solutions"]
    sig = family["sigma"]
    u = family["limit"]
    corr = family.get("correction")
    intercepts = []
    for lo, hi in bands:
        mask = (sig >= lo) & (sig <= hi)
        if mask.sum() < 5 or (corr is not None and corr[mask].max() > settle_cap):
            raise RateUnavailableError(
                f"band sigma in [{lo}, {hi}] is not settled; increase K")
        y = u[mask] + np.log(sig[mask])
        coef = np.polyfit(sig[mask], y, 1)
        intercepts.append(coef[1])
    est = float(np.mean(intercepts))
    spread = float(np.max(intercepts) - np.min(intercepts))
    return {"rate": est, "spread": spread, "bands": list(map(list, bands)),
            "k_max": sols[-1].k_index}


# ---------------------------------------------------------------------------
# orderings and canned problems
# ---------------------------------------------------------------------------

def comparison_ordering(problem: RadialProblem, phi, scale=1.1, num=400,
                        tol=1e-10):
    """Scaling psi by `scale` > 1 with fixed boundary data must not raise the
    solution anywhere (comparison principle).  Returns the signed excess."""
    base = solve_finite(problem, phi, num=num, tol=tol)
    scaled_problem = RadialProblem(
        domain_r0=problem.domain_r0, domain_R=problem.domain_R,
        params=problem.params, op=problem.op, cone=problem.cone,
        psi=lambda rr: scale * problem.psi(rr),
        A_rad=problem.A_rad, A_tan=problem.A_tan)
    scaled = solve_finite(scaled_problem, phi, num=num, tol=tol)
    excess = float((scaled.u - base.u).max())
    return {"excess": excess, "base": base, "scaled": scaled}


def loewner_nirenberg_problem(n=3, R=1.0, cone_margin=1e-12):
    """The scalar-curvature equation of constant curvature -1 on the ball of
    radius R, in the curvature-operator form: (alpha, tau) = (-1, 0),
    f = sigma_1/n on Gamma_1, psi = 1/(n(n-2))."""
    from .cone import garding
    from .symfunc import sigma_op
    from .transform import conformal_params
    cone_spec = garding(n, 1, margin=cone_margin)
    params = conformal_params(-1, 0.0, n, cone_spec,
                              constants=cone_mod.cone_constants(cone_spec, budget=200))
    psi_val = 1.0 / (n * (n - 2))
    return RadialProblem(
        domain_r0=0.0, domain_R=R, params=params,
        op=sigma_op(n, 1, power=1.0, normalized=True),
        cone=cone_spec,
        psi=lambda r: np.full_like(np.asarray(r, dtype=float), psi_val))
