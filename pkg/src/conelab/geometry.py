"""Conformal-geometry kernels on conformally flat backgrounds.

All tensors are evaluated componentwise in Cartesian coordinates of the
ambient R^n; curvature of conformal metrics g = e^{2 phi} delta always comes
from the conformal formulas off the flat base, never from Christoffel
bookkeeping.  Points are arrays of shape (N, n); symmetric (0,2)-tensor
values have shape (N, n, n).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from . import cone as cone_mod
from .errors import ConstructionError, ResolutionError
from .transform import ConformalParams

__all__ = [
    "ScalarField",
    "CallableField",
    "RadialProfileField",
    "zero_field",
    "constant_field",
    "exp_field",
    "sum_field",
    "DomainSpec",
    "ball",
    "annulus",
    "box_minus_balls",
    "ball_minus_balls",
    "MetricSpec",
    "euclidean",
    "conformal_metric",
    "hyperbolic_ball",
    "ricci_conformal",
    "scalar_curvature_conformal",
    "a_tau_alpha",
    "conformal_a_tau_alpha",
    "conformal_change_formula",
    "schouten_change_formula",
    "V_of_u",
    "eigenvalues_wrt",
    "eigenvalues_conformal_batch",
    "morse_admissible",
    "AdmissibleStart",
    "scalar_curvature_residual",
    "loewner_nirenberg_exact",
    "save_field",
    "load_field",
]


# ---------------------------------------------------------------------------
# scalar fields
# ---------------------------------------------------------------------------

class ScalarField:
    """Scalar field on R^n exposing value/grad/hess at point batches."""

    def value(self, x):
        raise NotImplementedError

    def grad(self, x):
        raise NotImplementedError

    def hess(self, x):
        raise NotImplementedError


class CallableField(ScalarField):
    """Field from callables; missing derivatives fall back to central differences."""

    def __init__(self, value_fn, grad_fn=None, hess_fn=None, fd_step=1e-5):
        self._v = value_fn
        self._g = grad_fn
        self._h = hess_fn
        self.fd_step = fd_step

    def value(self, x):
        return np.asarray(self._v(np.asarray(x, dtype=float)))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        if self._g is not None:
            return np.asarray(self._g(x))
        n = x.shape[1]
        h = self.fd_step
        g = np.empty_like(x)
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            g[:, i] = (self.value(x + e) - self.value(x - e)) / (2 * h)
        return g

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        if self._h is not None:
            return np.asarray(self._h(x))
        n = x.shape[1]
        h = self.fd_step
        H = np.empty((x.shape[0], n, n))
        f0 = self.value(x)
        for i in range(n):
            ei = np.zeros(n); ei[i] = h
            H[:, i, i] = (self.value(x + ei) - 2 * f0 + self.value(x - ei)) / h ** 2
            for j in range(i + 1, n):
                ej = np.zeros(n); ej[j] = h
                mixed = (self.value(x + ei + ej) - self.value(x + ei - ej)
                         - self.value(x - ei + ej) + self.value(x - ei - ej)) / (4 * h ** 2)
                H[:, i, j] = mixed
                H[:, j, i] = mixed
        return H


class RadialProfileField(ScalarField):
    """Radial field u(x) = h(|x|) from profile callables h, h', h''.

    The center is handled by the smooth limit h'(r)/r -> h''(0); profiles must
    satisfy h'(0) = 0 for use on balls.
    """

    def __init__(self, h, h1, h2):
        self.h, self.h1, self.h2 = h, h1, h2

    def value(self, x):
        return self.h(np.linalg.norm(np.asarray(x, dtype=float), axis=1))

    def grad(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=1)
        rr = np.where(r > 1e-12, r, 1.0)
        fac = np.where(r > 1e-12, self.h1(rr) / rr, 0.0)
        return fac[:, None] * x

    def hess(self, x):
        x = np.asarray(x, dtype=float)
        N, n = x.shape
        r = np.linalg.norm(x, axis=1)
        small = r < 1e-12
        rr = np.where(small, 1.0, r)
        a = self.h1(rr) / rr                      # tangential eigenvalue
        b = self.h2(rr) - a                       # radial correction
        xhat = x / rr[:, None]
        H = a[:, None, None] * np.broadcast_to(np.eye(n), (N, n, n)).copy()
        H += b[:, None, None] * np.einsum("ni,nj->nij", xhat, xhat)
        if small.any():
            H[small] = self.h2(np.full(small.sum(), 0.0))[:, None, None] * np.eye(n)
        return H


class _SumField(ScalarField):
    def __init__(self, a, b):
        self.a, self.b = a, b

    def value(self, x):
        return self.a.value(x) + self.b.value(x)

    def grad(self, x):
        return self.a.grad(x) + self.b.grad(x)

    def hess(self, x):
        return self.a.hess(x) + self.b.hess(x)


def sum_field(a, b):
    return _SumField(a, b)


def zero_field():
    return constant_field(0.0)


def constant_field(c):
    return CallableField(lambda x: np.full(x.shape[0], float(c)),
                         lambda x: np.zeros_like(x),
                         lambda x: np.zeros((x.shape[0], x.shape[1], x.shape[1])))


def exp_field(v: ScalarField, N: float):
    """e^{N v} with chain-rule derivatives; the admissible-start ansatz."""

    def val(x):
        return np.exp(N * v.value(x))

    def grad(x):
        return (N * np.exp(N * v.value(x)))[:, None] * v.grad(x)

    def hess(x):
        ev = np.exp(N * v.value(x))
        gv = v.grad(x)
        return (N * ev)[:, None, None] * v.hess(x) \
            + (N * N * ev)[:, None, None] * np.einsum("ni,nj->nij", gv, gv)

    return CallableField(val, grad, hess)


# ---------------------------------------------------------------------------
# domains
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DomainSpec:
    """Model domain with an exact boundary-distance function.

    kind "ball": {|x| < radius}; "annulus": {r0 < |x| < radius};
    "box": [lo, hi]^n.  Spherical holes (center, radius) may be removed from
    ball and box domains; sigma is then the exact distance to the union of
    the outer boundary and the hole spheres.
    """

    n: int
    kind: str
    radius: float = 1.0
    r0: float = 0.0
    lo: float = -1.0
    hi: float = 1.0
    holes: tuple = ()

    def __post_init__(self):
        if self.kind not in ("ball", "annulus", "box"):
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if self.kind == "annulus" and not 0.0 < self.r0 < self.radius:
            raise ValueError("annulus requires 0 < r0 < radius")

    def sigma(self, x):
        """Distance to the domain boundary (positive inside)."""
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=1)
        if self.kind == "ball":
            s = self.radius - r
        elif self.kind == "annulus":
            s = np.minimum(self.radius - r, r - self.r0)
        else:
            s = np.minimum((x - self.lo).min(axis=1), (self.hi - x).min(axis=1))
        for c, rad in self.holes:
            d = np.linalg.norm(x - np.asarray(c, dtype=float), axis=1) - rad
            s = np.minimum(s, d)
        return s

    def inside(self, x):
        return self.sigma(x) > 0.0

    def bounding_box(self):
        if self.kind == "box":
            return self.lo, self.hi
        return -self.radius, self.radius

    def grid_points(self, m):
        """m^n lattice over the bounding box plus the inside mask."""
        lo, hi = self.bounding_box()
        axes = [np.linspace(lo, hi, m) for _ in range(self.n)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([g.ravel() for g in mesh], axis=1)
        return pts, self.inside(pts)

    def describe(self):
        core = {"ball": f"ball(R={self.radius:g})",
                "annulus": f"annulus({self.r0:g},{self.radius:g})",
                "box": f"box[{self.lo:g},{self.hi:g}]^{self.n}"}[self.kind]
        if self.holes:
            core += f" minus {len(self.holes)} ball(s)"
        return core


def ball(n, radius=1.0):
    return DomainSpec(n=n, kind="ball", radius=radius)


def annulus(n, r0, radius):
    return DomainSpec(n=n, kind="annulus", r0=r0, radius=radius)


def box_minus_balls(n, lo, hi, holes=()):
    return DomainSpec(n=n, kind="box", lo=lo, hi=hi,
                      holes=tuple((tuple(c), float(r)) for c, r in holes))


def ball_minus_balls(n, radius, holes=()):
    return DomainSpec(n=n, kind="ball", radius=radius,
                      holes=tuple((tuple(c), float(r)) for c, r in holes))


# ---------------------------------------------------------------------------
# metrics and curvature
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricSpec:
    """Conformally flat metric g = e^{2 phi} delta given by its log factor."""

    n: int
    kind: str
    u0: Optional[ScalarField] = None

    def log_factor(self) -> ScalarField:
        if self.kind == "euclidean":
            return zero_field()
        if self.kind == "conformal":
            return self.u0

        # hyperbolic ball: phi = log 2 - log(1 - |x|^2), sectional curvature -1
        def val(x):
            return np.log(2.0) - np.log1p(-np.einsum("ni,ni->n", x, x))

        def grad(x):
            r2 = np.einsum("ni,ni->n", x, x)
            return 2.0 * x / (1.0 - r2)[:, None]

        def hess(x):
            r2 = np.einsum("ni,ni->n", x, x)
            n = x.shape[1]
            return (2.0 / (1.0 - r2))[:, None, None] * np.eye(n) \
                + (4.0 / (1.0 - r2) ** 2)[:, None, None] * np.einsum("ni,nj->nij", x, x)

        return CallableField(val, grad, hess)

    def factor(self, x):
        """Conformal factor e^{2 phi} at points."""
        if self.kind == "euclidean":
            return np.ones(np.asarray(x).shape[0])
        return np.exp(2.0 * self.log_factor().value(x))


def euclidean(n):
    return MetricSpec(n=n, kind="euclidean")


def conformal_metric(n, u0: ScalarField):
    return MetricSpec(n=n, kind="conformal", u0=u0)


def hyperbolic_ball(n):
    return MetricSpec(n=n, kind="hyperbolic_ball")


def ricci_conformal(phi: ScalarField, x):
    """Ricci tensor of e^{2 phi} delta, components in the flat frame."""
    x = np.asarray(x, dtype=float)
    n = x.shape[1]
    g = phi.grad(x)
    H = phi.hess(x)
    lap = np.trace(H, axis1=1, axis2=2)
    g2 = np.einsum("ni,ni->n", g, g)
    outer = np.einsum("ni,nj->nij", g, g)
    return (-(n - 2) * (H - outer)
            - (lap + (n - 2) * g2)[:, None, None] * np.eye(n))


def scalar_curvature_conformal(phi: ScalarField, x):
    """Scalar curvature of e^{2 phi} delta."""
    x = np.asarray(x, dtype=float)
    n = x.shape[1]
    lap = np.trace(phi.hess(x), axis1=1, axis2=2)
    g2 = np.einsum("ni,ni->n", phi.grad(x), phi.grad(x))
    return np.exp(-2.0 * phi.value(x)) * (-2 * (n - 1) * lap - (n - 1) * (n - 2) * g2)


def a_tau_alpha(metric: MetricSpec, alpha, tau):
    """Modified Schouten tensor (alpha/(n-2))(Ric - tau R g/(2(n-1))).

    Returns an evaluator points -> (N, n, n) of flat-frame components.
    """
    n = metric.n

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        if metric.kind == "euclidean":
            return np.zeros((x.shape[0], n, n))
        phi = metric.log_factor()
        ric = ricci_conformal(phi, x)
        R = scalar_curvature_conformal(phi, x)
        gmat = np.exp(2.0 * phi.value(x))[:, None, None] * np.eye(n)
        return (alpha / (n - 2)) * (ric - (tau / (2.0 * (n - 1))) * R[:, None, None] * gmat)

    return evaluate


def conformal_a_tau_alpha(u: ScalarField, base: MetricSpec, alpha, tau):
    """A^{tau,alpha} of e^{2u} base, via the total flat log factor."""
    total = sum_field(base.log_factor(), u)
    return a_tau_alpha(conformal_metric(base.n, total), alpha, tau)


def conformal_change_formula(u: ScalarField, base: MetricSpec, alpha, tau, A_base=None):
    """Incremental change of A^{tau,alpha} under g~ = e^{2u} g:

        A~ = A + (alpha(tau-1)/(n-2)) (Delta u) g - alpha Hess u
               + (alpha(tau-2)/2) |grad u|^2 g + alpha du x du

    Derivatives are with respect to the base metric; only the flat base is
    supported here (the total-factor route covers conformal bases).
    """
    if base.kind != "euclidean":
        raise ValueError("incremental change formula implemented for the flat base only")
    n = base.n
    A0 = A_base if A_base is not None else (lambda x: np.zeros((x.shape[0], n, n)))

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        H = u.hess(x)
        g = u.grad(x)
        lap = np.trace(H, axis1=1, axis2=2)
        g2 = np.einsum("ni,ni->n", g, g)
        return (A0(x)
                + (alpha * (tau - 1.0) / (n - 2)) * lap[:, None, None] * np.eye(n)
                - alpha * H
                + (alpha * (tau - 2.0) / 2.0) * g2[:, None, None] * np.eye(n)
                + alpha * np.einsum("ni,nj->nij", g, g))

    return evaluate


def schouten_change_formula(u: ScalarField, base: MetricSpec, A_base=None):
    """Schouten special case: A~ = A - Hess u - |grad u|^2 g/2 + du x du."""
    return conformal_change_formula(u, base, 1, 1.0, A_base=A_base)


def V_of_u(u: ScalarField, base: MetricSpec, params: ConformalParams, A=None):
    """V[u] = (Delta u) g - rho Hess u + gamma |grad u|^2 g + rho du x du + A.

    Differential operators are taken with respect to the base metric; for a
    conformal base the covariant Hessian expands through the conformal
    Christoffel terms.  The background term defaults to
    A = ((n-2)/(alpha(tau-1))) A^{tau,alpha} of the base, which makes
    V[u] = ((n-2)/(alpha(tau-1))) A^{tau,alpha} of e^{2u} base.
    """
    n = base.n
    rho, gamma = params.rho, params.gamma
    if A is None:
        Afun = a_tau_alpha(base, params.alpha, params.tau)
        scale = (n - 2) / (params.alpha * (params.tau - 1.0))

        def A_eval(x):
            return scale * Afun(x)
    else:
        A_eval = A

    def evaluate(x):
        x = np.asarray(x, dtype=float)
        Du = u.grad(x)
        D2u = u.hess(x)
        grad2_flat = np.einsum("ni,ni->n", Du, Du)
        if base.kind == "euclidean":
            hess_g = D2u
            lap_flatframe = np.trace(D2u, axis1=1, axis2=2)
        else:
            phi = base.log_factor()
            Dphi = phi.grad(x)
            dot = np.einsum("ni,ni->n", Dphi, Du)
            hess_g = D2u - (np.einsum("ni,nj->nij", Du, Dphi)
                            + np.einsum("ni,nj->nij", Dphi, Du)) \
                + dot[:, None, None] * np.eye(n)
            lap_flatframe = np.trace(D2u, axis1=1, axis2=2) + (n - 2) * dot
        # (Delta_g u) g and |grad u|_g^2 g both reduce to flat-frame products
        return (lap_flatframe[:, None, None] * np.eye(n)
                - rho * hess_g
                + gamma * grad2_flat[:, None, None] * np.eye(n)
                + rho * np.einsum("ni,nj->nij", Du, Du)
                + A_eval(x))

    return evaluate


def eigenvalues_wrt(g, U):
    """Generalized eigenvalues of the symmetric pair (U, g), ascending.

    g must be symmetric positive definite.  A scalar-multiple-of-identity
    fast path divides the ordinary eigenvalues by the factor.
    """
    g = np.asarray(g, dtype=float)
    U = np.asarray(U, dtype=float)
    if g.ndim != 2:
        raise ValueError("eigenvalues_wrt expects a single (n, n) pair")
    d = np.diag(g)
    if np.allclose(g, np.diag(d)) and np.allclose(d, d[0]):
        if d[0] <= 0:
            raise ValueError("metric must be positive definite")
        return np.sort(np.linalg.eigvalsh(U)) / d[0]
    if np.linalg.eigvalsh(g).min() <= 0:
        raise ValueError("metric must be positive definite")
    return np.sort(scipy.linalg.eigh(U, g, eigvals_only=True))


def eigenvalues_conformal_batch(factor, U):
    """lam(g^{-1} U) for g = factor * identity per point; U of shape (N, n, n)."""
    w = np.linalg.eigvalsh(U)
    return w / np.asarray(factor, dtype=float)[:, None]


# ---------------------------------------------------------------------------
# admissible metric construction
# ---------------------------------------------------------------------------

def _critical_point_free_function(domain: DomainSpec):
    """A smooth nonnegative v with |grad v| = 1 on the closed domain.

    Ball and box kinds (with or without holes) use a shifted coordinate
    function; the annulus uses |x|.  Existence on general manifolds is a
    Morse-theory fact; on these model domains an explicit v suffices.
    """
    if domain.kind == "annulus":
        return RadialProfileField(lambda r: r, lambda r: np.ones_like(r),
                                  lambda r: np.zeros_like(r))
    lo, _ = domain.bounding_box()
    shift = 0.5 - lo

    def val(x):
        return x[:, 0] + shift

    def grad(x):
        g = np.zeros_like(x)
        g[:, 0] = 1.0
        return g

    def hess(x):
        return np.zeros((x.shape[0], x.shape[1], x.shape[1]))

    return CallableField(val, grad, hess)


@dataclass
class AdmissibleStart:
    """Certificate of the exponential admissible-start search."""

    N: float
    v: ScalarField = field(repr=False)
    u_lower: ScalarField = field(repr=False)
    min_slack: float = 0.0
    points: np.ndarray = field(default=None, repr=False)
    grad_v_min: float = 0.0


def morse_admissible(domain: DomainSpec, params: ConformalParams, cone_spec,
                     base: Optional[MetricSpec] = None, grid_m=12, max_exponent=20):
    """Admissible start u = e^{N v}: the smallest doubling N putting
    lam(g^{-1} V[u]) inside the cone at every sampled interior point.

    Raises ConstructionError when no N <= 2^max_exponent works, signalling
    (alpha, tau) outside the construction branch gamma >= 0, gamma+rho >= 0.
    """
    base = base if base is not None else euclidean(domain.n)
    v = _critical_point_free_function(domain)
    pts, mask = domain.grid_points(grid_m)
    pts = pts[mask]
    if pts.shape[0] < 5:
        raise ResolutionError("admissibility grid too coarse: fewer than 5 interior points")
    gv = np.linalg.norm(v.grad(pts), axis=1)
    fac = base.factor(pts)
    Vbuild = lambda u: V_of_u(u, base, params)  # noqa: E731
    for expo in range(0, max_exponent + 1):
        N = float(2 ** expo)
        u = exp_field(v, N)
        lam = eigenvalues_conformal_batch(fac, Vbuild(u)(pts))
        sl = cone_mod.slack(cone_spec, lam)
        if (sl > cone_spec.margin).all():
            if not cone_mod.contains(cone_spec, lam).all():  # independent re-check
                raise ConstructionError("certificate re-verification failed")
            return AdmissibleStart(N=N, v=v, u_lower=u, min_slack=float(sl.min()),
                                   points=pts, grad_v_min=float(gv.min()))
    raise ConstructionError(
        f"no N <= 2^{max_exponent} makes e^{{Nv}} admissible; "
        f"(alpha, tau) = ({params.alpha}, {params.tau}) is likely outside the "
        "construction branch gamma >= 0, gamma + rho >= 0")


# ---------------------------------------------------------------------------
# the Loewner-Nirenberg closed form and its scalar equation
# ---------------------------------------------------------------------------

def loewner_nirenberg_exact(n):
    """u*(x) = log(2 sqrt(n(n-1)) / (1 - |x|^2)) on the unit ball.

    e^{2u*} delta is the complete metric of constant scalar curvature -1.
    """
    c = 2.0 * np.sqrt(n * (n - 1.0))

    def h(r):
        return np.log(c / (1.0 - r ** 2))

    def h1(r):
        return 2.0 * r / (1.0 - r ** 2)

    def h2(r):
        return (2.0 + 2.0 * r ** 2) / (1.0 - r ** 2) ** 2

    return RadialProfileField(h, h1, h2)


def scalar_curvature_residual(u: ScalarField, base: MetricSpec, x):
    """Residual of 2(n-1) Delta u + (n-1)(n-2)|grad u|^2 - R_g = e^{2u}.

    Vanishes exactly when e^{2u} g has constant scalar curvature -1; the
    Laplacian and gradient square are with respect to the base metric.
    """
    n = base.n
    x = np.asarray(x, dtype=float)
    if base.kind == "euclidean":
        lap = np.trace(u.hess(x), axis1=1, axis2=2)
        grad2 = np.einsum("ni,ni->n", u.grad(x), u.grad(x))
        Rg = np.zeros(x.shape[0])
    else:
        phi = base.log_factor()
        e2p = np.exp(-2.0 * phi.value(x))
        dot = np.einsum("ni,ni->n", phi.grad(x), u.grad(x))
        lap = e2p * (np.trace(u.hess(x), axis1=1, axis2=2) + (n - 2) * dot)
        grad2 = e2p * np.einsum("ni,ni->n", u.grad(x), u.grad(x))
        Rg = scalar_curvature_conformal(phi, x)
    return 2 * (n - 1) * lap + (n - 1) * (n - 2) * grad2 - Rg - np.exp(2.0 * u.value(x))


# ---------------------------------------------------------------------------
# field serialization: one JSON header line + raw float64 payload
# ---------------------------------------------------------------------------

def save_field(path, name, values, shape, spacing, domain_desc=""):
    values = np.ascontiguousarray(np.asarray(values, dtype=float))
    header = {
        "field": name,
        "shape": list(int(s) for s in shape),
        "spacing": spacing,
        "domain": domain_desc,
        "dtype": "float64",
        "order": "C",
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(values.tobytes())


def load_field(path):
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode())
        data = np.frombuffer(fh.read(), dtype=np.float64).reshape(header["shape"])
    return header, data
