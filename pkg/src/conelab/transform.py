"""Eigenvalue transform, explicit uniform-ellipticity constant, and the
conformal parameter reduction.

The linear map mu_i = (sum_j lam_j - rho*lam_i)/(n - rho) turns a partially
uniformly elliptic pair (f, Gamma) into a fully uniformly elliptic pair
(f~, Gamma~) with an explicit constant theta.  The conformal reduction sends
(alpha, tau) to the parameters (rho, gamma) of the curvature operator

    V[u] = (Delta u) g - rho Hess(u) + gamma |grad u|^2 g + rho du x du + A
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cone import ConeSpec, cone_constants, sample_cone, transformed_cone, DEFAULT_SEED
from .errors import ParameterError
from .symfunc import OperatorSpec, f_grad, transformed_op

__all__ = [
    "TransformParams",
    "ConformalParams",
    "mu_from_lambda",
    "lambda_from_mu",
    "theta_constant",
    "check_rho",
    "conformal_params",
    "fully_uniform_check",
    "transformed_pair",
]


@dataclass(frozen=True)
class TransformParams:
    """The transform constant rho and the dimension it acts in."""

    rho: float
    n: int

    def __post_init__(self):
        if self.rho == 0.0:
            raise ParameterError("rho must be nonzero")
        if self.rho >= self.n:
            raise ParameterError(f"rho must satisfy rho < n, got rho={self.rho}, n={self.n}")


def check_rho(rho, kappa, vartheta):
    """rho != 0 and rho < 1/(1 - kappa*vartheta); raises ParameterError otherwise.

    vartheta may be a certified lower bound; that only shrinks the admissible
    range, never admits an invalid rho.
    """
    if rho == 0.0:
        raise ParameterError("rho must be nonzero")
    bound = 1.0 / (1.0 - kappa * vartheta)
    if not rho < bound:
        raise ParameterError(
            f"rho={rho:g} violates rho < 1/(1 - kappa*vartheta) = {bound:.6g} "
            f"(kappa={kappa}, vartheta={vartheta:.6g})")
    return bound


def mu_from_lambda(lam, p: TransformParams):
    """mu_i = (sum_j lam_j - rho*lam_i) / (n - rho); trace preserving."""
    a = np.asarray(lam, dtype=float)
    s = a.sum(axis=-1, keepdims=True)
    return (s - p.rho * a) / (p.n - p.rho)


def lambda_from_mu(mu, p: TransformParams):
    """Exact inverse: lam_i = (sum_j mu_j - (n - rho)*mu_i) / rho."""
    a = np.asarray(mu, dtype=float)
    s = a.sum(axis=-1, keepdims=True)
    return (s - (p.n - p.rho) * a) / p.rho


def theta_constant(rho, n, kappa, vartheta):
    """The explicit fully-uniform-ellipticity constant of the transformed pair.

    rho < 0 gives 1/(n - rho); 0 < rho < 1/(1 - kappa*vartheta) gives
    (1 - rho*(1 - kappa*vartheta))/(n - rho).  Feeding a lower bound for
    vartheta only shrinks theta, keeping the guarantee valid.
    """
    check_rho(rho, kappa, vartheta)
    if rho < 0.0:
        return 1.0 / (n - rho)
    return (1.0 - rho * (1.0 - kappa * vartheta)) / (n - rho)


@dataclass(frozen=True)
class ConformalParams:
    """Derived constants of the conformal reduction for a pair (alpha, tau).

    rhs_const is the constant of the reduced (Schouten-form) equation,
    ((n-2)/(alpha(n tau + 2 - 2n)))^varsigma; the direct V-form equation
    carries rhs_const_direct = ((n-2)/(alpha(tau-1)))^varsigma.
    """

    alpha: int
    tau: float
    n: int
    varsigma: float
    rho: float
    gamma: float
    rhs_const: float
    theta: float
    kappa: int
    vartheta: float

    @property
    def rhs_const_direct(self):
        return ((self.n - 2) / (self.alpha * (self.tau - 1.0))) ** self.varsigma

    @property
    def gamma_plus_rho(self):
        return self.tau * (self.n - 2) / (2.0 * (self.tau - 1.0))

    def increasing_family_vector(self):
        """(gamma, ..., gamma, gamma + rho + 1): cone membership of this vector
        licenses boundary data log k in the increasing family."""
        v = np.full(self.n, self.gamma)
        v[-1] = self.gamma + self.rho + 1.0
        return v


def conformal_params(alpha, tau, n, cone: ConeSpec, varsigma=1.0,
                     constants=None, budget=2000, rng_seed=DEFAULT_SEED):
    """Validate (alpha, tau) for the cone and derive all reduction constants.

    alpha = -1 requires tau < 1; alpha = +1 requires
    tau > 1 + (n-2)(1 - kappa*vartheta).  The vartheta used is the cone
    module's certified lower bound, which can only make the check stricter.
    """
    if alpha not in (-1, 1):
        raise ParameterError(f"alpha must be +1 or -1, got {alpha}")
    if n < 3:
        raise ParameterError("conformal reduction requires n >= 3")
    if not 0.0 < varsigma <= 1.0:
        raise ParameterError(f"homogeneity degree must lie in (0, 1], got {varsigma}")
    cc = constants if constants is not None else cone_constants(cone, budget=budget,
                                                                rng_seed=rng_seed)
    if alpha == -1:
        if not tau < 1.0:
            raise ParameterError(f"alpha=-1 branch requires tau < 1, got tau={tau}")
    else:
        thresh = 1.0 + (n - 2) * (1.0 - cc.kappa * cc.vartheta)
        if not tau > thresh:
            raise ParameterError(
                f"alpha=+1 branch requires tau > 1 + (n-2)(1 - kappa*vartheta) = "
                f"{thresh:.6g}, got tau={tau}")
    rho = (n - 2) / (tau - 1.0)
    gamma = (tau - 2.0) * (n - 2) / (2.0 * (tau - 1.0))
    scale = alpha * (n * tau + 2.0 - 2.0 * n)
    if scale <= 0.0:
        raise ParameterError("sign condition alpha*(n*tau + 2 - 2n) > 0 failed")
    theta = theta_constant(rho, n, cc.kappa, cc.vartheta)
    return ConformalParams(
        alpha=alpha, tau=float(tau), n=n, varsigma=float(varsigma),
        rho=rho, gamma=gamma,
        rhs_const=((n - 2) / scale) ** varsigma,
        theta=theta, kappa=cc.kappa, vartheta=cc.vartheta)


def transformed_pair(op: OperatorSpec, cone: ConeSpec, rho,
                     kappa=None, vartheta=None, budget=2000, rng_seed=DEFAULT_SEED):
    """Build (f~, Gamma~, theta) from a base pair and a valid rho."""
    if kappa is None or vartheta is None:
        cc = cone_constants(cone, budget=budget, rng_seed=rng_seed)
        kappa = cc.kappa if kappa is None else kappa
        vartheta = cc.vartheta if vartheta is None else vartheta
    theta = theta_constant(rho, cone.n, kappa, vartheta)
    return transformed_op(op, rho), transformed_cone(cone, rho), theta


def fully_uniform_check(op_t: OperatorSpec, cone_t: ConeSpec, samples=2000,
                        rng_seed=DEFAULT_SEED, theta=None):
    """Sampled minimum of f~_i / sum_j f~_j over the transformed cone.

    Sampling is exact: base-cone samples are pushed through the inverse map,
    which parameterizes the transformed cone.  Returns the report dict; when
    theta is supplied the `passed` flag asserts min_ratio >= theta - 1e-9.
    """
    if op_t.kind != "transformed" or cone_t.kind != "transformed":
        raise ValueError("fully_uniform_check expects a transformed pair")
    p = TransformParams(rho=cone_t.rho, n=cone_t.n)
    mu = sample_cone(cone_t.base, samples, rng_seed=rng_seed)
    lam = lambda_from_mu(mu, p)
    grads = f_grad(op_t, lam)
    totals = grads.sum(axis=1)
    ratios = grads / totals[:, None]
    i_flat = int(np.argmin(ratios))
    report = {
        "min_ratio": float(ratios.min()),
        "witness": lam[i_flat // cone_t.n].tolist(),
        "samples": samples,
        "rng_seed": rng_seed,
    }
    if theta is not None:
        report["theta"] = float(theta)
        report["passed"] = bool(report["min_ratio"] >= theta - 1e-9)
    return report
