"""Elementary symmetric function calculus and concave operator evaluation.

Operators are built from the sigma_k family: plain sigma_k, ratios
sigma_k/sigma_l, composition with the sum-minus-entry map
P(lam) = (sum lam) 1 - lam, and the linear eigenvalue transform
mu_i = (sum lam - rho*lam_i)/(n - rho).  A fractional power makes the
operator homogeneous of any degree varsigma = (k - l) * power; solver-facing
operators use varsigma = 1 with the f(1,...,1) = 1 normalization.

All evaluation routines accept a single eigenvalue vector of shape (n,) or a
batch of shape (B, n); batched paths are the primary implementation.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from fractions import Fraction
from math import comb
from typing import Optional

import numpy as np

from .errors import FeasibilityError

__all__ = [
    "OperatorSpec",
    "sigma_op",
    "sigma_ratio_op",
    "p_composed_op",
    "transformed_op",
    "sigma",
    "sigma_all",
    "sigma_grad",
    "sigma_hess",
    "f_eval",
    "f_grad",
    "f_hess",
    "f_grad_fd",
    "f_hess_fd",
    "maclaurin_check",
    "trace_lower_bound_check",
    "sort_with_perm",
    "p_map",
]


# ---------------------------------------------------------------------------
# elementary symmetric functions
# ---------------------------------------------------------------------------

def _as_batch(lam, n=None):
    """Return (array of shape (B, n), was_single)."""
    a = np.asarray(lam, dtype=float)
    if a.ndim == 1:
        a = a[None, :]
        single = True
    elif a.ndim == 2:
        single = False
    else:
        raise ValueError(f"eigenvalue array must be 1- or 2-dimensional, got shape {a.shape}")
    if n is not None and a.shape[1] != n:
        raise ValueError(f"dimension mismatch: expected n={n}, got {a.shape[1]}")
    return a, single


def sigma_all(lam):
    """All elementary symmetric functions e_0..e_n of lam.

    Uses the one-pass coefficient recurrence for prod_i (t + lam_i); O(n^2)
    and numerically stable for the small n used here.  Batched input (B, n)
    gives output (B, n+1).
    """
    a, single = _as_batch(lam)
    B, n = a.shape
    e = np.zeros((B, n + 1))
    e[:, 0] = 1.0
    for i in range(n):
        # e_j <- e_j + lam_i * e_{j-1}, descending j so e_{j-1} is the old value
        e[:, 1:i + 2] += a[:, i, None] * e[:, 0:i + 1]
    return e[0] if single else e


def sigma(lam, k):
    """k-th elementary symmetric function; sigma_0 = 1 by convention."""
    a, single = _as_batch(lam)
    n = a.shape[1]
    if not 0 <= k <= n:
        raise ValueError(f"sigma order k={k} out of range [0, {n}]")
    e = sigma_all(a)[:, k]
    return float(e[0]) if single else e


def _sigma_all_deleted(a):
    """e_j of lam with entry i removed, for every i.

    Input (B, n); output (B, n, n) with [b, i, j] = e_j(lam_b minus entry i).
    Recomputed per deleted entry (O(n^3)) rather than deflated, for stability.
    """
    B, n = a.shape
    out = np.zeros((B, n, n))
    out[:, :, 0] = 1.0
    for i in range(n):
        cnt = 0
        for m in range(n):
            if m == i:
                continue
            out[:, i, 1:cnt + 2] += a[:, m, None] * out[:, i, 0:cnt + 1].copy()
            cnt += 1
    return out


def sigma_grad(lam, k):
    """Gradient of sigma_k: component i equals sigma_{k-1} of lam with entry i removed."""
    a, single = _as_batch(lam)
    n = a.shape[1]
    if not 1 <= k <= n:
        raise ValueError(f"sigma order k={k} out of range [1, {n}]")
    g = _sigma_all_deleted(a)[:, :, k - 1]
    return g[0] if single else g


def sigma_hess(lam, k):
    """Hessian of sigma_k: entry (i, j) is sigma_{k-2} of lam with entries i, j removed."""
    a, single = _as_batch(lam)
    B, n = a.shape
    if not 1 <= k <= n:
        raise ValueError(f"sigma order k={k} out of range [1, {n}]")
    H = np.zeros((B, n, n))
    if k >= 2:
        for i in range(n):
            for j in range(i + 1, n):
                keep = [m for m in range(n) if m != i and m != j]
                e = sigma_all(a[:, keep])[:, k - 2]
                H[:, i, j] = e
                H[:, j, i] = e
    return H[0] if single else H


def sort_with_perm(lam):
    """Ascending copy of lam and the permutation that produced it (stable)."""
    a = np.asarray(lam, dtype=float)
    perm = np.argsort(a, kind="stable")
    return a[perm], perm


def p_map(lam):
    """P(lam) = (sum lam) * ones - lam, the sum-minus-entry map."""
    a = np.asarray(lam, dtype=float)
    return a.sum(axis=-1, keepdims=True) - a


# ---------------------------------------------------------------------------
# operator specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OperatorSpec:
    """A symmetric concave operator from the sigma_k family.

    kind is one of "sigma_ratio" (covers plain sigma_k via l = 0),
    "p_composed" (base evaluated at P(lam)) and "transformed" (base evaluated
    at mu(lam) for the given rho).  ``power`` is the exponent applied to
    sigma_k/sigma_l, so the homogeneity degree is varsigma = (k - l) * power.

    Normalization is a property of the whole tree: evaluation is unnormalized
    through every level and the top-level flag divides by the exact value at
    (1,...,1), so ``normalized`` flags on wrapped bases are ignored.
    """

    n: int
    kind: str = "sigma_ratio"
    k: int = 1
    l: int = 0
    power: float = 1.0
    normalized: bool = True
    base: Optional["OperatorSpec"] = None
    rho: float = 0.0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("dimension n must be >= 2")
        if self.kind == "sigma_ratio":
            if not (0 <= self.l < self.k <= self.n):
                raise ValueError(f"need 0 <= l < k <= n, got k={self.k}, l={self.l}, n={self.n}")
        elif self.kind in ("p_composed", "transformed"):
            if self.base is None:
                raise ValueError(f"kind {self.kind!r} requires a base operator")
            if self.base.n != self.n:
                raise ValueError("base operator dimension mismatch")
            if self.kind == "transformed" and (self.rho == 0.0 or self.rho >= self.n):
                raise ValueError(f"transform requires rho != 0 and rho < n, got {self.rho}")
        else:
            raise ValueError(f"unknown operator kind {self.kind!r}")

    @property
    def varsigma(self):
        """Homogeneity degree: f(t lam) = t^varsigma f(lam)."""
        if self.kind == "sigma_ratio":
            return (self.k - self.l) * self.power
        return self.base.varsigma

    def describe(self):
        if self.kind == "sigma_ratio":
            core = f"sigma_{self.k}" if self.l == 0 else f"(sigma_{self.k}/sigma_{self.l})"
            s = core if self.power == 1.0 else f"{core}^{self.power:g}"
            return s + (" normalized" if self.normalized else "")
        if self.kind == "p_composed":
            return self.base.describe() + " o P"
        return self.base.describe() + f" o mu(rho={self.rho:g})"


def sigma_op(n, k, power=None, normalized=True):
    """sigma_k^power; power defaults to 1/k (degree-one operator)."""
    p = 1.0 / k if power is None else float(power)
    return OperatorSpec(n=n, kind="sigma_ratio", k=k, l=0, power=p, normalized=normalized)


def sigma_ratio_op(n, k, l, power=None, normalized=True):
    """(sigma_k/sigma_l)^power; power defaults to 1/(k-l)."""
    p = 1.0 / (k - l) if power is None else float(power)
    return OperatorSpec(n=n, kind="sigma_ratio", k=k, l=l, power=p, normalized=normalized)


def p_composed_op(base, normalized=True):
    """base evaluated at P(lam); the natural cone becomes {P(lam) in cone(base)}."""
    return OperatorSpec(n=base.n, kind="p_composed", base=base, normalized=normalized)


def transformed_op(base, rho, normalized=True):
    """base evaluated at mu(lam) = (sum lam - rho lam)/(n - rho)."""
    return OperatorSpec(n=base.n, kind="transformed", base=base, rho=float(rho),
                        normalized=normalized)


def _f_one_unnormalized(op):
    """Value of the (unnormalized) operator at (1,...,1).

    Exact integer arithmetic for the sigma ratio, propagated through the
    composed kinds by homogeneity (mu and P both fix the ray through 1).
    """
    if op.kind == "sigma_ratio":
        ratio = Fraction(comb(op.n, op.k), comb(op.n, op.l))
        return float(ratio) ** op.power
    if op.kind == "p_composed":
        return _f_one_unnormalized(op.base) * float(op.n - 1) ** op.base.varsigma
    return _f_one_unnormalized(op.base)  # transformed: mu(1) = 1


def _mu_map(lam, rho, n):
    s = lam.sum(axis=-1, keepdims=True)
    return (s - rho * lam) / (n - rho)


def _check_garding_chain(a, k, where):
    """Raise FeasibilityError unless every row of a lies in the interior of Gamma_k."""
    e = sigma_all(a)
    for j in range(1, k + 1):
        bad = e[:, j] <= 0.0
        if bad.any():
            b = int(np.argmax(bad))
            raise FeasibilityError(
                f"{where}: sigma_{j} = {e[b, j]:.6g} <= 0, eigenvalues outside Gamma_{k}",
                lam=a[b], index=j, value=float(e[b, j]))


# ---------------------------------------------------------------------------
# operator evaluation
# ---------------------------------------------------------------------------

def _eval_batch(op, a):
    """Unnormalized value; normalization flags inside the tree are ignored."""
    if op.kind == "sigma_ratio":
        _check_garding_chain(a, op.k, op.describe())
        e = sigma_all(a)
        v = (e[:, op.k] / e[:, op.l]) ** op.power
    elif op.kind == "p_composed":
        v = _eval_batch(op.base, p_map(a))
    else:
        v = _eval_batch(op.base, _mu_map(a, op.rho, op.n))
    return v


def f_eval(op, lam):
    """Operator value; with normalization on, scaled so f(1,...,1) = 1."""
    a, single = _as_batch(lam, op.n)
    v = _eval_batch(op, a)
    if op.normalized:
        v = v / _f_one_unnormalized(op)
    return float(v[0]) if single else v


def _ratio_grad_batch(op, a):
    """Gradient of (sigma_k/sigma_l)^power, unnormalized."""
    e = sigma_all(a)
    ed = _sigma_all_deleted(a)
    A = e[:, op.k, None]
    gA = ed[:, :, op.k - 1]
    if op.l == 0:
        R = A[:, 0]
        gR = gA
    else:
        Bv = e[:, op.l, None]
        gB = ed[:, :, op.l - 1]
        R = (A / Bv)[:, 0]
        gR = (gA * Bv - A * gB) / Bv ** 2
    return op.power * R[:, None] ** (op.power - 1.0) * gR


def _grad_batch(op, a):
    if op.kind == "sigma_ratio":
        _check_garding_chain(a, op.k, op.describe())
        g = _ratio_grad_batch(op, a)
    elif op.kind == "p_composed":
        gb = _grad_batch(op.base, p_map(a))
        g = gb.sum(axis=1, keepdims=True) - gb
    else:
        gb = _grad_batch(op.base, _mu_map(a, op.rho, op.n))
        g = (gb.sum(axis=1, keepdims=True) - op.rho * gb) / (op.n - op.rho)
    return g


def f_grad(op, lam):
    """Analytic gradient df/dlam_i by the chain rule through the kind."""
    a, single = _as_batch(lam, op.n)
    g = _grad_batch(op, a)
    if op.normalized:
        g = g / _f_one_unnormalized(op)
    return g[0] if single else g


def _ratio_hess_batch(op, a):
    """Hessian of (sigma_k/sigma_l)^power by the nested quotient rule."""
    B, n = a.shape
    e = sigma_all(a)
    ed = _sigma_all_deleted(a)
    A = e[:, op.k]
    gA = ed[:, :, op.k - 1]
    HA = sigma_hess(a, op.k)
    if op.l == 0:
        R, gR, HR = A, gA, HA
    else:
        Bv = e[:, op.l]
        gB = ed[:, :, op.l - 1]
        HB = sigma_hess(a, op.l)
        R = A / Bv
        gR = (gA * Bv[:, None] - A[:, None] * gB) / Bv[:, None] ** 2
        cross = np.einsum("bi,bj->bij", gA, gB) + np.einsum("bi,bj->bij", gB, gA)
        HR = (HA / Bv[:, None, None]
              - cross / Bv[:, None, None] ** 2
              - A[:, None, None] * HB / Bv[:, None, None] ** 2
              + 2.0 * A[:, None, None] * np.einsum("bi,bj->bij", gB, gB) / Bv[:, None, None] ** 3)
    p = op.power
    H = (p * R[:, None, None] ** (p - 1.0) * HR
         + p * (p - 1.0) * R[:, None, None] ** (p - 2.0) * np.einsum("bi,bj->bij", gR, gR))
    return H


def _hess_batch(op, a):
    if op.kind == "sigma_ratio":
        _check_garding_chain(a, op.k, op.describe())
        return _ratio_hess_batch(op, a)
    if op.kind == "p_composed":
        J = np.ones((op.n, op.n)) - np.eye(op.n)
    else:
        J = (np.ones((op.n, op.n)) - op.rho * np.eye(op.n)) / (op.n - op.rho)
    inner = p_map(a) if op.kind == "p_composed" else _mu_map(a, op.rho, op.n)
    Hb = _hess_batch(op.base, inner)
    return np.einsum("ia,zab,bj->zij", J, Hb, J)


def f_hess(op, lam):
    """Analytic Hessian; used for concavity certification, never inside Newton."""
    a, single = _as_batch(lam, op.n)
    H = _hess_batch(op, a)
    if op.normalized:
        H = H / _f_one_unnormalized(op)
    return H[0] if single else H


def f_grad_fd(op, lam, h=None):
    """Central-difference gradient, the independent oracle for f_grad."""
    lam = np.asarray(lam, dtype=float)
    if h is None:
        h = 1e-6 * max(1.0, np.abs(lam).max())
    g = np.zeros_like(lam)
    for i in range(lam.size):
        ep = lam.copy()
        em = lam.copy()
        ep[i] += h
        em[i] -= h
        g[i] = (f_eval(op, ep) - f_eval(op, em)) / (2.0 * h)
    return g


def f_hess_fd(op, lam, h=None):
    """Central second differences with the documented step 1e-5 * max(1, |lam|_inf)."""
    lam = np.asarray(lam, dtype=float)
    if h is None:
        h = 1e-5 * max(1.0, np.abs(lam).max())
    n = lam.size
    H = np.zeros((n, n))
    f0 = f_eval(op, lam)
    for i in range(n):
        for j in range(i, n):
            if i == j:
                ep = lam.copy(); ep[i] += h
                em = lam.copy(); em[i] -= h
                H[i, i] = (f_eval(op, ep) - 2.0 * f0 + f_eval(op, em)) / h ** 2
            else:
                vpp = lam.copy(); vpp[[i, j]] += h
                vmm = lam.copy(); vmm[[i, j]] -= h
                vpm = lam.copy(); vpm[i] += h; vpm[j] -= h
                vmp = lam.copy(); vmp[i] -= h; vmp[j] += h
                H[i, j] = H[j, i] = (f_eval(op, vpp) - f_eval(op, vpm)
                                     - f_eval(op, vmp) + f_eval(op, vmm)) / (4.0 * h ** 2)
    return H


# ---------------------------------------------------------------------------
# classical inequalities
# ---------------------------------------------------------------------------

def maclaurin_check(lam, k, l, rtol=1e-12):
    """(sigma_k/C(n,k))^(1/k) <= (sigma_l/C(n,l))^(1/l) for lam in Gamma_k, l < k."""
    a = np.asarray(lam, dtype=float)
    n = a.size
    if not 1 <= l < k <= n:
        raise ValueError(f"need 1 <= l < k <= n, got k={k}, l={l}")
    _check_garding_chain(a[None, :], k, "maclaurin_check")
    e = sigma_all(a)
    lhs = (e[k] / comb(n, k)) ** (1.0 / k)
    rhs = (e[l] / comb(n, l)) ** (1.0 / l)
    return bool(lhs <= rhs * (1.0 + rtol) + rtol)


def trace_lower_bound_check(op, lam, tol=1e-10):
    """sum(lam) >= n * f(lam) for a normalized degree-one operator."""
    if abs(op.varsigma - 1.0) > 1e-12 or not op.normalized:
        raise ValueError("trace lower bound requires a normalized degree-one operator")
    a = np.asarray(lam, dtype=float)
    val = f_eval(op, a)
    return bool(a.sum() >= op.n * val - tol)
