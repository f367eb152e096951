"""Cone membership, the constants kappa and vartheta, and ellipticity reports.

A cone here is an open symmetric convex cone Gamma in R^n with
Gamma_n subset Gamma subset Gamma_1.  Three kinds are supported:

* ``garding(k)``      Gamma_k = {lam : sigma_j(lam) > 0, j = 1..k}
* ``pcone(k)``        P_k = {lam : P(lam) in Gamma_k}, P(lam) = (sum lam) 1 - lam
* ``transformed``     image of a base cone under the inverse eigenvalue map,
                      i.e. lam in Gamma~  iff  mu(lam) in base, with
                      mu_i = (sum lam - rho lam_i)/(n - rho)

kappa counts the zeros a cone vector can carry; vartheta is the universal
partial-uniform-ellipticity constant, reported as a certified lower bound
from a seeded search (the supremum may be unattained).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import SamplingError
from .symfunc import OperatorSpec, f_grad, p_map, sigma_all, sort_with_perm

__all__ = [
    "ConeSpec",
    "ConeConstants",
    "garding",
    "pcone",
    "transformed_cone",
    "contains",
    "slack",
    "kappa",
    "kappa_tilde",
    "vartheta",
    "is_type2",
    "cone_constants",
    "pue_report",
    "pue_check",
    "sample_cone",
    "stress_rays",
    "embed_with_tail",
    "natural_cone",
]

DEFAULT_SEED = 20240


@dataclass(frozen=True)
class ConeSpec:
    """Symmetric open convex cone with a margin-quantified membership test."""

    n: int
    kind: str = "garding"
    k: int = 1
    base: Optional["ConeSpec"] = None
    rho: float = 0.0
    margin: float = 1e-12

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("dimension n must be >= 2")
        if self.kind in ("garding", "pcone"):
            if not 1 <= self.k <= self.n:
                raise ValueError(f"need 1 <= k <= n, got k={self.k}")
        elif self.kind == "transformed":
            if self.base is None or self.base.n != self.n:
                raise ValueError("transformed cone requires a base of the same dimension")
            if self.rho == 0.0 or self.rho >= self.n:
                raise ValueError(f"transform requires rho != 0 and rho < n, got {self.rho}")
        else:
            raise ValueError(f"unknown cone kind {self.kind!r}")

    def describe(self):
        if self.kind == "garding":
            return f"Gamma_{self.k}(n={self.n})"
        if self.kind == "pcone":
            return f"P_{self.k}(n={self.n})"
        return self.base.describe() + f" transformed rho={self.rho:g}"


def garding(n, k, margin=1e-12):
    return ConeSpec(n=n, kind="garding", k=k, margin=margin)


def pcone(n, k, margin=1e-12):
    return ConeSpec(n=n, kind="pcone", k=k, margin=margin)


def transformed_cone(base, rho):
    return ConeSpec(n=base.n, kind="transformed", base=base, rho=float(rho),
                    margin=base.margin)


@dataclass(frozen=True)
class ConeConstants:
    """Derived constants of a cone; vartheta is a certified lower bound."""

    kappa: int
    vartheta: float
    vartheta_uncertainty: float
    is_type2: bool
    seed: int = DEFAULT_SEED


# ---------------------------------------------------------------------------
# membership
# ---------------------------------------------------------------------------

def contains(cone, lam):
    """Strict interior membership by the scale-aware margin.

    Membership uses sigma_j(lam) > margin * (1 + |lam|_inf)^j so that a point
    counts as inside only with a quantified distance to the boundary.
    Batched input returns a boolean array.
    """
    a = np.asarray(lam, dtype=float)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    if a.shape[1] != cone.n:
        raise ValueError(f"dimension mismatch: cone has n={cone.n}, vector has {a.shape[1]}")
    ok = _contains_batch(cone, a)
    return bool(ok[0]) if single else ok


def _contains_batch(cone, a):
    if cone.kind == "garding":
        e = sigma_all(a)
        scale = 1.0 + np.abs(a).max(axis=1)
        ok = np.ones(a.shape[0], dtype=bool)
        for j in range(1, cone.k + 1):
            ok &= e[:, j] > cone.margin * scale ** j
        return ok
    if cone.kind == "pcone":
        return _contains_batch(garding(cone.n, cone.k, cone.margin), p_map(a))
    mu = (a.sum(axis=1, keepdims=True) - cone.rho * a) / (cone.n - cone.rho)
    return _contains_batch(cone.base, mu)


def slack(cone, lam):
    """Normalized interior slack: min_j sigma_j(lam) / (1 + |lam|_inf)^j.

    Positive iff lam is inside the cone; comparable against the margin.
    Batched input gives a batched result.
    """
    a = np.asarray(lam, dtype=float)
    single = a.ndim == 1
    if single:
        a = a[None, :]
    s = _slack_batch(cone, a)
    return float(s[0]) if single else s


def _slack_batch(cone, a):
    if cone.kind == "garding":
        e = sigma_all(a)
        scale = 1.0 + np.abs(a).max(axis=1)
        vals = np.stack([e[:, j] / scale ** j for j in range(1, cone.k + 1)], axis=1)
        return vals.min(axis=1)
    if cone.kind == "pcone":
        return _slack_batch(garding(cone.n, cone.k, cone.margin), p_map(a))
    mu = (a.sum(axis=1, keepdims=True) - cone.rho * a) / (cone.n - cone.rho)
    return _slack_batch(cone.base, mu)


# ---------------------------------------------------------------------------
# kappa and vartheta
# ---------------------------------------------------------------------------

def kappa(cone):
    """Largest k with (0,...,0,1,...,1) (k zeros) strictly inside the cone.

    Descending scan from n-1; openness of the cone resolves the boundary case
    of the definition, so interior membership with the default margin is the
    right test.
    """
    for k in range(cone.n - 1, 0, -1):
        v = np.ones(cone.n)
        v[:k] = 0.0
        if contains(cone, v):
            return k
    return 0


def kappa_tilde(cone, trials=400, rng_seed=DEFAULT_SEED):
    """Empirical maximum count of strictly negative entries of cone vectors.

    A seeded lower-bound search: for each candidate count, negative entries of
    random small magnitude are paired with O(1) positive entries.  Agrees with
    kappa for every supported kind.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(rng_seed)
    n = cone.n
    for count in range(n - 1, 0, -1):
        for _ in range(trials):
            v = np.empty(n)
            scale = 10.0 ** rng.uniform(-6.0, -0.3)
            v[:count] = -scale * rng.uniform(0.1, 1.0, size=count)
            v[count:] = rng.uniform(0.5, 1.5, size=n - count)
            if contains(cone, v):
                return count
    return 0


def _vartheta_objective(alpha, kap, n):
    """(alpha_1/n) / (sum_{i>kappa} alpha_i - sum_{i=2..kappa} alpha_i).

    alpha is canonicalized: first kappa entries sorted descending.
    """
    neg = np.sort(alpha[:kap])[::-1]
    den = alpha[kap:].sum() - neg[1:].sum()
    if den <= 0.0:
        return 0.0
    return float(neg[0] / n / den)


def _alpha_feasible(cone, alpha, kap):
    v = alpha.copy()
    v[:kap] *= -1.0
    return contains(cone, v)


def vartheta(cone, budget=2000, rng_seed=DEFAULT_SEED):
    """Certified lower bound for the partial-uniform-ellipticity constant.

    For the positive cone the constant is exactly 1/n.  Otherwise runs a
    projected random search plus coordinate-ascent refinement over vectors
    (-alpha_1, ..., -alpha_kappa, alpha_{kappa+1}, ..., alpha_n) in the cone,
    maximizing (alpha_1/n)/(sum_{i>kappa} alpha_i - sum_{2<=i<=kappa} alpha_i).
    The result never exceeds 1/n.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    kap = kappa(cone)
    if kap == 0:
        return 1.0 / cone.n
    rng = np.random.default_rng(rng_seed)
    n = cone.n
    best = 0.0
    best_alpha = None
    for _ in range(budget):
        alpha = np.empty(n)
        alpha[:kap] = 10.0 ** rng.uniform(-3.0, 0.0, size=kap)
        alpha[kap:] = 10.0 ** rng.uniform(-0.5, 1.0, size=n - kap)
        alpha[:kap] = np.sort(alpha[:kap])[::-1]
        if not _alpha_feasible(cone, alpha, kap):
            continue
        val = _vartheta_objective(alpha, kap, n)
        if val > best:
            best, best_alpha = val, alpha.copy()
    if best_alpha is None:
        return 0.0
    best = _refine_vartheta(cone, best_alpha, kap, n, best)
    return min(best, 1.0 / n)


def _refine_vartheta(cone, alpha, kap, n, best):
    """Coordinate-wise bisection toward the feasibility boundary.

    Along each coordinate the feasible set is an interval (the cone is
    convex), so bisection between a feasible and an infeasible endpoint is
    exact.  Positive-block entries are pushed down, negative-block magnitudes
    pushed up.
    """
    a = alpha.copy()
    for _ in range(60):
        improved = False
        for i in range(n):
            lo_ok = a[i]
            if i >= kap:
                lo, hi = 0.0, a[i]  # shrink alpha_i (infeasible at 0: vector leaves Gamma_1)
                for _ in range(50):
                    mid = 0.5 * (lo + hi)
                    a[i] = mid
                    if _alpha_feasible(cone, a, kap):
                        hi = mid
                    else:
                        lo = mid
                a[i] = hi
            else:
                hi = a[i]
                grow = a[i]
                for _ in range(40):  # doubling until infeasible
                    grow *= 2.0
                    a[i] = grow
                    if not _alpha_feasible(cone, a, kap):
                        break
                lo, hi2 = hi, grow
                for _ in range(50):
                    mid = 0.5 * (lo + hi2)
                    a[i] = mid
                    if _alpha_feasible(cone, a, kap):
                        lo = mid
                    else:
                        hi2 = mid
                a[i] = lo
            if not _alpha_feasible(cone, a, kap):
                a[i] = lo_ok
            val = _vartheta_objective(a, kap, n)
            if val > best + 1e-15:
                best = val
                improved = True
        if not improved:
            break
    return best


def is_type2(cone):
    """True iff (0, ..., 0, 1) is interior to the cone (kappa = n - 1)."""
    v = np.zeros(cone.n)
    v[-1] = 1.0
    return contains(cone, v)


def cone_constants(cone, budget=2000, rng_seed=DEFAULT_SEED):
    kap = kappa(cone)
    if kap == 0:
        vt, unc = 1.0 / cone.n, 0.0
    else:
        vt = vartheta(cone, budget=budget, rng_seed=rng_seed)
        vt2 = vartheta(cone, budget=budget, rng_seed=rng_seed + 1)
        unc = abs(vt2 - vt)
        vt = max(vt, vt2)
    return ConeConstants(kappa=kap, vartheta=vt, vartheta_uncertainty=unc,
                         is_type2=is_type2(cone), seed=rng_seed)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def sample_cone(cone, count, rng_seed=DEFAULT_SEED, max_tries=200):
    """Random interior points: rejected Gaussian directions plus positive vectors.

    Shape (count, n).  Raises SamplingError when rejection keeps failing.
    """
    rng = np.random.default_rng(rng_seed)
    out = np.empty((count, cone.n))
    got = 0
    for _ in range(max_tries):
        if got >= count:
            break
        want = count - got
        cand = rng.standard_normal((3 * want + 8, cone.n))
        cand[::3] = np.abs(cand[::3])  # every third draw forced positive: always feasible
        ok = _contains_batch(cone, cand)
        take = cand[ok][:want]
        out[got:got + take.shape[0]] = take
        got += take.shape[0]
    if got < count:
        raise SamplingError(f"could not draw {count} interior points of {cone.describe()}")
    return out


def stress_rays(cone, t_max=1e6, eps_scales=(0.0, 1e-6, 1e-3, 1e-1)):
    """Anisotropy rays (eps, ..., eps, 1, ..., 1, t, ..., t) kept inside the cone.

    Rays sweep the split position, the large scale t up to t_max, and the
    small scale; infeasible combinations are dropped.  These stress the
    partial-uniform-ellipticity floor and expose its sharpness.
    """
    n = cone.n
    rows = []
    t_vals = 10.0 ** np.arange(0, np.log10(t_max) + 0.5)
    for zeros in range(0, n):
        for ones in range(0, n - zeros):
            for t in t_vals:
                for eps in eps_scales:
                    v = np.empty(n)
                    v[:zeros] = eps
                    v[zeros:zeros + ones] = 1.0
                    v[zeros + ones:] = t
                    rows.append(v)
    rows = np.array(rows)
    ok = _contains_batch(cone, rows)
    return rows[ok]


def embed_with_tail(cone, lam_prime, c_max=1e9):
    """Smallest doubling c with (lam_prime, c, ..., c) inside the cone.

    Realizes the type-2 projection property: for type-2 cones every
    lam_prime in R^(n-1) embeds with a finite tail.  Returns None if no
    c <= c_max works.
    """
    lam_prime = np.asarray(lam_prime, dtype=float)
    m = cone.n - lam_prime.size
    if m < 1:
        raise ValueError("lam_prime must be shorter than the cone dimension")
    c = 1.0
    while c <= c_max:
        v = np.concatenate([lam_prime, np.full(m, c)])
        if contains(cone, v):
            return c
        c *= 2.0
    return None


# ---------------------------------------------------------------------------
# partial uniform ellipticity report
# ---------------------------------------------------------------------------

@dataclass
class PueReport:
    """Minimum gradient-share ratios by sorted position, with witnesses."""

    op_description: str
    cone_description: str
    n: int
    samples: int
    rng_seed: int
    min_ratio: np.ndarray = field(repr=False)          # (n,) min over samples per position
    witness: np.ndarray = field(default=None, repr=False)  # (n, n) argmin sample per position

    def ratio_at(self, m):
        return float(self.min_ratio[m - 1])

    def witness_at(self, m):
        return self.witness[m - 1]


def pue_report(op, cone, samples=10000, rng_seed=DEFAULT_SEED):
    """Sampled min over lam of f_(m)(lam) / sum_j f_j(lam) for every position m.

    Positions refer to ascending eigenvalue order.  The sample mix is uniform
    interior directions, near-boundary rays and large-anisotropy rays.
    """
    rays = stress_rays(cone)
    bulk = sample_cone(cone, max(1, samples - rays.shape[0]), rng_seed=rng_seed)
    pts = np.vstack([bulk, rays])
    n = cone.n
    order = np.argsort(pts, axis=1, kind="stable")
    lam_sorted = np.take_along_axis(pts, order, axis=1)
    grads = f_grad(op, lam_sorted)
    totals = grads.sum(axis=1)
    if np.any(totals <= 0.0):
        raise SamplingError("vanishing gradient total; operator degenerate on a sample")
    ratios = grads / totals[:, None]
    idx = np.argmin(ratios, axis=0)
    return PueReport(
        op_description=op.describe(),
        cone_description=cone.describe(),
        n=n,
        samples=pts.shape[0],
        rng_seed=rng_seed,
        min_ratio=ratios[idx, np.arange(n)],
        witness=lam_sorted[idx],
    )


def pue_check(op, cone, m, samples=10000, rng_seed=DEFAULT_SEED):
    """Report {min ratio at position m, witness lam} over the stress sample set."""
    rep = pue_report(op, cone, samples=samples, rng_seed=rng_seed)
    return {
        "m": m,
        "min_ratio_at_or_below_m": float(rep.min_ratio[:m].min()),
        "min_ratio_at_m": rep.ratio_at(m),
        "witness": rep.witness_at(m).tolist(),
        "samples": rep.samples,
        "rng_seed": rng_seed,
    }


def natural_cone(op: OperatorSpec, margin=1e-12):
    """The admissible cone an operator is defined on."""
    if op.kind == "sigma_ratio":
        return garding(op.n, op.k, margin)
    if op.kind == "p_composed":
        inner = natural_cone(op.base, margin)
        if inner.kind != "garding":
            raise ValueError("p_composed supports Garding bases only")
        return pcone(op.n, inner.k, margin)
    return transformed_cone(natural_cone(op.base, margin), op.rho)
