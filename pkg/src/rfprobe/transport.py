"""Discrete optimal transport, entropy, and Wasserstein time-derivatives.

Exact transport is solved as the transportation LP (HiGHS); the dual
multipliers are the Kantorovich potentials for the cost d^2/2. The
entropic route is an independent log-domain Sinkhorn iteration and is
reported as a declared upper bound on W^2.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import linprog
from scipy.special import logsumexp

from .errors import ConvergenceFailureError, InvalidInputError

MEASURE_TOL = 1e-12
MARGINAL_TOL = 1e-9
DUAL_FEAS_TOL = 1e-9
GAP_RTOL = 1e-8

_HIGHS_OPTS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


@dataclass(frozen=True)
class DiscreteMeasure:
    """Probability weights over the sample points at a fixed time."""

    t: float
    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=float)
        if w.ndim != 1:
            raise InvalidInputError("weights must be a vector")
        if float(w.min(initial=0.0)) < -MEASURE_TOL:
            raise InvalidInputError(f"negative weight {w.min():.3g}")
        if abs(float(w.sum()) - 1.0) > MEASURE_TOL:
            raise InvalidInputError(f"weights sum to {w.sum()!r}, not 1")
        w = np.maximum(w, 0.0)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @staticmethod
    def dirac(n, t, i):
        w = np.zeros(n)
        w[i] = 1.0
        return DiscreteMeasure(t, w)

    @staticmethod
    def normalized(t, w):
        w = np.maximum(np.asarray(w, dtype=float), 0.0)
        s = w.sum()
        if s <= 0.0:
            raise InvalidInputError("cannot normalize a zero vector")
        return DiscreteMeasure(t, w / s)

    def support(self):
        return np.flatnonzero(self.w)


def truncate(mu: DiscreteMeasure, tol=1e-14) -> DiscreteMeasure:
    """Drop weights below tol and renormalize (support sparsifier)."""
    w = np.where(mu.w >= tol, mu.w, 0.0)
    return DiscreteMeasure.normalized(mu.t, w)


@dataclass
class TransportPlan:
    """Optimal (or entropic) coupling with duals for the cost d_t^2/2.

    ``w2`` is the unhalved squared Wasserstein distance. Potentials live on
    the stated support index lists; phi is normalized to 0 at its first
    support point.
    """

    t: float
    w2: float
    sup_mu: np.ndarray
    sup_nu: np.ndarray
    coupling: np.ndarray          # dense (len(sup_mu), len(sup_nu))
    phi: np.ndarray
    psi: np.ndarray
    gap: float
    marginal_dev: float
    dual_feas_dev: float
    method: str = "exact"
    lam: float = 0.0
    bias_bound: float = 0.0

    @property
    def w(self):
        return float(np.sqrt(max(self.w2, 0.0)))

    def atoms(self, tol=0.0):
        """Coupling as (i, j, weight) triplets in global indices."""
        ii, jj = np.nonzero(self.coupling > tol)
        return [(int(self.sup_mu[i]), int(self.sup_nu[j]), float(self.coupling[i, j]))
                for i, j in zip(ii, jj)]

    def to_jsonable(self):
        return {
            "t": self.t, "w2": self.w2, "method": self.method,
            "lam": self.lam, "gap": self.gap, "bias_bound": self.bias_bound,
            "coupling": [[i, j, w] for i, j, w in self.atoms()],
            "phi": {int(i): float(p) for i, p in zip(self.sup_mu, self.phi)},
            "psi": {int(j): float(p) for j, p in zip(self.sup_nu, self.psi)},
        }


def _check_pair(mu, nu):
    if abs(mu.w.sum() - nu.w.sum()) > MEASURE_TOL:
        raise InvalidInputError("marginal masses differ")


def w2(space, t, mu: DiscreteMeasure, nu: DiscreteMeasure, method="exact",
       lam=None, max_iter=100_000) -> TransportPlan:
    """Optimal transport between mu and nu for the cost d_t(x,y)^2 / 2.

    method "exact" returns a vertex-optimal coupling with verified dual
    potentials; "entropic" runs Sinkhorn with regularization lam and
    declares an upper bound on W^2.
    """
    _check_pair(mu, nu)
    t = space.check_time(t)
    ix, jx = mu.support(), nu.support()
    d = space.dist_matrix(t)
    cost = 0.5 * d[np.ix_(ix, jx)] ** 2
    a, b = mu.w[ix], nu.w[jx]

    if method == "exact":
        plan, phi, psi = _solve_exact(cost, a, b)
    elif method == "entropic":
        plan, phi, psi, lam = _solve_entropic(cost, a, b, lam, max_iter)
    else:
        raise InvalidInputError(f"unknown method {method!r}")

    primal = float(np.sum(plan * cost))
    dual = float(phi @ a + psi @ b)
    gap = primal - dual
    # normalize phi at its first support point
    shift = phi[0]
    phi = phi - shift
    psi = psi + shift
    feas_dev = float((phi[:, None] + psi[None, :] - cost).max())
    marg = max(float(np.abs(plan.sum(axis=1) - a).max()),
               float(np.abs(plan.sum(axis=0) - b).max()))
    out = TransportPlan(
        t=t, w2=2.0 * primal, sup_mu=ix, sup_nu=jx, coupling=plan,
        phi=phi, psi=psi, gap=gap, marginal_dev=marg, dual_feas_dev=feas_dev,
        method=method, lam=float(lam or 0.0),
        bias_bound=(float(lam) * np.log(len(a) * len(b) + 1.0)
                    if method == "entropic" else 0.0))
    if method == "exact" and gap > GAP_RTOL * (1.0 + out.w2):
        raise ConvergenceFailureError(
            f"duality gap {gap:.3g} exceeds tolerance", residual=gap)
    return out


def _solve_exact(cost, a, b):
    n, m = cost.shape
    if n == 1:
        plan = b.reshape(1, -1).copy()
        psi = cost[0].copy()
        return plan, np.zeros(1), psi
    if m == 1:
        plan = a.reshape(-1, 1).copy()
        phi = cost[:, 0].copy()
        return plan, phi, np.zeros(1)

    rows = sparse.kron(sparse.eye(n, format="csr"), np.ones((1, m)), format="csr")
    cols = sparse.kron(np.ones((1, n)), sparse.eye(m, format="csr"), format="csr")
    A_eq = sparse.vstack([rows, cols], format="csr")
    b_eq = np.concatenate([a, b])
    res = linprog(cost.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0.0, None),
                  method="highs", options=_HIGHS_OPTS)
    if not res.success:
        # HiGHS presolve mis-declares some small-marginal transportation
        # problems infeasible; the unreduced solve is slower but sound
        res = linprog(cost.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0.0, None),
                      method="highs",
                      options=dict(_HIGHS_OPTS, presolve=False))
    if not res.success:
        raise ConvergenceFailureError(f"transport LP failed: {res.message}")
    plan = res.x.reshape(n, m)
    duals = res.eqlin.marginals
    return plan, duals[:n].copy(), duals[n:].copy()


def _solve_entropic(cost, a, b, lam, max_iter):
    pos = cost[cost > 0.0]
    if lam is None:
        lam = 1e-3 * float(np.median(pos)) if pos.size else 1e-6
    lam = float(lam)
    log_a, log_b = np.log(a), np.log(b)
    f = np.zeros_like(a)
    g = np.zeros_like(b)
    residual = np.inf
    # epsilon scaling: anneal the regularization down to lam, warm-starting
    # the potentials, then polish at the target value
    if pos.size:
        stages = [float(np.max(pos)) / 2.0]
        while stages[-1] > lam * 2.0:
            stages.append(stages[-1] / 2.0)
        stages.append(lam)
    else:
        stages = [lam]
    it = 0
    for eps in stages:
        target = 0.2 * MARGINAL_TOL if eps == lam else 1e-4
        while it < max_iter:
            f = -eps * logsumexp((g[None, :] - cost) / eps + log_b[None, :], axis=1)
            g = -eps * logsumexp((f[:, None] - cost) / eps + log_a[:, None], axis=0)
            it += 1
            logP = (f[:, None] + g[None, :] - cost) / eps \
                + log_a[:, None] + log_b[None, :]
            rows = np.exp(logsumexp(logP, axis=1))
            residual = float(np.abs(rows - a).max())
            if residual <= target:
                break
        if it >= max_iter:
            break
    if residual > 0.2 * MARGINAL_TOL:
        raise ConvergenceFailureError(
            f"Sinkhorn did not converge in {max_iter} iterations",
            residual=residual)
    # one last row update leaves rows exact and columns within the residual
    f = -lam * logsumexp((g[None, :] - cost) / lam + log_b[None, :], axis=1)
    plan = np.exp((f[:, None] + g[None, :] - cost) / lam
                  + log_a[:, None] + log_b[None, :])
    plan *= (a / np.maximum(plan.sum(axis=1), 1e-300))[:, None]
    phi = f.copy()
    psi = (cost - phi[:, None]).min(axis=0)
    return plan, phi, psi, lam


def entropy(space, t, mu: DiscreteMeasure) -> float:
    """Relative entropy sum w*log(w/m) with the 0*log0 = 0 convention."""
    m = space.mass(space.check_time(t))
    w = mu.w
    nz = w > 0.0
    return float(np.sum(w[nz] * (np.log(w[nz]) - np.log(m[nz]))))


def displacement_interpolate(space, t, plan: TransportPlan, a) -> DiscreteMeasure:
    """Push the coupling to parameter ``a`` along evaluator geodesics.

    Each atom lands on the two nearest sample points, split proportionally
    to inverse distance; total mass is preserved exactly.
    """
    from .errors import ExcludedPairError
    if not (0.0 <= a <= 1.0):
        raise InvalidInputError("interpolation parameter must lie in [0, 1]")
    t = space.check_time(t)
    w = np.zeros(space.n_points)
    excluded = []
    for i, j, wt in plan.atoms():
        if a == 0.0:
            w[i] += wt
            continue
        if a == 1.0:
            w[j] += wt
            continue
        if i == j:
            w[i] += wt
            continue
        try:
            p = space.geodesic_point(t, i, j, a)
        except ExcludedPairError:
            excluded.append((i, j, wt))
            continue
        dist = space.point_dist(t, p)
        k1, k2 = np.argpartition(dist, 1)[:2]
        r1, r2 = dist[k1], dist[k2]
        if r1 <= 1e-14:
            w[k1] += wt
        else:
            w[k1] += wt * r2 / (r1 + r2)
            w[k2] += wt * r1 / (r1 + r2)
    if excluded:
        raise ExcludedPairError(
            f"{len(excluded)} coupling atoms cross the excluded locus",
            atoms=excluded)
    return DiscreteMeasure.normalized(t, w)


@dataclass
class DtW2Estimate:
    """One-sided left time derivative of W_t^2 for frozen weight vectors."""

    estimate: float
    hs: list = field(default_factory=list)
    quotients: list = field(default_factory=list)
    w2_now: float = 0.0
    w2_earlier: list = field(default_factory=list)
    converged: bool = True


def dt_w2_left(space, t, mu: DiscreteMeasure, nu: DiscreteMeasure, h_seq,
               method="exact") -> DtW2Estimate:
    """Estimate the left derivative of s -> W_s^2(mu, nu) at s = t.

    The weight vectors are re-costed at earlier times; the measures are not
    flowed. Quotients are Richardson-extrapolated assuming O(h) error.
    """
    hs = sorted(float(h) for h in h_seq)
    hs = hs[::-1]
    if not hs or hs[-1] <= 0.0:
        raise InvalidInputError("step sequence must be positive")
    if t - hs[0] < space.time_window[0] - 1e-12:
        raise InvalidInputError("largest step leaves the time window")
    w2_now = w2(space, t, mu, nu, method=method).w2
    earlier, quot = [], []
    for h in hs:
        mu_h = DiscreteMeasure(t - h, mu.w)
        nu_h = DiscreteMeasure(t - h, nu.w)
        val = w2(space, t - h, mu_h, nu_h, method=method).w2
        earlier.append(val)
        quot.append((w2_now - val) / h)
    if len(quot) >= 2:
        h1, h2 = hs[-2], hs[-1]
        q1, q2 = quot[-2], quot[-1]
        est = (h1 * q2 - h2 * q1) / (h1 - h2)
    else:
        est = quot[-1]
    converged = True
    if len(quot) >= 3:
        d1 = abs(quot[-2] - quot[-3])
        d2 = abs(quot[-1] - quot[-2])
        noise = 1e-10 * (1.0 + abs(w2_now))
        converged = d2 <= d1 * 1.1 + noise
    return DtW2Estimate(estimate=float(est), hs=hs, quotients=quot,
                        w2_now=w2_now, w2_earlier=earlier, converged=converged)
