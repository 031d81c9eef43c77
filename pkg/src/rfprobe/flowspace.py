"""Discrete time-dependent weighted metric measure spaces and model flows.

A FlowSpace is a finite point sample carrying a time-indexed metric and
cell masses (masses absorb the local volume weight, so every integral
downstream is a plain weighted sum). Model constructors attach analytic
geodesic and curvature-tensor evaluators where the geometry admits them;
tabulated custom spaces get neither.
"""

from __future__ import annotations

import json
import math
import threading

import numpy as np
from scipy.spatial.distance import cdist

from .errors import (
    InvalidInputError,
    InvalidSpecError,
    MetricAxiomError,
    SchemaError,
    UnsupportedOperationError,
)
from .paths import AffinePath, Path, as_path

ANALYTIC_METRIC_TOL = 1e-9
CUSTOM_METRIC_TOL = 1e-6

_GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


def _circ_dist(a, b):
    """Circular distance of angles mod 2*pi, in [0, pi]."""
    d = np.abs(np.asarray(a) - np.asarray(b)) % (2.0 * np.pi)
    return np.minimum(d, 2.0 * np.pi - d)


class FlowSpace:
    """Finite sample of a time-dependent metric measure space.

    Evaluators are pure; instances are immutable after construction and
    safe to share between workers. ``dist_matrix`` results are cached per
    time value under a lock.
    """

    def __init__(self, kind, points, time_window, *, dist_fn, mass_fn,
                 log_lipschitz, static, metric_tol=ANALYTIC_METRIC_TOL,
                 geodesic_fn=None, point_dist_fn=None, tensor_fn=None,
                 meta=None):
        self.kind = kind
        self.points = np.array(points, dtype=float)
        self.points.setflags(write=False)
        self.time_window = (float(time_window[0]), float(time_window[1]))
        self.log_lipschitz = float(log_lipschitz)
        self.static = bool(static)
        self.metric_tol = float(metric_tol)
        self._dist_fn = dist_fn
        self._mass_fn = mass_fn
        self._geodesic_fn = geodesic_fn
        self._point_dist_fn = point_dist_fn
        self._tensor_fn = tensor_fn
        self.meta = dict(meta or {})
        self._cache_lock = threading.Lock()
        self._dist_cache = {}
        self._mass_cache = {}
        self.gen_cache = {}  # filled by heat.py, keyed (eps_bw, node)

    # -- basic accessors ---------------------------------------------------

    @property
    def n_points(self):
        return self.points.shape[0]

    @property
    def has_geodesic(self):
        return self._geodesic_fn is not None

    @property
    def has_tensor(self):
        return self._tensor_fn is not None

    def check_time(self, t):
        lo, hi = self.time_window
        if not (lo - 1e-12 <= t <= hi + 1e-12):
            raise InvalidInputError(
                f"time {t} outside the admissible window [{lo}, {hi}]")
        return min(max(t, lo), hi)

    def dist_matrix(self, t):
        t = self.check_time(t)
        key = float(t)
        with self._cache_lock:
            hit = self._dist_cache.get(key)
        if hit is not None:
            return hit
        mat = self._dist_fn(t)
        mat.setflags(write=False)
        with self._cache_lock:
            if len(self._dist_cache) > 32:
                self._dist_cache.clear()
            self._dist_cache[key] = mat
        return mat

    def dist(self, t, i, j):
        return float(self.dist_matrix(t)[i, j])

    def mass(self, t):
        t = self.check_time(t)
        key = float(t)
        with self._cache_lock:
            hit = self._mass_cache.get(key)
        if hit is not None:
            return hit
        m = self._mass_fn(t)
        m.setflags(write=False)
        with self._cache_lock:
            if len(self._mass_cache) > 64:
                self._mass_cache.clear()
            self._mass_cache[key] = m
        return m

    def geodesic_point(self, t, i, j, a):
        """Chart coordinates of the point at parameter ``a`` on the i->j geodesic."""
        if self._geodesic_fn is None:
            raise UnsupportedOperationError(
                f"{self.kind} space carries no geodesic evaluator")
        return self._geodesic_fn(self.check_time(t), int(i), int(j), float(a))

    def point_dist(self, t, p):
        """Distances from an arbitrary chart point to every sample point."""
        if self._point_dist_fn is None:
            raise UnsupportedOperationError(
                f"{self.kind} space cannot measure off-sample points")
        return self._point_dist_fn(self.check_time(t), np.asarray(p, dtype=float))

    def tensor(self, t, point, v, N=np.inf):
        if self._tensor_fn is None:
            raise UnsupportedOperationError(
                f"{self.kind} space carries no tensor evaluator")
        return self._tensor_fn(self.check_time(t), point, v, N)

    # -- sampling helpers ---------------------------------------------------

    def nn_dists(self, t):
        d = self.dist_matrix(t).copy()
        np.fill_diagonal(d, np.inf)
        return d.min(axis=1)

    def spacing(self, t):
        """Median nearest-neighbour distance at time t."""
        return float(np.median(self.nn_dists(t)))

    def nn_of(self, t, i):
        d = self.dist_matrix(t)[i].copy()
        d[i] = np.inf
        return float(d.min())

    def diameter(self, t):
        return float(self.dist_matrix(t).max())

    def ball(self, t, i, radius):
        """Indices within the closed metric ball around sample point i."""
        return np.flatnonzero(self.dist_matrix(t)[i] <= radius)

    # -- validation ----------------------------------------------------------

    def validate(self, times=None, seed=0, max_exhaustive=300, n_random=10_000):
        """Check metric axioms, mass positivity and log-Lipschitz control.

        Triangle inequality is exhaustive up to ``max_exhaustive`` points and
        randomized (seeded) beyond. Raises MetricAxiomError with the worst
        offending triple.
        """
        lo, hi = self.time_window
        if times is None:
            times = [lo] if self.static else [lo, 0.5 * (lo + hi), hi]
        tol = self.metric_tol
        rng = np.random.default_rng(seed)
        prev = None
        for t in times:
            d = self.dist_matrix(t)
            n = d.shape[0]
            sym = float(np.abs(d - d.T).max())
            if sym > tol * (1.0 + d.max()):
                raise MetricAxiomError(f"metric not symmetric at t={t} (dev {sym:g})")
            if float(np.abs(np.diag(d)).max()) > tol:
                raise MetricAxiomError(f"nonzero self-distance at t={t}")
            off = d + np.diag(np.full(n, np.inf))
            if float(off.min()) <= 0.0:
                i, j = np.unravel_index(int(np.argmin(off)), off.shape)
                raise MetricAxiomError(
                    f"coincident sample points {i}, {j} at t={t}", triple=(i, j, j))
            if n <= max_exhaustive:
                for i in range(n):
                    best = (d[i][:, None] + d).min(axis=0)
                    bad = d[i] - best
                    k = int(np.argmax(bad))
                    if bad[k] > tol:
                        j = int(np.argmin(d[i][:, None] + d[:, k].reshape(-1, 1)))
                        raise MetricAxiomError(
                            f"triangle inequality fails for ({i},{j},{k}) at t={t}: "
                            f"d(i,k)={d[i, k]:.9g} > d(i,j)+d(j,k)={best[k]:.9g}",
                            triple=(i, j, k))
            else:
                ii = rng.integers(0, n, size=n_random)
                jj = rng.integers(0, n, size=n_random)
                kk = rng.integers(0, n, size=n_random)
                gap = d[ii, kk] - d[ii, jj] - d[jj, kk]
                w = int(np.argmax(gap))
                if gap[w] > tol:
                    raise MetricAxiomError(
                        f"triangle inequality fails for ({ii[w]},{jj[w]},{kk[w]}) at t={t}",
                        triple=(int(ii[w]), int(jj[w]), int(kk[w])))
            m = self.mass(t)
            if float(m.min()) <= 0.0:
                raise InvalidSpecError(f"non-positive mass at t={t}")
            if prev is not None:
                tp, dp = prev
                mask = ~np.eye(n, dtype=bool)
                dev = np.abs(np.log(d[mask]) - np.log(dp[mask]))
                bound = self.log_lipschitz * abs(t - tp) + 1e-9
                if float(dev.max()) > bound:
                    raise MetricAxiomError(
                        f"log-Lipschitz control violated between t={tp} and t={t}: "
                        f"max |log ratio| {dev.max():.3g} > L*dt {bound:.3g}")
            prev = (t, d)
        return True


# ---------------------------------------------------------------------------
# Gaussian flows on R^n
# ---------------------------------------------------------------------------

def _as_matrix_path(p: Path, n: int) -> Path:
    v = np.atleast_2d(np.asarray(p.at(0.0), dtype=float))
    if v.shape == (1, 1) and n > 1:
        if isinstance(p, AffinePath):
            return AffinePath(np.eye(n) * float(p.const), np.eye(n) * float(p.slope))
        raise InvalidSpecError("matrix coefficient required for n > 1")
    return p


def build_gaussian_flow(n=1, A=1.0, a=0.0, b=None, c=0.0, extent=5.0,
                        resolution=32, window=(0.0, 0.0), validate=True):
    """Weighted Gaussian model flow on a regular grid in R^n.

    Metric d_t(x,y) = sqrt((x-y)' A_t (x-y)); cell mass carries
    exp(-f_t) * det(A_t)^(1/2) * cell volume with the quadratic weight
    f_t(x) = <x, a_t x>/2 + <x, b_t> + c_t.
    """
    n = int(n)
    if n < 1:
        raise InvalidSpecError("dimension must be >= 1")
    resolution = int(resolution)
    if resolution < 16:
        raise InvalidSpecError("grid resolution must be >= 16 points per axis")
    if extent <= 0:
        raise InvalidSpecError("grid extent must be positive")
    A_p = _as_matrix_path(as_path(A), n)
    a_p = _as_matrix_path(as_path(a), n)
    b_p = as_path(np.zeros(n) if b is None else b)
    c_p = as_path(c)
    lo, hi = float(window[0]), float(window[1])
    if hi <= lo:
        # degenerate window: freeze the coefficients and open a unit window
        A_p = AffinePath(A_p.at(lo))
        a_p = AffinePath(a_p.at(lo))
        b_p = AffinePath(b_p.at(lo))
        c_p = AffinePath(c_p.at(lo))
        hi = lo + 1.0

    axis = np.linspace(-extent, extent, resolution)
    cell = (axis[1] - axis[0]) ** n if resolution > 1 else 1.0
    if n == 1:
        pts = axis.reshape(-1, 1)
    else:
        grids = np.meshgrid(*([axis] * n), indexing="ij")
        pts = np.stack([g.ravel() for g in grids], axis=1)

    def A_at(t):
        m = np.atleast_2d(np.asarray(A_p.at(t), dtype=float))
        if m.shape != (n, n):
            m = np.eye(n) * float(m)
        return m

    def a_at(t):
        m = np.atleast_2d(np.asarray(a_p.at(t), dtype=float))
        if m.shape != (n, n):
            m = np.eye(n) * float(m)
        return m

    # positive definiteness over the whole window
    for t in np.linspace(lo, hi, 9) if hi > lo else [lo]:
        w = np.linalg.eigvalsh(A_at(t))
        if w.min() <= 0:
            raise InvalidSpecError(f"A_t not positive definite at t={t}")

    def dist_fn(t):
        At = A_at(t)
        chol = np.linalg.cholesky(At)
        y = pts @ chol
        return cdist(y, y)

    def mass_fn(t):
        At, at = A_at(t), a_at(t)
        bt = np.atleast_1d(np.asarray(b_p.at(t), dtype=float))
        ct = float(np.asarray(c_p.at(t)))
        f = 0.5 * np.einsum("ki,ij,kj->k", pts, at, pts) + pts @ bt + ct
        return np.exp(-f) * math.sqrt(np.linalg.det(At)) * cell

    def geodesic_fn(t, i, j, alpha):
        return (1.0 - alpha) * pts[i] + alpha * pts[j]

    def point_dist_fn(t, p):
        At = A_at(t)
        diff = pts - p.reshape(1, -1)
        return np.sqrt(np.einsum("ki,ij,kj->k", diff, At, diff))

    def tensor_fn(t, point, v, N):
        v = np.atleast_1d(np.asarray(v, dtype=float))
        if not np.any(v):
            raise InvalidInputError("tangent vector must be nonzero")
        At, at = A_at(t), a_at(t)
        Adot = np.atleast_2d(np.asarray(A_p.dot(t), dtype=float))
        if Adot.shape != (n, n):
            Adot = np.eye(n) * float(Adot)
        num = v @ (0.5 * Adot + at) @ v
        if np.isfinite(N):
            if N <= n:
                raise InvalidInputError("dimension parameter must exceed n")
            x = pts[point] if np.isscalar(point) or isinstance(point, (int, np.integer)) \
                else np.asarray(point, dtype=float)
            bt = np.atleast_1d(np.asarray(b_p.at(t), dtype=float))
            grad = at @ x + bt
            num -= (grad @ v) ** 2 / (N - n)
        return float(num / (v @ At @ v))

    # log-Lipschitz constant of t -> d_t over the window
    Ls = []
    for t in np.linspace(lo, hi, 33):
        At = A_at(t)
        Adot = np.atleast_2d(np.asarray(A_p.dot(t), dtype=float))
        if Adot.shape != (n, n):
            Adot = np.eye(n) * float(Adot)
        isq = np.linalg.inv(np.linalg.cholesky(At))
        Ls.append(0.5 * np.abs(np.linalg.eigvalsh(isq @ Adot @ isq.T)).max())
    L = float(max(Ls))
    static = L == 0.0 and not np.any(np.asarray(a_p.dot(0.0))) \
        and not np.any(np.asarray(b_p.dot(0.0))) and not np.any(np.asarray(c_p.dot(0.0)))

    # classification probes should avoid the artificial grid boundary of
    # the truncated plane; everything inside 70% of the extent is fair game
    probe_mask = np.max(np.abs(pts), axis=1) <= 0.7 * extent
    space = FlowSpace(
        "gaussian", pts, (lo, hi), dist_fn=dist_fn, mass_fn=mass_fn,
        log_lipschitz=L, static=static, geodesic_fn=geodesic_fn,
        point_dist_fn=point_dist_fn, tensor_fn=tensor_fn,
        meta={"n": n, "extent": extent, "resolution": resolution,
              "A": A_p, "a": a_p, "b": b_p, "c": c_p,
              "probe_mask": probe_mask})
    if validate:
        space.validate()
    return space


# ---------------------------------------------------------------------------
# Round spheres
# ---------------------------------------------------------------------------

def fibonacci_sphere(count):
    """Deterministic quasi-uniform sample of the unit 2-sphere."""
    k = np.arange(count)
    z = 1.0 - (2.0 * k + 1.0) / count
    phi = 2.0 * np.pi * k / _GOLDEN
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def build_sphere_flow(n=2, lam=1.0, count=300, window=(0.0, 0.0), validate=True):
    """Round sphere S^n (n = 1 or 2) with metric scaling path lambda_t.

    d_t = lambda_t^(1/2) * (round great-circle distance); masses scale with
    lambda_t^(n/2) so the weight f_t stays constant.
    """
    n = int(n)
    if n not in (1, 2):
        raise InvalidSpecError("sphere dimension must be 1 or 2")
    count = int(count)
    if (n == 1 and count < 50) or (n == 2 and count < 200):
        raise InvalidSpecError("sample count too small for requested dimension")
    lam_p = as_path(lam)
    lo, hi = float(window[0]), float(window[1])
    if hi <= lo:
        lam_p = AffinePath(lam_p.at(lo))
        hi = lo + 1.0
    for t in np.linspace(lo, hi, 9):
        if float(lam_p.at(t)) <= 0.0:
            raise InvalidSpecError(f"scaling path non-positive at t={t}")

    if n == 1:
        theta = 2.0 * np.pi * np.arange(count) / count
        pts = theta.reshape(-1, 1)
        ang = _circ_dist(theta[:, None], theta[None, :])
        cellarea = 2.0 * np.pi / count
        unit = None
    else:
        unit = fibonacci_sphere(count)
        pts = unit
        gram = np.clip(unit @ unit.T, -1.0, 1.0)
        ang = np.arccos(gram)
        np.fill_diagonal(ang, 0.0)
        cellarea = 4.0 * np.pi / count
    ang.setflags(write=False)

    def dist_fn(t):
        return math.sqrt(float(lam_p.at(t))) * np.array(ang)

    def mass_fn(t):
        return np.full(count, float(lam_p.at(t)) ** (n / 2.0) * cellarea)

    if n == 1:
        def geodesic_fn(t, i, j, a):
            d = theta[j] - theta[i]
            d = (d + np.pi) % (2.0 * np.pi) - np.pi  # shorter arc
            return np.array([(theta[i] + a * d) % (2.0 * np.pi)])

        def point_dist_fn(t, p):
            return math.sqrt(float(lam_p.at(t))) * _circ_dist(float(p[0]), theta)
    else:
        def geodesic_fn(t, i, j, a):
            u, v = unit[i], unit[j]
            omega = math.acos(min(1.0, max(-1.0, float(u @ v))))
            if omega < 1e-14:
                return u.copy()
            if abs(omega - np.pi) < 1e-12:
                raise InvalidInputError("antipodal pair has no unique geodesic")
            w = (math.sin((1.0 - a) * omega) * u + math.sin(a * omega) * v) / math.sin(omega)
            return w / np.linalg.norm(w)

        def point_dist_fn(t, p):
            p = p / np.linalg.norm(p)
            return math.sqrt(float(lam_p.at(t))) * np.arccos(np.clip(unit @ p, -1.0, 1.0))

    def tensor_fn(t, point, v, N):
        lt = float(lam_p.at(t))
        ldot = float(lam_p.dot(t))
        return 0.5 * ldot / lt + (n - 1) / lt

    L = max(0.5 * abs(float(lam_p.dot(t))) / float(lam_p.at(t))
            for t in np.linspace(lo, hi, 33))
    static = L == 0.0

    space = FlowSpace(
        "sphere", pts, (lo, hi), dist_fn=dist_fn, mass_fn=mass_fn,
        log_lipschitz=L, static=static, geodesic_fn=geodesic_fn,
        point_dist_fn=point_dist_fn, tensor_fn=tensor_fn,
        meta={"n": n, "count": count, "lam": lam_p})
    if validate:
        space.validate()
    return space


# ---------------------------------------------------------------------------
# Static Euclidean cones
# ---------------------------------------------------------------------------

def build_cone(beta=1.0, r_max=1.0, count=300, grading=2.0, validate=True):
    """Static Euclidean cone over a circle of circumference 2*pi*beta.

    Points are (r, phi) with phi in [0, 2*pi) parameterizing the base
    circle; the developed angle between two rays is beta times the circular
    parameter distance, capped at pi (beyond the cap the geodesic passes
    the apex). Index 0 is the apex. Ring radii follow the power law
    r_max * (k/n_r)^grading, concentrating resolution near the apex where
    the probes need it.
    """
    beta = float(beta)
    if beta <= 0.0:
        raise InvalidSpecError("cone opening parameter must be positive")
    if r_max <= 0.0:
        raise InvalidSpecError("radial extent must be positive")
    n_r = max(4, int(round(math.sqrt(count / 4.5))))
    n_phi = max(8, int(round((count - 1) / n_r)))
    ks = np.arange(1, n_r + 1)
    radii = r_max * (ks / n_r) ** float(grading)
    phis = 2.0 * np.pi * np.arange(n_phi) / n_phi
    rr, pp = np.meshgrid(radii, phis, indexing="ij")
    pts = np.concatenate([[[0.0, 0.0]], np.stack([rr.ravel(), pp.ravel()], axis=1)])

    def cone_pair_dist(r1, p1, r2, p2):
        ang = np.minimum(beta * _circ_dist(p1, p2), np.pi)
        return np.sqrt(np.maximum(0.0, r1 ** 2 + r2 ** 2 - 2.0 * r1 * r2 * np.cos(ang)))

    dist0 = cone_pair_dist(pts[:, 0][:, None], pts[:, 1][:, None],
                           pts[:, 0][None, :], pts[:, 1][None, :])
    np.fill_diagonal(dist0, 0.0)
    dist0.setflags(write=False)

    # exact annulus areas between midpoint cell boundaries; the apex owns
    # the innermost disk
    bounds = np.empty(n_r + 1)
    bounds[0] = radii[0] / 2.0
    bounds[1:-1] = 0.5 * (radii[:-1] + radii[1:])
    bounds[-1] = r_max
    mass0 = np.empty(len(pts))
    mass0[0] = np.pi * beta * bounds[0] ** 2
    ring_mass = beta * (bounds[1:] ** 2 - bounds[:-1] ** 2) / 2.0 \
        * (2.0 * np.pi / n_phi)
    mass0[1:] = np.repeat(ring_mass, n_phi)

    def dist_fn(t):
        return np.array(dist0)

    def mass_fn(t):
        return mass0.copy()

    def geodesic_fn(t, i, j, a):
        from .errors import ExcludedPairError
        r1, p1 = pts[i]
        r2, p2 = pts[j]
        if i == 0:  # radial from apex
            return np.array([a * r2, p2])
        if j == 0:
            return np.array([(1.0 - a) * r1, p1])
        raw = (p2 - p1 + np.pi) % (2.0 * np.pi) - np.pi
        delta = beta * abs(raw)
        if delta >= np.pi - 1e-12:
            raise ExcludedPairError(
                f"geodesic between {i} and {j} passes the apex", atoms=[(i, j)])
        z1 = np.array([r1, 0.0])
        z2 = np.array([r2 * math.cos(delta), r2 * math.sin(delta)])
        z = (1.0 - a) * z1 + a * z2
        rad = float(np.linalg.norm(z))
        if rad < 1e-13:
            raise ExcludedPairError(
                f"geodesic between {i} and {j} passes the apex", atoms=[(i, j)])
        omega = math.atan2(z[1], z[0])
        return np.array([rad, (p1 + math.copysign(omega / beta, raw)) % (2.0 * np.pi)])

    def point_dist_fn(t, p):
        return cone_pair_dist(p[0], p[1], pts[:, 0], pts[:, 1])

    # probes stay clear of the truncation boundary of the infinite cone
    probe_mask = pts[:, 0] <= 0.75 * r_max
    space = FlowSpace(
        "cone", pts, (0.0, 1.0), dist_fn=dist_fn, mass_fn=mass_fn,
        log_lipschitz=0.0, static=True, geodesic_fn=geodesic_fn,
        point_dist_fn=point_dist_fn,
        meta={"beta": beta, "r_max": r_max, "grading": float(grading),
              "n_r": n_r, "n_phi": n_phi, "probe_mask": probe_mask})
    if validate:
        space.validate()
    return space


# ---------------------------------------------------------------------------
# Spherical suspensions
# ---------------------------------------------------------------------------

def _int_sin_pow(a, b, N, nodes=24):
    """Gauss-Legendre quadrature of sin(s)^N over [a, b]."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    s = 0.5 * (b - a) * x + 0.5 * (a + b)
    return 0.5 * (b - a) * float(np.sum(w * np.sin(s) ** N))


def build_suspension(base, N=1, time_scaling=True, s_count=16, validate=True):
    """Spherical suspension of a static base space, optionally time-scaled.

    Sample = (base point, polar angle s) on a uniform s-grid with the poles
    collapsed to single points. The suspension distance follows the conic
    law cos d = cos s cos s' + sin s sin s' cos(d_base ^ pi); masses weight
    the base cells by the integral of sin^N over each polar cell. With
    time scaling, d_t = (1-2Nt)^(1/2) d_sus and m_t = (1-2Nt)^((N+1)/2) m_sus
    on a window inside [0, 1/(2N)).
    """
    if not base.static:
        raise InvalidSpecError("suspension base must be static")
    N = float(N)
    if N < 1:
        raise InvalidSpecError("suspension exponent must be >= 1")
    t0 = base.time_window[0]
    base_d = base.dist_matrix(t0)
    if base_d.max() > np.pi + base.metric_tol:
        raise InvalidSpecError(
            f"base diameter {base_d.max():.6g} exceeds pi beyond tolerance")
    s_count = int(s_count)
    if s_count < 4:
        raise InvalidSpecError("polar resolution too small")

    nb = base.n_points
    ds = np.pi / s_count
    s_interior = ds * np.arange(1, s_count)
    # index layout: 0 = south pole (s=0), 1 = north pole (s=pi), then
    # interior levels (level-major) of nb base points each
    levels = len(s_interior)
    n_pts = 2 + levels * nb
    base_dim = base.points.shape[1]
    pts = np.zeros((n_pts, 1 + base_dim))
    pts[0, 0] = 0.0
    pts[1, 0] = np.pi
    s_of = np.empty(n_pts)
    b_of = np.zeros(n_pts, dtype=int)
    s_of[0], s_of[1] = 0.0, np.pi
    for li, s in enumerate(s_interior):
        sl = slice(2 + li * nb, 2 + (li + 1) * nb)
        pts[sl, 0] = s
        pts[sl, 1:] = base.points
        s_of[sl] = s
        b_of[sl] = np.arange(nb)

    base_mass = base.mass(t0)
    mass_sus = np.empty(n_pts)
    mass_sus[0] = _int_sin_pow(0.0, ds / 2.0, N) * base_mass.sum()
    mass_sus[1] = _int_sin_pow(np.pi - ds / 2.0, np.pi, N) * base_mass.sum()
    for li, s in enumerate(s_interior):
        cellint = _int_sin_pow(s - ds / 2.0, s + ds / 2.0, N)
        mass_sus[2 + li * nb: 2 + (li + 1) * nb] = cellint * base_mass

    cosb = np.cos(np.minimum(base_d, np.pi))
    cs, sn = np.cos(s_of), np.sin(s_of)
    cosd = cs[:, None] * cs[None, :] + sn[:, None] * sn[None, :] * cosb[np.ix_(b_of, b_of)]
    dist_sus = np.arccos(np.clip(cosd, -1.0, 1.0))
    np.fill_diagonal(dist_sus, 0.0)
    dist_sus.setflags(write=False)

    if time_scaling:
        window = (0.0, 0.8 / (2.0 * N))
        scale = lambda t: 1.0 - 2.0 * N * t
        L = N / (1.0 - 2.0 * N * window[1])
        static = False
    else:
        window, scale, L, static = (0.0, 1.0), (lambda t: 1.0), 0.0, True

    def dist_fn(t):
        return math.sqrt(scale(t)) * np.array(dist_sus)

    def mass_fn(t):
        return scale(t) ** ((N + 1.0) / 2.0) * mass_sus.copy()

    def geodesic_fn(t, i, j, a):
        si, sj = s_of[i], s_of[j]
        bi, bj = b_of[i], b_of[j]
        pole_i, pole_j = i in (0, 1), j in (0, 1)
        if pole_i and pole_j:
            # meridian through base point 0
            return np.concatenate([[(1.0 - a) * si + a * sj], base.points[0]])
        if pole_i or pole_j:
            delta = 0.0
            bref = bj if pole_i else bi
        else:
            delta = min(float(base_d[bi, bj]), np.pi)
            bref = bi
        q1 = np.array([math.sin(si), 0.0, math.cos(si)])
        q2 = np.array([math.sin(sj) * math.cos(delta),
                       math.sin(sj) * math.sin(delta), math.cos(sj)])
        dot = min(1.0, max(-1.0, float(q1 @ q2)))
        omega = math.acos(dot)
        if omega < 1e-14:
            w = q1
        elif abs(omega - np.pi) < 1e-12:
            raise InvalidInputError("antipodal suspension pair has no unique geodesic")
        else:
            w = (math.sin((1.0 - a) * omega) * q1 + math.sin(a * omega) * q2) / math.sin(omega)
            w = w / np.linalg.norm(w)
        s = math.acos(min(1.0, max(-1.0, w[2])))
        if pole_i or pole_j or math.sin(s) < 1e-12 or delta < 1e-14:
            bpt = base.points[bref]
        else:
            phi = min(max(math.atan2(w[1], w[0]), 0.0), delta)
            bpt = base.geodesic_point(t0, bi, bj, phi / delta)
        return np.concatenate([[s], np.atleast_1d(bpt)])

    def point_dist_fn(t, p):
        s = float(p[0])
        db = np.minimum(base.point_dist(t0, p[1:]), np.pi)
        cosd = math.cos(s) * cs + math.sin(s) * sn * np.cos(db[b_of])
        return math.sqrt(scale(t)) * np.arccos(np.clip(cosd, -1.0, 1.0))

    geod = None
    pdist = None
    if base.has_geodesic:
        geod, pdist = geodesic_fn, point_dist_fn

    # the canonical shrink of a suspension over a unit sphere of matching
    # dimension is an exact weighted Ricci flow; only then is the tensor known
    tensor = None
    if (time_scaling and base.kind == "sphere" and base.static
            and abs(float(base.meta["lam"].at(t0)) - 1.0) < 1e-12
            and int(base.meta["n"]) == int(N)):
        def tensor_fn(t, point, v, NN):
            return 0.0
        tensor = tensor_fn

    probe_mask = np.abs(s_of - np.pi / 2.0) <= np.pi / 2.0 - 2.0 * ds
    space = FlowSpace(
        "suspension", pts, window, dist_fn=dist_fn, mass_fn=mass_fn,
        log_lipschitz=L, static=static, geodesic_fn=geod,
        point_dist_fn=pdist, tensor_fn=tensor,
        meta={"N": N, "s_count": s_count, "time_scaling": bool(time_scaling),
              "base_kind": base.kind, "s_of": s_of, "b_of": b_of,
              "probe_mask": probe_mask})
    if validate:
        space.validate()
    return space


# ---------------------------------------------------------------------------
# Tabulated custom spaces
# ---------------------------------------------------------------------------

def from_tables(points, times, dist, mass, log_lipschitz=0.0,
                metric_tol=CUSTOM_METRIC_TOL, validate=True):
    """FlowSpace from per-time distance matrices and mass vectors.

    Between tabulated times both distance and mass interpolate linearly;
    a single time slice yields a static space. No geodesic or tensor
    evaluators are attached.
    """
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) < 1 or np.any(np.diff(times) <= 0):
        raise SchemaError("strictly increasing, non-empty list required", "times")
    dist = np.asarray(dist, dtype=float)
    mass = np.asarray(mass, dtype=float)
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise SchemaError("points must be a list of coordinate vectors", "points")
    n = points.shape[0]
    if dist.shape != (len(times), n, n):
        raise SchemaError(f"expected {len(times)} matrices of shape {n}x{n}", "dist")
    if mass.shape != (len(times), n):
        raise SchemaError(f"expected {len(times)} vectors of length {n}", "mass")

    static = len(times) == 1
    window = (times[0], times[-1]) if not static else (times[0], times[0] + 1.0)

    def _interp(t, table):
        if static:
            return np.array(table[0])
        k = int(np.clip(np.searchsorted(times, t, side="right") - 1, 0, len(times) - 2))
        w = (t - times[k]) / (times[k + 1] - times[k])
        w = min(max(w, 0.0), 1.0)
        return (1.0 - w) * table[k] + w * table[k + 1]

    space = FlowSpace(
        "custom", points, window,
        dist_fn=lambda t: _interp(t, dist),
        mass_fn=lambda t: _interp(t, mass),
        log_lipschitz=float(log_lipschitz), static=static,
        metric_tol=metric_tol,
        meta={"times": times})
    if validate:
        vt = [times[0]] if static else list(times)
        space.validate(times=vt)
    return space


_MODEL_KINDS = ("gaussian", "sphere", "cone", "suspension", "custom")


def build_from_spec(spec):
    """Build a FlowSpace from a parsed JSON space spec."""
    if not isinstance(spec, dict):
        raise SchemaError("space spec must be a JSON object")
    kind = spec.get("kind")
    if kind not in _MODEL_KINDS:
        raise SchemaError(f"unknown kind {kind!r}", "kind")
    if kind == "custom":
        for field in ("points", "times", "dist", "mass"):
            if field not in spec:
                raise SchemaError("required field missing", field)
        return from_tables(spec["points"], spec["times"], spec["dist"],
                           spec["mass"], spec.get("log_lipschitz", 0.0))
    params = dict(spec.get("params", {}))
    try:
        if kind == "gaussian":
            A_p = _parse_path(params.get("A", 1.0))
            window = params.get("window")
            if window is None:
                window = _auto_window(lambda t: np.linalg.eigvalsh(
                    np.atleast_2d(np.asarray(A_p.at(t), dtype=float))).min())
            return build_gaussian_flow(
                n=params.get("n", 1),
                A=A_p,
                a=_parse_path(params.get("a", 0.0)),
                b=params.get("b"),
                c=params.get("c", 0.0),
                extent=params.get("extent", 5.0),
                resolution=params.get("resolution", 32),
                window=window)
        if kind == "sphere":
            lam_p = _parse_path(params.get("lam", params.get("lambda", 1.0)))
            window = params.get("window")
            if window is None:
                window = _auto_window(lambda t: float(lam_p.at(t)))
            return build_sphere_flow(
                n=params.get("n", 2),
                lam=lam_p,
                count=params.get("count", 300),
                window=window)
        if kind == "cone":
            return build_cone(beta=params.get("beta", 1.0),
                              r_max=params.get("r_max", 1.0),
                              count=params.get("count", 300),
                              grading=params.get("grading", 2.0))
        if kind == "suspension":
            base = build_from_spec(params["base"]) if "base" in params else None
            if base is None:
                raise SchemaError("suspension requires a base space spec", "params.base")
            return build_suspension(base, N=params.get("N", 1),
                                    time_scaling=params.get("time_scaling", True),
                                    s_count=params.get("s_count", 16))
    except (TypeError, ValueError) as exc:
        raise SchemaError(str(exc), f"params ({kind})") from exc
    raise SchemaError(f"unhandled kind {kind!r}", "kind")


def _auto_window(pos_fn, horizon=1.0):
    """Largest [0, 0.8*T] with the positivity certificate holding on [0, T]."""
    if pos_fn(horizon) > 0.0:
        return (0.0, horizon)
    lo_t, hi_t = 0.0, horizon
    for _ in range(60):
        mid = 0.5 * (lo_t + hi_t)
        if pos_fn(mid) > 0.0:
            lo_t = mid
        else:
            hi_t = mid
    if lo_t <= 0.0:
        raise InvalidSpecError("coefficient path not positive at t=0")
    return (0.0, 0.8 * lo_t)


def _parse_path(value):
    """JSON path forms: scalar, matrix, {"const","slope"}, or "shrink"."""
    if isinstance(value, str):
        if value == "shrink":
            return AffinePath(1.0, -2.0)
        if value == "static":
            return AffinePath(1.0, 0.0)
        raise SchemaError(f"unknown path keyword {value!r}")
    if isinstance(value, dict):
        return AffinePath(value.get("const", 0.0), value.get("slope"))
    return as_path(value)


def load_custom(path):
    """Load a FlowSpace from a JSON file (custom tables or a model spec)."""
    with open(path) as fh:
        try:
            spec = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"not valid JSON: {exc}") from exc
    return build_from_spec(spec)


# synonym used by the CLI
load_space = load_custom


def analytic_tensor(space, t, point, v, N=np.inf):
    """(1/2 dg/dt + Ric_{N,f})(v,v) / g_t(v,v) at a point of a model flow."""
    return space.tensor(t, point, v, N)
