"""Synthetic flow diagnostics: expansion rates, entropy convexity deficits,
geodesic curvature averages, dimensional deficits and the suspension
rigidity functional.

All one-sided limits become finite procedures: geometric step schedules
with a heat-resolution floor, tail statistics as liminf/limsup surrogates,
and Richardson extrapolation once the quotient sequence is Cauchy.
Divergence is never asserted as infinity; it is a flag requiring quotients
above a ceiling and increasing at the finest usable resolutions.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (
    DegenerateCollisionError,
    InvalidInputError,
    ResolutionError,
    UnsupportedOperationError,
)
from .heat import dual_flow_path
from .transport import (
    DiscreteMeasure,
    displacement_interpolate,
    dt_w2_left,
    entropy,
    truncate,
    w2,
)

DIVERGENCE_CEILING = 10.0
SUPPORT_TRUNC = 1e-14
DEFAULT_DA = 1.0 / 32.0


@dataclass(frozen=True)
class StepSchedule:
    """Geometric backward-step schedule h_k = h0 * 2^-k, k = 0..k_max."""

    h0: float
    k_max: int

    def steps(self):
        return [self.h0 * 2.0 ** -i for i in range(self.k_max + 1)]


@dataclass
class ThetaEstimate:
    value: float
    variant: str                      # "+", "-", "flat", "star"
    steps: list = field(default_factory=list)
    quotients: list = field(default_factory=list)
    extrapolant: float = math.nan
    converged: bool = False
    diverged: bool = False
    floor_hit: bool = False
    ceiling: float = DIVERGENCE_CEILING
    meta: dict = field(default_factory=dict)


@dataclass
class EtaEstimate:
    value: float
    eps: float
    variant: str                      # "eps" or "star"
    slope0: float = math.nan
    slope1: float = math.nan
    half_dtw2: float = math.nan
    w2: float = math.nan
    candidate: str = ""
    fit_residual: float = 0.0
    low_confidence: bool = False
    meta: dict = field(default_factory=dict)


@dataclass
class TensorEigen:
    sigma_max: float
    sigma_min: float


# ---------------------------------------------------------------------------
# schedules and floors
# ---------------------------------------------------------------------------

def pair_floor(space, t, x, y):
    """Smallest usable backward step for a probe anchored at x, y.

    The dual heat flow must spread past one cell around both anchors:
    sqrt(h) >= 2 * local spacing.
    """
    loc = max(space.nn_of(t, x), space.nn_of(t, y))
    return (2.0 * loc) ** 2


def usable_steps(space, t, x, y, schedule: StepSchedule):
    floor = pair_floor(space, t, x, y)
    lo = space.time_window[0]
    hs = [h for h in schedule.steps() if h >= floor and t - h >= lo - 1e-12]
    return hs, len(hs) < len(schedule.steps()), floor


def _tail_stats(qs, ceiling=DIVERGENCE_CEILING):
    """liminf/limsup surrogates with Richardson extrapolation on Cauchy tails."""
    tail = qs[-3:]
    if len(qs) >= 2:
        extrap = 2.0 * qs[-1] - qs[-2]
    else:
        extrap = qs[-1]
    converged = False
    if len(qs) >= 3:
        d1 = abs(qs[-2] - qs[-3])
        d2 = abs(qs[-1] - qs[-2])
        converged = d2 <= 0.5 * d1 + 1e-9 * (1.0 + abs(qs[-1]))
    diverged = (len(tail) == 3 and all(q > ceiling for q in tail)
                and tail[0] < tail[1] < tail[2])
    if diverged:
        converged = False
    v_plus = extrap if converged else max(tail)
    v_minus = extrap if converged else min(tail)
    return v_plus, v_minus, extrap, converged, diverged


def _flow_quotients(space, t, mu0, mu1, hs, ref, eps_bw, step_ctrl, method):
    """-log(W_s(flowed pair)/ref)/(t-s) over the step list."""
    s_list = [t - h for h in hs]
    flows0 = dual_flow_path(space, t, s_list, mu0, eps_bw, step_ctrl)
    flows1 = dual_flow_path(space, t, s_list, mu1, eps_bw, step_ctrl)
    qs, ws = [], []
    for h, s, f0, f1 in zip(hs, s_list, flows0, flows1):
        plan = w2(space, s, truncate(f0, SUPPORT_TRUNC),
                  truncate(f1, SUPPORT_TRUNC), method=method)
        if plan.w <= 1e-12 * (1.0 + ref):
            raise DegenerateCollisionError(
                f"dual flows collided at s={s} (W={plan.w:.3g})")
        qs.append(-math.log(plan.w / ref) / h)
        ws.append(plan.w)
    return qs, ws


# ---------------------------------------------------------------------------
# theta family
# ---------------------------------------------------------------------------

def theta_pair(space, t, x, y, schedule: StepSchedule, eps_bw=None,
               step_ctrl=None, method="exact", ceiling=DIVERGENCE_CEILING):
    """Short-time expansion rates of W_s between dual heat flows of Diracs.

    Returns the (upper, lower) pair of one-sided estimates; the upper uses
    the tail maximum of the quotients, the lower the tail minimum, and both
    collapse onto the Richardson extrapolant once the sequence is Cauchy.
    """
    t = space.check_time(t)
    if x == y:
        raise InvalidInputError("theta needs two distinct points")
    d_ref = space.dist(t, x, y)
    hs, floor_hit, floor = usable_steps(space, t, x, y, schedule)
    if not hs:
        raise ResolutionError(
            f"no usable steps: floor {floor:.4g} exceeds the schedule")
    n = space.n_points
    qs, ws = _flow_quotients(
        space, t, DiscreteMeasure.dirac(n, t, x), DiscreteMeasure.dirac(n, t, y),
        hs, d_ref, eps_bw, step_ctrl, method)
    v_plus, v_minus, extrap, conv, div = _tail_stats(qs, ceiling)
    common = dict(steps=hs, quotients=qs, extrapolant=extrap, converged=conv,
                  diverged=div, floor_hit=floor_hit, ceiling=ceiling,
                  meta={"x": x, "y": y, "t": t, "d": d_ref, "w": ws,
                        "floor": floor})
    return (ThetaEstimate(value=v_plus, variant="+", **common),
            ThetaEstimate(value=v_minus, variant="-", **common))


def _sample_pairs(pool, quota, rng, anchor=None, d_from_anchor=None):
    """Deterministic pair sample; pairs touching the anchor come first,
    farthest first (the informative pairs for a sup over a ball)."""
    pool = [int(p) for p in pool]
    pairs = []
    if anchor is not None:
        others = [p for p in pool if p != anchor]
        if d_from_anchor is not None:
            others.sort(key=lambda p: -d_from_anchor[p])
        pairs.extend((anchor, p) for p in others)
    rest = [(a, b) for ai, a in enumerate(pool) for b in pool[ai + 1:]
            if anchor not in (a, b)]
    if rest:
        order = rng.permutation(len(rest))
        pairs.extend(rest[k] for k in order)
    return pairs[:quota]


def theta_star(space, t, x, radii, schedule: StepSchedule, pair_quota=5,
               seed=0, eps_bw=None, step_ctrl=None,
               ceiling=DIVERGENCE_CEILING):
    """Localized limsup surrogate: max of theta+ over pairs in shrinking balls."""
    t = space.check_time(t)
    radii = sorted((float(r) for r in radii), reverse=True)
    rng = np.random.default_rng(seed)
    maxima, details, floor_hit = [], [], False
    for r in radii:
        ball = space.ball(t, x, r)
        if len([p for p in ball if p != x]) < 2:
            raise ResolutionError(
                f"ball of radius {r:.4g} around {x} holds fewer than 2 other points")
        best, best_est = -math.inf, None
        d_anchor = space.dist_matrix(t)[x]
        for (y, z) in _sample_pairs(ball, pair_quota, rng, anchor=x,
                                    d_from_anchor=d_anchor):
            try:
                tp, _ = theta_pair(space, t, y, z, schedule, eps_bw,
                                   step_ctrl, ceiling=ceiling)
            except (DegenerateCollisionError, ResolutionError):
                continue
            floor_hit = floor_hit or tp.floor_hit
            if tp.value > best:
                best, best_est = tp.value, tp
        if best_est is None:
            raise ResolutionError(f"no evaluable pair in ball of radius {r:.4g}")
        maxima.append(best)
        details.append(best_est)
    k = min(3, len(maxima))
    tail = maxima[-k:]
    # blow-up certificate: maxima above the ceiling and either increasing
    # under localization or already certified divergent at pair level
    diverged = all(q > ceiling for q in tail) and (
        (k == 3 and tail[0] < tail[1] < tail[2])
        or any(est.diverged for est in details[-k:]))
    last = details[-1]
    return ThetaEstimate(
        value=maxima[-1], variant="star", steps=radii, quotients=maxima,
        extrapolant=maxima[-1], converged=last.converged and not diverged,
        diverged=diverged, floor_hit=floor_hit, ceiling=ceiling,
        meta={"x": x, "t": t, "per_radius": details})


def _ball_measures(space, t, center, eps, radial_factors=(0.6,),
                   two_point=False, taper=True):
    """Candidate small-support measures around a sample point."""
    ball = space.ball(t, center, eps)
    m = space.mass(t)
    d_to_c = space.dist_matrix(t)[center][ball]
    cands = []
    w = np.zeros(space.n_points)
    w[ball] = m[ball]
    cands.append(("uniform", DiscreteMeasure.normalized(t, w)))
    if taper:
        w = np.zeros(space.n_points)
        w[ball] = m[ball] * np.exp(-2.0 * (d_to_c / max(eps, 1e-300)) ** 2)
        cands.append(("taper", DiscreteMeasure.normalized(t, w)))
    for fac in radial_factors:
        w = np.zeros(space.n_points)
        w[ball] = m[ball] * (1.0 - fac * d_to_c / max(eps, 1e-300))
        cands.append((f"radial{fac:g}", DiscreteMeasure.normalized(t, w)))
    if two_point and len(ball) >= 2:
        others = [p for p in ball if p != center]
        nearest = others[int(np.argmin(space.dist_matrix(t)[center][others]))]
        w = np.zeros(space.n_points)
        w[center] = 0.5
        w[nearest] = 0.5
        cands.append(("two_point", DiscreteMeasure(t, w)))
    return cands


def theta_flat(space, t, x, y, eps_seq, schedule: StepSchedule, eps_bw=None,
               step_ctrl=None, method="exact", ceiling=DIVERGENCE_CEILING,
               candidate_radial=(0.6,), candidate_taper=True):
    """Relaxed expansion rate over small-support measure pairs.

    For each support radius the finite-difference quotient is minimized
    over a candidate family (Diracs included, so the estimate never exceeds
    the Dirac lower estimate); the reported value is the infimum at the
    smallest radius.
    """
    t = space.check_time(t)
    eps_seq = sorted((float(e) for e in eps_seq), reverse=True)
    hs, floor_hit, floor = usable_steps(space, t, x, y, schedule)
    if not hs:
        raise ResolutionError(f"no usable steps above floor {floor:.4g}")
    n = space.n_points
    per_eps, per_eps_detail = [], []
    for eps in eps_seq:
        for c, lab in ((x, "x"), (y, "y")):
            if len(space.ball(t, c, eps)) < 2:
                raise ResolutionError(
                    f"radius {eps:.4g} admits no 2-atom measure around {lab}")
        cands_x = _ball_measures(space, t, x, eps,
                                 radial_factors=candidate_radial,
                                 taper=candidate_taper)
        cands_y = _ball_measures(space, t, y, eps,
                                 radial_factors=candidate_radial,
                                 taper=candidate_taper)
        pairs = [("dirac", DiscreteMeasure.dirac(n, t, x),
                  DiscreteMeasure.dirac(n, t, y))]
        pairs += [(f"{nx}/{ny}", mx, my)
                  for (nx, mx), (ny, my) in zip(cands_x, cands_y)]
        best, best_tag, best_qs = math.inf, "", None
        for tag, mu0, mu1 in pairs:
            ref = w2(space, t, mu0, mu1, method=method).w
            if ref <= 1e-12:
                continue
            try:
                qs, _ = _flow_quotients(space, t, mu0, mu1, hs, ref,
                                        eps_bw, step_ctrl, method)
            except DegenerateCollisionError:
                continue
            _, v_minus, extrap, conv, _ = _tail_stats(qs, ceiling)
            val = extrap if conv else v_minus
            if val < best:
                best, best_tag, best_qs = val, tag, qs
        if not math.isfinite(best):
            raise DegenerateCollisionError("all candidate pairs degenerate")
        per_eps.append(best)
        per_eps_detail.append({"eps": eps, "candidate": best_tag,
                               "quotients": best_qs})
    v_plus, v_minus, extrap, conv, div = _tail_stats(per_eps, ceiling)
    return ThetaEstimate(
        value=per_eps[-1], variant="flat", steps=hs, quotients=per_eps,
        extrapolant=extrap, converged=conv, diverged=div,
        floor_hit=floor_hit, ceiling=ceiling,
        meta={"x": x, "y": y, "eps_seq": eps_seq, "detail": per_eps_detail})


# ---------------------------------------------------------------------------
# eta family
# ---------------------------------------------------------------------------

def _endpoint_slope(a_grid, ents, at_one):
    """3-node one-sided linear fit of the entropy near a path endpoint.

    The exact endpoints are excluded from the fit: the a = 0, 1 measures
    are the only unbinned ones, so including them would fold the binning
    entropy offset into the slope. The offset at interior nodes cancels in
    the slope once the coupling atoms travel about a cell per node, which
    is why probes should keep the endpoint separation at roughly eight or
    more sample spacings.
    """
    if at_one:
        aa, ee = a_grid[-4:-1], ents[-4:-1]
    else:
        aa, ee = a_grid[1:4], ents[1:4]
    coef = np.polyfit(aa, ee, 1)
    resid = float(np.abs(np.polyval(coef, aa) - ee).max())
    return float(coef[0]), resid


def _default_h_seq(space, t):
    lo = space.time_window[0]
    h1 = min(0.02, (t - lo) / 2.0)
    if h1 <= 0.0:
        raise InvalidInputError("time derivative needs room below t")
    return [h1, h1 / 2.0, h1 / 4.0]


def eta_eps(space, t, x, y, eps, supports_spec=None, da=DEFAULT_DA,
            h_seq=None, method="exact", fit_threshold=0.05):
    """Dynamic entropy-convexity deficit for transports between eps-balls.

    Infimizes (slope_1 - slope_0 + half d/dt^- W^2)/W^2 over a finite
    candidate family of endpoint measures; the result is an upper bound on
    the true infimum over all admissible geodesics. Components of the
    minimizing candidate are stored so the value is exactly recomputable.
    """
    t = space.check_time(t)
    if not space.has_geodesic:
        raise UnsupportedOperationError("eta needs a geodesic evaluator")
    locsp = 3.0 * max(space.nn_of(t, x), space.nn_of(t, y))
    if eps < locsp:
        raise ResolutionError(
            f"support radius {eps:.4g} below 3x local spacing {locsp:.4g}")
    spec = dict(supports_spec or {})
    radial = tuple(spec.get("radial", (0.6,)))
    two_point = bool(spec.get("two_point", False))
    cands_x = _ball_measures(space, t, x, eps, radial, two_point)
    cands_y = _ball_measures(space, t, y, eps, radial, two_point)
    extra = spec.get("pairs", ())
    pairs = [(f"{nx}/{ny}", mx, my)
             for (nx, mx), (ny, my) in zip(cands_x, cands_y)]
    pairs += [(f"user{k}", mu, nu) for k, (mu, nu) in enumerate(extra)]
    if h_seq is None and not space.static:
        h_seq = _default_h_seq(space, t)

    a_grid = np.linspace(0.0, 1.0, int(round(1.0 / da)) + 1)
    best = None
    for tag, mu0, mu1 in pairs:
        plan = w2(space, t, mu0, mu1, method=method)
        if plan.w <= 1e-12:
            continue
        ents = []
        for a in a_grid:
            mua = displacement_interpolate(space, t, plan, float(a))
            ents.append(entropy(space, t, mua))
        ents = np.asarray(ents)
        slope0, res0 = _endpoint_slope(a_grid, ents, at_one=False)
        slope1, res1 = _endpoint_slope(a_grid, ents, at_one=True)
        if space.static:
            dtw2 = 0.0
        else:
            dtw2 = dt_w2_left(space, t, mu0, mu1, h_seq, method=method).estimate
        half_dtw2 = 0.5 * dtw2
        value = (slope1 - slope0 + half_dtw2) / plan.w2
        resid = max(res0, res1)
        if best is None or value < best.value:
            best = EtaEstimate(
                value=value, eps=eps, variant="eps", slope0=slope0,
                slope1=slope1, half_dtw2=half_dtw2, w2=plan.w2,
                candidate=tag, fit_residual=resid,
                low_confidence=resid > fit_threshold,
                meta={"x": x, "y": y, "t": t, "entropy_path": ents.tolist(),
                      "a_grid": a_grid.tolist(), "h_seq": h_seq or []})
    if best is None:
        raise DegenerateCollisionError("no non-degenerate candidate pair")
    return best


def default_eps_rule(d, floor):
    return max(d / 10.0, floor)


def eta_star(space, t, x, radii, eps_rule=None, pair_quota=4, seed=0,
             da=DEFAULT_DA, h_seq=None, method="exact", min_sep_cells=8.0):
    """Localized sup of the convexity deficit over pairs in shrinking balls.

    Pairs closer than ``min_sep_cells`` sample spacings are skipped: below
    that separation the binned entropy path carries no signal, so the sup
    is taken over the resolvable part of each ball.
    """
    t = space.check_time(t)
    if not space.has_geodesic:
        raise UnsupportedOperationError("eta needs a geodesic evaluator")
    radii = sorted((float(r) for r in radii), reverse=True)
    rng = np.random.default_rng(seed)
    d_mat = space.dist_matrix(t)
    min_sep = min_sep_cells * space.spacing(t)
    maxima, best_overall = [], None
    for r in radii:
        ball = space.ball(t, x, r)
        if len([p for p in ball if p != x]) < 2:
            raise ResolutionError(
                f"ball of radius {r:.4g} around {x} holds fewer than 2 other points")
        best = None
        evaluated = 0
        for (y, z) in _sample_pairs(ball, 4 * pair_quota, rng, anchor=x,
                                    d_from_anchor=d_mat[x]):
            if evaluated >= pair_quota:
                break
            d_pair = d_mat[y, z]
            if d_pair < min_sep:
                continue
            floor = 3.0 * max(space.nn_of(t, y), space.nn_of(t, z))
            eps = (eps_rule or default_eps_rule)(d_pair, floor)
            try:
                est = eta_eps(space, t, y, z, eps, da=da, h_seq=h_seq,
                              method=method)
            except (DegenerateCollisionError, ResolutionError):
                continue
            evaluated += 1
            if best is None or est.value > best.value:
                best = est
        if best is None:
            raise ResolutionError(
                f"no resolvable pair in ball of radius {r:.4g} "
                f"(separation floor {min_sep:.4g})")
        maxima.append(best.value)
        best_overall = best
    out = EtaEstimate(
        value=maxima[-1], eps=best_overall.eps, variant="star",
        slope0=best_overall.slope0, slope1=best_overall.slope1,
        half_dtw2=best_overall.half_dtw2, w2=best_overall.w2,
        candidate=best_overall.candidate,
        fit_residual=best_overall.fit_residual,
        low_confidence=best_overall.low_confidence,
        meta={"x": x, "t": t, "radii": radii, "maxima": maxima})
    return out


# ---------------------------------------------------------------------------
# geodesic tensor averages and eigenvalues
# ---------------------------------------------------------------------------

def rfex(space, t, x, y, N=np.inf, nodes=32):
    """Average of the flow tensor along the evaluator geodesic from x to y.

    Composite midpoint rule; exact for model flows with constant tensors.
    """
    t = space.check_time(t)
    if not (space.has_geodesic and space.has_tensor):
        raise UnsupportedOperationError("rfex needs geodesic and tensor evaluators")
    if nodes < 32:
        nodes = 32
    total = 0.0
    delta = 1e-5
    for l in range(nodes):
        a = (l + 0.5) / nodes
        p = space.geodesic_point(t, x, y, a)
        p_lo = space.geodesic_point(t, x, y, a - delta)
        p_hi = space.geodesic_point(t, x, y, a + delta)
        v = (np.atleast_1d(p_hi) - np.atleast_1d(p_lo)) / (2.0 * delta)
        total += space.tensor(t, p, v, N)
    return total / nodes


def tensor_eigen(space, t, x) -> TensorEigen:
    """Extremal eigenvalues of the flow tensor at a sample point."""
    t = space.check_time(t)
    if not space.has_tensor:
        raise UnsupportedOperationError("tensor evaluator missing")
    if space.kind == "gaussian":
        n = int(space.meta["n"])
        A = np.atleast_2d(np.asarray(space.meta["A"].at(t), dtype=float))
        Adot = np.atleast_2d(np.asarray(space.meta["A"].dot(t), dtype=float))
        a = np.atleast_2d(np.asarray(space.meta["a"].at(t), dtype=float))
        if A.shape != (n, n):
            A = np.eye(n) * float(A)
        if Adot.shape != (n, n):
            Adot = np.eye(n) * float(Adot)
        if a.shape != (n, n):
            a = np.eye(n) * float(a)
        vals = scipy.linalg.eigh(0.5 * Adot + a, A, eigvals_only=True)
        return TensorEigen(sigma_max=float(vals.max()), sigma_min=float(vals.min()))
    # isotropic models: any direction realizes both extremes
    dim = space.points.shape[1]
    v = np.zeros(dim)
    v[0] = 1.0
    val = space.tensor(t, x, v)
    return TensorEigen(sigma_max=val, sigma_min=val)


# ---------------------------------------------------------------------------
# dimensional deficit and rigidity
# ---------------------------------------------------------------------------

def nsuper_deficit(space, t, s, mu: DiscreteMeasure, nu: DiscreteMeasure,
                   N, snapshots=16, eps_bw=None, step_ctrl=None,
                   method="exact", return_details=False):
    """Margin of the dimensional transport-entropy contraction inequality.

    D = W_t^2(mu,nu) - W_s^2(flowed pair) - (2/N) * int_[s,t] (Ent_r
    difference)^2 dr, with the integral by composite trapezoid over at
    least 16 interior flow snapshots (refined once; >5% disagreement flags
    low confidence). D >= 0 certifies the inequality at this pair, D < 0
    witnesses failure.
    """
    t = space.check_time(t)
    s = space.check_time(s)
    if s > t:
        raise InvalidInputError("need s <= t")
    if not (N == np.inf or N > 0):
        raise InvalidInputError("dimension parameter must be positive or inf")
    if s == t:
        return (0.0, {}) if return_details else 0.0
    w2_t = w2(space, t, truncate(mu, SUPPORT_TRUNC),
              truncate(nu, SUPPORT_TRUNC), method=method).w2

    def integral(n_snap):
        rs = np.linspace(s, t, n_snap + 2)
        f_mu = dual_flow_path(space, t, rs, mu, eps_bw, step_ctrl)
        f_nu = dual_flow_path(space, t, rs, nu, eps_bw, step_ctrl)
        diffsq = np.array([
            (entropy(space, r, fm) - entropy(space, r, fn)) ** 2
            for r, fm, fn in zip(rs, f_mu, f_nu)])
        w2_s = w2(space, s, truncate(f_mu[0], SUPPORT_TRUNC),
                  truncate(f_nu[0], SUPPORT_TRUNC), method=method).w2
        return float(np.trapezoid(diffsq, rs)), w2_s

    snapshots = max(16, int(snapshots))
    int1, w2_s = integral(snapshots)
    int2, _ = integral(2 * snapshots)
    low_conf = abs(int2 - int1) > 0.05 * (abs(int2) + 1e-12)
    if low_conf:
        warnings.warn("entropy-difference integral not resolved to 5%; "
                      "refine the snapshot grid", stacklevel=2)
    ent_term = 0.0 if N == np.inf else (2.0 / N) * int2
    d_val = w2_t - w2_s - ent_term
    if return_details:
        return d_val, {"w2_t": w2_t, "w2_s": w2_s, "integral": int2,
                       "integral_coarse": int1, "low_confidence": low_conf}
    return d_val


def rigidity_defect(space, t=None):
    """Double integral of cos(d) against the normalized sample masses.

    Vanishes exactly for round spheres among admissible bases; requires a
    static space of diameter at most pi (up to metric tolerance).
    """
    if not space.static:
        raise InvalidInputError("rigidity defect is defined for static spaces")
    t = space.time_window[0] if t is None else space.check_time(t)
    d = space.dist_matrix(t)
    if d.max() > np.pi + space.metric_tol:
        raise InvalidInputError(
            f"diameter {d.max():.6g} exceeds pi beyond tolerance")
    m = space.mass(t)
    mh = m / m.sum()
    return float(mh @ np.cos(d) @ mh)


def floor_snapped_schedule(space, t, x, y, levels=3, margin=1.1):
    """Dyadic schedule whose finest step sits just above the pair floor."""
    f = pair_floor(space, t, x, y)
    levels = max(1, int(levels))
    return StepSchedule(h0=f * margin * 2.0 ** (levels - 1), k_max=levels - 1)
