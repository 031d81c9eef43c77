"""Flow classification: aggregates probe outputs into super/sub verdicts.

The open-cover quantifiers become concrete sampling plans: global pair
quotas for the one-sided transport estimates, farthest-point centers with
metric balls of five local spacings for the localized reversals, and a
finite interior time set. Every "fails" verdict carries reproducible
witnesses; every "holds" verdict records the worst margin seen.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateCollisionError,
    ResolutionError,
    UnsupportedOperationError,
)
from .heat import dual_flow_path
from .probes import (
    StepSchedule,
    eta_eps,
    eta_star,
    pair_floor,
    theta_flat,
    theta_pair,
    usable_steps,
)
from .transport import DiscreteMeasure, truncate, w2

HOLDS, FAILS, INCONCLUSIVE = "holds", "fails", "inconclusive"


@dataclass
class VerdictRecord:
    status: str
    n_checked: int = 0
    worst_margin: float = float("nan")
    witnesses: list = field(default_factory=list)
    notes: str = ""

    def to_jsonable(self):
        return {"status": self.status, "n_checked": self.n_checked,
                "worst_margin": self.worst_margin,
                "witnesses": self.witnesses, "notes": self.notes}


@dataclass
class FlowVerdict:
    per_t: dict
    config: dict
    summary: str = ""

    def overall(self, check):
        states = [rec[check].status for rec in self.per_t.values() if check in rec]
        if any(s == FAILS for s in states):
            return FAILS
        if any(s == INCONCLUSIVE for s in states):
            return INCONCLUSIVE
        return HOLDS if states else INCONCLUSIVE

    def checks(self):
        names = []
        for rec in self.per_t.values():
            for k in rec:
                if k not in names:
                    names.append(k)
        return names

    def build_summary(self):
        parts = [f"{c}: {self.overall(c)}" for c in self.checks()]
        self.summary = "; ".join(parts)
        return self.summary

    def to_jsonable(self):
        return {
            "config": self.config,
            "summary": self.summary or self.build_summary(),
            "per_t": {repr(t): {k: v.to_jsonable() for k, v in rec.items()}
                      for t, rec in self.per_t.items()},
        }


def _probe_pool(space):
    mask = space.meta.get("probe_mask")
    if mask is None:
        return np.arange(space.n_points)
    return np.flatnonzero(mask)


def farthest_point_sample(space, t, count, seed=0):
    """Deterministic cover centers: greedy farthest-point from a seeded start.

    Restricted to the space's probe pool (model flows on truncated charts
    exclude a boundary margin where the discretization is not faithful).
    """
    d = space.dist_matrix(t)
    pool = _probe_pool(space)
    count = min(count, len(pool))
    rng = np.random.default_rng(seed)
    picked = [int(pool[rng.integers(len(pool))])]
    mind = d[picked[0]][pool].copy()
    while len(picked) < count:
        nxt = int(pool[np.argmax(mind)])
        picked.append(nxt)
        mind = np.minimum(mind, d[nxt][pool])
    return picked


def default_t_set(space, count=5):
    lo, hi = space.time_window
    if space.static:
        return [lo + 0.5 * (hi - lo)]
    pad = (hi - lo) / (count + 1)
    return [lo + pad * (k + 1) for k in range(count)]


def _sample_global_pairs(space, t, quota, rng, d_range=None):
    d = space.dist_matrix(t)
    pool = _probe_pool(space)
    lo, hi = d_range if d_range else (0.0, np.inf)
    pairs = []
    guard = 0
    while len(pairs) < quota and guard < 60 * quota:
        guard += 1
        i = int(pool[rng.integers(len(pool))])
        j = int(pool[rng.integers(len(pool))])
        if i == j:
            continue
        if lo <= d[i, j] <= hi:
            pairs.append((min(i, j), max(i, j)))
    return pairs


def _flows_at_steps(space, t, x, y, hs, eps_bw, method="exact"):
    s_list = [t - h for h in hs]
    n = space.n_points
    f0 = dual_flow_path(space, t, s_list, DiscreteMeasure.dirac(n, t, x), eps_bw)
    f1 = dual_flow_path(space, t, s_list, DiscreteMeasure.dirac(n, t, y), eps_bw)
    out = []
    for s, a, b in zip(s_list, f0, f1):
        plan = w2(space, s, truncate(a, 1e-12), truncate(b, 1e-12), method=method)
        out.append((s, plan.w))
    return out


def classify_rough(space, t_set=None, pair_quota=10, s_schedule=None, tol=0.1,
                   seed=0, eps_bw=None, centers=None, method="exact") -> FlowVerdict:
    """Global non-expansion and localized almost-reversal of the heat-flow
    transport estimate.

    super: W_s between flowed Diracs must stay below d_t(x,y)(1+tol) on
    sampled global pairs. sub: on pairs inside metric balls of five local
    spacings around cover centers, W_s^2 must stay above
    d_t^2 (1 - tol (t-s)). Schedules are floor-snapped per pair when no
    explicit schedule is given.
    """
    if pair_quota < 10:
        raise ResolutionError("pair quota must be at least 10")
    t_set = t_set if t_set is not None else default_t_set(space)
    rng = np.random.default_rng(seed)
    per_t = {}
    for t in t_set:
        t = space.check_time(t)
        d_mat = space.dist_matrix(t)
        pool = _probe_pool(space)
        diam = float(d_mat[np.ix_(pool, pool)].max())
        rec = {}

        # (i) global non-expansion
        pairs = _sample_global_pairs(space, t, pair_quota, rng,
                                     d_range=(0.15 * diam, 0.8 * diam))
        witnesses, worst, checked = [], -np.inf, 0
        skipped = 0
        for (x, y) in pairs:
            sched = s_schedule or _default_pair_schedule(space, t, x, y)
            hs, _, _ = usable_steps(space, t, x, y, sched)
            if not hs:
                skipped += 1
                continue
            try:
                flows = _flows_at_steps(space, t, x, y, hs, eps_bw, method)
            except DegenerateCollisionError:
                skipped += 1
                continue
            for s, w_s in flows:
                checked += 1
                margin = w_s / d_mat[x, y] - (1.0 + tol)
                worst = max(worst, margin)
                if margin > 0.0:
                    witnesses.append({"x": x, "y": y, "s": s, "t": t,
                                      "W_s": w_s, "d_t": float(d_mat[x, y]),
                                      "margin": margin})
        if checked == 0:
            rec["rough_super"] = VerdictRecord(INCONCLUSIVE, 0,
                                               notes="resolution floors left no usable steps")
        else:
            rec["rough_super"] = VerdictRecord(
                FAILS if witnesses else HOLDS, checked, float(worst), witnesses)

        # (ii) localized almost-reversal
        ctrs = centers if centers is not None else farthest_point_sample(
            space, t, max(4, pair_quota // 2), seed + 1)
        ball_r = 5.0 * space.spacing(t)
        witnesses, worst, checked, skipped = [], -np.inf, 0, 0
        pool = set(int(v) for v in _probe_pool(space))
        local_pairs = []
        for c in ctrs:
            ball = [int(b) for b in space.ball(t, c, ball_r)
                    if b != c and int(b) in pool]
            if not ball:
                continue
            dd = d_mat[c][ball]
            local_pairs.append((c, ball[int(np.argmax(dd))]))
            if len(ball) > 1:
                pick = ball[int(rng.integers(len(ball)))]
                if pick != local_pairs[-1][1]:
                    local_pairs.append((c, pick))
        local_pairs = local_pairs[:2 * pair_quota]
        for (x, y) in local_pairs:
            sched = s_schedule or _default_pair_schedule(space, t, x, y)
            hs, _, _ = usable_steps(space, t, x, y, sched)
            if not hs:
                skipped += 1
                continue
            try:
                flows = _flows_at_steps(space, t, x, y, hs, eps_bw, method)
            except DegenerateCollisionError:
                skipped += 1
                continue
            d2 = d_mat[x, y] ** 2
            for s, w_s in flows:
                checked += 1
                # normalized contraction-rate excess over the allowance
                margin = (d2 - w_s ** 2) / (d2 * (t - s)) - tol
                worst = max(worst, margin)
                if margin > 0.0:
                    wit = {"x": x, "y": y, "s": s, "t": t, "W_s": w_s,
                           "d_t": float(d_mat[x, y]), "margin": margin}
                    witnesses.append(wit)
        if checked == 0:
            rec["rough_sub"] = VerdictRecord(INCONCLUSIVE, 0,
                                             notes="resolution floors left no usable steps")
        else:
            vrec = VerdictRecord(FAILS if witnesses else HOLDS, checked,
                                 float(worst), witnesses)
            if witnesses:
                wit = max(witnesses, key=lambda w: w["margin"])
                try:
                    sched = s_schedule or _default_pair_schedule(
                        space, t, wit["x"], wit["y"])
                    tp, _ = theta_pair(space, t, wit["x"], wit["y"], sched,
                                       eps_bw=eps_bw)
                    vrec.notes = (f"worst witness theta+ {tp.value:.4g}, "
                                  f"diverged={tp.diverged}")
                    wit["theta_diverged"] = tp.diverged
                except (DegenerateCollisionError, ResolutionError):
                    pass
            rec["rough_sub"] = vrec
        per_t[float(t)] = rec
    verdict = FlowVerdict(per_t=per_t, config={
        "kind": space.kind, "check": "rough", "tol": tol, "seed": seed,
        "pair_quota": pair_quota, "t_set": [float(t) for t in t_set],
        "schedule": None if s_schedule is None else
        {"h0": s_schedule.h0, "k_max": s_schedule.k_max}})
    verdict.build_summary()
    return verdict


def _default_pair_schedule(space, t, x, y, levels=3, margin=1.1):
    f = pair_floor(space, t, x, y)
    h0 = f * margin * 2.0 ** (levels - 1)
    h0 = min(h0, (t - space.time_window[0]) * 0.9) if t > space.time_window[0] else h0
    return StepSchedule(h0=h0, k_max=levels - 1)


def classify_weak(space, t_set=None, pair_quota=6, eps_rule=None, tol=0.2,
                  seed=0, method="exact") -> FlowVerdict:
    """Entropy-convexity verdicts: super needs eta >= -tol on sampled pairs,
    sub needs the localized sup of eta <= +tol at sampled centers."""
    if not space.has_geodesic:
        raise UnsupportedOperationError(
            "weak classification needs a geodesic evaluator")
    t_set = t_set if t_set is not None else default_t_set(space)
    rng = np.random.default_rng(seed)
    # at desk resolutions the support balls need a sizable fraction of the
    # pair separation to resolve the entropy path
    rule = eps_rule or (lambda d, floor: max(d / 2.0, floor))
    per_t = {}
    for t in t_set:
        t = space.check_time(t)
        d_mat = space.dist_matrix(t)
        pool = _probe_pool(space)
        diam = float(d_mat[np.ix_(pool, pool)].max())
        rec = {}

        pairs = _sample_global_pairs(space, t, pair_quota, rng,
                                     d_range=(0.4 * diam, 0.7 * diam))
        witnesses, worst, checked = [], np.inf, 0
        for (x, y) in pairs:
            floor = 3.0 * max(space.nn_of(t, x), space.nn_of(t, y))
            eps = rule(float(d_mat[x, y]), floor)
            try:
                est = eta_eps(space, t, x, y, eps, method=method)
            except (DegenerateCollisionError, ResolutionError):
                continue
            checked += 1
            worst = min(worst, est.value)
            if est.value < -tol:
                witnesses.append({"x": x, "y": y, "t": t, "eps": eps,
                                  "eta": est.value,
                                  "margin": -(est.value + tol)})
        rec["weak_super"] = VerdictRecord(
            INCONCLUSIVE if checked == 0 else (FAILS if witnesses else HOLDS),
            checked, float(worst) if checked else float("nan"), witnesses)

        ctrs = farthest_point_sample(space, t, max(3, pair_quota // 2), seed + 1)
        sp = space.spacing(t)
        witnesses, worst, checked = [], -np.inf, 0
        for c in ctrs:
            try:
                est = eta_star(space, t, c,
                               radii=[12 * sp, 10 * sp, 9 * sp],
                               eps_rule=eps_rule or rule, pair_quota=3,
                               seed=seed + 2, method=method)
            except (DegenerateCollisionError, ResolutionError,
                    UnsupportedOperationError):
                continue
            checked += 1
            worst = max(worst, est.value)
            if est.value > tol:
                witnesses.append({"x": c, "t": t, "eta_star": est.value,
                                  "margin": est.value - tol})
        rec["weak_sub"] = VerdictRecord(
            INCONCLUSIVE if checked == 0 else (FAILS if witnesses else HOLDS),
            checked, float(worst) if checked else float("nan"), witnesses)
        per_t[float(t)] = rec
    verdict = FlowVerdict(per_t=per_t, config={
        "kind": space.kind, "check": "weak", "tol": tol, "seed": seed,
        "pair_quota": pair_quota, "t_set": [float(t) for t in t_set]})
    verdict.build_summary()
    return verdict


def check_contraction(space, t, s, measure_quota=10, seed=0, eps_bw=None,
                      method="exact"):
    """Worst ratio W_s(flowed pair) / W_t(pair) over random atom mixtures."""
    t = space.check_time(t)
    s = space.check_time(s)
    if s > t:
        raise ResolutionError("need s <= t")
    if s == t:
        return 1.0
    rng = np.random.default_rng(seed)
    n = space.n_points
    worst = 0.0
    for _ in range(measure_quota):
        def mix():
            k = int(rng.integers(1, 6))
            idx = rng.choice(n, size=k, replace=False)
            w = np.zeros(n)
            w[idx] = rng.random(k) + 0.1
            return DiscreteMeasure.normalized(t, w)
        mu, nu = mix(), mix()
        ref = w2(space, t, mu, nu, method=method).w
        if ref <= 1e-12:
            continue
        fm = dual_flow_path(space, t, [s], mu, eps_bw)[0]
        fn = dual_flow_path(space, t, [s], nu, eps_bw)[0]
        val = w2(space, s, truncate(fm, 1e-12), truncate(fn, 1e-12),
                 method=method).w
        worst = max(worst, val / ref)
    return float(worst)


def check_eta_leq_theta_flat(space, t_set=None, pair_quota=10, tol=0.25,
                             seed=0, eps_rule=None, method="exact",
                             workers=None):
    """Cross-check: the convexity deficit never exceeds the relaxed
    expansion rate beyond tolerance. Returns the violation list.

    Pair evaluations are independent and run on a small thread pool;
    results are collected in sampling order so output is deterministic.
    """
    from concurrent.futures import ThreadPoolExecutor
    if not space.has_geodesic:
        raise UnsupportedOperationError("needs a geodesic evaluator")
    t_set = t_set if t_set is not None else default_t_set(space)
    rng = np.random.default_rng(seed)
    violations = []
    results = []
    if workers is None:
        import os
        env = os.environ.get("RFPROBE_THREADS", "")
        if env.isdigit() and int(env) > 0:
            workers = int(env)
        else:
            try:
                workers = min(4, len(os.sched_getaffinity(0)))
            except AttributeError:
                workers = min(4, os.cpu_count() or 1)

    def evaluate(job):
        t, x, y, d = job
        floor = 3.0 * max(space.nn_of(t, x), space.nn_of(t, y))
        eps = (eps_rule or (lambda dd, fl: max(dd / 3.0, fl)))(d, floor)
        try:
            eta = eta_eps(space, t, x, y, eps, method=method)
            sched = _default_pair_schedule(space, t, x, y, levels=2,
                                           margin=1.3)
            tf = theta_flat(space, t, x, y, eps_seq=[eps], schedule=sched,
                            method=method)
        except (DegenerateCollisionError, ResolutionError):
            return None
        return {"t": t, "x": x, "y": y, "d": d, "eps": eps,
                "eta": eta.value, "theta_flat": tf.value,
                "excess": eta.value - tf.value}

    jobs = []
    for t in t_set:
        t = space.check_time(t)
        d_mat = space.dist_matrix(t)
        pool = _probe_pool(space)
        diam = float(d_mat[np.ix_(pool, pool)].max())
        for (x, y) in _sample_global_pairs(space, t, pair_quota, rng,
                                           d_range=(0.45 * diam, 0.7 * diam)):
            jobs.append((t, x, y, float(d_mat[x, y])))
    with ThreadPoolExecutor(max_workers=workers) as tp:
        for entry in tp.map(evaluate, jobs):
            if entry is None:
                continue
            results.append(entry)
            if entry["eta"] > entry["theta_flat"] + tol:
                violations.append(entry)
    return violations, results
