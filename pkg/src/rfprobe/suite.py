"""Core property suite: the always-on sanity battery behind `rfprobe check`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RFProbeError
from .classify import check_contraction
from .heat import check_chapman_kolmogorov, kernel
from .transport import DiscreteMeasure, w2


@dataclass
class SuiteRow:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""


def _random_blob(rng, n, t, k_atoms):
    idx = rng.choice(n, size=min(k_atoms, n), replace=False)
    w = np.zeros(n)
    w[idx] = rng.random(len(idx)) + 0.05
    return DiscreteMeasure.normalized(t, w)


def run_core_suite(space, seed=0, eps_bw=None, contraction_tol=1.02):
    """Runs the core checks on one space; returns a list of SuiteRow."""
    rows = []
    rng = np.random.default_rng(seed)
    lo, hi = space.time_window
    t_mid = lo + 0.5 * (hi - lo)
    span = hi - lo

    # metric axioms + control
    try:
        space.validate(seed=seed)
        rows.append(SuiteRow("metric_axioms", True, 0.0, space.metric_tol))
    except RFProbeError as exc:
        rows.append(SuiteRow("metric_axioms", False, np.nan, space.metric_tol,
                             str(exc)))

    # Markov property and positivity of one kernel
    tau = min(0.02, 0.2 * span)
    try:
        K = kernel(space, lo + 2 * tau, lo + tau, eps_bw)
        rows.append(SuiteRow("markov_row_sums", K.row_sum_dev <= 1e-9,
                             K.row_sum_dev, 1e-9))
        rows.append(SuiteRow("kernel_positivity", K.pre_clamp_min >= -1e-12,
                             K.pre_clamp_min, -1e-12))
    except RFProbeError as exc:
        rows.append(SuiteRow("markov_row_sums", False, np.nan, 1e-9, str(exc)))

    # Chapman-Kolmogorov
    try:
        res = check_chapman_kolmogorov(space, lo + tau, lo + 1.5 * tau,
                                       lo + 2 * tau, eps_bw)
        rows.append(SuiteRow("chapman_kolmogorov", res <= 1e-6, res, 1e-6))
    except RFProbeError as exc:
        rows.append(SuiteRow("chapman_kolmogorov", False, np.nan, 1e-6, str(exc)))

    # exact duality gap + triangle inequality over random triples
    n = space.n_points
    worst_gap, worst_tri = 0.0, -np.inf
    for _ in range(100):
        mu = _random_blob(rng, n, t_mid, int(rng.integers(2, 8)))
        nu = _random_blob(rng, n, t_mid, int(rng.integers(2, 8)))
        rho = _random_blob(rng, n, t_mid, int(rng.integers(2, 8)))
        p_ab = w2(space, t_mid, mu, nu)
        p_bc = w2(space, t_mid, nu, rho)
        p_ac = w2(space, t_mid, mu, rho)
        for p in (p_ab, p_bc, p_ac):
            worst_gap = max(worst_gap, p.gap / (1.0 + p.w2))
        worst_tri = max(worst_tri, p_ac.w - p_ab.w - p_bc.w)
    rows.append(SuiteRow("ot_duality_gap", worst_gap <= 1e-8, worst_gap, 1e-8))
    rows.append(SuiteRow("w_triangle", worst_tri <= 1e-7, worst_tri, 1e-7))

    # entropic upper bound against the exact route; the regularization is
    # chosen for reliable convergence inside the iteration cap (the bound
    # holds for any lambda)
    k_sup = min(60, n)
    mu = _random_blob(rng, n, t_mid, k_sup)
    nu = _random_blob(rng, n, t_mid, k_sup)
    try:
        exact = w2(space, t_mid, mu, nu).w2
        d = space.dist_matrix(t_mid)
        sub = 0.5 * d[np.ix_(mu.support(), nu.support())] ** 2
        lam = 1e-2 * float(np.median(sub[sub > 0]))
        ent = w2(space, t_mid, mu, nu, method="entropic", lam=lam).w2
        rows.append(SuiteRow("entropic_upper_bound", ent >= exact - 1e-9,
                             ent - exact, -1e-9))
    except RFProbeError as exc:
        rows.append(SuiteRow("entropic_upper_bound", False, np.nan, -1e-9,
                             str(exc)))

    # heat-flow contraction ratio
    try:
        s_c = lo + tau
        t_c = lo + 2 * tau
        ratio = check_contraction(space, t_c, s_c, measure_quota=8,
                                  seed=seed, eps_bw=eps_bw)
        rows.append(SuiteRow("contraction_ratio", ratio <= contraction_tol,
                             ratio, contraction_tol))
    except RFProbeError as exc:
        rows.append(SuiteRow("contraction_ratio", False, np.nan,
                             contraction_tol, str(exc)))
    return rows


def format_table(rows):
    lines = [f"{'check':24s} {'pass':5s} {'value':>14s} {'threshold':>14s}"]
    for r in rows:
        lines.append(f"{r.name:24s} {str(r.passed):5s} {r.value:>14.6g} "
                     f"{r.threshold:>14.6g}" + (f"  {r.detail}" if r.detail else ""))
    return "\n".join(lines)
