import math

import numpy as np
import pytest

from rfprobe import (
    DiscreteMeasure,
    InvalidInputError,
    ResolutionError,
    StepSchedule,
    UnsupportedOperationError,
    build_gaussian_flow,
    eta_eps,
    eta_star,
    floor_snapped_schedule,
    from_tables,
    nsuper_deficit,
    pair_floor,
    rfex,
    rigidity_defect,
    tensor_eigen,
    theta_flat,
    theta_pair,
    theta_star,
)
from rfprobe.probes import usable_steps

from conftest import nearest_index


# -- theta --------------------------------------------------------------------

def pick_pair(space, t, x0, sep):
    i = nearest_index(space, x0)
    j = nearest_index(space, x0 + sep)
    return i, (j if j != i else j + 2)


def test_theta_floor_truncates_schedule(shrinker):
    i, j = pick_pair(shrinker, 0.1, 0.0, 0.4)
    sched = StepSchedule(0.02, 4)
    hs, floor_hit, floor = usable_steps(shrinker, 0.1, i, j, sched)
    assert floor_hit and len(hs) == 2  # 0.02 and 0.01 survive
    assert math.sqrt(min(hs)) >= 2 * max(shrinker.nn_of(0.1, i),
                                         shrinker.nn_of(0.1, j)) - 1e-12


def test_theta_shrinker_near_zero(shrinker):
    sched = StepSchedule(0.02, 4)
    for x0, sep in [(0.0, 0.35), (1.0, 0.4), (-1.5, 0.5)]:
        i, j = pick_pair(shrinker, 0.1, x0, sep)
        tp, tm = theta_pair(shrinker, 0.1, i, j, sched)
        assert tm.value <= tp.value
        assert abs(tp.value) <= 0.1 and abs(tm.value) <= 0.1
        assert tp.floor_hit


def test_theta_static_flat_near_zero(flat_line):
    sched = StepSchedule(0.04, 2)
    i, j = pick_pair(flat_line, 0.5, -0.25, 0.5)
    tp, tm = theta_pair(flat_line, 0.5, i, j, sched)
    assert abs(tp.value) <= 0.1 and abs(tm.value) <= 0.1


def test_theta_ou_oracle(ou_line_fine):
    # closed form (a + Adot/2)/A = 1; the dual flows are same-variance
    # Gaussians whose means contract at rate a
    sched = StepSchedule(0.02, 2)
    for x0, sep in [(0.0, 0.3), (0.5, 0.28), (-0.7, 0.3)]:
        i, j = pick_pair(ou_line_fine, 0.5, x0, sep)
        tp, tm = theta_pair(ou_line_fine, 0.5, i, j, sched)
        assert abs(tp.value - 1.0) <= 0.1
        assert abs(tm.value - 1.0) <= 0.1
        assert tp.converged


def test_theta_identical_points_rejected(flat_line):
    with pytest.raises(InvalidInputError):
        theta_pair(flat_line, 0.5, 3, 3, StepSchedule(0.02, 1))


def test_theta_resolution_error(flat_line):
    with pytest.raises(ResolutionError):
        theta_pair(flat_line, 0.5, 10, 30, StepSchedule(1e-4, 1))


def test_theta_star_flat_near_zero(flat_line):
    sp = flat_line.spacing(0.5)
    x = nearest_index(flat_line, 0.0)
    est = theta_star(flat_line, 0.5, x, [8 * sp, 6 * sp, 5 * sp],
                     StepSchedule(1.3 * (4 * sp) ** 2, 0), pair_quota=4, seed=2)
    assert abs(est.value) <= 0.12
    assert not est.diverged


def test_theta_star_sphere_curvature(sphere400):
    sp = sphere400.spacing(0.5)
    # base point away from the lattice poles
    z = sphere400.points[:, 2]
    x = int(np.flatnonzero(np.abs(z) < 0.3)[0])
    est = theta_star(sphere400, 0.5, x, [5 * sp, 4 * sp, 3 * sp],
                     StepSchedule(1.3 * (2 * sp) ** 2, 0), pair_quota=5, seed=7)
    assert abs(est.value - 1.0) <= 0.15


def test_theta_cone_divergence_and_flat_control(cone_half, cone_flat):
    t = 0.5
    pts = cone_half.points
    ring = [i for i in range(1, cone_half.n_points)
            if abs(pts[i, 0] - 0.5) < 1e-9][:2]
    for p in ring:
        sched = floor_snapped_schedule(cone_half, t, 0, p, levels=3)
        tp, _ = theta_pair(cone_half, t, 0, p, sched)
        assert tp.diverged
        assert not tp.converged
        assert all(q > tp.ceiling for q in tp.quotients[-3:])
        ctrl_sched = floor_snapped_schedule(cone_flat, t, 0, p, levels=1,
                                            margin=2.0)
        cp, cm = theta_pair(cone_flat, t, 0, p, ctrl_sched)
        assert abs(cp.value) <= 0.1 and abs(cm.value) <= 0.1


def test_theta_star_cone_apex_divergence(cone_half):
    t = 0.5
    est = theta_star(cone_half, t, 0, [0.55, 0.45, 0.35],
                     StepSchedule(0.03, 2), pair_quota=3, seed=0)
    assert est.diverged
    assert est.value > est.ceiling


def test_theta_flat_below_dirac_estimate(sphere400):
    t = 0.5
    x, y = 17, int(np.argmin(np.abs(sphere400.dist_matrix(t)[17] - 1.6)))
    sched = floor_snapped_schedule(sphere400, t, x, y, levels=2, margin=1.3)
    _, tm = theta_pair(sphere400, t, x, y, sched)
    tf = theta_flat(sphere400, t, x, y, eps_seq=[0.6], schedule=sched)
    assert tf.value <= tm.value + 0.05


# -- eta ----------------------------------------------------------------------

def test_eta_static_flat(flat_line):
    i, j = pick_pair(flat_line, 0.5, -1.0, 2.0)
    est = eta_eps(flat_line, 0.5, i, j, eps=0.5)
    assert abs(est.value) <= 0.1
    # stored components reproduce the value exactly
    recomputed = (est.slope1 - est.slope0 + est.half_dtw2) / est.w2
    assert est.value == recomputed


def test_eta_shrinker(shrinker):
    i, j = pick_pair(shrinker, 0.2, -0.75, 1.5)
    est = eta_eps(shrinker, 0.2, i, j, eps=0.4)
    assert abs(est.value) <= 0.15
    # the metric-shrink term is exact for the affine scaling
    assert abs(est.half_dtw2 / est.w2 + 1.0 / (1 - 2 * 0.2)) < 1e-9


def test_eta_sphere_band(sphere400):
    # positive-curvature signal; the estimator noise band at 400 points is
    # wide, the tight consistency checks live in the acceptance module
    d0 = sphere400.dist_matrix(0.5)
    vals = []
    for target in (1.5, 1.7, 2.0):
        x = 17
        y = int(np.argmin(np.abs(d0[x] - target)))
        est = eta_eps(sphere400, 0.5, x, y, eps=0.62)
        vals.append(est.value)
    assert all(0.15 <= v <= 1.5 for v in vals)
    assert np.mean(vals) >= 0.5


def test_eta_resolution_floor(sphere400):
    with pytest.raises(ResolutionError):
        eta_eps(sphere400, 0.5, 3, 200, eps=0.05)


def test_eta_needs_geodesic():
    sp = from_tables([[0.0], [1.0], [2.0]], [0.0],
                     [[[0, 1, 2], [1, 0, 1], [2, 1, 0]]], [[1, 1, 1]])
    with pytest.raises(UnsupportedOperationError):
        eta_eps(sp, 0.0, 0, 2, eps=1.0)


def test_eta_star_flat(flat_line):
    # resolvable separations only: eta needs W^2 well above the entropy
    # slope noise, i.e. pairs spanning a couple of length units here
    sp = flat_line.spacing(0.5)
    x = nearest_index(flat_line, 0.3)
    est = eta_star(flat_line, 0.5, x, radii=[44 * sp, 40 * sp, 36 * sp],
                   eps_rule=lambda d, f: max(d / 3.0, f), pair_quota=3,
                   seed=3, min_sep_cells=32)
    assert abs(est.value) <= 0.25
    assert est.variant == "star"


# -- rfex / eigenvalues ---------------------------------------------------------

def test_rfex_constant_tensors(shrinker, sphere400, ou_line):
    i, j = pick_pair(shrinker, 0.1, 0.0, 1.0)
    assert abs(rfex(shrinker, 0.1, i, j)) < 1e-12
    assert abs(rfex(sphere400, 0.5, 3, 77) - 1.0) < 1e-12
    i, j = pick_pair(ou_line, 0.5, -0.5, 1.0)
    assert abs(rfex(ou_line, 0.5, i, j) - 1.0) < 1e-12


def test_rfex_requires_evaluators(cone_half):
    with pytest.raises(UnsupportedOperationError):
        rfex(cone_half, 0.5, 0, 5)


def test_tensor_eigen(flat_line, sphere400):
    e = tensor_eigen(flat_line, 0.5, 0)
    assert e.sigma_max == 0.0 and e.sigma_min == 0.0
    e = tensor_eigen(sphere400, 0.5, 0)
    assert abs(e.sigma_max - 1.0) < 1e-12 and abs(e.sigma_min - 1.0) < 1e-12
    from rfprobe import AffinePath
    g = build_gaussian_flow(n=1, A=AffinePath(1.0, -1.0), a=1.0,
                            extent=5.0, resolution=64, window=(0.0, 0.4))
    e0 = tensor_eigen(g, 0.0, 0)
    assert abs(e0.sigma_max - 0.5) < 1e-12 and abs(e0.sigma_min - 0.5) < 1e-12
    assert e0.sigma_max >= e0.sigma_min


# -- deficits and rigidity -------------------------------------------------------

def test_nsuper_deficit_trivial_at_equal_times(shrinker):
    mu = DiscreteMeasure.dirac(200, 0.2, 30)
    assert nsuper_deficit(shrinker, 0.2, 0.2, mu, mu, N=2.0) == 0.0


def test_nsuper_deficit_shrinker_fails(shrinker):
    x = shrinker.points[:, 0]
    t, s = 0.2, 0.1
    mu = DiscreteMeasure.normalized(t, np.exp(-((x - 0.0) / 0.15) ** 2))
    nu = DiscreteMeasure.normalized(t, np.exp(-((x - 2.0) / 0.15) ** 2))
    val = nsuper_deficit(shrinker, t, s, mu, nu, N=2.0)
    assert val < -1e-3


def test_nsuper_deficit_torus_translates(circle64):
    th = circle64.points[:, 0]
    prof = np.exp(-((np.angle(np.exp(1j * (th - np.pi)))) / 0.25) ** 2)
    w_mu = prof / prof.sum()
    w_nu = np.roll(w_mu, 8)
    t, s = 0.5, 0.48
    mu = DiscreteMeasure(t, w_mu)
    nu = DiscreteMeasure(t, w_nu)
    val, det = nsuper_deficit(circle64, t, s, mu, nu, N=5.0,
                              return_details=True)
    assert abs(val) <= 1e-3 * det["w2_t"]


def test_rigidity_defect_spheres(circle64, sphere400):
    assert abs(rigidity_defect(circle64)) <= 1e-3
    assert abs(rigidity_defect(sphere400)) <= 1e-2


def test_rigidity_defect_invariances(sphere400):
    base = rigidity_defect(sphere400)
    d = sphere400.dist_matrix(0.0)
    m = sphere400.mass(0.0)
    perm = np.random.default_rng(0).permutation(400)
    sp = from_tables(sphere400.points[perm], [0.0],
                     [d[np.ix_(perm, perm)]], [m[perm] * 7.5])
    assert rigidity_defect(sp) == pytest.approx(base, abs=1e-15)


def test_rigidity_defect_guards(shrinker, flat_line):
    with pytest.raises(InvalidInputError):
        rigidity_defect(shrinker)          # not static
    with pytest.raises(InvalidInputError):
        rigidity_defect(flat_line)         # diameter 10 > pi


def test_pair_floor_definition(sphere400):
    f = pair_floor(sphere400, 0.5, 3, 77)
    loc = max(sphere400.nn_of(0.5, 3), sphere400.nn_of(0.5, 77))
    assert f == (2 * loc) ** 2
