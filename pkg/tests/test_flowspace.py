import json

import numpy as np
import pytest
from scipy.spatial.distance import cdist

from rfprobe import (
    AffinePath,
    ExcludedPairError,
    InvalidSpecError,
    MetricAxiomError,
    SchemaError,
    UnsupportedOperationError,
    analytic_tensor,
    build_cone,
    build_from_spec,
    build_gaussian_flow,
    build_sphere_flow,
    build_suspension,
    from_tables,
    load_custom,
)

from conftest import nearest_index


# -- gaussian flows ----------------------------------------------------------

def test_gaussian_metric_and_mass(shrinker):
    t = 0.1
    x = shrinker.points
    d = shrinker.dist_matrix(t)
    expected = cdist(x * np.sqrt(1 - 2 * t), x * np.sqrt(1 - 2 * t))
    assert np.abs(d - expected).max() < 1e-12
    m = shrinker.mass(t)
    h = x[1, 0] - x[0, 0]
    f = 0.5 * x[:, 0] ** 2
    expected_m = np.exp(-f) * np.sqrt(1 - 2 * t) * h
    assert np.abs(m - expected_m).max() < 1e-15


def test_gaussian_tensor_shrinker_is_zero(shrinker):
    for t in (0.05, 0.1, 0.3):
        assert abs(shrinker.tensor(t, 0, [1.0])) < 1e-14


def test_gaussian_tensor_static_cases(flat_line, ou_line):
    assert flat_line.tensor(0.2, 0, [1.0]) == 0.0
    assert ou_line.tensor(0.2, 5, [1.0]) == 1.0


def test_gaussian_tensor_dimensional_correction():
    # grid through x = 1 exactly: 201 points on [-5, 5]
    sp = build_gaussian_flow(n=1, A=1.0, a=1.0, extent=5.0, resolution=201)
    i = nearest_index(sp, 1.0)
    assert abs(sp.points[i, 0] - 1.0) < 1e-12
    val = analytic_tensor(sp, 0.0, i, [1.0], N=2.0)
    assert abs(val - 0.0) < 1e-12
    # N = inf default recovers the unweighted-dimension value
    assert analytic_tensor(sp, 0.0, i, [1.0]) == 1.0


def test_gaussian_tensor_finite_difference(shrinker):
    # (g_{t+h} - g_{t-h})(v,v)/(4 h g_t(v,v)) + Ric_f term, h -> 0
    t, h = 0.1, 1e-5
    v = np.array([1.0])
    x = shrinker.points[3]
    g = lambda s: (1 - 2 * s) * v @ v
    fd = (g(t + h) - g(t - h)) / (4 * h * g(t))
    ric_f = 1.0 / g(t)  # Hess f = a = 1 against the metric
    assert abs(shrinker.tensor(t, x, v) - (fd + ric_f)) < 1e-6


def test_gaussian_invalid_specs():
    with pytest.raises(InvalidSpecError):
        build_gaussian_flow(n=1, A=-1.0, resolution=32)
    with pytest.raises(InvalidSpecError):
        build_gaussian_flow(n=1, A=1.0, resolution=8)
    with pytest.raises(InvalidSpecError):
        build_gaussian_flow(n=1, A=AffinePath(1.0, -2.0), resolution=32,
                            window=(0.0, 0.6))


def test_gaussian_log_lipschitz_declared(shrinker):
    # |log d_t - log d_s| <= L|t-s| on sampled slices
    d1 = shrinker.dist_matrix(0.05)
    d2 = shrinker.dist_matrix(0.35)
    mask = ~np.eye(d1.shape[0], dtype=bool)
    dev = np.abs(np.log(d1[mask]) - np.log(d2[mask])).max()
    assert dev <= shrinker.log_lipschitz * 0.3 + 1e-9


# -- spheres ------------------------------------------------------------------

def test_sphere_tensor_values(sphere400, shrink_sphere, circle64):
    assert abs(sphere400.tensor(0.3, 0, [1.0, 0, 0]) - 1.0) < 1e-14
    for t in (0.05, 0.2, 0.35):
        assert abs(shrink_sphere.tensor(t, 0, [1, 0, 0])) < 1e-14
    assert abs(circle64.tensor(0.1, 0, [1.0])) < 1e-14


def test_sphere_geodesic_constant_speed(sphere400):
    d = sphere400.dist(0.0, 3, 77)
    for a, b in [(0.0, 0.25), (0.25, 0.75), (0.5, 1.0), (0.0, 1.0)]:
        pa = sphere400.geodesic_point(0.0, 3, 77, a)
        pb = sphere400.geodesic_point(0.0, 3, 77, b)
        seg = np.arccos(np.clip(pa @ pb, -1, 1))
        assert abs(seg - (b - a) * d) < 1e-9


def test_sphere_scaling(shrink_sphere, sphere400):
    t = 0.2
    ratio = shrink_sphere.dist_matrix(t) / np.maximum(sphere400.dist_matrix(0.0), 1e-30)
    off = ~np.eye(400, dtype=bool)
    assert np.abs(ratio[off] - np.sqrt(1 - 2 * t)).max() < 1e-9
    assert np.abs(shrink_sphere.mass(t) / sphere400.mass(0.0) - (1 - 2 * t)).max() < 1e-12


def test_sphere_fibonacci_deterministic():
    a = build_sphere_flow(n=2, lam=1.0, count=256)
    b = build_sphere_flow(n=2, lam=1.0, count=256)
    assert np.array_equal(a.points, b.points)


def test_sphere_invalid():
    with pytest.raises(InvalidSpecError):
        build_sphere_flow(n=3, count=300)
    with pytest.raises(InvalidSpecError):
        build_sphere_flow(n=2, count=100)
    with pytest.raises(InvalidSpecError):
        build_sphere_flow(n=2, lam=AffinePath(1.0, -4.0), count=256,
                          window=(0.0, 0.5))


# -- cones --------------------------------------------------------------------

def test_cone_beta1_is_plane(cone_flat):
    pts = cone_flat.points
    xy = np.stack([pts[:, 0] * np.cos(pts[:, 1]),
                   pts[:, 0] * np.sin(pts[:, 1])], axis=1)
    assert np.abs(cone_flat.dist_matrix(0.0) - cdist(xy, xy)).max() < 1e-12


def test_cone_apex_radial(cone_half):
    for p in (1, 40, 100):
        assert abs(cone_half.dist(0.0, 0, p) - cone_half.points[p, 0]) < 1e-12


def test_cone_angle_cap_through_apex():
    # beta = 2: opposite rays exceed the developed half-turn, so the
    # geodesic passes the apex and the distance is the sum of radii
    c = build_cone(beta=2.0, r_max=1.0, count=200)
    pts = c.points
    ring = sorted(set(np.round(pts[1:, 0], 9)))[-1]
    members = [i for i in range(1, c.n_points) if abs(pts[i, 0] - ring) < 1e-9]
    i = members[0]
    j = min(members[1:], key=lambda k: abs(abs(pts[k, 1] - pts[i, 1]) - np.pi))
    assert abs(c.dist(0.0, i, j) - (pts[i, 0] + pts[j, 0])) < 1e-9
    with pytest.raises(ExcludedPairError):
        c.geodesic_point(0.0, i, j, 0.5)


def test_cone_geodesic_unroll(cone_flat):
    pts = cone_flat.points
    i, j = 40, 60
    mid = cone_flat.geodesic_point(0.0, i, j, 0.5)
    z = lambda rp: np.array([rp[0] * np.cos(rp[1]), rp[0] * np.sin(rp[1])])
    expected = 0.5 * (z(pts[i]) + z(pts[j]))
    assert np.abs(z(mid) - expected).max() < 1e-9


def test_cone_invalid():
    with pytest.raises(InvalidSpecError):
        build_cone(beta=0.0)


def test_cone_mass_total(cone_half):
    # total area of the beta-cone disk: pi * beta * r_max^2
    assert abs(cone_half.mass(0.0).sum() - np.pi * 0.5 * 4.0) < 1e-9


# -- suspensions --------------------------------------------------------------

def test_suspension_matches_round_sphere(suspension_s1):
    s_of = suspension_s1.meta["s_of"]
    b_of = suspension_s1.meta["b_of"]
    theta = np.linspace(0, 2 * np.pi, 50, endpoint=False)
    emb = np.stack([np.sin(s_of) * np.cos(theta[b_of]),
                    np.sin(s_of) * np.sin(theta[b_of]),
                    np.cos(s_of)], axis=1)
    emb[0] = [0, 0, 1.0]
    emb[1] = [0, 0, -1.0]
    ang = np.arccos(np.clip(emb @ emb.T, -1, 1))
    t = 0.15
    scale = np.sqrt(1 - 2 * t)
    assert np.abs(suspension_s1.dist_matrix(t) - scale * ang).max() < 1e-7


def test_suspension_poles_and_equator(suspension_s1):
    t0 = 0.0
    assert abs(suspension_s1.dist(t0, 0, 1) - np.pi) < 1e-12
    s_of = suspension_s1.meta["s_of"]
    b_of = suspension_s1.meta["b_of"]
    eq = np.flatnonzero(np.abs(s_of - np.pi / 2) < 1e-9)
    if len(eq) >= 2:
        i, j = int(eq[0]), int(eq[1])
        base_d = 2 * np.pi / 50 * min(abs(b_of[i] - b_of[j]),
                                      50 - abs(b_of[i] - b_of[j]))
        assert abs(suspension_s1.dist(t0, i, j) - min(base_d, np.pi)) < 1e-9


def test_suspension_scaling_window(suspension_s1):
    lo, hi = suspension_s1.time_window
    assert lo == 0.0 and abs(hi - 0.4) < 1e-12
    m0 = suspension_s1.mass(0.0)
    m_t = suspension_s1.mass(0.2)
    assert np.abs(m_t / m0 - (1 - 2 * 0.2) ** 1.0).max() < 1e-12


def test_suspension_base_diameter_guard():
    pts = [[0.0], [1.0], [2.0]]
    dist = [[[0, 2, 4], [2, 0, 2], [4, 2, 0]]]
    base = from_tables(pts, [0.0], dist, [[1.0, 1.0, 1.0]])
    with pytest.raises(InvalidSpecError):
        build_suspension(base, N=1)


# -- custom spaces -------------------------------------------------------------

def test_custom_roundtrip_and_interpolation():
    pts = [[0.0], [1.0], [2.0]]
    d0 = [[0, 1, 2], [1, 0, 1], [2, 1, 0]]
    d1 = [[0, 2, 4], [2, 0, 2], [4, 2, 0]]
    sp = from_tables(pts, [0.0, 1.0], [d0, d1], [[1, 1, 1], [2, 2, 2]],
                     log_lipschitz=np.log(2.0) + 1e-9)
    assert sp.kind == "custom" and not sp.static
    assert abs(sp.dist(0.5, 0, 1) - 1.5) < 1e-12
    assert abs(sp.mass(0.25)[0] - 1.25) < 1e-12


def test_custom_triangle_violation_names_triple():
    pts = [[0.0], [1.0], [2.0]]
    bad = [[[0, 1, 5], [1, 0, 1], [5, 1, 0]]]
    with pytest.raises(MetricAxiomError) as err:
        from_tables(pts, [0.0], bad, [[1, 1, 1]])
    assert err.value.triple is not None


def test_custom_schema_errors(tmp_path):
    spec = {"kind": "custom", "points": [[0.0], [1.0]], "times": [0.0],
            "dist": [[[0, 1], [1, 0]]]}
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(spec))
    with pytest.raises(SchemaError) as err:
        load_custom(str(path))
    assert err.value.path == "mass"


def test_model_spec_file_roundtrip(tmp_path):
    spec = {"kind": "sphere", "params": {"n": 2, "lam": "static", "count": 256}}
    path = tmp_path / "s2.json"
    path.write_text(json.dumps(spec))
    sp = load_custom(str(path))
    assert sp.kind == "sphere" and sp.n_points == 256


def test_build_from_spec_unknown_kind():
    with pytest.raises(SchemaError):
        build_from_spec({"kind": "torus"})


def test_custom_has_no_geodesic_or_tensor():
    sp = from_tables([[0.0], [1.0]], [0.0], [[[0, 1], [1, 0]]], [[1, 1]])
    with pytest.raises(UnsupportedOperationError):
        sp.geodesic_point(0.0, 0, 1, 0.5)
    with pytest.raises(UnsupportedOperationError):
        sp.tensor(0.0, 0, [1.0])


def test_metric_axioms_randomized_large():
    # product-style table above the exhaustive cutoff exercises the
    # randomized triple check
    rng = np.random.default_rng(0)
    pts = rng.normal(size=(320, 3))
    d = cdist(pts, pts)
    sp = from_tables(pts, [0.0], [d], [np.ones(320)])
    assert sp.validate(seed=1)
