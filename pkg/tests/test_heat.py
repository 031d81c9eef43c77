import math

import numpy as np
import pytest

from rfprobe import (
    DiscreteMeasure,
    IllConditionedGeneratorError,
    InvalidInputError,
    StepControl,
    build_generator,
    check_chapman_kolmogorov,
    dual_flow,
    dual_flow_path,
    kernel,
    load_kernel_binary,
)

from conftest import nearest_index


def test_generator_invariants(ou_line):
    gen = build_generator(ou_line, 0.0)
    row_dev = max(abs(math.fsum(row)) for row in gen.Q)
    assert row_dev <= 1e-12
    off = gen.Q[~np.eye(200, dtype=bool)]
    assert off.min() >= 0.0
    assert gen.msym_dev() <= 1e-10


def test_generator_constant_in_kernel(flat_line):
    gen = build_generator(flat_line, 0.0)
    assert np.abs(gen.Q @ np.ones(200)).max() < 1e-10


def test_generator_second_derivative(flat_line):
    x = flat_line.points[:, 0]
    gen = build_generator(flat_line, 0.0)
    qu = gen.Q @ (x ** 2)
    interior = np.abs(x) < 3.0
    assert np.abs(qu[interior] - 2.0).max() < 0.05


def test_generator_weighted_drift(ou_line):
    # finite-difference oracle of the weighted operator on u = x:
    # u'' - f' u' = -x for f = x^2/2
    x = ou_line.points[:, 0]
    gen = build_generator(ou_line, 0.0)
    qu = gen.Q @ x
    interior = np.abs(x) < 3.0
    assert np.abs(qu[interior] + x[interior]).max() < 0.05


def test_generator_bandwidth_floor(flat_line):
    with pytest.raises(IllConditionedGeneratorError) as err:
        build_generator(flat_line, 0.0, eps_bw=0.5 * flat_line.spacing(0.0))
    assert err.value.suggested_minimum is not None


def test_kernel_identity_at_equal_times(flat_line):
    K = kernel(flat_line, 0.3, 0.3)
    assert np.array_equal(K.matrix, np.eye(200))


def test_kernel_markov_and_positivity(flat_line, shrinker):
    for space, t, s in [(flat_line, 0.02, 0.0), (shrinker, 0.1, 0.08)]:
        K = kernel(space, t, s)
        assert K.row_sum_dev <= 1e-9
        assert K.pre_clamp_min >= -1e-12


def test_kernel_gauss_oracle(flat_line):
    # closed-form heat kernel comparison; the 3% total-variation bound is
    # met from tau ~ 9 h^2 at the minimum bandwidth (at tau = 4h^2 exactly
    # the estimator constant gives ~5%)
    x = flat_line.points[:, 0]
    h = x[1] - x[0]
    for tau, eps in [(9 * h * h, 2 * h), (25 * h * h, None)]:
        K = kernel(flat_line, tau, 0.0, eps_bw=eps)
        i0 = 100
        gauss = np.exp(-(x[i0] - x) ** 2 / (4 * tau)) / math.sqrt(4 * math.pi * tau) * h
        tv = 0.5 * np.abs(K.matrix[i0] - gauss).sum()
        assert tv <= 0.03


def test_chapman_kolmogorov(flat_line):
    res = check_chapman_kolmogorov(flat_line, 0.0, 0.005, 0.01)
    assert res <= 1e-6
    assert check_chapman_kolmogorov(flat_line, 0.0, 0.0, 0.01) == 0.0
    assert check_chapman_kolmogorov(flat_line, 0.0, 0.01, 0.01) == 0.0


def test_dual_flow_identity_and_conservation(flat_line):
    mu = DiscreteMeasure.dirac(200, 0.5, 7)
    out = dual_flow(flat_line, 0.5, 0.5, mu)
    assert np.array_equal(out.w, mu.w)
    out = dual_flow(flat_line, 0.5, 0.49, mu)
    assert abs(out.w.sum() - 1.0) < 1e-12
    assert out.conservation_dev <= 1e-9


def test_dual_flow_flat_moments(flat_line):
    x = flat_line.points[:, 0]
    i0 = nearest_index(flat_line, 0.0)
    tau = 0.01
    out = dual_flow(flat_line, 0.5, 0.5 - tau, DiscreteMeasure.dirac(200, 0.5, i0))
    mean = float(out.w @ x)
    var = float(out.w @ x ** 2) - mean ** 2
    assert abs(mean - x[i0]) < 1e-9
    assert abs(var - 2 * tau) <= 0.05 * 2 * tau


def test_dual_flow_ou_mean_decay(ou_line):
    x = ou_line.points[:, 0]
    i0 = nearest_index(ou_line, 1.0)
    taus = [0.02, 0.01, 0.005]
    outs = dual_flow_path(ou_line, 0.5, [0.5 - h for h in taus],
                          DiscreteMeasure.dirac(200, 0.5, i0))
    for tau, res in zip(taus, outs):
        mean = float(res.w @ x)
        assert abs(mean - x[i0] * math.exp(-tau)) < 5e-4


def test_kernel_static_mass_symmetry(ou_line):
    K = kernel(ou_line, 0.01, 0.0)
    m = ou_line.mass(0.0)
    mk = m[:, None] * K.matrix
    assert np.abs(mk - mk.T).max() / np.abs(mk).max() < 1e-6


def test_kernel_gaussian_tail_bound(flat_line, shrinker):
    for space, t, s in [(flat_line, 0.01, 0.0), (shrinker, 0.12, 0.1)]:
        K = kernel(space, t, s)
        i0 = space.n_points // 2
        d = space.dist_matrix(t)[i0]
        tails = [K.matrix[i0][d > k * math.sqrt(t - s)].sum() for k in (1, 2, 3, 4)]
        assert all(a >= b - 1e-15 for a, b in zip(tails, tails[1:]))
        assert tails[-1] < 0.1


def test_kernel_requires_order(flat_line):
    with pytest.raises(InvalidInputError):
        kernel(flat_line, 0.0, 0.01)


def test_kernel_deterministic(flat_line):
    a = kernel(flat_line, 0.01, 0.0, step_ctrl=StepControl())
    b = kernel(flat_line, 0.01, 0.0, step_ctrl=StepControl())
    assert np.array_equal(a.matrix, b.matrix)


def test_kernel_dump_roundtrip(tmp_path, flat_line):
    K = kernel(flat_line, 0.01, 0.0)
    path = tmp_path / "k.rfpk"
    K.dump_binary(str(path))
    raw = path.read_bytes()
    assert raw[:4] == b"RFPK"
    assert len(raw) == 32 + 8 * 200 * 200
    back = load_kernel_binary(str(path))
    assert back.s == K.s and back.t == K.t and back.n == 200
    assert np.array_equal(back.matrix, K.matrix)
    jpath = tmp_path / "k.json"
    K.dump_json(str(jpath))
    assert jpath.exists()


def test_dual_flow_time_label_guard(flat_line):
    mu = DiscreteMeasure.dirac(200, 0.3, 0)
    with pytest.raises(InvalidInputError):
        dual_flow(flat_line, 0.5, 0.4, mu)
