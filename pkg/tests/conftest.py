import numpy as np
import pytest

from rfprobe import (
    AffinePath,
    build_cone,
    build_gaussian_flow,
    build_sphere_flow,
    build_suspension,
)


@pytest.fixture(scope="session")
def flat_line():
    return build_gaussian_flow(n=1, A=1.0, a=0.0, extent=5.0, resolution=200)


@pytest.fixture(scope="session")
def ou_line():
    # static Gaussian weight: the Ornstein-Uhlenbeck test bench
    return build_gaussian_flow(n=1, A=1.0, a=1.0, extent=5.0, resolution=200)


@pytest.fixture(scope="session")
def ou_line_fine():
    return build_gaussian_flow(n=1, A=1.0, a=1.0, extent=5.0, resolution=400)


@pytest.fixture(scope="session")
def shrinker():
    return build_gaussian_flow(n=1, A=AffinePath(1.0, -2.0), a=1.0,
                               extent=5.0, resolution=200, window=(0.0, 0.4))


@pytest.fixture(scope="session")
def sphere400():
    return build_sphere_flow(n=2, lam=1.0, count=400)


@pytest.fixture(scope="session")
def shrink_sphere():
    return build_sphere_flow(n=2, lam=AffinePath(1.0, -2.0), count=400,
                             window=(0.0, 0.4))


@pytest.fixture(scope="session")
def circle64():
    return build_sphere_flow(n=1, lam=1.0, count=64)


@pytest.fixture(scope="session")
def cone_half():
    return build_cone(beta=0.5, r_max=2.0, count=300)


@pytest.fixture(scope="session")
def cone_flat():
    return build_cone(beta=1.0, r_max=2.0, count=300)


@pytest.fixture(scope="session")
def suspension_s1():
    base = build_sphere_flow(n=1, lam=1.0, count=50)
    return build_suspension(base, N=1, time_scaling=True, s_count=12)


def nearest_index(space, value):
    return int(np.argmin(np.abs(space.points[:, 0] - value)))
