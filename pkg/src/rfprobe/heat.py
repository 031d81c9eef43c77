"""Time-dependent weighted-graph heat generators and propagator kernels.

The generator is a Gaussian-kernel graph Laplacian with a density
normalization (the sqrt-weighted variant) so that the discrete operator
approximates the weighted Laplacian of the mass-carrying metric measure
space rather than the doubled-drift operator a plain mass weighting would
give. Kernels are produced by integrating the forward equation with an
embedded Dormand-Prince 5(4) pair under a spectral step cap; the matrices
are stochastic rows of transported cell masses.
"""

from __future__ import annotations

import json
import struct
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    IllConditionedGeneratorError,
    IntegrationFailureError,
    InvalidInputError,
)
from .transport import DiscreteMeasure

ROW_SUM_TOL = 1e-9
NEGATIVITY_TOL = 1e-12
CACHE_LEVEL = 8  # dyadic time-grid resolution for generator interpolation

_KERNEL_MAGIC = b"RFPK"
_KERNEL_VERSION = 1


@dataclass
class StepControl:
    """Adaptive step parameters; identical values give identical kernels."""

    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    safety: float = 0.9
    max_steps: int = 200_000


DEFAULT_STEP_CTRL = StepControl()


@dataclass
class Generator:
    """Rate-matrix discretization of the weighted Laplacian at one time."""

    t: float
    eps_bw: float
    Q: np.ndarray
    mass: np.ndarray

    def row_sum_dev(self):
        return float(np.abs([np.sum(row) for row in self.Q]).max())

    def msym_dev(self):
        mq = self.mass[:, None] * self.Q
        scale = np.abs(mq).max()
        return float(np.abs(mq - mq.T).max() / (scale if scale else 1.0))


def default_bandwidth(space, t):
    """3x the median nearest-neighbour spacing at time t."""
    return 3.0 * space.spacing(t)


def build_generator(space, t, eps_bw=None) -> Generator:
    """Kernel-weighted graph Laplacian approximating the weighted Laplacian.

    Raises IllConditionedGeneratorError when the bandwidth is below twice
    the local sample spacing.
    """
    t = space.check_time(t)
    spacing = space.spacing(t)
    if eps_bw is None:
        eps_bw = 3.0 * spacing
    if eps_bw < 2.0 * spacing:
        raise IllConditionedGeneratorError(
            f"bandwidth {eps_bw:.4g} below resolution at t={t}",
            suggested_minimum=2.0 * spacing)
    d = space.dist_matrix(t)
    m = space.mass(t)
    k = np.exp(-(d / eps_bw) ** 2)
    q = k @ m
    ktil = k / np.sqrt(np.outer(q, q))
    w = ktil * m[None, :]
    rate = (4.0 / eps_bw ** 2) * (w / w.sum(axis=1, keepdims=True))
    Q = 0.5 * (rate + (m[None, :] / m[:, None]) * rate.T)
    np.fill_diagonal(Q, 0.0)
    np.fill_diagonal(Q, -Q.sum(axis=1))
    # compensate residual row sums twice; keeps |row sum| at float noise
    for _ in range(2):
        rs = Q.sum(axis=1)
        Q[np.diag_indices_from(Q)] -= rs
    return Generator(t=t, eps_bw=float(eps_bw), Q=Q, mass=m)


class _GenCache:
    """Dyadic-grid generator cache with linear interpolation in t.

    Reads are lock-free once a node is present; fills are exclusive per key.
    """

    def __init__(self, space, eps_bw):
        self.space = space
        self.eps_bw = eps_bw
        self.lock = threading.Lock()
        lo, hi = space.time_window
        self.lo, self.hi = lo, hi
        self.nodes = {}
        self.n_grid = 1 if space.static else 2 ** CACHE_LEVEL

    def _node(self, k):
        got = self.nodes.get(k)
        if got is not None:
            return got
        with self.lock:
            got = self.nodes.get(k)
            if got is None:
                if self.space.static:
                    t = self.lo
                else:
                    t = self.lo + (self.hi - self.lo) * k / self.n_grid
                got = build_generator(self.space, t, self.eps_bw).Q
                self.nodes[k] = got
        return got

    def q_at(self, r):
        if self.space.static:
            return self._node(0)
        frac = (r - self.lo) / (self.hi - self.lo) * self.n_grid
        k = int(np.clip(np.floor(frac), 0, self.n_grid - 1))
        w = frac - k
        q0 = self._node(k)
        if w <= 1e-12:
            return q0
        return (1.0 - w) * q0 + w * self._node(k + 1)


def _get_cache(space, eps_bw) -> _GenCache:
    key = ("gencache", round(float(eps_bw), 12))
    cache = space.gen_cache.get(key)
    if cache is None:
        with space._cache_lock:
            cache = space.gen_cache.get(key)
            if cache is None:
                cache = _GenCache(space, float(eps_bw))
                space.gen_cache[key] = cache
    return cache


# -- Dormand-Prince 5(4) ----------------------------------------------------

_DP_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_DP_A = [
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
_DP_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_DP_ERR = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920,
                    -17253 / 339200, 22 / 525, -1 / 40])


def _rk45_segment(f, y, x0, x1, ctrl: StepControl, h_max, counter):
    """Integrate y' = f(x, y) over [x0, x1]; lands exactly on x1."""
    span = x1 - x0
    if span <= 0.0:
        return y
    x = x0
    h = min(h_max, span)
    k0 = f(x, y)
    while x < x1 - 1e-15 * max(1.0, abs(x1)):
        h = min(h, x1 - x)
        ks = [k0]
        for i, arow in enumerate(_DP_A):
            yi = y + h * sum(a * k for a, k in zip(arow, ks))
            ks.append(f(x + _DP_C[i + 1] * h, yi))
        y5 = y + h * sum(b * k for b, k in zip(_DP_B5, ks) if b != 0.0)
        err = h * sum(e * k for e, k in zip(_DP_ERR, ks) if e != 0.0)
        scale = ctrl.abs_tol + ctrl.rel_tol * np.maximum(np.abs(y), np.abs(y5))
        enorm = float(np.max(np.abs(err) / scale))
        counter["steps"] += 1
        if counter["steps"] > ctrl.max_steps:
            raise IntegrationFailureError(
                "step limit exceeded",
                diagnostics={"x": x, "h": h, "err_norm": enorm})
        if enorm <= 1.0:
            x += h
            y = y5
            k0 = ks[-1]  # FSAL
            grow = ctrl.safety * (enorm ** -0.2 if enorm > 0.0 else 5.0)
            h = min(h_max, h * min(5.0, max(0.2, grow)))
        else:
            h *= max(0.2, ctrl.safety * enorm ** -0.2)
            if h < 1e-15 * max(1.0, abs(span)):
                raise IntegrationFailureError(
                    "step size underflow",
                    diagnostics={"x": x, "err_norm": enorm})
    return y


def _integrate(f, y0, x0, checkpoints, ctrl, h_max):
    """Values of the solution at each checkpoint (ascending, >= x0)."""
    counter = {"steps": 0}
    out = []
    y, x = y0, x0
    for cp in checkpoints:
        y = _rk45_segment(f, y, x, cp, ctrl, h_max, counter)
        x = cp
        out.append(y.copy())
    return out


@dataclass
class PropagatorKernel:
    """Stochastic kernel matrix: row i = cell masses transported from i."""

    s: float
    t: float
    eps_bw: float
    matrix: np.ndarray
    pre_clamp_min: float
    row_sum_dev: float
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.matrix.shape[0]

    def row_measure(self, i) -> DiscreteMeasure:
        return DiscreteMeasure.normalized(self.s, self.matrix[i])

    def dual(self, weights):
        return np.asarray(weights, dtype=float) @ self.matrix

    def dump_binary(self, path):
        header = _KERNEL_MAGIC + struct.pack(
            "<II", _KERNEL_VERSION, self.n) + struct.pack("<dd", self.s, self.t)
        header += b"\x00" * (32 - len(header))
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.matrix.astype("<f8").tobytes(order="C"))

    def dump_json(self, path):
        payload = {"s": self.s, "t": self.t, "n": self.n,
                   "eps_bw": self.eps_bw,
                   "matrix": [[float(v) for v in row] for row in self.matrix]}
        with open(path, "w") as fh:
            json.dump(payload, fh)


def load_kernel_binary(path) -> PropagatorKernel:
    with open(path, "rb") as fh:
        header = fh.read(32)
        if header[:4] != _KERNEL_MAGIC:
            raise InvalidInputError("not a kernel dump (bad magic)")
        version, n = struct.unpack("<II", header[4:12])
        s, t = struct.unpack("<dd", header[12:28])
        data = np.frombuffer(fh.read(8 * n * n), dtype="<f8").reshape(n, n)
    return PropagatorKernel(s=s, t=t, eps_bw=0.0, matrix=data.copy(),
                            pre_clamp_min=0.0, row_sum_dev=0.0,
                            meta={"version": version})


def kernel(space, t, s, eps_bw=None, step_ctrl=None) -> PropagatorKernel:
    """Propagator p_{t,s} acting on the identity initial condition."""
    t = space.check_time(t)
    s = space.check_time(s)
    if s > t:
        raise InvalidInputError("kernel requires s <= t")
    if eps_bw is None:
        eps_bw = default_bandwidth(space, t)
    ctrl = step_ctrl or DEFAULT_STEP_CTRL
    n = space.n_points
    if s == t:
        return PropagatorKernel(s=s, t=t, eps_bw=float(eps_bw),
                                matrix=np.eye(n), pre_clamp_min=0.0,
                                row_sum_dev=0.0)
    cache = _get_cache(space, eps_bw)
    h_max = 1.0 / max(np.abs(np.diag(cache.q_at(s))).max(), 1e-30)

    def f(r, u):
        return cache.q_at(r) @ u

    mat = _integrate(f, np.eye(n), s, [t], ctrl, h_max)[0]
    pre_min = float(mat.min())
    if pre_min < -1e-7:
        raise IntegrationFailureError(
            f"kernel entries dropped to {pre_min:.3g}; integration unstable",
            diagnostics={"s": s, "t": t, "eps_bw": eps_bw})
    mat = np.maximum(mat, 0.0)
    dev = float(np.abs(mat.sum(axis=1) - 1.0).max())
    return PropagatorKernel(s=s, t=t, eps_bw=float(eps_bw), matrix=mat,
                            pre_clamp_min=pre_min, row_sum_dev=dev)


def dual_flow_path(space, t, s_list, mu: DiscreteMeasure, eps_bw=None,
                   step_ctrl=None):
    """Dual heat flow of mu from time t to each s in s_list (one sweep).

    Returns measures ordered like s_list; duplicate and s = t entries are
    handled in place. Weight vectors are clamped and renormalized with the
    conservation deviation recorded on the measure object.
    """
    t = space.check_time(t)
    if abs(mu.t - t) > 1e-12:
        raise InvalidInputError("measure time label must match t")
    s_arr = [space.check_time(s) for s in s_list]
    if any(s > t for s in s_arr):
        raise InvalidInputError("dual flow runs backward: s <= t required")
    if eps_bw is None:
        eps_bw = default_bandwidth(space, t)
    ctrl = step_ctrl or DEFAULT_STEP_CTRL
    cache = _get_cache(space, eps_bw)
    h_max = 1.0 / max(np.abs(np.diag(cache.q_at(t))).max(), 1e-30)

    # dv/ds = -Q_s^T v; in sigma = t - s, dv/dsigma = Q^T v
    def fT(sigma, v):
        return cache.q_at(t - sigma).T @ v

    order = np.argsort([t - s for s in s_arr], kind="stable")
    sigmas, uniq = [], {}
    for idx in order:
        sig = t - s_arr[idx]
        if not sigmas or sig > sigmas[-1] + 1e-15:
            sigmas.append(sig)
        uniq.setdefault(round(sig, 15), []).append(idx)
    vals = _integrate(fT, mu.w.copy(), 0.0, sigmas, ctrl, h_max)
    out = [None] * len(s_arr)
    for sig, v in zip(sigmas, vals):
        total = float(v.sum())
        meas = DiscreteMeasure.normalized(t - sig, np.maximum(v, 0.0))
        object.__setattr__(meas, "conservation_dev", abs(total - 1.0))
        object.__setattr__(meas, "pre_clamp_min", float(v.min()))
        for idx in uniq[round(sig, 15)]:
            out[idx] = meas
    return out


def dual_flow(space, t, s, mu: DiscreteMeasure, eps_bw=None,
              step_ctrl=None) -> DiscreteMeasure:
    """P-hat_{t,s} mu: the measure-level dual of the heat propagator."""
    return dual_flow_path(space, t, [s], mu, eps_bw, step_ctrl)[0]


def check_chapman_kolmogorov(space, r, s, t, eps_bw=None, step_ctrl=None):
    """Max-entry residual of p_{t,r} against the composition through s.

    All three kernels must share one bandwidth (hence one generator
    family), otherwise the residual measures the bandwidth difference
    instead of the propagator property.
    """
    if not (r <= s <= t):
        raise InvalidInputError("need r <= s <= t")
    if eps_bw is None:
        eps_bw = default_bandwidth(space, t)
    k_tr = kernel(space, t, r, eps_bw, step_ctrl)
    k_ts = kernel(space, t, s, eps_bw, step_ctrl)
    k_sr = kernel(space, s, r, eps_bw, step_ctrl)
    return float(np.abs(k_tr.matrix - k_ts.matrix @ k_sr.matrix).max())
