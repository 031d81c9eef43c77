"""Time-coefficient paths for model flows.

Model-flow coefficients (A_t, a_t, b_t, c_t, lambda_t) are affine in t so
their time derivatives are exact. Arbitrary callables are accepted too,
with an optional explicit derivative (central differences otherwise).
"""

from __future__ import annotations

import numpy as np


class Path:
    """Evaluable coefficient path with an exact or numeric derivative."""

    def at(self, t):
        raise NotImplementedError

    def dot(self, t):
        raise NotImplementedError


class AffinePath(Path):
    def __init__(self, const, slope=None):
        self.const = np.asarray(const, dtype=float)
        if slope is None:
            slope = np.zeros_like(self.const)
        self.slope = np.asarray(slope, dtype=float)
        if self.slope.shape != self.const.shape:
            raise ValueError("const and slope shapes differ")

    def at(self, t):
        return self.const + t * self.slope

    def dot(self, t):
        return self.slope

    def __repr__(self):
        return f"AffinePath(const={self.const!r}, slope={self.slope!r})"


class CallablePath(Path):
    def __init__(self, fn, dfn=None, fd_step=1e-6):
        self.fn = fn
        self.dfn = dfn
        self.fd_step = fd_step

    def at(self, t):
        return np.asarray(self.fn(t), dtype=float)

    def dot(self, t):
        if self.dfn is not None:
            return np.asarray(self.dfn(t), dtype=float)
        h = self.fd_step
        return (self.at(t + h) - self.at(t - h)) / (2.0 * h)


def as_path(value) -> Path:
    """Coerce scalars, arrays, (const, slope) pairs, dicts and callables."""
    if isinstance(value, Path):
        return value
    if callable(value):
        return CallablePath(value)
    if isinstance(value, dict):
        return AffinePath(value.get("const", 0.0), value.get("slope"))
    if isinstance(value, tuple) and len(value) == 2 and not np.isscalar(value[0]):
        return AffinePath(value[0], value[1])
    if isinstance(value, tuple) and len(value) == 2:
        return AffinePath(value[0], value[1])
    return AffinePath(value)
