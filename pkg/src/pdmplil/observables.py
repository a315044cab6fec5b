"""Bounded Lipschitz observables on the hybrid space."""
from __future__ import annotations

import numpy as np

from .errors import ConfigError


class Observable:
    """A bounded Lipschitz map ``g(y, i)`` with declared range and constant.

    ``affine`` optionally holds per-flow coefficients ``(a, b)`` with
    ``g(y, i) = a[i-1] + b[i-1] . y``; flows that know closed forms use it
    for exact segment integrals.
    """

    def __init__(self, name, fn, low, high, lipschitz, affine=None):
        self.name = name
        self.fn = fn
        self.low, self.high = float(low), float(high)
        self.lipschitz = float(lipschitz)
        self.affine = affine

    def __call__(self, y, i):
        y = np.atleast_2d(y)
        return np.broadcast_to(self.fn(y, np.atleast_1d(i)), (len(y),)).astype(float)

    @property
    def sup_norm(self):
        return max(abs(self.low), abs(self.high))

    @property
    def bl_norm(self):
        return max(self.sup_norm, self.lipschitz)

    @property
    def is_zero(self):
        return self.low == 0.0 and self.high == 0.0

    def shift(self, center, name=None):
        """``g - center``."""
        center = float(center)
        fn = self.fn
        aff = None
        if self.affine is not None:
            aff = (self.affine[0] - center, self.affine[1])
        return Observable(name or f"{self.name}-c", lambda y, i: fn(y, i) - center,
                          self.low - center, self.high - center, self.lipschitz, aff)

    def scale(self, k, name=None):
        k = float(k)
        fn = self.fn
        aff = None if self.affine is None else (k * self.affine[0], k * self.affine[1])
        lo, hi = sorted((k * self.low, k * self.high))
        return Observable(name or f"{k:g}*{self.name}", lambda y, i: k * fn(y, i),
                          lo, hi, abs(k) * self.lipschitz, aff)

    def __repr__(self):
        return f"Observable({self.name!r})"


def _affine(m, dim, a=0.0, b0=0.0):
    a = np.full(m, float(a)) if np.isscalar(a) else np.asarray(a, dtype=float)
    b = np.zeros((m, dim))
    b[:, 0] = b0
    return a, b


def make_observable(name, model):
    """Built-in observables addressable by name: ``y``, ``const``, ``zero``,
    ``index``, ``cos_y``, ``tanh_y``."""
    m, dim = model.num_flows, model.dim
    lo, hi = float(model.state_low[0]), float(model.state_high[0])
    c = model.constants.c
    if name == "y":
        return Observable("y", lambda y, i: y[:, 0], lo, hi, 1.0, _affine(m, dim, 0.0, 1.0))
    if name == "const":
        return Observable("const", lambda y, i: np.ones(len(y)), 1.0, 1.0, 0.0,
                          _affine(m, dim, 1.0))
    if name == "zero":
        return Observable("zero", lambda y, i: np.zeros(len(y)), 0.0, 0.0, 0.0,
                          _affine(m, dim, 0.0))
    if name == "index":
        a = np.zeros(m)
        a[0] = 1.0
        return Observable("index", lambda y, i: (i == 1).astype(float), 0.0, 1.0, 1.0 / c,
                          _affine(m, dim, a))
    if name == "cos_y":
        return Observable("cos_y", lambda y, i: np.cos(y[:, 0]), -1.0, 1.0, 1.0)
    if name == "tanh_y":
        return Observable("tanh_y", lambda y, i: np.tanh(y[:, 0] - 1.0), -1.0, 1.0, 1.0)
    raise ConfigError(f"unknown observable {name!r}")


OBSERVABLE_NAMES = ("y", "const", "zero", "index", "cos_y", "tanh_y")
