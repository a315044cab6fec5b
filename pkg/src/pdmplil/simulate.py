"""Exact event-driven simulation of the post-jump chain and its interpolation.

Between jumps the process follows a closed-form flow, so nothing here
time-steps: the chain is advanced jump by jump and time integrals are taken
segment by segment.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from . import quadrature
from .errors import BeyondHorizon, PreconditionError
from .model import HybridState
from .sampler import SeedStream, _rng, draw_switch

QUAD_TOL = 1e-10


def advance(model, y, i, stream, dt=None, check=True):
    """Advance a batch of states by one jump.

    Returns ``(y_new, i_new, dt)``. Inter-jump times and noise are drawn
    before, and independently of, the state-dependent draws.
    """
    rng = _rng(stream)
    n = len(y)
    if dt is None:
        dt = rng.exponential(1.0 / model.jump_rate, size=n)
    h = model.noise.sample(rng, n, model.dim)
    pre = model.flow(dt, y, i)
    theta = model.density.sample(rng, pre)
    y_new = model.jump_map(theta, pre) + h
    if check:
        model.require_inside(y_new)
    i_new = draw_switch(rng, model, i, y_new)
    return y_new, i_new, dt


def step(model, x: HybridState, stream, dt=None):
    """One draw from the transition law Pi started at ``x``."""
    y, i, dts = advance(model, x.y[None, :], np.array([x.i]), stream,
                        None if dt is None else np.array([float(dt)]))
    return HybridState(y[0], int(i[0])), float(dts[0])


@dataclass
class EmbeddedPath:
    """Post-jump states ``X_0..X_n`` and inter-jump times ``dtau_0 = 0, dtau_1..``."""

    y: np.ndarray
    i: np.ndarray
    dtau: np.ndarray
    seed: tuple | None = field(default=None, compare=False)

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        self.i = np.asarray(self.i, dtype=np.int64)
        self.dtau = np.asarray(self.dtau, dtype=float)
        if not (len(self.y) == len(self.i) == len(self.dtau)):
            raise ValueError("inconsistent path lengths")
        if self.dtau[0] != 0.0:
            raise ValueError("dtau_0 must be 0")

    def __len__(self):
        return len(self.y)

    @property
    def n_steps(self):
        return len(self.y) - 1

    @cached_property
    def tau(self):
        return np.cumsum(self.dtau)

    def state(self, k):
        return HybridState(self.y[k], int(self.i[k]))


def simulate_batch(model, y0, i0, n, stream, record=True):
    """Run ``len(y0)`` independent chains for ``n`` jumps each.

    With ``record`` the full ``(n+1, R, d)`` state history is returned,
    otherwise only the final states and the summed time.
    """
    y = np.array(np.atleast_2d(y0), dtype=float)
    i = np.array(np.atleast_1d(i0), dtype=np.int64)
    if n < 0:
        raise PreconditionError("number of steps must be >= 0")
    if record:
        ys = np.empty((n + 1,) + y.shape)
        is_ = np.empty((n + 1, len(i)), dtype=np.int64)
        dts = np.zeros((n + 1, len(i)))
        ys[0], is_[0] = y, i
    for k in range(1, n + 1):
        y, i, dt = advance(model, y, i, stream)
        if record:
            ys[k], is_[k], dts[k] = y, i, dt
    if record:
        return ys, is_, dts
    return y, i


def simulate_embedded(model, x0: HybridState, n: int, stream) -> EmbeddedPath:
    """Path of ``n`` jumps from ``x0`` with initial law ``delta_x0 (x) delta_0``."""
    ys, is_, dts = simulate_batch(model, x0.y[None, :], [x0.i], n, stream)
    seed = (stream.root_seed, stream.stream_id) if isinstance(stream, SeedStream) else None
    return EmbeddedPath(ys[:, 0], is_[:, 0], dts[:, 0], seed=seed)


def jumps_for_horizon(lam, t):
    """Jump budget that overshoots time ``t`` with overwhelming probability."""
    mean = lam * t
    return int(math.ceil(1.2 * mean + 10.0 * math.sqrt(mean))) + 1


def simulate_until(model, x0: HybridState, t: float, stream) -> EmbeddedPath:
    """Simulate enough jumps that the last jump time exceeds ``t``."""
    path = simulate_embedded(model, x0, jumps_for_horizon(model.jump_rate, t), stream)
    while path.tau[-1] <= t:
        more = simulate_embedded(model, path.state(-1), jumps_for_horizon(model.jump_rate, t / 10 + 1), stream)
        path = EmbeddedPath(np.vstack([path.y, more.y[1:]]), np.concatenate([path.i, more.i[1:]]),
                            np.concatenate([path.dtau, more.dtau[1:]]), seed=path.seed)
    return path


# --------------------------------------------------------------------------
# Integrals of observables along flow segments


def _flow_integrand(model, g, y, i):
    def fn(idx, s):
        k = s.shape[1]
        yy = np.repeat(y[idx], k, axis=0)
        ii = np.repeat(i[idx], k)
        pts = model.flow(s.ravel(), yy, ii)
        return g(pts, ii).reshape(s.shape)
    return fn


def segment_integral(model, g, y, i, t1, t0=0.0, quad_tol=QUAD_TOL, method="auto"):
    """``int_{t0}^{t1} g(S_i(s, y), i) ds`` for batches of segments.

    ``method="auto"`` uses the flow's closed form for affine observables and
    adaptive Gauss-Legendre otherwise.
    """
    y = np.atleast_2d(y)
    i = np.atleast_1d(i)
    t1 = np.broadcast_to(np.asarray(t1, dtype=float), (len(y),))
    t0 = np.broadcast_to(np.asarray(t0, dtype=float), (len(y),))
    closed = (method in ("auto", "closed") and g.affine is not None
              and hasattr(model.flow, "segment_integral_affine"))
    if closed:
        a, b = g.affine
        f = model.flow.segment_integral_affine
        return f(a, b, y, i, t1) - f(a, b, y, i, t0)
    if method == "closed":
        raise PreconditionError("no closed form for this flow/observable pair")
    if len(y) == 0:
        return np.zeros(0)
    return quadrature.integrate(_flow_integrand(model, g, y, i), t0, t1, tol=quad_tol,
                                scale=g.sup_norm * np.abs(t1 - t0))


class ContinuousPath:
    """Interpolation ``X(t) = (S_{xi_n}(t - tau_n, Y_n), xi_n)`` of an embedded path."""

    def __init__(self, model, path: EmbeddedPath):
        self.model = model
        self.path = path

    @property
    def horizon(self):
        return float(self.path.tau[-1])

    def _check(self, t):
        t = np.asarray(t, dtype=float)
        if np.any(t < 0) or np.any(t >= self.horizon):
            raise BeyondHorizon(f"time outside [0, {self.horizon:g})")
        return t

    def segment_index(self, t):
        return np.searchsorted(self.path.tau, t, side="right") - 1

    def eval(self, t):
        """State(s) at time(s) ``t`` as arrays ``(y, i)``."""
        t = np.atleast_1d(self._check(t))
        k = self.segment_index(t)
        s = t - self.path.tau[k]
        y0 = self.path.y[k]
        i0 = self.path.i[k]
        y = self.model.flow(s, y0, i0)
        y = np.where((s == 0)[:, None], y0, y)
        return y, i0

    def renewal_count(self, t):
        """``N_t = max{n : tau_n <= t}``."""
        t = self._check(t)
        return self.segment_index(t)

    def path_integral(self, g, t0, t1, quad_tol=QUAD_TOL):
        """``int_{t0}^{t1} g(X(s)) ds``, segment by segment."""
        if t1 < t0:
            raise PreconditionError("t1 < t0")
        self._check(np.array([t0, t1]))
        tau = self.path.tau
        k0, k1 = int(self.segment_index(t0)), int(self.segment_index(t1))
        ks = np.arange(k0, k1 + 1)
        lo = np.maximum(t0, tau[ks]) - tau[ks]
        hi = np.minimum(t1, tau[ks + 1]) - tau[ks]
        vals = segment_integral(self.model, g, self.path.y[ks], self.path.i[ks], hi, lo,
                                quad_tol=quad_tol)
        return float(np.sum(vals))


def eval_continuous(cpath: ContinuousPath, t: float) -> HybridState:
    y, i = cpath.eval(t)
    return HybridState(y[0], int(i[0]))


def renewal_count(cpath: ContinuousPath, t: float) -> int:
    return int(cpath.renewal_count(t))


def path_integral(cpath: ContinuousPath, g, t0, t1, quad_tol=QUAD_TOL) -> float:
    return cpath.path_integral(g, t0, t1, quad_tol)
