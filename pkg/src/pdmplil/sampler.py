"""Reproducible random variates for the model's four sources of randomness.

A :class:`SeedStream` wraps a counter-based Philox generator keyed by
``(root_seed, stream_id)``, so replicas on different workers never share
draw order. Replay is bit-exact on one platform.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PreconditionError


@dataclass
class SeedStream:
    root_seed: int
    stream_id: int = 0
    rng: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        ss = np.random.SeedSequence(int(self.root_seed), spawn_key=(int(self.stream_id),))
        self.rng = np.random.Generator(np.random.Philox(ss))

    def spawn(self, k):
        """Child streams for sub-tasks; deterministic in (root, id, k)."""
        base = (int(self.stream_id) + 1) * 1_000_003
        return [SeedStream(self.root_seed, base + j) for j in range(k)]


def _rng(stream):
    return stream.rng if isinstance(stream, SeedStream) else stream


def draw_interjump(stream, lam, size=None):
    """Exp(lam) inter-jump time(s)."""
    if not lam > 0:
        raise PreconditionError(f"jump rate must be positive, got {lam}")
    return _rng(stream).exponential(1.0 / lam, size=size)


def draw_theta(stream, model, y):
    """theta ~ p(y, .) for each row of ``y``."""
    y = np.atleast_2d(y)
    return model.density.sample(_rng(stream), y)


def draw_switch(stream, model, i, y):
    """Categorical draw with weights pi_i.(y); returns 1-based indices."""
    y = np.atleast_2d(y)
    i = np.atleast_1d(i)
    m = model.num_flows
    if m == 1:
        _rng(stream).random(len(y))  # keep draw count independent of m
        return np.ones(len(y), dtype=np.int64)
    w = np.broadcast_to(model.switching(i, y), (len(y), m))
    return categorical(_rng(stream), w)


def categorical(rng, weights):
    """One categorical draw per row of ``weights`` (rows sum to 1); 1-based."""
    u = rng.random(len(weights))
    if weights.shape[1] == 2:
        return 1 + (u >= weights[:, 0]).astype(np.int64)
    cdf = np.cumsum(weights, axis=1)
    j = (u[:, None] >= cdf[:, :-1]).sum(axis=1)
    return j.astype(np.int64) + 1


def draw_noise(stream, model, size=1):
    """h ~ nu^eps, shape ``(size, dim)``; always strictly inside B(0, eps)."""
    return model.noise.sample(_rng(stream), size, model.dim)
