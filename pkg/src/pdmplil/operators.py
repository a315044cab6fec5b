"""Markov operators of the embedded chain and the flow/jump kernels.

``P`` is one step of the post-jump chain, ``G`` averages an observable
along the flow against an ``Exp(lambda)`` clock, and ``W`` applies only the
jump (map, noise, switch). The invariant measures of the chain and of the
continuous-time process are linked by ``nu = mu G`` and ``mu = nu W``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import quadrature
from .distance import fortet_mourier
from .errors import PreconditionError
from .model import HybridState
from .sampler import _rng, draw_switch
from .simulate import advance, simulate_batch, segment_integral
from .stats import loglinear_fit, mean_se

QUAD_TOL = 1e-10


class EmpiricalMeasure:
    """Weighted atoms ``(y_k, i_k, w_k)`` on the hybrid space."""

    def __init__(self, y, i, w=None):
        self.y = np.atleast_2d(np.asarray(y, dtype=float))
        self.i = np.atleast_1d(np.asarray(i, dtype=np.int64))
        n = len(self.y)
        if len(self.i) != n or n == 0:
            raise PreconditionError("atoms and indices must be nonempty and aligned")
        if w is None:
            w = np.full(n, 1.0 / n)
        self.w = np.asarray(w, dtype=float)
        if np.any(self.w < 0) or abs(self.w.sum() - 1.0) > 1e-12:
            raise PreconditionError("weights must be nonnegative and sum to 1")

    @classmethod
    def dirac(cls, x: HybridState, copies=1):
        return cls(np.repeat(x.y[None, :], copies, axis=0), np.full(copies, x.i))

    @classmethod
    def from_states(cls, states, weights=None):
        return cls([s.y for s in states], [s.i for s in states], weights)

    def __len__(self):
        return len(self.y)

    def atoms(self):
        for y, i, w in zip(self.y, self.i, self.w):
            yield HybridState(y, int(i)), float(w)

    def integrate(self, g):
        return float(np.dot(self.w, g(self.y, self.i)))

    def resample(self, k, rng):
        """``k`` equally weighted atoms drawn by weight, with replacement."""
        idx = _rng(rng).choice(len(self), size=k, p=self.w)
        return EmpiricalMeasure(self.y[idx], self.i[idx])

    def subsample(self, k, rng):
        """``k`` distinct atoms without replacement (uniform weights assumed)."""
        if k >= len(self):
            return self
        idx = _rng(rng).choice(len(self), size=k, replace=False)
        return EmpiricalMeasure(self.y[idx], self.i[idx])

    def to_jsonl(self):
        return "".join(json.dumps({"y": y.tolist(), "i": int(i), "w": float(w)}) + "\n"
                       for y, i, w in zip(self.y, self.i, self.w))

    @classmethod
    def from_jsonl(cls, text):
        rows = [json.loads(line) for line in text.splitlines() if line.strip()]
        return cls([r["y"] for r in rows], [r["i"] for r in rows], [r["w"] for r in rows])


def _spread(mu, samples_per_atom):
    if samples_per_atom < 1:
        raise PreconditionError("samples_per_atom must be >= 1")
    k = int(samples_per_atom)
    return (np.repeat(mu.y, k, axis=0), np.repeat(mu.i, k),
            np.repeat(mu.w / k, k))


def apply_P(model, mu, samples_per_atom, stream):
    """Monte Carlo push-forward ``mu P``."""
    y, i, w = _spread(mu, samples_per_atom)
    y, i, _ = advance(model, y, i, stream)
    return EmpiricalMeasure(y, i, w / w.sum())


def apply_W(model, mu, samples_per_atom, stream):
    """Push-forward through the jump-only kernel ``W``: no flow, no clock."""
    y, i, w = _spread(mu, samples_per_atom)
    rng = _rng(stream)
    h = model.noise.sample(rng, len(y), model.dim)
    theta = model.density.sample(rng, y)
    y_new = model.jump_map(theta, y) + h
    model.require_inside(y_new)
    i_new = draw_switch(rng, model, i, y_new)
    return EmpiricalMeasure(y_new, i_new, w / w.sum())


def push_G(model, mu, samples_per_atom, stream):
    """Push-forward through ``G``: flow each atom for an ``Exp(lambda)`` time."""
    y, i, w = _spread(mu, samples_per_atom)
    t = _rng(stream).exponential(1.0 / model.jump_rate, size=len(y))
    return EmpiricalMeasure(model.flow(t, y, i), i, w / w.sum())


def dual_P(model, g, x: HybridState, n_mc, stream):
    """Monte Carlo ``Pg(x)``; returns ``(estimate, standard error)``."""
    if n_mc < 2:
        raise PreconditionError("n_mc must be >= 2")
    y = np.repeat(x.y[None, :], n_mc, axis=0)
    y1, i1, _ = advance(model, y, np.full(n_mc, x.i), stream)
    m, se = mean_se(g(y1, i1))
    return float(m), float(se)


def _tail_cutoff(lam, tol):
    """Time after which the ``Exp(lam)`` weight left is below ``tol / 10``."""
    return math.log(10.0 / tol) / lam


def G_values(model, g, y, i, quad_tol=QUAD_TOL, method="auto"):
    """``Gg(y_k, i_k) = int_0^inf lam e^{-lam t} g(S_i(t, y), i) dt`` row-wise.

    Affine observables on flows with a closed form are exact; otherwise the
    integral is truncated where ``e^{-lam t}`` drops below ``quad_tol / 10``
    (an error of at most ``quad_tol ||g||_inf / 10``) and the rest is
    adaptive Gauss-Legendre with tolerance relative to ``||g||_inf``.
    """
    y = np.atleast_2d(y)
    i = np.atleast_1d(i)
    lam = model.jump_rate
    if g.is_zero:
        return np.zeros(len(y))
    if (method == "auto" and g.affine is not None
            and hasattr(model.flow, "laplace_affine")):
        a, b = g.affine
        return model.flow.laplace_affine(a, b, y, i, lam)
    t_cut = _tail_cutoff(lam, quad_tol)

    def fn(idx, s):
        k = s.shape[1]
        ii = np.repeat(i[idx], k)
        pts = model.flow(s.ravel(), np.repeat(y[idx], k, axis=0), ii)
        return lam * np.exp(-lam * s) * g(pts, ii).reshape(s.shape)

    n = len(y)
    return quadrature.integrate(fn, np.zeros(n), np.full(n, t_cut), tol=quad_tol,
                                panels=8, scale=g.sup_norm)


def apply_G(model, g, x: HybridState, quad_tol=QUAD_TOL):
    """``Gg(x)`` by deterministic quadrature."""
    return float(G_values(model, g, x.y[None, :], np.array([x.i]), quad_tol,
                          method="quadrature")[0])


# --------------------------------------------------------------------------
# Invariant measures


@dataclass
class InvariantEstimate:
    mu: EmpiricalMeasure
    nu_flow: EmpiricalMeasure
    nu_time: EmpiricalMeasure
    discrepancy: float
    tau: np.ndarray = field(repr=False)


def stationary_states(model, n_chains, burn_in, stream, x0: HybridState | None = None):
    """``n_chains`` independent states after ``burn_in`` jumps from ``x0``."""
    x0 = x0 or HybridState(model.y_bar, 1)
    y0 = np.repeat(x0.y[None, :], n_chains, axis=0)
    return simulate_batch(model, y0, np.full(n_chains, x0.i), burn_in, stream, record=False)


def estimate_invariants(model, burn_in, n_keep, stream, x0: HybridState | None = None,
                        subsample=500, resamples=5):
    """Invariant measures from one long trajectory after ``burn_in`` jumps.

    ``mu`` holds the post-jump states. ``nu`` is built twice: by flowing each
    atom of ``mu`` for an ``Exp(lambda)`` time (``nu_flow``) and by sampling
    the continuous path at stratified uniform times (``nu_time``). The
    reported discrepancy is the median distance over ``resamples``
    subsamples of ``subsample`` atoms.
    """
    if burn_in < 0 or n_keep < 1:
        raise PreconditionError("burn_in >= 0 and n_keep >= 1 required")
    rng = _rng(stream)
    x0 = x0 or HybridState(model.y_bar, 1)
    ys, is_, dts = simulate_batch(model, x0.y[None, :], [x0.i], burn_in + n_keep, rng)
    ys, is_, dts = ys[burn_in:, 0], is_[burn_in:, 0], dts[burn_in:, 0]
    mu = EmpiricalMeasure(ys[:-1], is_[:-1])
    nu_flow = push_G(model, mu, 1, rng)
    tau = np.concatenate([[0.0], np.cumsum(dts[1:])])
    span = tau[-1]
    t = span * (np.arange(n_keep) + rng.random(n_keep)) / n_keep
    k = np.minimum(np.searchsorted(tau, t, side="right") - 1, n_keep - 1)
    s = t - tau[k]
    nu_time = EmpiricalMeasure(model.flow(s, ys[k], is_[k]), is_[k])
    disc = subsampled_distance(nu_flow, nu_time, model.constants.c, subsample, resamples, rng)
    return InvariantEstimate(mu, nu_flow, nu_time, disc, tau)


def subsampled_distance(mu1, mu2, c, subsample, resamples, rng):
    """Median Fortet-Mourier distance over random equal-size subsamples."""
    if len(mu1) + len(mu2) <= 2 * subsample and len(mu1) == len(mu2):
        return fortet_mourier(mu1, mu2, c)
    vals = [fortet_mourier(mu1.resample(subsample, rng), mu2.resample(subsample, rng), c)
            for _ in range(resamples)]
    return float(np.median(vals))


@dataclass
class DecayReport:
    n: list
    dfm: list
    floor: float
    fit: dict

    def to_dict(self):
        return {"n": self.n, "dfm": self.dfm, "floor": self.floor, "fit": self.fit}


def ergodicity_decay(model, mu0, n_steps, subsample, stream, mu_star,
                     resamples=5, floor_factor=2.0):
    """``d_FM(mu0 P^n, mu*)`` for ``n = 0..n_steps`` and a geometric fit.

    Each of ``resamples`` independent clouds of ``subsample`` particles is
    pushed through ``P`` and compared with a fresh subsample of ``mu_star``;
    the median is recorded. The noise floor is the median distance between
    two subsamples of ``mu_star``; the fit uses the leading points above
    ``floor_factor`` times the floor.
    """
    rng = _rng(stream)
    c = model.constants.c
    clouds = [mu0.resample(subsample, rng) for _ in range(resamples)]
    ns, ds = [], []
    for n in range(n_steps + 1):
        vals = [fortet_mourier(cl, mu_star.resample(subsample, rng), c) for cl in clouds]
        ns.append(n)
        ds.append(float(np.median(vals)))
        if n < n_steps:
            clouds = [apply_P(model, cl, 1, rng) for cl in clouds]
    floor = float(np.median([fortet_mourier(mu_star.resample(subsample, rng),
                                            mu_star.resample(subsample, rng), c)
                             for _ in range(resamples)]))
    fit = loglinear_fit(ns, ds, floor=floor_factor * floor)
    return DecayReport(ns, ds, floor, fit)


def segment_means(model, g, ys, is_, dts):
    """Per-segment integrals ``F_k`` of ``g`` along a recorded path."""
    return segment_integral(model, g, ys[:-1], is_[:-1], dts[1:])
