"""Markovian coupling of two copies of the post-jump chain.

Both copies share the inter-jump time and the noise draw. The jump
parameter and the new flow index are coupled through the overlap of the two
conditional laws: with probability equal to that overlap both copies make
the same move (``zeta = 1``); otherwise each copy draws independently from
its own residual law (``zeta = 0``). Each copy on its own is an exact
realisation of the chain, and equal states stay equal forever.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientSamples, PreconditionError, RejectionStall
from .model import HybridState, lyapunov_batch, rho_c_batch
from .lil import increments
from .sampler import _rng, categorical
from .simulate import advance
from .stats import loglinear_fit, mean_se

MAX_RESIDUAL_ROUNDS = 200_000


@dataclass(frozen=True)
class CoupledState:
    x1: HybridState
    x2: HybridState
    t: float = 0.0
    zeta: int = 0


@dataclass(frozen=True)
class CouplingSetF:
    """``F``: equal indices, or Lyapunov sum below ``4b / (1 - a)``."""

    a: float
    b: float

    def __post_init__(self):
        if not (0 < self.a < 1 and self.b > 0):
            raise PreconditionError("drift constants need 0 < a < 1 and b > 0")

    @property
    def radius(self):
        return 4.0 * self.b / (1.0 - self.a)

    def small(self, model, y1, y2):
        return lyapunov_batch(y1, model.y_bar) + lyapunov_batch(y2, model.y_bar) < self.radius

    def contains(self, model, y1, i1, y2, i2):
        return (np.asarray(i1) == np.asarray(i2)) | self.small(model, y1, y2)


def _switch_rows(model, i, y):
    return np.broadcast_to(model.switching(i, y), (len(y), model.num_flows))


def _coupled_mass(model, theta, z1, z2, i1, i2, h, j):
    """``min(p1, p2)(theta) * min(pi1_j, pi2_j)`` at both post-jump points,
    plus each copy's own ``p_k pi_kj`` and post-jump state."""
    d1 = model.density.pdf(z1, theta)
    d2 = model.density.pdf(z2, theta)
    u1 = model.jump_map(theta, z1) + h
    u2 = model.jump_map(theta, z2) + h
    rows = np.arange(len(theta))
    s1 = _switch_rows(model, i1, u1)[rows, j - 1]
    s2 = _switch_rows(model, i2, u2)[rows, j - 1]
    return np.minimum(d1, d2) * np.minimum(s1, s2), (d1 * s1, u1), (d2 * s2, u2)


def _residual(model, rng, z_own, z_other, i_own, i_other, h, first):
    """Draw ``(y', j)`` from one copy's residual law by rejection."""
    n = len(z_own)
    y_out = np.empty_like(z_own)
    j_out = np.empty(n, dtype=np.int64)
    pending = np.arange(n)
    for _ in range(MAX_RESIDUAL_ROUNDS):
        zo, zt = z_own[pending], z_other[pending]
        io, it, hh = i_own[pending], i_other[pending], h[pending]
        theta = model.density.sample(rng, zo)
        u = model.jump_map(theta, zo) + hh
        j = categorical(rng, _switch_rows(model, io, u))
        if first:
            q, (k_own, y_new), _ = _coupled_mass(model, theta, zo, zt, io, it, hh, j)
        else:
            q, _, (k_own, y_new) = _coupled_mass(model, theta, zt, zo, it, io, hh, j)
        ok = rng.random(len(pending)) * k_own >= q
        y_out[pending[ok]] = y_new[ok]
        j_out[pending[ok]] = j[ok]
        pending = pending[~ok]
        if len(pending) == 0:
            return y_out, j_out
    raise RejectionStall("residual sampler did not accept within the attempt budget")


def coupled_advance(model, y1, i1, y2, i2, stream):
    """One coupled jump for a batch of pairs.

    Returns ``(y1', i1', y2', i2', dt, zeta)``.
    """
    rng = _rng(stream)
    n = len(y1)
    dt = rng.exponential(1.0 / model.jump_rate, size=n)
    h = model.noise.sample(rng, n, model.dim)
    z1 = model.flow(dt, y1, i1)
    z2 = model.flow(dt, y2, i2)
    theta = model.density.sample(rng, z1)
    p1 = model.density.pdf(z1, theta)
    p2 = model.density.pdf(z2, theta)
    accept = rng.random(n) * p1 < p2
    u1 = model.jump_map(theta, z1) + h
    u2 = model.jump_map(theta, z2) + h
    pi1 = _switch_rows(model, i1, u1)
    pi2 = _switch_rows(model, i2, u2)
    j = categorical(rng, pi1)
    rows = np.arange(n)
    accept &= rng.random(n) * pi1[rows, j - 1] < pi2[rows, j - 1]

    ny1, ny2 = u1.copy(), u2.copy()
    ni1, ni2 = j.copy(), j.copy()
    miss = np.flatnonzero(~accept)
    if len(miss):
        a, b = (z1[miss], z2[miss]), (i1[miss], i2[miss])
        ny1[miss], ni1[miss] = _residual(model, rng, a[0], a[1], b[0], b[1], h[miss], True)
        ny2[miss], ni2[miss] = _residual(model, rng, a[1], a[0], b[1], b[0], h[miss], False)
    model.require_inside(ny1)
    model.require_inside(ny2)
    return ny1, ni1, ny2, ni2, dt, accept.astype(np.int8)


def coupled_step(model, s: CoupledState, stream) -> CoupledState:
    y1, i1, y2, i2, dt, z = coupled_advance(
        model, s.x1.y[None, :], np.array([s.x1.i]), s.x2.y[None, :], np.array([s.x2.i]), stream)
    return CoupledState(HybridState(y1[0], i1[0]), HybridState(y2[0], i2[0]),
                        float(dt[0]), int(z[0]))


@dataclass
class CoupledPath:
    """Coupled trajectories; arrays are ``(n+1, paths, ...)``."""

    y1: np.ndarray
    i1: np.ndarray
    y2: np.ndarray
    i2: np.ndarray
    dtau: np.ndarray
    zeta: np.ndarray
    dist: np.ndarray
    rho: np.ndarray = field(default=None)
    rho_N: dict = field(default_factory=dict)
    tau_hat: np.ndarray = field(default=None)

    @property
    def n_steps(self):
        return self.y1.shape[0] - 1

    def mean_distance(self):
        return self.dist.mean(axis=1)

    def to_jsonl(self, path_index=0):
        k = path_index
        return "".join(json.dumps({
            "n": n, "y1": self.y1[n, k].tolist(), "i1": int(self.i1[n, k]),
            "y2": self.y2[n, k].tolist(), "i2": int(self.i2[n, k]),
            "dtau": float(self.dtau[n, k]), "zeta": int(self.zeta[n, k]),
            "dist": float(self.dist[n, k])}) + "\n" for n in range(self.n_steps + 1))


def _first_hit(mask, start):
    """First row index ``>= start`` where ``mask`` holds, per column; -1 if none."""
    sub = mask[start:]
    if len(sub) == 0:
        return np.full(mask.shape[1], -1)
    hit = sub.any(axis=0)
    return np.where(hit, start + np.argmax(sub, axis=0), -1)


def simulate_coupled(model, x1: HybridState, x2: HybridState, n, stream, n_paths=1,
                     N_values=(), fset: CouplingSetF | None = None) -> CoupledPath:
    """Run ``n_paths`` coupled chains for ``n`` jumps from ``(x1, x2)``.

    With ``fset`` the return times ``rho`` (first ``n >= 1``) and ``rho_N``
    (first ``n >= N``) to ``F`` with small Lyapunov sum are recorded. The
    proxy ``tau_hat`` is one past the last ``zeta = 0`` step.
    """
    if n < 1:
        raise PreconditionError("n must be >= 1")
    rng = _rng(stream)
    c = model.constants.c
    shape = (n + 1, n_paths)
    y1 = np.empty(shape + (model.dim,))
    y2 = np.empty(shape + (model.dim,))
    i1 = np.empty(shape, dtype=np.int64)
    i2 = np.empty(shape, dtype=np.int64)
    dtau = np.zeros(shape)
    zeta = np.zeros(shape, dtype=np.int8)
    y1[0], y2[0] = x1.y, x2.y
    i1[0], i2[0] = x1.i, x2.i
    for k in range(1, n + 1):
        y1[k], i1[k], y2[k], i2[k], dtau[k], zeta[k] = coupled_advance(
            model, y1[k - 1], i1[k - 1], y2[k - 1], i2[k - 1], rng)
    dist = rho_c_batch(y1, i1, y2, i2, c)
    path = CoupledPath(y1, i1, y2, i2, dtau, zeta, dist)
    if fset is not None:
        good = fset.contains(model, y1, i1, y2, i2) & fset.small(model, y1, y2)
        path.rho = _first_hit(good, 1)
        path.rho_N = {int(N): _first_hit(good, int(N)) for N in N_values}
    uncoupled = zeta[1:] == 0
    last = np.where(uncoupled.any(axis=0), n - np.argmax(uncoupled[::-1], axis=0), 0)
    path.tau_hat = last + 1
    return path


# --------------------------------------------------------------------------
# Numerical evidence for the coupling conditions


def fit_drift(model, states_y, states_i, mc, stream, quantile_z=2.326):
    """Fit ``PV <= a V + b``: OLS slope ``a`` and an upper envelope ``b``."""
    rng = _rng(stream)
    n = len(states_y)
    y = np.repeat(states_y, mc, axis=0)
    i = np.repeat(states_i, mc)
    y1, _, _ = advance(model, y, i, rng)
    pv = lyapunov_batch(y1, model.y_bar).reshape(n, mc)
    est, se = pv.mean(axis=1), pv.std(axis=1, ddof=1) / math.sqrt(mc)
    v = lyapunov_batch(states_y, model.y_bar)
    a = float(np.polyfit(v, est, 1)[0])
    b = float(np.max(est + quantile_z * se - a * v))
    return a, max(b, 1e-12), {"V": v.tolist(), "PV": est.tolist()}


@dataclass
class BConditionReport:
    results: dict

    @property
    def passed(self):
        return all(r.get("pass", True) for r in self.results.values())

    def to_dict(self):
        return {"pass": self.passed, "conditions": self.results}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, default=float)


def _repeat_pairs(pairs, k):
    y1, i1, y2, i2 = pairs
    return (np.repeat(y1, k, axis=0), np.repeat(i1, k), np.repeat(y2, k, axis=0),
            np.repeat(i2, k))


def check_B_conditions(model, probe_pairs, mc_per_probe, stream, gammas=None,
                       return_steps=1000, feller_observable=None):
    """Monte Carlo evidence for the drift, contraction, overlap and return-time
    conditions of the coupling. ``probe_pairs`` is ``(y1, i1, y2, i2)``."""
    if mc_per_probe < 2:
        raise InsufficientSamples("mc_per_probe must be >= 2")
    rng = _rng(stream)
    py1, pi1, py2, pi2 = (np.atleast_2d(probe_pairs[0]), np.asarray(probe_pairs[1]),
                          np.atleast_2d(probe_pairs[2]), np.asarray(probe_pairs[3]))
    c = model.constants.c
    out = {}

    a, b, drift = fit_drift(model, np.vstack([py1, py2]), np.concatenate([pi1, pi2]),
                            mc_per_probe, rng)
    out["B1"] = {"pass": bool(a < 1), "a": a, "b": b, "samples": drift,
                 "note": "b is the 99% upper envelope of PV - aV over probes"}
    fset = CouplingSetF(min(max(a, 1e-6), 1 - 1e-9), b)

    in_f = fset.contains(model, py1, pi1, py2, pi2)
    if not np.any(in_f):
        raise InsufficientSamples("no probe pair lies in F")
    fy1, fi1, fy2, fi2 = py1[in_f], pi1[in_f], py2[in_f], pi2[in_f]
    nf = len(fy1)
    rho0 = rho_c_batch(fy1, fi1, fy2, fi2, c)
    y1, i1, y2, i2 = _repeat_pairs((fy1, fi1, fy2, fi2), mc_per_probe)
    n1, m1, n2, m2, _, z = coupled_advance(model, y1, i1, y2, i2, rng)
    z = z.astype(bool)
    rho1 = rho_c_batch(n1, m1, n2, m2, c)
    lands = bool(np.all(fset.contains(model, n1[z], m1[z], n2[z], m2[z])))
    zr = z.reshape(nf, mc_per_probe)
    r1 = rho1.reshape(nf, mc_per_probe)
    live = rho0 > 0
    skipped = [{"probe": int(k), "reason": "zero distance"} for k in np.flatnonzero(~live)]
    ratio = (r1 * zr).mean(axis=1)[live] / rho0[live]
    beta = float(ratio.max()) if live.any() else math.nan
    out["B2"] = {"pass": bool(lands and beta < 1), "beta": beta, "q_moves_in_F": lands,
                 "skipped": skipped, "n_F_probes": int(nf)}
    hit = (zr & (r1 <= beta * rho0[:, None])).mean(axis=1)[live]
    out["B3"] = {"pass": bool(live.any() and hit.min() > 0),
                 "inf_mass": float(hit.min()) if live.any() else math.nan, "beta": beta}
    freq = zr.mean(axis=1)
    l_hat = float(np.max((1 - freq[live]) / rho0[live])) if live.any() else 0.0
    out["B4"] = {"pass": bool(np.isfinite(l_hat)), "l": l_hat,
                 "coupled_frequency": freq.tolist(), "distance": rho0.tolist()}

    small = fset.small(model, fy1, fy2)
    out["B5"] = _return_times(model, (fy1[small], fi1[small], fy2[small], fi2[small]),
                              fset, mc_per_probe, return_steps, rng, gammas)
    out["B0"] = _feller_probe(model, py1, pi1, rng, feller_observable)
    return BConditionReport(out)


def _return_times(model, pairs, fset, reps, n_max, rng, gammas):
    if len(pairs[0]) == 0:
        return {"pass": False, "note": "no probe pair in the small set"}
    y1, i1, y2, i2 = _repeat_pairs(pairs, max(1, reps // max(1, len(pairs[0]))))
    rho = np.full(len(y1), -1)
    alive = np.arange(len(y1))
    for n in range(1, n_max + 1):
        y1, i1, y2, i2, _, _ = coupled_advance(model, y1, i1, y2, i2, rng)
        good = fset.contains(model, y1, i1, y2, i2) & fset.small(model, y1, y2)
        rho[alive[good]] = n
        keep = ~good
        alive, y1, i1, y2, i2 = alive[keep], y1[keep], i1[keep], y2[keep], i2[keep]
        if len(alive) == 0:
            break
    censored = float(np.mean(rho < 0))
    gammas = np.asarray(gammas if gammas is not None else [0.3, 0.5, 0.7, 0.8, 0.9, 0.95, 0.99, 1.0])
    table = []
    done = rho[rho > 0].astype(float)
    for g in gammas:
        vals = g ** (-done)
        m, se = mean_se(vals) if len(vals) > 1 else (math.nan, math.nan)
        stable = bool(censored == 0 and np.isfinite(m) and (se <= 0.2 * m))
        table.append({"gamma": float(g), "mean": float(m), "se": float(se), "stable": stable,
                      "uninformative": bool(g == 1.0)})
    informative = [row["gamma"] for row in table if row["stable"] and not row["uninformative"]]
    return {"pass": bool(informative), "gamma": min(informative) if informative else math.nan,
            "censored_fraction": censored, "mean_return": float(done.mean()) if len(done) else math.nan,
            "table": table}


def _feller_probe(model, ys, is_, rng, g=None, levels=8, n_mc=2000):
    """Heuristic continuity check: ``Pg`` along ``x + 2^-k e`` with common
    random numbers should settle (successive differences shrink)."""
    from .observables import make_observable
    from .operators import dual_P

    g = g or make_observable("tanh_y", model)
    seed = int(rng.integers(2**31))
    worst, first = 0.0, 0.0
    span = model.state_high - model.state_low
    for y, i in zip(ys[:4], is_[:4]):
        direction = np.where(y + 0.5 * span <= model.state_high, 1.0, -1.0) * span
        vals = []
        for k in range(levels + 1):
            x = HybridState(y + (2.0 ** -(k + 1) if k < levels else 0.0) * direction, int(i))
            vals.append(dual_P(model, g, x, n_mc, np.random.default_rng(seed))[0])
        diffs = np.abs(np.array(vals[:-1]) - vals[-1])
        worst = max(worst, float(diffs[-1]))
        first = max(first, float(diffs[0]))
    return {"pass": bool(worst <= 0.25 * first or worst < 1e-9), "heuristic": True,
            "first_gap": first, "last_gap": worst}


# --------------------------------------------------------------------------
# Increment gap


@dataclass
class GapReport:
    mean: np.ndarray
    se: np.ndarray
    fit: dict
    partial_sums: np.ndarray
    tail_ratio: float
    cap: float

    def to_dict(self):
        return {"mean": self.mean.tolist(), "se": self.se.tolist(), "fit": self.fit,
                "partial_sums": self.partial_sums.tolist(), "tail_ratio": self.tail_ratio,
                "cap": self.cap, "cap_exceeded": bool(np.any(self.mean > self.cap))}


def coupled_increment_gap(model, x1, x2, g, n_max, n_paths, stream, floor_rel=1e-12):
    """Mean ``|Z^1_n - Z^2_n|`` along coupled paths for ``n = 0..n_max-1``.

    Any centering constant cancels because both copies share the clock.
    """
    if g.lipschitz == 0:
        raise PreconditionError("observable must be non-constant")
    cp = simulate_coupled(model, x1, x2, n_max, stream, n_paths)
    d = model.dim
    gaps = np.empty((n_max, n_paths))
    for n in range(n_max):
        dt = cp.dtau[n + 1]
        z1 = increments(model, g, cp.y1[n].reshape(-1, d), cp.i1[n], dt)
        z2 = increments(model, g, cp.y2[n].reshape(-1, d), cp.i2[n], dt)
        gaps[n] = np.abs(z1 - z2)
    mean, se = gaps.mean(axis=1), gaps.std(axis=1, ddof=1) / math.sqrt(n_paths)
    fit = loglinear_fit(np.arange(n_max), mean, floor=floor_rel * mean[0])
    sums = np.cumsum(mean)
    tail = float(mean[n_max // 2:].sum() / sums[-1]) if sums[-1] > 0 else 0.0
    cap = 2.0 * math.sqrt(6.0 / model.jump_rate ** 2) * g.sup_norm * 2.0
    return GapReport(mean, se, fit, sums, tail, cap)
