"""Iterated-logarithm statistics and the variance constants behind them.

For a centred observable ``gb`` the time integral splits as

    int_0^t gb(X(s)) ds = M_{N_t} + (1/lam) sum_{k < N_t} G gb(X_k) + R_t

with ``M`` a martingale over jumps, ``N_t`` the jump count and ``R_t`` the
integral over the unfinished segment. Dividing each term by
``sqrt(2 N ln ln N)`` gives the traces ``I1``, ``I3`` and ``I2``.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import DegenerateSigma, InsufficientSamples, PreconditionError, SeriesNotDecaying
from .model import HybridState
from .observables import Observable
from .operators import G_values
from .sampler import _rng
from .simulate import advance, segment_integral, simulate_batch
from .stats import batch_means, loglinear_fit, mean_se, sqrt_with_se

BURN_IN = 1000


def lil_norm(n):
    """``sqrt(2 n ln ln n)`` for ``n > e``, else ``nan``."""
    n = np.asarray(n, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.sqrt(2.0 * n * np.log(np.log(n)))
    return np.where(n > math.e, out, np.nan)


def _normalise(total, n):
    d = lil_norm(n)
    return np.where(np.isnan(d), 0.0, np.asarray(total) / np.where(np.isnan(d), 1.0, d))


def s_discrete(values, n=None):
    """``sum_{k<n} g_k / sqrt(2 n ln ln n)``, zero for ``n <= e``."""
    values = np.asarray(values, dtype=float)
    n = len(values) if n is None else int(n)
    if n > len(values):
        raise PreconditionError("n exceeds the number of values")
    return float(_normalise(values[:n].sum(), n))


def s_continuous(cpath, g, t):
    """``int_0^t g(X(s)) ds / sqrt(2 t ln ln t)``, zero for ``t <= e``."""
    gb = g.g_bar if isinstance(g, CenteredObservable) else g
    if t <= math.e:
        cpath._check(np.asarray(t))
        return 0.0
    return float(cpath.path_integral(gb, 0.0, t) / lil_norm(t))


# --------------------------------------------------------------------------
# Centering


@dataclass
class CenteredObservable:
    """``g`` minus its mean under the continuous-time invariant law.

    ``center`` is the time average of ``g`` along the path; ``G_center`` is
    the average of ``Gg`` over post-jump states from independent chains.
    The two estimate the same number.
    """

    base: Observable
    center: float
    center_se: float
    G_center: float
    G_center_se: float
    g_bar: Observable = field(repr=False)

    @property
    def agreement_z(self):
        se = math.hypot(self.center_se, self.G_center_se)
        return abs(self.center - self.G_center) / se if se > 0 else 0.0

    def to_dict(self):
        return {"observable": self.base.name, "center": self.center,
                "center_se": self.center_se, "G_center": self.G_center,
                "G_center_se": self.G_center_se, "agreement_z": self.agreement_z}

    @classmethod
    def exact(cls, g, center):
        """Centering by a known constant (used by tests with closed forms)."""
        return cls(g, float(center), 0.0, float(center), 0.0, g.shift(center, f"{g.name}_bar"))


def _stationary_batch(model, n, burn_in, rng, x0=None):
    x0 = x0 or HybridState(model.y_bar, 1)
    return simulate_batch(model, np.repeat(x0.y[None, :], n, axis=0), np.full(n, x0.i),
                          burn_in, rng, record=False)


def center_observable(model, g, stream, n_steps=4000, n_chains=32, burn_in=BURN_IN):
    """Estimate ``<g, nu*>`` and ``<Gg, mu*>`` from two independent sets of chains."""
    if g.lipschitz == 0 and g.low == g.high:
        raise PreconditionError("observable is constant")
    rng = _rng(stream)
    d = model.dim
    y, i = _stationary_batch(model, n_chains, burn_in, rng)
    ys, is_, dts = simulate_batch(model, y, i, n_steps, rng)
    f = segment_integral(model, g, ys[:-1].reshape(-1, d), is_[:-1].ravel(), dts[1:].ravel())
    ratio = f.reshape(n_steps, n_chains).sum(axis=0) / dts[1:].sum(axis=0)
    center, center_se = mean_se(ratio)
    y, i = _stationary_batch(model, n_chains, burn_in, rng)
    ys, is_, _ = simulate_batch(model, y, i, n_steps, rng)
    gv = G_values(model, g, ys[:-1].reshape(-1, d), is_[:-1].ravel())
    gc, gc_se = mean_se(gv.reshape(n_steps, n_chains).mean(axis=0))
    return CenteredObservable(g, float(center), float(center_se), float(gc), float(gc_se),
                              g.shift(center, f"{g.name}_bar"))


# --------------------------------------------------------------------------
# Martingale part


def _gbar(g):
    return g.g_bar if isinstance(g, CenteredObservable) else g


def increments(model, g, y, i, dt):
    """``Z = int_0^dt g(S_i(s, y), i) ds - Gg(y, i) / lam`` row-wise."""
    return segment_integral(model, g, y, i, dt) - G_values(model, g, y, i) / model.jump_rate


def martingale_series(path, g, model):
    """``(M, Z)`` with ``M_0 = 0`` and ``M_n = Z_1 + ... + Z_n``."""
    gb = _gbar(g)
    z = increments(model, gb, path.y[:-1], path.i[:-1], path.dtau[1:])
    return np.concatenate([[0.0], np.cumsum(z)]), z


@dataclass
class SigmaEstimate:
    value: float
    se: float
    method: str
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return {"value": self.value, "se": self.se, "method": self.method, **self.extra}


def _chains(model, n_chains, length, burn_in, rng):
    y, i = _stationary_batch(model, n_chains, burn_in, rng)
    return simulate_batch(model, y, i, length, rng)


def estimate_sigma_embedded(model, g, chain_len, n_batches, stream, n_chains=16,
                            burn_in=BURN_IN, cross_check=True, n_starts=20000, k_cap=200):
    """``sigma(G gb)``: long-run standard deviation of ``G gb`` along the chain.

    Primary: batch means over ``n_chains`` stationary chains. Cross-check:
    the autocovariance series ``Var h + 2 sum_i Cov(h(X_0), h(X_i))``
    truncated where a fitted geometric tail falls below 5% of the running
    sum. Raises ``SeriesNotDecaying`` when no decaying fit exists.
    """
    rng = _rng(stream)
    gb = _gbar(g)
    d = model.dim
    if gb.is_zero:
        return SigmaEstimate(0.0, 0.0, "batch_means", {"series": {"value": 0.0, "se": 0.0},
                                                       "agree": True})
    ys, is_, _ = _chains(model, n_chains, chain_len, burn_in, rng)
    h = G_values(model, gb, ys[1:].reshape(-1, d), is_[1:].ravel()).reshape(chain_len, n_chains)
    var, var_se = batch_means(h, n_batches)
    s, s_se = sqrt_with_se(var, var_se)
    extra = {"batches": n_batches, "chains": n_chains, "chain_len": chain_len}
    if cross_check:
        ser = autocovariance_series(model, gb, n_starts, k_cap, burn_in, rng)
        extra["series"] = ser
        extra["agree"] = bool(abs(s - ser["value"]) <= 2.0 * (s_se + ser["se"]))
    return SigmaEstimate(s, s_se, "batch_means", extra)


def autocovariance_series(model, gb, n_starts, k_cap, burn_in, rng):
    d = model.dim
    y, i = _stationary_batch(model, n_starts, burn_in, rng)
    hs = np.empty((k_cap + 1, n_starts))
    hs[0] = G_values(model, gb, y, i)
    for k in range(1, k_cap + 1):
        y, i, _ = advance(model, y, i, rng)
        hs[k] = G_values(model, gb, y.reshape(-1, d), i)
    hbar = hs.mean()
    prod = (hs[0] - hbar)[None, :] * (hs - hbar)
    gam = prod.mean(axis=1)
    gse = prod.std(axis=1, ddof=1) / math.sqrt(n_starts)
    sig = np.abs(gam) > 2.0 * gse
    run = 1
    while run <= k_cap and sig[run]:
        run += 1
    n_sig = run - 1
    if n_sig == 0:
        K, q = 0, 0.0
    else:
        if n_sig == 1:
            q = abs(gam[1] / gam[0])
        else:
            q = loglinear_fit(np.arange(n_sig + 1), np.abs(gam[:n_sig + 1]))["q"]
        if not (q < 1):
            raise SeriesNotDecaying(f"autocovariances do not decay geometrically (q = {q:.3g})")
        K = None
        for k in range(1, k_cap + 1):
            running = gam[0] + 2.0 * gam[1:k + 1].sum()
            tail = 2.0 * abs(gam[k]) * q / (1.0 - q)
            if tail < 0.05 * abs(running):
                K = k
                break
        if K is None:
            raise SeriesNotDecaying("series tail never fell below 5% of the running sum")
    w = np.r_[1.0, np.full(K, 2.0)]
    per_start = (w[:, None] * prod[:K + 1]).sum(axis=0)
    var, var_se = float(per_start.mean()), float(per_start.std(ddof=1) / math.sqrt(n_starts))
    s, s_se = sqrt_with_se(var, var_se)
    return {"value": s, "se": s_se, "variance": var, "K": int(K), "rate": float(q),
            "lags_significant": int(n_sig)}


def moment_bound(sup_norm, lam, r):
    """``2^{1+r} ||gb||^{2+r} (Gamma(3+r)/lam^{2+r} + lam^{-(2+r)})``."""
    p = 2.0 + r
    return 2.0 ** (1 + r) * sup_norm ** p * (gamma_fn(3.0 + r) / lam ** p + lam ** -p)


def estimate_sigma_tilde(model, g, n_mc, stream, burn_in=BURN_IN):
    """``sigma~(gb) = sqrt(E[Z_1^2])`` under stationary starts."""
    if n_mc < 2:
        raise InsufficientSamples("n_mc must be >= 2")
    rng = _rng(stream)
    gb = _gbar(g)
    if gb.is_zero:
        return SigmaEstimate(0.0, 0.0, "stationary_mc", {"second_moment": 0.0})
    y, i = _stationary_batch(model, n_mc, burn_in, rng)
    dt = rng.exponential(1.0 / model.jump_rate, size=n_mc)
    z = increments(model, gb, y, i, dt)
    m2, m2_se = mean_se(z ** 2)
    s, s_se = sqrt_with_se(m2, m2_se)
    r = model.constants.r
    lam = model.jump_rate
    return SigmaEstimate(s, s_se, "stationary_mc", {
        "second_moment": float(m2), "second_moment_se": float(m2_se),
        "second_moment_cap": 6.0 * gb.sup_norm ** 2 / lam ** 2,
        "moment_2r": float(np.mean(np.abs(z) ** (2 + r))),
        "moment_2r_bound": moment_bound(gb.sup_norm, lam, r)})


def sigma_bar(sigma_embedded, sigma_tilde, lam):
    """``sqrt(lam) (sigma_embedded / lam + sigma_tilde)``."""
    if sigma_embedded < 0 or sigma_tilde < 0:
        raise PreconditionError("sigmas must be nonnegative")
    if sigma_embedded == 0 and sigma_tilde == 0:
        raise DegenerateSigma("both sigmas vanish; the observable is effectively constant")
    return math.sqrt(lam) * (sigma_embedded / lam + sigma_tilde)


def sigma_bar_se(sigma_embedded_se, sigma_tilde_se, lam):
    return math.sqrt(lam) * math.hypot(sigma_embedded_se / lam, sigma_tilde_se)


def estimate_sigma_time(model, g, chain_len, n_batches, stream, n_chains=16, burn_in=BURN_IN):
    """Long-run standard deviation of ``int_0^t gb`` per unit time.

    Batch means of the per-segment integrals, scaled by ``lam``. Unlike
    ``sigma_bar`` this keeps the covariance between the martingale and
    ``G gb`` terms.
    """
    rng = _rng(stream)
    gb = _gbar(g)
    d = model.dim
    ys, is_, dts = _chains(model, n_chains, chain_len, burn_in, rng)
    f = segment_integral(model, gb, ys[:-1].reshape(-1, d), is_[:-1].ravel(),
                         dts[1:].ravel()).reshape(chain_len, n_chains)
    var, var_se = batch_means(f, n_batches)
    lam = model.jump_rate
    s, s_se = sqrt_with_se(lam * var, lam * var_se)
    return SigmaEstimate(s, s_se, "segment_batch_means")


def variance_growth(model, g, n, n_replicas, stream, burn_in=BURN_IN, checkpoints=None):
    """Pooled ``h_n^2 = E[M_n^2]`` over stationary replicas."""
    rng = _rng(stream)
    gb = _gbar(g)
    d = model.dim
    if checkpoints is None:
        checkpoints = np.unique(np.r_[np.geomspace(1, n, 24).astype(int), n])
    checkpoints = np.asarray(checkpoints)
    y, i = _stationary_batch(model, n_replicas, burn_in, rng)
    m = np.zeros(n_replicas)
    rows = []
    nxt = 0
    start = max(1, n // 10)
    m_start = None
    for k in range(1, n + 1):
        y_new, i_new, dt = advance(model, y, i, rng)
        m += increments(model, gb, y.reshape(-1, d), i, dt)
        y, i = y_new, i_new
        if k == start:
            m_start = m.copy()
        if nxt < len(checkpoints) and k == checkpoints[nxt]:
            h2, h2_se = mean_se(m ** 2)
            rows.append((k, float(h2), float(h2_se)))
            nxt += 1
    ns = np.array([r[0] for r in rows])
    h2 = np.array([r[1] for r in rows])
    h2_se = np.array([r[2] for r in rows])
    positive = np.flatnonzero(h2 > 0)
    # growth of h_n^2 per step over the last decade, from the same replicas
    if n > start:
        slope, slope_se = mean_se((m ** 2 - m_start ** 2) / (n - start))
    else:
        slope, slope_se = math.nan, math.nan
    return {"n": ns.tolist(), "h2": h2.tolist(), "h2_se": h2_se.tolist(),
            "ratio": (h2 / ns).tolist(), "ratio_se": (h2_se / ns).tolist(),
            "slope_last_decade": float(slope), "slope_last_decade_se": float(slope_se),
            "n_bar": int(ns[positive[0]]) if len(positive) else None,
            "final_M2": (m ** 2).tolist() if n_replicas <= 16 else None}


# --------------------------------------------------------------------------
# Long-horizon traces


def lil_checkpoints(horizon, dense=400):
    """Dyadic times ``T / 2^k > e`` and a log-spaced grid on ``[T/10, T]``."""
    dyadic = []
    t = float(horizon)
    while t > math.e:
        dyadic.append(t)
        t /= 2.0
    dyadic = np.array(dyadic[::-1])
    grid = np.geomspace(horizon / 10.0, horizon, dense)
    return dyadic, np.unique(np.r_[dyadic, grid])


@dataclass
class _Traces:
    integral: np.ndarray
    count: np.ndarray
    mart: np.ndarray
    gsum: np.ndarray
    rem: np.ndarray
    rem_dt: np.ndarray


def trace_replicas(model, gb, times, n_replicas, stream, x0=None, burn_in=0, block=4096):
    """Stream replicas jump by jump and record, at each time in ``times``,
    the integral, jump count, martingale, ``G``-sum and remainder."""
    rng = _rng(stream)
    x0 = x0 or HybridState(model.y_bar, 1)
    d = model.dim
    lam = model.jump_rate
    y = np.repeat(x0.y[None, :], n_replicas, axis=0)
    i = np.full(n_replicas, x0.i)
    if burn_in:
        y, i = simulate_batch(model, y, i, burn_in, rng, record=False)
    nt = len(times)
    out = _Traces(*(np.zeros((nt, n_replicas)) for _ in range(6)))
    tau = np.zeros(n_replicas)
    acc = np.zeros(n_replicas)
    gsum = np.zeros(n_replicas)
    k = np.zeros(n_replicas, dtype=np.int64)
    ptr = np.zeros(n_replicas, dtype=np.int64)
    horizon = times[-1]
    while np.any(ptr < nt):
        ys, is_, dts = simulate_batch(model, y, i, block, rng)
        starts_y = ys[:-1].reshape(-1, d)
        starts_i = is_[:-1].ravel()
        f = segment_integral(model, gb, starts_y, starts_i, dts[1:].ravel()).reshape(block, -1)
        gv = G_values(model, gb, starts_y, starts_i).reshape(block, -1)
        t0 = tau + np.vstack([np.zeros(n_replicas), np.cumsum(dts[1:-1], axis=0)])
        a0 = acc + np.vstack([np.zeros(n_replicas), np.cumsum(f[:-1], axis=0)])
        b0 = gsum + np.vstack([np.zeros(n_replicas), np.cumsum(gv[:-1], axis=0)])
        t_end = t0[-1] + dts[-1]
        for rep in range(n_replicas):
            lo = ptr[rep]
            hi = np.searchsorted(times, t_end[rep], side="left")
            if hi <= lo:
                continue
            tt = times[lo:hi]
            r = np.searchsorted(t0[:, rep], tt, side="right") - 1
            part = segment_integral(model, gb, ys[r, rep], is_[r, rep], tt - t0[r, rep])
            out.integral[lo:hi, rep] = a0[r, rep] + part
            out.count[lo:hi, rep] = k[rep] + r
            out.gsum[lo:hi, rep] = b0[r, rep]
            out.mart[lo:hi, rep] = a0[r, rep] - b0[r, rep] / lam
            out.rem[lo:hi, rep] = part
            out.rem_dt[lo:hi, rep] = dts[r + 1, rep]
            ptr[rep] = hi
        tau = t_end
        acc = a0[-1] + f[-1]
        gsum = b0[-1] + gv[-1]
        k += block
        y, i = ys[-1], is_[-1]
        if np.all(tau > horizon):
            break
    return out


@dataclass
class LilReport:
    data: dict

    def to_dict(self):
        return self.data

    def to_json(self):
        return json.dumps(self.data, indent=2, sort_keys=True)

    def traces_csv(self):
        tr = self.data["traces"]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replica", "t", "N", "s", "I1", "I2", "I3", "prefactor"])
        for rep in range(len(tr["s"][0])):
            for k, t in enumerate(tr["t"]):
                w.writerow([rep, repr(t), int(tr["N"][k][rep])] +
                           [repr(tr[key][k][rep]) for key in ("s", "I1", "I2", "I3", "prefactor")])
        return buf.getvalue()


def _traces_parallel(model, gb, times, n_replicas, stream, x0, burn_in, n_threads):
    streams = list(stream) if isinstance(stream, (list, tuple)) else [stream]
    sizes = [len(c) for c in np.array_split(np.arange(n_replicas), len(streams))]
    jobs = [(s, k) for s, k in zip(streams, sizes) if k > 0]

    def run(job):
        return trace_replicas(model, gb, times, job[1], job[0], x0, burn_in)

    if n_threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as ex:
            parts = list(ex.map(run, jobs))
    else:
        parts = [run(job) for job in jobs]
    return _Traces(*(np.concatenate([getattr(p, f.name) for p in parts], axis=1)
                     for f in fields(_Traces)))


def lil_diagnostics(model, g, horizon_t, n_replicas, stream, sigmas=None, x0=None,
                    burn_in=BURN_IN, dense=400, full_traces=False, n_threads=1):
    """Traces of ``s(t)`` and its three-term split, envelopes over
    ``[T/10, T]`` and the cross-replica variance of ``T^{-1/2} int_0^T gb``.

    ``stream`` may be a list of streams; replicas are then split evenly
    across them (and run on ``n_threads`` workers) with results independent
    of the thread count. ``sigmas`` may carry ``embedded``, ``tilde`` and
    ``time`` :class:`SigmaEstimate` objects; ``sigma_bar`` is formed from
    the first two.
    """
    if horizon_t <= math.e:
        raise PreconditionError("horizon must exceed e")
    gb = _gbar(g)
    if gb.lipschitz == 0:
        raise PreconditionError("observable must be non-constant")
    lam = model.jump_rate
    dyadic, times = lil_checkpoints(horizon_t, dense)
    tr = _traces_parallel(model, gb, times, n_replicas, stream, x0, burn_in, n_threads)
    n = tr.count
    norm_n = lil_norm(n)
    safe = np.where(np.isnan(norm_n), 1.0, norm_n)
    zero = np.isnan(norm_n)
    s = _normalise(tr.integral, times[:, None])
    i1 = np.where(zero, 0.0, tr.mart / safe)
    i2 = np.where(zero, 0.0, tr.rem / safe)
    i3 = np.where(zero, 0.0, tr.gsum / lam / safe)
    pref = np.where(zero, np.nan, safe / lil_norm(times)[:, None])
    i2_bound = np.where(zero, np.inf, gb.sup_norm * tr.rem_dt / safe)

    last = times >= horizon_t / 10.0
    data = {
        "schema": "lil-report/1",
        "observable": gb.name,
        "horizon": float(horizon_t),
        "replicas": int(n_replicas),
        "jump_rate": lam,
        "envelope": {"sup": np.max(s[last], axis=0).tolist(), "inf": np.min(s[last], axis=0).tolist()},
        "remainder": {"max_abs_last_decade": float(np.max(np.abs(i2[last]))),
                      "bound_holds": bool(np.all(np.abs(i2) <= i2_bound * (1 + 1e-9) + 1e-15))},
        "renewal": {"N_T_over_T": (n[-1] / horizon_t).tolist(),
                    "prefactor_T": pref[-1].tolist(), "sqrt_lambda": math.sqrt(lam)},
    }
    clt = tr.integral[-1] / math.sqrt(horizon_t)
    if n_replicas >= 2:
        v = float(np.var(clt, ddof=1))
        data["clt"] = {"variance": v, "variance_se": v * math.sqrt(2.0 / (n_replicas - 1)),
                       "mean": float(clt.mean())}
    if sigmas:
        sig = {k: val.to_dict() for k, val in sigmas.items()}
        if "embedded" in sigmas and "tilde" in sigmas:
            sb = sigma_bar(sigmas["embedded"].value, sigmas["tilde"].value, lam)
            sig["bar"] = {"value": sb, "se": sigma_bar_se(sigmas["embedded"].se,
                                                          sigmas["tilde"].se, lam)}
            data["envelope"]["normalized_sup"] = (np.array(data["envelope"]["sup"]) / sb).tolist()
            if "clt" in data:
                data["clt"]["ratio_to_sigma_bar_sq"] = data["clt"]["variance"] / sb ** 2
        if "time" in sigmas and "clt" in data:
            data["clt"]["ratio_to_sigma_time_sq"] = data["clt"]["variance"] / sigmas["time"].value ** 2
        data["sigma"] = sig
    keep = np.isin(times, dyadic) if not full_traces else np.ones(len(times), bool)
    data["traces"] = {"t": times[keep].tolist(), "N": n[keep].tolist(), "s": s[keep].tolist(),
                      "I1": i1[keep].tolist(), "I2": i2[keep].tolist(), "I3": i3[keep].tolist(),
                      "prefactor": np.nan_to_num(pref[keep], nan=0.0).tolist(),
                      "M": tr.mart[keep].tolist()}
    return LilReport(data)
