"""Probe-based verification of the regularity conditions A1-A5.

The conditions quantify over all states, indices and times, so they can
only be spot-checked. Each check evaluates the inequality on a probe set
and reports the worst margin ``rhs - lhs`` with the pair that attains it.
A check passes when that margin is at least ``-tol``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import qmc

from . import quadrature
from .errors import PreconditionError
from .model import norm

T_MAX_FACTOR = 40.0
A1_CAP = 1e6


@dataclass
class ProbeSet:
    y1: np.ndarray
    i1: np.ndarray
    y2: np.ndarray
    i2: np.ndarray
    t: np.ndarray

    def __len__(self):
        return len(self.y1)


def probe_pairs(model, n=1024, seed=0, edge=True, diagonal=False):
    """Scrambled Sobol pairs over the box of ``Y``.

    ``edge`` adds pairs straddling the box corners at shrinking gaps;
    ``diagonal`` adds zero-distance pairs.
    """
    d, m = model.dim, model.num_flows
    u = qmc.Sobol(2 * d + 3, scramble=True, seed=seed).random(n)
    lo, hi = model.state_low, model.state_high
    y1 = lo + (hi - lo) * u[:, :d]
    y2 = lo + (hi - lo) * u[:, d:2 * d]
    i1 = 1 + np.minimum((u[:, 2 * d] * m).astype(np.int64), m - 1)
    i2 = 1 + np.minimum((u[:, 2 * d + 1] * m).astype(np.int64), m - 1)
    t = -np.log1p(-u[:, 2 * d + 2] * (1 - math.exp(-T_MAX_FACTOR))) / model.jump_rate
    extra = []
    if edge:
        for corner, sign in ((lo, 1.0), (hi, -1.0)):
            for gap in 10.0 ** -np.arange(1, 9):
                extra.append((corner, corner + sign * gap * (hi - lo)))
    if diagonal:
        extra += [(y1[k], y1[k]) for k in range(min(n, 8))]
    if extra:
        ey1 = np.array([a for a, _ in extra])
        ey2 = np.array([b for _, b in extra])
        k = len(ey1)
        ei = 1 + np.arange(k) % m
        y1, y2 = np.vstack([y1, ey1]), np.vstack([y2, ey2])
        i1, i2 = np.concatenate([i1, ei]), np.concatenate([i2, ei])
        t = np.concatenate([t, np.linspace(0.0, 5.0 / model.jump_rate, k)])
    return ProbeSet(y1, i1, y2, i2, t)


@dataclass
class CheckResult:
    passed: bool
    margin: float
    witness: dict | None = None
    note: str = ""
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"pass": self.passed, "margin": self.margin, "witness": self.witness,
                "note": self.note, **({"details": self.details} if self.details else {})}


@dataclass
class ConditionReport:
    model: str
    model_hash: str
    n_probes: int
    tol: float
    int_tol: float
    balance: dict
    checks: dict

    @property
    def passed(self):
        return self.balance["pass"] and all(c.passed for c in self.checks.values())

    def failing(self):
        return [k for k, c in self.checks.items() if not c.passed]

    def to_dict(self):
        return {"model": self.model, "model_hash": self.model_hash,
                "n_probes": self.n_probes, "tol": self.tol, "int_tol": self.int_tol,
                "balance": self.balance, "pass": self.passed,
                "conditions": {k: c.to_dict() for k, c in self.checks.items()}}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _relative(lhs, rhs):
    pos = rhs > 0
    return float(np.min((rhs[pos] - lhs[pos]) / rhs[pos])) if np.any(pos) else math.nan


def _worst(lhs, rhs, probes, tol, extra=None, note=""):
    margin = rhs - lhs
    k = int(np.argmin(margin))
    witness = {"y1": probes.y1[k].tolist(), "i1": int(probes.i1[k]),
               "y2": probes.y2[k].tolist(), "i2": int(probes.i2[k]),
               "lhs": float(lhs[k]), "rhs": float(rhs[k])}
    if extra is not None:
        witness.update({key: (float(v[k]) if np.ndim(v) else v) for key, v in extra.items()})
    worst = float(margin[k])
    return CheckResult(worst >= -tol, worst, witness, note,
                       details={"relative_margin": _relative(lhs, rhs)})


def _theta_rule(model, smooth):
    sp = model.theta_space
    return sp.quadrature(64) if smooth else sp.fine_grid(4000)


def _over_theta(fn, th, wt, n, chunk=256):
    """Row-wise ``sum_k wt_k fn(rows, th_k)`` in chunks of probes."""
    out = np.empty(n)
    for s in range(0, n, chunk):
        rows = np.arange(s, min(n, s + chunk))
        rr = np.repeat(rows, len(th))
        tt = np.tile(th, len(rows))
        out[rows] = fn(rr, tt).reshape(len(rows), len(th)) @ wt
    return out


def check_a1(model, probes, cap=A1_CAP, tol=1e-6):
    """Sup over probes of the weighted (2+r)-moment integral, truncated at
    ``t_max = 40 / lambda``. Finiteness is proxied by staying below ``cap``."""
    c = model.constants
    lam, r = model.jump_rate, c.r
    ybar = model.y_bar
    t_max = T_MAX_FACTOR / lam
    th, wt = _theta_rule(model, smooth=True)
    ys = np.vstack([probes.y1, probes.y2])
    is_ = np.concatenate([probes.i1, probes.i2])
    n = len(ys)

    def fn(idx, s):
        k = s.shape[1]
        ss = s.ravel()
        ii = np.repeat(is_[idx], k)
        at_bar = model.flow(ss, np.repeat(ybar[None, :], len(ss), axis=0), ii)
        moved = model.flow(ss, np.repeat(ys[idx], k, axis=0), ii)
        q = len(th)
        tt = np.tile(th, len(ss))
        img = model.jump_map(tt, np.repeat(at_bar, q, axis=0))
        dens = model.density.pdf(np.repeat(moved, q, axis=0), tt)
        inner = (norm(img - ybar) ** (2 + r) * dens).reshape(len(ss), q) @ wt
        return np.exp(-lam * s) * inner.reshape(s.shape)

    vals = quadrature.integrate(fn, np.zeros(n), np.full(n, t_max), tol=tol, panels=8)
    k = int(np.argmax(vals))
    sup = float(vals[k])
    tail = math.exp(-lam * t_max) * sup * lam
    witness = {"y": ys[k].tolist(), "i": int(is_[k]), "value": sup}
    return CheckResult(sup < cap, cap - sup, witness,
                       note=f"finiteness proxied by cap {cap:g}; tail bound {tail:.3g}",
                       details={"t_max": t_max, "sup": sup, "tail_bound": tail, "cap": cap})


def check_a2(model, probes, tol=1e-8):
    c = model.constants
    lhs = norm(model.flow(probes.t, probes.y1, probes.i1)
               - model.flow(probes.t, probes.y2, probes.i2))
    dy = norm(probes.y1 - probes.y2)
    rhs = c.L * np.exp(c.alpha * probes.t) * dy + probes.t * c.L_bar * (probes.i1 != probes.i2)
    return _worst(lhs, rhs, probes, tol, extra={"t": probes.t})


def check_a3(model, probes, tol=1e-6):
    c = model.constants
    th, wt = _theta_rule(model, smooth=False)
    y1, y2 = probes.y1, probes.y2

    def fn(rr, tt):
        gap = norm(model.jump_map(tt, y1[rr]) - model.jump_map(tt, y2[rr]))
        return model.density.pdf(y1[rr], tt) * gap ** (2 + c.r)

    lhs = _over_theta(fn, th, wt, len(probes))
    rhs = c.L_w * norm(y1 - y2) ** (2 + c.r)
    return _worst(lhs, rhs, probes, tol)


def check_a4(model, probes, tol=1e-8, int_tol=1e-6):
    c = model.constants
    y1, y2 = probes.y1, probes.y2
    dy = norm(y1 - y2)
    worst = None
    for i in range(1, model.num_flows + 1):
        ii = np.full(len(probes), i)
        p1 = np.broadcast_to(model.switching(ii, y1), (len(probes), model.num_flows))
        p2 = np.broadcast_to(model.switching(ii, y2), (len(probes), model.num_flows))
        res = _worst(np.abs(p1 - p2).sum(axis=1), c.L_pi * dy, probes, tol, extra={"row": i})
        if worst is None or res.margin < worst.margin:
            worst = res
    th, wt = _theta_rule(model, smooth=False)
    lhs = _over_theta(lambda rr, tt: np.abs(model.density.pdf(y1[rr], tt)
                                            - model.density.pdf(y2[rr], tt)), th, wt, len(probes))
    dens = _worst(lhs, c.L_p * dy, probes, int_tol)
    return CheckResult(worst.passed and dens.passed, min(worst.margin, dens.margin),
                       worst.witness if worst.margin <= dens.margin else dens.witness,
                       details={"switching": worst.to_dict(), "density": dens.to_dict()})


def theta_overlap_set(model, theta, y1, y2, rel=1e-9, abs_tol=1e-12):
    """Indicator of ``||w(y1) - w(y2)|| <= L_w ||y1 - y2||`` row-wise, with a
    rounding allowance so equality cases count as members."""
    gap = norm(model.jump_map(theta, y1) - model.jump_map(theta, y2))
    bound = model.constants.L_w * norm(y1 - y2)
    return gap <= bound * (1.0 + rel) + abs_tol


def check_a5(model, probes, tol=1e-8, int_tol=1e-6):
    c = model.constants
    y1, y2, i1, i2 = probes.y1, probes.y2, probes.i1, probes.i2
    n, m = len(probes), model.num_flows
    p1 = np.broadcast_to(model.switching(i1, y1), (n, m))
    p2 = np.broadcast_to(model.switching(i2, y2), (n, m))
    sw = _worst(np.full(n, c.delta_pi), np.minimum(p1, p2).sum(axis=1), probes, tol)
    th, wt = _theta_rule(model, smooth=False)

    def fn(rr, tt):
        inside = theta_overlap_set(model, tt, y1[rr], y2[rr])
        return inside * np.minimum(model.density.pdf(y1[rr], tt), model.density.pdf(y2[rr], tt))

    overlap = _over_theta(fn, th, wt, n)
    dens = _worst(np.full(n, c.delta_p), overlap, probes, int_tol)
    return CheckResult(sw.passed and dens.passed, min(sw.margin, dens.margin),
                       sw.witness if sw.margin <= dens.margin else dens.witness,
                       details={"switching": sw.to_dict(), "density": dens.to_dict()})


def check_conditions(model, probes: ProbeSet | None = None, tol=1e-8, int_tol=1e-6,
                     n_probes=1024, seed=0, a1_cap=A1_CAP) -> ConditionReport:
    """Evaluate A1-A5 and the balance inequality on a probe set.

    ``tol`` applies to closed-form inequalities and ``int_tol`` to those
    involving a quadrature over theta or time. Raising either never turns a
    pass into a fail.
    """
    if probes is None:
        probes = probe_pairs(model, n_probes, seed)
    if len(probes) == 0:
        raise PreconditionError("probe set is empty")
    bal = model.constants.balance_value(model.jump_rate)
    checks = {
        "A1": check_a1(model, probes, a1_cap),
        "A2": check_a2(model, probes, tol),
        "A3": check_a3(model, probes, int_tol),
        "A4": check_a4(model, probes, tol, int_tol),
        "A5": check_a5(model, probes, tol, int_tol),
    }
    return ConditionReport(model.name, model.hash(), len(probes), tol, int_tol,
                           {"value": bal, "pass": bool(bal < 1), "margin": 1.0 - bal}, checks)
