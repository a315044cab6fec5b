"""Model specification, hybrid states, the metric rho_c and the Lyapunov function."""
from __future__ import annotations

import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import families as fam
from .errors import (BalanceViolation, ConfigError, InvalidRowSum,
                     NoiseSupportTooLarge, StateEscapedY)

log = logging.getLogger(__name__)

ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class Constants:
    """Declared regularity constants of a model."""

    L: float
    alpha: float
    L_bar: float
    L_w: float
    L_pi: float
    L_p: float
    delta_pi: float
    delta_p: float
    r: float = 1.0
    c: float = 1.0
    y_bar: tuple = (0.0,)

    def __post_init__(self):
        for name in ("L", "L_bar", "L_w", "L_pi", "L_p", "delta_pi", "delta_p"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"constant {name} must be positive")
        if not 0 < self.r < 2:
            raise ConfigError("r must lie in (0, 2)")
        if self.c < 1:
            raise ConfigError("metric weight c must be >= 1")
        object.__setattr__(self, "y_bar", tuple(float(v) for v in np.atleast_1d(self.y_bar)))

    def balance_value(self, lam):
        return self.L ** (2 + self.r) * self.L_w + (2 + self.r) * self.alpha / lam

    def to_config(self):
        d = {k: getattr(self, k) for k in
             ("L", "alpha", "L_bar", "L_w", "L_pi", "L_p", "delta_pi", "delta_p", "r", "c")}
        d["y_bar"] = list(self.y_bar)
        return d


@dataclass(frozen=True)
class HybridState:
    """A point ``(y, i)`` of ``X = Y x I``; ``i`` is 1-based."""

    y: np.ndarray
    i: int = 1

    def __post_init__(self):
        object.__setattr__(self, "y", np.atleast_1d(np.asarray(self.y, dtype=float)).copy())
        object.__setattr__(self, "i", int(self.i))
        if self.i < 1:
            raise ConfigError("flow index must be >= 1")

    def __eq__(self, other):
        if not isinstance(other, HybridState):
            return NotImplemented
        return self.i == other.i and np.array_equal(self.y, other.y)

    def __hash__(self):
        return hash((self.i, self.y.tobytes()))

    def to_dict(self):
        return {"y": self.y.tolist(), "i": self.i}


def norm(v):
    """Euclidean norm over the last axis without underflow for tiny vectors."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] == 1:
        return np.abs(v[..., 0])
    return np.hypot.reduce(v, axis=-1)


def rho_c(a: HybridState, b: HybridState, c: float) -> float:
    """``||y_a - y_b|| + c [i_a != i_b]``."""
    return float(norm(a.y - b.y)) + c * float(a.i != b.i)


def rho_c_batch(y1, i1, y2, i2, c):
    return norm(y1 - y2) + c * (i1 != i2)


def lyapunov(x: HybridState, y_bar) -> float:
    return float(norm(x.y - np.asarray(y_bar, dtype=float)))


def lyapunov_batch(y, y_bar):
    return norm(y - np.asarray(y_bar, dtype=float))


@dataclass(frozen=True)
class ModelSpec:
    """Complete description of one switched-flow model.

    Immutable; safe to share between workers. Construction verifies the
    balance inequality on the declared constants unless ``unchecked`` is set
    (used only for degenerate test fixtures such as identity dynamics).
    """

    name: str
    dim: int
    flow: object
    theta_space: fam.ThetaSpace
    jump_map: object
    density: object
    switching: object
    noise: object
    jump_rate: float
    constants: Constants
    state_low: np.ndarray
    state_high: np.ndarray
    config: dict | None = field(default=None, compare=False)
    unchecked: bool = False

    def __post_init__(self):
        object.__setattr__(self, "state_low", np.atleast_1d(np.asarray(self.state_low, float)))
        object.__setattr__(self, "state_high", np.atleast_1d(np.asarray(self.state_high, float)))
        if not self.jump_rate > 0:
            raise ConfigError("jump rate must be positive")
        if self.flow.num_flows != self.switching.num_flows:
            raise ConfigError("flow and switching disagree on the number of flows")
        if len(self.state_low) != self.dim or len(self.state_high) != self.dim:
            raise ConfigError("state box dimension mismatch")
        if self.unchecked:
            log.warning("model %s built without balance check", self.name)
            return
        val = self.constants.balance_value(self.jump_rate)
        if not val < 1:
            raise BalanceViolation(
                f"L^(2+r) L_w + (2+r) alpha/lambda = {val:.6g} is not < 1")

    @property
    def num_flows(self):
        return self.flow.num_flows

    @property
    def y_bar(self):
        return np.asarray(self.constants.y_bar)

    def contains(self, y, tol=1e-12):
        """Membership of rows of ``y`` in the closed box ``Y``."""
        y = np.atleast_2d(y)
        scale = tol * (1.0 + np.abs(self.state_high - self.state_low))
        return np.all((y >= self.state_low - scale) & (y <= self.state_high + scale), axis=1)

    def require_inside(self, y):
        slack = 1e-12 * (1.0 + self.state_high - self.state_low)
        if y.min() >= self.state_low[0] - slack[0] and y.max() <= self.state_high[0] + slack[0] \
                and self.dim == 1:
            return
        ok = self.contains(y)
        if not np.all(ok):
            bad = np.atleast_2d(y)[~ok][0]
            raise StateEscapedY(f"state {bad.tolist()} left Y of model {self.name}")

    def box_probes(self, n, rng):
        return self.state_low + (self.state_high - self.state_low) * rng.random((n, self.dim))

    def to_config(self):
        if self.config is not None:
            return copy.deepcopy(self.config)
        raise ConfigError("model built from callables has no config representation")

    def hash(self):
        try:
            cfg = self.to_config()
        except ConfigError:
            cfg = {"name": self.name, "callable": True}
        blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# --------------------------------------------------------------------------
# Declarative construction


def _theta_from(cfg):
    return fam.ThetaSpace(cfg.get("kind", "interval"), cfg.get("low", 0.0),
                          cfg.get("high", 1.0), cfg.get("atoms"))


def _flow_from(cfg, dim):
    family = cfg.get("family")
    if family == "relaxation":
        targets = cfg.get("targets", [[0.0] * dim] * len(cfg["rates"]))
        return fam.RelaxationFlow(cfg["rates"], targets)
    if family == "identity":
        m = int(cfg.get("num_flows", 1))
        return fam.RelaxationFlow([0.0] * m, [[0.0] * dim] * m)
    raise ConfigError(f"unknown flow family {family!r}")


def _jump_from(cfg):
    family = cfg.get("family")
    if family == "affine":
        return fam.AffineJump(cfg["scale"], cfg.get("theta_coef", 0.0), cfg.get("offset", 0.0))
    if family == "sqrt":
        return fam.SqrtJump(cfg.get("theta_coef", 0.0))
    raise ConfigError(f"unknown jump map family {family!r}")


def _density_from(cfg, space):
    family = cfg.get("family", "uniform")
    if family == "uniform":
        return fam.UniformDensity(space)
    if family == "beta":
        return fam.BetaDensity(space, cfg["a"], cfg["b"])
    if family == "tilt":
        return fam.TiltDensity(space, cfg["strength"], cfg.get("center", 0.0))
    raise ConfigError(f"unknown density family {family!r}")


def _switching_from(cfg):
    family = cfg.get("family", "constant")
    if family == "constant":
        return fam.ConstantSwitching(cfg["matrix"])
    if family == "tanh_pair":
        return fam.TanhPairSwitching(cfg.get("base", 0.5), cfg.get("amp", 0.2),
                                     cfg.get("center", 0.0))
    raise ConfigError(f"unknown switching family {family!r}")


def _noise_from(cfg):
    family = cfg.get("family", "none")
    if family == "none":
        return fam.NoNoise()
    if family == "uniform_ball":
        return fam.UniformBallNoise(cfg["radius"])
    if family == "truncated_gaussian":
        return fam.TruncatedGaussianNoise(cfg["sigma"], cfg["radius"])
    raise ConfigError(f"unknown noise family {family!r}")


def _check_rows(model, n_probe=65):
    grid = np.linspace(model.state_low, model.state_high, n_probe)
    for i in range(1, model.num_flows + 1):
        rows = np.atleast_2d(model.switching(np.full(len(grid), i), grid))
        if rows.shape[0] == 1:
            rows = np.broadcast_to(rows, (len(grid), rows.shape[1]))
        if np.any(rows < 0) or np.any(rows > 1):
            raise InvalidRowSum(f"switching row {i} leaves [0, 1]")
        err = np.max(np.abs(rows.sum(axis=1) - 1.0))
        if err > ROW_SUM_TOL:
            raise InvalidRowSum(f"switching row {i} sums to 1 {err:+.3g}")


def _check_jump_range(model, n_probe=65):
    """Worst-case check that w_theta(Y) + B(0, eps) stays inside the box Y."""
    ys = np.linspace(model.state_low, model.state_high, n_probe)
    th, _ = model.theta_space.quadrature(17)
    th = np.concatenate([th, [model.theta_space.low, model.theta_space.high]])
    yy = np.repeat(ys, len(th), axis=0)
    tt = np.tile(th, len(ys))
    img = model.jump_map(tt, yy)
    eps = model.noise.radius
    lo_ok = img.min(axis=0) - eps >= model.state_low - 1e-12
    hi_ok = img.max(axis=0) + eps <= model.state_high + 1e-12
    if not (np.all(lo_ok) and np.all(hi_ok)):
        if np.all(model.contains(img)):
            raise NoiseSupportTooLarge(
                f"noise radius {eps} pushes jump images out of Y")
        raise ConfigError("jump map sends Y outside Y")


def build_model(raw: dict, *, unchecked: bool = False) -> ModelSpec:
    """Build a validated :class:`ModelSpec` from a nested config mapping.

    Raises ``BalanceViolation``, ``InvalidRowSum`` or ``NoiseSupportTooLarge``
    when the config is inconsistent.
    """
    cfg = copy.deepcopy(raw)
    try:
        dim = int(cfg.get("dim", 1))
        space = _theta_from(cfg.get("theta", {}))
        consts = dict(cfg["constants"])
        consts.setdefault("y_bar", [0.0] * dim)
        model = ModelSpec(
            name=cfg.get("name", "custom"),
            dim=dim,
            flow=_flow_from(cfg["flows"], dim),
            theta_space=space,
            jump_map=_jump_from(cfg["jump_map"]),
            density=_density_from(cfg.get("density", {}), space),
            switching=_switching_from(cfg["switching"]),
            noise=_noise_from(cfg.get("noise", {})),
            jump_rate=float(cfg["jump_rate"]),
            constants=Constants(**consts),
            state_low=cfg["state_space"]["low"],
            state_high=cfg["state_space"]["high"],
            config=cfg,
            unchecked=unchecked or bool(cfg.get("unchecked", False)),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"incomplete model config: {exc}") from exc
    _check_rows(model)
    _check_jump_range(model)
    return model
