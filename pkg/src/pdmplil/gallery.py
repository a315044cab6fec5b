"""Closed-form reference models and their analytic oracle packs.

Each entry documents why its declared constants satisfy the balance
inequality ``L^(2+r) L_w + (2+r) alpha / lambda < 1``.

relaxation
    m = 1, Y = [0, 12], S(t, y) = y e^{-t}, w_theta(y) = (y + theta)/2 + 0.2,
    theta ~ U[0, 1], noise U(-0.1, 0.1), lambda = 1, r = 1.
    L = 1, alpha = -1, L_w = 1/2:  1 * 0.5 + 3 * (-1) = -2.5 < 1.
two-flow-switch
    m = 2, S_1(t, y) = y e^{-t}, S_2(t, y) = 1 + (y - 1) e^{-t},
    |S_1 - S_2| <= e^{-t} |dy| + (1 - e^{-t}) <= e^{-t}|dy| + t so L_bar = 1.
    Tilted theta density, tanh switching with overlap >= 0.6 >= delta_pi = 0.2.
    Same balance arithmetic as relaxation: -2.5 < 1.
iid-jump
    w_theta(y) = theta, so post-jump states are i.i.d. theta + h.
    L_w = 0.1:  0.1 + 3 * (-1) = -2.9 < 1.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .errors import UnknownGalleryName
from .model import ModelSpec, build_model

_JUMP = {"family": "affine", "scale": 0.5, "theta_coef": [0.5], "offset": [0.2]}

GALLERY_CONFIGS = {
    "relaxation": {
        "name": "relaxation",
        "dim": 1,
        "jump_rate": 1.0,
        "state_space": {"low": [0.0], "high": [12.0]},
        "flows": {"family": "relaxation", "rates": [1.0], "targets": [[0.0]]},
        "jump_map": _JUMP,
        "theta": {"kind": "interval", "low": 0.0, "high": 1.0},
        "density": {"family": "uniform"},
        "switching": {"family": "constant", "matrix": [[1.0]]},
        "noise": {"family": "uniform_ball", "radius": 0.1},
        "constants": {"L": 1.0, "alpha": -1.0, "L_bar": 1.0, "L_w": 0.5,
                      "L_pi": 0.1, "L_p": 0.1, "delta_pi": 0.5, "delta_p": 0.5,
                      "r": 1.0, "c": 1.0, "y_bar": [0.0]},
    },
    "two-flow-switch": {
        "name": "two-flow-switch",
        "dim": 1,
        "jump_rate": 1.0,
        "state_space": {"low": [0.0], "high": [12.0]},
        "flows": {"family": "relaxation", "rates": [1.0, 1.0], "targets": [[0.0], [1.0]]},
        "jump_map": _JUMP,
        "theta": {"kind": "interval", "low": 0.0, "high": 1.0},
        "density": {"family": "tilt", "strength": 0.5, "center": 2.0},
        "switching": {"family": "tanh_pair", "base": 0.5, "amp": 0.2, "center": 2.0},
        "noise": {"family": "uniform_ball", "radius": 0.1},
        "constants": {"L": 1.0, "alpha": -1.0, "L_bar": 1.0, "L_w": 0.5,
                      "L_pi": 0.5, "L_p": 0.3, "delta_pi": 0.2, "delta_p": 0.5,
                      "r": 1.0, "c": 1.0, "y_bar": [0.0]},
    },
    "iid-jump": {
        "name": "iid-jump",
        "dim": 1,
        "jump_rate": 1.0,
        "state_space": {"low": [-0.5], "high": [1.5]},
        "flows": {"family": "relaxation", "rates": [1.0], "targets": [[0.0]]},
        "jump_map": {"family": "affine", "scale": 0.0, "theta_coef": [1.0], "offset": [0.0]},
        "theta": {"kind": "interval", "low": 0.0, "high": 1.0},
        "density": {"family": "uniform"},
        "switching": {"family": "constant", "matrix": [[1.0]]},
        "noise": {"family": "uniform_ball", "radius": 0.1},
        "constants": {"L": 1.0, "alpha": -1.0, "L_bar": 1.0, "L_w": 0.1,
                      "L_pi": 0.1, "L_p": 0.1, "delta_pi": 0.5, "delta_p": 0.5,
                      "r": 1.0, "c": 1.0, "y_bar": [0.5]},
    },
}

GALLERY_NAMES = tuple(GALLERY_CONFIGS)


# --------------------------------------------------------------------------
# Oracle packs: hand-written closed forms, independent of the flow families.


class RelaxationOracle:
    """Closed forms for flows relaxing at unit rate to ``targets[i-1]``."""

    def __init__(self, targets, lam, eps, jump=(0.5, 0.5, 0.2)):
        self.targets = np.asarray(targets, dtype=float).reshape(-1)
        self.lam = lam
        self.eps = eps
        self.jump = jump

    def flow(self, t, y, i):
        tgt = self.targets[np.asarray(i) - 1]
        return tgt + (np.asarray(y) - tgt) * np.exp(-np.asarray(t))

    def segment_integral_y(self, y, i, T):
        """int_0^T S_i(s, y) ds."""
        tgt = self.targets[np.asarray(i) - 1]
        return tgt * T + (np.asarray(y) - tgt) * (1.0 - np.exp(-np.asarray(T)))

    def G_y(self, y, i):
        """G g for g(y, i) = y."""
        tgt = self.targets[np.asarray(i) - 1]
        return tgt + (np.asarray(y) - tgt) * self.lam / (self.lam + 1.0)

    def one_step_mean_y(self, y, i):
        """E[Y_1 | X_0 = (y, i)] for the affine jump map and uniform theta on [0, 1]."""
        scale, coef, offset = self.jump
        return scale * self.G_y(y, i) + coef * 0.5 + offset


def iid_stationary_cdf(x, eps=0.1):
    """CDF of theta + h with theta ~ U[0, 1], h ~ U(-eps, eps), eps <= 1/2."""
    x = np.asarray(x, dtype=float)

    def ramp(z):  # int of the U[0,1] CDF
        return np.where(z <= 0, 0.0, np.where(z >= 1, z - 0.5, 0.5 * z * z))

    return (ramp(x + eps) - ramp(x - eps)) / (2.0 * eps)


@dataclass
class GalleryModel:
    name: str
    model: ModelSpec
    oracle: object
    config: dict = field(repr=False, default_factory=dict)


def gallery_config(name, **overrides):
    if name not in GALLERY_CONFIGS:
        raise UnknownGalleryName(f"unknown gallery model {name!r}; "
                                 f"choose from {', '.join(GALLERY_NAMES)}")
    cfg = copy.deepcopy(GALLERY_CONFIGS[name])
    for key, val in overrides.items():
        if key == "jump_rate":
            cfg["jump_rate"] = float(val)
        elif key == "c":
            cfg["constants"]["c"] = float(val)
        else:
            raise UnknownGalleryName(f"unsupported gallery override {key!r}")
    return cfg


def load_gallery(name: str, **overrides) -> GalleryModel:
    """Load a built-in model; ``overrides`` may set ``jump_rate`` or ``c``."""
    cfg = gallery_config(name, **overrides)
    model = build_model(cfg)
    lam = model.jump_rate
    eps = model.noise.radius
    if name == "iid-jump":
        oracle = RelaxationOracle([0.0], lam, eps, jump=(0.0, 1.0, 0.0))
    else:
        oracle = RelaxationOracle(cfg["flows"]["targets"], lam, eps)
    return GalleryModel(name, model, oracle, cfg)


def identity_model(dim=1, low=-100.0, high=100.0):
    """Degenerate fixture: identity flow, identity jump, no noise, m = 1.

    It cannot satisfy the balance inequality, so it is built unchecked.
    """
    cfg = {
        "name": "identity",
        "dim": dim,
        "jump_rate": 1.0,
        "state_space": {"low": [low] * dim, "high": [high] * dim},
        "flows": {"family": "identity", "num_flows": 1},
        "jump_map": {"family": "affine", "scale": 1.0, "theta_coef": [0.0] * dim,
                     "offset": [0.0] * dim},
        "theta": {"kind": "interval", "low": 0.0, "high": 1.0},
        "density": {"family": "uniform"},
        "switching": {"family": "constant", "matrix": [[1.0]]},
        "noise": {"family": "none"},
        "constants": {"L": 1.0, "alpha": 0.0, "L_bar": 1.0, "L_w": 1.0,
                      "L_pi": 0.1, "L_p": 0.1, "delta_pi": 0.5, "delta_p": 0.5,
                      "r": 1.0, "c": 1.0, "y_bar": [0.0] * dim},
        "unchecked": True,
    }
    return build_model(cfg)
