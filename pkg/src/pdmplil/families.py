"""Built-in closed-form families for the pieces of a switched-flow model.

All maps are vectorised: states come in as ``(n, d)`` float arrays, flow
indices as ``(n,)`` integer arrays holding values in ``1..m``, jump
parameters as ``(n,)`` arrays.
"""
from __future__ import annotations

import numpy as np
from scipy import stats

from .errors import ConfigError, RejectionStall

# --------------------------------------------------------------------------
# Parameter space Theta


class ThetaSpace:
    """Either an interval ``[low, high]`` with Lebesgue measure or a finite
    set of atoms with counting measure."""

    def __init__(self, kind="interval", low=0.0, high=1.0, atoms=None):
        if kind not in ("interval", "finite"):
            raise ConfigError(f"unknown theta space kind {kind!r}")
        self.kind = kind
        if kind == "interval":
            if not high > low:
                raise ConfigError("theta interval needs high > low")
            self.low, self.high = float(low), float(high)
            self.atoms = None
        else:
            if atoms is None or len(atoms) == 0:
                raise ConfigError("finite theta space needs atoms")
            self.atoms = np.asarray(atoms, dtype=float)
            self.low, self.high = float(self.atoms.min()), float(self.atoms.max())

    @property
    def measure(self):
        if self.kind == "interval":
            return self.high - self.low
        return float(len(self.atoms))

    def quadrature(self, n=64):
        """Nodes and weights integrating against the reference measure."""
        if self.kind == "finite":
            return self.atoms.copy(), np.ones(len(self.atoms))
        x, w = np.polynomial.legendre.leggauss(n)
        half = 0.5 * (self.high - self.low)
        return self.low + half * (x + 1.0), half * w

    def fine_grid(self, n=4000):
        """Midpoint grid, for integrands with indicator factors."""
        if self.kind == "finite":
            return self.atoms.copy(), np.ones(len(self.atoms))
        h = (self.high - self.low) / n
        return self.low + h * (np.arange(n) + 0.5), np.full(n, h)

    def contains(self, theta):
        theta = np.asarray(theta)
        if self.kind == "interval":
            return (theta >= self.low) & (theta <= self.high)
        return np.isin(theta, self.atoms)

    def to_config(self):
        if self.kind == "interval":
            return {"kind": "interval", "low": self.low, "high": self.high}
        return {"kind": "finite", "atoms": self.atoms.tolist()}


# --------------------------------------------------------------------------
# Semiflows


class RelaxationFlow:
    """Exponential relaxation ``S_i(t, y) = y* + (y - y*) e^{-k t}``.

    A rate of zero gives the identity flow. The update is written as
    ``y e^{-kt} - y* expm1(-kt)`` so that ``S_i(0, y) == y`` bit-exactly.
    """

    family = "relaxation"

    def __init__(self, rates, targets):
        self.rates = np.atleast_1d(np.asarray(rates, dtype=float))
        self.targets = np.atleast_2d(np.asarray(targets, dtype=float))
        if self.targets.shape[0] != len(self.rates):
            raise ConfigError("relaxation flow: one target per rate required")
        if np.any(self.rates < 0):
            raise ConfigError("relaxation rates must be nonnegative")

    @property
    def num_flows(self):
        return len(self.rates)

    def __call__(self, t, y, i):
        k = self.rates[i - 1]
        e = np.exp(-k * t)[:, None]
        em1 = np.expm1(-k * t)[:, None]
        return y * e - self.targets[i - 1] * em1

    def segment_integral_affine(self, a, b, y, i, t):
        """Closed form of int_0^t (a_i + b_i . S_i(s, y)) ds."""
        k = self.rates[i - 1]
        ys = self.targets[i - 1]
        lin = np.einsum("nd,nd->n", b[i - 1], ys)
        dev = np.einsum("nd,nd->n", b[i - 1], y - ys)
        with np.errstate(divide="ignore", invalid="ignore"):
            frac = np.where(k > 0, -np.expm1(-k * t) / np.where(k > 0, k, 1.0), t)
        return (a[i - 1] + lin) * t + dev * frac

    def laplace_affine(self, a, b, y, i, lam):
        """Closed form of int_0^inf lam e^{-lam t} (a_i + b_i . S_i(t, y)) dt."""
        k = self.rates[i - 1]
        ys = self.targets[i - 1]
        lin = np.einsum("nd,nd->n", b[i - 1], ys)
        dev = np.einsum("nd,nd->n", b[i - 1], y - ys)
        return a[i - 1] + lin + dev * lam / (lam + k)

    def to_config(self):
        return {"family": self.family, "rates": self.rates.tolist(),
                "targets": self.targets.tolist()}


class CallableFlow:
    family = "callable"

    def __init__(self, fn, num_flows):
        self.fn = fn
        self._m = num_flows

    @property
    def num_flows(self):
        return self._m

    def __call__(self, t, y, i):
        return self.fn(t, y, i)

    def to_config(self):
        return {"family": self.family}


# --------------------------------------------------------------------------
# Jump maps


class AffineJump:
    """``w_theta(y) = scale * y + theta_coef * theta + offset``."""

    family = "affine"

    def __init__(self, scale, theta_coef=0.0, offset=0.0):
        self.scale = float(scale)
        self.theta_coef = np.atleast_1d(np.asarray(theta_coef, dtype=float))
        self.offset = np.atleast_1d(np.asarray(offset, dtype=float))

    def __call__(self, theta, y):
        return self.scale * y + theta[:, None] * self.theta_coef + self.offset

    def to_config(self):
        return {"family": self.family, "scale": self.scale,
                "theta_coef": self.theta_coef.tolist(), "offset": self.offset.tolist()}


class SqrtJump:
    """``w_theta(y) = sqrt(y) + theta_coef * theta``; not Lipschitz at 0."""

    family = "sqrt"

    def __init__(self, theta_coef=0.0):
        self.theta_coef = np.atleast_1d(np.asarray(theta_coef, dtype=float))

    def __call__(self, theta, y):
        return np.sqrt(np.maximum(y, 0.0)) + theta[:, None] * self.theta_coef

    def to_config(self):
        return {"family": self.family, "theta_coef": self.theta_coef.tolist()}


class CallableJump:
    family = "callable"

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, theta, y):
        return self.fn(theta, y)

    def to_config(self):
        return {"family": self.family}


# --------------------------------------------------------------------------
# Densities on Theta (with respect to its reference measure)


class UniformDensity:
    family = "uniform"
    state_dependent = False

    def __init__(self, space):
        self.space = space

    def pdf(self, y, theta):
        inside = self.space.contains(theta)
        return np.where(inside, 1.0 / self.space.measure, 0.0)

    def sample(self, rng, y):
        n = len(y)
        if self.space.kind == "finite":
            return self.space.atoms[rng.integers(0, len(self.space.atoms), size=n)]
        return self.space.low + (self.space.high - self.space.low) * rng.random(n)

    def to_config(self):
        return {"family": self.family}


class BetaDensity:
    """Beta(a, b) rescaled to the interval Theta; state independent."""

    family = "beta"
    state_dependent = False

    def __init__(self, space, a, b):
        if space.kind != "interval":
            raise ConfigError("beta density needs an interval theta space")
        self.space, self.a, self.b = space, float(a), float(b)
        self._dist = stats.beta(self.a, self.b, loc=space.low, scale=space.measure)

    def pdf(self, y, theta):
        return self._dist.pdf(theta)

    def sample(self, rng, y):
        u = rng.random(len(y))
        return self._dist.ppf(u)

    def to_config(self):
        return {"family": self.family, "a": self.a, "b": self.b}


class TiltDensity:
    """Linear tilt on an interval: ``p(y, theta) = (1 + s(y)(2u - 1)) / |Theta|``
    with ``u`` the relative position of theta and
    ``s(y) = strength * tanh(y_0 - center)``, ``|strength| <= 1``."""

    family = "tilt"
    state_dependent = True

    def __init__(self, space, strength, center=0.0):
        if space.kind != "interval":
            raise ConfigError("tilt density needs an interval theta space")
        if abs(strength) > 1:
            raise ConfigError("tilt strength must lie in [-1, 1]")
        self.space, self.strength, self.center = space, float(strength), float(center)

    def slope(self, y):
        return self.strength * np.tanh(y[:, 0] - self.center)

    def pdf(self, y, theta):
        u = (theta - self.space.low) / self.space.measure
        s = self.slope(y)
        val = (1.0 + s * (2.0 * u - 1.0)) / self.space.measure
        return np.where((u >= 0) & (u <= 1), val, 0.0)

    def sample(self, rng, y):
        s = self.slope(y)
        v = rng.random(len(y))
        # root of s u^2 + (1 - s) u - v = 0 in [0, 1], cancellation-free
        u = 2.0 * v / ((1.0 - s) + np.sqrt((1.0 - s) ** 2 + 4.0 * s * v))
        return self.space.low + self.space.measure * np.clip(u, 0.0, 1.0)

    def to_config(self):
        return {"family": self.family, "strength": self.strength, "center": self.center}


class CallableDensity:
    """General density sampled by rejection against a uniform envelope."""

    family = "callable"

    def __init__(self, space, fn, cap, state_dependent=True):
        self.space, self.fn, self.cap = space, fn, float(cap)
        self.state_dependent = state_dependent

    def pdf(self, y, theta):
        return self.fn(y, theta)

    def sample(self, rng, y, min_rate=1e-4, max_rounds=64):
        n = len(y)
        out = np.empty(n)
        todo = np.arange(n)
        proposed = accepted = 0
        uniform = UniformDensity(self.space)
        for _ in range(max_rounds):
            if len(todo) == 0:
                return out
            th = uniform.sample(rng, y[todo])
            val = self.fn(y[todo], th)
            if np.any(val > self.cap * (1 + 1e-12)):
                raise ConfigError("density exceeds its declared cap")
            ok = rng.random(len(todo)) * self.cap < val
            out[todo[ok]] = th[ok]
            proposed += len(todo)
            accepted += int(ok.sum())
            todo = todo[~ok]
            if proposed >= 1000 and accepted / proposed < min_rate:
                break
        if len(todo):
            raise RejectionStall(
                f"rejection acceptance {accepted}/{proposed} below {min_rate}")
        return out

    def to_config(self):
        return {"family": self.family, "cap": self.cap}


# --------------------------------------------------------------------------
# Switching matrices


class ConstantSwitching:
    family = "constant"

    def __init__(self, matrix):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))

    @property
    def num_flows(self):
        return self.matrix.shape[0]

    def __call__(self, i, y):
        return self.matrix[i - 1]

    def to_config(self):
        return {"family": self.family, "matrix": self.matrix.tolist()}


class TanhPairSwitching:
    """Two flows. From flow 1 go to flow 1 with probability q(y), from flow 2
    stay in flow 2 with probability q(y), where
    ``q(y) = base + amp * tanh(y_0 - center)``."""

    family = "tanh_pair"
    num_flows = 2

    def __init__(self, base=0.5, amp=0.2, center=0.0):
        if not (0 <= base - abs(amp) and base + abs(amp) <= 1):
            raise ConfigError("tanh_pair switching leaves [0, 1]")
        self.base, self.amp, self.center = float(base), float(amp), float(center)

    def __call__(self, i, y):
        q = self.base + self.amp * np.tanh(y[:, 0] - self.center)
        first = np.where(i == 1, q, 1.0 - q)
        out = np.empty((len(first), 2))
        out[:, 0] = first
        out[:, 1] = 1.0 - first
        return out

    def to_config(self):
        return {"family": self.family, "base": self.base, "amp": self.amp,
                "center": self.center}


class CallableSwitching:
    family = "callable"

    def __init__(self, fn, num_flows):
        self.fn = fn
        self.num_flows = num_flows

    def __call__(self, i, y):
        return self.fn(i, y)

    def to_config(self):
        return {"family": self.family}


# --------------------------------------------------------------------------
# Noise laws supported on the open ball B(0, radius)


class NoNoise:
    family = "none"
    radius = 0.0

    def sample(self, rng, n, dim):
        return np.zeros((n, dim))

    def to_config(self):
        return {"family": self.family}


class UniformBallNoise:
    family = "uniform_ball"

    def __init__(self, radius):
        if not radius > 0:
            raise ConfigError("noise radius must be positive")
        self.radius = float(radius)
        self._rmax = np.nextafter(self.radius, 0.0)

    def sample(self, rng, n, dim):
        if dim == 1:
            h = self.radius * (2.0 * rng.random(n) - 1.0)
            return np.clip(h, -self._rmax, self._rmax)[:, None]
        g = rng.standard_normal((n, dim))
        g /= np.linalg.norm(g, axis=1, keepdims=True)
        rad = self._rmax * rng.random(n) ** (1.0 / dim)
        return g * rad[:, None]

    def to_config(self):
        return {"family": self.family, "radius": self.radius}


class TruncatedGaussianNoise:
    family = "truncated_gaussian"

    def __init__(self, sigma, radius):
        if not (sigma > 0 and radius > 0):
            raise ConfigError("truncated gaussian needs sigma > 0 and radius > 0")
        self.sigma, self.radius = float(sigma), float(radius)

    def sample(self, rng, n, dim):
        out = np.empty((n, dim))
        todo = np.arange(n)
        for _ in range(10_000):
            if len(todo) == 0:
                return out
            h = self.sigma * rng.standard_normal((len(todo), dim))
            ok = np.linalg.norm(h, axis=1) < self.radius
            out[todo[ok]] = h[ok]
            todo = todo[~ok]
        raise RejectionStall("truncated gaussian noise: ball has negligible mass")

    def to_config(self):
        return {"family": self.family, "sigma": self.sigma, "radius": self.radius}
