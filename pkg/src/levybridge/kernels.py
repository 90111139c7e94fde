"""Marginal densities of the three Levy families and the bridge kernels built on them.

All evaluators broadcast over array arguments. The bridge kernels are

* ``rn_derivative``: ``f_{r-t}(z - x_t) / f_r(z)``, the density of the bridge
  law against the free process on ``F_t``;
* ``bridge_transition_density``: ``f_{t-s}(y - x) f_{r-t}(z - y) / f_{r-s}(z - x)``;
* ``finite_dim_density``: the joint density of the bridge at ``t_1 < ... < t_n``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import ClassVar, Union

import numpy as np
from scipy.special import gammaln, xlogy

from .errors import DegeneratePin, PreconditionError, UnreachableState
from .quadrature import DEFAULT_QUADRATURE, QuadratureConfig
from .stable import stable_density, stable_table


def _as_array(x):
    return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class BrownianDrift:
    """sigma * W_t + drift * t; X_t ~ N(drift t, sigma^2 t)."""

    sigma: float = 1.0
    drift: float = 0.0
    family: ClassVar[str] = "brownian"
    is_subordinator: ClassVar[bool] = False

    def __post_init__(self):
        if not self.sigma > 0:
            raise PreconditionError("sigma must be positive")
        if not math.isfinite(self.drift):
            raise PreconditionError("drift must be finite")

    def logpdf(self, t, x):
        t, x = _as_array(t), _as_array(x)
        var = self.sigma ** 2 * t
        d = x - self.drift * t
        return -0.5 * d * d / var - 0.5 * np.log(2.0 * math.pi * var)

    def pdf(self, t, x):
        return np.exp(self.logpdf(t, x))

    def spread(self, t):
        return self.sigma * np.sqrt(t)

    def to_dict(self):
        return {"family": self.family, "sigma": self.sigma, "drift": self.drift}


@dataclass(frozen=True)
class GammaSubordinator:
    """Gamma process: X_t ~ Gamma(shape = rate * t, scale)."""

    rate: float = 1.0
    scale: float = 1.0
    family: ClassVar[str] = "gamma"
    is_subordinator: ClassVar[bool] = True

    def __post_init__(self):
        if not (self.rate > 0 and self.scale > 0):
            raise PreconditionError("rate and scale must be positive")

    def logpdf(self, t, x):
        t, x = _as_array(t), _as_array(x)
        k = self.rate * t
        pos = x > 0
        xs = np.where(pos, x, 1.0)
        val = xlogy(k - 1.0, xs) - xs / self.scale - gammaln(k) - k * math.log(self.scale)
        return np.where(pos, val, -np.inf)

    def pdf(self, t, x):
        return np.exp(self.logpdf(t, x))

    def spread(self, t):
        return self.scale * np.sqrt(self.rate * t)

    def to_dict(self):
        return {"family": self.family, "rate": self.rate, "scale": self.scale}


@dataclass(frozen=True)
class SymmetricStable:
    """Symmetric alpha-stable process with characteristic exponent -|u|^alpha.

    ``alpha == 1`` is the Cauchy process; ``alpha == 2`` (the Gaussian
    N(0, 2t)) is admitted only as a cross-check case.
    """

    alpha: float = 1.5
    quadrature: QuadratureConfig = field(default=DEFAULT_QUADRATURE, compare=False)
    family: ClassVar[str] = "stable"
    is_subordinator: ClassVar[bool] = False

    def __post_init__(self):
        if not (0.0 < self.alpha <= 2.0):
            raise PreconditionError("alpha must lie in (0, 1) u (1, 2]")

    def pdf(self, t, x):
        t, x = np.broadcast_arrays(_as_array(t), _as_array(x))
        out = np.empty(t.shape)
        for idx in np.ndindex(t.shape):
            out[idx] = stable_density(self.alpha, float(t[idx]), float(x[idx]), self.quadrature)
        return out if out.ndim else float(out)

    def logpdf(self, t, x):
        with np.errstate(divide="ignore"):
            return np.log(self.pdf(t, x))

    def fast_logpdf(self, t, x):
        """Interpolated log-density; sampler use only."""
        return stable_table(self.alpha).logpdf(t, x)

    def spread(self, t):
        return np.asarray(t, dtype=float) ** (1.0 / self.alpha)

    def to_dict(self):
        return {"family": self.family, "alpha": self.alpha}


LevyModel = Union[BrownianDrift, GammaSubordinator, SymmetricStable]

_FAMILIES = {"brownian": BrownianDrift, "gamma": GammaSubordinator, "stable": SymmetricStable}


def model_from_dict(desc: dict) -> LevyModel:
    desc = dict(desc)
    family = desc.pop("family")
    try:
        cls = _FAMILIES[family]
    except KeyError:
        raise PreconditionError(f"unknown Levy family {family!r}") from None
    return cls(**desc)


def _check_time(t):
    if np.any(_as_array(t) <= 0):
        raise PreconditionError("time must be positive")


def marginal_density(model: LevyModel, t, x):
    """Density f_t(x) of X_t. Zero (not an error) outside a subordinator's support."""
    _check_time(t)
    return model.pdf(t, x)


def log_marginal_density(model: LevyModel, t, x):
    _check_time(t)
    return model.logpdf(t, x)


def rn_derivative(model: LevyModel, t, r, z, x_t):
    """Likelihood ratio ``f_{r-t}(z - x_t) / f_r(z)`` of the bridge to the free process."""
    if not (0 <= t < r):
        raise PreconditionError("need 0 <= t < r")
    log_den = model.logpdf(r, z)
    if not np.all(np.isfinite(log_den)):
        raise DegeneratePin(f"f_r(z) is zero or not finite at r={r}, z={z}")
    return np.exp(model.logpdf(r - t, _as_array(z) - _as_array(x_t)) - log_den)


def bridge_transition_density(model: LevyModel, s, t, r, x_s, y, z):
    """Transition density of the bridge from ``(s, x_s)`` to ``(t, y)``, pinned at ``(r, z)``."""
    if not (0 <= s < t < r):
        raise PreconditionError("need 0 <= s < t < r")
    x_s, y, z = _as_array(x_s), _as_array(y), _as_array(z)
    log_den = model.logpdf(r - s, z - x_s)
    if not np.all(np.isfinite(log_den)):
        raise UnreachableState(f"f_(r-s)(z - x_s) vanishes at x_s={x_s}, z={z}")
    return np.exp(model.logpdf(t - s, y - x_s) + model.logpdf(r - t, z - y) - log_den)


def finite_dim_density(model: LevyModel, r, z, times, values):
    """Joint density of ``(X^{r,z}_{t_1}, ..., X^{r,z}_{t_n})`` at ``values``.

    ``values`` may carry extra leading axes; the last axis runs over times.
    """
    times = _as_array(times)
    values = _as_array(values)
    if times.ndim != 1 or times.size == 0 or values.shape[-1] != times.size:
        raise PreconditionError("times and values must have matching length")
    if np.any(np.diff(times) <= 0) or times[0] <= 0 or times[-1] >= r:
        raise PreconditionError("times must increase strictly inside (0, r)")
    log_den = model.logpdf(r, z)
    if not np.isfinite(log_den):
        raise DegeneratePin(f"f_r(z) is zero or not finite at r={r}, z={z}")
    t_prev = np.concatenate([[0.0], times[:-1]])
    x_prev = np.concatenate([np.zeros(values.shape[:-1] + (1,)), values[..., :-1]], axis=-1)
    logs = model.logpdf(times - t_prev, values - x_prev).sum(axis=-1)
    logs = logs + model.logpdf(r - times[-1], z - values[..., -1]) - log_den
    return np.exp(logs)
