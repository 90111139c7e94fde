"""Conditional laws of a Levy bridge with random length and pinning point.

Notation used throughout (``K`` is the likelihood ratio of the bridge to the
free process)::

    K(r, z; t, x) = f_{r-t}(z - x) / f_r(z)
    V_g(r; t, x)  = int g(z) K(r, z; t, x) P_Z(dz)          (V = V_1)
    W(t, x)       = int_{(t, inf)} V(r; t, x) P_tau(dr)

For an observation ``zeta_t = x`` off the singular support of ``P_Z`` the
past and future weights are ``A = a_ac f_Z(x) F_tau(t)`` and
``B = f_t(x) W(t, x)``; on the singular support the process has stopped.
Windows on the tau axis are half-open, ``(a, b]``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import PreconditionError, ZeroEvidence
from .measures import (
    CantorMeasure,
    LengthMeasure,
    PinningMeasure,
    integrate_length,
    integrate_length_parts,
    integrate_length_rows,
    integrate_pinning,
)
from .quadrature import QuadratureConfig, de_integrate

ZERO_EVIDENCE = 1e-300


@dataclass(frozen=True)
class ConditionalConfig:
    """Numerical settings for the conditional formulas.

    Attributes
    ----------
    quadrature : QuadratureConfig
        Tolerances of every nested integral.
    cantor_depth : int
        Depth of the Cantor approximation (``2**depth`` points).
    """

    quadrature: QuadratureConfig = QuadratureConfig(rtol=1e-10, atol=1e-290)
    cantor_depth: int = 16


DEFAULT_CONDITIONAL = ConditionalConfig()


@dataclass(frozen=True)
class Observation:
    """``zeta_t = x`` together with its membership of the singular support.

    ``x`` may be an array, in which case ``in_support`` is an array of the
    same shape. Analytic observations must state membership explicitly; use
    :meth:`at` to derive it from a pinning law.
    """

    t: float
    x: float | np.ndarray
    in_support: bool | np.ndarray = False

    def __post_init__(self):
        if not self.t > 0:
            raise PreconditionError("observation time must be positive")
        if np.shape(self.x) != np.shape(self.in_support):
            object.__setattr__(self, "in_support",
                               np.broadcast_to(np.asarray(self.in_support, dtype=bool),
                                               np.shape(self.x)).copy())

    @classmethod
    def at(cls, t, x, pm: PinningMeasure):
        flag = pm.in_support(x)
        if np.ndim(x) == 0:
            flag = bool(flag)
        return cls(float(t), x, flag)

    @property
    def scalar(self):
        return np.ndim(self.x) == 0


# ---------------------------------------------------------------------------
# posterior law container


@dataclass(frozen=True)
class ContinuousPart:
    """Weighted density part of a posterior law.

    ``pdf`` is normalized on the union of the segments between consecutive
    ``edges``; ``weight`` is its share of the total mass.
    """

    weight: float
    pdf: Callable
    edges: tuple
    label: str = ""


@dataclass(frozen=True)
class SingularPart:
    """Weighted Cantor part: ``weight * tilt(z) C(dz)`` with ``int tilt dC = 1``."""

    weight: float
    cantor: CantorMeasure
    tilt: Callable
    depth: int = 16
    label: str = ""


def _segment_integral(h, edges, cfg):
    """int h over the segments between sorted edges (tanh-sinh per segment)."""
    edges = np.asarray(edges, dtype=float)
    total = 0.0
    for e0, e1 in zip(edges[:-1], edges[1:]):
        if e1 > e0:
            total += float(de_integrate(lambda d, rows: h(d[0])[None, :],
                                        np.array([e0]), np.array([e1 - e0]), cfg)[0])
    return total


@dataclass(frozen=True)
class PosteriorLaw:
    """A conditional law as atoms plus weighted continuous and singular parts.

    Attributes
    ----------
    variable : str
        ``"tau"``, ``"z"`` or ``"state"``.
    atoms : tuple of (location, probability)
    continuous, singular : tuple
        :class:`ContinuousPart` and :class:`SingularPart` entries.
    info : dict
        Named intermediate quantities (evidence, branch, past mass ...).
    """

    variable: str
    atoms: tuple = ()
    continuous: tuple = ()
    singular: tuple = ()
    info: dict = field(default_factory=dict)
    quadrature: QuadratureConfig = DEFAULT_CONDITIONAL.quadrature

    @property
    def continuous_weight(self):
        return math.fsum(p.weight for p in self.continuous)

    def total_mass(self):
        return math.fsum([p for _, p in self.atoms]
                         + [c.weight for c in self.continuous]
                         + [s.weight for s in self.singular])

    def density(self, x):
        """Weighted continuous density ``sum_i w_i pdf_i(x)`` (not normalized)."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for part in self.continuous:
            if part.weight > 0:
                e = part.edges
                inside = (x >= e[0]) & (x <= e[-1])
                if np.any(inside):
                    out[inside] += part.weight * part.pdf(x[inside])
        return out

    def expect(self, g, breaks=()):
        """E[g] under the law; ``g`` must accept arrays.

        ``breaks`` lists discontinuities of ``g``; they become quadrature
        edges. Each segment is integrated to the law's relative tolerance
        or an absolute 1e-14, whichever is looser.
        """
        cfg = QuadratureConfig(rtol=self.quadrature.rtol, atol=max(self.quadrature.atol, 1e-14))
        acc = [p * float(g(np.array([loc]))[0]) for loc, p in self.atoms if p > 0]
        for part in self.continuous:
            if part.weight > 0:
                lo, hi = part.edges[0], part.edges[-1]
                edges = sorted(set(part.edges) | {float(b) for b in breaks if lo < b < hi})
                acc.append(part.weight * _segment_integral(
                    lambda y: g(y) * part.pdf(y), edges, cfg))
        for part in self.singular:
            if part.weight > 0:
                pts = part.cantor.points(part.depth)
                acc.append(part.weight * float(np.mean(g(pts) * part.tilt(pts))))
        return math.fsum(acc)

    def probability(self, a, b):
        """Mass of the half-open interval ``(a, b]``."""
        return self.expect(lambda y: ((y > a) & (y <= b)).astype(float), breaks=(a, b))

    def to_dict(self, grid=None):
        grid = None if grid is None else np.asarray(grid, dtype=float)
        out = {
            "variable": self.variable,
            "atoms": [[float(a), float(p)] for a, p in self.atoms],
            "continuous": [],
            "singular": [{"label": s.label, "weight": s.weight,
                          "support": [s.cantor.low, s.cantor.high]} for s in self.singular],
            "total_mass": self.total_mass(),
            "info": {k: (float(v) if isinstance(v, (float, np.floating)) else v)
                     for k, v in self.info.items()},
        }
        for part in self.continuous:
            entry = {"label": part.label, "weight": part.weight,
                     "support": [float(part.edges[0]), float(part.edges[-1])]}
            if grid is not None:
                vals = np.zeros(grid.shape)
                inside = (grid >= part.edges[0]) & (grid <= part.edges[-1])
                if part.weight > 0 and np.any(inside):
                    vals[inside] = part.pdf(grid[inside])
                entry["grid"] = grid.tolist()
                entry["pdf"] = vals.tolist()
            out["continuous"].append(entry)
        return out

    def to_json(self, grid=None, **kw):
        return json.dumps(self.to_dict(grid), **kw)


# ---------------------------------------------------------------------------
# kernels


def _logf(model, t, x):
    # stable densities come from the interpolated table (rel. error < 1e-9);
    # nested quadrature would need millions of direct Fourier inversions
    if model.family == "stable":
        return model.fast_logpdf(t, x)
    return model.logpdf(t, x)


def _ratio(model, dt, d, r, z):
    """exp(log f_dt(d) - log f_r(z)) with zeros kept as zeros."""
    num = _logf(model, dt, d)
    den = _logf(model, r, z)
    with np.errstate(invalid="ignore", over="ignore"):
        out = np.exp(num - den)
    return np.where(np.isneginf(num), 0.0, out)


def _V(model, pm, r, t, x, g=None, cfg=DEFAULT_CONDITIONAL):
    """V_g(r; t, x) for broadcast arrays r > t and x, one quadrature row each."""
    r, t, x = (np.ravel(a) for a in np.broadcast_arrays(
        np.asarray(r, dtype=float), np.asarray(t, dtype=float), np.asarray(x, dtype=float)))
    if np.any(r <= t):
        raise PreconditionError("need r > t")

    def integrand(z, d, rows):
        val = _ratio(model, (r - t)[rows, None], d, r[rows, None], z)
        if g is not None:
            val = val * g(z)
        return val

    scale = np.asarray(model.spread(r - t), dtype=float)
    if not (model.family == "gamma" and pm.a_ac > 0):
        return integrate_pinning(integrand, pm, anchor=x, scale=scale, depth=cfg.cantor_depth,
                                 cfg=cfg.quadrature)
    # increments of shape < 1 have an unresolvable d^(s-1) spike at the anchor
    thin = model.rate * (r - t) < 1.0
    out = integrate_pinning(integrand, pm, anchor=x, scale=scale, depth=cfg.cantor_depth,
                            parts=("sd", "sc"), cfg=cfg.quadrature)
    if np.any(~thin):
        k = np.flatnonzero(~thin)
        out[k] += integrate_pinning(
            lambda z, d, rows: integrand(z, d, k[rows]), pm, anchor=x[k], scale=scale[k],
            parts=("ac",), cfg=cfg.quadrature)
    if np.any(thin):
        k = np.flatnonzero(thin)
        out[k] += pm.a_ac * _gamma_thin_V(model, pm.density, r[k], t[k], x[k], g, cfg)
    return out


def _gamma_thin_V(model, dens, r, t, x, g, cfg):
    """Density part of V_g for gamma increments of shape s = rate (r - t) < 1.

    On the piece starting at the anchor, ``w = (d / L)**s`` turns
    ``f_s(d) dd`` into ``L^s exp(-d / scale) / (Gamma(s + 1) scale^s) dw``,
    which is bounded however small ``s`` is. Pieces away from the anchor are
    integrated directly.
    """
    from scipy.special import gammaln

    s_ = model.rate * (r - t)
    th = model.scale
    n = r.size
    bp = np.asarray(dens.breakpoints(), dtype=float)
    total = np.zeros(n)

    def rest(z, rows):
        # f_Z(z) g(z) / f_r(z)
        with np.errstate(divide="ignore"):
            val = np.exp(np.log(dens.pdf(z)) - _logf(model, r[rows, None], z))
        return val if g is None else val * g(z)

    for b0, b1 in zip(bp[:-1], bp[1:]):
        lo, hi = b0 - x, b1 - x
        at_anchor = (lo <= 0) & (hi > 0)
        away = lo > 0
        L = np.where(at_anchor, hi, 0.0)
        logc = s_ * np.log(np.where(at_anchor, L, 1.0)) - gammaln(s_ + 1) - s_ * math.log(th)

        def f_sub(w, rows):
            with np.errstate(divide="ignore", under="ignore"):
                d = np.exp(np.log(L[rows, None]) + np.log(w) / s_[rows, None])
            z = x[rows, None] + d
            with np.errstate(divide="ignore"):
                return np.exp(logc[rows, None] - d / th) * rest(z, rows)

        total += de_integrate(f_sub, np.zeros(n), np.where(at_anchor, 1.0, 0.0), cfg.quadrature)

        def f_away(d, rows):
            z = x[rows, None] + d
            with np.errstate(divide="ignore"):
                return np.exp(_logf(model, (r - t)[rows, None], d)) * rest(z, rows)

        total += de_integrate(f_away, np.where(away, lo, 0.0), np.where(away, hi - lo, 0.0),
                              cfg.quadrature)
    return total


def _W_parts(model, lm, pm, t, x, cfg):
    """Atom and density parts of W(t, x) over the tau window (t, inf)."""
    a, d = integrate_length_parts(lambda r: _V(model, pm, r, t, x, cfg=cfg),
                                  lm, (t, math.inf), cfg.quadrature)
    shape = np.shape(np.ravel(x))
    return np.broadcast_to(a, shape).astype(float), np.broadcast_to(d, shape).astype(float)


def _check_evidence(den, what):
    den = np.asarray(den)
    if np.any(~(den >= ZERO_EVIDENCE)):
        raise ZeroEvidence(f"{what}: evidence below {ZERO_EVIDENCE:g}")


def _scalar_out(obs, arr):
    return float(np.ravel(arr)[0]) if obs.scalar else np.reshape(arr, np.shape(obs.x))


# ---------------------------------------------------------------------------
# one-time laws


def q_density(model, lm: LengthMeasure, pm: PinningMeasure, r, x, t, in_support=False,
              cfg: ConditionalConfig = DEFAULT_CONDITIONAL):
    """Joint density q_t(r, x) of (tau, zeta_t) against P_tau times the state reference measure.

    Returns ``((1 - a_ac) 1_Z(x) + a_ac 1_{Z^c}(x) f_Z(x))`` for ``r <= t`` and
    ``1_{Z^c}(x) f_t(x) V(r; t, x)`` for ``r > t``.
    """
    if not t > 0:
        raise PreconditionError("t must be positive")
    if r <= t:
        if in_support:
            return 1.0 - pm.a_ac
        return pm.a_ac * float(pm.f_z(x))
    if in_support:
        return 0.0
    return float(model.pdf(t, x)) * float(_V(model, pm, r, t, x, cfg=cfg)[0])


def _one_time_weights(obs, model, lm, pm, cfg):
    t = obs.t
    x = np.ravel(np.asarray(obs.x, dtype=float))
    zs = np.ravel(np.asarray(obs.in_support, dtype=bool))
    F = lm.cdf(t)
    A = np.zeros(x.size)
    B_atoms = np.zeros(x.size)
    B_dens = np.zeros(x.size)
    free = ~zs
    if np.any(free):
        xf = x[free]
        A[free] = pm.a_ac * pm.f_z(xf) * F
        ft = np.asarray(model.pdf(t, xf), dtype=float)
        wa, wd = _W_parts(model, lm, pm, t, xf, cfg)
        B_atoms[free] = ft * wa
        B_dens[free] = ft * wd
    return x, zs, F, A, B_atoms, B_dens


def survival_given_state(obs: Observation, model, lm, pm,
                         cfg: ConditionalConfig = DEFAULT_CONDITIONAL):
    """P(tau <= t | zeta_t = x); vectorized over ``obs.x``.

    Equal to 1 on the singular support and ``A / (A + B)`` off it.
    """
    x, zs, F, A, Ba, Bd = _one_time_weights(obs, model, lm, pm, cfg)
    out = np.ones(x.size)
    if np.any(zs):
        _check_evidence(F, "stopped branch needs F_tau(t) > 0")
    free = ~zs
    if np.any(free):
        D = A[free] + Ba[free] + Bd[free]
        _check_evidence(D, "survival_given_state")
        out[free] = A[free] / D
    return _scalar_out(obs, out)


def tau_posterior(obs: Observation, model, lm: LengthMeasure, pm: PinningMeasure,
                  cfg: ConditionalConfig = DEFAULT_CONDITIONAL) -> PosteriorLaw:
    """Posterior law of tau given zeta_t = x (scalar observation)."""
    if not obs.scalar:
        raise PreconditionError("tau_posterior takes a scalar observation")
    t = obs.t
    x, zs, F, A, Ba, Bd = _one_time_weights(obs, model, lm, pm, cfg)
    x, A, Ba, Bd = float(x[0]), float(A[0]), float(Ba[0]), float(Bd[0])
    dens = lm.density if lm.density_weight > 0 else None
    bp = () if dens is None else tuple(float(b) for b in dens.breakpoints())
    past_edges = tuple(sorted({b for b in bp if b < t} | {t})) if dens is not None else ()
    if dens is not None and past_edges[0] < bp[0]:
        past_edges = tuple(e for e in past_edges if e >= bp[0])
    F_dens = 0.0 if dens is None else float(dens.cdf(t))
    q = cfg.quadrature

    def past_pdf(r):
        return np.where(np.asarray(r) <= t, dens.pdf(r), 0.0) / F_dens

    if bool(zs[0]):
        _check_evidence(F, "tau_posterior (stopped branch)")
        atoms = tuple((r, p / F) for r, p in lm.atoms if r <= t and p > 0)
        cont = ()
        if dens is not None and F_dens > 0:
            cont = (ContinuousPart(lm.density_weight * F_dens / F, past_pdf, past_edges, "past"),)
        return PosteriorLaw("tau", atoms, cont, (), {"branch": "stopped", "past_mass": 1.0}, q)

    D = A + Ba + Bd
    _check_evidence(D, "tau_posterior")
    ft = float(model.pdf(t, x))
    past_scale = pm.a_ac * float(pm.f_z(x)) / D
    atoms = []
    for r, p in lm.atoms:
        if p <= 0:
            continue
        if r <= t:
            w = p * past_scale
        else:
            w = p * ft * float(_V(model, pm, r, t, x, cfg=cfg)[0]) / D
        atoms.append((r, w))
    cont = []
    if dens is not None:
        if F_dens > 0 and past_scale > 0:
            cont.append(ContinuousPart(lm.density_weight * F_dens * past_scale,
                                       past_pdf, past_edges, "past"))
        if Bd > 0:
            fut_edges = tuple(sorted({b for b in bp if b > t} | {max(t, bp[0])}))
            mass = Bd / (ft * lm.density_weight)

            def future_pdf(r, mass=mass):
                r = np.asarray(r, dtype=float)
                out = np.zeros(r.shape)
                ok = r > t
                if np.any(ok):
                    out[ok] = dens.pdf(r[ok]) * _V(model, pm, r[ok], t, x, cfg=cfg) / mass
                return out

            cont.append(ContinuousPart(Bd / D, future_pdf, fut_edges, "future"))
    info = {"branch": "free", "past_mass": A / D, "evidence": D}
    return PosteriorLaw("tau", tuple(atoms), tuple(cont), (), info, q)


def fixed_length_z_expectation(g, r, t, x, model, pm: PinningMeasure,
                               cfg: ConditionalConfig = DEFAULT_CONDITIONAL):
    """E[g(Z) | tau = r, zeta_t = x]: ``g(x)`` once stopped, else V_g / V."""
    if r <= t:
        return float(g(np.array([x]))[0])
    num = float(_V(model, pm, r, t, x, g=g, cfg=cfg)[0])
    den = float(_V(model, pm, r, t, x, cfg=cfg)[0])
    _check_evidence(den, "fixed_length_z_expectation")
    return num / den


def z_posterior_expectation(g, obs: Observation, model, lm, pm,
                            cfg: ConditionalConfig = DEFAULT_CONDITIONAL):
    """E[g(Z) | zeta_t = x]; vectorized over ``obs.x``.

    ``g(x)`` on the singular support; otherwise
    ``(A g(x) + f_t(x) int_{(t, inf)} V_g(r; t, x) P_tau(dr)) / (A + B)``.
    """
    t = obs.t
    x, zs, F, A, Ba, Bd = _one_time_weights(obs, model, lm, pm, cfg)
    out = np.asarray(g(x), dtype=float).copy()
    free = ~zs
    if np.any(free):
        xf = x[free]
        D = A[free] + Ba[free] + Bd[free]
        _check_evidence(D, "z_posterior_expectation")
        Vg = integrate_length(lambda r: _V(model, pm, r, t, xf, g=g, cfg=cfg),
                              lm, (t, math.inf), cfg.quadrature)
        ft = np.asarray(model.pdf(t, xf), dtype=float)
        out[free] = (A[free] * out[free] + ft * Vg) / D
    return _scalar_out(obs, out)


# ---------------------------------------------------------------------------
# predictive law


def _geometric_edges(center, scale, reach, side):
    k = scale
    out = []
    while k < reach:
        out.append(center + side * k)
        k *= 10.0
    out.append(center + side * reach)
    return out


def state_edges(model, pm: PinningMeasure, lm: LengthMeasure, points, horizon):
    """Quadrature edges on the state axis covering a law started near ``points``.

    ``horizon`` sets the spread scale. Pin atoms, Cantor bounds and density
    breakpoints become edges so peaks sit at segment ends.
    """
    points = [float(p) for p in np.ravel(points)]
    lo_pin, hi_pin = pm.support_bounds()
    inner = set(points)
    if pm.a_sd > 0 and len(pm.atoms) <= 64:
        inner.update(a for a, p in pm.atoms if p > 0)
    if pm.a_sc > 0:
        inner.update((pm.cantor.low, pm.cantor.high))
    if pm.a_ac > 0:
        inner.update(float(b) for b in pm.density.breakpoints())
    if model.is_subordinator:
        lo, hi = min(points), hi_pin
        return tuple(sorted(e for e in inner if lo <= e <= hi) + ([hi] if hi not in inner else []))
    s = float(model.spread(max(horizon, 1e-3)))
    if model.family == "stable":
        reach = s * 1e12 ** (1.0 / (1.0 + 2.0 * model.alpha))
    else:
        reach = 40.0 * s + abs(getattr(model, "drift", 0.0)) * horizon
    lo = min(min(points), lo_pin)
    hi = max(max(points), hi_pin)
    edges = set(inner)
    for p in points:
        edges.update(_geometric_edges(p, s, reach, -1) + _geometric_edges(p, s, reach, 1))
    edges.update((lo - reach, hi + reach))
    return tuple(sorted(e for e in edges if lo - reach <= e <= hi + reach))


def _kappa(model, lm, t, u, x, z, cfg):
    """int_{(t, u]} f_{r-t}(z - x) / f_r(z) P_tau(dr), vectorized over z."""
    z = np.ravel(np.asarray(z, dtype=float))
    return integrate_length_rows(
        lambda r, s, rows: _ratio(model, s, z[rows, None] - x, r, z[rows, None]),
        lm, z.size, (t, u), cfg.quadrature)


def _H(model, lm, pm, u, y, cfg):
    """int_{(u, inf)} V(r; u, y) P_tau(dr), vectorized over y."""
    y = np.ravel(np.asarray(y, dtype=float))
    return integrate_length(lambda r: _V(model, pm, r, u, y, cfg=cfg), lm, (u, math.inf),
                            cfg.quadrature) + np.zeros(y.shape)


def predictive_law(obs: Observation, u, model, lm: LengthMeasure, pm: PinningMeasure,
                   cfg: ConditionalConfig = DEFAULT_CONDITIONAL) -> PosteriorLaw:
    """Law of zeta_u given zeta_t = x for u > t (scalar observation).

    Parts: an atom at ``x`` (stopped by time t), the pinning law tilted by
    ``kappa(z) = int_{(t,u]} K(r, z; t, x) P_tau(dr)`` (stopped in (t, u]),
    and a density on the state axis proportional to
    ``f_t(x) f_{u-t}(y - x) H(y)`` with ``H(y) = int_{(u, inf)} V(r; u, y) P_tau(dr)``.
    All parts are normalized by the one-time evidence ``A + B``.
    """
    if not obs.scalar:
        raise PreconditionError("predictive_law takes a scalar observation")
    t = obs.t
    if not u > t:
        raise PreconditionError("need u > t")
    q = cfg.quadrature
    x = float(obs.x)
    if bool(obs.in_support):
        _check_evidence(lm.cdf(t), "predictive_law (stopped branch)")
        return PosteriorLaw("state", ((x, 1.0),), (), (), {"branch": "stopped"}, q)
    _, _, F, A, Ba, Bd = _one_time_weights(obs, model, lm, pm, cfg)
    A, D = float(A[0]), float(A[0] + Ba[0] + Bd[0])
    _check_evidence(D, "predictive_law")
    ft = float(model.pdf(t, x))
    atoms = [(x, A / D)] if A > 0 else []
    cont, sing = [], []
    info = {"branch": "free", "past_mass": A / D, "evidence": D}
    if lm.cdf(u) > lm.cdf(t):
        if pm.a_sd > 0:
            locs, probs = pm.atom_locations, pm.atom_probabilities
            kap = _kappa(model, lm, t, u, x, locs, cfg)
            atoms.extend((float(z), float(pm.a_sd * p * ft * k / D))
                         for z, p, k in zip(locs, probs, kap) if p > 0)
        if pm.a_sc > 0:
            pts = pm.cantor.points(cfg.cantor_depth)
            mk = float(np.mean(_kappa(model, lm, t, u, x, pts, cfg)))
            if mk > 0:
                sing.append(SingularPart(
                    pm.a_sc * ft * mk / D, pm.cantor,
                    lambda z, mk=mk: _kappa(model, lm, t, u, x, z, cfg) / mk,
                    cfg.cantor_depth, "pin"))
        if pm.a_ac > 0:
            bp = [float(b) for b in pm.density.breakpoints()]
            edges = tuple(sorted(set(bp) | ({x} if bp[0] < x < bp[-1] else set())))

            def raw_pin(z):
                return _kappa(model, lm, t, u, x, z, cfg) * pm.density.pdf(z)

            mass = _segment_integral(raw_pin, edges, q)
            if mass > 0:
                cont.append(ContinuousPart(pm.a_ac * ft * mass / D,
                                           lambda z, m=mass: raw_pin(z) / m, edges, "pin"))
    if lm.cdf(u) < 1.0:
        horizon = max(u - t, lm.upper_bound() - u)
        edges = state_edges(model, pm, lm, [x], horizon)

        def raw_y(y):
            y = np.asarray(y, dtype=float)
            return np.exp(_logf(model, u - t, y - x)) * _H(model, lm, pm, u, y, cfg)

        mass = _segment_integral(raw_y, edges, q)
        if mass > 0:
            cont.append(ContinuousPart(ft * mass / D, lambda y, m=mass: raw_y(y) / m,
                                       edges, "running"))
    return PosteriorLaw("state", tuple(atoms), tuple(cont), tuple(sing), info, q)


# ---------------------------------------------------------------------------
# two-time laws


def _two_time_checks(t1, t2, lm):
    if not 0 < t1 < t2:
        raise PreconditionError("need 0 < t1 < t2")
    if lm.cdf(t1) != 0.0:
        raise PreconditionError("two-time formulas need F_tau(t1) = 0")


def _A12(model, lm, t1, t2, x1, x2, cfg):
    """int_{(t1, t2]} f_{r-t1}(x2 - x1) / f_r(x2) P_tau(dr), vectorized."""
    x1, x2 = np.broadcast_arrays(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
    shape = x1.shape
    d, x2 = np.ravel(x2 - x1), np.ravel(x2)
    out = integrate_length_rows(
        lambda r, s, rows: _ratio(model, s, d[rows, None], r, x2[rows, None]),
        lm, d.size, (t1, t2), cfg.quadrature)
    return out.reshape(shape) if shape else float(out[0])


def u_ratio(t1, t2, x1, x2, model, lm: LengthMeasure,
            cfg: ConditionalConfig = DEFAULT_CONDITIONAL):
    """U_{t1,t2}(x1, x2) = f_{t2-t1}(x2 - x1) / A12(x1, x2)."""
    _two_time_checks(t1, t2, lm)
    a12 = np.asarray(_A12(model, lm, t1, t2, x1, x2, cfg), dtype=float)
    _check_evidence(a12, "u_ratio")
    out = np.exp(_logf(model, t2 - t1, np.asarray(x2, float) - np.asarray(x1, float))) / a12
    return float(out) if np.ndim(out) == 0 else out


def markov_gap(t1, t2, x1, x2, model, lm: LengthMeasure,
               cfg: ConditionalConfig = DEFAULT_CONDITIONAL):
    """|U_{t1,t2}(x1, x2) - f_{t2}(x2) / F_tau(t2)|; zero for every (x1, x2) iff Markov."""
    F2 = lm.cdf(t2)
    _check_evidence(F2, "markov_gap needs F_tau(t2) > 0")
    U = u_ratio(t1, t2, x1, x2, model, lm, cfg)
    return np.abs(U - np.asarray(model.pdf(t2, x2), dtype=float) / F2)


def two_time_tau_posterior(t1, t2, x1, x2, model, lm: LengthMeasure, pm: PinningMeasure,
                           in_support=None, cfg: ConditionalConfig = DEFAULT_CONDITIONAL):
    """Posterior of tau given (zeta_{t1}, zeta_{t2}) = (x1, x2), with F_tau(t1) = 0."""
    _two_time_checks(t1, t2, lm)
    x1, x2 = float(x1), float(x2)
    zs = bool(pm.in_support(x2)) if in_support is None else bool(in_support)
    q = cfg.quadrature
    dens = lm.density if lm.density_weight > 0 else None
    bp = () if dens is None else [float(b) for b in dens.breakpoints()]

    def k12(r):
        r = np.asarray(r, dtype=float)
        return _ratio(model, r - t1, x2 - x1, r, x2)

    past_scale = 1.0 if zs else pm.a_ac * float(pm.f_z(x2))
    fut_scale = 0.0 if zs else float(np.exp(_logf(model, t2 - t1, x2 - x1)))
    pa, pd = integrate_length_parts(k12, lm, (t1, t2), q)
    pa, pd = past_scale * float(pa), past_scale * float(pd)
    fa = fd = 0.0
    if fut_scale > 0:
        fa, fd = integrate_length_parts(lambda r: _V(model, pm, r, t2, x2, cfg=cfg),
                                        lm, (t2, math.inf), q)
        fa, fd = fut_scale * float(fa[0] if np.ndim(fa) else fa), fut_scale * float(
            fd[0] if np.ndim(fd) else fd)
    D = pa + pd + fa + fd
    _check_evidence(D, "two_time_tau_posterior")
    atoms = []
    for r, p in lm.atoms:
        if p <= 0 or r <= t1:
            continue
        if r <= t2:
            w = past_scale * p * float(k12(r)) / D
        else:
            w = fut_scale * p * float(_V(model, pm, r, t2, x2, cfg=cfg)[0]) / D
        if w > 0:
            atoms.append((r, w))
    cont = []
    if dens is not None:
        if pd > 0:
            edges = tuple(sorted({b for b in bp if t1 < b < t2} | {max(t1, bp[0]), min(t2, bp[-1])}))
            m = pd / (past_scale * lm.density_weight)
            cont.append(ContinuousPart(pd / D, lambda r, m=m: np.where(
                (np.asarray(r) > t1) & (np.asarray(r) <= t2), dens.pdf(r) * k12(r), 0.0) / m,
                edges, "between"))
        if fd > 0:
            edges = tuple(sorted({b for b in bp if b > t2} | {max(t2, bp[0])}))
            m = fd / (fut_scale * lm.density_weight)

            def fut(r, m=m):
                r = np.asarray(r, dtype=float)
                out = np.zeros(r.shape)
                ok = r > t2
                if np.any(ok):
                    out[ok] = dens.pdf(r[ok]) * _V(model, pm, r[ok], t2, x2, cfg=cfg) / m
                return out

            cont.append(ContinuousPart(fd / D, fut, edges, "future"))
    info = {"branch": "stopped" if zs else "free", "stopped_mass": (pa + pd) / D, "evidence": D}
    return PosteriorLaw("tau", tuple(atoms), tuple(cont), (), info, q)


def two_time_z_expectation(g, t1, t2, x1, x2, model, lm: LengthMeasure, pm: PinningMeasure,
                           in_support=None, cfg: ConditionalConfig = DEFAULT_CONDITIONAL):
    """E[g(Z) | zeta_{t1} = x1, zeta_{t2} = x2] with F_tau(t1) = 0; vectorized.

    Off the singular support this is
    ``(a_ac f_Z(x2) g(x2) + U I_g) / (a_ac f_Z(x2) + U I_1)`` with
    ``I_g = int_{(t2, inf)} V_g(r; t2, x2) P_tau(dr)``, evaluated in the
    equivalent form multiplied through by ``A12`` so that it stays finite
    when ``A12`` vanishes.
    """
    _two_time_checks(t1, t2, lm)
    x1a, x2a = np.broadcast_arrays(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
    shape = x1a.shape
    x1a, x2a = np.ravel(x1a), np.ravel(x2a)
    zs = pm.in_support(x2a) if in_support is None else np.broadcast_to(
        np.asarray(in_support, dtype=bool), x2a.shape)
    zs = np.ravel(np.asarray(zs, dtype=bool))
    out = np.asarray(g(x2a), dtype=float).copy()
    free = ~zs
    if np.any(free):
        y1, y2 = x1a[free], x2a[free]
        a12 = np.asarray(_A12(model, lm, t1, t2, y1, y2, cfg), dtype=float)
        past = pm.a_ac * pm.f_z(y2) * a12
        step = np.exp(_logf(model, t2 - t1, y2 - y1))
        Ig = integrate_length(lambda r: _V(model, pm, r, t2, y2, g=g, cfg=cfg),
                              lm, (t2, math.inf), cfg.quadrature)
        I1 = integrate_length(lambda r: _V(model, pm, r, t2, y2, cfg=cfg),
                              lm, (t2, math.inf), cfg.quadrature)
        den = past + step * I1
        _check_evidence(den, "two_time_z_expectation")
        out[free] = (past * out[free] + step * Ig) / den
    out = out.reshape(shape)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# lifted transition


def y_transition(G, t, u, z, x, model, lm: LengthMeasure,
                 cfg: ConditionalConfig = DEFAULT_CONDITIONAL):
    """E[G(Z, zeta_u) | Z = z, zeta_t = x] for the Markov pair (Z, zeta).

    The stopped branch is selected by ``x == z`` exactly and returns ``G(z, z)``.
    Otherwise, with ``k(r) = f_{r-t}(z - x) / f_r(z)`` and ``den = int_{(t, inf)} k dP_tau``,
    the value is ``G(z, z) int_{(t,u]} k dP_tau / den`` plus
    ``int G(z, y) f_{u-t}(y - x) int_{(u, inf)} f_{r-u}(z - y) / f_r(z) P_tau(dr) dy / den``.
    """
    if not u > t:
        raise PreconditionError("need u > t")
    z, x = float(z), float(x)
    gz = float(np.asarray(G(np.array([z]), np.array([z])), dtype=float)[0])
    if x == z:
        return gz
    q = cfg.quadrature
    k = lambda r: float(_ratio(model, r - t, z - x, r, z))
    den = integrate_length(k, lm, (t, math.inf), q)
    _check_evidence(den, "y_transition")
    stop = integrate_length(k, lm, (t, u), q) if lm.cdf(u) > lm.cdf(t) else 0.0
    val = gz * stop / den
    if lm.cdf(u) < 1.0:
        if model.is_subordinator:
            if z <= x:
                raise ZeroEvidence("subordinator cannot move from x down to z")
            edges = (x, z)
        else:
            horizon = max(u - t, lm.upper_bound() - u)
            s = float(model.spread(max(horizon, 1e-3)))
            reach = (s * 1e12 ** (1.0 / (1.0 + 2.0 * model.alpha)) if model.family == "stable"
                     else 40.0 * s + abs(getattr(model, "drift", 0.0)) * horizon)
            pts = {x, z, min(x, z) - reach, max(x, z) + reach}
            for p in (x, z):
                pts.update(_geometric_edges(p, s, reach, -1) + _geometric_edges(p, s, reach, 1))
            lo, hi = min(x, z) - reach, max(x, z) + reach
            edges = tuple(sorted(e for e in pts if lo <= e <= hi))

        def integrand(y):
            y = np.asarray(y, dtype=float)
            yr = np.ravel(y)
            hz = integrate_length_rows(
                lambda r, s, rows: _ratio(model, s, z - yr[rows, None], r, z),
                lm, yr.size, (u, math.inf), q).reshape(y.shape)
            gy = np.asarray(G(np.full(y.shape, z), y), dtype=float)
            return gy * np.exp(_logf(model, u - t, y - x)) * hz

        val += _segment_integral(integrand, edges, q) / den
    return float(val)
