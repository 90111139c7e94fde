"""Laws of the bridge length and of the pinning point.

The pinning law is kept in Lebesgue-decomposed form,

    P_Z = a_sd * (atoms) + a_sc * (Cantor measure) + a_ac * f_Z(z) dz,

so that the singular support (atom locations plus the Cantor set) can be
tested for membership, and integrals against each part can use a rule suited
to it. The length law is a finite set of atoms plus an optional density part.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Union

import numpy as np
from scipy import stats

from .errors import PreconditionError
from .quadrature import DEFAULT_QUADRATURE, QuadratureConfig, de_integrate, de_integrate_shared

_MASS_TOL = 1e-12
_DENSITY_NORM_TOL = 1e-8
# rows per batched quadrature call (bounds memory)
_ROW_CHUNK = 2048


# ---------------------------------------------------------------------------
# densities


@dataclass(frozen=True)
class UniformDensity:
    low: float = 0.0
    high: float = 1.0
    kind = "uniform"

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high) and self.low < self.high):
            raise PreconditionError("uniform density needs finite low < high")

    @property
    def _dist(self):
        return stats.uniform(self.low, self.high - self.low)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where((x >= self.low) & (x <= self.high), 1.0 / (self.high - self.low), 0.0)

    def cdf(self, x):
        return self._dist.cdf(x)

    def ppf(self, u):
        return self.low + (self.high - self.low) * np.asarray(u, dtype=float)

    def breakpoints(self):
        return (self.low, self.high)

    def to_dict(self):
        return {"kind": self.kind, "low": self.low, "high": self.high}


@dataclass(frozen=True)
class NormalDensity:
    """N(mu, sigma^2); quadrature treats it as supported on mu +- 37 sigma.

    The pdf is still a normal double at the cut-off, so kernels multiplied by
    it never meet an underflow jump inside a segment.
    """

    mu: float = 0.0
    sigma: float = 1.0
    kind = "normal"

    def __post_init__(self):
        if not (math.isfinite(self.mu) and self.sigma > 0):
            raise PreconditionError("normal density needs finite mu and sigma > 0")

    def pdf(self, x):
        return stats.norm.pdf(x, self.mu, self.sigma)

    def cdf(self, x):
        return stats.norm.cdf(x, self.mu, self.sigma)

    def ppf(self, u):
        return stats.norm.ppf(u, self.mu, self.sigma)

    def breakpoints(self):
        s = self.sigma
        return tuple(self.mu + s * k for k in (-37.0, -8.0, 0.0, 8.0, 37.0))

    def to_dict(self):
        return {"kind": self.kind, "mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class ExponentialDensity:
    """Exp(rate) on (0, inf); quadrature cuts the tail at 50 / rate."""

    rate: float = 1.0
    kind = "exponential"

    def __post_init__(self):
        if not self.rate > 0:
            raise PreconditionError("exponential rate must be positive")

    def pdf(self, x):
        return stats.expon.pdf(x, scale=1.0 / self.rate)

    def cdf(self, x):
        return stats.expon.cdf(x, scale=1.0 / self.rate)

    def ppf(self, u):
        return stats.expon.ppf(u, scale=1.0 / self.rate)

    def breakpoints(self):
        return tuple(k / self.rate for k in (0.0, 2.0, 8.0, 20.0, 50.0))

    def to_dict(self):
        return {"kind": self.kind, "rate": self.rate}


@dataclass(frozen=True)
class PiecewiseLinearDensity:
    """Density interpolating ``ys`` linearly between knots ``xs``, zero outside."""

    xs: tuple
    ys: tuple
    kind = "table"

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        ys = np.asarray(self.ys, dtype=float)
        object.__setattr__(self, "xs", tuple(xs.tolist()))
        object.__setattr__(self, "ys", tuple(ys.tolist()))
        if xs.ndim != 1 or xs.size < 2 or xs.shape != ys.shape:
            raise PreconditionError("table density needs matching knot arrays of length >= 2")
        if np.any(np.diff(xs) <= 0) or np.any(ys < 0) or not np.all(np.isfinite(ys)):
            raise PreconditionError("table knots must increase and values be finite, >= 0")
        mass = float(np.trapezoid(ys, xs))
        if abs(mass - 1.0) > _DENSITY_NORM_TOL:
            raise PreconditionError(f"table density integrates to {mass}, not 1")

    @classmethod
    def normalized(cls, xs, ys):
        ys = np.asarray(ys, dtype=float)
        return cls(tuple(xs), tuple(ys / np.trapezoid(ys, xs)))

    def pdf(self, x):
        return np.interp(x, self.xs, self.ys, left=0.0, right=0.0)

    def _cum(self):
        xs, ys = np.asarray(self.xs), np.asarray(self.ys)
        seg = 0.5 * (ys[1:] + ys[:-1]) * np.diff(xs)
        return np.concatenate([[0.0], np.cumsum(seg)])

    def cdf(self, x):
        xs, ys = np.asarray(self.xs), np.asarray(self.ys)
        x = np.asarray(x, dtype=float)
        cum = self._cum()
        j = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, xs.size - 2)
        dx = np.clip(x - xs[j], 0.0, xs[j + 1] - xs[j])
        slope = (ys[j + 1] - ys[j]) / (xs[j + 1] - xs[j])
        val = cum[j] + ys[j] * dx + 0.5 * slope * dx * dx
        return np.clip(np.where(x >= xs[-1], 1.0, val), 0.0, 1.0)

    def ppf(self, u):
        xs, ys = np.asarray(self.xs), np.asarray(self.ys)
        u = np.asarray(u, dtype=float) * self._cum()[-1]
        cum = self._cum()
        j = np.clip(np.searchsorted(cum, u, side="right") - 1, 0, xs.size - 2)
        rem = u - cum[j]
        a = 0.5 * (ys[j + 1] - ys[j]) / (xs[j + 1] - xs[j])
        b = ys[j]
        # solve a dx^2 + b dx = rem with the cancellation-free root
        disc = np.sqrt(np.maximum(b * b + 4.0 * a * rem, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            dx = np.where(b + disc > 0, 2.0 * rem / (b + disc), 0.0)
        return xs[j] + np.clip(dx, 0.0, xs[j + 1] - xs[j])

    def breakpoints(self):
        return self.xs

    def to_dict(self):
        return {"kind": self.kind, "xs": list(self.xs), "ys": list(self.ys)}


Density = Union[UniformDensity, NormalDensity, ExponentialDensity, PiecewiseLinearDensity]
_DENSITIES = {c.kind: c for c in (UniformDensity, NormalDensity, ExponentialDensity,
                                  PiecewiseLinearDensity)}


def density_from_dict(desc: dict) -> Density:
    desc = dict(desc)
    kind = desc.pop("kind")
    try:
        cls = _DENSITIES[kind]
    except KeyError:
        raise PreconditionError(f"unknown density kind {kind!r}") from None
    if cls is PiecewiseLinearDensity:
        return cls(tuple(desc["xs"]), tuple(desc["ys"]))
    return cls(**desc)


def _sample_density(density: Density, rng, n):
    return density.ppf(rng.random(n))


# ---------------------------------------------------------------------------
# Cantor measure


@lru_cache(maxsize=32)
def _cantor_unit_points(depth):
    pts = np.zeros(1)
    for k in range(1, depth + 1):
        pts = np.concatenate([pts, pts + 2.0 * 3.0 ** -k])
    pts.setflags(write=False)
    return pts


_CANTOR_DIGITS = 52


@dataclass(frozen=True)
class CantorMeasure:
    """Middle-thirds Cantor measure mapped affinely onto ``[low, high]``."""

    low: float = 0.0
    high: float = 1.0
    # membership slack, in units of spacing of doubles at the tested point
    ulps: int = field(default=64, compare=False)

    def __post_init__(self):
        if not (math.isfinite(self.low) and math.isfinite(self.high) and self.low < self.high):
            raise PreconditionError("Cantor support needs finite low < high")

    def points(self, depth):
        """Left end-points of the ``2**depth`` surviving intervals."""
        if depth < 1:
            raise PreconditionError("depth must be >= 1")
        return self.low + (self.high - self.low) * _cantor_unit_points(depth)

    def sample(self, rng, n):
        """Random ternary expansions with 52 digits drawn uniformly from {0, 2}."""
        digits = 2.0 * rng.integers(0, 2, size=(n, _CANTOR_DIGITS))
        v = np.zeros(n)
        for k in range(_CANTOR_DIGITS - 1, -1, -1):
            v = (v + digits[:, k]) / 3.0
        return self.low + (self.high - self.low) * v

    def _contains_one(self, x):
        lo, hi = Fraction(self.low), Fraction(self.high)
        fx = Fraction(x)
        # the affine map low + span * v rounds on the scale of the end-points too
        tol = Fraction(self.ulps) * Fraction(max(math.ulp(x), math.ulp(self.low), math.ulp(self.high)))
        y = (fx - lo) / (hi - lo)
        tol = tol / (hi - lo)
        if y < -tol or y > 1 + tol:
            return False
        scale = Fraction(1)
        for _ in range(_CANTOR_DIGITS):
            if y <= Fraction(1, 3):
                y = 3 * y
            elif y >= Fraction(2, 3):
                y = 3 * y - 2
            else:
                gap = min(y - Fraction(1, 3), Fraction(2, 3) - y) * scale
                return gap <= tol
            scale /= 3
        return True

    def contains(self, x):
        """Whether each ``x`` lies in the Cantor set, up to ``ulps`` of rounding.

        A point counts as a member when it is within ``ulps`` units in the last
        place (of the point or of the larger end-point) of a point of the set
        whose first 52 ternary digits avoid 1.
        Exact rational arithmetic is used, so the test does not depend on how
        the float was rounded beyond that slack.
        """
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, dtype=bool)
        span = self.high - self.low
        near = (x >= self.low - 1e-9 * span) & (x <= self.high + 1e-9 * span)
        for idx in zip(*np.nonzero(near)):
            out[idx] = self._contains_one(float(x[idx]))
        return out

    def to_dict(self):
        return {"low": self.low, "high": self.high}


def cantor_integrate(g, depth, support=(0.0, 1.0), lipschitz=None, full_output=False):
    """Integrate ``g`` against the Cantor measure on ``support``.

    Uses the depth-``d`` self-similar approximation: equal weights on the
    ``2**d`` left end-points of the surviving intervals.

    Parameters
    ----------
    g : callable
        Vectorised function.
    depth : int
    support : (float, float)
    lipschitz : float, optional
        Lipschitz constant of ``g``; enables the error bound
        ``lipschitz * (u - l) * 3**-depth``.
    full_output : bool
        Return ``(value, bound)`` instead of the value alone.
    """
    cm = CantorMeasure(*support)
    pts = cm.points(depth)
    value = float(np.mean(g(pts)))
    if not full_output:
        return value
    bound = math.nan if lipschitz is None else lipschitz * (cm.high - cm.low) * 3.0 ** -depth
    return value, bound


# ---------------------------------------------------------------------------
# pinning law


@dataclass(frozen=True)
class MembershipOracle:
    """Decides membership of the singular support (atoms and Cantor set)."""

    atoms: tuple = ()
    cantor: CantorMeasure | None = None

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        hit = np.isin(x, np.asarray(self.atoms, dtype=float))
        if self.cantor is not None:
            hit = hit | self.cantor.contains(x)
        return hit


def _normalize_atoms(atoms):
    out = tuple((float(a), float(p)) for a, p in atoms)
    locs = [a for a, _ in out]
    if len(set(locs)) != len(locs):
        raise PreconditionError("atom locations must be distinct")
    if any(p < 0 or not math.isfinite(p) for _, p in out):
        raise PreconditionError("atom probabilities must be finite and >= 0")
    if any(not math.isfinite(a) for a in locs):
        raise PreconditionError("atom locations must be finite")
    return out


@dataclass(frozen=True)
class PinningMeasure:
    """Law of Z as ``a_sd * atoms + a_sc * cantor + a_ac * density``.

    ``atoms`` holds ``(location, probability)`` pairs whose probabilities sum
    to one within the discrete part.
    """

    a_sd: float = 0.0
    a_sc: float = 0.0
    a_ac: float = 0.0
    atoms: tuple = ()
    cantor: CantorMeasure | None = None
    density: Density | None = None

    def __post_init__(self):
        object.__setattr__(self, "atoms", _normalize_atoms(self.atoms))
        w = (self.a_sd, self.a_sc, self.a_ac)
        if any(v < 0 or not math.isfinite(v) for v in w):
            raise PreconditionError("weights must be finite and >= 0")
        if abs(sum(w) - 1.0) > _MASS_TOL:
            raise PreconditionError(f"weights sum to {sum(w)}, not 1")
        if self.a_sd > 0:
            mass = math.fsum(p for _, p in self.atoms)
            if abs(mass - 1.0) > _MASS_TOL:
                raise PreconditionError(f"atom probabilities sum to {mass}, not 1")
        if self.a_sc > 0 and self.cantor is None:
            raise PreconditionError("a_sc > 0 needs a Cantor component")
        if self.a_ac > 0 and self.density is None:
            raise PreconditionError("a_ac > 0 needs a density component")

    @classmethod
    def atomic(cls, atoms):
        return cls(a_sd=1.0, atoms=atoms)

    @classmethod
    def continuous(cls, density):
        return cls(a_ac=1.0, density=density)

    @property
    def atom_locations(self):
        return np.array([a for a, _ in self.atoms]) if self.a_sd > 0 else np.empty(0)

    @property
    def atom_probabilities(self):
        return np.array([p for _, p in self.atoms]) if self.a_sd > 0 else np.empty(0)

    @property
    def oracle(self) -> MembershipOracle:
        atoms = tuple(a for a, p in self.atoms if p > 0) if self.a_sd > 0 else ()
        return MembershipOracle(atoms, self.cantor if self.a_sc > 0 else None)

    def in_support(self, x):
        """Membership of the singular support (Lebesgue-null)."""
        return self.oracle(x)

    def f_z(self, x):
        """Density f_Z of the absolutely continuous part (not weighted by a_ac)."""
        if self.density is None:
            return np.zeros(np.shape(x))
        return self.density.pdf(x)

    def support_bounds(self):
        """Smallest interval carrying all parts (density parts use their cut-offs)."""
        lo, hi = math.inf, -math.inf
        if self.a_sd > 0:
            locs = [a for a, p in self.atoms if p > 0]
            lo, hi = min(lo, *locs), max(hi, *locs)
        if self.a_sc > 0:
            lo, hi = min(lo, self.cantor.low), max(hi, self.cantor.high)
        if self.a_ac > 0:
            bp = self.density.breakpoints()
            lo, hi = min(lo, bp[0]), max(hi, bp[-1])
        return lo, hi

    def to_dict(self):
        d = {"a_sd": self.a_sd, "a_sc": self.a_sc, "a_ac": self.a_ac,
             "atoms": [list(a) for a in self.atoms]}
        d["cantor"] = None if self.cantor is None else self.cantor.to_dict()
        d["density"] = None if self.density is None else self.density.to_dict()
        return d

    @classmethod
    def from_dict(cls, desc):
        return cls(
            a_sd=float(desc.get("a_sd", 0.0)),
            a_sc=float(desc.get("a_sc", 0.0)),
            a_ac=float(desc.get("a_ac", 0.0)),
            atoms=tuple(tuple(a) for a in desc.get("atoms", ())),
            cantor=None if desc.get("cantor") is None else CantorMeasure(**desc["cantor"]),
            density=None if desc.get("density") is None else density_from_dict(desc["density"]),
        )


# ---------------------------------------------------------------------------
# length law


@dataclass(frozen=True)
class LengthMeasure:
    """Law of tau on (0, inf): atoms with absolute probabilities plus a density part."""

    atoms: tuple = ()
    density: Density | None = None
    density_weight: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "atoms", _normalize_atoms(self.atoms))
        if any(r <= 0 for r, _ in self.atoms):
            raise PreconditionError("length atoms must be > 0")
        if not (0.0 <= self.density_weight <= 1.0 + _MASS_TOL):
            raise PreconditionError("density weight must lie in [0, 1]")
        if self.density_weight > 0:
            if self.density is None:
                raise PreconditionError("density weight > 0 needs a density")
            if self.density.cdf(0.0) > 0:
                raise PreconditionError("length density must live on (0, inf)")
        mass = math.fsum([p for _, p in self.atoms] + [self.density_weight])
        if abs(mass - 1.0) > _MASS_TOL:
            raise PreconditionError(f"length law has total mass {mass}, not 1")

    @classmethod
    def atomic(cls, atoms):
        return cls(atoms=atoms)

    @classmethod
    def continuous(cls, density):
        return cls(density=density, density_weight=1.0)

    @property
    def atom_times(self):
        return np.array([r for r, _ in self.atoms])

    @property
    def atom_probabilities(self):
        return np.array([p for _, p in self.atoms])

    def cdf(self, t):
        """F_tau(t) = P(tau <= t); right-continuous at atoms."""
        t = np.asarray(t, dtype=float)
        out = np.zeros(t.shape)
        for r, p in self.atoms:
            out = out + p * (t >= r)
        if self.density_weight > 0:
            out = out + self.density_weight * self.density.cdf(t)
        return out if out.ndim else float(out)

    def upper_bound(self):
        """Largest point of the support (density parts use their cut-off)."""
        hi = max((r for r, p in self.atoms if p > 0), default=0.0)
        if self.density_weight > 0:
            hi = max(hi, self.density.breakpoints()[-1])
        return hi

    def to_dict(self):
        return {"atoms": [list(a) for a in self.atoms],
                "density": None if self.density is None else self.density.to_dict(),
                "density_weight": self.density_weight}

    @classmethod
    def from_dict(cls, desc):
        return cls(
            atoms=tuple(tuple(a) for a in desc.get("atoms", ())),
            density=None if desc.get("density") is None else density_from_dict(desc["density"]),
            density_weight=float(desc.get("density_weight", 0.0)),
        )


# ---------------------------------------------------------------------------
# integration


_SCALE_CUTS = (1.0, 8.0, 64.0)


def _ac_pieces(breaks, anchor, scale=None):
    """Per-row (start, length) segments in offset coordinates ``d = z - anchor``.

    Each density segment is split at the anchor when it lies inside, so
    kernels singular or peaked at ``z = anchor`` sit at a segment end with
    the offset formed exactly. With a per-row ``scale`` the pieces are cut
    again at ``|d| = k * scale`` so kernels much narrower than the segment
    are resolved.
    """
    pieces = []
    for b0, b1 in zip(breaks[:-1], breaks[1:]):
        inside = (anchor > b0) & (anchor < b1)
        left_start = np.where(inside, 0.0, b0 - anchor)
        left_len = np.where(inside, b0 - anchor, b1 - b0)
        right_len = np.where(inside, b1 - anchor, 0.0)
        pieces.append((left_start, left_len))
        pieces.append((np.zeros_like(anchor), right_len))
    if scale is None:
        return pieces
    out = []
    for start, length in pieces:
        end = start + length
        sign = np.where(start + 0.5 * length < 0, -1.0, 1.0)
        lo = np.minimum(np.abs(start), np.abs(end))
        hi = np.maximum(np.abs(start), np.abs(end))
        lo = np.where(length == 0, 0.0, lo)
        hi = np.where(length == 0, 0.0, hi)
        prev = lo
        for k in _SCALE_CUTS + (math.inf,):
            cur = hi if k == math.inf else np.clip(k * scale, lo, hi)
            out.append((sign * prev, sign * (cur - prev)))
            prev = cur
    return out


def integrate_pinning(g, pm: PinningMeasure, *, anchor=None, scale=None, depth=16,
                      parts=("sd", "sc", "ac"), cfg: QuadratureConfig = DEFAULT_QUADRATURE):
    """``a_sd sum p_i g(z_i) + a_sc int g dC + a_ac int g f_Z dz``.

    Parameters
    ----------
    g : callable
        Without ``anchor``: ``g(z)`` for an array ``z``, returning the same
        shape. With ``anchor``: ``g(z, d, rows)`` evaluated row-wise, where
        ``z`` and ``d = z - anchor[rows]`` are 2-d arrays (rows by nodes) and
        ``rows`` indexes the batch.
    pm : PinningMeasure
    anchor : array_like, optional
        One point per batch row at which ``g`` may be singular or sharply
        peaked; the density part is split there.
    scale : array_like, optional
        Per-row width of that peak; the density part is cut again at
        a few multiples of it.
    depth : int
        Depth of the Cantor approximation.
    parts : tuple of str
        Components to include (``"sd"``, ``"sc"``, ``"ac"``); callers with a
        specialised rule for one part integrate it themselves.

    Returns
    -------
    float or ndarray
        Scalar without ``anchor``; one value per row otherwise.
    """
    if anchor is None:
        def gb(z, d, rows):
            return g(z)
        a = np.zeros(1)
    else:
        gb = g
        a = np.atleast_1d(np.asarray(anchor, dtype=float))
    n = a.size
    all_rows = np.arange(n)
    total = np.zeros(n)
    if pm.a_sd > 0 and "sd" in parts:
        locs, probs = pm.atom_locations, pm.atom_probabilities
        z = np.broadcast_to(locs[None, :], (n, locs.size))
        vals = gb(z, z - a[:, None], all_rows)
        total += pm.a_sd * (vals @ probs)
    if pm.a_sc > 0 and "sc" in parts:
        pts = pm.cantor.points(depth)
        chunk = max(1, (1 << 22) // n)
        acc = np.zeros(n)
        for i in range(0, pts.size, chunk):
            p = pts[None, i:i + chunk]
            z = np.broadcast_to(p, (n, p.shape[1]))
            acc += gb(z, z - a[:, None], all_rows).sum(axis=1)
        total += pm.a_sc * acc / pts.size
    if pm.a_ac > 0 and "ac" in parts:
        dens = pm.density
        breaks = np.asarray(dens.breakpoints(), dtype=float)

        def f(d, rows):
            z = a[rows, None] + d
            return gb(z, d, rows) * dens.pdf(z)

        for lo in range(0, n, _ROW_CHUNK):
            sl = slice(lo, lo + _ROW_CHUNK)
            sc = None if scale is None else np.broadcast_to(
                np.asarray(scale, dtype=float), a.shape)[sl]
            for start, length in _ac_pieces(breaks, a[sl], sc):
                total[sl] += pm.a_ac * de_integrate(
                    lambda d, rows: f(d, rows + lo), start, length, cfg)
    if anchor is None:
        return float(total[0])
    return total


def integrate_length_parts(h, lm: LengthMeasure, window=(0.0, math.inf),
                           cfg: QuadratureConfig = DEFAULT_QUADRATURE):
    """Like :func:`integrate_length`, returning the atom and density contributions."""
    a, b = window
    if not a < b:
        raise PreconditionError("window (a, b] must be nonempty")
    atoms = 0.0
    for r, p in lm.atoms:
        if a < r <= b and p > 0:
            atoms = atoms + p * np.asarray(h(r), dtype=float)
    dens_part = 0.0
    if lm.density_weight > 0:
        dens = lm.density
        bp = np.asarray(dens.breakpoints(), dtype=float)
        lo, hi = max(a, bp[0]), min(b, bp[-1])
        if lo < hi:
            edges = np.unique(np.concatenate([[lo, hi], bp[(bp > lo) & (bp < hi)]]))
            for e0, e1 in zip(edges[:-1], edges[1:]):
                part = de_integrate_shared(
                    lambda r: np.asarray(h(r), dtype=float) * float(dens.pdf(r)), e0, e1, cfg)
                dens_part = dens_part + lm.density_weight * part
    return atoms, dens_part


def integrate_length_rows(h, lm: LengthMeasure, n, window=(0.0, math.inf),
                          cfg: QuadratureConfig = DEFAULT_QUADRATURE):
    """Integrate a row-indexed ``h`` against P_tau over ``(a, b]``, each row adaptively.

    ``h(r, s, rows)`` receives 2-d arrays of times ``r`` and offsets
    ``s = r - a`` (formed exactly, so kernels singular at ``r = a`` stay
    resolved) together with the row indices; it returns values of the same
    shape. Use this instead of :func:`integrate_length` when the
    r-integrand of different rows peaks at different places.
    """
    a, b = window
    if not a < b:
        raise PreconditionError("window (a, b] must be nonempty")
    all_rows = np.arange(n)
    total = np.zeros(n)
    for r, p in lm.atoms:
        if a < r <= b and p > 0:
            rr = np.full((n, 1), float(r))
            total += p * h(rr, rr - a, all_rows)[:, 0]
    if lm.density_weight > 0:
        dens = lm.density
        bp = np.asarray(dens.breakpoints(), dtype=float)
        lo, hi = max(a, bp[0]), min(b, bp[-1])
        if lo < hi:
            edges = np.unique(np.concatenate([[lo, hi], bp[(bp > lo) & (bp < hi)]]))
            for e0, e1 in zip(edges[:-1], edges[1:]):
                off = e0 - a

                def f(d, rows, off=off):
                    s_ = off + d
                    r_ = a + s_
                    return h(r_, s_, rows) * dens.pdf(r_)

                for lo_r in range(0, n, _ROW_CHUNK):
                    sl = slice(lo_r, lo_r + _ROW_CHUNK)
                    m = all_rows[sl].size
                    total[sl] += lm.density_weight * de_integrate(
                        lambda d, rows: f(d, rows + lo_r), np.zeros(m), np.full(m, e1 - e0), cfg)
    return total


def integrate_length(h, lm: LengthMeasure, window=(0.0, math.inf),
                     cfg: QuadratureConfig = DEFAULT_QUADRATURE):
    """Integrate ``h(r)`` against P_tau over the half-open window ``(a, b]``.

    ``h`` is called with a scalar ``r`` and may return an array (all
    components share the quadrature nodes). Atoms are summed exactly.
    """
    atoms, dens_part = integrate_length_parts(h, lm, window, cfg)
    total = atoms + dens_part
    if np.ndim(total) == 0:
        return float(total)
    return total


# ---------------------------------------------------------------------------
# sampling


def sample_pinning(pm: PinningMeasure, rng, n):
    """Draw ``n`` pinning points. Atoms are returned bit-for-bit as stored."""
    comp = rng.choice(3, size=n, p=_probs((pm.a_sd, pm.a_sc, pm.a_ac)))
    out = np.empty(n)
    k = comp == 0
    if k.any():
        idx = rng.choice(len(pm.atoms), size=int(k.sum()), p=_probs(pm.atom_probabilities))
        out[k] = pm.atom_locations[idx]
    k = comp == 1
    if k.any():
        out[k] = pm.cantor.sample(rng, int(k.sum()))
    k = comp == 2
    if k.any():
        out[k] = _sample_density(pm.density, rng, int(k.sum()))
    return out


def sample_length(lm: LengthMeasure, rng, n):
    """Draw ``n`` bridge lengths."""
    probs = np.concatenate([lm.atom_probabilities, [lm.density_weight]])
    comp = rng.choice(probs.size, size=n, p=_probs(probs))
    out = np.empty(n)
    is_atom = comp < len(lm.atoms)
    out[is_atom] = lm.atom_times[comp[is_atom]] if len(lm.atoms) else 0.0
    m = int((~is_atom).sum())
    if m:
        out[~is_atom] = np.maximum(_sample_density(lm.density, rng, m), np.finfo(float).tiny)
    return out


def _probs(p):
    p = np.asarray(p, dtype=float)
    return p / p.sum()


# ---------------------------------------------------------------------------
# validation


@dataclass
class ValidationReport:
    ok: bool
    violations: list
    checked: int

    def to_dict(self):
        return {"ok": self.ok, "violations": list(self.violations), "checked": self.checked}


def validate_pair(model, lm: LengthMeasure, pm: PinningMeasure, n_grid=9) -> ValidationReport:
    """Check that ``0 < f_r(z) < inf`` across the supports of (tau, Z).

    Atom pairs are checked exactly; density and Cantor parts are probed on a
    grid over their support. Never raises: problems are listed in the report.
    """
    violations = []
    checked = 0
    try:
        r_pts = [r for r, p in lm.atoms if p > 0]
        if lm.density_weight > 0:
            bp = lm.density.breakpoints()
            r_pts += list(np.linspace(bp[0], bp[-1], n_grid + 2)[1:-1])
        z_pts = []
        if pm.a_sd > 0:
            z_pts += [a for a, p in pm.atoms if p > 0]
        if pm.a_sc > 0:
            # interior points only: the end-points carry no mass
            z_pts += list(pm.cantor.points(3)[1:])
        if pm.a_ac > 0:
            bp = pm.density.breakpoints()
            z_pts += list(np.linspace(bp[0], bp[-1], n_grid + 2)[1:-1])
        if model.is_subordinator:
            if pm.a_sd > 0 and any(a <= 0 for a, p in pm.atoms if p > 0):
                violations.append("pinning atom at z <= 0 under a subordinator")
            if pm.a_sc > 0 and pm.cantor.low < 0:
                violations.append("Cantor part of Z charges (-inf, 0) under a subordinator")
            if pm.a_ac > 0 and pm.density.cdf(0.0) > 0:
                violations.append("density part of Z charges (-inf, 0] under a subordinator")
        for r in r_pts:
            for z in z_pts:
                checked += 1
                val = float(model.pdf(r, z))
                if not (0.0 < val < math.inf):
                    violations.append(f"f_r(z) = {val} at r={r:.6g}, z={z:.6g}")
    except Exception as exc:  # report, never raise
        violations.append(f"evaluation error: {exc}")
    return ValidationReport(not violations, violations, checked)
