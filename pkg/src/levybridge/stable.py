"""Densities of the symmetric alpha-stable law with exponent -|u|**alpha.

Three evaluators are provided:

* :func:`stable_density_fourier` -- cosine-transform inversion on panels
  delimited by the zeros of ``cos(x y)``;
* :func:`stable_density_series` -- the large-|x| power series in
  ``|x|**(-alpha k - 1)`` (convergent for alpha < 1, asymptotic for
  alpha > 1), used where the oscillatory integral gets expensive;
* :class:`StableTable` -- an interpolated table of the unit-time density for
  the path sampler, where thousands of evaluations per step are needed.
"""

from __future__ import annotations

import math
import threading

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import gammaln

from .errors import NumericalFailure, PreconditionError
from .quadrature import DEFAULT_QUADRATURE, QuadratureConfig, integrate_panels

# panels near the origin shrink geometrically down to this fraction of y_max
_GEOMETRIC_FLOOR = 1e-14
_SERIES_MAX_TERMS = 400


def _check(alpha, t):
    if not (0.0 < alpha <= 2.0):
        raise PreconditionError(f"alpha must lie in (0, 2], got {alpha}")
    if not t > 0:
        raise PreconditionError(f"t must be positive, got {t}")


def density_cap(alpha: float, t: float) -> float:
    """Upper bound pi^-1 * int_0^inf exp(-t y^alpha) dy = Gamma(1+1/a) t^(-1/a) / pi."""
    return math.exp(math.lgamma(1.0 + 1.0 / alpha)) * t ** (-1.0 / alpha) / math.pi


def truncation_point(alpha: float, t: float, threshold: float) -> float:
    """Solve exp(-t y^alpha) = threshold for y."""
    return (-math.log(threshold) / t) ** (1.0 / alpha)


def stable_density_fourier(alpha: float, t: float, x: float,
                           cfg: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    """Density of X_t at ``x`` by numerical inversion of exp(-t|y|^alpha).

    Computes ``(1/pi) * int_0^ymax cos(|x| y) exp(-t y^alpha) dy``. When
    ``|x| * ymax > 2 pi`` the range is cut at the zeros of the cosine so each
    panel carries one sign; a geometric grid towards the origin resolves the
    cusp of ``y**alpha`` for alpha < 1.

    Raises
    ------
    NumericalFailure
        If the panels do not converge, or the result exceeds the analytic
        cap ``Gamma(1 + 1/alpha) t^(-1/alpha) / pi``.
    """
    _check(alpha, t)
    ax = abs(float(x))
    y_max = truncation_point(alpha, t, cfg.truncation)
    n_geo = int(math.ceil(math.log2(1.0 / _GEOMETRIC_FLOOR)))
    edges = [0.0, y_max]
    edges.extend(y_max * 0.5 ** np.arange(1, n_geo + 1))
    if ax * y_max > 2.0 * math.pi:
        n_zeros = int(ax * y_max / math.pi + 0.5)
        edges.extend((np.arange(n_zeros) + 0.5) * (math.pi / ax))
    edges = np.unique(np.asarray(edges))
    edges = edges[edges <= y_max]

    def integrand(y):
        return np.cos(ax * y) * np.exp(-t * y ** alpha)

    total, err = integrate_panels(integrand, edges, cfg)
    value = total / math.pi
    cap = density_cap(alpha, t)
    tol = max(cfg.atol, cfg.rtol * cap)
    if value > cap + tol:
        raise NumericalFailure(f"stable density {value} exceeds cap {cap}")
    if value < 0.0:
        if value < -max(tol, err / math.pi):
            raise NumericalFailure(f"stable density came out negative ({value})")
        value = 0.0
    return value


def _series_terms(alpha, xe, n_terms):
    k = np.arange(1, n_terms + 1, dtype=float)
    s = np.sin(0.5 * math.pi * alpha * k)
    s[np.abs(s) < 1e-15] = 0.0
    logmag = gammaln(alpha * k + 1.0) - gammaln(k + 1.0) - (alpha * k + 1.0) * math.log(xe)
    sign = np.where(k % 2 == 1, 1.0, -1.0) * np.sign(s)
    with np.errstate(divide="ignore", over="ignore"):
        logmag = logmag + np.log(np.abs(s))
        return sign * np.exp(logmag) / math.pi


def stable_density_series(alpha: float, t: float, x: float,
                          cfg: QuadratureConfig = DEFAULT_QUADRATURE):
    """Tail expansion of the density, or ``None`` when it is not accurate.

    ``f_1(x) = pi^-1 sum_k (-1)^(k+1) Gamma(alpha k + 1)/k! sin(pi alpha k/2)
    |x|^(-alpha k - 1)``, with ``f_t(x) = t^(-1/alpha) f_1(t^(-1/alpha) x)``.
    The sum stops at the smallest term; the estimated error is that term plus
    a round-off allowance. ``None`` is returned when the estimate exceeds a
    tenth of the configured tolerance, or when alpha == 2 (all terms vanish).

    Returns
    -------
    value, error : tuple of float, or None
    """
    _check(alpha, t)
    if alpha == 2.0 or x == 0:
        return None
    scale = t ** (-1.0 / alpha)
    xe = abs(float(x)) * scale
    terms = _series_terms(alpha, xe, _SERIES_MAX_TERMS)
    mags = np.abs(terms)
    nz = np.flatnonzero(mags > 0)
    if nz.size < 2:
        return None
    # stop before the first nonzero term that is larger than its predecessor
    m = mags[nz]
    grow = np.flatnonzero(m[1:] > m[:-1])
    stop = nz[grow[0]] if grow.size else nz[-1]
    used = terms[: stop + 1]
    tail = mags[stop + 1:]
    tail = tail[tail > 0]
    if tail.size == 0:
        return None
    total = math.fsum(used)
    err = tail[0] + 1e-16 * (stop + 1) * float(mags[: stop + 1].max())
    if total <= 0 or err > 0.1 * max(cfg.atol / scale, cfg.rtol * total):
        return None
    return total * scale, err * scale


def stable_density(alpha: float, t: float, x: float,
                   cfg: QuadratureConfig = DEFAULT_QUADRATURE) -> float:
    """Direct evaluation: tail series where it is accurate, Fourier otherwise."""
    _check(alpha, t)
    if abs(x) * t ** (-1.0 / alpha) >= 4.0:
        s = stable_density_series(alpha, t, x, cfg)
        if s is not None:
            return s[0]
    return stable_density_fourier(alpha, t, x, cfg)


class StableTable:
    """Interpolated unit-time density for the sampler hot path.

    ``log f_1`` is tabulated against ``v = asinh(|x|)`` on ``[0, asinh(x_tab)]``
    and interpolated with a cubic spline; beyond ``x_tab`` a fixed-length tail
    series is summed. Other times follow from ``f_t(x) = t^(-1/a) f_1(t^(-1/a) x)``.
    The table is immutable once built.
    """

    def __init__(self, alpha: float, n_nodes: int = 2049,
                 cfg: QuadratureConfig = DEFAULT_QUADRATURE):
        _check(alpha, 1.0)
        self.alpha = alpha
        # far enough out that the tail series is exact to double precision,
        # so the hand-over from spline to series is seamless
        x_tab = 1000.0
        if alpha < 2.0:
            if stable_density_series(alpha, 1.0, x_tab, cfg) is None:
                raise NumericalFailure(f"no usable tail series for alpha={alpha}")
        else:
            x_tab = 40.0
        self.x_tab = x_tab
        v = np.linspace(0.0, math.asinh(x_tab), n_nodes)
        if alpha == 2.0:
            vals = np.exp(-0.25 * np.sinh(v) ** 2) / math.sqrt(4.0 * math.pi)
        else:
            vals = np.array([stable_density(alpha, 1.0, xv, cfg) for xv in np.sinh(v)])
        with np.errstate(divide="ignore"):
            self._spline = CubicSpline(v, np.log(vals), bc_type=((1, 0.0), "not-a-knot"))
        if alpha < 2.0:
            terms = _series_terms(alpha, x_tab, _SERIES_MAX_TERMS)
            mags = np.abs(terms)
            nz = np.flatnonzero(mags > 0)
            grow = np.flatnonzero(mags[nz][1:] > mags[nz][:-1])
            self._n_terms = int(nz[grow[0]] + 1) if grow.size else int(nz[-1] + 1)
            self._coef = _series_terms(alpha, 1.0, self._n_terms)

    def pdf1(self, x):
        """Unit-time density at ``x`` (array-valued)."""
        ax = np.abs(np.asarray(x, dtype=float))
        out = np.empty_like(ax)
        inner = ax <= self.x_tab
        out[inner] = np.exp(self._spline(np.arcsinh(ax[inner])))
        if np.any(~inner):
            xo = ax[~inner]
            if self.alpha == 2.0:
                out[~inner] = np.exp(-0.25 * xo * xo) / math.sqrt(4.0 * math.pi)
            else:
                # Horner in x^-alpha
                v = xo ** -self.alpha
                acc = np.full_like(xo, self._coef[-1])
                for c in self._coef[-2::-1]:
                    acc = acc * v + c
                out[~inner] = acc * v / xo
        return out

    def logpdf(self, t, x):
        t = np.asarray(t, dtype=float)
        scale = t ** (-1.0 / self.alpha)
        with np.errstate(divide="ignore"):
            return np.log(scale * self.pdf1(scale * np.asarray(x, dtype=float)))


_TABLES: dict[float, StableTable] = {}
_TABLES_LOCK = threading.Lock()


def stable_table(alpha: float) -> StableTable:
    """Memoised :class:`StableTable`; construction is serialised by a lock."""
    with _TABLES_LOCK:
        tab = _TABLES.get(alpha)
        if tab is None:
            tab = _TABLES[alpha] = StableTable(alpha)
        return tab
