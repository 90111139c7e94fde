"""Sampling of fixed-endpoint bridges and of the random bridge zeta.

A bridge of length ``r`` pinned at ``z`` is sampled on a grid of positive
times; at every grid time ``t >= r`` the stored value is ``z`` itself, so the
event ``{zeta_t == z}`` coincides bit-for-bit with ``{r <= t}``. Pre-``r``
values that would round onto ``z`` are moved one ulp towards the previous
state, keeping that identity exact.

Three samplers are provided: explicit constructions for Brownian motion and
the gamma process, and a generic sampler that draws each step from the bridge
transition density by numerical inversion of its distribution function.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .errors import NumericalFailure, PreconditionError
from .kernels import BrownianDrift, GammaSubordinator, LevyModel, SymmetricStable
from .measures import LengthMeasure, PinningMeasure, sample_length, sample_pinning, validate_pair
from .rng import map_blocks, stream


@dataclass(frozen=True)
class GridSpec:
    """Time grid: ``n_steps`` equal steps up to ``horizon``, or explicit ``times``."""

    horizon: float = 1.0
    n_steps: int = 10
    times: tuple | None = None

    def __post_init__(self):
        if self.times is not None:
            t = np.asarray(self.times, dtype=float)
            if t.ndim != 1 or t.size == 0 or t[0] <= 0 or np.any(np.diff(t) <= 0):
                raise PreconditionError("grid times must be positive and strictly increasing")
            object.__setattr__(self, "times", tuple(t.tolist()))
        elif not (self.horizon > 0 and self.n_steps >= 1):
            raise PreconditionError("need horizon > 0 and n_steps >= 1")

    def grid(self):
        if self.times is not None:
            return np.asarray(self.times)
        return self.horizon * np.arange(1, self.n_steps + 1) / self.n_steps

    def to_dict(self):
        if self.times is not None:
            return {"times": list(self.times)}
        return {"horizon": self.horizon, "n_steps": self.n_steps}


@dataclass
class BridgePath:
    grid: np.ndarray
    values: np.ndarray
    r: float
    z: float
    model: str


@dataclass
class PathBatch:
    """``n`` paths on a common grid; ``values`` has shape ``(n, len(grid))``."""

    grid: np.ndarray
    values: np.ndarray
    r: np.ndarray
    z: np.ndarray
    model: str

    def __len__(self):
        return self.values.shape[0]

    def path(self, i) -> BridgePath:
        return BridgePath(self.grid, self.values[i], float(self.r[i]), float(self.z[i]), self.model)

    def at(self, t):
        """Column of values at grid time ``t`` (must be a grid point)."""
        j = np.flatnonzero(self.grid == t)
        if j.size != 1:
            raise PreconditionError(f"{t} is not a grid time")
        return self.values[:, j[0]]

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        return cls(parts[0].grid,
                   np.concatenate([p.values for p in parts]),
                   np.concatenate([p.r for p in parts]),
                   np.concatenate([p.z for p in parts]),
                   parts[0].model)

    def to_csv(self, fh=None, meta=None):
        """Write ``time,value,r,z,path_id`` rows; reals keep 17 significant digits.

        ``meta`` (a mapping) goes into a leading ``#`` comment line. Returns
        the text when ``fh`` is None.
        """
        own = fh is None
        if own:
            fh = io.StringIO()
        if meta:
            fh.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "value", "r", "z", "path_id"])
        fmt = "{:.17g}".format
        for i in range(len(self)):
            ri, zi = fmt(self.r[i]), fmt(self.z[i])
            for t, v in zip(self.grid, self.values[i]):
                w.writerow([fmt(t), fmt(v), ri, zi, i])
        if own:
            return fh.getvalue()


def _as_rows(r, z, n):
    r = np.broadcast_to(np.asarray(r, dtype=float), (n,)).copy()
    z = np.broadcast_to(np.asarray(z, dtype=float), (n,)).copy()
    if np.any(r <= 0):
        raise PreconditionError("bridge length must be positive")
    return r, z


def _finish(values, times, r, z, prev):
    """Constant extension after r, plus the one-ulp guard against pre-r hits on z."""
    after = times[None, :] >= r[:, None]
    values = np.where(after, z[:, None], values)
    clash = (~after) & (values == z[:, None])
    if clash.any():
        rows, cols = np.nonzero(clash)
        values[rows, cols] = np.nextafter(z[rows], prev[rows, cols])
    return values


def _prev_values(values):
    return np.concatenate([np.zeros((values.shape[0], 1)), values[:, :-1]], axis=1)


def sample_brownian_bridge_explicit(sigma, drift, r, z, times, rng, n=None):
    """``B_t - (t/r) (B_r - z)`` for ``t < r`` from a simulated Brownian path.

    ``B`` has volatility ``sigma`` and drift ``drift``; the drift cancels.
    ``r`` and ``z`` may be scalars (with ``n`` paths) or per-path arrays.
    """
    times = np.asarray(times, dtype=float)
    n = np.size(r) if n is None else n
    r, z = _as_rows(r, z, n)
    dt = np.diff(np.concatenate([[0.0], times]))
    noise = rng.standard_normal((n, times.size))
    b = np.cumsum(sigma * np.sqrt(dt) * noise + drift * dt, axis=1)
    k = np.searchsorted(times, r, side="left") - 1  # last grid index with t < r
    has = k >= 0
    t_last = np.where(has, times[np.maximum(k, 0)], 0.0)
    b_last = np.where(has, b[np.arange(n), np.maximum(k, 0)], 0.0)
    gap = r - t_last
    b_r = b_last + drift * gap + sigma * np.sqrt(gap) * rng.standard_normal(n)
    vals = b - (times[None, :] / r[:, None]) * (b_r - z)[:, None]
    return PathBatch(times, _finish(vals, times, r, z, _prev_values(vals)), r, z, "brownian")


def _log_gamma_variates(shape, rng):
    """log of Gamma(shape, 1) draws, accurate for tiny shapes."""
    shape = np.asarray(shape, dtype=float)
    g = rng.standard_gamma(shape + 1.0)
    u = rng.random(shape.shape)
    return np.log(g) + np.log(u) / shape


def sample_gamma_bridge_explicit(rate, scale, r, z, times, rng, n=None):
    """``z * gamma_t / gamma_r`` from simulated gamma-process increments.

    Increments are generated in log space, so the ratio stays accurate when
    shapes ``rate * dt`` are small. ``scale`` cancels.
    """
    times = np.asarray(times, dtype=float)
    n = np.size(r) if n is None else n
    r, z = _as_rows(r, z, n)
    if np.any(z <= 0):
        raise PreconditionError("gamma bridge needs z > 0")
    dt = np.diff(np.concatenate([[0.0], times]))
    logs = _log_gamma_variates(np.broadcast_to(rate * dt, (n, times.size)), rng)
    cum = np.logaddexp.accumulate(logs, axis=1)
    k = np.searchsorted(times, r, side="left") - 1
    has = k >= 0
    t_last = np.where(has, times[np.maximum(k, 0)], 0.0)
    c_last = np.where(has, cum[np.arange(n), np.maximum(k, 0)], -np.inf)
    tail = _log_gamma_variates(rate * (r - t_last), rng)
    c_r = np.logaddexp(c_last, tail)
    vals = z[:, None] * np.exp(np.minimum(cum - c_r[:, None], 0.0))
    return PathBatch(times, _finish(vals, times, r, z, _prev_values(vals)), r, z, "gamma")


# ---------------------------------------------------------------------------
# generic sampler

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(5)
_COARSE_CELLS = 32
_CELLS = 64
_MAX_CELLS = 4096
_TAIL_MASS = 1e-10
_DRAW_TOL = 1e-9
_CHECK_ROWS = 64
_NEWTON_STEPS = 40
_ROW_CHUNK = 2048


def _logpdf_fn(model):
    if isinstance(model, SymmetricStable):
        return model.fast_logpdf
    return model.logpdf


class _StepLaw:
    """Bridge transition law of one step, in a per-row coordinate ``s``.

    Unbounded state spaces use ``y = c + w sinh(s)`` with ``c`` the linear
    interpolation towards the pin and ``w`` the spread of the step.
    Subordinators use ``y = x + (z - x) expit(2 sinh(s))``, which keeps both
    offsets ``y - x`` and ``z - y`` free of cancellation and turns the
    algebraic end-point behaviour into slowly varying exponential tails.
    """

    def __init__(self, model, dt1, dt2, x, z):
        self.logpdf = _logpdf_fn(model)
        self.dt1 = dt1
        self.dt2 = dt2
        self.x = x
        self.z = z
        self.sub = model.is_subordinator
        if self.sub:
            self.c = None
            self.w = z - x
            self.start = math.asinh(4.0)
        else:
            self.c = x + dt1 / (dt1 + dt2) * (z - x)
            self.w = np.asarray(model.spread(dt1 * dt2 / (dt1 + dt2)), dtype=float) * np.ones_like(x)
            self.sx = float(model.spread(dt1))
            self.sz = np.asarray(model.spread(dt2), dtype=float) * np.ones_like(x)
            if isinstance(model, SymmetricStable):
                # the density decays like exp(-(1 + 2 alpha) |s|) in s
                self.start = 23.0 / (1.0 + 2.0 * model.alpha) + 1.0
            else:
                self.start = math.asinh(8.0)

    def peak_edges(self, rows, lo, hi):
        """Extra cell edges clustered around the two kernel peaks (y = x and y = z)."""
        if self.sub:
            return None
        k = np.array([-4.0, -2.0, -1.0, -0.5, -0.25, -0.125, -0.0625, 0.0,
                      0.0625, 0.125, 0.25, 0.5, 1.0, 2.0, 4.0])
        c, w = self.c[rows, None], self.w[rows, None]
        yx = self.x[rows, None] + self.sx * k[None, :]
        yz = self.z[rows, None] + self.sz[rows, None] * k[None, :]
        s = np.arcsinh((np.concatenate([yx, yz], axis=1) - c) / w)
        return np.clip(s, lo[:, None], hi[:, None])

    def logq(self, s, rows):
        """Log density in ``s`` (unnormalised) for 2-d ``s``."""
        x, z, w = self.x[rows, None], self.z[rows, None], self.w[rows, None]
        dt2 = self.dt2[rows, None]
        if self.sub:
            v = 2.0 * np.sinh(s)
            jac = np.log(w) + log_expit(v) + log_expit(-v) + np.log(2.0 * np.cosh(s))
            return self.logpdf(self.dt1, w * expit(v)) + self.logpdf(dt2, w * expit(-v)) + jac
        y = self.c[rows, None] + w * np.sinh(s)
        jac = np.log(w) + np.log(np.cosh(s))
        return self.logpdf(self.dt1, y - x) + self.logpdf(dt2, z - y) + jac

    def state(self, s, rows):
        if self.sub:
            return self.x[rows] + self.w[rows] * expit(2.0 * np.sinh(s))
        return self.c[rows] + self.w[rows] * np.sinh(s)


def _cell_masses(law, lo, hi, n_cells, rows, local=True):
    edges = lo[:, None] + (hi - lo)[:, None] * np.linspace(0.0, 1.0, n_cells + 1)[None, :]
    extra = law.peak_edges(rows, lo, hi) if local else None
    if extra is not None:
        edges = np.sort(np.concatenate([edges, extra], axis=1), axis=1)
    h = np.diff(edges, axis=1)
    mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
    nodes = mid[:, :, None] + 0.5 * h[:, :, None] * _GL_NODES[None, None, :]
    lq = law.logq(nodes.reshape(len(rows), -1), rows).reshape(nodes.shape)
    shift = np.max(lq, axis=(1, 2))
    shift = np.where(np.isfinite(shift), shift, 0.0)
    q = np.exp(lq - shift[:, None, None])
    mass = 0.5 * h * (q @ _GL_WEIGHTS)
    return edges, mass, shift


def _bracket(law, rows):
    """Grow the s-range per row until the end cells hold negligible mass."""
    lo = np.full(rows.size, -law.start)
    hi = np.full(rows.size, law.start)
    todo = np.arange(rows.size)
    grow = math.log(2.0)
    while todo.size:
        _, mass, _ = _cell_masses(law, lo[todo], hi[todo], _COARSE_CELLS, rows[todo], local=False)
        total = mass.sum(axis=1)
        if np.any(~(total > 0)):
            raise NumericalFailure("bridge step density has no mass on the bracket "
                                   f"(dt1={law.dt1}, first rows {rows[todo][~(total > 0)][:5]})")
        left = mass[:, 0] > _TAIL_MASS * total
        right = mass[:, -1] > _TAIL_MASS * total
        lo[todo[left]] -= grow
        hi[todo[right]] += grow
        todo = todo[left | right]
        if np.any(lo < -30.0) or np.any(hi > 30.0):
            raise NumericalFailure("could not bracket the bridge step density "
                                   f"(captured mass below 1 - {_TAIL_MASS})")
    return lo, hi


def _invert(law, rows, lo, hi, n_cells, u):
    edges, mass, shift = _cell_masses(law, lo, hi, n_cells, rows)
    cum = np.cumsum(mass, axis=1)
    total = cum[:, -1]
    target = u * total
    j = np.minimum((cum < target[:, None]).sum(axis=1), mass.shape[1] - 1)
    idx = np.arange(rows.size)
    mj = mass[idx, j]
    before = np.where(j > 0, cum[idx, np.maximum(j - 1, 0)], 0.0)
    m = np.clip(target - before, 0.0, mj)
    a, b = edges[idx, j], edges[idx, j + 1]
    frac = np.where(mj > 0, m / np.where(mj > 0, mj, 1.0), 0.5)
    s = a + (b - a) * frac
    lo_b, hi_b = a.copy(), b.copy()
    act = np.arange(rows.size)
    for _ in range(_NEWTON_STEPS):
        sa, aa = s[act], a[act]
        half = 0.5 * (sa - aa)
        nodes = (0.5 * (sa + aa))[:, None] + half[:, None] * _GL_NODES[None, :]
        both = np.concatenate([nodes, sa[:, None]], axis=1)
        q = np.exp(law.logq(both, rows[act]) - shift[act, None])
        part = half * (q[:, :-1] @ _GL_WEIGHTS)
        q_s = q[:, -1]
        resid = part - m[act]
        lo_b[act] = np.where(resid < 0, sa, lo_b[act])
        hi_b[act] = np.where(resid >= 0, sa, hi_b[act])
        with np.errstate(divide="ignore", invalid="ignore"):
            new = sa - np.where(q_s > 0, resid / q_s, 0.0)
        bad = ~((new > lo_b[act]) & (new < hi_b[act]))
        new = np.where(bad, 0.5 * (lo_b[act] + hi_b[act]), new)
        moved = np.abs(new - sa) > 1e-14 * np.maximum(1.0, np.abs(sa))
        s[act] = new
        act = act[moved]
        if act.size == 0:
            break
    dens = np.exp(law.logq(s[:, None], rows)[:, 0] - shift) / total
    return s, dens


def _draw_step(model, dt1, dt2, x, z, u):
    """One inverse-CDF draw per row from the bridge transition density."""
    law = _StepLaw(model, dt1, dt2, x, z)
    rows = np.arange(x.size)
    lo, hi = _bracket(law, rows)
    n_cells = _CELLS
    s, _ = _invert(law, rows, lo, hi, n_cells, u)
    # refinement check on a subsample: doubling the cells must not move the
    # draws by more than _DRAW_TOL, in state units or in probability mass
    chk = rows[:_CHECK_ROWS]
    while True:
        s2, dens = _invert(law, chk, lo[chk], hi[chk], 2 * n_cells, u[chk])
        y1, y2 = law.state(s[chk], chk), law.state(s2, chk)
        near = np.abs(y1 - y2) <= _DRAW_TOL * np.maximum(1.0, np.abs(y1))
        mass = dens * np.abs(s[chk] - s2) <= _DRAW_TOL
        if np.all(near | mass):
            break
        n_cells *= 2
        if n_cells > _MAX_CELLS:
            raise NumericalFailure("inverse-CDF draws did not stabilise under refinement")
        s, _ = _invert(law, rows, lo, hi, n_cells, u)
    return law.state(s, rows)


def sample_fixed_bridge_generic(model: LevyModel, r, z, times, rng, n=None):
    """Sequential draws from the bridge transition density on ``times``.

    Each step samples ``y`` with density proportional to
    ``f_{t_k - t_{k-1}}(y - x_{k-1}) f_{r - t_k}(z - y)`` by inverting its
    distribution function, computed with 5-point Gauss-Legendre cells in a
    stretched coordinate and polished by a safeguarded Newton solve.
    """
    times = np.asarray(times, dtype=float)
    n = np.size(r) if n is None else n
    r, z = _as_rows(r, z, n)
    if model.is_subordinator and np.any(z <= 0):
        raise PreconditionError("subordinator bridge needs z > 0")
    vals = np.zeros((n, times.size))
    x = np.zeros(n)
    t_prev = 0.0
    for k, t in enumerate(times):
        u = rng.random(n)
        live = np.flatnonzero(t < r)
        for i in range(0, live.size, _ROW_CHUNK):
            rows = live[i:i + _ROW_CHUNK]
            y = _draw_step(model, t - t_prev, r[rows] - t, x[rows], z[rows], u[rows])
            y = np.where(y == z[rows], np.nextafter(z[rows], x[rows]), y)
            x[rows] = y
        vals[:, k] = x
        t_prev = t
    return PathBatch(times, _finish(vals, times, r, z, _prev_values(vals)), r, z, model.family)


def sample_fixed_bridge(model, r, z, times, rng, n=None, method="auto"):
    """Dispatch to the explicit construction when one exists, else the generic sampler."""
    if method not in ("auto", "explicit", "generic"):
        raise PreconditionError(f"unknown method {method!r}")
    if method != "generic":
        if isinstance(model, BrownianDrift):
            return sample_brownian_bridge_explicit(model.sigma, model.drift, r, z, times, rng, n)
        if isinstance(model, GammaSubordinator):
            return sample_gamma_bridge_explicit(model.rate, model.scale, r, z, times, rng, n)
        if method == "explicit":
            raise PreconditionError(f"no explicit construction for {model.family}")
    return sample_fixed_bridge_generic(model, r, z, times, rng, n)


def sample_random_bridge(model: LevyModel, lm: LengthMeasure, pm: PinningMeasure, grid,
                         n_paths, seed, method="auto", threads=None, validate=True):
    """Paths of the bridge with random length tau ~ lm and pin Z ~ pm.

    Work is split into blocks with their own streams, so results do not
    depend on ``threads``.
    """
    if validate:
        rep = validate_pair(model, lm, pm)
        if not rep.ok:
            raise PreconditionError("invalid (model, tau, Z): " + "; ".join(rep.violations))
    times = grid.grid() if isinstance(grid, GridSpec) else np.asarray(grid, dtype=float)

    def run(block, start, stop):
        rng = stream(seed, "paths", block)
        m = stop - start
        r = sample_length(lm, rng, m)
        z = sample_pinning(pm, rng, m)
        return sample_fixed_bridge(model, r, z, times, rng, m, method)

    return PathBatch.concat(map_blocks(run, n_paths, threads))
