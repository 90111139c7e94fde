"""Panel-wise adaptive Gauss-Legendre quadrature."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import NumericalFailure

_NODES_LO, _WEIGHTS_LO = np.polynomial.legendre.leggauss(16)
_NODES_HI, _WEIGHTS_HI = np.polynomial.legendre.leggauss(32)


@dataclass(frozen=True)
class QuadratureConfig:
    """Tolerances shared by the numerical integrators.

    Attributes
    ----------
    rtol, atol : float
        Relative and absolute tolerance on the returned integral.
    max_subdivisions : int
        Maximum number of panel bisections beyond the initial partition.
    truncation : float
        Integrands of the form exp(-t y**alpha) are cut where they drop
        below this threshold.
    """

    rtol: float = 1e-8
    atol: float = 1e-12
    max_subdivisions: int = 200
    truncation: float = 1e-16

    def __post_init__(self):
        if not (self.rtol > 0 and self.atol > 0 and self.truncation > 0):
            raise ValueError("tolerances must be positive")
        if self.max_subdivisions < 1:
            raise ValueError("max_subdivisions must be >= 1")


DEFAULT_QUADRATURE = QuadratureConfig()


def _rule(f, a, b, nodes, weights):
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    y = mid[:, None] + half[:, None] * nodes[None, :]
    return half * (f(y) @ weights)


def integrate_panels(f, edges, cfg: QuadratureConfig = DEFAULT_QUADRATURE):
    """Integrate ``f`` over ``[edges[0], edges[-1]]`` panel by panel.

    Each panel is evaluated with 16- and 32-point Gauss-Legendre rules; the
    difference is the panel error estimate. Panels are bisected, worst first,
    until the summed estimate meets ``max(atol, rtol * |I|)``.

    Parameters
    ----------
    f : callable
        Vectorised integrand accepting a 2-d array of abscissae.
    edges : array_like
        Strictly increasing panel boundaries.

    Returns
    -------
    value, error : float
        Sum of the 32-point panel values (compensated) and the summed error
        estimate.
    """
    edges = np.asarray(edges, dtype=float)
    a, b = edges[:-1], edges[1:]
    vals = _rule(f, a, b, _NODES_HI, _WEIGHTS_HI)
    errs = np.abs(vals - _rule(f, a, b, _NODES_LO, _WEIGHTS_LO))
    used = 0
    while True:
        total = math.fsum(vals)
        tol = max(cfg.atol, cfg.rtol * abs(total))
        err = float(errs.sum())
        if err <= tol:
            return total, err
        bad = np.flatnonzero(errs > tol / len(errs))
        if bad.size == 0:
            bad = np.array([int(np.argmax(errs))])
        if used + bad.size > cfg.max_subdivisions:
            raise NumericalFailure(
                f"quadrature did not converge: error {err:.3e} > tolerance "
                f"{tol:.3e} after {used} subdivisions"
            )
        used += bad.size
        mid = 0.5 * (a[bad] + b[bad])
        na = np.concatenate([a[bad], mid])
        nb = np.concatenate([mid, b[bad]])
        nv = _rule(f, na, nb, _NODES_HI, _WEIGHTS_HI)
        ne = np.abs(nv - _rule(f, na, nb, _NODES_LO, _WEIGHTS_LO))
        keep = np.ones(len(a), dtype=bool)
        keep[bad] = False
        a = np.concatenate([a[keep], na])
        b = np.concatenate([b[keep], nb])
        vals = np.concatenate([vals[keep], nv])
        errs = np.concatenate([errs[keep], ne])


# double-exponential rule: w = sigmoid(pi sinh s), s in [-_DE_SPAN, _DE_SPAN]
_DE_SPAN = 6.0
_DE_MAX_LEVEL = 10
_DE_MIN_LEVEL = 3


def _de_nodes(h, offset):
    s = np.arange(-_DE_SPAN + offset, _DE_SPAN + 1e-12, 2 * h if offset else h)
    v = np.pi * np.sinh(s)
    # log sigmoid(v) and log sigmoid(-v), stable for large |v|
    lo = -np.logaddexp(0.0, -v)
    hi = -np.logaddexp(0.0, v)
    w = np.exp(lo)
    dw = np.exp(lo + hi) * np.pi * np.cosh(s)
    return w, dw


def de_integrate(f, start, length, cfg: QuadratureConfig = DEFAULT_QUADRATURE):
    """Batched tanh-sinh quadrature of ``f`` over segments.

    Row ``i`` integrates over ``d in start[i] + length[i] * (0, 1)``; a
    negative ``length`` runs the segment leftwards (the result is still the
    integral over the segment, not its negative). ``f(d, rows)`` receives a
    2-d array of abscissae and the indices of the rows they belong to. Nodes
    cluster double-exponentially at both ends, so integrable end-point
    singularities located exactly at ``start`` are resolved when ``start`` is 0
    (the offset is then formed without cancellation).

    Returns
    -------
    ndarray
        Integral per row. Non-converged rows raise :class:`NumericalFailure`.
    """
    start = np.asarray(start, dtype=float)
    length = np.asarray(length, dtype=float)
    n = start.size
    out = np.zeros(n)
    rows = np.flatnonzero(length != 0)
    if rows.size == 0:
        return out
    h = 0.5
    w, dw = _de_nodes(h, 0.0)

    def partial(rows, w, dw):
        d = start[rows, None] + length[rows, None] * w[None, :]
        vals = f(d, rows)
        return (vals * dw[None, :]).sum(axis=1)

    sums = partial(rows, w, dw)
    est = np.abs(length[rows]) * h * sums
    for level in range(1, _DE_MAX_LEVEL + 1):
        h *= 0.5
        w, dw = _de_nodes(h, h)
        sums = sums + partial(rows, w, dw)
        new = np.abs(length[rows]) * h * sums
        err = np.abs(new - est)
        done = err <= np.maximum(cfg.atol, cfg.rtol * np.abs(new))
        if level < _DE_MIN_LEVEL:
            done[:] = False
        out[rows[done]] = new[done]
        rows, sums, est = rows[~done], sums[~done], new[~done]
        if rows.size == 0:
            return out
    raise NumericalFailure(
        f"double-exponential quadrature did not converge for {rows.size} rows"
    )


def de_integrate_shared(h, a, b, cfg: QuadratureConfig = DEFAULT_QUADRATURE):
    """Tanh-sinh quadrature of ``h`` over ``[a, b]`` with nodes shared by a batch.

    ``h(x)`` is called with scalar ``x`` and returns a float or an array; all
    components are integrated on the same nodes and each must meet
    ``max(atol, rtol * |I|)``.
    """
    if b <= a:
        raise ValueError("need a < b")
    length = b - a

    def level_sum(h_step, offset):
        w, dw = _de_nodes(h_step, offset)
        acc = 0.0
        for wi, dwi in zip(w, dw):
            # abscissae rounded onto an end point carry negligible weight
            xi = a + length * wi if wi < 0.5 else b - length * (1.0 - wi)
            if dwi == 0.0 or xi <= a or xi >= b:
                continue
            acc = acc + np.asarray(h(xi), dtype=float) * dwi
        return acc

    step = 0.5
    sums = level_sum(step, 0.0)
    est = length * step * sums
    for level in range(1, _DE_MAX_LEVEL + 1):
        step *= 0.5
        sums = sums + level_sum(step, step)
        new = length * step * sums
        err = np.abs(new - est)
        if level >= _DE_MIN_LEVEL and np.all(err <= np.maximum(cfg.atol, cfg.rtol * np.abs(new))):
            return new
        est = new
    raise NumericalFailure("shared-node double-exponential quadrature did not converge")
