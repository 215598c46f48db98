"""Quadrature helpers: segmented QUADPACK calls, log-space integration, and
composite Gauss-Legendre panel rules for vectorised grid work."""

from __future__ import annotations

import math
import warnings

import numpy as np
from scipy import integrate

from .errors import QuadratureError

_GL_CACHE = {}


def gauss_legendre(n):
    if n not in _GL_CACHE:
        _GL_CACHE[n] = np.polynomial.legendre.leggauss(n)
    return _GL_CACHE[n]


def _edges(lo, hi, points):
    inner = sorted(p for p in points if lo < p < hi)
    return [lo, *inner, hi]


def quad_segments(func, lo, hi, cfg, points=()):
    """Integrate ``func`` over ``[lo, hi]``, splitting at ``points``.

    Returns ``(value, abs_error)``. Raises :class:`QuadratureError` when a
    segment fails to converge and its error estimate exceeds the requested
    tolerance by more than a factor of ten.
    """
    if hi <= lo:
        return 0.0, 0.0
    total = 0.0
    err = 0.0
    edges = _edges(lo, hi, points)
    for a, b in zip(edges[:-1], edges[1:]):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, e, info, *rest = integrate.quad(
                func, a, b,
                epsabs=cfg.quadrature_abs_tol, epsrel=cfg.quadrature_rel_tol,
                limit=cfg.max_subdivisions, full_output=1,
            )
        allowed = max(cfg.quadrature_abs_tol, cfg.quadrature_rel_tol * abs(val))
        if rest and e > 10.0 * allowed:
            raise QuadratureError(f"no convergence on [{a:.6g}, {b:.6g}]", e)
        total += val
        err += e
    return total, err


def log_quad(log_func, lo, hi, cfg, points=(), n_probe=4001):
    """Natural log of ``int exp(log_func(r)) dr`` over ``[lo, hi]``.

    The integrand is shifted by its maximum on a probe grid so that values
    far outside double range integrate without overflow. ``log_func`` must
    accept arrays.
    """
    if hi <= lo:
        return -math.inf
    probe = np.unique(np.concatenate([
        np.linspace(lo, hi, n_probe),
        lo + (hi - lo) * np.geomspace(1e-12, 1.0, n_probe),
        np.asarray([p for p in points if lo <= p <= hi], dtype=float),
    ]))
    with np.errstate(divide="ignore"):
        vals = log_func(probe)
    m = float(np.max(vals))
    if not math.isfinite(m):
        return -math.inf

    def f(r):
        return math.exp(float(log_func(np.asarray(r))) - m)

    # the peak might be narrow; give quad a breakpoint there
    peak = float(probe[int(np.argmax(vals))])
    val, _ = quad_segments(f, lo, hi, cfg, points=(*points, peak))
    if val <= 0.0:
        return -math.inf
    return m + math.log(val)


def gauss_panels(edges, max_width, order=10, grade_to_zero=True, grading_levels=40):
    """Composite Gauss-Legendre nodes and weights.

    ``edges`` are mandatory panel boundaries (kinks of the integrand).
    Intervals are split uniformly so no panel exceeds ``max_width``. If the
    first edge is 0 and ``grade_to_zero`` is set, the first interval is
    additionally split geometrically toward 0 to resolve integrable
    ``r^{-xi}`` singularities.
    """
    x0, w0 = gauss_legendre(order)
    edges = np.unique(np.asarray(edges, dtype=float))
    bounds = []
    for a, b in zip(edges[:-1], edges[1:]):
        if a == 0.0 and grade_to_zero:
            top = min(b, max_width)
            geo = top * 0.5 ** np.arange(grading_levels, -1, -1)
            bounds.append(np.concatenate([[0.0], geo]))
            a = top
            if b <= a:
                continue
        n = max(1, int(math.ceil((b - a) / max_width)))
        bounds.append(np.linspace(a, b, n + 1))
    lo = np.concatenate([bd[:-1] for bd in bounds])
    hi = np.concatenate([bd[1:] for bd in bounds])
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    nodes = (mid[:, None] + half[:, None] * x0[None, :]).ravel()
    weights = (half[:, None] * w0[None, :]).ravel()
    return nodes, weights
