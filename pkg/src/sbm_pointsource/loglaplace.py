"""Picard solver for the log-Laplace integral equation

    v(t, x) = S_t f(x) - eta int_0^t S_{t-s}[v(s, .)^{1+beta}](x) ds

on a time x log-radius grid, plus Laplace functionals and the space-time
scaling check ``w_k(t, x) = k^{1/beta} v(kt, sqrt(k) x)``.

Spatial action of ``S_tau`` on grid data uses product integration: node
values are interpolated (cubic spline of ``r v`` in ``log r``, ``c/r`` below
the first node, zero beyond the last) and every cardinal basis function is
integrated against the exact kernel. The ``s = 0`` slice uses the analytic datum
directly and the ``s = t`` slice uses ``S_0 = identity``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigError, DomainError
from .flow import semigroup_on_grid
from .function_space import AtomicMeasure, RadialTestFunction, function_from_json, grid_profile
from .kernel import DEFAULT_CONFIG, FOUR_PI, KernelEvalConfig, _bracket_array
from .quadrature import gauss_panels


@dataclass(frozen=True)
class BranchingParams:
    eta: float
    beta: float

    def __post_init__(self):
        if not self.eta >= 0:
            raise DomainError("branching rate eta must be non-negative")
        if not 0.0 < self.beta < 1.0:
            raise DomainError("beta must lie strictly between 0 and 1")


@dataclass(frozen=True)
class GridSpec:
    t_max: float
    n_times: int = 64
    n_radii: int = 96
    r_min: float = 1e-3
    r_max: float = 1e2

    def __post_init__(self):
        if not (self.t_max > 0 and self.n_times >= 1 and self.n_radii >= 4
                and 0 < self.r_min < self.r_max):
            raise DomainError(f"invalid grid {self!r}")

    @property
    def times(self):
        return np.linspace(0.0, self.t_max, self.n_times + 1)

    @property
    def radii(self):
        return np.geomspace(self.r_min, self.r_max, self.n_radii)

    def scaled(self, k):
        rk = math.sqrt(k)
        return GridSpec(self.t_max * k, self.n_times, self.n_radii, self.r_min * rk, self.r_max * rk)


@dataclass
class RadialField:
    """Values of ``v(t_i, r_j)``; row 0 is the initial datum."""

    times: np.ndarray
    radii: np.ndarray
    values: np.ndarray

    @property
    def near_origin_coefficient(self):
        """``c`` per time slice in the continuation ``v ~ c / r`` below ``r_1``."""
        return self.radii[0] * self.values[:, 0]

    def time_index(self, t):
        idx = int(np.argmin(np.abs(self.times - t)))
        if not math.isclose(self.times[idx], t, rel_tol=1e-9, abs_tol=1e-12):
            raise DomainError(f"t = {t} is not a grid time")
        return idx

    def at(self, t, r):
        """Interpolate the slice at grid time ``t`` inside the radial hull."""
        r = np.asarray(r, dtype=float)
        if np.any(r < self.radii[0]) or np.any(r > self.radii[-1]):
            raise DomainError("radius outside the grid hull; refusing to extrapolate")
        return grid_profile(self.radii, self.values[self.time_index(t)])(r)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t/r", *[repr(float(r)) for r in self.radii]])
            for t, row in zip(self.times, self.values):
                w.writerow([repr(float(t)), *[repr(float(v)) for v in row]])


@dataclass
class PicardReport:
    iterations: int
    final_sup_residual: float
    converged: bool
    residual_history: list = field(default_factory=list)
    clamp_count: int = 0

    def to_json(self):
        return {
            "iterations": self.iterations,
            "final_sup_residual": self.final_sup_residual,
            "converged": self.converged,
            "residual_history": list(self.residual_history),
            "clamp_count": self.clamp_count,
        }


def _spline_basis(radii, nodes):
    """Matrix ``H[q, j]`` so that ``g(nodes) ~ H @ g(radii)``.

    Same interpolant as :func:`grid_profile`: ``r g(r)`` is a cubic spline in
    ``log r``, continued as ``c / r`` below the first node and as 0 beyond
    the last.
    """
    n = radii.size
    H = np.zeros((nodes.size, n))
    below = nodes < radii[0]
    H[below, 0] = radii[0] / nodes[below]
    inside = (nodes >= radii[0]) & (nodes <= radii[-1])
    cardinal = CubicSpline(np.log(radii), np.diag(radii))
    H[inside] = cardinal(np.log(nodes[inside])) / nodes[inside, None]
    return H


def propagator_matrix(alpha, tau, radii, order=6):
    """``A[i, j]`` with ``(S_tau g)(r_i) ~ sum_j A[i, j] g(r_j)``.

    The kernel is integrated exactly against each cardinal basis function;
    the basis has small negative lobes, so entries can be slightly negative.
    """
    radii = np.asarray(radii, dtype=float)
    width = math.sqrt(tau) / 3.0
    nodes, w = gauss_panels(np.concatenate([[0.0], radii]), width, order=order)
    H = _spline_basis(radii, nodes) * (w * nodes)[:, None]
    rx = radii[:, None]
    r = nodes[None, :]
    K = np.exp(-(rx - r) ** 2 / (4.0 * tau)) * -np.expm1(-rx * r / tau) / (rx * math.sqrt(FOUR_PI * tau))
    if alpha != math.inf:
        K = K + (2.0 * FOUR_PI * tau / rx) * _bracket_array(alpha, tau, r + rx)
    return K @ H


def _power(f: RadialTestFunction, p):
    base = f.func
    top = f.support if math.isfinite(f.support) else 1e6
    probe = np.geomspace(1e-9, max(top, 1e-9), 4001)
    bound = float(np.max(probe * np.asarray(base(probe), dtype=float) ** p))
    return RadialTestFunction(
        func=lambda r: np.asarray(base(r), dtype=float) ** p,
        dominating_constant=max(1.01 * bound, 1e-300),
        singularity_exponent=min(1.0, f.singularity_exponent * p),
        breakpoints=f.breakpoints,
        support=f.support,
        feature_scale=f.feature_scale,
    )


def solve_log_laplace(alpha, bp: BranchingParams, f: RadialTestFunction, grid: GridSpec,
                      cfg: KernelEvalConfig = DEFAULT_CONFIG, tol=1e-8, max_iter=200,
                      _cache=None):
    """Solve for ``v`` by Picard iteration started at ``v = S_t f``.

    Time integral by the trapezoid rule. ``alpha = +inf`` solves the classical
    (free) equation. Convergence is declared when the sup over the grid of
    ``r |v_new - v_old|`` drops below ``tol`` times the sup of ``r S_t f``.
    Returns ``(RadialField, PicardReport)``.
    """
    if alpha == -math.inf:
        raise DomainError("alpha = -inf has no solution")
    times = grid.times
    radii = grid.radii
    M = grid.n_times
    dt = times[1] - times[0]
    p = 1.0 + bp.beta

    F = np.empty((M + 1, radii.size))
    F[0] = f(radii)
    F[1:] = semigroup_on_grid(alpha, times[1:], radii, f)
    scale = float(np.max(radii * F)) or 1.0
    field_ = RadialField(times, radii, F.copy())
    if bp.eta == 0.0 or not np.any(F):
        return field_, PicardReport(0, 0.0, True, [])

    # s = 0 slice: S_t[f^{1+beta}] straight from the analytic datum
    G = np.zeros_like(F)
    G[1:] = semigroup_on_grid(alpha, times[1:], radii, _power(f, p))
    A = _cache if _cache is not None else np.stack(
        [propagator_matrix(alpha, m * dt, radii) for m in range(1, M + 1)])

    v = F.copy()
    history = []
    clamps = 0
    converged = False
    for it in range(1, max_iter + 1):
        U = v ** p
        N = np.zeros_like(F)
        N[1:] += 0.5 * dt * G[1:]
        N[1:] += 0.5 * dt * U[1:]
        for m in range(1, M):
            # contributes to rows i = j + m for interior j = 1 .. M - m
            N[m + 1:] += dt * (U[1:M + 1 - m] @ A[m - 1].T)
        # the nonlinear integral of a non-negative field is non-negative;
        # interpolation undershoot must not push v above S_t f
        np.maximum(N, 0.0, out=N)
        new = F - bp.eta * N
        neg = new < 0.0
        clamps += int(np.count_nonzero(neg))
        new[neg] = 0.0
        new[0] = F[0]
        res = float(np.max(radii * np.abs(new - v))) / scale
        history.append(res)
        v = new
        if res <= tol:
            converged = True
            break
    field_.values = v
    return field_, PicardReport(len(history), history[-1], converged, history, clamps)


def laplace_functional(mu: AtomicMeasure, v: RadialField, t) -> float:
    """``E_mu exp<X_t, -f> = exp(-<mu, v(t, .)>)``; ``t`` must be a grid time."""
    if len(mu) == 0:
        return 1.0
    vals = v.at(t, mu.radii)
    return float(math.exp(-float(np.sum(mu.weights * vals))))


@dataclass
class ScalingReport:
    k: float
    discrepancy: float
    alpha_scaled_problem: float
    alpha_direct_problem: float
    scaled_report: PicardReport
    direct_report: PicardReport

    def to_json(self):
        return {
            "k": self.k,
            "discrepancy": self.discrepancy,
            "alpha_scaled_problem": self.alpha_scaled_problem,
            "alpha_direct_problem": self.alpha_direct_problem,
            "scaled_converged": self.scaled_report.converged,
            "direct_converged": self.direct_report.converged,
        }


def verify_scaling_property(alpha, lambda_k, k, bp: BranchingParams, f: RadialTestFunction,
                            grid: GridSpec, cfg: KernelEvalConfig = DEFAULT_CONFIG, tol=1e-10):
    """Compare ``w_k = k^{1/beta} v(k t, sqrt(k) x)`` against a direct solve.

    ``v`` solves the equation with kernel ``p^{lambda_k alpha}`` and datum
    ``k^{-1/beta} f(k^{-1/2} .)`` on the grid stretched by ``(k, sqrt k)``;
    the direct solve uses kernel ``p^{sqrt(k) lambda_k alpha}`` and datum
    ``f``. The discrepancy is the relative ``r``-weighted sup norm.
    """
    if not k > 0:
        raise DomainError("k must be positive")
    rk = math.sqrt(k)
    a_scaled = lambda_k * alpha
    a_direct = rk * lambda_k * alpha
    v, rep_v = solve_log_laplace(a_scaled, bp, f.scaled(k ** (-1.0 / bp.beta), rk), grid.scaled(k), cfg, tol=tol)
    u, rep_u = solve_log_laplace(a_direct, bp, f, grid, cfg, tol=tol)
    w = k ** (1.0 / bp.beta) * v.values
    r = grid.radii
    denom = float(np.max(r * np.abs(u.values))) or 1.0
    disc = float(np.max(r * np.abs(w - u.values))) / denom
    return ScalingReport(k, disc, a_scaled, a_direct, rep_v, rep_u)


def scaling_exponent_identity(beta) -> float:
    """``1/beta + 1 - (1/beta)(1 + beta)``: the power of ``k`` left over after
    rescaling the nonlinear term. It is zero, which is why the rescaled ``v``
    solves an equation of the same form."""
    return 1.0 / beta + 1.0 - (1.0 / beta) * (1.0 + beta)


def solve_config_from_json(cfg: dict):
    """Parse ``{"alpha", "eta", "beta", "function", "grid": {...}}``."""
    try:
        alpha = float(cfg["alpha"])
        bp = BranchingParams(float(cfg["eta"]), float(cfg["beta"]))
        f = function_from_json(cfg["function"])
        grid = GridSpec(**cfg.get("grid", {"t_max": 1.0}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad log-Laplace config: {exc}") from None
    return alpha, bp, f, grid
