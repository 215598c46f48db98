"""Monte Carlo check of the mean semigroup through a regularised potential.

Paths of the Brownian motion with generator ``Delta`` (per-coordinate
increment variance ``2 dt``) are weighted by

    exp(h(alpha, eps) eps^{-3} tau_eps),

where ``tau_eps`` is the time spent in the ball ``B_eps(0)``. As ``eps``
shrinks the weighted mean of ``f(|W_t|)`` is expected (heuristically,
without proof) to approach ``S_t^alpha f``.

Random streams are Philox generators keyed by ``(seed, block index)`` with a
fixed block size, so estimates do not depend on the number of threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import DomainError, MagnitudeOverflowError
from .flow import apply_semigroup_radial
from .function_space import RadialTestFunction
from .kernel import LOG_DBL_MAX, as_point, regularizer_h

BLOCK_PATHS = 2048
_STEP_CHUNK = 128


@dataclass(frozen=True)
class McConfig:
    n_paths: int
    dt: float
    eps: float
    seed: int = 0
    start: tuple = (1.0, 0.0, 0.0)

    def __post_init__(self):
        if int(self.n_paths) < 1:
            raise DomainError("n_paths must be at least 1")
        if not (self.eps > 0 and self.dt > 0):
            raise DomainError("eps and dt must be positive")
        if self.dt > self.eps ** 2 / 10.0 * (1 + 1e-12):
            raise DomainError(f"dt = {self.dt} cannot resolve the ball: need dt <= eps^2/10")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "start", tuple(float(c) for c in np.asarray(self.start, dtype=float)))
        if len(self.start) != 3:
            raise DomainError("start must be a point of R^3")

    def n_steps(self, t):
        n = round(t / self.dt)
        if n < 1 or not math.isclose(n * self.dt, t, rel_tol=1e-9):
            raise DomainError(f"t = {t} is not a multiple of dt = {self.dt}")
        return n


@dataclass(frozen=True)
class McEstimate:
    mean: float
    std_error: float
    n_effective: int
    occupation_fraction: float
    top_decile_weight_share: float
    n_paths: int
    log_weights: np.ndarray = field(default=None, repr=False, compare=False)

    def to_json(self):
        return {
            "estimate": self.mean,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "n_effective": self.n_effective,
            "occupation_fraction": self.occupation_fraction,
            "top_decile_weight_share": self.top_decile_weight_share,
        }


def block_generator(seed, block):
    """Counter-based stream for one block of paths."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(block)])))


def segment_fraction_inside(p0, p1, eps):
    """Fraction of each straight segment ``p0 -> p1`` lying inside ``B_eps(0)``.

    ``p0`` and ``p1`` have shape ``(..., 3)``; exact for the linear path.
    """
    d = p1 - p0
    a = np.einsum("...i,...i->...", d, d)
    b = 2.0 * np.einsum("...i,...i->...", p0, d)
    c = np.einsum("...i,...i->...", p0, p0) - eps * eps
    disc = b * b - 4.0 * a * c
    out = np.zeros(np.shape(a))
    moving = (a > 0) & (disc > 0)
    sq = np.sqrt(np.where(moving, disc, 0.0))
    den = np.where(moving, 2.0 * a, 1.0)
    lo = np.clip((-b - sq) / den, 0.0, 1.0)
    hi = np.clip((-b + sq) / den, 0.0, 1.0)
    out[moving] = (hi - lo)[moving]
    still = a == 0
    out[still] = (c[still] < 0).astype(float)
    return out


def occupation_time(path, dt, eps):
    """Time the piecewise-linear path spends inside ``B_eps(0)``.

    ``path`` has shape ``(n_steps + 1, 3)`` (or a leading batch axis). Each
    step counts ``dt`` times the fraction of its segment inside the ball.
    """
    if not eps > 0:
        raise DomainError("eps must be positive")
    path = np.asarray(path, dtype=float)
    frac = segment_fraction_inside(path[..., :-1, :], path[..., 1:, :], eps)
    return dt * frac.sum(axis=-1)


def _simulate_block(mc: McConfig, n_steps, block, n):
    """End positions and occupation times of ``n`` paths of one block."""
    rng = block_generator(mc.seed, block)
    pos = np.broadcast_to(np.asarray(mc.start), (n, 3)).copy()
    tau = np.zeros(n)
    entered = np.zeros(n, dtype=bool)
    scale = math.sqrt(2.0 * mc.dt)
    done = 0
    while done < n_steps:
        m = min(_STEP_CHUNK, n_steps - done)
        steps = rng.standard_normal((n, m, 3)) * scale
        path = np.concatenate([pos[:, None, :], pos[:, None, :] + np.cumsum(steps, axis=1)], axis=1)
        frac = segment_fraction_inside(path[:, :-1], path[:, 1:], mc.eps)
        tau += mc.dt * frac.sum(axis=1)
        entered |= frac.max(axis=1) > 0
        pos = path[:, -1]
        done += m
    return pos, tau, entered


def simulate_paths(mc: McConfig, t, threads=1):
    """``(W_t, tau_eps, entered)`` for all paths, deterministic in ``mc``."""
    n_steps = mc.n_steps(t)
    sizes = [min(BLOCK_PATHS, mc.n_paths - s) for s in range(0, mc.n_paths, BLOCK_PATHS)]
    jobs = list(enumerate(sizes))

    def run(job):
        return _simulate_block(mc, n_steps, *job)

    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    return tuple(np.concatenate(x) for x in zip(*parts))


def fk_estimate(alpha, t, f: RadialTestFunction, mc: McConfig, bypass_h=False, threads=1,
                keep_weights=False) -> McEstimate:
    """Weighted path average of ``f(|W_t|)``.

    With ``bypass_h`` the potential is switched off and the estimate targets
    the free heat flow.
    """
    if not t > 0:
        raise DomainError("t must be positive")
    end, tau, entered = simulate_paths(mc, t, threads)
    h = 0.0 if bypass_h else regularizer_h(alpha, mc.eps)
    logw = h * mc.eps ** -3 * tau
    bad = int(np.count_nonzero(logw > LOG_DBL_MAX))
    if bad:
        raise MagnitudeOverflowError(
            f"path weight overflows on {bad} of {mc.n_paths} paths", float(np.max(logw)))
    w = np.exp(logw)
    vals = np.asarray(f(np.linalg.norm(end, axis=1)), dtype=float) * w
    n = vals.size
    se = float(np.std(vals, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    ess = int(np.sum(w) ** 2 / np.sum(w * w))
    top = np.sort(w)[::-1][: max(1, n // 10)]
    return McEstimate(
        mean=float(np.mean(vals)),
        std_error=se,
        n_effective=ess,
        occupation_fraction=float(np.mean(entered)),
        top_decile_weight_share=float(np.sum(top) / np.sum(w)),
        n_paths=n,
        log_weights=logw if keep_weights else None,
    )


def weight_histogram(log_weights, bins=50):
    """``(edges, counts)`` of per-path log-weights."""
    counts, edges = np.histogram(np.asarray(log_weights), bins=bins)
    return edges, counts


def increment_variance_check(t=1.0, n_paths=100_000, dt=1e-2, seed=0):
    """Empirical variance of one coordinate of ``W_t`` from the origin and its
    standard error; the generator convention predicts ``2 t``."""
    mc = McConfig(n_paths, dt, math.sqrt(10.0 * dt), seed, (0.0, 0.0, 0.0))
    end, _, _ = simulate_paths(mc, t)
    x = end[:, 0]
    var = float(np.var(x, ddof=1))
    m4 = float(np.mean((x - x.mean()) ** 4))
    return var, math.sqrt(max(m4 - var * var, 0.0) / x.size)


@dataclass(frozen=True)
class SweepPoint:
    eps: float
    estimate: McEstimate


@dataclass(frozen=True)
class EpsilonSweep:
    """Estimates across ``eps`` with the deterministic free and full values.

    The approach to the full value as ``eps`` shrinks is a heuristic, so
    :attr:`monotone_trend` is a diagnostic rather than a guarantee.
    """

    alpha: float
    t: float
    points: tuple
    free_value: float
    flow_value: float

    @property
    def progress(self):
        """Fraction of the gap from the free value to the full value covered at each eps."""
        gap = self.flow_value - self.free_value
        return [(p.estimate.mean - self.free_value) / gap if gap else math.nan for p in self.points]

    @property
    def monotone_trend(self):
        prog = self.progress
        return all(b > a for a, b in zip(prog, prog[1:]))

    def to_json(self):
        return {
            "alpha": self.alpha,
            "t": self.t,
            "heuristic": True,
            "free_value": self.free_value,
            "flow_value": self.flow_value,
            "monotone_trend": self.monotone_trend,
            "points": [{"eps": p.eps, **p.estimate.to_json()} for p in self.points],
        }


def epsilon_sweep(alpha, t, f: RadialTestFunction, start, eps_values=(0.2, 0.1, 0.05),
                  n_paths=100_000, seed=0, threads=1) -> EpsilonSweep:
    """``fk_estimate`` at decreasing ``eps`` (with ``dt = eps^2/10`` snapped to
    divide ``t``) against the flow module's free and full values."""
    eps_values = sorted(eps_values, reverse=True)
    r = math.sqrt(float(as_point(start) @ as_point(start)))
    ref = apply_semigroup_radial(alpha, t, r, f)
    pts = []
    for eps in eps_values:
        n_steps = math.ceil(t / (eps * eps / 10.0))
        mc = McConfig(n_paths, t / n_steps, eps, seed, tuple(start))
        pts.append(SweepPoint(eps, fk_estimate(alpha, t, f, mc, threads=threads)))
    return EpsilonSweep(alpha, t, tuple(pts), ref.free, ref.value)


def _graded_radii(eps, cells_per_eps, h_max, L):
    """Uniform spacing ``eps / cells_per_eps`` on ``(0, 2 eps]``, then
    geometric growth (2% per cell) up to ``h_max`` and uniform to ``L``."""
    h0 = eps / cells_per_eps
    pts = list(h0 * np.arange(1, 2 * cells_per_eps + 1))
    h = h0
    r = pts[-1]
    while r < L:
        h = min(h * 1.02, h_max)
        r += h
        pts.append(r)
    return np.asarray(pts)


def regularized_flow_radial(alpha, eps, t, rx, f: RadialTestFunction, cells_per_eps=200,
                            steps_per_eps2=20, bypass_h=False):
    """Deterministic value of the weighted expectation at ``|start| = rx``.

    Solves ``d/dt w = w'' + h eps^{-3} 1_{r < eps} w`` for ``w = r u`` with
    Crank-Nicolson on a graded radial grid (potential cell-averaged so the
    ball edge does not cost an order of accuracy). At fixed ``eps`` this is
    what :func:`fk_estimate` converges to as ``n_paths`` grows and ``dt``
    shrinks.
    """
    if not (eps > 0 and t > 0 and rx > 0):
        raise DomainError("need eps, t, rx > 0")
    top = f.support if math.isfinite(f.support) else rx + 12.0 * math.sqrt(t)
    L = max(rx, top) + 12.0 * math.sqrt(t)
    h_max = min(0.05 * math.sqrt(t), 0.1 * f.feature_scale)
    r = _graded_radii(eps, cells_per_eps, h_max, L)
    edges = np.concatenate([[0.0], 0.5 * (r[1:] + r[:-1]), [r[-1]]])
    cell = np.diff(edges)
    depth = 0.0 if bypass_h else regularizer_h(alpha, eps) * eps ** -3
    V = depth * np.clip((eps - edges[:-1]) / cell, 0.0, 1.0)
    # three-point second difference on the non-uniform grid, w = 0 at r = 0
    hm = np.diff(np.concatenate([[0.0], r]))
    hp = np.concatenate([hm[1:], [hm[-1]]])
    lo = 2.0 / (hm * (hm + hp))
    up = 2.0 / (hp * (hm + hp))
    n_steps = max(1, int(math.ceil(t * steps_per_eps2 / eps ** 2)))
    dt = t / n_steps
    n = r.size
    ab = np.zeros((3, n))
    ab[0, 1:] = -0.5 * dt * up[:-1]
    ab[1] = 1.0 + 0.5 * dt * (lo + up) - 0.5 * dt * V
    ab[2, :-1] = -0.5 * dt * lo[1:]
    w = r * np.asarray(f(r), dtype=float)
    diag = 1.0 - 0.5 * dt * (lo + up) + 0.5 * dt * V
    for _ in range(n_steps):
        rhs = diag * w
        rhs[1:] += 0.5 * dt * lo[1:] * w[:-1]
        rhs[:-1] += 0.5 * dt * up[:-1] * w[1:]
        w = solve_banded((1, 1), ab, rhs)
    return float(np.interp(rx, r, w) / rx)
