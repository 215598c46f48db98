"""The mean semigroup ``S^alpha`` acting on radial test functions, and first
moments ``E_mu <X_t, f> = <mu, S_t f>``."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .function_space import (
    AtomicMeasure,
    RadialTestFunction,
    _WINDOW,
    _free_integral,
    _interaction_integral,
    _interaction_upper,
    free_radial_density,
    grid_profile,
)
from .kernel import (
    DEFAULT_CONFIG,
    FOUR_PI,
    KernelEvalConfig,
    _bracket_array,
    as_point,
    free_kernel,
    interaction_kernel,
)
from .quadrature import gauss_panels, quad_segments


@dataclass(frozen=True)
class FlowResult:
    """``S_t^alpha f(x)`` with its split into the three kernel terms."""

    value: float
    abs_error_estimate: float
    free: float
    second: float
    third: float


def apply_semigroup_radial(alpha, t, rx, f: RadialTestFunction,
                           cfg: KernelEvalConfig = DEFAULT_CONFIG) -> FlowResult:
    """Same as :func:`apply_semigroup` with the point given by its norm."""
    if alpha == -math.inf or math.isnan(alpha):
        raise DomainError("alpha = -inf has no finite semigroup")
    free, e_free = _free_integral(t, rx, f, cfg)
    second, e_second = _interaction_integral(t, rx, f, 0.0, cfg)
    if alpha == 0.0:
        rest, e_rest = second, e_second
    else:
        rest, e_rest = _interaction_integral(t, rx, f, alpha, cfg)
    third = rest - second
    return FlowResult(
        value=free + second + third,
        abs_error_estimate=e_free + e_second + e_rest,
        free=free,
        second=second,
        third=third,
    )


def apply_semigroup(alpha, t, x, f: RadialTestFunction,
                    cfg: KernelEvalConfig = DEFAULT_CONFIG) -> FlowResult:
    """``S_t^alpha f(x) = int dy f(|y|) p_t^alpha(x, y)``.

    ``alpha = +inf`` gives the free heat flow. The semigroup is not
    contractive: for negative alpha the value can exceed ``sup f``.
    """
    p = as_point(x)
    return apply_semigroup_radial(alpha, t, math.sqrt(float(p @ p)), f, cfg)


def expected_measure_pairing(mu: AtomicMeasure, alpha, t, f: RadialTestFunction,
                             cfg: KernelEvalConfig = DEFAULT_CONFIG) -> float:
    """First moment ``E_mu <X_t^alpha, f> = sum_i w_i S_t^alpha f(x_i)``."""
    total = 0.0
    for r, w in zip(mu.radii, mu.weights):
        total += w * apply_semigroup_radial(alpha, t, float(r), f, cfg).value
    return total


def _panel_rule(f, t, r_top, order=10):
    width = min(math.sqrt(t) / 3.0, 0.5 * f.feature_scale)
    hi = min(f.support, r_top)
    if hi <= 0:
        return np.zeros(0), np.zeros(0)
    edges = [0.0, *[b for b in f.breakpoints if 0 < b < hi], hi]
    return gauss_panels(edges, width, order=order)


def semigroup_on_grid(alpha, times, radii, f: RadialTestFunction, split=False):
    """``S_t^alpha f(r)`` for every ``t`` in ``times`` and ``r`` in ``radii``.

    Vectorised composite Gauss-Legendre evaluation (panel width at most a
    third of the diffusion length). Used where thousands of values are
    needed; :func:`apply_semigroup_radial` is the adaptive reference.
    With ``split=True`` returns ``(free, interaction)`` arrays separately.
    """
    radii = np.asarray(radii, dtype=float)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times <= 0) or np.any(radii <= 0):
        raise DomainError("need positive times and radii")
    free = np.zeros((times.size, radii.size))
    rest = np.zeros_like(free)
    for i, t in enumerate(times):
        sq = math.sqrt(t)
        top = max(radii[-1] + _WINDOW * sq, _interaction_upper(alpha, t, math.inf))
        nodes, w = _panel_rule(f, t, top)
        if nodes.size == 0:
            continue
        fw = nodes * f(nodes) * w
        keep = fw != 0.0
        nodes, fw = nodes[keep], fw[keep]
        dens = free_radial_density(t, radii[:, None], nodes[None, :])
        free[i] = dens @ fw
        if alpha != math.inf:
            brk = _bracket_array(alpha, t, nodes[None, :] + radii[:, None])
            rest[i] = (2.0 * FOUR_PI * t / radii) * (brk @ fw)
    if split:
        return free, rest
    return free + rest


def materialize(alpha, t, f: RadialTestFunction, radii=None) -> RadialTestFunction:
    """``S_t^alpha f`` sampled on a log grid and wrapped as a test function
    (cubic interpolation, ``c/r`` continuation toward the origin)."""
    if radii is None:
        reach = (f.support if math.isfinite(f.support) else 0.0) + _WINDOW * math.sqrt(t)
        radii = np.geomspace(1e-4 * min(1.0, math.sqrt(t)), reach, 600)
    vals = semigroup_on_grid(alpha, [t], radii, f)[0]
    return grid_profile(radii, vals)


def domination_constant(alpha, t, radii, f: RadialTestFunction) -> float:
    """Smallest ``C`` with ``S_t f <= C / r`` on the given radii."""
    vals = semigroup_on_grid(alpha, [t], radii, f)[0]
    return float(np.max(vals * np.asarray(radii)))


def _interaction_profile(alpha, t, r_other):
    """``r -> (2t / (r r_other)) B(alpha, t, r + r_other)`` as a test function."""
    def g(r):
        r = np.asarray(r, dtype=float)
        return 2.0 * t / (r * r_other) * _bracket_array(alpha, t, r + r_other)

    peak = 2.0 * t / r_other * float(_bracket_array(alpha, t, r_other))
    return RadialTestFunction(g, dominating_constant=max(abs(peak), 1e-300), singularity_exponent=1.0)


def chapman_kolmogorov_residual(alpha, s, t, x, y, cfg: KernelEvalConfig = DEFAULT_CONFIG) -> float:
    """Relative residual of ``int p_s^alpha(x, z) p_t^alpha(z, y) dz = p_{s+t}^alpha(x, y)``.

    The product splits into free x free (exact: the free kernel is a
    semigroup), two cross terms (radial reductions against the free kernel)
    and the product of the two interaction parts (one radial integral).
    """
    px, py = as_point(x), as_point(y)
    rx = math.sqrt(float(px @ px))
    ry = math.sqrt(float(py @ py))
    ff = free_kernel(s + t, px, py)
    cross1, _ = _free_integral(s, rx, _interaction_profile(alpha, t, ry), cfg)
    cross2, _ = _free_integral(t, ry, _interaction_profile(alpha, s, rx), cfg)

    def both(r):
        return float(_bracket_array(alpha, s, rx + r)) * float(_bracket_array(alpha, t, r + ry))

    reach = _interaction_upper(alpha, max(s, t), math.inf)
    inter, _ = quad_segments(both, 0.0, reach, cfg)
    inter *= 4.0 * FOUR_PI * s * t / (rx * ry)
    lhs = ff + cross1 + cross2 + inter
    rhs = interaction_kernel(alpha, s + t, px, py, cfg)
    return abs(lhs - rhs) / abs(rhs)
