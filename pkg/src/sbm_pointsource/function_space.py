"""Radial test functions, atomic measures, and radial-reduction quadrature.

Every integral the package needs is of the form ``int dy f(|y|) K(x, y)``
with ``f`` radial. The free kernel reduces to a 1D integral after doing the
angular integral in closed form; the interaction part already depends on
``|y|`` only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConfigError, DomainError
from .kernel import (
    DEFAULT_CONFIG,
    FOUR_PI,
    KernelEvalConfig,
    _bracket_array,
    as_point,
    log_interaction_bracket,
)
from .quadrature import log_quad, quad_segments

DEFAULT_RHO = 1.5
# Gaussian windows are cut where the exponent drops below -400
_WINDOW = 40.0


def reference_weight(x) -> float:
    """The weight ``1/|x|`` on punctured 3-space."""
    p = as_point(x)
    return 1.0 / math.sqrt(float(p @ p))


def _smoothstep(u):
    u = np.clip(u, 0.0, 1.0)
    return u * u * (3.0 - 2.0 * u)


@dataclass(frozen=True)
class RadialTestFunction:
    """A non-negative radial function dominated by ``C / r``.

    ``func`` must be vectorised and side-effect free. ``breakpoints`` lists
    radii where the profile has kinks, ``support`` bounds the region where it
    is non-zero, and ``feature_scale`` is the narrowest structure quadrature
    panels need to resolve.
    """

    func: Callable[[np.ndarray], np.ndarray]
    dominating_constant: float
    singularity_exponent: float = 0.0
    breakpoints: tuple = ()
    support: float = math.inf
    feature_scale: float = math.inf
    description: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if not self.dominating_constant > 0:
            raise DomainError("dominating constant must be positive")
        if not 0.0 <= self.singularity_exponent <= 1.0:
            raise DomainError("singularity exponent must lie in [0, 1]")

    def __call__(self, r):
        return self.func(np.asarray(r, dtype=float))

    def scaled(self, amplitude=1.0, radius_factor=1.0) -> "RadialTestFunction":
        """The function ``r -> amplitude * f(r / radius_factor)``."""
        inner = self.func
        lam = float(radius_factor)
        amp = float(amplitude)
        desc = dict(self.description)
        if desc:
            desc = {"profile": "scaled", "base": self.description, "amplitude": amp, "radius_factor": lam}
        return RadialTestFunction(
            func=lambda r: amp * inner(np.asarray(r, dtype=float) / lam),
            dominating_constant=amp * self.dominating_constant * lam,
            singularity_exponent=self.singularity_exponent,
            breakpoints=tuple(lam * b for b in self.breakpoints),
            support=lam * self.support,
            feature_scale=lam * self.feature_scale,
            description=desc,
        )

    def check_domination(self, radii=None) -> bool:
        """Probe ``0 <= f(r) <= C / r`` on a log grid."""
        if radii is None:
            top = self.support if math.isfinite(self.support) else 1e6
            radii = np.geomspace(1e-8, max(top, 1e-6), 2001)
        vals = self(radii)
        return bool(np.all(vals >= 0.0) and np.all(vals * radii <= self.dominating_constant * (1 + 1e-12)))


# ---------------------------------------------------------------------------
# profile constructors
# ---------------------------------------------------------------------------


def zero_function() -> RadialTestFunction:
    return RadialTestFunction(
        func=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        dominating_constant=1.0,
        support=0.0,
        description={"profile": "zero"},
    )


def mollified_indicator(inner, outer, width, height=1.0) -> RadialTestFunction:
    """Continuous version of ``height * 1_[inner, outer](r)``.

    Each edge is replaced by a C^1 cubic ramp of the given width centred on
    the edge, so the ramps are symmetric and the plateau is exact.
    ``inner <= 0`` gives a plateau reaching down to the origin.
    """
    if not (width > 0 and outer - max(inner, 0.0) >= width and height >= 0):
        raise DomainError("need width > 0, outer - inner >= width and height >= 0")
    h = float(height)
    lo_a, lo_b = inner - width / 2, inner + width / 2
    hi_a, hi_b = outer - width / 2, outer + width / 2
    has_inner = inner > 0
    if has_inner and lo_a <= 0:
        raise DomainError("inner ramp would cross the origin")

    def f(r):
        r = np.asarray(r, dtype=float)
        v = h * _smoothstep((hi_b - r) / width)
        if has_inner:
            v = v * _smoothstep((r - lo_a) / width)
        return v

    bps = (lo_a, lo_b, hi_a, hi_b) if has_inner else (hi_a, hi_b)
    return RadialTestFunction(
        func=f,
        dominating_constant=h * hi_b if h > 0 else 1.0,
        breakpoints=bps,
        support=hi_b,
        feature_scale=width,
        description={"profile": "mollified_indicator", "inner": inner, "outer": outer,
                     "width": width, "height": height},
    )


def truncated_constant(radius, width, height=1.0) -> RadialTestFunction:
    """``height`` on the ball of the given radius, ramped to 0 at the edge."""
    out = mollified_indicator(0.0, radius, width, height)
    out.description.update({"profile": "truncated_constant", "radius": radius})
    for key in ("inner", "outer"):
        out.description.pop(key, None)
    return out


def gaussian_profile(sigma, amplitude=1.0) -> RadialTestFunction:
    """``amplitude * exp(-r^2 / (2 sigma^2))``."""
    if not sigma > 0:
        raise DomainError("sigma must be positive")
    A = float(amplitude)
    return RadialTestFunction(
        func=lambda r: A * np.exp(-np.asarray(r, dtype=float) ** 2 / (2.0 * sigma * sigma)),
        dominating_constant=A * sigma * math.exp(-0.5),
        support=_WINDOW * sigma,
        feature_scale=sigma,
        description={"profile": "gaussian", "sigma": sigma, "amplitude": amplitude},
    )


def reference_profile(coefficient=1.0) -> RadialTestFunction:
    """``coefficient / r``, the reference weight itself."""
    c = float(coefficient)
    return RadialTestFunction(
        func=lambda r: c / np.asarray(r, dtype=float),
        dominating_constant=c,
        singularity_exponent=1.0,
        description={"profile": "reference_weight", "coefficient": coefficient},
    )


def singular_bump(xi, radius, width, coefficient=1.0) -> RadialTestFunction:
    """``coefficient * r^{-xi}`` on ``(0, radius]``, ramped off at ``radius``."""
    if not 0.0 <= xi < 1.0:
        raise DomainError("xi must lie in [0, 1)")
    base = mollified_indicator(0.0, radius, width)
    c = float(coefficient)
    return RadialTestFunction(
        func=lambda r: c * np.asarray(r, dtype=float) ** -xi * base.func(r),
        dominating_constant=c * (radius + width / 2) ** (1.0 - xi),
        singularity_exponent=xi,
        breakpoints=base.breakpoints,
        support=base.support,
        feature_scale=width,
        description={"profile": "singular_bump", "xi": xi, "radius": radius,
                     "width": width, "coefficient": coefficient},
    )


def grid_profile(radii, values) -> RadialTestFunction:
    """Interpolate a non-negative field known on a log-spaced radial grid.

    ``r * g(r)`` is interpolated with a cubic spline in ``log r``; below the
    first node the field is continued as ``c / r`` and above the last node
    it is taken as 0.
    """
    radii = np.asarray(radii, dtype=float)
    values = np.clip(np.asarray(values, dtype=float), 0.0, None)
    if radii.ndim != 1 or radii.size < 4 or np.any(np.diff(radii) <= 0) or radii[0] <= 0:
        raise DomainError("radii must be an increasing positive grid of >= 4 nodes")
    rg = radii * values
    spline = CubicSpline(np.log(radii), rg)
    r0, r1 = radii[0], radii[-1]
    c0 = rg[0]

    def f(r):
        r = np.asarray(r, dtype=float)
        out = np.zeros_like(r)
        inside = (r >= r0) & (r <= r1)
        with np.errstate(divide="ignore"):
            out = np.where(r < r0, c0 / np.where(r > 0, r, 1.0), out)
            out = np.where(inside, np.clip(spline(np.log(np.where(inside, r, r0))), 0.0, None) / np.where(inside, r, 1.0), out)
        return out

    return RadialTestFunction(
        func=f,
        dominating_constant=float(max(np.max(rg) * 1.05, 1e-300)),
        singularity_exponent=1.0 if c0 > 0 else 0.0,
        breakpoints=(float(r0),),
        support=float(r1),
        feature_scale=float(np.min(np.diff(radii))),
        description={},
    )


_PROFILES = {
    "zero": zero_function,
    "mollified_indicator": mollified_indicator,
    "truncated_constant": truncated_constant,
    "gaussian": gaussian_profile,
    "reference_weight": reference_profile,
    "singular_bump": singular_bump,
}


def function_from_json(desc) -> RadialTestFunction:
    """Build a test function from ``{"profile": name, **params}``."""
    if not isinstance(desc, dict) or "profile" not in desc:
        raise ConfigError("function description needs a 'profile' key")
    params = {k: v for k, v in desc.items() if k != "profile"}
    name = desc["profile"]
    if name == "scaled":
        try:
            return function_from_json(params["base"]).scaled(
                params.get("amplitude", 1.0), params.get("radius_factor", 1.0))
        except KeyError as exc:
            raise ConfigError(f"scaled profile missing {exc}") from None
    if name not in _PROFILES:
        raise ConfigError(f"unknown profile {name!r}; choose from {sorted(_PROFILES)}")
    try:
        return _PROFILES[name](**params)
    except (TypeError, DomainError) as exc:
        raise ConfigError(f"bad parameters for profile {name!r}: {exc}") from None


# ---------------------------------------------------------------------------
# measures
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class AtomicMeasure:
    """Finite sum of weighted point masses away from the origin."""

    locations: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).reshape(-1, 3)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if loc.shape[0] != w.shape[0]:
            raise DomainError("one weight per atom")
        if np.any(w <= 0):
            raise DomainError("atom weights must be positive")
        if np.any(np.linalg.norm(loc, axis=1) == 0):
            raise DomainError("atoms may not sit at the origin")
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "weights", w)

    @classmethod
    def from_atoms(cls, atoms):
        atoms = list(atoms)
        if not atoms:
            return cls(np.zeros((0, 3)), np.zeros(0))
        locs, ws = zip(*atoms)
        return cls(np.asarray(locs, dtype=float), np.asarray(ws, dtype=float))

    @classmethod
    def dirac(cls, x, weight=1.0):
        return cls(np.asarray([as_point(x)]), np.asarray([weight]))

    @classmethod
    def from_json(cls, desc):
        try:
            atoms = [(a["location"], a.get("weight", 1.0)) for a in desc["atoms"]]
            return cls.from_atoms(atoms)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad measure description: {exc}") from None

    def to_json(self):
        return {"atoms": [{"location": loc.tolist(), "weight": float(w)}
                          for loc, w in zip(self.locations, self.weights)]}

    def __add__(self, other):
        return AtomicMeasure(np.vstack([self.locations, other.locations]),
                             np.concatenate([self.weights, other.weights]))

    def __len__(self):
        return self.weights.size

    @property
    def radii(self):
        return np.linalg.norm(self.locations, axis=1)

    def reference_pairing(self) -> float:
        """``<mu, 1/|x|>``, finite by construction."""
        return float(np.sum(self.weights / self.radii))


def pair(mu: AtomicMeasure, f) -> float:
    """``<mu, f> = sum_i w_i f(|x_i|)``."""
    if len(mu) == 0:
        return 0.0
    return float(np.sum(mu.weights * np.asarray(f(mu.radii), dtype=float)))


# ---------------------------------------------------------------------------
# weighted norm
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhiNorm:
    rho: float
    value: float

    def __post_init__(self):
        if not 1.0 < self.rho < 2.0:
            raise DomainError("rho must lie strictly between 1 and 2")

    @property
    def finite(self) -> bool:
        """False is the marker for functions outside the weighted L^rho space."""
        return math.isfinite(self.value)


def phi_norm(f: RadialTestFunction, rho=DEFAULT_RHO, cfg: KernelEvalConfig = DEFAULT_CONFIG) -> PhiNorm:
    """``(int dx |x|^{-1} |f(|x|)|^rho)^{1/rho} = (4 pi int_0^inf r f(r)^rho dr)^{1/rho}``.

    For unbounded support, divergence at infinity is certified by the
    log-log slope of ``r f(r)^rho`` far out: a slope of -1 or flatter means
    the tail integral diverges and ``value`` is ``inf``.
    """
    if not 1.0 < rho < 2.0:
        raise DomainError("rho must lie strictly between 1 and 2")

    def integrand(r):
        return r * abs(float(f(r))) ** rho

    top = f.support
    if not math.isfinite(top):
        r1, r2 = 1e8, 1e10
        g1, g2 = integrand(r1), integrand(r2)
        if g2 > 0 and g1 > 0 and math.log(g2 / g1) / math.log(r2 / r1) >= -1.0 - 1e-9:
            return PhiNorm(rho, math.inf)
    val, _ = quad_segments(integrand, 0.0, top, cfg, points=f.breakpoints)
    return PhiNorm(rho, (FOUR_PI * val) ** (1.0 / rho))


# ---------------------------------------------------------------------------
# radial reductions
# ---------------------------------------------------------------------------


def free_radial_density(t, rx, r):
    """Density in ``r = |y|`` of ``p_t(x, .)`` averaged over the sphere ``|y| = r``,
    divided by ``r f(r)``: the 1D kernel of the free flow acting on radial
    functions is ``r * free_radial_density``."""
    rx = np.asarray(rx, dtype=float)
    r = np.asarray(r, dtype=float)
    return (np.exp(-(rx - r) ** 2 / (4.0 * t)) * -np.expm1(-rx * r / t)
            / (rx * math.sqrt(FOUR_PI * t)))


def _free_integral(t, rx, f, cfg):
    if t <= 0 or rx <= 0:
        raise DomainError("need t > 0 and rx > 0")
    half = _WINDOW * math.sqrt(t)
    lo = max(0.0, rx - half)
    hi = min(f.support, rx + half)

    def integrand(r):
        return r * float(f(r)) * float(free_radial_density(t, rx, r))

    return quad_segments(integrand, lo, hi, cfg, points=(*f.breakpoints, rx))


def radial_integral_against_free_kernel(t, rx, f: RadialTestFunction,
                                        cfg: KernelEvalConfig = DEFAULT_CONFIG) -> float:
    """``int dy f(|y|) p_t(x, y)`` for ``|x| = rx`` via the angular reduction

    ``(rx sqrt(4 pi t))^{-1} int_0^inf r f(r) [e^{-(rx-r)^2/4t} - e^{-(rx+r)^2/4t}] dr``.
    """
    return _free_integral(t, rx, f, cfg)[0]


def _interaction_upper(alpha, t, support):
    grow = 2.0 * FOUR_PI * max(0.0, -alpha) * t if math.isfinite(alpha) else 0.0
    return min(support, grow + _WINDOW * math.sqrt(t))


def _interaction_integral(t, rx, f, alpha, cfg, bracket=None):
    if t <= 0 or rx <= 0:
        raise DomainError("need t > 0 and rx > 0")
    if alpha == math.inf:
        return 0.0, 0.0
    if bracket is None:
        def bracket(s):
            return float(_bracket_array(alpha, t, s, cfg.erfcx_switchover))
    hi = _interaction_upper(alpha, t, f.support)
    pts = list(f.breakpoints)
    if math.isfinite(alpha) and alpha != 0.0:
        pts.append(1.0 / (FOUR_PI * abs(alpha)))

    def integrand(r):
        return r * float(f(r)) * bracket(r + rx)

    val, err = quad_segments(integrand, 0.0, hi, cfg, points=pts)
    pref = 2.0 * FOUR_PI * t / rx
    return pref * val, pref * err


def radial_integral_against_interaction_terms(t, rx, f: RadialTestFunction, alpha,
                                              cfg: KernelEvalConfig = DEFAULT_CONFIG) -> float:
    """Second plus third kernel terms integrated against radial ``f``:

    ``(8 pi t / rx) int_0^inf r f(r) [p_t(r + rx) - 4 pi alpha I(alpha, t, r + rx)] dr``.
    """
    return _interaction_integral(t, rx, f, alpha, cfg)[0]


def log_radial_integral_against_interaction_terms(t, rx, f: RadialTestFunction, alpha,
                                                  cfg: KernelEvalConfig = DEFAULT_CONFIG) -> float:
    """Natural log of :func:`radial_integral_against_interaction_terms`.

    Stays finite when the value itself overflows (strongly negative alpha).
    """
    if t <= 0 or rx <= 0:
        raise DomainError("need t > 0 and rx > 0")
    hi = _interaction_upper(alpha, t, f.support)

    def log_integrand(r):
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            return np.log(r) + np.log(f(r)) + log_interaction_bracket(alpha, t, r + rx)

    pts = list(f.breakpoints)
    if alpha != 0.0:
        pts.append(1.0 / (FOUR_PI * abs(alpha)))
    return math.log(2.0 * FOUR_PI * t / rx) + log_quad(log_integrand, 0.0, hi, cfg, points=pts)
