"""Free and one-point-interaction heat kernels in three dimensions.

Conventions
-----------
The generator is the plain Laplacian, so the free kernel is
``(4 pi t)^{-3/2} exp(-|x - y|^2 / 4t)``. The interaction kernel adds a part
depending on ``|x|`` and ``|y|`` only::

    p^a_t(x, y) = p_t(x, y) + 2t / (|x| |y|) * B(a, t, |x| + |y|)

with the *bracket*

    B(a, t, s) = p_t(s) - 4 pi a * I(a, t, s),
    I(a, t, s) = int_0^inf exp(-4 pi a u) p_t(u + s) du.

``I`` has the closed form

    I = (4 pi t)^{-3/2} sqrt(pi t) exp(-s^2/4t) erfcx((s + 8 pi a t) / (2 sqrt t))

which is the production path. ``laplace_tail_integral_quad`` integrates the
definition directly and serves as the independent oracle.

For strongly negative ``a`` the kernel grows like ``exp(16 pi^2 a^2 t)`` and
leaves double range quickly; the ``*_log`` functions return the natural log
instead of raising.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import integrate, special

from .errors import DomainError, MagnitudeOverflowError, QuadratureError

FOUR_PI = 4.0 * math.pi
SQRT_PI = math.sqrt(math.pi)
# exp() overflows just above this
LOG_DBL_MAX = 709.78

# large-argument expansion of 1 - sqrt(pi) z erfcx(z) kicks in above this
_ASYMPTOTIC_Z = 8.0
_ASYMPTOTIC_TERMS = 24


@dataclass(frozen=True)
class KernelEvalConfig:
    """Tolerances shared by every quadrature in the package."""

    quadrature_abs_tol: float = 1e-12
    quadrature_rel_tol: float = 1e-10
    max_subdivisions: int = 200
    erfcx_switchover: float = 0.0

    def __post_init__(self):
        if not (self.quadrature_abs_tol > 0 and self.quadrature_rel_tol > 0):
            raise DomainError("quadrature tolerances must be strictly positive")
        if int(self.max_subdivisions) < 1:
            raise DomainError("max_subdivisions must be >= 1")


DEFAULT_CONFIG = KernelEvalConfig()


class SignedLog(NamedTuple):
    """A real number stored as ``sign * exp(log_abs)``."""

    sign: int
    log_abs: float

    @property
    def value(self) -> float:
        if self.sign == 0:
            return 0.0
        if self.log_abs > LOG_DBL_MAX:
            return math.copysign(math.inf, self.sign)
        return self.sign * math.exp(self.log_abs)

    @property
    def log10_abs(self) -> float:
        return self.log_abs / math.log(10.0)


def _check_t(t):
    if not np.all(np.asarray(t) > 0):
        raise DomainError(f"time must be positive, got {t!r}")


def _check_alpha_finite(alpha):
    if not math.isfinite(alpha):
        raise DomainError(f"alpha must be finite here, got {alpha!r}")


def as_point(x) -> np.ndarray:
    """Validate a point of punctured 3-space and return it as an array."""
    p = np.asarray(x, dtype=float)
    if p.shape != (3,):
        raise DomainError(f"expected a 3-vector, got shape {p.shape}")
    if not np.any(p):
        raise DomainError("the origin is excluded from the domain")
    return p


# ---------------------------------------------------------------------------
# free kernel
# ---------------------------------------------------------------------------


def free_kernel_radial(t, r):
    """``p_t(r) = (4 pi t)^{-3/2} exp(-r^2 / 4t)``; vectorised in ``r``."""
    _check_t(t)
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("radius must be non-negative")
    out = (FOUR_PI * t) ** -1.5 * np.exp(-(r * r) / (4.0 * t))
    return float(out) if out.ndim == 0 else out


def log_free_kernel_radial(t, r):
    return -1.5 * np.log(FOUR_PI * t) - np.asarray(r, dtype=float) ** 2 / (4.0 * t)


def free_kernel(t, x, y):
    """Free heat kernel between two points of 3-space."""
    _check_t(t)
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return free_kernel_radial(t, math.sqrt(float(d @ d)))


# ---------------------------------------------------------------------------
# the tail integral I(a, t, s) and the bracket B(a, t, s)
# ---------------------------------------------------------------------------


def _tail_prefactor(t):
    return (FOUR_PI * t) ** -1.5 * np.sqrt(math.pi * t)


def _tail_array(alpha, t, s, switchover):
    # s must be at least 1-d
    a = FOUR_PI * alpha
    sq = np.sqrt(t)
    z = (s + 2.0 * a * t) / (2.0 * sq)
    out = np.empty(s.shape)
    direct = z >= switchover
    sd = s[direct]
    out[direct] = np.exp(-(sd * sd) / (4.0 * t)) * special.erfcx(z[direct])
    refl = ~direct
    if np.any(refl):
        sr = s[refl]
        expo = a * sr + a * a * t
        worst = float(np.max(expo))
        if worst > LOG_DBL_MAX - 1.0:
            raise MagnitudeOverflowError(
                "tail integral overflows in the reflection branch", worst + math.log(2.0)
            )
        out[refl] = 2.0 * np.exp(expo) - np.exp(-(sr * sr) / (4.0 * t)) * special.erfcx(-z[refl])
    return _tail_prefactor(t) * out


def laplace_tail_integral(alpha, t, s, cfg: KernelEvalConfig = DEFAULT_CONFIG):
    """Closed-form ``I(alpha, t, s) = int_0^inf exp(-4 pi alpha u) p_t(u + s) du``.

    Vectorised in ``s``. Raises :class:`MagnitudeOverflowError` instead of
    returning ``inf``; use :func:`log_laplace_tail_integral` past that point.
    """
    _check_t(t)
    _check_alpha_finite(alpha)
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise DomainError("s must be non-negative")
    out = _tail_array(alpha, t, np.atleast_1d(s_arr), cfg.erfcx_switchover)
    return float(out[0]) if s_arr.ndim == 0 else out


def log_laplace_tail_integral(alpha, t, s):
    """Natural log of :func:`laplace_tail_integral`, valid at any magnitude."""
    _check_t(t)
    _check_alpha_finite(alpha)
    a = FOUR_PI * alpha
    s = np.asarray(s, dtype=float)
    z = (s + 2.0 * a * t) / (2.0 * np.sqrt(t))
    base = np.log(_tail_prefactor(t))
    with np.errstate(divide="ignore"):
        pos = base - s * s / (4.0 * t) + np.log(special.erfcx(np.maximum(z, 0.0)))
        neg = base + a * s + a * a * t + np.log(special.erfc(np.minimum(z, 0.0)))
    out = np.where(z >= 0, pos, neg)
    return float(out) if out.ndim == 0 else out


def _one_minus_zerfcx(z):
    """``g(z) = 1 - sqrt(pi) z erfcx(z)`` for ``z >= 0`` without cancellation."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    out = 1.0 - SQRT_PI * z * special.erfcx(z)
    big = z > _ASYMPTOTIC_Z
    if np.any(big):
        w = 1.0 / (2.0 * z[big] ** 2)
        term = np.ones_like(w)
        acc = np.zeros_like(w)
        for n in range(1, _ASYMPTOTIC_TERMS + 1):
            term = term * (-(2 * n - 1)) * w
            acc -= term
        out[big] = acc
    return out


def _bracket_array(alpha, t, s, switchover=0.0):
    """``B(alpha, t, s) = p_t(s) - 4 pi alpha I(alpha, t, s)``, vectorised in ``s``.

    ``alpha = +inf`` gives 0 (free kernel); ``-inf`` is rejected.
    """
    s = np.asarray(s, dtype=float)
    if alpha == math.inf:
        return np.zeros_like(s)
    _check_alpha_finite(alpha)
    p = (FOUR_PI * t) ** -1.5 * np.exp(-(s * s) / (4.0 * t))
    if alpha == 0.0:
        return p
    if alpha < 0.0:
        return p + FOUR_PI * (-alpha) * _tail_array(alpha, t, np.atleast_1d(s), switchover).reshape(s.shape)
    # alpha > 0: the two terms nearly cancel for large alpha, so rewrite
    # B = p_t(s) [g(z) + sqrt(pi) c erfcx(z)] with c = s / 2 sqrt(t).
    sq = np.sqrt(t)
    c = s / (2.0 * sq)
    z = c + FOUR_PI * alpha * sq
    g = _one_minus_zerfcx(z).reshape(np.shape(z))
    return p * (g + SQRT_PI * c * special.erfcx(z))


def interaction_bracket(alpha, t, s, cfg: KernelEvalConfig = DEFAULT_CONFIG):
    """The non-free radial profile ``p_t(s) - 4 pi alpha I(alpha, t, s)``.

    Non-negative for every alpha; tends to 0 like ``1/alpha`` as alpha grows.
    """
    _check_t(t)
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise DomainError("s must be non-negative")
    out = _bracket_array(alpha, t, s_arr, cfg.erfcx_switchover)
    return float(out) if np.ndim(out) == 0 else out


def log_interaction_bracket(alpha, t, s):
    """Natural log of the bracket; finite for alpha of any sign and size."""
    _check_t(t)
    s = np.asarray(s, dtype=float)
    logp = log_free_kernel_radial(t, s)
    if alpha == 0.0:
        return logp
    if alpha > 0.0:
        with np.errstate(divide="ignore"):
            out = np.log(_bracket_array(alpha, t, s))
        return float(out) if out.ndim == 0 else out
    out = np.logaddexp(logp, math.log(FOUR_PI * -alpha) + log_laplace_tail_integral(alpha, t, s))
    return float(out) if np.ndim(out) == 0 else out


def laplace_tail_integral_quad(alpha, t, s, cfg: KernelEvalConfig = DEFAULT_CONFIG, log=False):
    """Quadrature oracle for the tail integral, independent of the closed form.

    The integrand is rescaled by its maximum before integration; with
    ``log=True`` the natural log is returned so the oracle also works where
    the value itself overflows.
    """
    _check_t(t)
    _check_alpha_finite(alpha)
    if s < 0:
        raise DomainError("s must be non-negative")
    a = FOUR_PI * alpha

    def expo(u):
        return -a * u - (u + s) ** 2 / (4.0 * t)

    u_peak = max(0.0, -2.0 * a * t - s)
    m = expo(u_peak)
    width = math.sqrt(2.0 * t)
    if a > 0:
        width = min(width, 1.0 / a)
    cuts = sorted({max(0.0, u_peak + k * width) for k in (-60, -20, -5, -1, 0, 1, 5, 20, 60)})
    if cuts[0] > 0.0:
        cuts.insert(0, 0.0)

    def f(u):
        return math.exp(expo(u) - m)

    total = 0.0
    err = 0.0
    edges = cuts + [math.inf]
    for lo, hi in zip(edges[:-1], edges[1:]):
        val, e = integrate.quad(
            f, lo, hi,
            epsabs=0.0, epsrel=cfg.quadrature_rel_tol,
            limit=cfg.max_subdivisions,
        )
        total += val
        err += e
    if err > max(cfg.quadrature_rel_tol * total, 1e3 * np.finfo(float).eps * total) * 10:
        raise QuadratureError("tail integral oracle did not converge", err * math.exp(m))
    logval = m + math.log(total) - 1.5 * math.log(FOUR_PI * t)
    if log:
        return logval
    if logval > LOG_DBL_MAX:
        raise MagnitudeOverflowError("tail integral oracle overflows", logval)
    return math.exp(logval)


# ---------------------------------------------------------------------------
# interaction kernel
# ---------------------------------------------------------------------------


def interaction_kernel_reduced(alpha, t, rx, ry, dxy, cfg: KernelEvalConfig = DEFAULT_CONFIG):
    """Interaction kernel in reduced coordinates ``(|x|, |y|, |x - y|)``."""
    _check_t(t)
    rx = np.asarray(rx, dtype=float)
    ry = np.asarray(ry, dtype=float)
    if np.any(rx <= 0) or np.any(ry <= 0):
        raise DomainError("kernel is singular at the origin")
    free = (FOUR_PI * t) ** -1.5 * np.exp(-np.asarray(dxy, dtype=float) ** 2 / (4.0 * t))
    out = free + 2.0 * t / (rx * ry) * _bracket_array(alpha, t, rx + ry, cfg.erfcx_switchover)
    return float(out) if np.ndim(out) == 0 else out


def interaction_kernel(alpha, t, x, y, cfg: KernelEvalConfig = DEFAULT_CONFIG) -> float:
    """One-point-interaction heat kernel ``p^alpha_t(x, y)``.

    Symmetric in ``x`` and ``y`` bit for bit.
    """
    _check_alpha_finite(alpha)
    _check_t(t)
    x = as_point(x)
    y = as_point(y)
    d = x - y
    return interaction_kernel_reduced(
        alpha, t, math.sqrt(float(x @ x)), math.sqrt(float(y @ y)), math.sqrt(float(d @ d)), cfg
    )


def interaction_kernel_log(alpha, t, x, y) -> SignedLog:
    """Signed-log form of :func:`interaction_kernel` for explosion studies."""
    _check_alpha_finite(alpha)
    _check_t(t)
    x = as_point(x)
    y = as_point(y)
    rx = math.sqrt(float(x @ x))
    ry = math.sqrt(float(y @ y))
    d = x - y
    log_free = float(log_free_kernel_radial(t, math.sqrt(float(d @ d))))
    log_rest = math.log(2.0 * t / (rx * ry)) + float(log_interaction_bracket(alpha, t, rx + ry))
    return SignedLog(1, float(np.logaddexp(log_free, log_rest)))


def verify_scaling(alpha, t, k, x, y, cfg: KernelEvalConfig = DEFAULT_CONFIG) -> float:
    """Residual of ``p^a_t(x,y) = k^{3/2} p^{a/sqrt k}_{kt}(sqrt k x, sqrt k y)``."""
    if not k > 0:
        raise DomainError("k must be positive")
    lhs = interaction_kernel(alpha, t, x, y, cfg)
    rk = math.sqrt(k)
    rhs = k ** 1.5 * interaction_kernel(
        alpha / rk, k * t, rk * np.asarray(x, dtype=float), rk * np.asarray(y, dtype=float), cfg
    )
    return lhs - rhs


# ---------------------------------------------------------------------------
# regularised point potential
# ---------------------------------------------------------------------------


def regularizer_h(alpha, eps):
    """Coupling ``h(3, alpha, eps) = (pi^2/4) eps - 8 pi^2 alpha eps^2``.

    ``h * eps^{-3}`` is the depth of the ball potential on ``B_eps(0)`` that
    approximates the point interaction as ``eps -> 0``.
    """
    if not eps > 0:
        raise DomainError("eps must be positive")
    return 0.25 * math.pi ** 2 * eps - 8.0 * math.pi ** 2 * alpha * eps * eps


def scattering_length(alpha) -> float:
    """``-1 / (4 pi alpha)`` for negative alpha."""
    if not alpha < 0:
        raise DomainError(
            "scattering length is only defined for alpha < 0; "
            "for alpha >= 0 the point spectrum of the interaction Laplacian is empty"
        )
    return -1.0 / (FOUR_PI * alpha)


# ---------------------------------------------------------------------------
# PDE check
# ---------------------------------------------------------------------------


def nonfree_part(alpha, t, rx, ry):
    """``(2t / (rx ry)) B(alpha, t, rx + ry)``: the part of ``p^alpha`` beyond
    the free kernel, a function of ``|x|`` and ``|y|`` only."""
    return 2.0 * t / (rx * ry) * _bracket_array(alpha, t, rx + ry)


def heat_equation_residual(alpha, t, rx, ry, h):
    """Discrete residual of ``d/dt N = Delta_x N`` for :func:`nonfree_part`.

    Central difference in time (step ``h``) against the radial Laplacian
    ``(1/r) d^2/dr^2 (r N)`` by second differences (step ``h``); relative to
    ``|d/dt N|``. Truncation error is ``O(h^2)``.
    """
    def n(tt, r):
        return float(nonfree_part(alpha, tt, r, ry))

    dt_n = (n(t + h, rx) - n(t - h, rx)) / (2.0 * h)
    lap = ((rx + h) * n(t, rx + h) - 2.0 * rx * n(t, rx) + (rx - h) * n(t, rx - h)) / (h * h * rx)
    return abs(dt_n - lap) / abs(dt_n)
