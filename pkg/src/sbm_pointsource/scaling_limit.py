"""Large-scale behaviour of the expected measure.

For a schedule ``lambda_k`` with ``alpha* = lim sqrt(k) lambda_k alpha``,

    k^{-1/2} E_mu <X_{kt}^{lambda_k alpha}, f(k^{-1/2} .)>
        -> <mu, 1/|x|> 8 pi t int_0^inf r B(alpha*, t, r) f(r) dr,

where ``B`` is the interaction bracket of :mod:`.kernel`. ``alpha* = +inf``
gives 0 and ``alpha* = -inf`` gives ``+inf``.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from .errors import ConfigError, ConsistencyError, DomainError, MagnitudeOverflowError
from .flow import apply_semigroup_radial
from .function_space import (
    AtomicMeasure,
    RadialTestFunction,
    _free_integral,
    _interaction_integral,
    _interaction_upper,
    log_radial_integral_against_interaction_terms,
    truncated_constant,
)
from .kernel import (
    DEFAULT_CONFIG,
    FOUR_PI,
    LOG_DBL_MAX,
    KernelEvalConfig,
    _bracket_array,
    as_point,
    free_kernel_radial,
)
from .quadrature import quad_segments

DEFAULT_KS = (1e1, 1e2, 1e3, 1e4, 1e5, 1e6)
# growth over two decades of k that counts as divergence
BLOWUP_FACTOR = 1e3
# smallest power of k read as divergence or decay of a tabulated schedule
TREND_POWER = 0.25


@dataclass(frozen=True)
class LimitRegime:
    """A schedule ``k -> lambda_k``.

    ``kind`` is ``"constant"`` (``lambda_k = scale``), ``"inv_sqrt"``
    (``lambda_k = scale / sqrt(k)``) or ``"table"`` (piecewise log-linear
    interpolation of ``table = ((k, lambda), ...)``).
    """

    kind: str = "constant"
    scale: float = 1.0
    table: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "inv_sqrt", "table"):
            raise DomainError(f"unknown schedule {self.kind!r}")
        if self.kind == "table" and len(self.table) < 2:
            raise DomainError("a table schedule needs at least two entries")

    @classmethod
    def from_json(cls, desc):
        try:
            return cls(desc.get("kind", "constant"), float(desc.get("scale", 1.0)),
                       tuple(tuple(map(float, row)) for row in desc.get("table", ())))
        except (AttributeError, TypeError, ValueError, DomainError) as exc:
            raise ConfigError(f"bad schedule: {exc}") from None

    def lam(self, k):
        if self.kind == "constant":
            return self.scale
        if self.kind == "inv_sqrt":
            return self.scale / math.sqrt(k)
        ks, ls = zip(*self.table)
        return float(np.interp(math.log(k), np.log(ks), ls))

    def effective_alpha(self, alpha, k):
        """``sqrt(k) lambda_k alpha``: the interaction parameter after rescaling."""
        return math.sqrt(k) * self.lam(k) * alpha

    def alpha_star(self, alpha, ks=DEFAULT_KS):
        """``lim sqrt(k) lambda_k alpha`` in ``[-inf, +inf]``.

        Named schedules are resolved exactly; tables are checked over ``ks``
        and a schedule that neither settles nor diverges raises
        :class:`DomainError`.
        """
        if alpha == 0.0 or (self.kind != "table" and self.scale == 0.0):
            return 0.0
        if self.kind == "constant":
            return math.copysign(math.inf, alpha * self.scale)
        if self.kind == "inv_sqrt":
            return alpha * self.scale
        ks = np.asarray(sorted(ks), dtype=float)
        vals = np.array([self.effective_alpha(alpha, k) for k in ks])
        tail = np.abs(vals[-3:])
        if np.all(tail > 0):
            # local power of k along the tail; at least k^{1/4} counts as a trend
            slopes = np.diff(np.log(tail)) / np.diff(np.log(ks[-3:]))
            if np.all(slopes >= TREND_POWER) and np.all(np.sign(vals[-3:]) == np.sign(vals[-1])):
                return math.copysign(math.inf, vals[-1])
            if np.all(slopes <= -TREND_POWER):
                return 0.0
        if abs(vals[-1] - vals[-2]) <= 1e-6 * max(abs(vals[-1]), 1e-300):
            return float(vals[-1])
        raise DomainError("sqrt(k) lambda_k alpha does not settle over the k range")


# ---------------------------------------------------------------------------
# limit kernel and limit pairing
# ---------------------------------------------------------------------------


def limit_kernel(alpha_star, t, x, y, cfg: KernelEvalConfig = DEFAULT_CONFIG) -> float:
    """Density of the limiting expected measure:

    ``(2t / (|x||y|)) [p_t(|y|) - 4 pi alpha* I(alpha*, t, |y|)]``,
    0 at ``alpha* = +inf`` and ``+inf`` at ``alpha* = -inf``.
    """
    if not t > 0:
        raise DomainError("time must be positive")
    px, py = as_point(x), as_point(y)
    if alpha_star == math.inf:
        return 0.0
    if alpha_star == -math.inf:
        return math.inf
    rx = math.sqrt(float(px @ px))
    ry = math.sqrt(float(py @ py))
    return float(2.0 * t / (rx * ry) * _bracket_array(alpha_star, t, ry, cfg.erfcx_switchover))


def _limit_radial_integral(alpha_star, t, f, cfg):
    """``8 pi t int_0^inf r B(alpha*, t, r) f(r) dr`` (finite alpha*)."""
    hi = _interaction_upper(alpha_star, t, f.support)

    def integrand(r):
        return r * float(f(r)) * float(_bracket_array(alpha_star, t, r, cfg.erfcx_switchover))

    pts = list(f.breakpoints)
    if alpha_star != 0.0:
        pts.append(1.0 / (FOUR_PI * abs(alpha_star)))
    val, _ = quad_segments(integrand, 0.0, hi, cfg, points=pts)
    return 2.0 * FOUR_PI * t * val


def limit_pairing(alpha_star, t, mu: AtomicMeasure, f: RadialTestFunction,
                  cfg: KernelEvalConfig = DEFAULT_CONFIG) -> float:
    """``<mu, int dy limit_kernel(alpha*, t, ., y) f(|y|)>``."""
    if not t > 0:
        raise DomainError("time must be positive")
    mass = mu.reference_pairing()
    if mass == 0.0 or alpha_star == math.inf:
        return 0.0
    if not f.support > 0:
        return 0.0
    if alpha_star == -math.inf:
        probe = np.geomspace(1e-6, f.support if math.isfinite(f.support) else 1e6, 2001)
        return math.inf if np.any(f(probe) > 0) else 0.0
    return mass * _limit_radial_integral(alpha_star, t, f, cfg)


def total_mass_limit_alpha_zero(t, mu: AtomicMeasure) -> float:
    """``2 sqrt(t / pi) <mu, 1/|x|>``: the finite large-scale total mass at alpha = 0."""
    return 2.0 * math.sqrt(t / math.pi) * mu.reference_pairing()


def inverse_radius_heat_integral(t, cfg: KernelEvalConfig = DEFAULT_CONFIG) -> float:
    """``int_{R^3} dy |y|^{-1} p_t(y)`` by 1D quadrature (equals ``(pi t)^{-1/2}``)."""
    val, _ = quad_segments(lambda r: FOUR_PI * r * free_kernel_radial(t, r),
                           0.0, 40.0 * math.sqrt(t), cfg, points=(2.0 * math.sqrt(t),))
    return val


# ---------------------------------------------------------------------------
# scaled mean
# ---------------------------------------------------------------------------


def _proof_form_terms(k, alpha_eff, t, mu, f, cfg):
    """Free, second and third terms of the rescaled first moment, plus
    summed quadrature error estimates."""
    rk = math.sqrt(k)
    free = second = nonfree = err = 0.0
    for r, w in zip(mu.radii, mu.weights):
        rs = float(r) / rk
        fr, e1 = _free_integral(t, rs, f, cfg)
        se, e2 = _interaction_integral(t, rs, f, 0.0, cfg)
        if alpha_eff == 0.0:
            nf, e3 = se, e2
        else:
            nf, e3 = _interaction_integral(t, rs, f, alpha_eff, cfg)
        # k^{-1/2} (8 pi t / (|x| / sqrt k)) = 8 pi t / |x|: no k left on these
        free += w * fr / rk
        second += w * se / rk
        nonfree += w * nf / rk
        err += w * (e1 + e2 + e3) / rk
    return free, second, nonfree - second, err


def scaled_mean(k, regime: LimitRegime, alpha, t, mu: AtomicMeasure, f: RadialTestFunction,
                cfg: KernelEvalConfig = DEFAULT_CONFIG) -> float:
    """``k^{-1/2} E_mu <X_{kt}^{lambda_k alpha}, f(k^{-1/2} .)>``.

    Computed twice: directly with the flow at time ``k t`` on the original
    scale, and in rescaled form with kernel parameter ``sqrt(k) lambda_k alpha``
    at time ``t`` from the shrunken atoms ``x / sqrt(k)``. The two must agree
    to quadrature accuracy; the direct value is returned.
    """
    if not k > 0:
        raise DomainError("k must be positive")
    a_orig = regime.lam(k) * alpha
    a_eff = regime.effective_alpha(alpha, k)
    rk = math.sqrt(k)
    fk = f.scaled(1.0, rk)
    direct = 0.0
    err_a = 0.0
    for r, w in zip(mu.radii, mu.weights):
        res = apply_semigroup_radial(a_orig, k * t, float(r), fk, cfg)
        direct += w * res.value / rk
        err_a += w * res.abs_error_estimate / rk
    free, second, third, err_b = _proof_form_terms(k, a_eff, t, mu, f, cfg)
    proof = free + second + third
    allowed = 10.0 * max(err_a + err_b, cfg.quadrature_rel_tol * abs(direct), cfg.quadrature_abs_tol)
    if abs(direct - proof) > allowed:
        raise ConsistencyError(
            f"scaled mean routes disagree at k={k:g}: direct {direct!r} vs rescaled {proof!r}"
        )
    return direct


@dataclass(frozen=True)
class ProofDecomposition:
    k: float
    alpha_effective: float
    free_term: float
    second_term: float
    third_term: float
    third_term_substituted: float = math.nan

    @property
    def total(self):
        return self.free_term + self.second_term + self.third_term

    @property
    def cancellation_ratio(self):
        """``|second + third| / second``; tends to 0 when ``alpha* = +inf``."""
        return abs(self.second_term + self.third_term) / self.second_term if self.second_term else 0.0


def proof_regime_decomposition(k, regime: LimitRegime, alpha, t, mu: AtomicMeasure,
                               f: RadialTestFunction, cfg: KernelEvalConfig = DEFAULT_CONFIG,
                               substituted=False):
    """Split the rescaled first moment into its three kernel terms.

    The free term vanishes as ``k`` grows, the second increases to the
    ``alpha* = 0`` limit, and the third carries the alpha dependence (it
    cancels the second when ``alpha* = +inf``). With ``substituted=True`` the
    third term is also evaluated from :func:`substituted_tail` by nested
    quadrature.
    """
    a_eff = regime.effective_alpha(alpha, k)
    free, second, third, _ = _proof_form_terms(k, a_eff, t, mu, f, cfg)
    if regime.alpha_star(alpha) == math.inf and not (-second * (1 + 1e-9) <= third <= 1e-300):
        raise ConsistencyError("third term must lie in [-second, 0] when alpha* = +inf")
    sub = math.nan
    if substituted:
        sub = _third_term_substituted(k, a_eff, t, mu, f, cfg)
    return ProofDecomposition(k, a_eff, free, second, third, sub)


def _third_term_substituted(k, a_eff, t, mu, f, cfg):
    if a_eff == 0.0:
        return 0.0
    inner = KernelEvalConfig(quadrature_abs_tol=1e-14, quadrature_rel_tol=1e-9,
                             max_subdivisions=cfg.max_subdivisions)
    rk = math.sqrt(k)
    hi = _interaction_upper(a_eff, t, f.support)
    total = 0.0
    for r0, w in zip(mu.radii, mu.weights):
        rs = float(r0) / rk
        val, _ = quad_segments(lambda r: -r * float(f(r)) * substituted_tail(a_eff, t, r + rs, inner),
                               0.0, hi, inner, points=f.breakpoints)
        total += w * 2.0 * FOUR_PI * t / float(r0) * val
    return total


def substituted_tail(alpha_eff, t, s, cfg: KernelEvalConfig = DEFAULT_CONFIG) -> float:
    """``4 pi alpha I(alpha, t, s)`` after the substitution ``u -> 4 pi |alpha| u``:

    ``sign(alpha) int_0^inf exp(-sign(alpha) u) p_t(u / (4 pi |alpha|) + s) du``.
    Evaluated by quadrature as a cross-check on the closed form.
    """
    if alpha_eff == 0.0:
        return 0.0
    sgn = 1.0 if alpha_eff > 0 else -1.0
    c = 1.0 / (FOUR_PI * abs(alpha_eff))

    norm = (FOUR_PI * t) ** -1.5

    def g(u):
        return norm * math.exp(-sgn * u - (u * c + s) ** 2 / (4.0 * t))

    if sgn > 0:
        val, _ = integrate.quad(g, 0.0, math.inf, epsabs=0.0, epsrel=cfg.quadrature_rel_tol,
                                limit=cfg.max_subdivisions)
    else:
        # exp(u) against a Gaussian in u*c: integrand peaks near u* = (2t/c - s)/c
        peak = max(0.0, (2.0 * t / c - s) / c)
        top = math.log(norm) + peak - (peak * c + s) ** 2 / (4.0 * t)
        if top > LOG_DBL_MAX:
            raise MagnitudeOverflowError("substituted tail overflows double range", top)
        width = math.sqrt(2.0 * t) / c
        edges = sorted({0.0, *(max(0.0, peak + m * width) for m in (-40, -5, 0, 5, 40))})
        val = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            val += integrate.quad(g, lo, hi, epsabs=0.0, epsrel=cfg.quadrature_rel_tol,
                                  limit=cfg.max_subdivisions)[0]
        val += integrate.quad(g, edges[-1], math.inf, epsabs=0.0, epsrel=cfg.quadrature_rel_tol,
                              limit=cfg.max_subdivisions)[0]
    return sgn * val


# ---------------------------------------------------------------------------
# convergence tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConvergenceRow:
    k: float
    scaled_mean: float
    limit: float
    abs_err: float
    rel_err: float


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)

    def __post_init__(self):
        ks = [r.k for r in self.rows]
        if any(b <= a for a, b in zip(ks, ks[1:])):
            raise DomainError("k must be strictly increasing across rows")

    @property
    def ks(self):
        return np.array([r.k for r in self.rows])

    @property
    def values(self):
        return np.array([r.scaled_mean for r in self.rows])

    @property
    def rel_errors(self):
        return np.array([r.rel_err for r in self.rows])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "scaled_mean", "limit", "abs_err", "rel_err"])
            for r in self.rows:
                w.writerow([repr(float(v)) for v in (r.k, r.scaled_mean, r.limit, r.abs_err, r.rel_err)])


def _row(k, value, limit):
    if math.isfinite(limit) and math.isfinite(value):
        abs_err = abs(value - limit)
        rel_err = abs_err / abs(limit) if limit != 0 else math.nan
    else:
        abs_err = rel_err = math.nan
    return ConvergenceRow(float(k), float(value), float(limit), abs_err, rel_err)


def _map(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


def convergence_study(regime: LimitRegime, alpha, t, mu: AtomicMeasure, f: RadialTestFunction,
                      ks=DEFAULT_KS, cfg: KernelEvalConfig = DEFAULT_CONFIG, workers=1):
    """Scaled means over ``ks`` against :func:`limit_pairing`.

    Returns ``(table, alpha_star, limit)``.
    """
    ks = sorted(float(k) for k in ks)
    a_star = regime.alpha_star(alpha, ks)
    limit = limit_pairing(a_star, t, mu, f, cfg)
    vals = _map(lambda k: scaled_mean(k, regime, alpha, t, mu, f, cfg), ks, workers)
    return ConvergenceTable([_row(k, v, limit) for k, v in zip(ks, vals)]), a_star, limit


# ---------------------------------------------------------------------------
# large-scale total mass
# ---------------------------------------------------------------------------


def _log_total_mass_truncated(k, alpha, t, mu, R, cfg):
    """log of ``k^{-1/2} E_mu <X_{kt}^alpha, f_R(k^{-1/2} .)>`` with ``lambda_k = 1``.

    Evaluated in rescaled form, in log space so the ``alpha < 0`` explosion
    stays representable.
    """
    rk = math.sqrt(k)
    a_eff = rk * alpha
    fR = truncated_constant(R, min(1.0, 0.05 * R))
    logs = []
    for r, w in zip(mu.radii, mu.weights):
        rs = float(r) / rk
        free, _ = _free_integral(t, rs, fR, cfg)
        lf = math.log(w * free / rk) if free > 0 else -math.inf
        ln = math.log(w / rk) + log_radial_integral_against_interaction_terms(t, rs, fR, a_eff, cfg)
        logs.append(np.logaddexp(lf, ln))
    return float(np.logaddexp.reduce(logs)) if logs else -math.inf


def log_scaled_total_mass(k, alpha, t, mu: AtomicMeasure, cfg: KernelEvalConfig = DEFAULT_CONFIG):
    """log of ``k^{-1/2} E_mu <X_{kt}^alpha, 1>`` via truncations ``f_R -> 1``.

    ``R`` starts past the reach of both kernel parts and is doubled twice;
    an Aitken step extrapolates in ``R`` when the three values have not
    already settled.
    """
    rk = math.sqrt(k)
    R0 = float(np.max(mu.radii)) / rk + 40.0 * math.sqrt(t) + 2.0
    logs = [_log_total_mass_truncated(k, alpha, t, mu, R0 * 2 ** j, cfg) for j in range(3)]
    d1, d2 = logs[1] - logs[0], logs[2] - logs[1]
    if abs(d2) <= 1e-12 * max(1.0, abs(logs[2])) or d1 == d2:
        return logs[2]
    return logs[2] - d2 * d2 / (d2 - d1)


@dataclass
class TotalMassResult:
    alpha: float
    t: float
    table: ConvergenceTable
    log10_scaled_means: list
    classification: str
    extrapolated_limit: float
    predicted_limit: float

    def to_json(self):
        return {
            "alpha": self.alpha,
            "t": self.t,
            "classification": self.classification,
            "extrapolated_limit": self.extrapolated_limit,
            "predicted_limit": self.predicted_limit,
            "k": [r.k for r in self.table.rows],
            "log10_scaled_mean": list(self.log10_scaled_means),
        }


def classify_total_mass(ks, log_vals):
    """DECAY, FINITE, BLOWUP or UNRESOLVED from a table of log scaled masses.

    Returns ``(label, extrapolated_limit)``. The limit is Richardson
    extrapolated in ``k^{-1/2}`` for FINITE, 0 for DECAY, inf for BLOWUP and
    nan otherwise.
    """
    ks = np.asarray(ks, dtype=float)
    lv = np.asarray(log_vals, dtype=float)
    if ks.size < 3:
        return "UNRESOLVED", math.nan
    dlog = np.diff(lv)
    # growth over any window of at least two decades
    for i in range(ks.size):
        for j in range(i + 1, ks.size):
            if ks[j] >= 100.0 * ks[i] * (1 - 1e-12) and lv[j] - lv[i] >= math.log(BLOWUP_FACTOR):
                if np.all(dlog[j - 1:] > 0) and np.all(dlog[i:j] > 0):
                    return "BLOWUP", math.inf
    rel = np.abs(np.expm1(dlog))
    if rel[-1] < 1e-2 and np.all(np.diff(rel[-3:]) < 0):
        k1, k2 = ks[-2], ks[-1]
        m1, m2 = math.exp(lv[-2]), math.exp(lv[-1])
        s1, s2 = math.sqrt(k1), math.sqrt(k2)
        return "FINITE", (s2 * m2 - s1 * m1) / (s2 - s1)
    if np.all(dlog[-3:] < 0) and lv[-1] - lv[0] <= math.log(0.1):
        return "DECAY", 0.0
    return "UNRESOLVED", math.nan


def total_mass_regimes(alpha, t, mu: AtomicMeasure, ks=DEFAULT_KS,
                       cfg: KernelEvalConfig = DEFAULT_CONFIG, workers=1) -> TotalMassResult:
    """Scaled total mass ``k^{-1/2} E_mu <X_{kt}^alpha, 1>`` over ``ks`` with
    ``lambda_k = 1`` and its classification."""
    if not math.isfinite(alpha):
        raise DomainError("alpha must be finite")
    ks = sorted(float(k) for k in ks)
    logs = _map(lambda k: log_scaled_total_mass(k, alpha, t, mu, cfg), ks, workers)
    label, extrap = classify_total_mass(ks, logs)
    if alpha > 0:
        predicted = 0.0
    elif alpha == 0:
        predicted = total_mass_limit_alpha_zero(t, mu)
    else:
        predicted = math.inf
    rows = []
    for k, lg in zip(ks, logs):
        val = math.exp(lg) if lg < 709.0 else math.inf
        rows.append(_row(k, val, predicted))
    return TotalMassResult(
        alpha, t, ConvergenceTable(rows), [lg / math.log(10.0) for lg in logs], label, extrap, predicted
    )
