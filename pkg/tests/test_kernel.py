import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sbm_pointsource.errors import DomainError, MagnitudeOverflowError
from sbm_pointsource.kernel import (
    KernelEvalConfig,
    free_kernel,
    free_kernel_radial,
    heat_equation_residual,
    interaction_bracket,
    interaction_kernel,
    interaction_kernel_log,
    laplace_tail_integral,
    laplace_tail_integral_quad,
    log_laplace_tail_integral,
    regularizer_h,
    scattering_length,
    verify_scaling,
)

from conftest import point

PI = math.pi


def mp_tail(alpha, t, s):
    """I(alpha, t, s) in 50-digit arithmetic."""
    with mpmath.workdps(50):
        a = 4 * mpmath.pi * alpha
        norm = (4 * mpmath.pi * t) ** mpmath.mpf(-1.5)
        return mpmath.quad(lambda u: norm * mpmath.exp(-a * u - (u + s) ** 2 / (4 * t)), [0, 1, 10, mpmath.inf])


# strongly negative alpha overflows double range (covered by the log-form tests)
finite_alpha = st.floats(-0.5, 5.0, allow_nan=False)
times = st.floats(0.05, 5.0)
radii = st.floats(0.05, 5.0)
unit_vec = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(
    lambda v: sum(c * c for c in v) > 1e-2)


class TestFreeKernel:
    def test_diagonal_at_unit_time(self):
        assert free_kernel(1.0, [0.3, 1, 2], [0.3, 1, 2]) == pytest.approx((4 * PI) ** -1.5, rel=1e-15)

    def test_direct_substitution(self):
        x, y = np.array([1.0, 0, 0]), np.array([1.0, 1.0, 0])
        expected = (4 * PI * 0.5) ** -1.5 * math.exp(-1.0 / 2.0)
        assert free_kernel(0.5, x, y) == pytest.approx(expected, rel=1e-15)

    def test_radial_values(self):
        assert free_kernel_radial(2.0, 0.0) == pytest.approx((8 * PI) ** -1.5, rel=1e-15)
        assert free_kernel_radial(1.0, 2.0) == pytest.approx((4 * PI) ** -1.5 / math.e, rel=1e-15)

    @given(times, st.floats(0, 10))
    def test_radial_monotone(self, t, r):
        assert free_kernel_radial(t, r) <= free_kernel_radial(t, 0.0)

    @given(times, st.floats(0.01, 100), unit_vec, unit_vec)
    def test_scaling(self, t, k, u, v):
        x, y = np.array(u), np.array(v)
        lhs = free_kernel(t, x, y)
        rhs = k ** 1.5 * free_kernel(k * t, math.sqrt(k) * x, math.sqrt(k) * y)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_domain(self):
        with pytest.raises(DomainError):
            free_kernel(0.0, [1, 0, 0], [1, 0, 0])
        with pytest.raises(DomainError):
            free_kernel_radial(1.0, -0.1)


class TestTailIntegral:
    @pytest.mark.parametrize("alpha,t,s", [(1, 1, 1), (-1, 0.5, 0.2), (0.01, 2, 3), (5, 0.1, 0.01),
                                           (-0.3, 3, 0.5), (50, 1, 0)])
    def test_against_high_precision(self, alpha, t, s):
        assert laplace_tail_integral(alpha, t, s) == pytest.approx(float(mp_tail(alpha, t, s)), rel=1e-12)

    def test_quadrature_oracle_agrees(self):
        cfg = KernelEvalConfig()
        assert laplace_tail_integral_quad(1, 1, 1, cfg) == pytest.approx(laplace_tail_integral(1, 1, 1), rel=1e-10)

    @given(st.floats(0.01, 100), times, st.floats(0, 5))
    def test_upper_bound_positive_alpha(self, alpha, t, s):
        assert laplace_tail_integral(alpha, t, s) <= free_kernel_radial(t, s) / (4 * PI * alpha) * (1 + 1e-12)

    def test_overflow_raises_with_exponent(self):
        with pytest.raises(MagnitudeOverflowError) as info:
            laplace_tail_integral(-10.0, 10.0, 1.0)
        assert info.value.exponent > 709

    def test_log_form_survives_overflow(self):
        lg = log_laplace_tail_integral(-10.0, 10.0, 1.0)
        lq = laplace_tail_integral_quad(-10.0, 10.0, 1.0, log=True)
        assert lg == pytest.approx(lq, rel=1e-12)

    def test_large_alpha_rate(self):
        t, s = 1.0, 0.7
        consts = [a * abs(4 * PI * a * laplace_tail_integral(a, t, s) - free_kernel_radial(t, s))
                  for a in (1e2, 1e3, 1e4)]
        assert max(consts) / min(consts) < 1.05


class TestInteractionKernel:
    def test_alpha_zero_value(self):
        x = point(1.0)
        assert interaction_kernel(0.0, 1.0, x, x) == pytest.approx((4 * PI) ** -1.5 * (1 + 2 / math.e), rel=1e-14)

    @given(finite_alpha, times, radii, radii, unit_vec, unit_vec)
    def test_symmetry(self, a, t, rx, ry, u, v):
        x, y = point(rx, u), point(ry, v)
        assert interaction_kernel(a, t, x, y) == interaction_kernel(a, t, y, x)

    @given(st.floats(-0.5, 0), times, radii, radii, unit_vec, unit_vec)
    def test_dominates_free_for_nonpositive_alpha(self, a, t, rx, ry, u, v):
        x, y = point(rx, u), point(ry, v)
        assert interaction_kernel(a, t, x, y) >= free_kernel(t, x, y)

    @given(finite_alpha, finite_alpha, times, radii, radii, unit_vec, unit_vec)
    @settings(max_examples=200)
    def test_monotone_in_alpha(self, a1, a2, t, rx, ry, u, v):
        lo, hi = sorted((a1, a2))
        x, y = point(rx, u), point(ry, v)
        assert interaction_kernel(lo, t, x, y) >= interaction_kernel(hi, t, x, y) * (1 - 1e-14)

    @given(finite_alpha, times, radii, radii, unit_vec, unit_vec)
    def test_positive_and_decomposes(self, a, t, rx, ry, u, v):
        x, y = point(rx, u), point(ry, v)
        val = interaction_kernel(a, t, x, y)
        assert val > 0
        rest = 2 * t / (rx * ry) * interaction_bracket(a, t, rx + ry)
        assert val == pytest.approx(free_kernel(t, x, y) + rest, rel=1e-14, abs=0)

    def test_free_recovery_as_alpha_grows(self):
        x, y = point(1.0), point(0.5, (0, 1, 0))
        gaps = [interaction_kernel(a, 1.0, x, y) - free_kernel(1.0, x, y) for a in (1e1, 1e2, 1e3, 1e4)]
        assert all(b < a for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 1e-4 * free_kernel(1.0, x, y)

    def test_bracket_against_mpmath(self):
        for a, t, s in [(3.0, 0.4, 1.1), (-0.7, 1.3, 0.4), (1e5, 1.0, 1.0)]:
            with mpmath.workdps(50):
                p = (4 * mpmath.pi * t) ** mpmath.mpf(-1.5) * mpmath.exp(-mpmath.mpf(s) ** 2 / (4 * t))
                ref = p - 4 * mpmath.pi * a * mp_tail(a, t, s)
            assert interaction_bracket(a, t, s) == pytest.approx(float(ref), rel=1e-9)

    def test_origin_rejected(self):
        with pytest.raises(DomainError):
            interaction_kernel(0.0, 1.0, [0, 0, 0], [1, 0, 0])

    def test_log_form(self):
        x, y = point(1.0), point(1.0)
        lg = interaction_kernel_log(-0.2, 1.0, x, y)
        assert lg.value == pytest.approx(interaction_kernel(-0.2, 1.0, x, y), rel=1e-12)
        huge = interaction_kernel_log(-10.0, 10.0, x, y)
        assert huge.sign == 1 and huge.log_abs > 700 and math.isinf(huge.value)


class TestScaling:
    def test_identity_k_one(self):
        assert verify_scaling(0.7, 0.3, 1.0, point(0.5), point(2.0)) == 0.0

    def test_named_case(self):
        x, y = point(0.5), point(2.0, (0, 0, 1))
        ref = interaction_kernel(-2.0, 0.3, x, y)
        assert abs(verify_scaling(-2.0, 0.3, 100.0, x, y)) <= 1e-12 * ref

    @given(st.floats(-1, 1), st.floats(0.1, 2), st.floats(0.1, 100), radii, radii, unit_vec, unit_vec)
    def test_random(self, a, t, k, rx, ry, u, v):
        x, y = point(rx, u), point(ry, v)
        assert abs(verify_scaling(a, t, k, x, y)) <= 1e-12 * interaction_kernel(a, t, x, y)


class TestRegularizer:
    def test_values(self):
        assert regularizer_h(0.0, 0.3) == pytest.approx(PI ** 2 / 4 * 0.3, rel=1e-15)
        assert regularizer_h(1.0, 0.01) == pytest.approx(PI ** 2 / 4 * 0.01 - 8 * PI ** 2 * 1e-4, rel=1e-14)
        assert abs(regularizer_h(2.0, 1 / 64)) < 1e-16

    @given(st.floats(-10, 10), st.floats(1e-3, 1))
    def test_sign_threshold(self, a, eps):
        thr = 1 / (32 * eps)
        if abs(a - thr) > 1e-9 * thr:
            assert (regularizer_h(a, eps) < 0) == (a > thr)

    def test_domain(self):
        with pytest.raises(DomainError):
            regularizer_h(1.0, 0.0)


class TestScatteringLength:
    def test_values(self):
        assert scattering_length(-1 / (4 * PI)) == pytest.approx(1.0)
        assert scattering_length(-10.0) == pytest.approx(1 / (40 * PI))

    def test_decreasing(self):
        sl = [scattering_length(a) for a in (-1, -10, -100)]
        assert sl[0] > sl[1] > sl[2] > 0

    def test_nonnegative_rejected(self):
        with pytest.raises(DomainError, match="point spectrum"):
            scattering_length(0.0)


class TestHeatEquation:
    @pytest.mark.parametrize("alpha", [-0.5, 0.0, 1.0, 10.0])
    def test_second_order(self, alpha):
        res = [heat_equation_residual(alpha, 1.0, 1.0, 0.7, h) for h in (0.02, 0.01, 0.005)]
        assert res[0] / res[1] >= 3.5 and res[1] / res[2] >= 3.5
