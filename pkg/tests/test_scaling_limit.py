import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from sbm_pointsource.errors import ConfigError, ConsistencyError, DomainError
from sbm_pointsource.flow import expected_measure_pairing
from sbm_pointsource.function_space import AtomicMeasure, mollified_indicator, zero_function
from sbm_pointsource.kernel import free_kernel_radial, laplace_tail_integral
from sbm_pointsource.scaling_limit import (
    ConvergenceRow,
    ConvergenceTable,
    LimitRegime,
    classify_total_mass,
    convergence_study,
    inverse_radius_heat_integral,
    limit_kernel,
    limit_pairing,
    log_scaled_total_mass,
    proof_regime_decomposition,
    scaled_mean,
    substituted_tail,
    total_mass_limit_alpha_zero,
    total_mass_regimes,
)

from conftest import point

PI = math.pi
INV_SQRT = LimitRegime("inv_sqrt")
CONST = LimitRegime("constant")


class TestRegime:
    def test_named(self):
        assert INV_SQRT.alpha_star(1.5) == 1.5
        assert CONST.alpha_star(2.0) == math.inf and CONST.alpha_star(-2.0) == -math.inf
        assert CONST.alpha_star(0.0) == 0.0
        assert LimitRegime("constant", 0.0).alpha_star(3.0) == 0.0

    def test_tables(self):
        ks = (1e1, 1e2, 1e3, 1e4, 1e5, 1e6)
        settle = LimitRegime("table", table=tuple((k, 2.0 / math.sqrt(k)) for k in ks))
        assert settle.alpha_star(1.0, ks) == pytest.approx(2.0)
        grow = LimitRegime("table", table=tuple((k, 1.0) for k in ks))
        assert grow.alpha_star(-1.0, ks) == -math.inf
        vanish = LimitRegime("table", table=tuple((k, 1.0 / k) for k in ks))
        assert vanish.alpha_star(1.0, ks) == 0.0
        wobble = LimitRegime("table", table=tuple((k, (1 + 0.5 * (i % 2)) / math.sqrt(k)) for i, k in enumerate(ks)))
        with pytest.raises(DomainError):
            wobble.alpha_star(1.0, ks)

    def test_json(self):
        assert LimitRegime.from_json({"kind": "inv_sqrt", "scale": 2}).lam(4.0) == 1.0
        with pytest.raises(ConfigError):
            LimitRegime.from_json({"kind": "weird"})


class TestLimitKernel:
    def test_alpha_zero(self):
        x, y = point(0.5), point(2.0, (0, 1, 0))
        assert limit_kernel(0.0, 1.0, x, y) == pytest.approx(2 / (0.5 * 2.0) * free_kernel_radial(1.0, 2.0),
                                                             rel=1e-15)

    def test_extensions(self):
        assert limit_kernel(math.inf, 1.0, point(1.0), point(1.0)) == 0.0
        assert limit_kernel(-math.inf, 1.0, point(1.0), point(1.0)) == math.inf

    @given(st.floats(0, 50), st.floats(0.05, 5), st.floats(0.05, 5))
    def test_nonnegative(self, a, t, ry):
        assert limit_kernel(a, t, point(1.0), point(ry)) >= 0

    @given(st.floats(-0.5, 5), st.floats(0.05, 3), st.floats(0.05, 5), st.floats(0.05, 5))
    def test_factorized_in_x(self, a, t, rx, ry):
        y = point(ry, (0, 0, 1))
        assert limit_kernel(a, t, point(rx), y) * rx == pytest.approx(limit_kernel(a, t, point(1.0), y), rel=1e-14)

    @given(st.floats(-0.5, 5), st.floats(-0.5, 5), st.floats(0.05, 3), st.floats(0.05, 5))
    def test_monotone(self, a1, a2, t, ry):
        lo, hi = sorted((a1, a2))
        x, y = point(1.0), point(ry)
        assert limit_kernel(lo, t, x, y) >= limit_kernel(hi, t, x, y) * (1 - 1e-14)

    def test_continuity_and_endpoints(self):
        x, y = point(1.0), point(0.7)
        base = limit_kernel(0.5, 1.0, x, y)
        gaps = [abs(limit_kernel(0.5 + d, 1.0, x, y) - base) for d in (1e-2, 1e-4, 1e-6)]
        assert gaps[0] > gaps[1] > gaps[2]
        up = [limit_kernel(a, 1.0, x, y) for a in (1e1, 1e3, 1e5)]
        assert up[0] > up[1] > up[2] and up[2] < 1e-4 * base
        down = [limit_kernel(a, 1.0, x, y) for a in (-0.5, -1.0, -2.0)]
        assert down[0] < down[1] < down[2] and down[2] > 1e6 * base


class TestLimitPairing:
    def test_zero_function(self, unit_dirac):
        assert limit_pairing(0.3, 1.0, unit_dirac, zero_function()) == 0.0
        assert limit_pairing(-math.inf, 1.0, unit_dirac, zero_function()) == 0.0

    def test_alpha_zero_quadrature(self, bump):
        mu = AtomicMeasure.from_atoms([(point(1.0), 1.0), (point(4.0), 2.0)])
        ref = integrate.quad(lambda r: r * free_kernel_radial(1.0, r) * bump(r), 0, 3,
                             points=bump.breakpoints, epsabs=0, epsrel=1e-12)[0]
        assert limit_pairing(0.0, 1.0, mu, bump) == pytest.approx(8 * PI * 1.5 * ref, rel=1e-10)

    def test_extended(self, bump, unit_dirac):
        assert limit_pairing(math.inf, 1.0, unit_dirac, bump) == 0.0
        assert limit_pairing(-math.inf, 1.0, unit_dirac, bump) == math.inf

    def test_second_term_limit(self, bump):
        # int mu(dx) (2t/|x|) int dy |y|^{-1} p_t(y) f(y) in Cartesian-free form
        t = 0.8
        inner = integrate.quad(lambda r: 4 * PI * r * free_kernel_radial(t, r) * bump(r), 0, 3,
                               points=bump.breakpoints, epsabs=0, epsrel=1e-12)[0]
        mu = AtomicMeasure.dirac(point(2.0))
        assert limit_pairing(0.0, t, mu, bump) == pytest.approx(2 * t / 2.0 * inner, rel=1e-10)


class TestScaledMean:
    def test_k_one_is_plain_pairing(self, bump):
        mu = AtomicMeasure.from_atoms([(point(1.0), 1.0), (point(0.5), 0.3)])
        assert scaled_mean(1.0, CONST, 0.4, 1.0, mu, bump) == pytest.approx(
            expected_measure_pairing(mu, 0.4, 1.0, bump), rel=1e-12)

    @pytest.mark.parametrize("regime,alpha", [(INV_SQRT, 1.0), (CONST, 0.5), (CONST, -0.05), (INV_SQRT, -0.1)])
    def test_routes_agree(self, bump, unit_dirac, regime, alpha):
        for k in (10.0, 1e3):
            assert scaled_mean(k, regime, alpha, 1.0, unit_dirac, bump) > 0

    def test_approaches_limit(self, bump, unit_dirac):
        lim = limit_pairing(1.0, 1.0, unit_dirac, bump)
        errs = [abs(scaled_mean(k, INV_SQRT, 1.0, 1.0, unit_dirac, bump) - lim) for k in (1e2, 1e4, 1e6)]
        assert errs[0] > errs[1] > errs[2]

    def test_zero_schedule_has_no_third_term(self, bump, unit_dirac):
        zero = LimitRegime("constant", 0.0)
        for k in (1e1, 1e3):
            d = proof_regime_decomposition(k, zero, 1.0, 1.0, unit_dirac, bump)
            assert d.third_term == 0.0

    def test_inconsistent_routes_detected(self, bump, unit_dirac, monkeypatch):
        import sbm_pointsource.scaling_limit as sl

        real = sl._proof_form_terms
        monkeypatch.setattr(sl, "_proof_form_terms",
                            lambda k, a, t, mu, f, cfg: real(k, 1.01 * a + 0.01, t, mu, f, cfg))
        with pytest.raises(ConsistencyError):
            scaled_mean(100.0, INV_SQRT, 1.0, 1.0, unit_dirac, bump)


class TestDecomposition:
    def test_terms(self, bump, unit_dirac):
        ds = [proof_regime_decomposition(k, INV_SQRT, 1.0, 1.0, unit_dirac, bump) for k in (1e2, 1e4, 1e6)]
        assert ds[0].free_term > ds[1].free_term > ds[2].free_term > 0
        assert ds[0].second_term <= ds[1].second_term <= ds[2].second_term
        assert ds[2].total == pytest.approx(scaled_mean(1e6, INV_SQRT, 1.0, 1.0, unit_dirac, bump), rel=1e-9)

    def test_infinite_alpha_cancellation(self, bump, unit_dirac):
        ds = [proof_regime_decomposition(k, CONST, 1.0, 1.0, unit_dirac, bump) for k in (1e2, 1e4, 1e6)]
        ratios = [d.cancellation_ratio for d in ds]
        assert ratios[0] > ratios[1] > ratios[2] and ratios[2] < 1e-3
        assert all(d.second_term > 0.1 and d.third_term < -0.1 for d in ds)

    def test_substituted_third_term(self, bump, unit_dirac):
        d = proof_regime_decomposition(100.0, INV_SQRT, 1.0, 1.0, unit_dirac, bump, substituted=True)
        assert d.third_term_substituted == pytest.approx(d.third_term, rel=1e-7)

    @pytest.mark.parametrize("a,t,s", [(1.0, 1.0, 0.5), (30.0, 0.5, 1.0), (-0.2, 1.0, 0.3), (1e-3, 2.0, 0.1)])
    def test_substituted_tail(self, a, t, s):
        assert substituted_tail(a, t, s) == pytest.approx(4 * PI * a * laplace_tail_integral(a, t, s), rel=1e-10)


class TestConvergenceTable:
    def test_increasing_k(self):
        with pytest.raises(DomainError):
            ConvergenceTable([ConvergenceRow(10, 1, 1, 0, 0), ConvergenceRow(10, 1, 1, 0, 0)])

    def test_study_and_csv(self, bump, unit_dirac, tmp_path):
        table, a_star, limit = convergence_study(INV_SQRT, 1.0, 1.0, unit_dirac, bump, ks=(1e3, 1e1, 1e2))
        assert a_star == 1.0 and table.ks.tolist() == [10, 100, 1000]
        assert np.all(np.diff(table.rel_errors) < 0)
        path = tmp_path / "c.csv"
        table.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "k,scaled_mean,limit,abs_err,rel_err" and len(lines) == 4

    def test_threads_do_not_change_values(self, bump, unit_dirac):
        a = convergence_study(INV_SQRT, 1.0, 1.0, unit_dirac, bump, ks=(1e1, 1e2), workers=1)[0]
        b = convergence_study(INV_SQRT, 1.0, 1.0, unit_dirac, bump, ks=(1e1, 1e2), workers=2)[0]
        assert np.array_equal(a.values, b.values)


class TestTotalMass:
    def test_inverse_radius_integral(self):
        for t in (0.3, 1.0, 4.0):
            assert inverse_radius_heat_integral(t) == pytest.approx((PI * t) ** -0.5, rel=1e-10)

    def test_predicted_limit(self):
        mu = AtomicMeasure.dirac(point(2.0))
        assert total_mass_limit_alpha_zero(1.0, mu) == pytest.approx(2 / (math.sqrt(PI) * 2.0), rel=1e-15)
        assert total_mass_limit_alpha_zero(1.0, mu) == pytest.approx(
            2.0 * 1.0 * mu.reference_pairing() * inverse_radius_heat_integral(1.0), rel=1e-10)

    def test_signs(self, unit_dirac):
        pos = [log_scaled_total_mass(k, 1.0, 1.0, unit_dirac) for k in (1e2, 1e6)]
        neg = [log_scaled_total_mass(k, -1.0, 1.0, unit_dirac) for k in (1e2, 1e6)]
        assert pos[1] < pos[0]
        assert neg[1] > neg[0] + math.log(1e3)

    def test_regimes(self, unit_dirac):
        ks = (1e2, 1e3, 1e4, 1e5, 1e6)
        assert total_mass_regimes(1.0, 1.0, unit_dirac, ks).classification == "DECAY"
        assert total_mass_regimes(-1.0, 1.0, unit_dirac, ks).classification == "BLOWUP"
        zero = total_mass_regimes(0.0, 1.0, unit_dirac, ks)
        assert zero.classification == "FINITE"
        assert zero.extrapolated_limit == pytest.approx(zero.predicted_limit, rel=2e-2)

    def test_classifier(self):
        ks = [1e1, 1e2, 1e3, 1e4]
        assert classify_total_mass(ks, [0.0, 0.3, -0.2, 0.1])[0] == "UNRESOLVED"
        assert classify_total_mass(ks[:2], [0.0, 1.0])[0] == "UNRESOLVED"
        assert classify_total_mass(ks, [0, 2, 5, 9])[0] == "BLOWUP"
        assert classify_total_mass(ks, [0, -1, -2, -3])[0] == "DECAY"
        label, lim = classify_total_mass(ks, np.log(1 + 0.1 / np.sqrt(ks)))
        assert label == "FINITE" and lim == pytest.approx(1.0, rel=1e-12)

    def test_json(self, unit_dirac):
        res = total_mass_regimes(0.0, 1.0, unit_dirac, (1e2, 1e3, 1e4))
        js = res.to_json()
        assert js["classification"] == res.classification and len(js["k"]) == 3
