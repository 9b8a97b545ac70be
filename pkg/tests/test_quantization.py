import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascade_lab.profiles import Unity
from cascade_lab.quantization import (
    HermiteBasis,
    OperatorMatrix,
    anti_wick_quantize,
    coherent_state,
    coherent_state_projection,
    composition_check,
    dump_matrix,
    egorov_conjugate,
    garding_check,
    gaussian_smoothing,
    harmonic_oscillator_matrix,
    hermite_functions,
    load_matrix,
    verify_egorov,
    weyl_anti_wick_gap,
    weyl_quantize,
    weyl_quantize_oracle,
)
from cascade_lab.symbols import (
    AngleTimeSymbol,
    PolynomialSymbol,
    poisson_bracket_h0,
    standard_perturbation,
    trig_symbol,
)

from .strategies import real_symbols

h0 = PolynomialSymbol.harmonic_oscillator()
x_sym = PolynomialSymbol({(1, 0): 1.0})
xi_sym = PolynomialSymbol({(0, 1): 1.0})
sin1 = trig_symbol(sin_coeffs={1: 1.0})
sin2 = trig_symbol(sin_coeffs={2: 1.0})
cos2 = trig_symbol(cos_coeffs={2: 1.0})
nonneg = trig_symbol(cos_coeffs={0: 0.5}, sin_coeffs={2: 0.5})

# Opw(sin theta) at N = 256, entries (k, k+1) and (k+1, k) for k = 240..248 from the
# direct phase-space quadrature oracle (144 s to recompute)
OSC_ORACLE_UPPER = [
    0.5000063328467835, 0.5000065420679125, 0.4999816514797561, 0.500031096575502, 0.49995743469669873,
    0.5000547369497631, 0.4999345666864583, 0.5000766129458503, 0.499913857411882,
]
OSC_ORACLE_LOWER = [
    0.5000063328467834, 0.5000065420679127, 0.4999816514797562, 0.5000310965755024, 0.499957434696699,
    0.500054736949763, 0.4999345666864578, 0.5000766129458503, 0.4999138574118817,
]


def _off_band(M: np.ndarray, bands) -> float:
    i, j = np.indices(M.shape)
    mask = ~np.isin(i - j, list(bands))
    return float(np.max(np.abs(M[mask]))) if mask.any() else 0.0


class TestBasis:
    def test_eigenvalues(self):
        b = HermiteBasis(5)
        np.testing.assert_array_equal(b.eigenvalues, np.arange(5) + 0.5)

    def test_too_small(self):
        with pytest.raises(ValueError):
            HermiteBasis(1)

    def test_hermite_functions_are_eigenfunctions(self):
        # -psi'' + x^2 psi = (2k + 1) psi, checked by finite differences
        x = np.linspace(-4, 4, 81)
        h = 1e-4
        psi = hermite_functions(8, x)
        d2 = (hermite_functions(8, x + h) - 2 * psi + hermite_functions(8, x - h)) / h**2
        lhs = -d2 + x**2 * psi
        np.testing.assert_allclose(lhs, (2 * np.arange(8)[:, None] + 1) * psi, atol=1e-5)

    def test_hermite_functions_orthonormal(self):
        x, w = np.polynomial.hermite.hermgauss(80)
        psi = hermite_functions(30, x) * np.exp(x**2 / 2)
        np.testing.assert_allclose((psi * w) @ psi.T, np.eye(30), atol=1e-12)


class TestWeyl:
    def test_h0_is_diagonal(self):
        M = weyl_quantize(h0, HermiteBasis(128)).dense()
        np.testing.assert_allclose(M, np.diag(np.arange(128) + 0.5), atol=1e-10)
        np.testing.assert_allclose(harmonic_oscillator_matrix(HermiteBasis(8)).dense(), np.diag(np.arange(8) + 0.5))

    def test_position_is_tridiagonal(self):
        M = weyl_quantize(x_sym, HermiteBasis(16)).dense()
        k = np.arange(15)
        np.testing.assert_allclose(np.diag(M, 1), np.sqrt((k + 1) / 2), atol=1e-14)
        np.testing.assert_allclose(np.diag(M, -1), np.sqrt((k + 1) / 2), atol=1e-14)
        assert _off_band(M, {1, -1}) == 0.0

    def test_ladder_convention(self):
        lowering = PolynomialSymbol({(1, 0): 1 / math.sqrt(2), (0, 1): 1j / math.sqrt(2)})
        M = weyl_quantize(lowering, HermiteBasis(12)).dense()
        expect = np.diag(np.sqrt(np.arange(1, 12)), 1)
        np.testing.assert_allclose(M, expect, atol=1e-14)

    def test_oracle_on_h0(self):
        b = HermiteBasis(64)
        diff = weyl_quantize_oracle(h0, b).dense() - weyl_quantize(h0, b).dense()
        assert np.max(np.abs(diff)) <= 1e-10

    def test_oracle_selection_rule_sin2(self):
        b = HermiteBasis(24)
        O = weyl_quantize_oracle(sin2, b).dense()
        assert _off_band(O, {2, -2}) <= 1e-10
        assert np.max(np.abs(O - weyl_quantize(sin2, b).dense())) <= 1e-10

    def test_sin_theta_bands_and_frozen_oracle(self):
        M = weyl_quantize(sin1, HermiteBasis(256))
        assert M.bands == frozenset({1, -1})
        D = M.dense()
        assert _off_band(D, {1, -1}) == 0.0
        k = np.arange(240, 249)
        np.testing.assert_allclose(D[k, k + 1], OSC_ORACLE_UPPER, atol=1e-8)
        np.testing.assert_allclose(D[k + 1, k], OSC_ORACLE_LOWER, atol=1e-8)

    def test_zero_symbol(self):
        assert weyl_quantize(AngleTimeSymbol.zero(), HermiteBasis(8)).max_abs() == 0.0

    @settings(max_examples=15)
    @given(real_symbols(time_dependent=False))
    def test_hermitian_and_selection_rule(self, v):
        M = weyl_quantize(v, HermiteBasis(48))
        assert M.hermitian_defect() <= 1e-12
        assert _off_band(M.dense(), v.angle_harmonics | {0}) <= 1e-10

    @settings(max_examples=10)
    @given(real_symbols(time_dependent=False), real_symbols(time_dependent=False), st.floats(-2, 2))
    def test_linearity(self, a, b, s):
        basis = HermiteBasis(32)
        lhs = weyl_quantize(a + b * s, basis).dense()
        rhs = weyl_quantize(a, basis).dense() + s * weyl_quantize(b, basis).dense()
        np.testing.assert_allclose(lhs, rhs, atol=1e-13)


class TestEgorov:
    def test_full_period_is_identity(self):
        M = weyl_quantize(sin1, HermiteBasis(32))
        np.testing.assert_allclose(egorov_conjugate(M, 2 * np.pi).dense(), M.dense(), atol=1e-13)

    def test_position_to_momentum(self):
        b = HermiteBasis(32)
        lhs = egorov_conjugate(weyl_quantize(x_sym, b), np.pi / 2).dense()
        np.testing.assert_allclose(lhs, weyl_quantize(xi_sym, b).dense(), atol=1e-14)

    def test_diagonal_invariant(self):
        M = harmonic_oscillator_matrix(HermiteBasis(16))
        np.testing.assert_array_equal(egorov_conjugate(M, 0.37).dense(), M.dense())

    def test_residuals(self):
        b = HermiteBasis(256)
        assert verify_egorov(sin2, 0.7, b) <= 1e-8
        assert verify_egorov(sin2, 0.0, b) == 0.0
        assert verify_egorov(h0, 1.1, HermiteBasis(64)) <= 1e-12

    @settings(max_examples=10)
    @given(real_symbols(time_dependent=False, max_n=4), st.floats(-3.2, 3.2))
    def test_exact_egorov_property(self, v, tau):
        assert verify_egorov(v, tau, HermiteBasis(64)) <= 1e-8


class TestAntiWick:
    def test_positivity(self):
        M = anti_wick_quantize(nonneg, HermiteBasis(256)).dense()
        assert np.linalg.eigvalsh(M)[0] >= -1e-8

    def test_zero_and_identity(self):
        assert anti_wick_quantize(AngleTimeSymbol.zero(), HermiteBasis(8)).max_abs() == 0.0
        one = AngleTimeSymbol([((0, 0, Unity()), 1.0)])
        np.testing.assert_allclose(anti_wick_quantize(one, HermiteBasis(16)).dense(), np.eye(16), atol=1e-13)

    def test_equals_weyl_of_smoothed_symbol(self):
        b = HermiteBasis(48)
        aw = anti_wick_quantize(sin2, b).dense()
        smoothed = weyl_quantize(gaussian_smoothing(sin2), b).dense()
        assert np.max(np.abs(aw - smoothed)[:43, :43]) <= 1e-10

    def test_coherent_state_integral_oracle(self):
        # (1/2pi) int a(z) |Phi_z><Phi_z| dz on a polar grid
        b = HermiteBasis(10)
        x, w = np.polynomial.legendre.leggauss(60)
        edges = [math.sqrt(0.5), 1.0, 3.0, 6.0, 9.0, 12.0]
        r = np.concatenate([0.5 * (b - a) * x + 0.5 * (a + b) for a, b in zip(edges[:-1], edges[1:])])
        wr = np.concatenate([0.5 * (b - a) * w for a, b in zip(edges[:-1], edges[1:])])
        th = 2 * np.pi * np.arange(48) / 48
        M = np.zeros((10, 10), dtype=complex)
        for rr, w in zip(r, wr):
            for t in th:
                q, p = rr * np.sin(t), rr * np.cos(t)
                a = float(np.real(sin2.evaluate_cartesian(0.0, q, p)))
                if a == 0.0:
                    continue
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    c = coherent_state((q, p), HermiteBasis(120)).coefficients[:10]
                M += w * rr * (2 * np.pi / 48) * a * np.outer(c, c.conj())
        M /= 2 * np.pi
        np.testing.assert_allclose(M, anti_wick_quantize(sin2, b).dense(), atol=1e-8)

    def test_weyl_anti_wick_gap_decreases(self):
        gaps = weyl_anti_wick_gap(sin2, HermiteBasis(320))
        assert list(gaps) == [16, 64, 256]
        assert gaps[16] > gaps[64] > gaps[256]


class TestCoherentStates:
    def test_origin_is_ground_state(self):
        c = coherent_state((0.0, 0.0), HermiteBasis(8)).coefficients
        np.testing.assert_array_equal(c, np.eye(8)[0])

    @given(st.floats(-4, 4), st.floats(-4, 4))
    def test_unit_norm(self, q, p):
        cs = coherent_state((q, p), HermiteBasis(128))
        assert cs.tail_mass < 1e-10
        assert np.linalg.norm(cs.coefficients) == pytest.approx(1.0, abs=1e-10)

    @pytest.mark.parametrize("z", [(1.3, -0.7), (-2.0, 0.5), (0.0, 3.0)])
    def test_closed_form_matches_projection(self, z):
        b = HermiteBasis(48)
        np.testing.assert_allclose(coherent_state(z, b).coefficients, coherent_state_projection(z, b), atol=1e-12)

    def test_energy_expectation(self):
        b = HermiteBasis(64)
        H = weyl_quantize(h0, b).dense()
        for q, p in [(1.3, -0.7), (2.0, 2.0)]:
            c = coherent_state((q, p), b).coefficients
            assert np.vdot(c, H @ c).real == pytest.approx((q * q + p * p) / 2 + 0.5, abs=1e-10)

    def test_tail_warning(self):
        with pytest.warns(RuntimeWarning):
            cs = coherent_state((6.0, 0.0), HermiteBasis(16))
        assert cs.truncated


class TestComposition:
    def test_constant_symbol_is_exact(self):
        one = AngleTimeSymbol([((0, 0, Unity()), 2.0)])
        r = composition_check(one, sin1, HermiteBasis(128))
        assert r["product_max"] <= 1e-10 and r["commutator_max"] <= 1e-10

    def test_sin_theta_with_itself(self):
        r = composition_check(sin1, sin1, HermiteBasis(512))
        assert r["commutator_max"] <= 1e-12
        assert r["product_trend"]["slope"] < -0.5
        assert r["product_trend"]["non_increasing_from"] is not None

    def test_sin2_cos2_order_drop(self):
        # both symbols depend on theta only for I >= 1/2, so their bracket lives in the
        # cutoff transition and the residual is measured by its decay across mode bands
        r = composition_check(sin2, cos2, HermiteBasis(512))
        bands = r["commutator_residual"]
        assert bands[128] < bands[64] < bands[32] < bands[16]
        assert r["commutator_trend"]["slope"] < -0.4
        assert r["product_trend"]["slope"] < -1.0

    def test_bracket_with_h0_is_exact(self):
        # quadratic h0: the commutator has no higher Moyal terms
        basis = HermiteBasis(128)
        pad = basis.padded(4)
        A = weyl_quantize(sin1, pad).dense()
        H = weyl_quantize(h0, pad).dense()
        lhs = (1j * (A @ H - H @ A))[:115, :115]
        rhs = weyl_quantize(poisson_bracket_h0(sin1), pad).dense()[:115, :115]
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


class TestGarding:
    def test_nonnegative_symbol(self):
        r = garding_check(nonneg, HermiteBasis(256))
        assert r["C"] < 10 and r["min_quadform_bound"] >= -1e-12
        assert r["anti_wick_min_eigenvalue"] >= -1e-8

    def test_zero(self):
        r = garding_check(AngleTimeSymbol.zero(), HermiteBasis(64))
        assert r["C"] == 0.0

    def test_cutoff_one(self):
        r = garding_check(trig_symbol(cos_coeffs={0: 1.0}), HermiteBasis(256))
        assert r["weyl_min_eigenvalue"] >= -r["C"] * 4.0
        assert r["C"] < 1.0

    def test_rejects_negative_symbol(self):
        with pytest.raises(ValueError):
            garding_check(sin2, HermiteBasis(16))


class TestPersistence:
    def test_round_trip(self, tmp_path):
        M = weyl_quantize(standard_perturbation().time_harmonic(2), HermiteBasis(40))
        csv, meta = dump_matrix(M, tmp_path / "m.csv", standard_perturbation())
        assert csv.read_text().startswith("row,col,re,im\n")
        back = load_matrix(csv)
        np.testing.assert_array_equal(back.dense(), M.dense())
        assert back.bands == M.bands

    def test_operator_matrix_accessors(self):
        M = weyl_quantize(sin2, HermiteBasis(16))
        assert isinstance(M @ M, OperatorMatrix)
        np.testing.assert_allclose((M * 2.0).dense(), 2.0 * M.dense())
        assert M.hermitian_defect() <= 1e-15
