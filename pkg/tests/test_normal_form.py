import numpy as np
import pytest
from hypothesis import given

from cascade_lab.normal_form import (
    FourierOperatorFamily,
    first_step_effective,
    homological_solve,
    integrate_family,
    resonant_decompose,
    verify_reconstruction,
)
from cascade_lab.profiles import CutoffOne
from cascade_lab.quantization import HermiteBasis, OperatorMatrix, weyl_quantize
from cascade_lab.symbols import AngleTimeSymbol, resonant_average, standard_perturbation, trig_symbol

from .strategies import real_symbols

w0 = standard_perturbation()


def _hermitian(n, seed):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    return A + A.conj().T


def _op(A):
    return OperatorMatrix(A, HermiteBasis(A.shape[0]))


def _family(cos_terms=(), sin_terms=(), static=None):
    """Hermitian family from ``cos(m t) A`` and ``sin(m t) B`` pieces."""
    n = (cos_terms or sin_terms)[0][1].shape[0] if (cos_terms or sin_terms) else static.shape[0]
    H = {}

    def add(m, M):
        H[m] = H.get(m, np.zeros((n, n), complex)) + M

    for m, A in cos_terms:
        add(m, A / 2)
        add(-m, A / 2)
    for m, B in sin_terms:
        add(m, B / 2j)
        add(-m, -B / 2j)
    if static is not None:
        add(0, static)
    return FourierOperatorFamily({m: _op(M) for m, M in H.items()})


class TestHomological:
    def test_cosine_integrates_to_sine(self):
        M = _hermitian(6, 0)
        X = homological_solve(_family(cos_terms=[(1, M)]))
        for t in (0.0, 0.4, 2.0, 5.5):
            np.testing.assert_allclose(X.at(t).dense(), np.sin(t) * M, atol=1e-13)

    def test_static_family_gives_zero(self):
        X = homological_solve(_family(static=_hermitian(5, 1)))
        assert X.at(1.3).max_abs() == 0.0

    def test_against_quadrature(self):
        M1, M2 = _hermitian(6, 2), _hermitian(6, 3)
        H = _family(cos_terms=[(2, M1)], sin_terms=[(3, M2)])
        X = homological_solve(H)
        for t in (0.3, 1.7, 4.0):
            assert np.max(np.abs(X.at(t).dense() - integrate_family(H, t))) <= 1e-10

    def test_ode_and_selfadjointness(self):
        H = _family(cos_terms=[(1, _hermitian(8, 4)), (2, _hermitian(8, 5))], sin_terms=[(3, _hermitian(8, 6))],
                    static=_hermitian(8, 7))
        X = homological_solve(H)
        avg = H.average().dense()
        assert X.at(0.0).max_abs() <= 1e-13
        for t in np.linspace(0.0, 2 * np.pi, 32, endpoint=False):
            residual = X.derivative_at(t).dense() - (H.at(t).dense() - avg)
            assert np.max(np.abs(residual)) <= 1e-10
            Xt = X.at(t).dense()
            assert np.max(np.abs(Xt - Xt.conj().T)) <= 1e-12
        assert X.selfadjoint_defect() <= 1e-12

    def test_quantized_symbol_family(self):
        H = FourierOperatorFamily.from_symbol(w0, HermiteBasis(40))
        assert H.selfadjoint_defect() <= 1e-13
        assert sorted(H.harmonics) == [-4, 0, 4]

    def test_rejects_mismatched_bases(self):
        with pytest.raises(ValueError):
            FourierOperatorFamily({0: _op(np.eye(3)), 1: _op(np.eye(4))})
        with pytest.raises(ValueError):
            FourierOperatorFamily({})


class TestResonantDecompose:
    def test_standard_perturbation(self):
        parts = resonant_decompose(w0)
        ref = trig_symbol(sin_coeffs={2: 0.25})
        for (m, n, p), c in ref.items():
            assert parts["resonant"].coefficient(m, n, p) == pytest.approx(c, abs=1e-15)
        assert len(parts["resonant"]) == len(ref)
        chi = parts["chi"]
        # (m, n) = (2, 2) and (-2, -2) rotate to frequency +-4
        c22 = w0.coefficient(2, 2)
        assert chi.coefficient(4, 2) == pytest.approx(c22 / 4j, abs=1e-15)
        assert chi.coefficient(-4, -2) == pytest.approx(w0.coefficient(-2, -2) / -4j, abs=1e-15)
        assert verify_reconstruction(w0) <= 1e-10

    def test_already_resonant(self):
        p = CutoffOne()
        v = AngleTimeSymbol([((1, -1, p), 0.3 + 0.2j), ((-1, 1, p), 0.3 - 0.2j)])
        assert len(resonant_decompose(v)["chi"]) == 0
        assert verify_reconstruction(v) <= 1e-12

    def test_static_keeps_angular_mean_only(self):
        v = trig_symbol(cos_coeffs={0: 0.4, 1: 1.0}, sin_coeffs={3: 0.5})
        res = resonant_decompose(v)["resonant"]
        assert list(res.items()) == [((0, 0, CutoffOne()), 0.4)]

    @given(real_symbols(max_m=3, max_n=3, time_dependent=True))
    def test_resonant_part_matches_average(self, v):
        res = resonant_decompose(v)["resonant"]
        avg = resonant_average(v)
        keys = {k for k, _ in res.items()} | {k for k, _ in avg.items()}
        for m, n, p in keys:
            assert res.coefficient(m, n, p) == pytest.approx(avg.coefficient(m, n, p), abs=1e-14)
        # the m + n = 0 filter is a projection: decomposing the filtered symbol leaves no generator
        kept = AngleTimeSymbol([(k, c) for k, c in v.items() if k[0] + k[1] == 0])
        again = resonant_decompose(kept)
        assert len(again["chi"]) == 0 and again["resonant"] == res
        assert verify_reconstruction(v) <= 1e-10


class TestFirstStep:
    def test_zero_symbol(self):
        out = first_step_effective(AngleTimeSymbol.zero(), HermiteBasis(16))
        assert out["H1"].max_abs() == 0.0
        assert out["remainder_report"]["max_ratio"] == 0.0
        assert all(s["remainder"] == 0.0 for s in out["remainder_report"]["samples"])

    def test_effective_is_quantized_average(self):
        b = HermiteBasis(64)
        out = first_step_effective(w0, b)
        ref = weyl_quantize(resonant_average(w0), b).dense()
        np.testing.assert_allclose(out["H1"].dense(), ref, atol=1e-14)

    def test_resonant_symbol_has_no_generator(self):
        p = CutoffOne()
        v = AngleTimeSymbol([((2, -2, p), 0.5j), ((-2, 2, p), -0.5j)])
        out = first_step_effective(v, HermiteBasis(32))
        assert out["X"].at(0.9).max_abs() <= 1e-14
        assert out["remainder_report"]["max_ratio"] <= 1e-12

    def test_remainder_gain_moderate_basis(self):
        rep = first_step_effective(w0, HermiteBasis(128))["remainder_report"]
        assert rep["max_ratio"] <= 0.5
        assert rep["selfadjoint_defect"] <= 1e-13
        for s in rep["samples"]:
            assert s["remainder"] < s["potential"]
