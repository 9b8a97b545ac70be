import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad
from scipy.special import eval_genlaguerre, gammaln

from cascade_lab.laguerre import action_moments, laguerre_functions, laguerre_moments, radial_moments
from cascade_lab.profiles import (
    CompactBump,
    CutoffOne,
    PowerDecay,
    profile_from_json,
    smooth_step,
    smooth_step_jet,
)


def _scipy_l(j, d, s):
    log_norm = 0.5 * (gammaln(j + 1.0) - gammaln(j + d + 1.0))
    return np.exp(log_norm + 0.5 * d * np.log(s) - 0.5 * s) * eval_genlaguerre(j, d, s)


class TestProfiles:
    def test_cutoff_constant_outside_transition(self):
        c = CutoffOne()
        assert np.all(c(np.array([0.0, 0.1, 0.25])) == 0.0)
        assert np.all(c(np.array([0.5, 1.0, 1e6])) == 1.0)

    @given(st.floats(0.0, 2.0))
    def test_cutoff_in_unit_interval(self, s):
        assert 0.0 <= float(CutoffOne()(s)) <= 1.0

    def test_compact_bump_support(self):
        b = CompactBump()
        assert float(b(0.2)) == 0.0 and float(b(1.0)) == 0.0 and float(b(5.0)) == 0.0
        assert float(b(0.6)) == pytest.approx(1.0)

    def test_power_decay_tail(self):
        p = PowerDecay(1.5)
        assert float(p(10.0)) == pytest.approx(21.0**-1.5, rel=1e-14)

    def test_power_decay_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            PowerDecay(0.0)

    def test_json_round_trip(self):
        for p in (CutoffOne(), CompactBump(), PowerDecay(0.7)):
            assert profile_from_json(p.to_json()) == p

    def test_smooth_step_jet_matches_finite_difference(self):
        s = np.linspace(0.05, 0.95, 19)
        h = 1e-6
        fd = (smooth_step(s + h) - smooth_step(s - h)) / (2 * h)
        jet = smooth_step_jet(s, 1)
        np.testing.assert_allclose(jet[1], fd, atol=1e-7)

    def test_cutoff_derivative_matches_finite_difference(self):
        c = CutoffOne()
        s = np.linspace(0.26, 0.49, 12)
        h = 1e-6
        np.testing.assert_allclose(c.derivative(s), (c(s + h) - c(s - h)) / (2 * h), atol=1e-6)


class TestLaguerre:
    @pytest.mark.parametrize("d", [0, 1, 2, 5])
    def test_functions_match_scipy(self, d):
        s = np.linspace(0.01, 40.0, 57)
        ours = laguerre_functions(d, 12, s)
        for j in range(12):
            np.testing.assert_allclose(ours[j], _scipy_l(j, d, s), atol=1e-12)

    @pytest.mark.parametrize("d", [0, 1, 2, 4])
    def test_moments_match_quadrature(self, d):
        F = laguerre_moments(d, 10)
        G = action_moments(d, 10)
        for j in range(10):
            fq = quad(lambda s: _scipy_l(j, d, s), 0, np.inf, limit=200)[0]
            gq = quad(lambda s: 0.25 * s * _scipy_l(j, d, s), 0, np.inf, limit=200)[0]
            assert F[j] == pytest.approx(fq, abs=1e-10)
            assert G[j] == pytest.approx(gq, abs=1e-10)

    @pytest.mark.parametrize("profile", [CutoffOne(), CompactBump(), PowerDecay(1.0)])
    @pytest.mark.parametrize("d", [0, 2])
    def test_radial_moments_match_quadrature(self, profile, d):
        R = radial_moments(profile, d, 8)
        for j in range(8):
            pts = [1.0, 2.0, 3.0, 4.0]
            ref = quad(lambda s: float(profile(s / 4.0)) * _scipy_l(j, d, s), 0, 60, points=pts, limit=400)[0]
            ref += quad(lambda s: float(profile(s / 4.0)) * _scipy_l(j, d, s), 60, np.inf, limit=200)[0]
            assert R[j] == pytest.approx(ref, abs=1e-10)

    def test_orthonormality(self):
        x, w = np.polynomial.laguerre.laggauss(120)
        L = laguerre_functions(2, 10, x) * np.exp(x / 2)
        G = (L * w) @ L.T
        np.testing.assert_allclose(G, np.eye(10), atol=1e-10)
