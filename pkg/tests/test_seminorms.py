import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cascade_lab.seminorms import distance, seminorm, seminorm_table
from cascade_lab.symbols import AngleTimeSymbol, genericity_perturb, standard_perturbation, trig_symbol

from .strategies import real_symbols

sin2 = trig_symbol(sin_coeffs={2: 1.0})
w0 = standard_perturbation()


def _fd_suprema(symbol, actions, phi, h=1e-5):
    """Grid suprema of weighted first derivatives by central differences (time frozen at 0)."""
    R, PHI = np.meshgrid(np.sqrt(2.0 * np.asarray(actions)), phi, indexing="ij")
    x, xi = R * np.cos(PHI), R * np.sin(PHI)
    f = lambda a, b: symbol.evaluate_cartesian(0.0, a, b)
    dx = (f(x + h, xi) - f(x - h, xi)) / (2 * h)
    dxi = (f(x, xi + h) - f(x, xi - h)) / (2 * h)
    w = np.sqrt(1.0 + R**2)
    return float(np.max(np.abs(dx) * w)), float(np.max(np.abs(dxi) * w))


def test_sup_of_sin2theta_is_one():
    assert seminorm(sin2, 0) == pytest.approx(1.0, abs=1e-12)


def test_time_derivative_seminorm_of_w0():
    # sup|w0| = 1/2 and sup|d_t w0| = 1
    assert seminorm(w0, 0, k=1) == pytest.approx(1.5, abs=1e-12)


@pytest.mark.parametrize("symbol", [sin2, trig_symbol(cos_coeffs={1: 0.7, 3: -0.2})])
def test_first_derivatives_match_finite_differences(symbol):
    actions = np.array([0.3, 0.4, 0.6, 1.0, 3.0, 10.0])
    phi = 2 * np.pi * np.arange(64) / 64
    table = seminorm_table(symbol, 1, actions=actions, phi_points=64, t_points=1)
    sx, sxi = _fd_suprema(symbol, actions, phi)
    assert table[1, 0, 0] == pytest.approx(sx, rel=1e-6)
    assert table[0, 1, 0] == pytest.approx(sxi, rel=1e-6)


def test_order_weight_makes_homogeneous_derivatives_bounded():
    small = seminorm(sin2, 3, i_max=1e2)
    large = seminorm(sin2, 3, i_max=1e4)
    assert large == pytest.approx(small, rel=1e-6)


def test_distance_identity_and_zero():
    assert distance(sin2, sin2) == 0.0
    assert distance(AngleTimeSymbol.zero(), AngleTimeSymbol.zero()) == 0.0


@settings(max_examples=8)
@given(real_symbols(max_m=2, max_n=2, max_terms=2), real_symbols(max_m=2, max_n=2, max_terms=2))
def test_distance_symmetric_and_bounded(v, w):
    d = distance(v, w, j_max=4)
    assert d == pytest.approx(distance(w, v, j_max=4), rel=1e-12)
    assert 0.0 <= d < 2.0


def test_distance_monotone_in_eps():
    zero = AngleTimeSymbol.zero()
    # high seminorms of the cutoff grow factorially, so the distance shrinks only slowly with eps
    ds = [distance(zero, genericity_perturb(zero, e)) for e in (1e-20, 1e-8, 0.1, 0.5, 1.0)]
    assert all(b > a for a, b in zip(ds, ds[1:]))
    assert ds[0] < 0.01
