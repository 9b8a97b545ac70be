"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines also show under
output capture.
"""

import math
import time

import numpy as np
import pytest

from cascade_lab.profiles import CompactBump
from cascade_lab.propagator import (
    EvolutionConfig,
    StateVector,
    decay_experiment,
    effective_hamiltonian,
    effective_hamiltonian_oracle,
    evolve,
    fit_power_law,
)
from cascade_lab.quantization import HermiteBasis, PolynomialSymbol, anti_wick_quantize, verify_egorov, weyl_quantize
from cascade_lab.seminorms import distance
from cascade_lab.spectral import (
    eigen_cluster_check,
    essential_spectrum_interval,
    regular_value_select,
    structural_residuals,
    symbol_mourre_check,
    weyl_sequence_test,
)
from cascade_lab.symbols import (
    AngleTimeSymbol,
    genericity_perturb,
    is_transporter,
    poisson_bracket_h0,
    resonant_average,
    resonant_average_oracle,
    standard_perturbation,
    trig_symbol,
    verify_modulation_identities,
)

from .strategies import random_trig_polynomial

w0 = standard_perturbation()


@pytest.fixture
def report(capsys):
    def _report(number: int, title: str, ok: bool, detail: str, started: float | None = None):
        elapsed = f" [{time.perf_counter() - started:.1f}s]" if started is not None else ""
        with capsys.disabled():
            print(f"\nCRITERION {number:2d} {'PASS' if ok else 'FAIL'}: {title}: {detail}{elapsed}")
        assert ok, f"criterion {number} failed: {detail}"

    return _report


def _max_abs_diff(a: AngleTimeSymbol, b: AngleTimeSymbol) -> float:
    keys = {k for k, _ in a.items()} | {k for k, _ in b.items()}
    return max((abs(a.coefficient(*k) - b.coefficient(*k)) for k in keys), default=0.0)


def test_c01_exact_egorov(report):
    t0 = time.perf_counter()
    basis = HermiteBasis(256)
    symbols = [random_trig_polynomial(seed, max_n=4) for seed in (1, 2)]
    symbols.append(w0.at_time(0.0))
    symbols.append(trig_symbol(cos_coeffs={3: 0.7}, sin_coeffs={4: -0.4, 1: 0.2}, profile=CompactBump()))
    symbols.append(PolynomialSymbol({(2, 0): 0.5, (0, 2): 0.5, (1, 1): 0.3, (4, 0): 0.1}))
    worst = max(verify_egorov(s, tau, basis) for s in symbols for tau in (0.3, 0.7, math.pi / 2))
    elapsed = time.perf_counter() - t0
    report(1, "exact Egorov", worst <= 1e-8 and elapsed < 10, f"max residual {worst:.2e} (<= 1e-8)", t0)


def test_c02_h0_diagonal(report):
    t0 = time.perf_counter()
    basis = HermiteBasis(256)
    M = weyl_quantize(PolynomialSymbol.harmonic_oscillator(), basis).dense()
    diag_err = float(np.max(np.abs(np.diag(M) - (np.arange(256) + 0.5))))
    off = float(np.max(np.abs(M - np.diag(np.diag(M)))))
    worst = max(diag_err, off)
    elapsed = time.perf_counter() - t0
    report(2, "H0 quantization", worst <= 1e-10 and elapsed < 1, f"diagonal error {diag_err:.2e}, off-diagonal {off:.2e}",
           t0)


def test_c03_resonant_average(report):
    t0 = time.perf_counter()
    worst = 0.0
    for v in (w0, trig_symbol(sin_coeffs={1: 1.0}, m=1, time="cos"),
              genericity_perturb(trig_symbol(cos_coeffs={2: 0.3}, m=3, time="sin"), 0.5)):
        nodes = max(64, 4 * v.max_harmonic + 1)
        theta, oracle = resonant_average_oracle(v, nodes, nodes)
        direct = resonant_average(v).evaluate_action_angle(0.0, theta, 1.0)
        worst = max(worst, float(np.max(np.abs(direct - oracle))))
    avg_err = _max_abs_diff(resonant_average(w0), trig_symbol(sin_coeffs={2: 0.25}))
    br_err = _max_abs_diff(poisson_bracket_h0(resonant_average(w0)), trig_symbol(cos_coeffs={2: -0.5}))
    ok = worst <= 1e-10 and avg_err <= 1e-15 and br_err <= 1e-15 and time.perf_counter() - t0 < 1
    report(3, "resonant average", ok,
           f"oracle residual {worst:.2e}; <w0> vs sin2θ/4 {avg_err:.1e}; bracket vs -cos2θ/2 {br_err:.1e}", t0)


def test_c04_unitarity(report):
    t0 = time.perf_counter()
    basis = HermiteBasis(1024)
    series, _ = evolve(StateVector.mode(0, basis), w0, EvolutionConfig(dt=1e-2, T=100.0, stride=100))
    drift = float(np.max(np.abs(np.asarray(series.norm0) - 1.0)))
    elapsed = time.perf_counter() - t0
    ok = drift <= 1e-8 and not series.contaminated and elapsed < 120
    report(4, "unitarity", ok, f"L2 drift {drift:.2e} over T = 100", t0)


def test_c05_growth(report):
    t0 = time.perf_counter()
    basis = HermiteBasis(4096)
    series, _ = evolve(StateVector.mode(0, basis), w0, EvolutionConfig(dt=0.05, T=200.0, stride=10))
    # default window [20, min(200, t_guard)]
    hi = min(200.0, series.guard_time or 200.0)
    fit = fit_power_law(series.t, series.array("norm_r", 1.0), (20.0, hi), guard_time=series.guard_time)
    # dense-exponential oracle on a small basis against the banded Taylor path
    small = HermiteBasis(512)
    cfg = EvolutionConfig(dt=0.05, T=10.0, stride=50)
    _, banded = evolve(StateVector.mode(0, small), w0, cfg)
    _, dense = evolve(StateVector.mode(0, small), w0, cfg, engine="dense")
    gap = float(np.linalg.norm(banded.coefficients - dense.coefficients))
    elapsed = time.perf_counter() - t0
    ok = 0.8 <= fit["slope"] <= 1.1 and gap <= 1e-6 and elapsed <= 1800
    report(5, "Sobolev growth", ok,
           f"slope {fit['slope']:.4f} on [20, {hi:g}] (band [0.8, 1.1]); dense vs banded {gap:.1e}", t0)


def test_c06_ceiling(report):
    t0 = time.perf_counter()
    basis = HermiteBasis(1024)
    cases = {
        "w0": w0,
        "cos t sinθ": trig_symbol(sin_coeffs={1: 1.0}, m=1, time="cos"),
        **{f"eps0={e}": genericity_perturb(AngleTimeSymbol.zero(), e) for e in (0.1, 0.5, 1.0)},
    }
    worst, lines = -math.inf, []
    for name, v in cases.items():
        series, _ = evolve(StateVector.mode(0, basis), v, EvolutionConfig(dt=0.05, T=200.0, r_values=(1.0, 2.0)))
        t_end = series.t[-2] if series.contaminated else series.t[-1]
        for r in (1.0, 2.0):
            fit = fit_power_law(series.t, series.array("norm_r", r), (20.0, t_end))
            worst = max(worst, fit["slope"] / r)
            lines.append(f"{name} r={r:g}: {fit['slope']:.3f}")
    report(6, "growth ceiling", worst <= 1.1, f"max slope/r {worst:.3f} (<= 1.1); " + ", ".join(lines), t0)


def test_c07_decay(report):
    t0 = time.perf_counter()
    res = decay_experiment(w0, 1.0, HermiteBasis(2048))
    d, g = res.decay_fit["slope"], res.growth_fit["slope"]
    elapsed = time.perf_counter() - t0
    ok = -1.2 <= d <= -0.7 and 0.7 <= g <= 1.1 and elapsed <= 600
    lo, hi = res.decay_fit["window"]
    report(7, "local energy decay", ok,
           f"H^-1 slope {d:.4f} (band [-1.2, -0.7]), H^1 slope {g:.4f} (band [0.7, 1.1]) on [{lo:.0f}, {hi:.0f}]", t0)


def test_c08_averaging(report):
    t0 = time.perf_counter()
    basis = HermiteBasis(512)
    a = effective_hamiltonian(w0, basis).dense()
    b = effective_hamiltonian_oracle(w0, basis, nodes=64).dense()
    k = basis.interior(0.9)
    gap = float(np.max(np.abs(a[:k, :k] - b[:k, :k])))
    ok = gap <= 1e-6 and time.perf_counter() - t0 < 60
    report(8, "normal-form averaging", ok, f"matrix average vs Opw(<w0>) {gap:.2e} on {k}x{k} block", t0)


def test_c09_symbol_mourre(report):
    t0 = time.perf_counter()
    window = regular_value_select(w0)
    sym = symbol_mourre_check(w0, window)
    struct = structural_residuals(w0)
    ok = sym["holds"] and sym["rho"] >= 0.1 and sym["points"] >= 10_000 and struct["w_outer"] <= 1e-12
    report(9, "symbol Mourre", ok,
           f"rho {sym['rho']:.4f} at {sym['points']} points (>= 0.1); w for I > 1/2: {struct['w_outer']:.1e}", t0)


def test_c10_essential_spectrum(report):
    t0 = time.perf_counter()
    rep = eigen_cluster_check(w0, sizes=(256, 512, 1024), delta=0.05)
    fr = rep["fractions"]
    ok = fr[1024] >= 0.95 and rep["non_decreasing"]
    report(10, "essential spectrum", ok,
           "fractions in I0±0.05: " + ", ".join(f"N={n}: {f:.4f}" for n, f in fr.items()), t0)


def test_c11_modulation_identities(report):
    t0 = time.perf_counter()
    cases = {
        "sinθ": trig_symbol(sin_coeffs={1: 1.0}),
        "sin2θ": trig_symbol(sin_coeffs={2: 1.0}),
        "random": random_trig_polynomial(7, max_n=4),
    }
    worst, parts = 0.0, []
    for name, v in cases.items():
        res = verify_modulation_identities(v)
        r = max(res["bracket_residual"], res["rotation_residual"], res["closed_form_residual"])
        worst = max(worst, r)
        parts.append(f"{name} (n={res['n']}): {r:.1e}")
    report(11, "modulation identities", worst <= 1e-10, ", ".join(parts), t0)


def test_c12_anti_wick_positivity(report):
    t0 = time.perf_counter()
    basis = HermiteBasis(256)
    cases = {
        "1/2 + sin2θ/2": trig_symbol(cos_coeffs={0: 0.5}, sin_coeffs={2: 0.5}),
        "(1 + cosθ) bump": trig_symbol(cos_coeffs={0: 1.0, 1: 1.0}, profile=CompactBump()),
    }
    minima = {}
    for name, a in cases.items():
        M = anti_wick_quantize(a, basis).dense()
        minima[name] = float(np.linalg.eigvalsh(0.5 * (M + M.conj().T))[0])
    ok = min(minima.values()) >= -1e-8
    report(12, "anti-Wick positivity", ok, ", ".join(f"{k}: {v:.2e}" for k, v in minima.items()), t0)


def test_c13_genericity(report):
    t0 = time.perf_counter()
    eps = (0.1, 0.5, 1.0)
    bases = {"0": AngleTimeSymbol.zero(), "sin2θ": trig_symbol(sin_coeffs={2: 1.0})}
    verdicts = {(n, e): is_transporter(genericity_perturb(v, e)).verdict for n, v in bases.items() for e in eps}
    dists = {n: [distance(v, genericity_perturb(v, e)) for e in eps] for n, v in bases.items()}
    tiny = distance(AngleTimeSymbol.zero(), genericity_perturb(AngleTimeSymbol.zero(), 1e-20))
    monotone = all(all(a < b for a, b in zip(d, d[1:])) for d in dists.values())
    ok = all(verdicts.values()) and monotone and tiny < 0.01
    detail = (f"transporter for all {len(verdicts)} cases: {all(verdicts.values())}; distances "
              + "; ".join(f"v={n}: " + ", ".join(f"{x:.3f}" for x in d) for n, d in dists.items())
              + f"; eps0=1e-20: {tiny:.4f}")
    report(13, "genericity", ok, detail, t0)


def test_c14_weyl_sequence(report):
    t0 = time.perf_counter()
    avg = resonant_average(w0)
    lo, hi = essential_spectrum_interval(w0)
    points = [(4.0, 0.0), (8.0, 0.0), (16.0, 0.0)]
    inside = weyl_sequence_test(avg, 0.0, points)
    outside = [weyl_sequence_test(avg, lam, points) for lam in (lo - 0.25, hi + 0.25)]
    low = min(o["min_value"] for o in outside)
    ok = lo < 0.0 < hi and inside["strictly_decreasing"] and low >= 0.01
    report(14, "Weyl sequences", ok,
           "λ=0: " + ", ".join(f"{x:.2e}" for x in inside["values"]) + f"; outside I0+0.2: min {low:.3f}", t0)
