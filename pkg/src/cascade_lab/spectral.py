"""Essential spectrum, conjugate operator, Mourre checks and spectral filtering.

The averaged symbol ``<v>`` of a transporter is homogeneous of degree zero,
so its essential spectrum is the range ``I0`` of the angular profile
``f(theta) = <v>(theta, I=1)``.  A regular value ``lambda*`` of ``f`` gives a
window on which ``|f'|`` stays away from zero; the conjugate operator is the
quantization of ``a = {<v>, h0} h0 = -f'(theta) I``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .profiles import ActionWeighted, smooth_step
from .propagator import EmptySpectralWindow, StateVector, effective_hamiltonian
from .quantization import HermiteBasis, OperatorMatrix, coherent_state, weyl_quantize
from .symbols import (
    AngleTimeSymbol,
    is_transporter,
    poisson_bracket,
    poisson_bracket_h0,
    resonant_average,
)

__all__ = [
    "BumpFunction",
    "SpectralWindow",
    "FilterWindow",
    "WindowSelectionError",
    "MourreFailure",
    "WeylSequenceError",
    "angular_profile",
    "symbol_range",
    "essential_spectrum_interval",
    "eigen_cluster_check",
    "conjugate_symbol",
    "conjugate_operator",
    "commutator",
    "regular_value_select",
    "window_bumps",
    "symbol_mourre_check",
    "structural_term",
    "structural_residuals",
    "spectrum_report",
    "matrix_mourre_diagnostic",
    "spectral_filter",
    "weyl_sequence_test",
]


# support of g_I relative to the half-width of I
GI_REACH = 1.25


class WindowSelectionError(ValueError):
    """No candidate value with a positive derivative margin."""


class MourreFailure(ValueError):
    """The pointwise positivity fails on the selected window."""


class WeylSequenceError(ValueError):
    """The phase-space sequence does not approach the target value."""


@dataclass(frozen=True)
class BumpFunction:
    """Smooth ``[0, 1]`` bump: 1 on ``|x - center| <= inner``, 0 beyond ``outer``."""

    center: float
    inner: float
    outer: float

    def __post_init__(self):
        if not 0.0 <= self.inner < self.outer:
            raise ValueError("bump needs 0 <= inner < outer")

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        s = (np.abs(x - self.center) - self.inner) / (self.outer - self.inner)
        return 1.0 - smooth_step(s)

    @property
    def support(self) -> tuple[float, float]:
        return (self.center - self.outer, self.center + self.outer)

    def to_json(self) -> dict:
        return {"center": self.center, "inner": self.inner, "outer": self.outer}


@dataclass(frozen=True)
class SpectralWindow:
    """``J`` inside ``I`` inside ``I0``, with the Mourre constant ``rho`` on ``I``."""

    I0: tuple
    I: tuple
    J: tuple
    lambda_star: float
    rho: float
    width: float
    derivative_floor: float = field(default=float("nan"))

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("window needs rho > 0")
        if not (self.I0[0] <= self.I[0] <= self.J[0] < self.J[1] <= self.I[1] <= self.I0[1]):
            raise ValueError("window needs J inside I inside I0")

    @property
    def g_I(self) -> BumpFunction:
        """Equal to 1 on ``I``; support reaches ``GI_REACH * width``."""
        return BumpFunction(self.lambda_star, self.width, GI_REACH * self.width)

    @property
    def g_J(self) -> BumpFunction:
        """Equal to 1 on ``J``, supported in the closure of ``I``."""
        return BumpFunction(self.lambda_star, 0.5 * self.width, self.width)

    def to_json(self) -> dict:
        return {
            "I0": list(self.I0),
            "I": list(self.I),
            "J": list(self.J),
            "lambda_star": self.lambda_star,
            "rho": self.rho,
            "width": self.width,
        }


@dataclass(frozen=True)
class FilterWindow:
    """A bare filter bump standing in for a selected window."""

    bump: BumpFunction

    @property
    def g_J(self) -> BumpFunction:
        return self.bump

    def to_json(self) -> dict:
        return {"filter": self.bump.to_json()}


def window_bumps(window: SpectralWindow) -> dict:
    return {"I": window.g_I, "J": window.g_J}


# ---------------------------------------------------------------------------
# the averaged angular profile
# ---------------------------------------------------------------------------


def _averaged(v: AngleTimeSymbol) -> AngleTimeSymbol:
    return resonant_average(v.principal_part())


def angular_profile(v: AngleTimeSymbol, theta, action: float = 1.0):
    """``(f, f')`` of the averaged principal symbol on the circle ``I = action``."""
    avg = _averaged(v)
    theta = np.asarray(theta, dtype=float)
    f = np.real(avg.evaluate_action_angle(0.0, theta, action))
    df = np.real(avg.d_theta().evaluate_action_angle(0.0, theta, action))
    return f, df


def symbol_range(symbol: AngleTimeSymbol, grid: int = 1024) -> tuple[float, float]:
    """Range of a time-independent principal symbol on ``I = 1``, extrema refined."""
    sym = symbol.principal_part()
    if len(sym) == 0:
        return (0.0, 0.0)
    theta = 2.0 * np.pi * np.arange(grid) / grid

    def f_at(t):
        return np.real(sym.evaluate_action_angle(0.0, t, 1.0))

    f = f_at(theta)
    h = 2.0 * np.pi / grid
    lo, hi = float(f.min()), float(f.max())
    for sign, i in ((1.0, int(np.argmin(f))), (-1.0, int(np.argmax(f)))):
        res = minimize_scalar(lambda t: sign * float(f_at(t)), bounds=(theta[i] - h, theta[i] + h), method="bounded",
                              options={"xatol": 1e-12})
        val = float(f_at(res.x))
        if sign > 0:
            lo = min(lo, val)
        else:
            hi = max(hi, val)
    return (lo, hi)


def essential_spectrum_interval(v: AngleTimeSymbol, grid: int = 1024) -> tuple[float, float]:
    """``I0``: range of the averaged principal symbol on the unit-action circle."""
    if not v.is_real():
        raise ValueError("essential spectrum needs a real symbol")
    return symbol_range(_averaged(v), grid)


def eigen_cluster_check(v: AngleTimeSymbol, sizes=(256, 512, 1024), delta: float = 0.05) -> dict:
    """Fraction of eigenvalues of ``Opw(<v>)`` inside ``I0`` fattened by ``delta``."""
    lo, hi = essential_spectrum_interval(v)
    avg = resonant_average(v)
    fractions = {}
    for N in sizes:
        H = weyl_quantize(avg, HermiteBasis(N)).dense()
        lam = np.linalg.eigvalsh(0.5 * (H + H.conj().T))
        fractions[N] = float(np.mean((lam >= lo - delta) & (lam <= hi + delta)))
    vals = [fractions[N] for N in sizes]
    monotone = all(b >= a - 1e-12 for a, b in zip(vals, vals[1:]))
    return {
        "I0": [lo, hi],
        "delta": delta,
        "fractions": fractions,
        "non_decreasing": monotone,
        "passed": monotone and vals[-1] >= 0.95,
    }


# ---------------------------------------------------------------------------
# conjugate operator and commutators
# ---------------------------------------------------------------------------


def _times_action(symbol: AngleTimeSymbol) -> AngleTimeSymbol:
    return AngleTimeSymbol([((m, n, ActionWeighted(p)), c) for (m, n, p), c in symbol.items()])


def conjugate_symbol(v: AngleTimeSymbol) -> AngleTimeSymbol:
    """``a = {<v>, h0} h0 = -d_theta <v> * I``."""
    return _times_action(poisson_bracket_h0(_averaged(v)))


def conjugate_operator(v: AngleTimeSymbol, basis: HermiteBasis) -> OperatorMatrix:
    A = weyl_quantize(conjugate_symbol(v), basis)
    A.label = "conjugate"
    return A


def commutator(M1: OperatorMatrix, M2: OperatorMatrix) -> OperatorMatrix:
    """``i (M1 M2 - M2 M1)``."""
    return (M1 @ M2 - M2 @ M1) * 1j


# ---------------------------------------------------------------------------
# window selection and the symbol-level Mourre inequality
# ---------------------------------------------------------------------------


def regular_value_select(v: AngleTimeSymbol, candidates: int = 201, width_fraction: float = 0.1,
                         margin: float = 0.1, grid: int = 4096) -> SpectralWindow:
    """Grid search for the value whose preimage has the steepest profile.

    ``w = width_fraction * |I0|``.  For each candidate ``lambda`` the score is
    ``min |f'|^2`` over angles with ``|f - lambda| <= 1.25 w`` (the support of
    ``g_I``); the maximizer with the smallest ``|lambda|`` wins and
    ``rho = score * (1 - margin)``.
    """
    theta = 2.0 * np.pi * np.arange(grid) / grid
    f, df = angular_profile(v, theta)
    lo, hi = essential_spectrum_interval(v)
    span = hi - lo
    if span < 1e-12:
        raise WindowSelectionError("averaged symbol is constant; no regular value with positive margin")
    w = width_fraction * span
    reach = GI_REACH * w
    lams = np.linspace(lo + reach, hi - reach, candidates)
    d2 = df * df
    scores = np.array([d2[np.abs(f - lam) <= reach].min() if np.any(np.abs(f - lam) <= reach) else 0.0
                       for lam in lams])
    best = scores.max()
    if best <= 1e-14:
        raise WindowSelectionError("no candidate value with positive derivative margin")
    ties = np.flatnonzero(scores >= best * (1.0 - 1e-9))
    i = ties[np.argmin(np.abs(lams[ties]))]
    lam = float(lams[i])
    return SpectralWindow(
        I0=(lo, hi),
        I=(lam - w, lam + w),
        J=(lam - 0.5 * w, lam + 0.5 * w),
        lambda_star=lam,
        rho=float(best * (1.0 - margin)),
        width=float(w),
        derivative_floor=float(math.sqrt(best)),
    )


def symbol_mourre_check(v: AngleTimeSymbol, window: SpectralWindow, grid: int = 16384) -> dict:
    """Pointwise ``g_I(f)^2 f'^2 >= rho g_I(f)^2`` on the unit-action circle.

    Returns the largest admissible ``rho`` on the grid and the smallest
    margin at ``window.rho``; raises :class:`MourreFailure` if even
    ``window.rho / 2`` fails.
    """
    if grid < 10_000:
        raise ValueError("symbol_mourre_check needs at least 1e4 grid points")
    theta = 2.0 * np.pi * np.arange(grid) / grid
    f, df = angular_profile(v, theta)
    g2 = window.g_I(f) ** 2
    lhs = g2 * df * df
    live = g2 > 0
    rho_max = float(np.min(df[live] ** 2)) if live.any() else math.inf
    margin = float(np.min(lhs - window.rho * g2))
    if np.any(lhs - 0.5 * window.rho * g2 < 0):
        bad = int(np.argmin(lhs - 0.5 * window.rho * g2))
        raise MourreFailure(
            f"positivity fails at theta={theta[bad]:.6f}: g^2 f'^2 = {lhs[bad]:.3e} < rho/2 g^2 = {0.5 * window.rho * g2[bad]:.3e}"
        )
    return {"rho": rho_max, "min_margin": margin, "points": grid, "holds": margin >= 0.0}


def structural_term(v: AngleTimeSymbol) -> dict:
    """Symbols in ``{<v>, a} = {<v>, h0}^2 + w`` with ``w = {<v>, {<v>, h0}} h0``."""
    avg = _averaged(v)
    b = poisson_bracket_h0(avg)
    a = _times_action(b)
    w = _times_action(poisson_bracket(avg, b))
    return {"lhs": poisson_bracket(avg, a), "square": b.multiply(b), "w": w}


def structural_residuals(v: AngleTimeSymbol, actions=None, theta_points: int = 257) -> dict:
    """Grid check of the identity and of ``w = 0`` for ``I > 1/2``."""
    parts = structural_term(v)
    actions = np.concatenate([np.linspace(0.26, 0.49, 12), np.linspace(0.5, 50.0, 40)]) if actions is None else actions
    th = 2.0 * np.pi * np.arange(theta_points) / theta_points
    T, I = np.meshgrid(th, np.asarray(actions, dtype=float), indexing="ij")
    lhs = parts["lhs"].evaluate_action_angle(0.0, T, I)
    sq = parts["square"].evaluate_action_angle(0.0, T, I)
    w = parts["w"].evaluate_action_angle(0.0, T, I)
    outer = I > 0.5
    return {
        "identity": float(np.max(np.abs(lhs - sq - w))),
        "w_outer": float(np.max(np.abs(w[outer]))) if outer.any() else 0.0,
        "w_inner": float(np.max(np.abs(w[~outer]))) if (~outer).any() else 0.0,
    }


# ---------------------------------------------------------------------------
# matrix level
# ---------------------------------------------------------------------------


def _filter_matrix(lam, U, g):
    return (U * g(lam)) @ U.conj().T


def matrix_mourre_diagnostic(v: AngleTimeSymbol, window: SpectralWindow | None = None, sizes=(256, 512, 1024),
                             eps: float = 1e-3, rho_factor: float = 0.5, pad: int = 8,
                             return_spectra: bool = False) -> dict:
    """Negative spectrum of ``Q = g(H) i[H, A] g(H) - rho' g(H)^2`` as ``N`` doubles.

    ``H`` and ``A`` are built on a basis padded by ``pad`` modes so that the
    truncated commutator is exact on the retained block.
    """
    window = window or regular_value_select(v)
    rho_p = rho_factor * window.rho
    counts, minima, spectra = {}, {}, {}
    for N in sizes:
        big = HermiteBasis(N + pad)
        Hb = effective_hamiltonian(v, big)
        Ab = conjugate_operator(v, big)
        C = commutator(Hb, Ab).dense()[:N, :N]
        H = Hb.dense()[:N, :N]
        lam, U = np.linalg.eigh(0.5 * (H + H.conj().T))
        G = _filter_matrix(lam, U, window.g_I)
        Q = G @ C @ G - rho_p * (G @ G)
        q = np.linalg.eigvalsh(0.5 * (Q + Q.conj().T))
        counts[N] = int(np.sum(q < -eps))
        minima[N] = float(q.min())
        if return_spectra:
            spectra[N] = q
    vals = [counts[N] for N in sizes]
    stable = all(abs(b - a) <= 2 for a, b in zip(vals, vals[1:]))
    report = {
        "rho_prime": rho_p,
        "negative_counts": counts,
        "min_eigenvalues": minima,
        "stable": stable,
        "window": window.to_json(),
    }
    if return_spectra:
        report["spectra"] = spectra
    return report


def spectral_filter(M: OperatorMatrix, g, u: StateVector, eig=None) -> StateVector:
    """``U g(Lambda) U* u``; raises :class:`EmptySpectralWindow` when the result vanishes."""
    if eig is None:
        D = M.dense()
        if np.max(np.abs(D - D.conj().T)) > 1e-10:
            raise ValueError("spectral_filter needs a Hermitian matrix")
        eig = np.linalg.eigh(0.5 * (D + D.conj().T))
    lam, U = eig
    out = U @ (g(lam) * (U.conj().T @ u.coefficients))
    if np.linalg.norm(out) < 1e-12:
        raise EmptySpectralWindow("empty spectral window: g vanishes on the spectrum seen by the state")
    return StateVector(out, u.basis)


# ---------------------------------------------------------------------------
# Weyl sequences
# ---------------------------------------------------------------------------


def _value_at(v: AngleTimeSymbol, q, p):
    return np.real(v.evaluate_cartesian(0.0, np.asarray(q, dtype=float), np.asarray(p, dtype=float)))


def weyl_sequence_test(v: AngleTimeSymbol, lam: float, points, nodes: int = 64, matrix_size: int | None = None) -> dict:
    """Gaussian averages ``(1/pi) int (v(z + w) - lam)^2 e^{-|w|^2} dw`` along ``points``.

    Tensor Gauss-Hermite quadrature in both variables.  For ``lam`` inside
    the hull of ``I0`` the sequence must approach ``lam``; outside, the values
    are reported as a lower bound.  ``matrix_size`` adds the cross-check
    ``||(Opw(v) - lam) Phi_z||`` with coherent states.
    """
    v0 = v if v.is_time_independent() else v.at_time(0.0)
    lo, hi = symbol_range(v0)
    inside = lo - 1e-12 <= lam <= hi + 1e-12
    pts = [tuple(map(float, z)) for z in points]
    gaps = [abs(float(_value_at(v0, q, p)) - lam) for q, p in pts]
    if inside and gaps[-1] > gaps[0] + 1e-12:
        raise WeylSequenceError(f"sequence does not approach {lam}: |v(z_j) - lam| = {gaps}")
    x, w = np.polynomial.hermite.hermgauss(nodes)
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w) / math.pi
    values = []
    for q, p in pts:
        vals = _value_at(v0, X + q, Y + p)
        values.append(float(np.sum(W * (vals - lam) ** 2)))
    report = {
        "lambda": lam,
        "I0": [lo, hi],
        "inside": inside,
        "points": [list(z) for z in pts],
        "values": values,
        "strictly_decreasing": all(b < a for a, b in zip(values, values[1:])),
        "min_value": min(values),
        "verdict": "approximate eigenvalue" if inside else "not in essential spectrum",
    }
    if matrix_size:
        basis = HermiteBasis(matrix_size)
        M = weyl_quantize(v0, basis).dense() - lam * np.eye(matrix_size)
        res = []
        for q, p in pts:
            cs = coherent_state((q, p), basis)
            res.append(float(np.linalg.norm(M @ cs.coefficients)))
        report["matrix_residuals"] = res
        report["matrix_decreasing"] = all(b < a for a, b in zip(res, res[1:]))
    return report


def spectrum_report(v: AngleTimeSymbol, sizes=(256, 512, 1024)) -> dict:
    """JSON-ready summary: ``I0``, window, Mourre counts and residuals."""
    verdict = is_transporter(v)
    window = regular_value_select(v)
    sym = symbol_mourre_check(v, window)
    mat = matrix_mourre_diagnostic(v, window, sizes)
    return {
        "I0": list(window.I0),
        "lambda_star": window.lambda_star,
        "rho": window.rho,
        "negative_counts": mat["negative_counts"],
        "residuals": {"symbol_min_margin": sym["min_margin"], **structural_residuals(v)},
        "transporter": verdict.verdict,
    }
