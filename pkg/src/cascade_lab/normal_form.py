"""Homological equation and the first averaging step of the normal form.

In the frame rotating with the harmonic flow a symbol term
``c e^{imt} e^{in theta} rho`` oscillates as ``e^{i(m+n)t}``.  Terms with
``m + n = 0`` are resonant and survive averaging; the others are removed by
the generator ``chi`` with ``d_t chi = v_rot - <v>``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad_vec

from .quantization import HermiteBasis, OperatorMatrix, weyl_quantize
from .symbols import AngleTimeSymbol

__all__ = [
    "FourierOperatorFamily",
    "homological_solve",
    "integrate_family",
    "rotating_frame",
    "resonant_decompose",
    "verify_reconstruction",
    "first_step_effective",
]


@dataclass(frozen=True)
class FourierOperatorFamily:
    """``H(t) = sum_m e^{imt} H_m`` on a common basis, period ``2 pi``."""

    harmonics: Mapping[int, OperatorMatrix]

    def __post_init__(self):
        if not self.harmonics:
            raise ValueError("family needs at least one harmonic")
        sizes = {M.N for M in self.harmonics.values()}
        if len(sizes) != 1:
            raise ValueError("harmonics live on different bases")
        object.__setattr__(self, "harmonics", dict(sorted(self.harmonics.items())))

    @property
    def N(self) -> int:
        return next(iter(self.harmonics.values())).N

    @property
    def basis(self) -> HermiteBasis:
        return next(iter(self.harmonics.values())).basis

    @classmethod
    def from_symbol(cls, v: AngleTimeSymbol, basis: HermiteBasis, rotating: bool = True) -> "FourierOperatorFamily":
        """Quantized time harmonics of ``v``, or of ``v`` in the rotating frame."""
        sym = rotating_frame(v) if rotating else v
        harmonics = {m: weyl_quantize(sym.time_harmonic(m), basis) for m in sorted(sym.time_harmonics)}
        if not harmonics:
            harmonics = {0: weyl_quantize(AngleTimeSymbol.zero(), basis)}
        return cls(harmonics)

    def at(self, t: float) -> OperatorMatrix:
        items = list(self.harmonics.items())
        m0, M0 = items[0]
        acc = np.exp(1j * m0 * t) * M0.sparse()
        for m, M in items[1:]:
            acc = acc + np.exp(1j * m * t) * M.sparse()
        return OperatorMatrix(sp.csr_array(acc), M0.basis)

    def derivative_at(self, t: float) -> OperatorMatrix:
        acc = sp.csr_array((self.N, self.N), dtype=complex)
        for m, M in self.harmonics.items():
            if m:
                acc = acc + (1j * m * np.exp(1j * m * t)) * M.sparse()
        return OperatorMatrix(acc, self.basis)

    def average(self) -> OperatorMatrix:
        if 0 in self.harmonics:
            return self.harmonics[0]
        return OperatorMatrix(sp.csr_array((self.N, self.N), dtype=complex), self.basis)

    def selfadjoint_defect(self) -> float:
        """``max_m ||H_{-m} - H_m^*||``; zero exactly when every ``H(t)`` is Hermitian."""
        worst = 0.0
        for m, M in self.harmonics.items():
            partner = self.harmonics.get(-m)
            if partner is None:
                worst = max(worst, M.max_abs())
            else:
                worst = max(worst, float(abs(partner.sparse() - M.sparse().conj().T).max()) if M.N else 0.0)
        return worst


def homological_solve(H: FourierOperatorFamily) -> FourierOperatorFamily:
    """``X(t) = int_0^t (H(s) - avg H) ds`` harmonic by harmonic, so ``X(0) = 0``."""
    X = {}
    for m, M in H.harmonics.items():
        if m:
            X[m] = M * (1.0 / (1j * m))
    zero = sp.csr_array((H.N, H.N), dtype=complex)
    acc = zero
    for M in X.values():
        acc = acc - M.sparse()
    X[0] = OperatorMatrix(sp.csr_array(acc), H.basis)
    return FourierOperatorFamily(X)


def integrate_family(H: FourierOperatorFamily, t: float, epsabs: float = 1e-13) -> np.ndarray:
    """Adaptive quadrature of ``int_0^t (H(s) - avg H) ds`` as a dense matrix."""
    avg = H.average().dense()
    out, _ = quad_vec(lambda s: H.at(s).dense() - avg, 0.0, t, epsabs=epsabs, epsrel=1e-13)
    return out


def rotating_frame(v: AngleTimeSymbol) -> AngleTimeSymbol:
    """``v(t, theta + t)``: the term ``(m, n)`` moves to time index ``m + n``."""
    return AngleTimeSymbol([((m + n, n, p), c) for (m, n, p), c in v.items()])


def resonant_decompose(v: AngleTimeSymbol, normalize: bool = True) -> dict:
    """Split the rotating-frame symbol into its resonant part and the generator ``chi``.

    ``chi`` has coefficient ``c / (i(m+n))`` at time index ``m + n``.  With
    ``normalize`` a time-independent part is added so that ``chi(0) = 0``,
    matching :func:`homological_solve`.
    """
    resonant = []
    chi = []
    for (m, n, p), c in v.items():
        w = m + n
        if w == 0:
            resonant.append(((0, n, p), c))
        else:
            coef = c / (1j * w)
            chi.append(((w, n, p), coef))
            if normalize:
                chi.append(((0, n, p), -coef))
    return {"resonant": AngleTimeSymbol(resonant), "chi": AngleTimeSymbol(chi)}


def verify_reconstruction(v: AngleTimeSymbol, t_points: int = 17, theta_points: int = 33,
                          actions=(0.3, 0.4, 1.0, 3.0)) -> float:
    """Grid residual of ``v(t, theta + t) = <v>(theta) + d_t chi(t, theta)``."""
    parts = resonant_decompose(v)
    res, chi_t = parts["resonant"], parts["chi"].d_time()
    t = np.linspace(0.0, 2.0 * np.pi, t_points, endpoint=False)
    th = np.linspace(0.0, 2.0 * np.pi, theta_points, endpoint=False)
    T, TH, I = np.meshgrid(t, th, np.asarray(actions, dtype=float), indexing="ij")
    lhs = v.evaluate_action_angle(T, TH + T, I)
    rhs = res.evaluate_action_angle(T, TH, I) + chi_t.evaluate_action_angle(T, TH, I)
    return float(np.max(np.abs(lhs - rhs)))


def _exp_hermitian(X: np.ndarray, s: float) -> np.ndarray:
    lam, U = np.linalg.eigh(X)
    return (U * np.exp(1j * s * lam)) @ U.conj().T


def first_step_effective(v: AngleTimeSymbol, basis: HermiteBasis, times=None, fraction: float = 0.9,
                         lie_nodes: int = 8) -> dict:
    """First averaging step on the matrix level.

    ``H1`` is the average of ``V_I(t) = Opw(v_rot(t))``, equal to the
    quantized resonant average.  With ``X`` from :func:`homological_solve`,
    the gauge ``phi = e^{iX} psi`` turns ``V_I`` into

        e^{iX} V_I e^{-iX} - int_0^1 e^{isX} X' e^{-isX} ds = H1 + R1(t),

    and ``R1`` is reported both exactly and through its first Lie term
    ``(i/2)[X, V_I + H1]``, relative to ``||V_I(t)||`` on the interior block.
    """
    family = FourierOperatorFamily.from_symbol(v, basis, rotating=True)
    H1 = family.average()
    X = homological_solve(family)
    times = np.linspace(0.0, 2.0 * np.pi, 5, endpoint=False) + 0.3 if times is None else np.asarray(times)
    k = basis.interior(fraction)
    nodes, weights = np.polynomial.legendre.leggauss(lie_nodes)
    nodes, weights = 0.5 * (nodes + 1.0), 0.5 * weights
    samples = []
    Hd = H1.dense()
    for t in times:
        Vt = family.at(t).dense()
        Xt = X.at(t).dense()
        Xt = 0.5 * (Xt + Xt.conj().T)
        dX = Vt - Hd
        E = _exp_hermitian(Xt, 1.0)
        exact = E @ Vt @ E.conj().T - Hd
        for s, w in zip(nodes, weights):
            Es = _exp_hermitian(Xt, s)
            exact -= w * (Es @ dX @ Es.conj().T)
        lie = 0.5j * (Xt @ (Vt + Hd) - (Vt + Hd) @ Xt)
        v_norm = float(np.linalg.norm(Vt[:k, :k], 2))
        samples.append({
            "t": float(t),
            "remainder": float(np.linalg.norm(exact[:k, :k], 2)),
            "lie_term": float(np.linalg.norm(lie[:k, :k], 2)),
            "potential": v_norm,
            "ratio": float(np.linalg.norm(exact[:k, :k], 2) / v_norm) if v_norm else 0.0,
        })
    return {
        "H1": H1,
        "X": X,
        "remainder_report": {
            "samples": samples,
            "max_ratio": max(s["ratio"] for s in samples),
            "selfadjoint_defect": X.selfadjoint_defect(),
        },
    }
