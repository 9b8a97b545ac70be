"""Weighted derivative seminorms and the Frechet distance on symbol classes.

Cartesian derivatives are taken exactly.  Writing ``w = x + i xi = r e^{i phi}``
a term ``e^{i k phi} g(r)`` obeys

    d_w    (g e^{ik phi}) = 1/2 e^{i(k-1) phi} (g' + k g / r)
    d_wbar (g e^{ik phi}) = 1/2 e^{i(k+1) phi} (g' - k g / r)

with ``d_x = d_w + d_wbar`` and ``d_xi = i (d_w - d_wbar)``.  Radial parts are
kept as sums of ``r^p rho^(q)(r^2 / 2)``, closed under ``d/dr`` and ``1/r``.
The supremum over ``(t, x, xi)`` is taken on a finite grid, so the values are
lower bounds of the true seminorms.
"""

from __future__ import annotations

import math
from collections import defaultdict

import numpy as np

from .symbols import AngleTimeSymbol

__all__ = ["seminorm", "distance", "seminorm_table"]

# polar angle phi of w = x + i xi relates to theta by phi = pi/2 - theta


def _initial(symbol: AngleTimeSymbol) -> dict:
    F: dict = defaultdict(lambda: defaultdict(complex))
    for (m, n, prof), c in symbol.items():
        # e^{in theta} = i^n e^{-in phi}
        F[(m, -n, prof)][(0, 0)] += c * (1j**n)
    return F


def _d_radial(g: dict) -> dict:
    out: dict = defaultdict(complex)
    for (p, q), c in g.items():
        if p:
            out[(p - 1, q)] += p * c
        out[(p + 1, q + 1)] += c
    return out


def _wirtinger(F: dict, sign: int) -> dict:
    """``sign=+1``: d_w, ``sign=-1``: d_wbar."""
    out: dict = defaultdict(lambda: defaultdict(complex))
    for (m, k, prof), g in F.items():
        dg = _d_radial(g)
        tgt = out[(m, k - sign, prof)]
        for key, c in dg.items():
            tgt[key] += 0.5 * c
        if k:
            for (p, q), c in g.items():
                tgt[(p - 1, q)] += 0.5 * sign * k * c
    return out


def _combine(A: dict, B: dict, a: complex, b: complex) -> dict:
    out: dict = defaultdict(lambda: defaultdict(complex))
    for src, coef in ((A, a), (B, b)):
        for key, g in src.items():
            tgt = out[key]
            for rk, c in g.items():
                tgt[rk] += coef * c
    # prune exact cancellations to keep the algebra small
    pruned: dict = defaultdict(lambda: defaultdict(complex))
    for key, g in out.items():
        for rk, c in g.items():
            if c != 0:
                pruned[key][rk] = c
    return pruned


def _dx(F):
    return _combine(_wirtinger(F, 1), _wirtinger(F, -1), 1.0, 1.0)


def _dxi(F):
    return _combine(_wirtinger(F, 1), _wirtinger(F, -1), 1j, -1j)


def _default_actions(i_max: float) -> np.ndarray:
    glue = np.linspace(0.25, 0.5, 41)
    tail = np.logspace(math.log10(0.5), math.log10(i_max), 48)
    return np.unique(np.concatenate([glue, tail, np.linspace(0.5, 4.0, 15)]))


class _Evaluator:
    def __init__(self, symbol: AngleTimeSymbol, actions, max_order: int):
        self.actions = np.asarray(actions, dtype=float)
        self.r = np.sqrt(2.0 * self.actions)
        self.jets = {}
        for _, _, prof in symbol:
            if prof not in self.jets:
                jet = prof.jet(self.actions, max_order)
                self.jets[prof] = jet * np.array([math.factorial(q) for q in range(max_order + 1)])[:, None]

    def radial(self, prof, g: dict) -> np.ndarray:
        jet = self.jets[prof]
        out = np.zeros(self.r.shape, dtype=complex)
        for (p, q), c in g.items():
            out += c * self.r**p * jet[q]
        return out


def seminorm_table(symbol: AngleTimeSymbol, j: int, k: int = 0, rho: float = 0.0, i_max: float = 1e4,
                   actions=None, t_points: int | None = None, phi_points: int | None = None) -> np.ndarray:
    """Grid suprema ``S[a, b, l]`` of ``|d_x^a d_xi^b d_t^l f|`` times the order weight."""
    actions = _default_actions(i_max) if actions is None else np.asarray(actions, dtype=float)
    ev = _Evaluator(symbol, actions, j)
    mmax = max((abs(m) for m, _, _ in symbol), default=0)
    kmax = max((abs(n) for _, n, _ in symbol), default=0) + j
    t_points = t_points or (8 * mmax + 16 if mmax else 1)
    phi_points = phi_points or (8 * kmax + 32)
    t = 2.0 * np.pi * np.arange(t_points) / t_points
    phi = 2.0 * np.pi * np.arange(phi_points) / phi_points
    base_weight = 1.0 + ev.r**2

    table = np.zeros((j + 1, j + 1, k + 1))
    # derivative tree: rows by alpha, each extended in beta
    row = _initial(symbol)
    for a in range(j + 1):
        F = row
        for b in range(j + 1 - a):
            if F:
                keys = list(F.keys())
                ms = sorted({key[0] for key in keys})
                ks = sorted({key[1] for key in keys})
                G = np.zeros((len(ms), len(ks), ev.r.size), dtype=complex)
                for key in keys:
                    G[ms.index(key[0]), ks.index(key[1])] += ev.radial(key[2], F[key])
                Ephi = np.exp(1j * np.outer(ks, phi))
                weight = base_weight ** ((a + b) / 2.0 - rho)
                for ell in range(k + 1):
                    Et = np.exp(1j * np.outer(t, ms)) * (1j * np.array(ms, dtype=float)) ** ell
                    vals = np.einsum("tm,mkr,kf->tfr", Et, G, Ephi, optimize=True)
                    table[a, b, ell] = float(np.max(np.abs(vals) * weight))
            if b < j - a:
                F = _dxi(F)
        if a < j:
            row = _dx(row)
    return table


def seminorm(symbol: AngleTimeSymbol, j: int, k: int = 0, rho: float = 0.0, i_max: float = 1e4, **grid) -> float:
    """``sum_{a+b<=j, l<=k} sup |d_x^a d_xi^b d_t^l f| / (1+x^2+xi^2)^(rho-(a+b)/2)``."""
    table = seminorm_table(symbol, j, k, rho, i_max, **grid)
    total = 0.0
    for a in range(j + 1):
        for b in range(j + 1 - a):
            total += table[a, b, :].sum()
    return float(total)


def distance(v: AngleTimeSymbol, w: AngleTimeSymbol, k: int = 0, rho: float = 0.0, j_max: int = 16,
             i_max: float = 1e4, **grid) -> float:
    """``sum_{j<=j_max} 2^-j p_j / (1 + p_j)`` of ``v - w``; the tail beyond is below ``2^-j_max``."""
    diff = v - w
    if len(diff) == 0:
        return 0.0
    table = seminorm_table(diff, j_max, k, rho, i_max, **grid)
    total = 0.0
    for j in range(j_max + 1):
        p = sum(table[a, b, :].sum() for a in range(j + 1) for b in range(j + 1 - a))
        total += 2.0**-j * p / (1.0 + p)
    return float(total)
