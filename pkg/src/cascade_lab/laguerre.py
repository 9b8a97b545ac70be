"""Radial integrals of normalized Laguerre functions against action profiles.

The diagonal band ``n`` of a Weyl-quantized harmonic ``exp(i n theta) rho(I)``
is a list of integrals

    R_j = int_0^inf rho(s / 4) l_j^(d)(s) ds,     d = |n|,

with the orthonormal functions
``l_j^(d)(s) = sqrt(j! / (j+d)!) s^(d/2) exp(-s/2) L_j^(d)(s)``.
When ``rho`` is eventually constant the integral splits into a closed form
moment of ``l_j`` plus a compactly supported remainder, which is integrated
with Gauss-Legendre panels in ``u = sqrt(s)``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import gammaln

from .profiles import ActionWeighted, RadialProfile

__all__ = [
    "laguerre_functions",
    "laguerre_moments",
    "action_moments",
    "radial_moments",
    "QuadratureNotConverged",
]

_RESCALE = 1e150
_LOG_RESCALE = math.log(_RESCALE)


class QuadratureNotConverged(RuntimeError):
    """Raised when node doubling moves a radial integral by more than ``tol``."""


def laguerre_functions(d: int, count: int, s) -> np.ndarray:
    """Values ``l_j^(d)(s)`` for ``j < count``, shape ``(count, len(s))``.

    Small arguments only; use :func:`_laguerre_dot` for large ``s``.
    """
    s = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.zeros((count, s.size))
    with np.errstate(divide="ignore"):
        out[0] = np.exp(0.5 * d * np.log(s) - 0.5 * s - 0.5 * gammaln(d + 1.0))
    if d == 0:
        out[0] = np.exp(-0.5 * s)
    for j in range(count - 1):
        prev = out[j - 1] if j > 0 else 0.0
        out[j + 1] = ((2 * j + d + 1 - s) * out[j] - math.sqrt(j * (j + d)) * prev) / math.sqrt(
            (j + 1) * (j + 1 + d)
        )
    return out


def _laguerre_dot(d: int, count: int, s: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """``sum_i weights_i l_j^(d)(s_i)`` for ``j < count`` with a log-scaled recurrence."""
    s = np.asarray(s, dtype=float)
    weights = np.asarray(weights)
    with np.errstate(divide="ignore"):
        log0 = 0.5 * d * np.log(s) - 0.5 * s - 0.5 * gammaln(d + 1.0)
    if d == 0:
        log0 = -0.5 * s
    scale = log0.copy()
    cur = np.ones_like(s)
    prev = np.zeros_like(s)
    out = np.zeros(count, dtype=np.result_type(weights, float))
    for j in range(count):
        with np.errstate(under="ignore"):
            out[j] = np.dot(weights, cur * np.exp(scale))
        if j + 1 == count:
            break
        nxt = ((2 * j + d + 1 - s) * cur - math.sqrt(j * (j + d)) * prev) / math.sqrt(
            (j + 1) * (j + 1 + d)
        )
        prev, cur = cur, nxt
        big = np.abs(cur) > _RESCALE
        if big.any():
            cur[big] /= _RESCALE
            prev[big] /= _RESCALE
            scale[big] += _LOG_RESCALE
    return out


def laguerre_moments(d: int, count: int) -> np.ndarray:
    """Closed form ``F_j = int_0^inf l_j^(d)(s) ds`` for ``j < count``.

    From the generating function ``(1-t)^(-d/2) (1+t)^(-d/2-1)`` of the
    unnormalized moments.
    """
    f = np.zeros(count)
    f[0] = 1.0
    if count > 1:
        f[1] = -1.0
    for j in range(1, count - 1):
        f[j + 1] = (-f[j] + (d + j) * f[j - 1]) / (j + 1)
    j = np.arange(count)
    a = 0.5 * d
    log_pref = 0.5 * (gammaln(j + 1.0) - gammaln(j + d + 1.0)) + gammaln(a + 1.0) + (a + 1.0) * math.log(2.0)
    return f * np.exp(log_pref)


def action_moments(d: int, count: int) -> np.ndarray:
    """``G_j = int_0^inf (s/4) l_j^(d)(s) ds`` from the three-term recurrence."""
    F = laguerre_moments(d, count + 1)
    j = np.arange(count)
    upper = np.sqrt((j + 1.0) * (j + 1.0 + d)) * F[1 : count + 1]
    lower = np.zeros(count)
    lower[1:] = np.sqrt(j[1:] * (j[1:] + d + 0.0)) * F[: count - 1]
    return 0.25 * ((2 * j + d + 1.0) * F[:count] - upper - lower)


def _panels(edges, transitions, width, refine, plain_nodes=20, glue_nodes=24):
    """Gauss-Legendre nodes/weights on ``[edges[i], edges[i+1]]`` segments."""
    xs, ws = [], []
    for a, b, glue in zip(edges[:-1], edges[1:], transitions):
        if b <= a:
            continue
        pieces = max(1, math.ceil((b - a) / width))
        nodes = plain_nodes
        if glue:
            pieces = max(pieces, 4)
            nodes = glue_nodes
        pieces *= refine
        x, w = np.polynomial.legendre.leggauss(nodes)
        h = (b - a) / pieces
        for p in range(pieces):
            lo = a + p * h
            xs.append(lo + 0.5 * h * (x + 1.0))
            ws.append(0.5 * h * w)
    return np.concatenate(xs), np.concatenate(ws)


def _split(profile: RadialProfile, d: int, count: int):
    """Return (closed-form part, remainder function of s, upper s limit)."""
    if isinstance(profile, ActionWeighted):
        base = profile.base
        if base.tail_value is not None and math.isfinite(base.flat_from):
            c = base.tail_value
            return (
                c * action_moments(d, count) if c else np.zeros(count),
                lambda s: 0.25 * s * (base(0.25 * s) - c),
                4.0 * base.flat_from,
            )
    elif profile.tail_value is not None and math.isfinite(profile.flat_from):
        c = profile.tail_value
        return (
            c * laguerre_moments(d, count) if c else np.zeros(count),
            lambda s: profile(0.25 * s) - c,
            4.0 * profile.flat_from,
        )
    nu = 4.0 * count + 2.0 * d + 2.0
    upper = nu + 30.0 * nu ** (1.0 / 3.0) + 80.0
    return np.zeros(count), lambda s: profile(0.25 * s), upper


def _remainder_integral(profile, d, count, func, upper, refine):
    if upper <= 0.0:
        return np.zeros(count)
    nu = 4.0 * count + 2.0 * d + 2.0
    width = 2.0 * math.pi / math.sqrt(nu)
    bp_set = {4.0 * b for b in profile.breakpoints if 0.0 < 4.0 * b <= upper}
    edges_s = sorted(bp_set | {0.0, upper})
    edges = [math.sqrt(e) for e in edges_s]
    # a segment is glue when it ends on a breakpoint at both sides
    glue = [edges_s[i] in bp_set and edges_s[i + 1] in bp_set for i in range(len(edges_s) - 1)]
    u, w = _panels(edges, glue, width, refine)
    s = u * u
    weights = w * 2.0 * u * func(s)
    return _laguerre_dot(d, count, s, weights)


def radial_moments(profile: RadialProfile, d: int, count: int, refine: int = 1) -> np.ndarray:
    """``int_0^inf rho(s/4) l_j^(d)(s) ds`` for ``j < count``."""
    if count <= 0:
        return np.zeros(0)
    closed, func, upper = _split(profile, d, count)
    return closed + _remainder_integral(profile, d, count, func, upper, refine)


def radial_moments_checked(profile: RadialProfile, d: int, count: int, tol: float = 1e-10):
    """Radial moments plus a node-doubling error estimate; raises if above ``tol``."""
    coarse = radial_moments(profile, d, count, refine=1)
    fine = radial_moments(profile, d, count, refine=2)
    err = float(np.max(np.abs(fine - coarse))) if count else 0.0
    if err > tol:
        raise QuadratureNotConverged(
            f"radial quadrature for band {d} moved by {err:.3e} > tol {tol:.1e} under node doubling"
        )
    return fine, err
