"""Radial profiles rho(I) multiplying the angle-time harmonics of a symbol.

Every profile can be evaluated pointwise and, for the seminorm machinery,
returns Taylor jets ``f^(k)(I) / k!`` up to a requested order.  Jets are
computed with truncated power-series arithmetic, so high derivatives of the
``exp(-1/s)`` glue are exact up to rounding instead of finite differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "RadialProfile",
    "CutoffOne",
    "PowerDecay",
    "CompactBump",
    "Unity",
    "ActionWeighted",
    "ProfileProduct",
    "FunctionProfile",
    "smooth_step",
    "smooth_step_jet",
    "profile_from_json",
]

# transition of the cutoff: identically 0 below, identically 1 above
CUTOFF_START = 0.25
CUTOFF_END = 0.5


# ---------------------------------------------------------------------------
# truncated power series helpers; arrays have shape (order + 1, *points)
# ---------------------------------------------------------------------------


def _series_mul(a, b):
    order = a.shape[0] - 1
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape), dtype=np.result_type(a, b))
    for k in range(order + 1):
        acc = 0.0
        for j in range(k + 1):
            acc = acc + a[j] * b[k - j]
        out[k] = acc
    return out


def _series_exp(f):
    order = f.shape[0] - 1
    g = np.zeros_like(f)
    g[0] = np.exp(f[0])
    for k in range(1, order + 1):
        acc = 0.0
        for j in range(1, k + 1):
            acc = acc + j * f[j] * g[k - j]
        g[k] = acc / k
    return g


def _series_reciprocal(b):
    order = b.shape[0] - 1
    c = np.zeros_like(b)
    c[0] = 1.0 / b[0]
    for k in range(1, order + 1):
        acc = 0.0
        for j in range(1, k + 1):
            acc = acc + b[j] * c[k - j]
        c[k] = -acc / b[0]
    return c


def _rescale_jet(jet, factor):
    """Jet of f(factor * x) from the jet of f at factor * x."""
    powers = factor ** np.arange(jet.shape[0])
    return jet * powers.reshape((-1,) + (1,) * (jet.ndim - 1))


def smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1, ``h(s)/(h(s)+h(1-s))`` between."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0.0) & (s < 1.0)
    si = s[inside]
    phi = 1.0 / (1.0 - si) - 1.0 / si
    out[inside] = 0.5 * (1.0 + np.tanh(0.5 * phi))
    out[s >= 1.0] = 1.0
    return out


def smooth_step_jet(s, order):
    """Taylor coefficients of :func:`smooth_step` at ``s``, shape ``(order+1, *s.shape)``."""
    s = np.asarray(s, dtype=float)
    jet = np.zeros((order + 1,) + s.shape)
    jet[0] = smooth_step(s)
    inside = (s > 0.0) & (s < 1.0)
    if order == 0 or not inside.any():
        return jet
    si = s[inside]
    k = np.arange(order + 1).reshape(-1, 1)
    # phi(s) = 1/(1-s) - 1/s
    phi = (1.0 - si) ** (-k - 1.0) - (-1.0) ** k * si ** (-k - 1.0)
    phi0 = phi[0]
    sub = np.zeros((order + 1, si.size))
    # far from the middle the step is flat to machine precision
    live = np.abs(phi0) < 600.0
    pos = live & (phi0 >= 0)
    neg = live & (phi0 < 0)
    one = np.zeros((order + 1, 1))
    one[0] = 1.0
    if pos.any():
        e = _series_exp(-phi[:, pos])
        sub[:, pos] = _series_reciprocal(one + e)
    if neg.any():
        e = _series_exp(phi[:, neg])
        sub[:, neg] = _series_mul(e, _series_reciprocal(one + e))
    sub[0, ~live] = jet[0][inside][~live]
    jet[:, inside] = sub
    return jet


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------


class RadialProfile:
    """Base class.

    Attributes describe where the profile is simple, which the quantizer uses
    to split radial integrals into a closed-form tail and a compact remainder:

    ``support_start``  profile vanishes for ``I <= support_start``
    ``flat_from``      profile equals ``tail_value`` for ``I >= flat_from``
    ``tail_value``     constant value at infinity, ``None`` if not eventually constant
    """

    kind: str = "abstract"
    support_start: float = 0.0
    flat_from: float = math.inf
    tail_value: float | None = None
    # transition intervals whose interior is hard for quadrature
    breakpoints: tuple[float, ...] = ()

    def __call__(self, action):
        return self.jet(action, 0)[0]

    def jet(self, action, order):  # pragma: no cover - interface
        raise NotImplementedError

    def derivative(self, action, k=1):
        return self.jet(action, k)[k] * math.factorial(k)

    @property
    def homogeneous(self) -> bool:
        return False

    def to_json(self):
        raise TypeError(f"profile {self!r} is not serializable")


@dataclass(frozen=True)
class CutoffOne(RadialProfile):
    """Radial cutoff: 0 for I <= 1/4, 1 for I >= 1/2."""

    kind = "cutoff_one"
    support_start = CUTOFF_START
    flat_from = CUTOFF_END
    tail_value = 1.0
    breakpoints = (CUTOFF_START, CUTOFF_END)

    def jet(self, action, order):
        width = CUTOFF_END - CUTOFF_START
        s = (np.asarray(action, dtype=float) - CUTOFF_START) / width
        return _rescale_jet(smooth_step_jet(s, order), 1.0 / width)

    @property
    def homogeneous(self) -> bool:
        return True

    def to_json(self):
        return "cutoff_one"


@dataclass(frozen=True)
class Unity(RadialProfile):
    """Identically 1, including at the origin; used for true constants in tests."""

    kind = "unity"
    support_start = 0.0
    flat_from = 0.0
    tail_value = 1.0

    def jet(self, action, order):
        action = np.asarray(action, dtype=float)
        out = np.zeros((order + 1,) + action.shape)
        out[0] = 1.0
        return out

    @property
    def homogeneous(self) -> bool:
        return True

    def to_json(self):
        return "unity"


@dataclass(frozen=True)
class PowerDecay(RadialProfile):
    """``(1 + 2I)^(-mu)`` times the cutoff; the lower-order class."""

    mu: float = 1.0
    kind = "power_decay"
    support_start = CUTOFF_START
    flat_from = math.inf
    tail_value = None
    breakpoints = (CUTOFF_START, CUTOFF_END)

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"power_decay needs mu > 0, got {self.mu}")

    def jet(self, action, order):
        action = np.asarray(action, dtype=float)
        base = 1.0 + 2.0 * action
        k = np.arange(order + 1).reshape((-1,) + (1,) * action.ndim)
        # binomial series of (base + 2 eps)^(-mu)
        binom = np.ones(order + 1)
        for j in range(1, order + 1):
            binom[j] = binom[j - 1] * (-self.mu - j + 1) / j
        binom = binom.reshape(k.shape)
        power = binom * (2.0 / base) ** k * base ** (-self.mu)
        return _series_mul(power, CutoffOne().jet(action, order))

    def to_json(self):
        return {"power_decay": self.mu}


@dataclass(frozen=True)
class CompactBump(RadialProfile):
    """Smooth bump supported in 1/4 <= I <= 1, identically 1 on [1/2, 3/4]."""

    kind = "compact_bump"
    support_start = CUTOFF_START
    flat_from = 1.0
    tail_value = 0.0
    breakpoints = (CUTOFF_START, CUTOFF_END, 0.75, 1.0)

    def jet(self, action, order):
        action = np.asarray(action, dtype=float)
        rise = CutoffOne().jet(action, order)
        fall = -_rescale_jet(smooth_step_jet(4.0 * (action - 0.75), order), 4.0)
        fall[0] += 1.0
        return _series_mul(rise, fall)

    def to_json(self):
        return "compact_bump"


@dataclass(frozen=True)
class ActionWeighted(RadialProfile):
    """``I * base(I)``; carries the affine action factor of order-one symbols."""

    base: RadialProfile = CutoffOne()
    kind = "action_weighted"

    @property
    def support_start(self):
        return self.base.support_start

    @property
    def flat_from(self):
        return math.inf

    @property
    def breakpoints(self):
        return self.base.breakpoints

    def jet(self, action, order):
        action = np.asarray(action, dtype=float)
        lin = np.zeros((order + 1,) + action.shape)
        lin[0] = action
        if order >= 1:
            lin[1] = 1.0
        return _series_mul(lin, self.base.jet(action, order))


@dataclass(frozen=True)
class ProfileProduct(RadialProfile):
    """Product of profile derivatives ``prod_i d^{k_i} rho_i``.

    ``factors`` is a tuple of ``(profile, derivative_order)`` pairs.  Arises
    from pointwise products and Poisson brackets of angle-action symbols.
    """

    factors: tuple = ()
    kind = "product"

    @property
    def support_start(self):
        return max((p.support_start for p, _ in self.factors), default=0.0)

    def _derivative_end(self):
        # a differentiated factor vanishes wherever that factor is flat
        ends = [p.flat_from for p, k in self.factors if k > 0 and p.tail_value is not None]
        return min(ends, default=math.inf)

    @property
    def flat_from(self):
        end = self._derivative_end()
        if math.isfinite(end):
            return end
        return max((p.flat_from for p, _ in self.factors), default=0.0)

    @property
    def tail_value(self):
        if math.isfinite(self._derivative_end()):
            return 0.0
        value = 1.0
        for p, _ in self.factors:
            if p.tail_value is None:
                return None
            value *= p.tail_value
        return value

    @property
    def breakpoints(self):
        pts = set()
        for p, _ in self.factors:
            pts.update(p.breakpoints)
        return tuple(sorted(pts))

    def jet(self, action, order):
        action = np.asarray(action, dtype=float)
        out = np.zeros((order + 1,) + action.shape)
        out[0] = 1.0
        for p, k in self.factors:
            full = p.jet(action, order + k)
            # jet of the k-th derivative: coefficient j+k times (j+k)!/j!
            shifted = np.stack(
                [full[j + k] * math.factorial(j + k) / math.factorial(j) for j in range(order + 1)]
            )
            out = _series_mul(out, shifted)
        return out

    @property
    def homogeneous(self) -> bool:
        return all(k == 0 and p.homogeneous for p, k in self.factors)


@dataclass(frozen=True, eq=False)
class FunctionProfile(RadialProfile):
    """Profile given by a vectorized callable; jets beyond order 0 unavailable."""

    func: Callable = None
    support_start: float = 0.0
    flat_from: float = math.inf
    tail_value: float | None = None
    breakpoints: tuple = ()
    label: str = "function"
    kind = "function"

    def jet(self, action, order):
        if order > 0:
            raise NotImplementedError("FunctionProfile has no derivative jets")
        action = np.asarray(action, dtype=float)
        return np.asarray(self.func(action), dtype=float)[None, ...]


def profile_from_json(obj) -> RadialProfile:
    if obj == "cutoff_one":
        return CutoffOne()
    if obj == "compact_bump":
        return CompactBump()
    if obj == "unity":
        return Unity()
    if isinstance(obj, dict) and set(obj) == {"power_decay"}:
        return PowerDecay(float(obj["power_decay"]))
    raise ValueError(f"unknown profile {obj!r}")
