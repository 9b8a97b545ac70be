"""Classical symbols as finite Fourier series in time and angle.

A symbol is stored as a map ``(m, n, profile) -> c`` and means

    v(t, x, xi) = sum c * exp(i m t) * exp(i n theta) * profile(I)

in action-angle coordinates ``x = sqrt(2I) sin(theta)``,
``xi = sqrt(2I) cos(theta)``.  With this convention the harmonic oscillator
flow is ``theta -> theta + t`` and the bracket with ``h0 = I`` is
``{f, h0} = -d_theta f``.
"""

from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .profiles import (
    CutoffOne,
    ProfileProduct,
    RadialProfile,
    profile_from_json,
)

__all__ = [
    "PhasePoint",
    "ActionAngle",
    "OriginError",
    "IllFormedSymbol",
    "NonHomogeneousWarning",
    "AngleTimeSymbol",
    "PolynomialSymbol",
    "evaluate",
    "harmonic_flow",
    "to_action_angle",
    "from_action_angle",
    "resonant_average",
    "resonant_average_oracle",
    "poisson_bracket_h0",
    "poisson_bracket",
    "is_transporter",
    "TransporterVerdict",
    "standard_perturbation",
    "genericity_perturb",
    "modulation_order",
    "ModulationOrder",
    "verify_modulation_identities",
    "trig_symbol",
]


class OriginError(ValueError):
    """Action-angle coordinates are undefined at the origin."""


class IllFormedSymbol(ValueError):
    """Symbol violates a structural invariant (reality, matching profiles)."""


class NonHomogeneousWarning(UserWarning):
    """A homogeneous-only rule was applied to a symbol with lower-order profiles."""


# ---------------------------------------------------------------------------
# phase space points
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhasePoint:
    x: float
    xi: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.xi)):
            raise ValueError("phase point coordinates must be finite")


@dataclass(frozen=True)
class ActionAngle:
    theta: float
    action: float

    def __post_init__(self):
        if self.action < 0:
            raise ValueError("action must be nonnegative")
        theta = float(self.theta) % (2.0 * math.pi)
        # a tiny negative angle rounds up to exactly 2 pi
        object.__setattr__(self, "theta", 0.0 if theta == 2.0 * math.pi else theta)


def to_action_angle(p: PhasePoint) -> ActionAngle:
    if p.x == 0.0 and p.xi == 0.0:
        raise OriginError("action-angle coordinates are undefined at the origin")
    return ActionAngle(math.atan2(p.x, p.xi), 0.5 * (p.x * p.x + p.xi * p.xi))


def from_action_angle(a: ActionAngle) -> PhasePoint:
    r = math.sqrt(2.0 * a.action)
    return PhasePoint(r * math.sin(a.theta), r * math.cos(a.theta))


def harmonic_flow(p: PhasePoint, tau: float) -> PhasePoint:
    """Hamiltonian flow of ``(x^2 + xi^2) / 2`` for time ``tau``."""
    c, s = math.cos(tau), math.sin(tau)
    return PhasePoint(p.x * c + p.xi * s, -p.x * s + p.xi * c)


def _flow_arrays(x, xi, tau):
    c, s = np.cos(tau), np.sin(tau)
    return x * c + xi * s, -x * s + xi * c


# ---------------------------------------------------------------------------
# angle-time symbols
# ---------------------------------------------------------------------------


def _canonical_profile(profile: RadialProfile) -> RadialProfile:
    """Flatten nested products so equal profiles share one key."""
    if isinstance(profile, ProfileProduct):
        flat = []
        for p, k in profile.factors:
            if isinstance(p, ProfileProduct) and k == 0:
                flat.extend(_canonical_profile(p).factors)
            else:
                flat.append((_canonical_profile(p), k))
        if len(flat) == 1 and flat[0][1] == 0:
            return flat[0][0]
        return ProfileProduct(tuple(sorted(flat, key=repr)))
    return profile


def _profile_product(a: RadialProfile, b: RadialProfile, ka: int = 0, kb: int = 0) -> RadialProfile:
    return _canonical_profile(ProfileProduct(((a, ka), (b, kb))))


class AngleTimeSymbol:
    """Immutable finite sum ``sum c_{m,n,rho} e^{imt} e^{in theta} rho(I)``."""

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Mapping | Iterable = (), drop_tol: float = 0.0):
        acc: dict = {}
        items = terms.items() if isinstance(terms, Mapping) else terms
        for key, c in items:
            m, n, prof = key
            key = (int(m), int(n), _canonical_profile(prof))
            acc[key] = acc.get(key, 0.0) + complex(c)
        self._terms = {k: v for k, v in acc.items() if abs(v) > drop_tol}
        self._hash = None

    # -- construction helpers ------------------------------------------------
    @classmethod
    def from_coefficients(cls, entries, profile: RadialProfile | None = None):
        """Build from ``(m, n, c)`` or ``(m, n, c, profile)`` tuples."""
        terms = []
        for e in entries:
            prof = e[3] if len(e) > 3 else (profile or CutoffOne())
            terms.append(((e[0], e[1], prof), e[2]))
        return cls(terms)

    @classmethod
    def zero(cls):
        return cls()

    # -- container protocol --------------------------------------------------
    @property
    def terms(self) -> dict:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def __len__(self):
        return len(self._terms)

    def __iter__(self):
        return iter(self._terms)

    def coefficient(self, m: int, n: int, profile: RadialProfile | None = None) -> complex:
        return self._terms.get((m, n, profile or CutoffOne()), 0.0j)

    def __eq__(self, other):
        if not isinstance(other, AngleTimeSymbol):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    def __repr__(self):
        parts = [f"({m},{n},{p.kind}):{c:.6g}" for (m, n, p), c in sorted(self._terms.items(), key=repr)]
        return "AngleTimeSymbol{" + ", ".join(parts) + "}"

    # -- algebra ---------------------------------------------------------------
    def __add__(self, other):
        if not isinstance(other, AngleTimeSymbol):
            return NotImplemented
        return AngleTimeSymbol(list(self._terms.items()) + list(other._terms.items()))

    def __neg__(self):
        return AngleTimeSymbol({k: -c for k, c in self._terms.items()})

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, scalar):
        if isinstance(scalar, AngleTimeSymbol):
            return self.multiply(scalar)
        return AngleTimeSymbol({k: scalar * c for k, c in self._terms.items()})

    __rmul__ = __mul__

    def multiply(self, other: "AngleTimeSymbol") -> "AngleTimeSymbol":
        """Pointwise product."""
        out = []
        for (m1, n1, p1), c1 in self._terms.items():
            for (m2, n2, p2), c2 in other._terms.items():
                out.append(((m1 + m2, n1 + n2, _profile_product(p1, p2)), c1 * c2))
        return AngleTimeSymbol(out)

    def conjugate(self) -> "AngleTimeSymbol":
        return AngleTimeSymbol({(-m, -n, p): np.conj(c) for (m, n, p), c in self._terms.items()})

    def real_part(self) -> "AngleTimeSymbol":
        return 0.5 * (self + self.conjugate())

    # -- structure -------------------------------------------------------------
    def reality_defect(self) -> float:
        """Largest ``|c_{-m,-n} - conj(c_{m,n})|`` over profile-matched pairs."""
        defect = 0.0
        for (m, n, p), c in self._terms.items():
            partner = self._terms.get((-m, -n, p), 0.0)
            defect = max(defect, abs(partner - np.conj(c)))
        return defect

    def is_real(self, tol: float = 1e-12) -> bool:
        return self.reality_defect() <= tol

    @property
    def time_harmonics(self) -> set[int]:
        return {m for m, _, _ in self._terms}

    @property
    def angle_harmonics(self) -> set[int]:
        return {n for _, n, _ in self._terms}

    @property
    def max_harmonic(self) -> int:
        return max((max(abs(m), abs(n)) for m, n, _ in self._terms), default=0)

    def is_time_independent(self) -> bool:
        return all(m == 0 for m, _, _ in self._terms)

    def is_homogeneous(self) -> bool:
        return all(p.homogeneous for _, _, p in self._terms)

    def principal_part(self) -> "AngleTimeSymbol":
        """Degree-zero homogeneous part: the terms carried by the cutoff profile."""
        return AngleTimeSymbol({k: c for k, c in self._terms.items() if k[2].homogeneous})

    def lower_order_part(self) -> "AngleTimeSymbol":
        return self - self.principal_part()

    def time_harmonic(self, m: int) -> "AngleTimeSymbol":
        """Coefficient of ``e^{imt}`` as a time-independent symbol."""
        return AngleTimeSymbol({(0, n, p): c for (mm, n, p), c in self._terms.items() if mm == m})

    def at_time(self, t: float) -> "AngleTimeSymbol":
        """Freeze the time variable."""
        return AngleTimeSymbol({(0, n, p): c * np.exp(1j * m * t) for (m, n, p), c in self._terms.items()})

    def angle_shift(self, tau: float) -> "AngleTimeSymbol":
        """``a o phi^tau`` for a symbol: ``c_n -> c_n e^{i n tau}``."""
        return AngleTimeSymbol({(m, n, p): c * np.exp(1j * n * tau) for (m, n, p), c in self._terms.items()})

    def time_shift(self, s: float) -> "AngleTimeSymbol":
        """``v(t + s, .)``."""
        return AngleTimeSymbol({(m, n, p): c * np.exp(1j * m * s) for (m, n, p), c in self._terms.items()})

    def d_theta(self) -> "AngleTimeSymbol":
        return AngleTimeSymbol({k: 1j * k[1] * c for k, c in self._terms.items()})

    def d_time(self) -> "AngleTimeSymbol":
        return AngleTimeSymbol({k: 1j * k[0] * c for k, c in self._terms.items()})

    def d_action(self) -> "AngleTimeSymbol":
        out = []
        for (m, n, p), c in self._terms.items():
            out.append(((m, n, _canonical_profile(ProfileProduct(((p, 1),)))), c))
        return AngleTimeSymbol(out)

    def angle_bands(self, t: float = 0.0) -> dict:
        """``{(n, profile): coefficient}`` at fixed time, for the quantizer."""
        out: dict = {}
        for (m, n, p), c in self._terms.items():
            out[(n, p)] = out.get((n, p), 0.0) + c * np.exp(1j * m * t)
        return out

    # -- evaluation -----------------------------------------------------------
    def evaluate_action_angle(self, t, theta, action):
        t, theta, action = np.broadcast_arrays(
            np.asarray(t, dtype=float), np.asarray(theta, dtype=float), np.asarray(action, dtype=float)
        )
        out = np.zeros(theta.shape, dtype=complex)
        cache: dict = {}
        for (m, n, p), c in self._terms.items():
            if p not in cache:
                cache[p] = p(action)
            out += c * np.exp(1j * (m * t + n * theta)) * cache[p]
        return out

    def evaluate_cartesian(self, t, x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        theta = np.arctan2(x, xi)
        action = 0.5 * (x * x + xi * xi)
        return self.evaluate_action_angle(t, theta, action)

    # -- serialization --------------------------------------------------------
    def to_json(self) -> dict:
        coeffs = []
        for (m, n, p), c in sorted(self._terms.items(), key=lambda kv: (kv[0][0], kv[0][1], repr(kv[0][2]))):
            coeffs.append({"m": m, "n": n, "re": float(np.real(c)), "im": float(np.imag(c)), "profile": p.to_json()})
        return {"coeffs": coeffs}

    @classmethod
    def from_json(cls, obj, require_real: bool = True, tol: float = 1e-12) -> "AngleTimeSymbol":
        if isinstance(obj, str):
            obj = json.loads(obj)
        terms = []
        for entry in obj["coeffs"]:
            prof = profile_from_json(entry.get("profile", "cutoff_one"))
            c = complex(float(entry.get("re", 0.0)), float(entry.get("im", 0.0)))
            terms.append(((int(entry["m"]), int(entry["n"]), prof), c))
        sym = cls(terms)
        if require_real and not sym.is_real(tol):
            raise IllFormedSymbol(
                f"symbol is not real: coefficient pairs (m,n),(-m,-n) differ from conjugates by "
                f"{sym.reality_defect():.3e}"
            )
        return sym

    def digest(self) -> str:
        """Stable content hash, used in matrix sidecars and manifests."""
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def evaluate(symbol, t: float, p: PhasePoint):
    """Value of ``symbol`` at time ``t`` and phase point ``p``."""
    if isinstance(symbol, PolynomialSymbol):
        return symbol.evaluate(p.x, p.xi)
    value = complex(symbol.evaluate_cartesian(t, p.x, p.xi))
    if symbol.is_real():
        return value.real
    return value


def trig_symbol(cos_coeffs: Mapping[int, float] | None = None, sin_coeffs: Mapping[int, float] | None = None,
                m: int = 0, profile: RadialProfile | None = None, time: str | None = None) -> AngleTimeSymbol:
    """Real symbol ``time_factor * sum a_n cos(n theta) + b_n sin(n theta)``.

    ``time`` is ``None`` (no time factor), ``"cos"`` or ``"sin"`` with frequency ``m``.
    """
    profile = profile or CutoffOne()
    terms = []
    for n, a in (cos_coeffs or {}).items():
        if n == 0:
            terms.append(((0, 0, profile), a))
        else:
            terms += [((0, n, profile), a / 2), ((0, -n, profile), a / 2)]
    for n, b in (sin_coeffs or {}).items():
        if n != 0:
            terms += [((0, n, profile), b / 2j), ((0, -n, profile), -b / 2j)]
    sym = AngleTimeSymbol(terms)
    if time is None or m == 0:
        return sym
    if time == "cos":
        factor = AngleTimeSymbol([((m, 0, profile), 0.5), ((-m, 0, profile), 0.5)])
    elif time == "sin":
        factor = AngleTimeSymbol([((m, 0, profile), 0.5 / 1j), ((-m, 0, profile), -0.5 / 1j)])
    else:
        raise ValueError(f"time factor must be 'cos' or 'sin', got {time!r}")
    # the time factor only carries e^{imt}; keep the angle profile
    out = []
    for (mf, _, _), cf in factor.items():
        for (_, n, p), c in sym.items():
            out.append(((mf, n, p), cf * c))
    return AngleTimeSymbol(out)


# ---------------------------------------------------------------------------
# polynomial test symbols
# ---------------------------------------------------------------------------


class PolynomialSymbol:
    """Polynomial ``sum c_{a,b} x^a xi^b``; test mode only, not a bounded symbol."""

    def __init__(self, coeffs: Mapping[tuple[int, int], complex]):
        self.coeffs = {(int(a), int(b)): complex(c) for (a, b), c in coeffs.items() if c != 0}

    def evaluate(self, x, xi):
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        out = np.zeros(np.broadcast(x, xi).shape, dtype=complex)
        for (a, b), c in self.coeffs.items():
            out = out + c * x**a * xi**b
        if all(abs(c.imag) == 0 for c in self.coeffs.values()):
            return out.real
        return out

    def evaluate_cartesian(self, t, x, xi):
        return self.evaluate(x, xi)

    @property
    def degree(self) -> int:
        return max((a + b for a, b in self.coeffs), default=0)

    def flow(self, tau: float) -> "PolynomialSymbol":
        """``p o phi^tau`` by substituting the rotated coordinates."""
        c, s = math.cos(tau), math.sin(tau)
        # represent polynomials in (x, xi) by 2D coefficient arrays
        deg = self.degree
        out = np.zeros((deg + 1, deg + 1), dtype=complex)
        X = np.zeros((2, 2))
        X[1, 0], X[0, 1] = c, s
        XI = np.zeros((2, 2))
        XI[1, 0], XI[0, 1] = -s, c
        for (a, b), coef in self.coeffs.items():
            term = np.array([[1.0 + 0j]])
            for _ in range(a):
                term = _polymul2d(term, X)
            for _ in range(b):
                term = _polymul2d(term, XI)
            out[: term.shape[0], : term.shape[1]] += coef * term
        return PolynomialSymbol({(i, j): out[i, j] for i in range(deg + 1) for j in range(deg + 1) if out[i, j] != 0})

    @classmethod
    def harmonic_oscillator(cls):
        return cls({(2, 0): 0.5, (0, 2): 0.5})


def _polymul2d(a, b):
    out = np.zeros((a.shape[0] + b.shape[0] - 1, a.shape[1] + b.shape[1] - 1), dtype=complex)
    for i in range(b.shape[0]):
        for j in range(b.shape[1]):
            if b[i, j] != 0:
                out[i : i + a.shape[0], j : j + a.shape[1]] += b[i, j] * a
    return out


# ---------------------------------------------------------------------------
# resonant averaging and brackets
# ---------------------------------------------------------------------------


def resonant_average(symbol: AngleTimeSymbol) -> AngleTimeSymbol:
    """Average of ``v(t, phi^t(x, xi))`` over one period in ``t``.

    The ``(m, n)`` term composed with the flow oscillates as ``e^{i(m+n)t}``,
    so only ``m = -n`` survives, giving the time-independent ``d_n = c_{-n,n}``.
    """
    out = []
    for (m, n, p), c in symbol.items():
        if m + n != 0:
            continue
        partner = (-m, -n)
        kinds = {q.kind for (mm, nn, q) in symbol if (mm, nn) == partner}
        if kinds and p.kind not in kinds:
            raise IllFormedSymbol(
                f"resonant pair ({m},{n}),({-m},{-n}) carries mismatched profiles {p.kind} vs {sorted(kinds)}"
            )
        out.append(((0, n, p), c))
    return AngleTimeSymbol(out)


def resonant_average_oracle(symbol: AngleTimeSymbol, t_nodes: int, theta_nodes: int, action: float = 1.0):
    """Trapezoid average over ``t`` of the flowed symbol on a uniform angle grid.

    Returns ``(theta_grid, values)``.  The flow is applied in Cartesian
    coordinates, independently of the coefficient rule.
    """
    need = 4 * symbol.max_harmonic + 1
    if t_nodes < need or theta_nodes < need:
        raise ValueError(f"resonant_average_oracle needs at least {need} nodes per axis")
    theta = 2.0 * np.pi * np.arange(theta_nodes) / theta_nodes
    t = 2.0 * np.pi * np.arange(t_nodes) / t_nodes
    r = math.sqrt(2.0 * action)
    x0, xi0 = r * np.sin(theta), r * np.cos(theta)
    T, X0 = np.meshgrid(t, x0, indexing="ij")
    _, XI0 = np.meshgrid(t, xi0, indexing="ij")
    X, XI = _flow_arrays(X0, XI0, T)
    vals = symbol.evaluate_cartesian(T, X, XI)
    return theta, vals.mean(axis=0)


def poisson_bracket_h0(symbol: AngleTimeSymbol) -> AngleTimeSymbol:
    """``{f, h0} = -d_theta f`` with ``h0 = (x^2 + xi^2)/2 = I``.

    The rule is exact for every profile because ``h0`` depends on ``I`` only;
    a :class:`NonHomogeneousWarning` flags inputs with lower-order profiles.
    """
    if not symbol.is_homogeneous():
        warnings.warn("poisson_bracket_h0 applied to a non-homogeneous symbol", NonHomogeneousWarning, stacklevel=2)
    return -symbol.d_theta()


def poisson_bracket(f: AngleTimeSymbol, g: AngleTimeSymbol) -> AngleTimeSymbol:
    """``{f, g} = d_I f d_theta g - d_theta f d_I g`` (equal to ``d_xi f d_x g - d_x f d_xi g``)."""
    return f.d_action().multiply(g.d_theta()) - f.d_theta().multiply(g.d_action())


@dataclass(frozen=True)
class TransporterVerdict:
    verdict: bool
    witness_theta: float
    witness_value: float
    rho_bound: float
    coefficient_verdict: bool
    average: AngleTimeSymbol = field(repr=False)

    @property
    def witness(self):
        return (self.witness_theta, self.witness_value)

    @property
    def paths_agree(self) -> bool:
        return self.verdict == self.coefficient_verdict

    def to_json(self):
        return {
            "verdict": self.verdict,
            "witness": {"theta": self.witness_theta, "value": self.witness_value},
            "rho_bound": self.rho_bound,
            "coefficient_verdict": self.coefficient_verdict,
        }


def _transporter_by_coefficients(avg: AngleTimeSymbol, tol: float) -> bool:
    by_n: dict = {}
    for (_, n, _), c in avg.items():
        by_n[n] = by_n.get(n, 0.0) + c
    # the real pair at +-n contributes 2 |n| |d_n| cos(n theta + phase) to d_theta <v0>
    return any(2.0 * abs(n) * abs(c) > tol for n, c in by_n.items() if n != 0)


def is_transporter(v: AngleTimeSymbol, tol: float = 1e-8, grid: int = 1024) -> TransporterVerdict:
    """Test ``{<v0>, h0} != 0`` on the unit-action circle.

    Grid path: max of ``|d_theta <v0>|`` at ``I = 1`` over ``grid`` angles.
    Coefficient path: some resonant amplitude ``2 |n| |d_n|``, ``n != 0``, exceeds ``tol``.
    With several harmonics the two can differ only for ``rho_bound`` within a
    bounded factor of ``tol``.
    """
    if grid < 1024:
        raise ValueError("is_transporter needs at least 1024 angle points")
    avg = resonant_average(v.principal_part())
    bracket = poisson_bracket_h0(avg)
    theta = 2.0 * np.pi * np.arange(grid) / grid
    vals = np.real(bracket.evaluate_action_angle(0.0, theta, 1.0))
    i = int(np.argmax(np.abs(vals)))
    rho_bound = float(abs(vals[i]))
    verdict = rho_bound > tol
    coeff = _transporter_by_coefficients(avg, tol)
    if verdict != coeff:
        warnings.warn("transporter grid and coefficient paths disagree near tol", RuntimeWarning, stacklevel=2)
    return TransporterVerdict(verdict, float(theta[i]), float(vals[i]), rho_bound, coeff, avg)


def standard_perturbation(profile: RadialProfile | None = None) -> AngleTimeSymbol:
    """``cos(2t) eta x xi / (x^2 + xi^2) = cos(2t) sin(2 theta) / 2 * eta``."""
    p = profile or CutoffOne()
    q = 1.0 / 8j
    return AngleTimeSymbol([((2, 2, p), q), ((2, -2, p), -q), ((-2, 2, p), q), ((-2, -2, p), -q)])


def genericity_perturb(v: AngleTimeSymbol, eps0: float) -> AngleTimeSymbol:
    """``v + eps0 * w0`` with ``w0`` from :func:`standard_perturbation`."""
    if eps0 < 0:
        raise ValueError("eps0 must be nonnegative")
    if eps0 == 0:
        return v
    return v + eps0 * standard_perturbation()


# ---------------------------------------------------------------------------
# modulation order of a time-independent symbol
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModulationOrder:
    n: int
    vplus: AngleTimeSymbol
    vminus: AngleTimeSymbol


def _angle_coefficients(vtilde: AngleTimeSymbol) -> dict:
    by: dict = {}
    for (m, n, p), c in vtilde.items():
        by.setdefault(n, []).append((p, c))
    return by


def modulation_order(vtilde: AngleTimeSymbol, tol: float = 1e-12) -> ModulationOrder:
    """Smallest ``n >= 1`` with a nonzero ``+-n`` angular harmonic of ``vtilde``.

    ``vplus`` and ``vminus`` are the cosine and sine moments
    ``(1/2pi) int cos(nt) v(phi^t) dt`` and ``(1/2pi) int sin(nt) v(phi^t) dt``.
    Then ``cos(nt) vtilde`` has resonant average ``vplus``.
    """
    if not vtilde.is_time_independent():
        raise ValueError("modulation_order expects a time-independent symbol")
    by = _angle_coefficients(vtilde)
    candidates = sorted(
        abs(n) for n, lst in by.items() if n != 0 and max(abs(c) for _, c in lst) > tol
    )
    if not candidates:
        raise ValueError("no admissible n: the symbol is constant on the circle")
    n = candidates[0]
    plus, minus = [], []
    for k in (n, -n):
        for p, c in by.get(k, []):
            plus.append(((0, k, p), 0.5 * c))
            # sin moment: (i/2)(d_n e^{in theta} - d_{-n} e^{-in theta})
            minus.append(((0, k, p), 0.5j * c if k == n else -0.5j * c))
    return ModulationOrder(n, AngleTimeSymbol(plus), AngleTimeSymbol(minus))


def _cartesian_partials(symbol: AngleTimeSymbol, x, xi):
    """``(d_x f, d_xi f)`` through the chain rule from ``(theta, I)`` partials."""
    theta = np.arctan2(x, xi)
    action = 0.5 * (x * x + xi * xi)
    r2 = x * x + xi * xi
    f_theta = symbol.d_theta().evaluate_action_angle(0.0, theta, action)
    f_action = symbol.d_action().evaluate_action_angle(0.0, theta, action)
    # theta = atan2(x, xi): d_x theta = xi / r^2, d_xi theta = -x / r^2
    fx = f_theta * xi / r2 + f_action * x
    fxi = -f_theta * x / r2 + f_action * xi
    return fx, fxi


def verify_modulation_identities(vtilde: AngleTimeSymbol, n: int | None = None, tol: float = 1e-10,
                                 points: int = 257, t_nodes: int | None = None) -> dict:
    """Check ``{h0, v_n^+} = n v_n^-`` and ``v_n^- = v_n^+ o phi^{pi/(2n)}`` on a grid.

    ``v_n^+-`` come from a trapezoid quadrature of their defining time
    integrals; the bracket uses Cartesian partial derivatives.
    """
    if n is None:
        n = modulation_order(vtilde).n
    if t_nodes is None:
        t_nodes = 4 * max(vtilde.max_harmonic, n) + 8
    rng = np.random.default_rng(12345)
    theta = rng.uniform(0.0, 2.0 * np.pi, points)
    action = rng.uniform(0.6, 6.0, points)
    r = np.sqrt(2.0 * action)
    x, xi = r * np.sin(theta), r * np.cos(theta)
    ts = 2.0 * np.pi * np.arange(t_nodes) / t_nodes

    def moments(px, pxi):
        plus = np.zeros(px.shape, dtype=complex)
        minus = np.zeros(px.shape, dtype=complex)
        for t in ts:
            fx, fxi = _flow_arrays(px, pxi, t)
            val = vtilde.evaluate_cartesian(0.0, fx, fxi)
            plus += np.cos(n * t) * val
            minus += np.sin(n * t) * val
        return plus / t_nodes, minus / t_nodes

    mo = modulation_order(vtilde) if vtilde.angle_harmonics - {0} else None
    if mo is None or mo.n != n:
        # explicit n: build the +-n moments directly
        by = _angle_coefficients(vtilde)
        plus_terms, minus_terms = [], []
        for k in (n, -n):
            for p, c in by.get(k, []):
                plus_terms.append(((0, k, p), 0.5 * c))
                minus_terms.append(((0, k, p), 0.5j * c if k == n else -0.5j * c))
        vplus, vminus = AngleTimeSymbol(plus_terms), AngleTimeSymbol(minus_terms)
    else:
        vplus, vminus = mo.vplus, mo.vminus

    q_plus, q_minus = moments(x, xi)
    # identity 1: {h0, f} = xi d_x f - x d_xi f
    fx, fxi = _cartesian_partials(vplus, x, xi)
    bracket = xi * fx - x * fxi
    res1 = float(np.max(np.abs(bracket - n * q_minus)))
    # identity 2
    fx2, fxi2 = _flow_arrays(x, xi, np.pi / (2 * n))
    shifted = vplus.evaluate_cartesian(0.0, fx2, fxi2)
    res2 = float(np.max(np.abs(q_minus - shifted)))
    # consistency of the closed-form moments with the quadrature moments
    res_plus = float(np.max(np.abs(vplus.evaluate_cartesian(0.0, x, xi) - q_plus)))
    res_minus = float(np.max(np.abs(vminus.evaluate_cartesian(0.0, x, xi) - q_minus)))
    return {
        "n": n,
        "bracket_residual": res1,
        "rotation_residual": res2,
        "closed_form_residual": max(res_plus, res_minus),
        "passed": max(res1, res2, res_plus, res_minus) <= tol,
    }
