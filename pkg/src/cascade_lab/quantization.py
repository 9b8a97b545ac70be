"""Weyl and anti-Wick quantization on the truncated Hermite basis.

Band convention: the angular harmonic ``e^{in theta} rho(I)`` lands on the
entries ``M[j, k]`` with ``j - k = n`` (row minus column).  Under
``x + i xi = sqrt(2I) i e^{-i theta}`` the symbol ``(x + i xi)/sqrt(2)`` is
the lowering operator with ``sqrt(k)`` at ``(k-1, k)``.

Each Weyl band is a list of radial integrals against normalized Laguerre
functions (see :mod:`cascade_lab.laguerre`):

    n <= 0, d = -n:  M[j, j+d] = c/2 (-1)^j (-i)^d R_j
    n >  0, d =  n:  M[k+d, k] = c/2 (-1)^k ( i)^d R_k
"""

from __future__ import annotations

import functools
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln, ive

from .laguerre import QuadratureNotConverged, radial_moments_checked
from .profiles import ActionWeighted, CutoffOne, FunctionProfile, RadialProfile
from .symbols import AngleTimeSymbol, PolynomialSymbol

__all__ = [
    "HermiteBasis",
    "OperatorMatrix",
    "CoherentState",
    "QuadratureNotConverged",
    "hermite_functions",
    "harmonic_oscillator_matrix",
    "weyl_quantize",
    "weyl_quantize_oracle",
    "anti_wick_quantize",
    "gaussian_smoothing",
    "coherent_state",
    "coherent_state_projection",
    "egorov_conjugate",
    "verify_egorov",
    "composition_check",
    "weyl_anti_wick_gap",
    "garding_check",
    "dump_matrix",
    "load_matrix",
]


# ---------------------------------------------------------------------------
# basis and matrices
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HermiteBasis:
    """Modes ``0..size-1`` of ``H0 = (-d_x^2 + x^2)/2`` with eigenvalues ``k + 1/2``."""

    size: int

    def __post_init__(self):
        if self.size < 2:
            raise ValueError("HermiteBasis needs at least two modes")

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.arange(self.size) + 0.5

    def interior(self, fraction: float = 0.9) -> int:
        """Number of modes in the interior block used for residuals."""
        return max(1, int(fraction * self.size))

    def padded(self, extra: int) -> "HermiteBasis":
        return HermiteBasis(self.size + extra)


class OperatorMatrix:
    """Square matrix on a :class:`HermiteBasis`, dense or sparse, with band metadata."""

    __slots__ = ("basis", "_data", "_bands", "label")

    def __init__(self, data, basis: HermiteBasis | None = None, bands=None, label: str = ""):
        if sp.issparse(data):
            data = sp.csr_array(data, dtype=complex)
        else:
            data = np.asarray(data, dtype=complex)
            if data.ndim != 2 or data.shape[0] != data.shape[1]:
                raise ValueError("operator data must be square")
        self._data = data
        self.basis = basis or HermiteBasis(data.shape[0])
        if self.basis.size != data.shape[0]:
            raise ValueError("basis size does not match matrix shape")
        self._bands = frozenset(int(b) for b in bands) if bands is not None else None
        self.label = label

    # -- access ---------------------------------------------------------------
    @property
    def N(self) -> int:
        return self.basis.size

    @property
    def shape(self):
        return self._data.shape

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self._data)

    def dense(self) -> np.ndarray:
        return self._data.toarray() if self.is_sparse else self._data

    def sparse(self):
        return self._data if self.is_sparse else sp.csr_array(self._data)

    @property
    def data(self):
        return self._data

    @property
    def bands(self) -> frozenset:
        """Offsets ``row - col`` of the nonzero diagonals."""
        if self._bands is None:
            coo = sp.coo_array(self.sparse())
            nz = np.abs(coo.data) > 0
            self._bands = frozenset(np.unique(coo.row[nz] - coo.col[nz]).tolist())
        return self._bands

    def band(self, n: int) -> np.ndarray:
        """Entries ``M[j, k]`` with ``j - k = n``."""
        return np.asarray(self.sparse().diagonal(-n)).ravel() if self.is_sparse else np.diagonal(self._data, -n).copy()

    def hermitian_defect(self) -> float:
        diff = self._data - self._data.conj().T
        if sp.issparse(diff):
            return float(np.max(np.abs(diff.data))) if diff.nnz else 0.0
        return float(np.max(np.abs(diff))) if diff.size else 0.0

    @property
    def hermitian(self) -> bool:
        return self.hermitian_defect() <= 1e-12

    def interior_block(self, fraction: float = 0.9) -> np.ndarray:
        n = self.basis.interior(fraction)
        if self.is_sparse:
            return self._data[:n, :n].toarray()
        return self._data[:n, :n]

    def truncate(self, size: int) -> "OperatorMatrix":
        sub = self._data[:size, :size]
        return OperatorMatrix(sub, HermiteBasis(size), label=self.label)

    # -- algebra ------------------------------------------------------------
    def _wrap(self, data, bands=None):
        return OperatorMatrix(data, self.basis, bands=bands)

    def __add__(self, other):
        if isinstance(other, OperatorMatrix):
            return self._wrap(self._data + other._data)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, OperatorMatrix):
            return self._wrap(self._data - other._data)
        return NotImplemented

    def __neg__(self):
        return self._wrap(-self._data, self._bands)

    def __mul__(self, scalar):
        return self._wrap(self._data * scalar, self._bands)

    __rmul__ = __mul__

    def __matmul__(self, other):
        if isinstance(other, OperatorMatrix):
            out = self._data @ other._data
            return self._wrap(out)
        return self._data @ other

    def adjoint(self) -> "OperatorMatrix":
        return self._wrap(self._data.conj().T, None)

    def max_abs(self, interior: float | None = None) -> float:
        block = self.interior_block(interior) if interior else self._data
        if sp.issparse(block):
            return float(np.max(np.abs(block.data))) if block.nnz else 0.0
        return float(np.max(np.abs(block))) if block.size else 0.0

    def norm(self) -> float:
        return float(np.linalg.norm(self.dense(), 2))

    def __repr__(self):
        kind = "sparse" if self.is_sparse else "dense"
        return f"OperatorMatrix(N={self.N}, {kind}, bands={sorted(self.bands)})"


def harmonic_oscillator_matrix(basis: HermiteBasis) -> OperatorMatrix:
    return OperatorMatrix(sp.diags_array(basis.eigenvalues.astype(complex), format="csr"), basis, bands=[0])


def hermite_functions(count: int, x) -> np.ndarray:
    """Normalized Hermite functions ``psi_k(x)``, shape ``(count, len(x))``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.zeros((count, x.size))
    out[0] = np.pi**-0.25 * np.exp(-0.5 * x * x)
    if count > 1:
        out[1] = math.sqrt(2.0) * x * out[0]
    for k in range(1, count - 1):
        out[k + 1] = math.sqrt(2.0 / (k + 1)) * x * out[k] - math.sqrt(k / (k + 1)) * out[k - 1]
    return out


# ---------------------------------------------------------------------------
# Weyl quantization
# ---------------------------------------------------------------------------


@functools.lru_cache(maxsize=512)
def _band_entries(n: int, profile: RadialProfile, size: int, tol: float) -> tuple[np.ndarray, float]:
    d = abs(n)
    count = size - d
    if count <= 0:
        return np.zeros(0, dtype=complex), 0.0
    R, err = radial_moments_checked(profile, d, count, tol=np.inf)
    scale = max(1.0, float(np.max(np.abs(R))))
    if err > tol * scale:
        raise QuadratureNotConverged(
            f"band n={n} ({profile.kind}), N={size}: entries moved by {err:.3e} under node doubling "
            f"(tolerance {tol:.1e} x scale {scale:.3g})"
        )
    j = np.arange(count)
    sign = np.where(j % 2 == 0, 1.0, -1.0)
    phase = (-1j) ** d if n <= 0 else (1j) ** d
    values = 0.5 * phase * sign * R
    values.setflags(write=False)
    return values, err


def _place_band(values: np.ndarray, n: int, size: int):
    # scipy offset convention: offset k means entries (i, i + k), i.e. col - row = k
    return sp.diags_array(values, offsets=-n, shape=(size, size), format="csr")


def _polynomial_weyl(poly: PolynomialSymbol, basis: HermiteBasis) -> OperatorMatrix:
    """Weyl ordering ``x^a xi^b -> 2^-a sum_k C(a,k) X^k P^b X^(a-k)`` on a padded basis."""
    N = basis.size
    pad = N + poly.degree + 2
    k = np.arange(1, pad)
    lower = sp.diags_array(np.sqrt(k).astype(complex), offsets=1, shape=(pad, pad), format="csr")
    raise_ = lower.T.conj()
    X = (lower + raise_) / math.sqrt(2.0)
    P = (lower - raise_) / (1j * math.sqrt(2.0))
    total = sp.csr_array((pad, pad), dtype=complex)
    eye = sp.identity(pad, dtype=complex, format="csr")

    def power(M, e):
        out = eye
        for _ in range(e):
            out = out @ M
        return out

    for (a, b), c in poly.coeffs.items():
        pb = power(P, b)
        acc = sp.csr_array((pad, pad), dtype=complex)
        for j in range(a + 1):
            acc = acc + math.comb(a, j) * (power(X, j) @ pb @ power(X, a - j))
        total = total + c * acc / 2**a
    return OperatorMatrix(sp.csr_array(total[:N, :N]), basis, label="weyl-polynomial")


def weyl_quantize(symbol, basis: HermiteBasis, t: float = 0.0, tol: float = 1e-10, sparse: bool = True) -> OperatorMatrix:
    """Weyl quantization ``Opw(symbol(t, .))`` truncated to ``basis``.

    Raises :class:`QuadratureNotConverged` when node doubling moves any band
    entry by more than ``tol`` relative to the band scale.
    """
    N = basis.size
    if isinstance(symbol, PolynomialSymbol):
        M = _polynomial_weyl(symbol, basis)
        return M if sparse else OperatorMatrix(M.dense(), basis)
    total = sp.csr_array((N, N), dtype=complex)
    bands = set()
    for (n, prof), c in symbol.angle_bands(t).items():
        if abs(n) >= N or c == 0:
            continue
        values, _ = _band_entries(n, prof, N, tol)
        total = total + c * _place_band(values, n, N)
        bands.add(n)
    M = OperatorMatrix(total, basis, bands=bands, label="weyl")
    return M if sparse else OperatorMatrix(M.dense(), basis, bands=bands, label="weyl")


@functools.lru_cache(maxsize=None)
def _leggauss(n):
    return np.polynomial.legendre.leggauss(n)


def _gl(a, b, n):
    x, w = _leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def _split_line(L, radii, c, n_glue, n_plain, glue_pieces=4, plain_width=1.0):
    """Gauss-Legendre nodes on ``[-L, L]`` along a line at offset ``c``, split where it crosses ``radii``."""
    cuts = {-L, L}
    for r in radii:
        if r > abs(c):
            s = math.sqrt(r * r - c * c)
            cuts.update((-s, s))
    pts = sorted(p for p in cuts if -L <= p <= L)
    xs, ws = [], []
    lo_r, hi_r = (min(radii), max(radii)) if radii else (0.0, 0.0)
    for a, b in zip(pts[:-1], pts[1:]):
        if b - a <= 1e-15:
            continue
        rm = math.hypot(0.5 * (a + b), c)
        glue = bool(radii) and lo_r < rm < hi_r
        pieces = glue_pieces if glue else max(1, math.ceil((b - a) / plain_width))
        nodes = n_glue if glue else n_plain
        edges = np.linspace(a, b, pieces + 1)
        for aa, bb in zip(edges[:-1], edges[1:]):
            x, w = _gl(aa, bb, nodes)
            xs.append(x)
            ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def weyl_quantize_oracle(symbol, basis: HermiteBasis, t: float = 0.0, n_glue: int = 24, n_plain: int = 24,
                         plain_width: float = 1.0, modes=None) -> OperatorMatrix:
    """Direct phase-space quadrature of the Weyl integral; test oracle only.

    ``<j|Opw(a)|k> = (1/2pi) int dX int dY psi_j(X+Y/2) psi_k(X-Y/2) int a(X, xi) e^{iY xi} dxi``.
    Quadrature panels are split on the circles bounding the cutoff transition.
    """
    N = basis.size
    modes = np.arange(N) if modes is None else np.asarray(modes)
    if isinstance(symbol, PolynomialSymbol):
        f = symbol.evaluate
        radii: list = []
    else:
        f = lambda X, XI: symbol.evaluate_cartesian(t, X, XI)  # noqa: E731
        bps = set()
        for _, _, prof in symbol:
            bps.update(prof.breakpoints)
        radii = sorted(math.sqrt(2.0 * b) for b in bps)
    L = math.sqrt(2 * modes.max() + 1) + 7.0
    X, wX = _split_line(L, radii, 0.0, n_glue, n_plain, plain_width=plain_width)
    hY = math.pi / (2.2 * L)
    Y = np.arange(-2 * L, 2 * L + 1e-12, hY)
    M = np.zeros((modes.size, modes.size), dtype=complex)
    count = int(modes.max()) + 1
    for x0, wx in zip(X, wX):
        Xi, wXi = _split_line(L, radii, x0, n_glue, n_plain, plain_width=plain_width)
        a = f(np.full_like(Xi, x0), Xi)
        # both Hermite arguments must stay inside [-L, L]
        Yx = Y[np.abs(Y) <= 2.0 * (L - abs(x0)) + hY]
        ahat = np.exp(1j * np.outer(Yx, Xi)) @ (a * wXi)
        A = hermite_functions(count, x0 + Yx / 2)[modes]
        B = hermite_functions(count, x0 - Yx / 2)[modes]
        M += wx * ((A * (ahat * hY)) @ B.T)
    M /= 2.0 * math.pi
    if modes.size == N and np.array_equal(modes, np.arange(N)):
        return OperatorMatrix(M, basis, label="weyl-oracle")
    return OperatorMatrix(M, HermiteBasis(modes.size), label="weyl-oracle-subset")


# ---------------------------------------------------------------------------
# anti-Wick quantization and coherent states
# ---------------------------------------------------------------------------


def _anti_wick_band(n: int, profile: RadialProfile, size: int) -> np.ndarray:
    """``int rho(I) e^{-I} I^{m + d/2} / sqrt(m! (m+d)!) dI`` for ``m < size - d``."""
    d = abs(n)
    count = size - d
    if count <= 0:
        return np.zeros(0)
    m = np.arange(count)
    a = m + 0.5 * d
    log_norm = -0.5 * (gammaln(m + 1.0) + gammaln(m + d + 1.0))
    tail = profile.tail_value
    if isinstance(profile, ActionWeighted):
        base = profile.base
        if base.tail_value is not None and math.isfinite(base.flat_from):
            closed = base.tail_value * np.exp(gammaln(a + 2.0) + log_norm)
            rem = lambda I: I * (base(I) - base.tail_value)  # noqa: E731
            upper = base.flat_from
        else:
            closed, rem, upper = np.zeros(count), profile, None
    elif tail is not None and math.isfinite(profile.flat_from):
        closed = tail * np.exp(gammaln(a + 1.0) + log_norm)
        rem = lambda I: profile(I) - tail  # noqa: E731
        upper = profile.flat_from
    else:
        closed, rem, upper = np.zeros(count), profile, None
    if upper is None:
        upper = count + d + 40.0 * math.sqrt(count + d + 1.0) + 80.0
    if upper <= 0.0:
        return closed
    edges = sorted({0.0, upper, *[b for b in profile.breakpoints if 0.0 < b < upper]})
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        pieces = max(4, math.ceil((hi - lo) / 1.0))
        for p in range(pieces):
            aa = lo + (hi - lo) * p / pieces
            bb = lo + (hi - lo) * (p + 1) / pieces
            x, w = _gl(aa, bb, 24)
            xs.append(x)
            ws.append(w)
    I = np.concatenate(xs)
    w = np.concatenate(ws) * rem(I)
    with np.errstate(divide="ignore", under="ignore"):
        logk = -I[None, :] + a[:, None] * np.log(I[None, :]) + log_norm[:, None]
        K = np.exp(logk)
    return closed + K @ w


def anti_wick_quantize(symbol: AngleTimeSymbol, basis: HermiteBasis, t: float = 0.0) -> OperatorMatrix:
    """``Opaw(a) = (1/2pi) int a(z) |Phi_z><Phi_z| dz``, normalized so ``Opaw(1) = Id``.

    Entries come from the coherent-state kernel: harmonic ``n`` contributes
    ``i^n int rho(I) e^{-I} I^{(j+k)/2} / sqrt(j! k!) dI`` at ``j - k = n``.
    """
    N = basis.size
    total = sp.csr_array((N, N), dtype=complex)
    bands = set()
    for (n, prof), c in symbol.angle_bands(t).items():
        if abs(n) >= N or c == 0:
            continue
        values = (1j**n) * _anti_wick_band(n, prof, N)
        total = total + c * _place_band(values, n, N)
        bands.add(n)
    return OperatorMatrix(total, basis, bands=bands, label="anti-wick")


def gaussian_smoothing(symbol: AngleTimeSymbol, half_width: float = 9.0, nodes: int = 24,
                       chunk: int = 512) -> AngleTimeSymbol:
    """Convolution of the symbol with ``e^{-|z|^2} / pi``, harmonic by harmonic.

    For ``e^{in theta} f(r)`` the result is ``e^{in theta} g(r)`` with
    ``g(r) = 2 int f(s) e^{-(r-s)^2} ive(n, 2rs) s ds``.
    """
    out = []
    for (m, n, prof), c in symbol.items():
        radii = tuple(sorted(math.sqrt(2.0 * b) for b in prof.breakpoints))

        def smoothed(I, prof=prof, n=n, radii=radii):
            I = np.asarray(I, dtype=float)
            r = np.sqrt(2.0 * I).ravel()
            hi = float(r.max(initial=0.0)) + half_width
            cuts = sorted({0.0, hi, *[q for q in radii if q < hi]})
            xs, ws = [], []
            for a, b in zip(cuts[:-1], cuts[1:]):
                pieces = max(2, math.ceil((b - a) / 0.5))
                for p in range(pieces):
                    x, w = _gl(a + (b - a) * p / pieces, a + (b - a) * (p + 1) / pieces, nodes)
                    xs.append(x)
                    ws.append(w)
            s = np.concatenate(xs)
            w = np.concatenate(ws) * prof(0.5 * s * s) * s
            res = np.empty(r.size)
            for lo in range(0, r.size, chunk):
                rr = r[lo : lo + chunk, None]
                kern = np.exp(-((rr - s[None, :]) ** 2)) * ive(abs(n), 2.0 * rr * s[None, :])
                res[lo : lo + chunk] = 2.0 * kern @ w
            return res.reshape(I.shape)

        fp = FunctionProfile(func=smoothed, breakpoints=prof.breakpoints, label=f"gauss*{prof.kind}[{n}]")
        out.append(((m, n, fp), c))
    return AngleTimeSymbol(out)


@dataclass(frozen=True)
class CoherentState:
    q: float
    p: float
    coefficients: np.ndarray = field(repr=False)
    tail_mass: float = 0.0
    truncated: bool = False

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.coefficients))


def coherent_state(z, basis: HermiteBasis, warn_tail: float = 0.01) -> CoherentState:
    """Hermite coefficients of ``Phi_z = T_z Phi_0`` with ``T_z u = e^{-ipq/2} e^{ixp} u(x - q)``.

    Closed form ``e^{-|alpha|^2/2} alpha^k / sqrt(k!)`` with ``alpha = (q + ip)/sqrt(2)``;
    the phase convention is pinned by :func:`coherent_state_projection`.
    """
    q, p = float(z[0]), float(z[1])
    alpha = (q + 1j * p) / math.sqrt(2.0)
    k = np.arange(basis.size)
    r2 = abs(alpha) ** 2
    if alpha == 0:
        coeffs = np.zeros(basis.size, dtype=complex)
        coeffs[0] = 1.0
    else:
        logmag = -0.5 * r2 + k * math.log(abs(alpha)) - 0.5 * gammaln(k + 1.0)
        coeffs = np.exp(logmag + 1j * k * np.angle(alpha))
    tail = max(0.0, 1.0 - float(np.sum(np.abs(coeffs) ** 2)))
    flagged = tail > warn_tail
    if flagged:
        warnings.warn(f"coherent state at ({q}, {p}) loses {tail:.2%} of its mass to truncation", RuntimeWarning,
                      stacklevel=2)
    return CoherentState(q, p, coeffs, tail, flagged)


def coherent_state_projection(z, basis: HermiteBasis, nodes: int = 64) -> np.ndarray:
    """Oracle: ``<psi_k, Phi_z>`` by Gauss-Legendre quadrature in ``x``."""
    q, p = float(z[0]), float(z[1])
    L = math.sqrt(2 * basis.size + 1) + 10.0
    lo, hi = min(-L, q - 12.0), max(L, q + 12.0)
    pieces = math.ceil((hi - lo) / 1.0)
    xs, ws = [], []
    for i in range(pieces):
        x, w = _gl(lo + (hi - lo) * i / pieces, lo + (hi - lo) * (i + 1) / pieces, nodes // 2)
        xs.append(x)
        ws.append(w)
    x = np.concatenate(xs)
    w = np.concatenate(ws)
    phi = np.exp(-0.5j * p * q + 1j * x * p) * np.pi**-0.25 * np.exp(-0.5 * (x - q) ** 2)
    return hermite_functions(basis.size, x) @ (w * phi)


# ---------------------------------------------------------------------------
# Egorov, composition, Garding
# ---------------------------------------------------------------------------


def egorov_conjugate(M: OperatorMatrix, tau: float) -> OperatorMatrix:
    """``D(tau) M D(tau)*`` with ``D(tau) = diag(e^{i tau (k + 1/2)})``."""
    if M.is_sparse:
        coo = sp.coo_array(M.sparse())
        data = coo.data * np.exp(1j * tau * (coo.row - coo.col))
        out = sp.csr_array((data, (coo.row, coo.col)), shape=M.shape)
        return OperatorMatrix(out, M.basis, bands=M._bands)
    j = np.arange(M.N)
    phase = np.exp(1j * tau * (j[:, None] - j[None, :]))
    return OperatorMatrix(M.dense() * phase, M.basis, bands=M._bands)


def verify_egorov(symbol, tau: float, basis: HermiteBasis, fraction: float = 0.9) -> float:
    """Max-entry gap between ``D Opw(a) D*`` and ``Opw(a o phi^tau)`` on the interior block."""
    if isinstance(symbol, PolynomialSymbol):
        flowed = symbol.flow(tau)
    else:
        flowed = symbol.angle_shift(tau)
    lhs = egorov_conjugate(weyl_quantize(symbol, basis), tau)
    rhs = weyl_quantize(flowed, basis)
    return (lhs - rhs).max_abs(interior=fraction)


def _band_norms(R: np.ndarray, size: int) -> dict:
    out = {}
    j = 0
    while 2 ** (j + 1) <= size:
        lo, hi = 2**j, 2 ** (j + 1)
        out[lo] = float(np.linalg.norm(R[:, lo:hi], 2))
        j += 1
    return out


def _trend(norms: dict, start: int = 16) -> dict:
    """Log-log slope of band norms from ``start`` and the first band after which they never grow."""
    keys = sorted(k for k in norms if k >= start)
    vals = [norms[k] for k in keys]
    slope = None
    if len(keys) >= 2 and all(v > 0 for v in vals):
        slope = float(np.polyfit(np.log(keys), np.log(vals), 1)[0])
    allk = sorted(norms)
    from_band = None
    for i, k in enumerate(allk):
        tail = [norms[q] for q in allk[i:]]
        if all(b <= a * (1 + 1e-9) + 1e-14 for a, b in zip(tail, tail[1:])):
            from_band = k
            break
    return {"slope": slope, "non_increasing_from": from_band}


def composition_check(a: AngleTimeSymbol, b: AngleTimeSymbol, basis: HermiteBasis, fraction: float = 0.9) -> dict:
    """Product and commutator residuals on dyadic mode bands ``[2^j, 2^(j+1))``."""
    from .symbols import poisson_bracket

    if not (a.is_time_independent() and b.is_time_independent()):
        raise ValueError("composition_check expects time-independent symbols")
    N = basis.size
    pad = basis.padded(a.max_harmonic + b.max_harmonic + 1)
    A = weyl_quantize(a, pad).dense()
    B = weyl_quantize(b, pad).dense()
    AB = (A @ B)[:N, :N]
    BA = (B @ A)[:N, :N]
    prod = weyl_quantize(a.multiply(b), basis).dense()
    brk = weyl_quantize(poisson_bracket(a, b), basis).dense()
    n = basis.interior(fraction)
    R1 = (AB - prod)[:n, :n]
    R2 = (1j * (AB - BA) - brk)[:n, :n]
    p_norms, c_norms = _band_norms(R1, n), _band_norms(R2, n)
    return {
        "product_residual": p_norms,
        "commutator_residual": c_norms,
        "product_trend": _trend(p_norms),
        "commutator_trend": _trend(c_norms),
        "product_max": float(np.max(np.abs(R1))) if R1.size else 0.0,
        "commutator_max": float(np.max(np.abs(R2))) if R2.size else 0.0,
    }


def weyl_anti_wick_gap(a: AngleTimeSymbol, basis: HermiteBasis, modes=(16, 64, 256)) -> dict:
    """``||(Opw(a) - Opaw(a)) P_k||`` for mode projectors ``P_k`` (column norms)."""
    D = (weyl_quantize(a, basis) - anti_wick_quantize(a, basis)).dense()
    return {int(k): float(np.linalg.norm(D[:, k])) for k in modes if k < basis.size}


def garding_check(a: AngleTimeSymbol, basis: HermiteBasis, n_random: int = 64, seed: int = 0,
                  grid_radius: float = 1.0) -> dict:
    """Empirical constant in ``<Opw(a) u, u> >= -C ||u||_{-1}^2``.

    ``C = max(0, -lambda_min(H0 Opw(a) H0))`` is the smallest such constant on
    the truncation; it is then confirmed on random vectors and eigenvectors.
    The anti-Wick minimum eigenvalue is reported for the positivity path.
    """
    theta = np.linspace(0.0, 2.0 * np.pi, 2048, endpoint=False)
    sym_min = float(np.min(np.real(a.evaluate_action_angle(0.0, theta, 0.5 * grid_radius**2 + 1.0))))
    if sym_min < -1e-12:
        raise ValueError(f"garding_check needs a symbol nonnegative at infinity, min {sym_min:.3e}")
    M = weyl_quantize(a, basis).dense()
    M = 0.5 * (M + M.conj().T)
    h = basis.eigenvalues
    weighted = h[:, None] * M * h[None, :]
    C = max(0.0, -float(np.linalg.eigvalsh(weighted)[0]))
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((basis.size, n_random)) + 1j * rng.standard_normal((basis.size, n_random))
    _, eigvecs = np.linalg.eigh(M)
    U = np.concatenate([U, eigvecs], axis=1)
    U /= np.linalg.norm(U, axis=0)
    quad = np.real(np.einsum("ij,ik,kj->j", U.conj(), M, U))
    neg = np.sum(np.abs(U) ** 2 / h[:, None] ** 2, axis=0)
    margin = float(np.min(quad + C * neg))
    aw = anti_wick_quantize(a, basis).dense()
    aw_min = float(np.linalg.eigvalsh(0.5 * (aw + aw.conj().T))[0])
    return {
        "C": C,
        "min_quadform_bound": margin,
        "weyl_min_eigenvalue": float(np.linalg.eigvalsh(M)[0]),
        "anti_wick_min_eigenvalue": aw_min,
        "symbol_min": sym_min,
    }


# ---------------------------------------------------------------------------
# persistence
# ---------------------------------------------------------------------------


def dump_matrix(M: OperatorMatrix, path, symbol: AngleTimeSymbol | None = None) -> tuple[Path, Path]:
    """CSV ``row,col,re,im`` of the nonzero entries plus a JSON sidecar."""
    path = Path(path)
    coo = sp.coo_array(M.sparse())
    order = np.lexsort((coo.col, coo.row))
    with path.open("w") as fh:
        fh.write("row,col,re,im\n")
        for i in order:
            c = coo.data[i]
            fh.write(f"{coo.row[i]},{coo.col[i]},{float(c.real)!r},{float(c.imag)!r}\n")
    sidecar = path.with_suffix(path.suffix + ".json")
    meta = {"N": M.N, "bands": sorted(M.bands), "symbol_hash": symbol.digest() if symbol is not None else None}
    sidecar.write_text(json.dumps(meta, indent=2) + "\n")
    return path, sidecar


def load_matrix(path) -> OperatorMatrix:
    path = Path(path)
    meta = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    N = int(meta["N"])
    if raw.size == 0:
        return OperatorMatrix(sp.csr_array((N, N), dtype=complex), HermiteBasis(N), bands=meta["bands"])
    rows, cols = raw[:, 0].astype(int), raw[:, 1].astype(int)
    data = raw[:, 2] + 1j * raw[:, 3]
    return OperatorMatrix(sp.csr_array((data, (rows, cols)), shape=(N, N)), HermiteBasis(N), bands=meta["bands"])
