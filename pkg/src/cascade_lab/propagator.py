"""Time evolution on the truncated Hermite basis and Sobolev-norm diagnostics.

The driven equation ``i u' = (H0 + Opw(v(t))) u`` is integrated in the
interaction picture ``psi = e^{itH0} u``.  There the band ``n`` of the time
harmonic ``m`` oscillates as ``e^{i(m+n)t}``, so

    V_I(t) = sum_w e^{iwt} W_w,      W_w = sum_{m+n=w} Opw(c_{m,n} e^{in theta} rho),

and one step of the exponential midpoint rule is
``psi <- exp(-i dt V_I(t + dt/2)) psi``.  Sobolev norms are diagonal, so
they are read off ``psi`` directly.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.sparse.linalg import expm_multiply

from .quantization import HermiteBasis, OperatorMatrix, egorov_conjugate, harmonic_oscillator_matrix, weyl_quantize
from .symbols import AngleTimeSymbol, resonant_average

__all__ = [
    "StateVector",
    "EvolutionConfig",
    "TimeSeries",
    "DrivenHamiltonian",
    "ContaminatedWindow",
    "EmptySpectralWindow",
    "assemble_driven_hamiltonian",
    "evolve",
    "reference_evolution",
    "effective_hamiltonian",
    "effective_hamiltonian_oracle",
    "sobolev_norm",
    "fit_power_law",
    "decay_experiment",
    "DecayResult",
    "duhamel_tail_bound",
    "write_gnuplot_loglog",
]


class ContaminatedWindow(ValueError):
    """Fit window reaches past the truncation guard."""


class EmptySpectralWindow(ValueError):
    """Spectral filter annihilated the state."""


# ---------------------------------------------------------------------------
# states and norms
# ---------------------------------------------------------------------------


@dataclass
class StateVector:
    coefficients: np.ndarray
    basis: HermiteBasis

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=complex)
        if self.coefficients.shape != (self.basis.size,):
            raise ValueError("state length does not match basis")
        if not np.all(np.isfinite(self.coefficients)):
            raise ValueError("state has non-finite entries")

    @classmethod
    def mode(cls, k: int, basis: HermiteBasis) -> "StateVector":
        c = np.zeros(basis.size, dtype=complex)
        c[k] = 1.0
        return cls(c, basis)

    @classmethod
    def random(cls, basis: HermiteBasis, rng: np.random.Generator, decay: float = 0.0) -> "StateVector":
        c = rng.standard_normal(basis.size) + 1j * rng.standard_normal(basis.size)
        c *= basis.eigenvalues ** (-decay)
        return cls(c / np.linalg.norm(c), basis)

    def norm(self, r: float = 0.0) -> float:
        return sobolev_norm(self, r)

    def mean_mode(self) -> float:
        p = np.abs(self.coefficients) ** 2
        return float(np.dot(np.arange(self.basis.size), p) / p.sum())

    def tail_mass(self, fraction: float = 0.1) -> float:
        return _tail_mass(self.coefficients, fraction)

    def normalized(self) -> "StateVector":
        return StateVector(self.coefficients / np.linalg.norm(self.coefficients), self.basis)


def sobolev_norm(u, r: float) -> float:
    """``(sum (k + 1/2)^(2r) |c_k|^2)^(1/2)``; negative ``r`` allowed."""
    c = u.coefficients if isinstance(u, StateVector) else np.asarray(u)
    w = (np.arange(c.size) + 0.5) ** (2.0 * r)
    return float(math.sqrt(np.dot(w, np.abs(c) ** 2)))


def _tail_mass(c: np.ndarray, fraction: float = 0.1) -> float:
    start = int(math.floor((1.0 - fraction) * c.size))
    return float(np.sum(np.abs(c[start:]) ** 2) / np.sum(np.abs(c) ** 2))


# ---------------------------------------------------------------------------
# configuration and records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float = 1e-2
    T: float = 100.0
    scheme: str = "exponential-midpoint"
    tail_guard: float = 0.01
    r_values: tuple = (1.0,)
    stride: int = 10
    dense: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if not 0.0 < self.tail_guard < 1.0:
            raise ValueError("tail_guard must lie in (0, 1)")
        if self.scheme not in ("exponential-midpoint", "strang-split"):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.stride < 1:
            raise ValueError("stride must be at least 1")
        object.__setattr__(self, "r_values", tuple(float(r) for r in self.r_values))

    def to_json(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        import hashlib

        return hashlib.sha256(json.dumps(self.to_json(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class TimeSeries:
    r_values: tuple
    t: list = field(default_factory=list)
    norm0: list = field(default_factory=list)
    norms: dict = field(default_factory=dict)
    neg_norms: dict = field(default_factory=dict)
    mean_mode: list = field(default_factory=list)
    tail_mass: list = field(default_factory=list)
    contaminated: bool = False
    guard_time: float | None = None

    def __post_init__(self):
        self.r_values = tuple(float(r) for r in self.r_values)
        for r in self.r_values:
            self.norms.setdefault(r, [])
            self.neg_norms.setdefault(r, [])

    def record(self, t: float, coeffs: np.ndarray):
        if self.t and t <= self.t[-1]:
            raise ValueError("time series must be strictly increasing")
        p = np.abs(coeffs) ** 2
        k = np.arange(coeffs.size) + 0.5
        self.t.append(float(t))
        self.norm0.append(float(math.sqrt(p.sum())))
        for r in self.r_values:
            self.norms[r].append(float(math.sqrt(np.dot(k ** (2 * r), p))))
            self.neg_norms[r].append(float(math.sqrt(np.dot(k ** (-2 * r), p))))
        self.mean_mode.append(float(np.dot(k - 0.5, p) / p.sum()))
        self.tail_mass.append(_tail_mass(coeffs))

    def array(self, name: str, r: float | None = None) -> np.ndarray:
        if name == "norm_r":
            return np.asarray(self.norms[float(r)])
        if name == "norm_negr":
            return np.asarray(self.neg_norms[float(r)])
        return np.asarray(getattr(self, name))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["t", "norm0"]
        header += [f"norm_{_fmt_r(r)}" for r in self.r_values]
        header += [f"norm_neg{_fmt_r(r)}" for r in self.r_values]
        header += ["mean_mode", "tail_mass"]
        w.writerow(header)
        for i, t in enumerate(self.t):
            row = [t, self.norm0[i]]
            row += [self.norms[r][i] for r in self.r_values]
            row += [self.neg_norms[r][i] for r in self.r_values]
            row += [self.mean_mode[i], self.tail_mass[i]]
            w.writerow([repr(float(x)) for x in row])
        return buf.getvalue()

    def write_csv(self, path) -> Path:
        path = Path(path)
        path.write_text(self.to_csv())
        return path


def _fmt_r(r: float) -> str:
    return str(int(r)) if float(r).is_integer() else str(r)


# ---------------------------------------------------------------------------
# Hamiltonians
# ---------------------------------------------------------------------------


class DrivenHamiltonian:
    """Harmonics of ``Opw(v(t))`` assembled once, reused at every step."""

    def __init__(self, v: AngleTimeSymbol, basis: HermiteBasis, tol: float = 1e-10):
        if not v.is_real():
            raise ValueError("driven Hamiltonian needs a real symbol")
        self.symbol = v
        self.basis = basis
        self.H0 = harmonic_oscillator_matrix(basis)
        # lab frame: time harmonics m
        self.time_harmonics = {m: weyl_quantize(v.time_harmonic(m), basis, tol=tol).sparse() for m in sorted(v.time_harmonics)}
        # interaction frame: frequencies m + n
        groups: dict = {}
        for (m, n, p), c in v.items():
            groups.setdefault(m + n, []).append(((0, n, p), c))
        self.frequencies = {
            w: weyl_quantize(AngleTimeSymbol(terms), basis, tol=tol).sparse() for w, terms in sorted(groups.items())
        }

    def potential(self, t: float):
        N = self.basis.size
        out = sp.csr_array((N, N), dtype=complex)
        for m, M in self.time_harmonics.items():
            out = out + np.exp(1j * m * t) * M
        return out

    def at(self, t: float) -> OperatorMatrix:
        H = OperatorMatrix(self.H0.sparse() + self.potential(t), self.basis)
        return H

    def interaction(self, t: float):
        N = self.basis.size
        out = sp.csr_array((N, N), dtype=complex)
        for w, M in self.frequencies.items():
            out = out + np.exp(1j * w * t) * M
        return out


def assemble_driven_hamiltonian(v: AngleTimeSymbol, basis: HermiteBasis, t: float) -> OperatorMatrix:
    """``H0 + Opw(v(t))``."""
    H = DrivenHamiltonian(v, basis).at(t)
    if H.hermitian_defect() > 1e-12:
        raise ValueError(f"assembled Hamiltonian is not Hermitian (defect {H.hermitian_defect():.3e})")
    return H


def effective_hamiltonian(v: AngleTimeSymbol, basis: HermiteBasis) -> OperatorMatrix:
    """``Opw(<v>)``: quantization of the resonant average."""
    return weyl_quantize(resonant_average(v), basis)


def effective_hamiltonian_oracle(v: AngleTimeSymbol, basis: HermiteBasis, nodes: int = 64) -> OperatorMatrix:
    """Trapezoid average ``(1/2pi) int D(s) V(s) D(s)* ds`` of the conjugated potential."""
    drive = DrivenHamiltonian(v, basis)
    N = basis.size
    acc = sp.csr_array((N, N), dtype=complex)
    for s in 2.0 * np.pi * np.arange(nodes) / nodes:
        Vs = OperatorMatrix(drive.potential(s), basis)
        acc = acc + egorov_conjugate(Vs, s).sparse()
    return OperatorMatrix(acc / nodes, basis, label="matrix-average")


# ---------------------------------------------------------------------------
# integrators
# ---------------------------------------------------------------------------


def _taylor_expmv(A, psi, dt, order_tol=1e-16):
    """``exp(-i dt A) psi`` by a Taylor series with sub-stepping; ``A`` Hermitian sparse."""
    # infinity-norm bound of the banded matrix
    bound = float(np.max(np.asarray(abs(A).sum(axis=1)).ravel())) if A.nnz else 0.0
    h = abs(dt) * bound
    steps = max(1, int(math.ceil(h / 1.0)))
    tau = dt / steps
    for _ in range(steps):
        term = psi
        out = psi.copy()
        k = 1
        while True:
            term = (-1j * tau / k) * (A @ term)
            out += term
            if np.linalg.norm(term) <= order_tol * np.linalg.norm(out) or k > 40:
                break
            k += 1
        psi = out
    return psi


def evolve(u0: StateVector, v: AngleTimeSymbol, config: EvolutionConfig, t0: float = 0.0, backward: bool = False,
           drive: DrivenHamiltonian | None = None, engine: str = "taylor"):
    """Integrate the driven equation and record norms every ``config.stride`` steps.

    Returns ``(TimeSeries, StateVector)``.  The run stops early with
    ``series.contaminated = True`` when the top 10% of modes carry more than
    ``config.tail_guard`` of the mass.  ``engine`` is ``"taylor"`` (sparse
    Taylor series), ``"expm_multiply"`` (scipy) or ``"dense"`` (full matrix
    exponential, an oracle for small bases).
    """
    basis = u0.basis
    if u0.tail_mass() > config.tail_guard:
        raise ValueError("initial state already breaches the tail guard")
    drive = drive or DrivenHamiltonian(v, basis)
    steps = int(round(config.T / config.dt))
    dt = -config.dt if backward else config.dt
    series = TimeSeries(config.r_values)
    h0 = basis.eigenvalues
    t = t0
    if config.scheme == "exponential-midpoint":
        psi = u0.coefficients * np.exp(1j * t0 * h0)
    else:
        psi = u0.coefficients.copy()

    def lab(psi, t):
        if config.scheme == "exponential-midpoint":
            return psi * np.exp(-1j * t * h0)
        return psi

    # backward runs only return the final state
    if not backward:
        series.record(t, psi)
    dense_mode = config.dense or engine == "dense"
    half_phase = np.exp(-0.5j * dt * h0)
    for step in range(1, steps + 1):
        tm = t + 0.5 * dt
        if config.scheme == "exponential-midpoint":
            A = drive.interaction(tm)
            if dense_mode:
                psi = la.expm(-1j * dt * A.toarray()) @ psi
            elif engine == "expm_multiply":
                psi = expm_multiply(-1j * dt * A, psi)
            else:
                psi = _taylor_expmv(A, psi, dt)
        else:
            A = drive.potential(tm)
            psi = half_phase * psi
            if dense_mode:
                psi = la.expm(-1j * dt * A.toarray()) @ psi
            else:
                psi = _taylor_expmv(A, psi, dt)
            psi = half_phase * psi
        t = t0 + step * dt
        if step % config.stride == 0 or step == steps:
            if not backward:
                series.record(t, psi)
            if _tail_mass(psi) > config.tail_guard:
                series.contaminated = True
                series.guard_time = float(t)
                break
    final = StateVector(lab(psi, t), basis)
    return series, final


def reference_evolution(u0: StateVector, v: AngleTimeSymbol, T: float, frame: str = "lab", rtol: float = 1e-12,
                        atol: float = 1e-13) -> StateVector:
    """High-accuracy adaptive Runge-Kutta solution; oracle for small bases."""
    drive = DrivenHamiltonian(v, u0.basis)
    h0 = u0.basis.eigenvalues
    if frame == "lab":
        H0 = np.diag(h0)
        mats = {m: M.toarray() for m, M in drive.time_harmonics.items()}

        def rhs(t, y):
            H = H0.astype(complex)
            for m, M in mats.items():
                H = H + np.exp(1j * m * t) * M
            return -1j * (H @ y)

        y0 = u0.coefficients
    elif frame == "interaction":
        mats = {w: M.toarray() for w, M in drive.frequencies.items()}

        def rhs(t, y):
            acc = np.zeros_like(y)
            for w, M in mats.items():
                acc = acc + np.exp(1j * w * t) * (M @ y)
            return -1j * acc

        y0 = u0.coefficients
    else:
        raise ValueError("frame must be 'lab' or 'interaction'")
    sol = solve_ivp(rhs, (0.0, T), y0.astype(complex), method="DOP853", rtol=rtol, atol=atol)
    y = sol.y[:, -1]
    if frame == "interaction":
        y = y * np.exp(-1j * T * h0)
    return StateVector(y, u0.basis)


# ---------------------------------------------------------------------------
# fitting and experiments
# ---------------------------------------------------------------------------


def fit_power_law(t, y, window: tuple[float, float], guard_time: float | None = None,
                  min_samples: int = 10) -> dict:
    """Least-squares slope of ``log y`` against ``log t`` on ``window``."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    lo, hi = window
    if guard_time is not None and hi > guard_time:
        raise ContaminatedWindow(f"fit window ends at {hi} beyond the guard breach at {guard_time}")
    mask = (t >= lo) & (t <= hi) & (t > 0) & (y > 0)
    if mask.sum() < 2:
        raise ValueError("fit window holds fewer than two samples")
    X = np.log(t[mask])
    Y = np.log(y[mask])
    A = np.vstack([X, np.ones_like(X)]).T
    coef, *_ = np.linalg.lstsq(A, Y, rcond=None)
    pred = A @ coef
    ss_res = float(np.sum((Y - pred) ** 2))
    ss_tot = float(np.sum((Y - Y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return {
        "slope": float(coef[0]),
        "intercept": float(coef[1]),
        "r2": r2,
        "samples": int(mask.sum()),
        "window": [float(lo), float(hi)],
        "sparse_window": bool(mask.sum() < min_samples),
    }


@dataclass
class DecayResult:
    series: TimeSeries
    decay_fit: dict | None
    growth_fit: dict | None
    window: object
    filtered_norm: float
    eigen: tuple = field(repr=False, default=None)
    reference_fits: dict | None = None

    def to_json(self) -> dict:
        return {
            "decay_fit": self.decay_fit,
            "growth_fit": self.growth_fit,
            "filtered_norm": self.filtered_norm,
            "reference_fits": self.reference_fits,
            "contaminated": self.series.contaminated,
            "guard_time": self.series.guard_time,
        }


def decay_experiment(v: AngleTimeSymbol, r: float, basis: HermiteBasis, times=None,
                     fit_window: tuple[float, float] | None = None, tail_guard: float = 0.01,
                     filtered: bool = True, window=None, seed_state: StateVector | None = None,
                     horizon: float = 1e4, reference_window: tuple[float, float] = (200.0, 2000.0)) -> DecayResult:
    """Local energy decay of a spectrally localized state under ``Opw(<v>)``.

    The seed (mode 0 by default) is filtered by ``g_J(H_eff)`` with ``J``
    from :func:`cascade_lab.spectral.regular_value_select`; then
    ``psi(t) = U e^{-i Lambda t} U* psi0`` exactly.  Slopes of
    ``||psi||_{-r}`` and ``||psi||_r`` are fitted on ``fit_window``, by
    default ``[t_end / 4, t_end]`` with ``t_end`` the last sample before the
    guard breach (or the horizon).  The filtered packet leaves the low modes
    over a time of order ``1 / |J|``, so early windows still see that
    transient; the fit on ``reference_window`` is reported alongside.
    """
    from .spectral import regular_value_select

    H = effective_hamiltonian(v, basis).dense()
    H = 0.5 * (H + H.conj().T)
    lam, U = np.linalg.eigh(H)
    seed = seed_state or StateVector.mode(0, basis)
    coeffs = U.conj().T @ seed.coefficients
    sel = None
    if filtered:
        sel = window or regular_value_select(v)
        coeffs = sel.g_J(lam) * coeffs
    fnorm = float(np.linalg.norm(coeffs))
    if fnorm < 1e-8:
        raise EmptySpectralWindow("empty spectral window: the filtered state vanishes")
    coeffs = coeffs / fnorm
    if times is None:
        times = np.unique(np.concatenate([np.linspace(0.0, 20.0, 41), np.geomspace(20.0, horizon, 400)]))
    series = TimeSeries((r,))
    for t in times:
        psi = U @ (np.exp(-1j * lam * t) * coeffs)
        series.record(t, psi)
        if _tail_mass(psi) > tail_guard:
            series.contaminated = True
            series.guard_time = float(t)
            break
    t_arr = np.asarray(series.t)
    t_end = float(t_arr[-2] if series.contaminated and t_arr.size > 1 else t_arr[-1])
    lo, hi = fit_window if fit_window is not None else (0.25 * t_end, t_end)
    hi = min(hi, t_end)
    fits = [None, None]
    if hi > lo:
        fits[0] = fit_power_law(t_arr, series.array("norm_negr", r), (lo, hi))
        fits[1] = fit_power_law(t_arr, series.array("norm_r", r), (lo, hi))
    reference = None
    if reference_window and reference_window[1] <= t_end:
        reference = {
            "decay": fit_power_law(t_arr, series.array("norm_negr", r), reference_window),
            "growth": fit_power_law(t_arr, series.array("norm_r", r), reference_window),
        }
    return DecayResult(series, fits[0], fits[1], sel, fnorm, (lam, U), reference)


def _dense_propagator(drive: DrivenHamiltonian, t_grid: Sequence[float], dt: float) -> list:
    """Interaction-picture propagators ``U_I(t, 0)`` at the requested times."""
    N = drive.basis.size
    Uc = np.eye(N, dtype=complex)
    out = []
    t = 0.0
    for target in t_grid:
        steps = int(round((target - t) / dt))
        for _ in range(steps):
            A = drive.interaction(t + 0.5 * dt).toarray()
            Uc = la.expm(-1j * dt * A) @ Uc
            t += dt
        out.append(Uc.copy())
    return out


def duhamel_tail_bound(v: AngleTimeSymbol, r: float, basis: HermiteBasis, times=(1.0, 2.0, 4.0, 8.0, 16.0, 32.0),
                       dt: float = 0.05, s_values=(0.0,)) -> dict:
    """``||U(t, s)||_{L(H^r)}`` on a grid and its growth exponent in ``<t - s>``.

    The lab-frame propagator differs from the interaction one by diagonal
    phases, which commute with ``H0^r``, so ``||H0^r U_I H0^-r||`` is used.
    """
    drive = DrivenHamiltonian(v, basis)
    grid = sorted(set(times) | set(s_values))
    props = dict(zip(grid, _dense_propagator(drive, grid, dt)))
    h = basis.eigenvalues
    rows = []
    for s in s_values:
        Us_inv = props[s].conj().T
        for t in times:
            if t < s:
                continue
            Uts = props[t] @ Us_inv
            W = (h[:, None] ** r) * Uts * (h[None, :] ** -r)
            rows.append({"t": float(t), "s": float(s), "norm": float(np.linalg.norm(W, 2))})
    lag = np.array([math.sqrt(1.0 + (row["t"] - row["s"]) ** 2) for row in rows])
    norms = np.array([row["norm"] for row in rows])
    usable = lag > 1.5
    exponent = 0.0
    if usable.sum() >= 2 and np.ptp(np.log(norms[usable])) > 0:
        exponent = float(np.polyfit(np.log(lag[usable]), np.log(norms[usable]), 1)[0])
    return {"r": r, "samples": rows, "exponent": exponent, "bound": 1.2 * r, "passed": exponent <= 1.2 * r}


def write_gnuplot_loglog(csv_path, script_path, columns: dict, fits: dict | None = None, title: str = "") -> Path:
    """Static gnuplot script plotting CSV columns on log-log axes with slope guides."""
    csv_path = Path(csv_path)
    lines = [
        "set datafile separator ','",
        "set logscale xy",
        "set key top left",
        "set xlabel 't'",
        "set ylabel 'norm'",
        f"set title '{title}'",
    ]
    plots = [f"'{csv_path.name}' using 1:{col} skip 1 with lines title '{name}'" for name, col in columns.items()]
    for name, fit in (fits or {}).items():
        if fit:
            plots.append(f"exp({float(fit['intercept'])!r})*x**({float(fit['slope'])!r}) dashtype 2 title '{name} slope {fit['slope']:.3f}'")
    lines.append("plot " + ", \\\n     ".join(plots))
    path = Path(script_path)
    path.write_text("\n".join(lines) + "\n")
    return path
