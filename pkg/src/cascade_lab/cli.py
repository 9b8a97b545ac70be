"""Command-line experiment runner.

Every subcommand reads an optional JSON config, runs one experiment in its
own directory under the output root and writes CSV series, a JSON summary,
gnuplot scripts and a manifest.  Exit codes: 0 pass, 1 error, 2 acceptance
band failure, 3 truncation guard breach.
"""

from __future__ import annotations

import argparse
import concurrent.futures as cf
import copy
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, config_hash, load_config, resolve_symbol, validate_config
from .normal_form import first_step_effective, resonant_decompose, verify_reconstruction
from .propagator import (
    EmptySpectralWindow,
    EvolutionConfig,
    StateVector,
    decay_experiment,
    effective_hamiltonian,
    effective_hamiltonian_oracle,
    evolve,
    fit_power_law,
    write_gnuplot_loglog,
)
from .quantization import HermiteBasis, dump_matrix, verify_egorov, weyl_quantize, weyl_quantize_oracle
from .spectral import (
    BumpFunction,
    FilterWindow,
    eigen_cluster_check,
    essential_spectrum_interval,
    matrix_mourre_diagnostic,
    regular_value_select,
    structural_residuals,
    symbol_mourre_check,
)
from .symbols import is_transporter, poisson_bracket_h0, resonant_average, resonant_average_oracle

__all__ = ["main", "run", "sweep", "emit_plots", "EXIT_PASS", "EXIT_ERROR", "EXIT_BAND", "EXIT_GUARD"]

log = logging.getLogger("cascade_lab")

EXIT_PASS, EXIT_ERROR, EXIT_BAND, EXIT_GUARD = 0, 1, 2, 3
OUT_ENV = "CASCADE_LAB_OUT"

SUBCOMMANDS = {
    "check-transporter": "transporter-check",
    "resonant-average": "resonant-average",
    "quantize": "quantize",
    "evolve": "evolve-growth",
    "decay": "decay",
    "egorov": "egorov",
    "mourre": "mourre",
    "spectrum": "spectrum",
    "normal-form": "normal-form",
    "sweep": "sweep",
}

DEFAULT_N = {
    "quantize": 64,
    "evolve-growth": 1024,
    "decay": 2048,
    "egorov": 256,
    "normal-form": 512,
}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return {"re": obj.real, "im": obj.imag}
    return obj


def _write_atomic(path: Path, text: str):
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_json(path: Path, obj) -> Path:
    _write_atomic(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")
    return path


# ---------------------------------------------------------------------------
# experiments: each returns (summary, exit code, guard events)
# ---------------------------------------------------------------------------


class _Run:
    def __init__(self, cfg: dict, run_dir: Path):
        self.cfg = cfg
        self.dir = run_dir
        self.files: list[str] = []
        self.guard_events: list[dict] = []
        self.params = cfg.get("params", {})
        self.seed = int(cfg.get("seed", 0))
        self.symbol = resolve_symbol(cfg.get("symbol"), cfg.get("_source_dir"))

    def N(self, kind: str) -> int:
        return int(self.cfg.get("N", DEFAULT_N.get(kind, 256)))

    def out(self, name: str) -> Path:
        path = self.dir / name
        self.files.append(name)
        return path


def _exp_transporter(run: _Run):
    verdict = is_transporter(run.symbol, tol=float(run.params.get("tol", 1e-8)))
    return verdict.to_json(), EXIT_PASS


def _exp_resonant(run: _Run):
    v = run.symbol
    avg = resonant_average(v)
    nodes = max(64, 4 * v.max_harmonic + 1)
    theta, oracle = resonant_average_oracle(v, nodes, nodes)
    direct = avg.evaluate_action_angle(0.0, theta, 1.0)
    residual = float(np.max(np.abs(direct - oracle)))
    summary = {
        "average": avg.to_json(),
        "bracket_with_h0": poisson_bracket_h0(avg).to_json(),
        "oracle_residual": residual,
    }
    return summary, EXIT_PASS if residual <= 1e-10 else EXIT_BAND


def _exp_quantize(run: _Run):
    N = run.N("quantize")
    basis = HermiteBasis(N)
    t = float(run.params.get("t", 0.0))
    M = weyl_quantize(run.symbol, basis, t=t)
    csv_path, meta_path = dump_matrix(M, run.out("matrix.csv"), run.symbol)
    run.files.append(meta_path.name)
    summary = {"N": N, "t": t, "bands": sorted(M.bands), "hermitian_defect": M.hermitian_defect()}
    if N <= int(run.params.get("oracle_max_N", 16)):
        oracle = weyl_quantize_oracle(run.symbol, basis, t=t)
        summary["oracle_residual"] = float(np.max(np.abs(oracle.dense() - M.dense())))
    ok = summary["hermitian_defect"] <= 1e-12 and summary.get("oracle_residual", 0.0) <= 1e-8
    return summary, EXIT_PASS if ok else EXIT_BAND


def _fit_window(run: _Run, t_end: float, default=(20.0, 200.0)):
    lo, hi = run.cfg.get("fit_window", default)
    return float(lo), float(min(hi, t_end))


def _exp_evolve(run: _Run):
    v = run.symbol
    N = run.N("evolve-growth")
    basis = HermiteBasis(N)
    integ = run.cfg.get("integrator", {})
    r_values = tuple(run.cfg.get("r", [1.0]))
    config = EvolutionConfig(
        dt=float(integ.get("dt", 0.05)),
        T=float(integ.get("T", 200.0)),
        scheme=integ.get("scheme", "exponential-midpoint"),
        tail_guard=float(integ.get("tail_guard", 0.01)),
        r_values=r_values,
        stride=int(integ.get("stride", 10)),
    )
    init = run.params.get("initial", "mode0")
    if init == "random":
        u0 = StateVector.random(basis, np.random.default_rng(run.seed), decay=2.0)
    else:
        u0 = StateVector.mode(int(run.params.get("mode", 0)), basis)
    series, final = evolve(u0, v, config)
    series.write_csv(run.out("series.csv"))
    t = np.asarray(series.t)
    t_end = float(t[-2] if series.contaminated and t.size > 1 else t[-1])
    lo, hi = _fit_window(run, t_end)
    fits, code = {}, EXIT_PASS
    transporter = is_transporter(v).verdict
    for r in r_values:
        y = series.array("norm_r", r)
        fit = fit_power_law(t, y, (lo, hi)) if hi > lo else None
        onset = next((float(tt) for tt, yy in zip(t, y) if yy >= 2.0 * y[0]), None)
        band = None
        if fit is not None:
            ceiling_ok = fit["slope"] <= 1.1 * r
            band_ok = (0.8 * r <= fit["slope"] <= 1.1 * r) if transporter else True
            band = {"ceiling": ceiling_ok, "growth_band": band_ok if transporter else None}
            if not (ceiling_ok and band_ok):
                code = EXIT_BAND
        fits[str(r)] = {"fit": fit, "onset_time": onset, "band": band}
    if series.contaminated:
        run.guard_events.append({"t": series.guard_time, "tail_mass": series.tail_mass[-1]})
        code = EXIT_GUARD
    write_gnuplot_loglog(run.dir / "series.csv", run.out("growth.gp"),
                         {f"norm_{r:g}": 3 + i for i, r in enumerate(r_values)},
                         {f"r={r:g}": fits[str(r)]["fit"] for r in r_values}, title="Sobolev norm growth")
    summary = {
        "N": N,
        "config": config.to_json(),
        "config_hash": config.digest(),
        "transporter": transporter,
        "fits": fits,
        "l2_drift": abs(series.norm0[-1] - series.norm0[0]),
        "contaminated": series.contaminated,
        "guard_time": series.guard_time,
        "final_mean_mode": final.mean_mode(),
    }
    return summary, code


def _exp_decay(run: _Run):
    v = run.symbol
    N = run.N("decay")
    r = float(run.cfg.get("r", [1.0])[0])
    window = None
    if "filter" in run.params:
        f = run.params["filter"]
        window = FilterWindow(BumpFunction(float(f["center"]), float(f["inner"]), float(f["outer"])))
    result = decay_experiment(
        v,
        r,
        HermiteBasis(N),
        fit_window=tuple(run.cfg["fit_window"]) if "fit_window" in run.cfg else None,
        tail_guard=float(run.cfg.get("integrator", {}).get("tail_guard", 0.01)),
        filtered=bool(run.params.get("filtered", True)),
        horizon=float(run.params.get("horizon", 1e4)),
        window=window,
    )
    result.series.write_csv(run.out("series.csv"))
    summary = result.to_json()
    summary["window"] = result.window.to_json() if result.window else None
    summary["N"] = N
    if result.series.contaminated:
        run.guard_events.append({"t": result.series.guard_time, "note": "decay run stops at the guard by design"})
    write_gnuplot_loglog(run.dir / "series.csv", run.out("decay.gp"), {f"norm_neg{r:g}": 4, f"norm_{r:g}": 3},
                         {"decay": result.decay_fit, "growth": result.growth_fit}, title="Local energy decay")
    code = EXIT_PASS
    if run.params.get("filtered", True):
        d, g = result.decay_fit, result.growth_fit
        if d is None or g is None:
            code = EXIT_BAND
        elif not (-1.2 * r <= d["slope"] <= -0.7 * r and 0.7 * r <= g["slope"] <= 1.1 * r):
            code = EXIT_BAND
    return summary, code


def _exp_egorov(run: _Run):
    N = run.N("egorov")
    basis = HermiteBasis(N)
    taus = [float(x) for x in run.params.get("taus", [0.3, 0.7, math.pi / 2])]
    residuals = {f"{tau:.6g}": verify_egorov(run.symbol.at_time(0.0), tau, basis) for tau in taus}
    worst = max(residuals.values())
    return {"N": N, "residuals": residuals, "max_residual": worst}, EXIT_PASS if worst <= 1e-8 else EXIT_BAND


def _exp_mourre(run: _Run):
    v = run.symbol
    sizes = tuple(int(n) for n in run.params.get("sizes", [256, 512, 1024]))
    window = regular_value_select(v)
    sym = symbol_mourre_check(v, window)
    struct = structural_residuals(v)
    mat = matrix_mourre_diagnostic(v, window, sizes, return_spectra=True)
    spectra = mat.pop("spectra")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "index", "eigenvalue"])
    for N, q in spectra.items():
        for i, x in enumerate(q):
            w.writerow([N, i, repr(float(x))])
    _write_atomic(run.out("mourre_eigenvalues.csv"), buf.getvalue())
    summary = {
        "I0": list(window.I0),
        "lambda_star": window.lambda_star,
        "rho": window.rho,
        "symbol_check": sym,
        "negative_counts": mat["negative_counts"],
        "residuals": struct,
        "matrix": mat,
    }
    ok = sym["holds"] and sym["rho"] >= 0.1 and struct["w_outer"] <= 1e-12 and mat["stable"]
    return summary, EXIT_PASS if ok else EXIT_BAND


def _exp_spectrum(run: _Run):
    v = run.symbol
    sizes = tuple(int(n) for n in run.params.get("sizes", [256, 512, 1024]))
    report = eigen_cluster_check(v, sizes, delta=float(run.params.get("delta", 0.05)))
    N = sizes[-1]
    H = effective_hamiltonian(v, HermiteBasis(N)).dense()
    lam = np.linalg.eigvalsh(0.5 * (H + H.conj().T))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "eigenvalue"])
    for i, x in enumerate(lam):
        w.writerow([i, repr(float(x))])
    _write_atomic(run.out("eigenvalues.csv"), buf.getvalue())
    report["essential_interval"] = list(essential_spectrum_interval(v))
    return report, EXIT_PASS if report["passed"] else EXIT_BAND


def _exp_normal_form(run: _Run):
    v = run.symbol
    N = run.N("normal-form")
    basis = HermiteBasis(N)
    parts = resonant_decompose(v)
    recon = verify_reconstruction(v)
    a = effective_hamiltonian(v, basis).dense()
    b = effective_hamiltonian_oracle(v, basis, int(run.params.get("nodes", 64))).dense()
    k = basis.interior(0.9)
    avg_residual = float(np.max(np.abs(a[:k, :k] - b[:k, :k])))
    step = first_step_effective(v, basis)
    report = step["remainder_report"]
    summary = {
        "N": N,
        "resonant": parts["resonant"].to_json(),
        "chi": parts["chi"].to_json(),
        "reconstruction_residual": recon,
        "average_oracle_residual": avg_residual,
        "remainder_report": report,
    }
    ok = recon <= 1e-10 and avg_residual <= 1e-6 and report["max_ratio"] <= 0.5
    return summary, EXIT_PASS if ok else EXIT_BAND


_DISPATCH = {
    "transporter-check": _exp_transporter,
    "resonant-average": _exp_resonant,
    "quantize": _exp_quantize,
    "evolve-growth": _exp_evolve,
    "decay": _exp_decay,
    "egorov": _exp_egorov,
    "mourre": _exp_mourre,
    "spectrum": _exp_spectrum,
    "normal-form": _exp_normal_form,
}


# ---------------------------------------------------------------------------
# run, sweep, plots
# ---------------------------------------------------------------------------


def _out_root(cfg: dict, out: str | None) -> Path:
    root = out or cfg.get("out") or os.environ.get(OUT_ENV) or "cascade_runs"
    return Path(root)


def run(cfg: dict, out: str | None = None) -> tuple[dict, int]:
    """Run one experiment; returns ``(manifest, exit code)``."""
    kind = cfg.get("experiment")
    if kind == "sweep":
        return sweep(cfg, out)
    if kind not in _DISPATCH:
        raise ConfigError(f"unknown experiment {kind!r}")
    digest = config_hash(cfg)
    name = cfg.get("name") or f"{kind}-{digest}"
    run_dir = _out_root(cfg, out) / name
    run_dir.mkdir(parents=True, exist_ok=True)
    started = time.time()
    r = _Run(cfg, run_dir)
    error = None
    try:
        summary, code = _DISPATCH[kind](r)
    except EmptySpectralWindow as exc:
        summary, code, error = {"error": str(exc)}, EXIT_ERROR, str(exc)
    except Exception as exc:  # reported in the manifest, mapped to exit 1
        log.debug("run failed", exc_info=True)
        summary, code, error = {"error": f"{type(exc).__name__}: {exc}"}, EXIT_ERROR, f"{type(exc).__name__}: {exc}"
    summary_path = r.out("summary.json")
    _write_json(summary_path, {"experiment": kind, **summary})
    manifest = {
        "experiment": kind,
        "name": name,
        "config_hash": digest,
        "code_version": __version__,
        "seed": r.seed,
        "started": started,
        "finished": time.time(),
        "guard_events": r.guard_events,
        "files": sorted(set(r.files)),
        "exit_code": code,
        "error": error,
        "run_dir": str(run_dir),
    }
    _write_json(run_dir / "manifest.json", manifest)
    return {**manifest, "summary": summary}, code


def _set_path(cfg: dict, path: str, value):
    keys = path.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value


def _expand_sweep(cfg: dict) -> list[dict]:
    runs = [copy.deepcopy(c) for c in cfg.get("runs", [])]
    if "vary" in cfg:
        base = cfg.get("base", {})
        for value in cfg["vary"]["values"]:
            c = copy.deepcopy(base)
            _set_path(c, cfg["vary"]["path"], value)
            c.setdefault("name", f"{c.get('experiment', 'run')}-{cfg['vary']['path']}={value}")
            runs.append(c)
    return runs


def _sweep_worker(args):
    cfg, out = args
    try:
        validate_config({k: v for k, v in cfg.items() if not k.startswith("_")})
        if cfg.get("experiment") in (None, "sweep"):
            raise ConfigError("sweep entries need a non-sweep experiment")
        manifest, code = run(cfg, out)
        return {"manifest": manifest, "code": code, "error": manifest.get("error")}
    except Exception as exc:
        return {"manifest": None, "code": EXIT_ERROR, "error": f"{type(exc).__name__}: {exc}"}


def _row_metrics(manifest: dict | None) -> dict:
    if not manifest:
        return {}
    s = manifest.get("summary", {})
    out = {}
    if "fits" in s:
        for r, f in s["fits"].items():
            if f.get("fit"):
                out[f"slope_r{r}"] = f["fit"]["slope"]
            out[f"onset_r{r}"] = f.get("onset_time")
    if s.get("decay_fit"):
        out["decay_slope"] = s["decay_fit"]["slope"]
    if s.get("growth_fit"):
        out["growth_slope"] = s["growth_fit"]["slope"]
    if "verdict" in s:
        out["verdict"] = s["verdict"]
    return out


def sweep(cfg: dict, out: str | None = None, workers: int | None = None) -> tuple[dict, int]:
    """Run the expanded configs concurrently and aggregate one CSV row per run."""
    runs = _expand_sweep(cfg)
    root = _out_root(cfg, out)
    sweep_dir = root / (cfg.get("name") or f"sweep-{config_hash(cfg)}")
    sweep_dir.mkdir(parents=True, exist_ok=True)
    for c in runs:
        c.setdefault("out", str(sweep_dir))
        if "_source_dir" in cfg:
            c.setdefault("_source_dir", cfg["_source_dir"])
    workers = workers or cfg.get("workers") or os.cpu_count() or 1
    results = []
    if runs:
        with cf.ProcessPoolExecutor(max_workers=min(workers, len(runs))) as pool:
            results = list(pool.map(_sweep_worker, [(c, None) for c in runs]))
    rows = []
    for i, (c, res) in enumerate(zip(runs, results)):
        row = {"index": i, "name": c.get("name", ""), "experiment": c.get("experiment", ""), "exit_code": res["code"],
               "error": res["error"] or ""}
        row.update(_row_metrics(res["manifest"]))
        rows.append(row)
    columns = ["index", "name", "experiment", "exit_code", "error"]
    for row in rows:
        for k in row:
            if k not in columns:
                columns.append(k)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", restval="")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})
    _write_atomic(sweep_dir / "sweep.csv", buf.getvalue())
    codes = [row["exit_code"] for row in rows]
    code = EXIT_PASS
    for c in (EXIT_ERROR, EXIT_GUARD, EXIT_BAND):
        if c in codes:
            code = c
            break
    manifest = {
        "experiment": "sweep",
        "config_hash": config_hash(cfg),
        "code_version": __version__,
        "runs": len(rows),
        "failures": sum(1 for c in codes if c == EXIT_ERROR),
        "files": ["sweep.csv"],
        "exit_code": code,
        "run_dir": str(sweep_dir),
        "rows": rows,
    }
    _write_json(sweep_dir / "manifest.json", {k: v for k, v in manifest.items() if k != "rows"})
    return manifest, code


def emit_plots(run_dir) -> list[Path]:
    """Gnuplot scripts for every series or eigenvalue CSV found in ``run_dir``."""
    run_dir = Path(run_dir)
    produced = []
    if not run_dir.is_dir():
        warnings.warn(f"{run_dir} is not a directory; no plots written", RuntimeWarning, stacklevel=2)
        return produced
    summary = {}
    if (run_dir / "summary.json").exists():
        summary = json.loads((run_dir / "summary.json").read_text())
    for csv_path in sorted(run_dir.glob("*.csv")):
        with open(csv_path) as fh:
            header = fh.readline().strip().split(",")
        if header and header[0] == "t":
            cols = {name: i + 1 for i, name in enumerate(header) if name.startswith("norm_")}
            fits = {}
            for r, f in summary.get("fits", {}).items():
                fits[f"r={r}"] = f.get("fit")
            if summary.get("decay_fit"):
                fits["decay"] = summary["decay_fit"]
            if summary.get("growth_fit"):
                fits["growth"] = summary["growth_fit"]
            produced.append(write_gnuplot_loglog(csv_path, csv_path.with_suffix(".gp"), cols, fits,
                                                 title=csv_path.stem))
        elif "eigenvalue" in header:
            col = header.index("eigenvalue") + 1
            idx = header.index("index") + 1
            script = csv_path.with_suffix(".gp")
            script.write_text(
                "set datafile separator ','\n"
                "set xlabel 'index'\nset ylabel 'eigenvalue'\n"
                f"plot '{csv_path.name}' using {idx}:{col} skip 1 with points pt 7 ps 0.4 title '{csv_path.stem}'\n"
            )
            produced.append(script)
    if not produced:
        warnings.warn(f"no series found in {run_dir}; no plots written", RuntimeWarning, stacklevel=2)
    return produced


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cascade-lab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in list(SUBCOMMANDS) + ["plot"]:
        sp_ = sub.add_parser(name)
        if name == "plot":
            sp_.add_argument("run_dir")
            continue
        sp_.add_argument("--config", help="JSON experiment config")
        sp_.add_argument("--out", help=f"output root (default ${OUT_ENV} or ./cascade_runs)")
        sp_.add_argument("--seed", type=int)
        sp_.add_argument("--workers", type=int)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(message)s")
    if args.command == "plot":
        for path in emit_plots(args.run_dir):
            print(path)
        return EXIT_PASS
    kind = SUBCOMMANDS[args.command]
    try:
        cfg = load_config(args.config) if args.config else {}
        if cfg.get("experiment", kind) != kind:
            raise ConfigError(f"config declares experiment {cfg['experiment']!r} but subcommand runs {kind!r}")
        cfg["experiment"] = kind
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.workers is not None:
            cfg["workers"] = args.workers
        validate_config({k: v for k, v in cfg.items() if not k.startswith("_")})
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    try:
        manifest, code = run(cfg, args.out)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if manifest.get("error"):
        print(f"error: {manifest['error']}", file=sys.stderr)
    print(json.dumps(_jsonable({k: v for k, v in manifest.items() if k not in ("rows",)}), sort_keys=True))
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
