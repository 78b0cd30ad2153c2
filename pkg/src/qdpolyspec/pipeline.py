"""Stage drivers behind the command line: simulate, estimate, fit, report."""

from __future__ import annotations

import dataclasses
import os
import sys
import time
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import io
from .errors import NegativeDerivedRate
from .estimation import EstimationConfig, background_subtract, estimate_polyspectra
from .fitting import (
    TOPOLOGIES,
    Acquisition,
    FitData,
    FitOptions,
    FitProblem,
    bootstrap_errors,
    fit_spectra,
    model_scan,
    noise_trace,
    topology,
)
from .markov import MeasurementOperator
from .model_spectra import model_spectrum
from .simulate import DetectorTrace, simulate_trace
from .wtd import (
    HIGH,
    LOW,
    detect_jumps,
    empirical_wtd,
    equiv_model,
    false_trigger_rate,
    noise_sigma_estimate,
    equiv_params_from_wtd,
    fit_wtd,
)

DEFAULT_SEED = 20240601
THREADS_ENV = "QDPOLYSPEC_THREADS"
RATE_ROWS = ((0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1))
EQUIV_TOPOLOGIES = ("m1", "m2", "m3", "m4")
# WTD-derived rates are tabulated only if noise triggers stay below this share of detected jumps
MAX_FALSE_TRIGGER_SHARE = 0.01


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")


class ConfigError(ValueError):
    """Bad configuration or unresolvable input path (``flag`` names the option)."""

    def __init__(self, flag: str, message: str):
        self.flag = flag
        super().__init__(f"{flag}: {message}")


@dataclass
class RunConfig:
    """Parameters of one run; config-file values are overridden by flags.

    File keys use the flag names with dashes replaced by underscores.
    """

    out: str = "qdpolyspec-out"
    seed: int = DEFAULT_SEED
    model: Optional[str] = None
    trace: Optional[str] = None
    background: Optional[str] = None
    simulate_background: bool = False
    duration: float = 90.0
    dt: float = 2.5e-6
    noise: Optional[float] = None
    format: str = "raw"
    orders: tuple = (2, 3, 4)
    f_max: float = 5000.0
    f_resolution: float = 7.5
    window: str = "acg"
    parts: int = 32
    overlap: float = 0.0
    include_dc: bool = False
    models: tuple = tuple(TOPOLOGIES)
    restarts: int = 8
    aic_form: str = "standard"
    weights: str = "local"
    bootstrap: int = 0
    bootstrap_models: tuple = ("m1",)
    levels: Optional[tuple] = None
    hysteresis: float = 0.25
    wtd_form: str = "bi"
    wtd_bins: int = 60
    spectra_csv: bool = True

    def estimation(self) -> EstimationConfig:
        return EstimationConfig(self.f_max, self.f_resolution, self.window, self.overlap, self.parts)

    def fit_options(self) -> FitOptions:
        return FitOptions(restarts=self.restarts, aic_form=self.aic_form)

    def to_dict(self) -> dict:
        return io._jsonable(dataclasses.asdict(self))


_TUPLE_KEYS = {"orders": int, "models": str, "bootstrap_models": str, "levels": float}


def _coerce(key, value):
    if value is None:
        return None
    if key in _TUPLE_KEYS:
        if isinstance(value, str):
            value = [v for v in value.replace(" ", "").split(",") if v]
        return tuple(_TUPLE_KEYS[key](v) for v in value)
    return value


def load_config(path=None, overrides: Optional[dict] = None) -> RunConfig:
    """Defaults, then the YAML config file, then explicit ``overrides``."""
    values = {}
    names = {f.name for f in dataclasses.fields(RunConfig)}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError("--config", f"file not found: {path}")
        data = yaml.safe_load(p.read_text()) or {}
        if not isinstance(data, dict):
            raise ConfigError("--config", f"{path} must hold a mapping")
        for k, v in data.items():
            key = k.replace("-", "_")
            if key not in names:
                raise ConfigError("--config", f"unknown key '{k}' in {path}")
            # relative paths in a config file are relative to the file
            if key in ("model", "trace", "background") and v is not None and not os.path.isabs(v):
                v = str(p.parent / v)
            values[key] = v
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    values = {k: _coerce(k, v) for k, v in values.items()}
    cfg = RunConfig(**values)
    for o in cfg.orders:
        if o not in (1, 2, 3, 4):
            raise ConfigError("--orders", f"order {o} not in 1..4")
    for m in cfg.models + cfg.bootstrap_models:
        if m not in TOPOLOGIES:
            raise ConfigError("--models", f"unknown model '{m}'; known: {', '.join(TOPOLOGIES)}")
    return cfg


def _require_file(flag, path):
    if path is not None and not Path(path).is_file():
        raise ConfigError(flag, f"file not found: {path}")


def set_threads():
    value = os.environ.get(THREADS_ENV)
    if value:
        import numba

        numba.set_num_threads(max(1, min(int(value), numba.config.NUMBA_NUM_THREADS)))


class Run:
    """Bookkeeping for one command: stage status, outputs and the manifest."""

    def __init__(self, command: str, cfg: RunConfig, log=None):
        self.command = command
        self.cfg = cfg
        self.outdir = Path(cfg.out)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.stages = {}
        self.outputs = []
        self.model_hashes = {}
        self.seeds = {"seed": cfg.seed}
        self.timings = {}
        self.log = log or (lambda msg: print(msg, file=sys.stderr))

    def path(self, name) -> Path:
        p = self.outdir / name
        self.outputs.append(p)
        return p

    def stage(self, name):
        return _Stage(self, name)

    def skip(self, name, reason):
        self.stages[name] = {"status": "skipped", "reason": reason}

    def finish(self, extra=None) -> Path:
        ok = all(s["status"] != "failed" for s in self.stages.values())
        return io.write_manifest(
            self.outdir, self.command, self.cfg.to_dict(), self.seeds, self.model_hashes,
            self.outputs, "ok" if ok else "failed",
            {"stages": self.stages, **(extra or {})},
        )


class _Stage:
    def __init__(self, run: Run, name: str):
        self.run, self.name = run, name

    def __enter__(self):
        self.t0 = time.time()
        self.run.log(f"[{self.name}] start")
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.time() - self.t0
        if exc is None:
            self.run.stages[self.name] = {"status": "ok"}
            self.run.log(f"[{self.name}] done in {elapsed:.1f} s")
            return False
        if isinstance(exc, (KeyboardInterrupt, SystemExit)):
            return False
        self.run.stages[self.name] = {"status": "failed", "error": f"{type(exc).__name__}: {exc}"}
        self.run.finish()
        raise StageError(self.name, exc) from exc


# -- shared pieces ----------------------------------------------------------

def _noise_level(cfg: RunConfig, spec) -> float:
    if cfg.noise is not None:
        return float(cfg.noise)
    return float(spec.noise) if spec is not None else 0.0


def _simulated_trace(run: Run, spec) -> DetectorTrace:
    cfg = run.cfg
    tr = simulate_trace(spec.model, cfg.duration, cfg.dt, _noise_level(cfg, spec), cfg.seed)
    tr.meta.update(seed=cfg.seed, index=0, model_hash=spec.model.fingerprint())
    return tr


def _background_trace(run: Run, n_samples: int, dt: float, sigma: float) -> Optional[DetectorTrace]:
    cfg = run.cfg
    if cfg.background is not None:
        return io.load_trace(cfg.background)
    if cfg.simulate_background and sigma > 0:
        run.seeds["background"] = [cfg.seed, 0, 2]
        return noise_trace(n_samples, dt, sigma, cfg.seed, 0)
    return None


def _estimate(trace: DetectorTrace, background, cfg: RunConfig) -> dict:
    est = cfg.estimation()
    spectra = estimate_polyspectra(trace, cfg.orders, est)
    if background is not None:
        if abs(background.dt - trace.dt) > 1e-12 * trace.dt:
            raise ValueError(f"background dt {background.dt} differs from trace dt {trace.dt}")
        bg = estimate_polyspectra(background, [o for o in cfg.orders if o >= 2], est)
        spectra = {o: background_subtract(s, bg[o]) if o in bg else s for o, s in spectra.items()}
    acq = {
        "n_samples": len(trace),
        "dt": trace.dt,
        "noise_sigma": trace.noise_sigma,
        "background": background is not None,
        "estimation": est.to_dict(),
    }
    return {o: dataclasses.replace(s, meta={**s.meta, "acquisition": acq}) for o, s in spectra.items()}


def _write_spectra(run: Run, spectra: dict, models: Optional[dict] = None, csv: bool = True):
    for o, s in sorted(spectra.items()):
        io.save_spectrum(run.path(f"spectrum_s{o}.json"), s)
        if csv and o >= 2:
            io.save_spectrum_csv(run.path(f"spectrum_s{o}.csv"), s, None if models is None else models.get(o))


def _acquisition(spectra: dict, cfg: RunConfig, orders) -> Acquisition:
    meta = next(s.meta for s in spectra.values() if s.order >= 2)
    acq = meta.get("acquisition", {})
    dt = float(acq.get("dt", meta.get("dt")))
    n = acq.get("n_samples")
    t_end = n * dt if n is not None else meta["segments"] * meta["segment_length"] * dt
    sigma = cfg.noise if cfg.noise is not None else acq.get("noise_sigma")
    if sigma is None:
        raise ConfigError("--noise", "noise level unknown for bootstrap replicates; pass --noise")
    est = EstimationConfig(**acq["estimation"]) if "estimation" in acq else cfg.estimation()
    return Acquisition(float(t_end), dt, float(sigma), est, tuple(orders), bool(acq.get("background", False)))


def _fmt(value, err=None) -> str:
    if value is None or not np.isfinite(value):
        return "-"
    if err is None or not np.isfinite(err):
        return f"{value:.0f}" if abs(value) >= 10 else f"{value:.3g}"
    return f"{value:.0f} ± {err:.0f}" if abs(value) >= 10 else f"{value:.3g} ± {err:.2g}"


def rate_table(reports: list, wtd_models: Optional[dict] = None) -> dict:
    """Rates (± errors) per candidate plus an AIC row, shaped like a results table."""
    columns, cells = [], {}
    wtd_models = wtd_models or {}
    known = list(TOPOLOGIES)
    reports = sorted(reports, key=lambda r: known.index(r.topology) if r.topology in known else len(known))
    for rep in reports:
        col = f"{rep.topology} QPS" if rep.topology in wtd_models else rep.topology
        columns.append(col)
        for pair in RATE_ROWS:
            v = rep.rates.get(pair) if rep.error is None or rep.rates else None
            e = rep.rate_errors.get(pair) if rep.rate_errors else None
            cells[(f"gamma_{pair[0]}{pair[1]}", col)] = _fmt(v, e) if v is not None else "-"
        cells[("AIC", col)] = f"{rep.aic:.1f}" if np.isfinite(rep.aic) else "failed"
        if rep.topology in wtd_models:
            wcol = f"{rep.topology} WTD"
            columns.append(wcol)
            rates, errs = wtd_models[rep.topology]
            for pair in RATE_ROWS:
                cells[(f"gamma_{pair[0]}{pair[1]}", wcol)] = _fmt(rates[pair], errs.get(pair)) if pair in rates else "-"
            cells[("AIC", wcol)] = "-"
    rows = [f"gamma_{i}{j}" for i, j in RATE_ROWS] + ["AIC"]
    return {"columns": columns, "rows": rows, "cells": {f"{r}|{c}": cells.get((r, c), "-") for r in rows for c in columns}}


def write_table(run: Run, table: dict, stem: str = "table_rates"):
    cols, rows, cells = table["columns"], table["rows"], table["cells"]
    with open(run.path(f"{stem}.csv"), "w") as fh:
        fh.write(",".join(["rate_hz"] + cols) + "\n")
        for r in rows:
            fh.write(",".join([r] + [cells[f"{r}|{c}"] for c in cols]) + "\n")
    lines = ["| rates / Hz | " + " | ".join(cols) + " |", "|---" * (len(cols) + 1) + "|"]
    for r in rows:
        lines.append(f"| {r} | " + " | ".join(cells[f"{r}|{c}"] for c in cols) + " |")
    run.path(f"{stem}.md").write_text("\n".join(lines) + "\n")
    return "\n".join(lines)


def wtd_equivalent_rates(low_fit, high_fit) -> dict:
    """Model 1..4 rates implied by the WTD fits, with delta-method errors."""
    base = np.array([low_fit.params[0], *high_fit.params])
    cov = np.zeros((4, 4))
    cov[0, 0] = low_fit.covariance[0, 0]
    cov[1:, 1:] = high_fit.covariance

    def rates_of(p, which):
        from .wtd import WtdAnalytic

        prm = equiv_params_from_wtd(WtdAnalytic.mono(p[0]), WtdAnalytic.bi(*p[1:]))
        return equiv_model(prm, which).rates

    out = {}
    for k, name in enumerate(EQUIV_TOPOLOGIES, start=1):
        try:
            rates = dict(rates_of(base, k))
        except NegativeDerivedRate:
            continue
        jac = np.zeros((len(rates), 4))
        keys = list(rates)
        ok = np.all(np.isfinite(cov))
        for c in range(4):
            if not ok:
                break
            h = 1e-6 * base[c]
            up, dn = base.copy(), base.copy()
            up[c] += h
            dn[c] -= h
            try:
                ru, rd = rates_of(up, k), rates_of(dn, k)
            except NegativeDerivedRate:
                ok = False
                break
            jac[:, c] = [(ru[q] - rd[q]) / (2 * h) for q in keys]
        errs = dict(zip(keys, np.sqrt(np.clip(np.diag(jac @ cov @ jac.T), 0, None)))) if ok else {}
        out[name] = (rates, errs)
    return out


def _wtd_stage(run: Run, trace: DetectorTrace, levels) -> dict:
    cfg = run.cfg
    jumps = detect_jumps(trace, levels[0], levels[1], cfg.hysteresis)
    sigma = noise_sigma_estimate(trace.samples)
    false_rate = false_trigger_rate(sigma, levels[0], levels[1], trace.dt, cfg.hysteresis)
    jump_rate = jumps.n_jumps / jumps.t_end
    share = false_rate / jump_rate if jump_rate > 0 else np.inf
    summary = {"levels": list(levels), "detected_jumps": jumps.n_jumps, "noise_sigma_estimate": sigma,
               "step_to_noise": abs(levels[1] - levels[0]) / sigma if sigma > 0 else None,
               "false_trigger_share": share if np.isfinite(share) else None, "reliable": bool(share <= MAX_FALSE_TRIGGER_SHARE)}
    if not summary["reliable"]:
        run.log(f"[wtd] expected noise triggers are {share:.1%} of detected jumps; "
                "WTD rates left out of the table")
    fits = {}
    for tag, form in ((LOW, "mono"), (HIGH, cfg.wtd_form)):
        hist = empirical_wtd(jumps, tag, bins=cfg.wtd_bins)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            fit = fit_wtd(hist, form)
        fits[tag] = fit
        io.save_wtd_csv(run.path(f"wtd_{tag}.csv"), hist, fit.analytic)
        summary[tag] = {
            "form": form,
            "dwells": int(hist.total_dwells),
            "params": dict(zip(fit.param_names, map(float, fit.params))),
            "errors": dict(zip(fit.param_names, map(float, fit.errors))),
            "degenerate": fit.degenerate,
        }
    summary["fits"] = fits
    return summary


# -- commands ---------------------------------------------------------------

def cmd_simulate(cfg: RunConfig, log=None) -> Run:
    _require_file("--model", cfg.model)
    if cfg.model is None:
        raise ConfigError("--model", "a model file is required")
    run = Run("simulate", cfg, log)
    with run.stage("simulate"):
        spec = io.load_model(cfg.model)
        run.model_hashes["model"] = spec.model.fingerprint()
        tr = _simulated_trace(run, spec)
        run.seeds.update(jumps=[cfg.seed, 0, 0], noise=[cfg.seed, 0, 1])
        ext = "f64" if cfg.format == "raw" else "csv"
        for p in io.save_trace(run.outdir / f"trace.{ext}", tr, cfg.format):
            run.outputs.append(p)
        bg = _background_trace(run, len(tr), tr.dt, tr.noise_sigma) if cfg.simulate_background else None
        if bg is not None:
            bg.meta.update(seed=cfg.seed, index=0)
            for p in io.save_trace(run.outdir / f"background.{ext}", bg, cfg.format):
                run.outputs.append(p)
    run.log(f"model hash {spec.model.fingerprint()}")
    run.finish()
    return run


def cmd_spectra(cfg: RunConfig, log=None) -> Run:
    if cfg.trace is None:
        raise ConfigError("--trace", "a trace file is required")
    _require_file("--trace", cfg.trace)
    _require_file("--background", cfg.background)
    run = Run("spectra", cfg, log)
    with run.stage("spectra"):
        tr = io.load_trace(cfg.trace)
        bg = io.load_trace(cfg.background) if cfg.background else None
        spectra = _estimate(tr, bg, cfg)
        _write_spectra(run, spectra, csv=cfg.spectra_csv)
    run.finish()
    return run


def parse_grid(text: str) -> np.ndarray:
    """``"FMAX,FRES"`` gives ``0, FRES, ..., <= FMAX``; otherwise a frequency list."""
    parts = [float(v) for v in str(text).split(",") if v.strip()]
    if len(parts) == 2 and parts[1] < parts[0]:
        f_max, f_res = parts
        return np.arange(int(np.floor(f_max / f_res + 1e-9)) + 1) * f_res
    return np.array(sorted(parts))


def cmd_model_spectra(cfg: RunConfig, order: int, grid: np.ndarray, log=None) -> Run:
    if cfg.model is None:
        raise ConfigError("--model", "a model file is required")
    _require_file("--model", cfg.model)
    run = Run("model-spectra", cfg, log)
    with run.stage("model-spectra"):
        spec = io.load_model(cfg.model)
        run.model_hashes["model"] = spec.model.fingerprint()
        meas = MeasurementOperator.from_model(spec.model, spec.beta)
        g = (grid,) if order == 2 else (grid, grid)
        s = model_spectrum(spec.model, meas, order, () if order == 1 else g)
        io.save_spectrum(run.path(f"model_s{order}.json"), s)
    run.finish()
    return run


def cmd_wtd(cfg: RunConfig, log=None) -> Run:
    if cfg.trace is None:
        raise ConfigError("--trace", "a trace file is required")
    _require_file("--trace", cfg.trace)
    if cfg.levels is None or len(cfg.levels) != 2:
        raise ConfigError("--levels", "give the two output levels as LOW,HIGH")
    run = Run("wtd", cfg, log)
    with run.stage("wtd"):
        tr = io.load_trace(cfg.trace)
        summary = _wtd_stage(run, tr, tuple(cfg.levels))
        fits = summary.pop("fits")
        if summary["reliable"] and fits[HIGH].analytic.form == "bi":
            summary["equivalent_models"] = {
                k: {"rates_hz": {f"{i}{j}": v for (i, j), v in r.items()},
                    "errors_hz": {f"{i}{j}": v for (i, j), v in e.items()}}
                for k, (r, e) in wtd_equivalent_rates(fits[LOW], fits[HIGH]).items()
            }
        io.save_json(run.path("wtd_fit.json"), summary)
    run.finish()
    return run


def _load_fit_data(cfg: RunConfig):
    if cfg.trace is None:
        raise ConfigError("--data", "a spectra directory or file is required")
    spectra = io.load_spectra_dir(cfg.trace)
    orders = [o for o in cfg.orders if o in spectra]
    if not orders:
        raise ConfigError("--orders", f"none of the orders {cfg.orders} present in {cfg.trace}")
    return spectra, orders


def cmd_fit(cfg: RunConfig, log=None) -> Run:
    run = Run("fit", cfg, log)
    with run.stage("load"):
        spectra, orders = _load_fit_data(cfg)
        data = FitData(spectra, orders, cfg.include_dc, cfg.weights)
    for o in (2, 3, 4):
        if o not in orders:
            run.skip(f"order-{o}", "not requested or not present")
    reports = []
    for idx, name in enumerate(cfg.models):
        with run.stage(f"fit:{name}"):
            problem = FitProblem(topology(name), data)
            rep = fit_spectra(problem, seed=cfg.seed + idx, options=cfg.fit_options())
            if cfg.bootstrap > 0:
                acq = _acquisition(spectra, cfg, orders)
                run.seeds[f"bootstrap:{name}"] = cfg.seed + 1000
                bootstrap_errors(problem, rep, cfg.bootstrap, cfg.seed + 1000, acq,
                                 progress=_progress(run, name))
            reports.append(rep)
            io.save_json(run.path(f"fit_{name}.json"), rep.to_dict())
    write_table(run, rate_table(reports))
    run.finish()
    return run


def cmd_scan(cfg: RunConfig, log=None) -> Run:
    run = Run("scan", cfg, log)
    with run.stage("load"):
        spectra, orders = _load_fit_data(cfg)
        data = FitData(spectra, orders, cfg.include_dc, cfg.weights)
    with run.stage("scan"):
        res = model_scan(data, cfg.models, cfg.seed, cfg.fit_options())
        io.save_json(run.path("scan.json"), {"tie_tol": res.tie_tol, "table": res.table()})
        write_table(run, rate_table(res.reports), "aic_table")
    run.finish()
    return run


def _progress(run: Run, name: str):
    def report(i, n, elapsed):
        if i == n or i % 10 == 0:
            run.log(f"[bootstrap:{name}] {i}/{n} replicates, {elapsed:.0f} s")

    return report


def cmd_pipeline(cfg: RunConfig, log=None) -> Run:
    """simulate (or load) -> estimate -> subtract -> scan -> WTD -> bootstrap -> report."""
    if cfg.trace is None and cfg.model is None:
        raise ConfigError("--model", "give a model file to simulate or a --trace to analyse")
    _require_file("--model", cfg.model)
    _require_file("--trace", cfg.trace)
    _require_file("--background", cfg.background)
    run = Run("pipeline", cfg, log)
    result = {"run": run}

    with run.stage("input"):
        spec = io.load_model(cfg.model) if cfg.model else None
        if spec is not None:
            run.model_hashes["model"] = spec.model.fingerprint()
        if cfg.trace is not None:
            trace = io.load_trace(cfg.trace)
        else:
            trace = _simulated_trace(run, spec)
            run.seeds.update(jumps=[cfg.seed, 0, 0], noise=[cfg.seed, 0, 1])
        background = _background_trace(run, len(trace), trace.dt, trace.noise_sigma)

    with run.stage("spectra"):
        orders = tuple(sorted(set(cfg.orders) | {1}))
        spectra = _estimate(trace, background, dataclasses.replace(cfg, orders=orders))
        del background
    fit_orders = [o for o in cfg.orders if o >= 2]
    for o in (2, 3, 4):
        if o not in fit_orders:
            run.skip(f"order-{o}", "not in --orders")

    with run.stage("scan"):
        data = FitData(spectra, fit_orders, cfg.include_dc, cfg.weights)
        scan = model_scan(data, cfg.models, cfg.seed, cfg.fit_options())
        result["scan"] = scan
        io.save_json(run.path("scan.json"), {"tie_tol": scan.tie_tol, "table": scan.table()})

    best = scan.best
    wtd_models = {}
    if cfg.levels is not None:
        levels = tuple(cfg.levels)
    elif spec is not None and cfg.trace is None:
        levels = tuple(sorted(set(spec.model.levels.tolist())))[:2]
    else:
        # low level from the mean and the fitted step and occupations
        p_low = best.steady_state[0] if best.topology in TOPOLOGIES else 0.0
        low = float(spectra[1].values) - best.delta * (1.0 - p_low)
        levels = (low, low + best.delta)
    with run.stage("wtd"):
        summary = _wtd_stage(run, trace, levels)
        fits = summary.pop("fits")
        if summary["reliable"] and fits[HIGH].analytic.form == "bi" and not fits[HIGH].degenerate:
            wtd_models = wtd_equivalent_rates(fits[LOW], fits[HIGH])
        elif not summary["reliable"]:
            run.skip("wtd-rates", "jump detection dominated by noise triggers")
        io.save_json(run.path("wtd_fit.json"), summary)
        result["wtd"] = summary
    del trace

    if cfg.bootstrap > 0:
        acq = _acquisition(spectra, cfg, fit_orders)
        for name in cfg.bootstrap_models:
            rep = next((r for r in scan.reports if r.topology == name), None)
            if rep is None or rep.error is not None:
                run.skip(f"bootstrap:{name}", "candidate not fitted")
                continue
            with run.stage(f"bootstrap:{name}"):
                seed = cfg.seed + 1000 + list(TOPOLOGIES).index(name)
                run.seeds[f"bootstrap:{name}"] = seed
                bootstrap_errors(FitProblem(topology(name), data), rep, cfg.bootstrap, seed, acq,
                                 progress=_progress(run, name))
    else:
        run.skip("bootstrap", "bootstrap count is 0")

    with run.stage("report"):
        for rep in scan.reports:
            io.save_json(run.path(f"fit_{rep.topology}.json"), rep.to_dict())
        table = rate_table(scan.reports, wtd_models)
        result["table"] = table
        result["table_text"] = write_table(run, table)
        models = None
        if best.error is None:
            model = best.model()
            meas = MeasurementOperator.from_model(model)
            models = {o: model_spectrum(model, meas, o, spectra[o].grid).values for o in fit_orders}
        _write_spectra(run, spectra, models, cfg.spectra_csv)
    run.finish({"table": table})
    return result
