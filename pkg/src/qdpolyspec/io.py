"""File formats: model specs, traces, spectra, fit reports and WTD tables."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .errors import DimensionMismatch, ModelError, NegativeRate
from .estimation import SpectrumEstimate
from .markov import MarkovModel
from .simulate import DetectorTrace


@dataclass(frozen=True, eq=False)
class ModelSpec:
    model: MarkovModel
    beta: float = 1.0
    noise: float = 0.0
    source: Optional[str] = None


def _line_of(node) -> int:
    return node.start_mark.line + 1


def _mapping_nodes(root):
    if not isinstance(root, yaml.MappingNode):
        return {}
    return {k.value: v for k, v in root.value if isinstance(k, yaml.ScalarNode)}


def load_model(path) -> ModelSpec:
    """Read a YAML or JSON model file.

    Expected keys: ``n_states``, ``rates`` (list of ``[i, j, gamma_hz]``),
    ``levels``, optional ``beta``, ``noise`` and ``hamiltonian``.
    Validation errors name the file and line of the offending entry.
    """
    path = str(path)
    text = Path(path).read_text()
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ModelError(f"{path}: cannot parse model file: {exc}") from exc
    if not isinstance(data, dict):
        raise ModelError(f"{path}: model file must be a mapping")
    nodes = _mapping_nodes(root)
    for key in ("n_states", "rates", "levels"):
        if key not in data:
            raise ModelError(f"{path}: missing required key '{key}'")
    n = data["n_states"]
    if not isinstance(n, int) or n < 1:
        raise ModelError(f"{path}:{_line_of(nodes['n_states'])}: n_states must be a positive integer")
    rate_nodes = nodes["rates"].value if isinstance(nodes["rates"], yaml.SequenceNode) else []
    rates = {}
    for k, entry in enumerate(data["rates"] or []):
        line = _line_of(rate_nodes[k]) if k < len(rate_nodes) else _line_of(nodes["rates"])
        where = f"{path}:{line}"
        if not (isinstance(entry, (list, tuple)) and len(entry) == 3):
            raise ModelError(f"{where}: rate entry {entry!r} must be [i, j, gamma_hz]")
        i, j, g = entry
        try:
            i, j, g = int(i), int(j), float(g)
        except (TypeError, ValueError) as exc:
            raise ModelError(f"{where}: rate entry {entry!r} is not numeric") from exc
        if g < 0:
            raise NegativeRate(f"{where}: rate entry {list(entry)!r} has a negative rate")
        if not (0 <= i < n and 0 <= j < n):
            raise DimensionMismatch(f"{where}: rate entry {list(entry)!r} references a state >= n_states = {n}")
        if i == j:
            raise ModelError(f"{where}: rate entry {list(entry)!r} is a self-transition")
        rates[(i, j)] = rates.get((i, j), 0.0) + g
    levels = data["levels"]
    if not isinstance(levels, list) or len(levels) != n:
        raise DimensionMismatch(
            f"{path}:{_line_of(nodes['levels'])}: levels must list exactly {n} values"
        )
    ham = data.get("hamiltonian")
    if ham is not None:
        if isinstance(ham, dict):
            ham = np.array(ham.get("real", 0.0)) + 1j * np.array(ham.get("imag", 0.0))
        ham = np.array(ham, dtype=complex)
    beta = float(data.get("beta", 1.0))
    noise = float(data.get("noise", 0.0))
    try:
        model = MarkovModel(n, rates, levels, ham)
    except ModelError as exc:
        raise type(exc)(f"{path}: {exc}") from exc
    return ModelSpec(model, beta, noise, path)


def model_to_dict(model: MarkovModel, beta: float = 1.0, noise: float = 0.0) -> dict:
    d = model.to_dict()
    d["beta"] = beta
    d["noise"] = noise
    return d


def save_model(path, model: MarkovModel, beta: float = 1.0, noise: float = 0.0) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(model_to_dict(model, beta, noise), fh, sort_keys=False)


# -- traces -----------------------------------------------------------------

def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def save_trace(path, trace: DetectorTrace, fmt: str = "raw") -> list:
    """Write samples (raw little-endian float64 or CSV) plus a JSON sidecar."""
    path = Path(path)
    if fmt == "raw":
        np.asarray(trace.samples, dtype="<f8").tofile(path)
    elif fmt == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_s", "z"])
            t = np.arange(len(trace)) * trace.dt
            for a, b in zip(t, trace.samples):
                w.writerow([repr(float(a)), repr(float(b))])
    else:
        raise ValueError(f"unknown trace format {fmt!r}")
    meta = {
        "format": fmt,
        "dtype": "float64-le" if fmt == "raw" else "csv",
        "n_samples": len(trace),
        "dt": trace.dt,
        "beta": trace.beta,
        "noise_sigma": trace.noise_sigma,
        "seed": trace.meta.get("seed"),
        "index": trace.meta.get("index"),
        "model_hash": trace.meta.get("model_hash"),
    }
    side = sidecar_path(path)
    side.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return [path, side]


def load_trace(path, dt: Optional[float] = None) -> DetectorTrace:
    """Read a trace written by :func:`save_trace` (or raw float64 with ``dt``)."""
    path = Path(path)
    side = sidecar_path(path)
    meta = json.loads(side.read_text()) if side.exists() else {}
    fmt = meta.get("format", "csv" if path.suffix == ".csv" else "raw")
    if dt is None:
        if "dt" not in meta:
            raise ValueError(f"{path}: no sidecar metadata; pass dt explicitly")
        dt = meta["dt"]
    if fmt == "raw":
        samples = np.fromfile(path, dtype="<f8")
    else:
        samples = np.loadtxt(path, delimiter=",", skiprows=1, usecols=1, ndmin=1)
    keep = {k: meta[k] for k in ("seed", "index", "model_hash") if k in meta}
    return DetectorTrace(samples.astype(float), float(dt), float(meta.get("beta", 1.0)),
                         float(meta.get("noise_sigma", 0.0)), keep)


# -- spectra ----------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def spectrum_to_dict(spec: SpectrumEstimate) -> dict:
    meta = {k: v for k, v in spec.meta.items() if k != "part_variance"}
    d = {
        "order": spec.order,
        "grid_hz": [g.tolist() for g in spec.grid],
        "values": np.asarray(spec.values).tolist(),
        "variance": np.asarray(spec.variance).tolist(),
        "meta": _jsonable(meta),
    }
    if spec.imag is not None:
        d["imag"] = np.asarray(spec.imag).tolist()
    return d


def spectrum_from_dict(d: dict) -> SpectrumEstimate:
    imag = np.array(d["imag"]) if d.get("imag") is not None else None
    return SpectrumEstimate(int(d["order"]), tuple(np.array(g) for g in d["grid_hz"]),
                            np.array(d["values"]), np.array(d["variance"]), d.get("meta", {}), imag)


def save_spectrum(path, spec: SpectrumEstimate) -> None:
    with open(path, "w") as fh:
        json.dump(spectrum_to_dict(spec), fh)


def load_spectrum(path) -> SpectrumEstimate:
    with open(path) as fh:
        return spectrum_from_dict(json.load(fh))


def load_spectra_dir(path) -> dict:
    """All ``*.json`` spectra in a directory (or a single file), keyed by order."""
    path = Path(path)
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    out = {}
    for f in files:
        with open(f) as fh:
            d = json.load(fh)
        if isinstance(d, dict) and "order" in d and "values" in d:
            out[int(d["order"])] = spectrum_from_dict(d)
    if not out:
        raise FileNotFoundError(f"no spectrum files found in {path}")
    return out


# -- reports and tables -----------------------------------------------------

def save_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_wtd_csv(path, hist, fitted=None) -> None:
    """Columns ``tau_bin_center, count, fitted_density`` (density per second)."""
    centers = hist.centers
    dens = fitted.density(centers) if fitted is not None else np.full(len(centers), np.nan)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tau_bin_center", "count", "fitted_density"])
        for c, n, f in zip(centers, hist.counts, dens):
            w.writerow([repr(float(c)), int(n), repr(float(f))])


def save_spectrum_csv(path, spec: SpectrumEstimate, model_values=None) -> None:
    """Plot-ready long-format table of a spectrum (and optional model)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if spec.order == 2:
            w.writerow(["f_hz", "value", "sigma", "model"])
            for k, f in enumerate(spec.grid[0]):
                m = "" if model_values is None else repr(float(model_values[k]))
                w.writerow([repr(float(f)), repr(float(spec.values[k])),
                            repr(float(np.sqrt(spec.variance[k]))), m])
        else:
            w.writerow(["f1_hz", "f2_hz", "value", "sigma", "model"])
            f1, f2 = spec.grid
            for i in range(len(f1)):
                for j in range(len(f2)):
                    m = "" if model_values is None else repr(float(model_values[i, j]))
                    w.writerow([repr(float(f1[i])), repr(float(f2[j])), repr(float(spec.values[i, j])),
                                repr(float(np.sqrt(spec.variance[i, j]))), m])


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def environment_versions() -> dict:
    import platform

    import numba
    import scipy

    from . import __version__

    return {
        "qdpolyspec": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
        "pyyaml": yaml.__version__,
    }


def write_manifest(outdir, command: str, config: dict, seeds: dict, model_hashes: dict,
                   outputs, status: str = "ok", extra: Optional[dict] = None) -> Path:
    """Record everything needed to reproduce a run in ``outdir/manifest.json``."""
    outdir = Path(outdir)
    files = {}
    for p in outputs:
        p = Path(p)
        if p.exists() and p.is_file():
            files[os.path.relpath(p, outdir)] = file_sha256(p)
    manifest = {
        "command": command,
        "status": status,
        "config": config,
        "seeds": seeds,
        "model_hashes": model_hashes,
        "versions": environment_versions(),
        "outputs": files,
    }
    if extra:
        manifest.update(extra)
    path = outdir / "manifest.json"
    save_json(path, manifest)
    return path
