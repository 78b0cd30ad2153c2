"""Polyspectrum estimation from sampled traces.

The trace is cut into segments of duration ``1 / f_resolution``.  Each
segment is windowed and Fourier transformed as
``a(f) = dt * sum_k w_k z_k exp(+2 pi i f t_k)``, and order-n spectra are
unbiased k-statistics of these coefficients across segments, normalized by
``dt * sum_k w_k^n``.  With this choice the order-2 estimate of white noise
with per-sample variance ``sigma^2`` is flat at ``sigma^2 * dt``: it is the
two-sided spectral density, reported on the non-negative frequency axis.

Second order is ``C2(a(f), a*(f))``, third order is
``C3(a(f1), a(f2), a*(f1+f2))`` and fourth order the reduced slice
``C4(a(f1), a*(f1), a(f2), a*(f2))``.  Two-dimensional spectra are symmetric
under ``f1 <-> f2``; only the upper triangle is computed and then mirrored.

The data are split into ``parts`` groups of consecutive segments.  Each group
gives a part spectrum; the reported value is their mean and the reported
variance is the part variance divided by ``parts``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np
from scipy import fft as sfft

from .errors import GridMismatch, NyquistViolation, TooFewParts, TraceTooShort
from .kernels import third_moment_upper
from .simulate import DetectorTrace

_FFT_CHUNK = 32
ACG_SIGMA_T = 0.14


@dataclass(frozen=True)
class EstimationConfig:
    """Frequency window and segmentation of the estimator.

    Parameters
    ----------
    f_max : float
        Highest frequency reported, Hz.
    f_resolution : float
        Bin spacing, Hz; sets the segment duration ``1 / f_resolution``.
    window : {"acg", "hann", "rect"}
        Segment taper.  ``"acg"`` is the approximate confined Gaussian.
    segment_overlap : float
        Fraction in ``[0, 1)``; only allowed for order 2.
    parts : int
        Number of part spectra used for the variance estimate.
    """

    f_max: float = 5000.0
    f_resolution: float = 7.5
    window: str = "acg"
    segment_overlap: float = 0.0
    parts: int = 32

    def __post_init__(self):
        if not 0 < self.f_resolution < self.f_max:
            raise ValueError("require 0 < f_resolution < f_max")
        if not 0 <= self.segment_overlap < 1:
            raise ValueError("segment_overlap must lie in [0, 1)")
        if self.window not in ("acg", "hann", "rect"):
            raise ValueError(f"unknown window {self.window!r}")
        if self.parts < 2:
            raise TooFewParts("parts must be >= 2")

    def segment_length(self, dt: float) -> int:
        return int(round(1.0 / (self.f_resolution * dt)))

    def n_bins(self, dt: float) -> int:
        """Index of the highest reported bin (bins run 0..n_bins)."""
        seg = self.segment_length(dt)
        return int(np.floor(self.f_max * seg * dt + 1e-9))

    def to_dict(self) -> dict:
        return {
            "f_max": self.f_max,
            "f_resolution": self.f_resolution,
            "window": self.window,
            "segment_overlap": self.segment_overlap,
            "parts": self.parts,
        }


@dataclass(frozen=True, eq=False)
class SpectrumEstimate:
    """Estimated (or model) spectrum on a frequency grid.

    ``grid`` is ``()`` for order 1, ``(f,)`` for order 2 and ``(f1, f2)`` for
    orders 3 and 4, where ``values[i, j]`` belongs to ``(f1[i], f2[j])``.
    """

    order: int
    grid: tuple
    values: np.ndarray
    variance: np.ndarray
    meta: dict = field(default_factory=dict)
    imag: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        variance = np.asarray(self.variance, dtype=float)
        if values.shape != variance.shape:
            raise ValueError("values and variance must have the same shape")
        if not np.all(np.isfinite(values)):
            raise ValueError("spectral values must be finite")
        if np.any(variance < 0):
            raise ValueError("variance must be non-negative")
        grid = tuple(np.asarray(g, dtype=float) for g in self.grid)
        for g in grid:
            if len(g) > 1 and np.any(np.diff(g) <= 0):
                raise ValueError("frequency grid must be strictly increasing")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "variance", variance)
        object.__setattr__(self, "grid", grid)

    def dc_mask(self) -> np.ndarray:
        """True on bins touching zero frequency."""
        if self.order == 1:
            return np.zeros((), dtype=bool)
        if self.order == 2:
            return self.grid[0] == 0
        f1, f2 = np.meshgrid(self.grid[0], self.grid[1], indexing="ij")
        return (f1 == 0) | (f2 == 0)

    def unique_mask(self) -> np.ndarray:
        """True on the independent bins (upper triangle ``f1 <= f2`` in 2-D)."""
        if self.order <= 2:
            return np.ones(self.values.shape, dtype=bool)
        n1, n2 = self.values.shape
        return np.triu(np.ones((n1, n2), dtype=bool))

    def fit_mask(self) -> np.ndarray:
        return self.unique_mask() & ~self.dc_mask()


def window(kind: str, n: int) -> np.ndarray:
    if kind == "rect":
        return np.ones(n)
    if kind == "hann":
        return np.hanning(n)
    # approximate confined Gaussian
    x = np.linspace(0, n, n)
    span = n + 1

    def gauss(y):
        return np.exp(-(((y - n / 2) / (2 * span * ACG_SIGMA_T)) ** 2))

    num = gauss(-0.5) * (gauss(x + span) + gauss(x - span))
    return gauss(x) - num / (gauss(-0.5 + span) + gauss(-0.5 - span))


# -- unbiased k-statistics on centered data --------------------------------

def k2(x, y):
    """Unbiased joint cumulant of two variables along axis 0."""
    m = x.shape[0]
    xc, yc = x - x.mean(0), y - y.mean(0)
    return m / (m - 1) * (xc * yc).mean(0)


def k3(x, y, z):
    m = x.shape[0]
    xc, yc, zc = x - x.mean(0), y - y.mean(0), z - z.mean(0)
    return m**2 / ((m - 1) * (m - 2)) * (xc * yc * zc).mean(0)


def k4(x, y, z, w):
    m = x.shape[0]
    xc, yc, zc, wc = (v - v.mean(0) for v in (x, y, z, w))
    m4 = (xc * yc * zc * wc).mean(0)
    pairs = (
        (xc * yc).mean(0) * (zc * wc).mean(0)
        + (xc * zc).mean(0) * (yc * wc).mean(0)
        + (xc * wc).mean(0) * (yc * zc).mean(0)
    )
    return m**2 * ((m + 1) * m4 - (m - 1) * pairs) / ((m - 1) * (m - 2) * (m - 3))


def part_variance(part_spectra) -> np.ndarray:
    """Spread of part spectra: ``m/(m-1) * (mean(S_j^2) - mean(S_j)^2)``."""
    s = np.asarray(part_spectra)
    m = s.shape[0]
    if m < 2:
        raise TooFewParts("at least two part spectra are required")
    return m / (m - 1) * ((s**2).mean(0) - s.mean(0) ** 2)


# -- segment transforms -----------------------------------------------------

def _segment_starts(n_samples: int, seg: int, overlap: float) -> np.ndarray:
    step = max(1, int(round(seg * (1.0 - overlap))))
    if n_samples < seg:
        return np.zeros(0, dtype=np.int64)
    return np.arange(0, n_samples - seg + 1, step, dtype=np.int64)


def segment_coefficients(z, dt, seg, n_cols, win, starts) -> np.ndarray:
    """``a(f_k)`` for every segment start and ``k < n_cols``."""
    out = np.empty((len(starts), n_cols), dtype=np.complex128)
    contiguous = len(starts) < 2 or np.all(np.diff(starts) == seg)
    for lo in range(0, len(starts), _FFT_CHUNK):
        hi = min(len(starts), lo + _FFT_CHUNK)
        if contiguous:
            a0 = starts[lo]
            block = z[a0 : a0 + (hi - lo) * seg].reshape(hi - lo, seg)
        else:
            block = np.stack([z[s : s + seg] for s in starts[lo:hi]])
        spec = sfft.rfft(block * win, axis=1)[:, :n_cols]
        out[lo:hi] = dt * np.conj(spec)
    return out


def _part_spectrum(order, a, k_max, norm):
    """One part spectrum (complex for order 3) from its segment coefficients."""
    m = a.shape[0]
    ac = a - a.mean(0)
    if order == 2:
        p = (ac[:, : k_max + 1] * np.conj(ac[:, : k_max + 1])).real
        return m / (m - 1) * p.mean(0) / norm
    if order == 3:
        m3 = third_moment_upper(np.ascontiguousarray(ac), k_max)
        return m**2 / ((m - 1) * (m - 2)) * m3 / norm
    b = ac[:, : k_max + 1]
    p = (b * np.conj(b)).real
    m4 = p.T @ p / m
    pm = p.mean(0)
    x = b.T @ b / m
    y = b.T @ np.conj(b) / m
    pairs = np.outer(pm, pm) + np.abs(x) ** 2 + np.abs(y) ** 2
    c4 = m**2 * ((m + 1) * m4 - (m - 1) * pairs) / ((m - 1) * (m - 2) * (m - 3))
    return c4 / norm


def _check(trace: DetectorTrace, cfg: EstimationConfig, orders):
    dt = trace.dt
    nyq = 0.5 / dt
    if cfg.f_max > nyq * (1 + 1e-12):
        raise NyquistViolation(f"f_max = {cfg.f_max} Hz exceeds Nyquist {nyq} Hz")
    seg = cfg.segment_length(dt)
    k_max = cfg.n_bins(dt)
    if 3 in orders and 2 * k_max > seg // 2:
        raise NyquistViolation("third order needs f1 + f2 up to 2 f_max below Nyquist")
    if cfg.segment_overlap > 0 and any(o >= 3 for o in orders):
        raise ValueError("segment overlap is only allowed for order 2")
    return seg, k_max


def estimate_polyspectra(
    trace: DetectorTrace, orders: Iterable[int], cfg: EstimationConfig, *, return_parts=False
) -> dict:
    """Estimate several orders from one pass of segment transforms.

    Returns a dict ``{order: SpectrumEstimate}``.  With ``return_parts`` each
    estimate's ``meta["part_variance"]`` holds the part variance array as well.
    """
    orders = sorted(set(int(o) for o in orders))
    if any(o not in (1, 2, 3, 4) for o in orders):
        raise ValueError("orders must be in 1..4")
    z = np.asarray(trace.samples, dtype=float)
    dt = trace.dt
    seg, k_max = _check(trace, cfg, orders)
    parts = cfg.parts
    results = {}

    if 1 in orders:
        n_use = (len(z) // parts) * parts
        if n_use < parts:
            raise TraceTooShort("trace shorter than the number of parts")
        means = z[:n_use].reshape(parts, -1).mean(1)
        pv = part_variance(means)
        meta = {"parts": parts, "n_samples": int(n_use)}
        if return_parts:
            meta["part_variance"] = pv
        results[1] = SpectrumEstimate(1, (), means.mean(), pv / parts, meta)

    higher = [o for o in orders if o >= 2]
    if not higher:
        return results

    overlap = cfg.segment_overlap
    starts = _segment_starts(len(z), seg, overlap)
    n_seg = len(starts)
    need = max(higher)
    per_part = n_seg // parts
    if n_seg < 2:
        raise TraceTooShort(
            f"trace of {len(z)} samples holds {n_seg} segment(s) of {seg}; need at least 2"
        )
    if per_part < need:
        raise TooFewParts(
            f"{n_seg} segments give {per_part} per part for {parts} parts; order {need} "
            f"needs at least {need} (use fewer parts or a longer trace)"
        )
    n_cols = (2 * k_max + 1) if 3 in higher else (k_max + 1)
    win = window(cfg.window, seg)
    freqs = np.arange(k_max + 1) / (seg * dt)
    zc = z - z.mean()
    a = segment_coefficients(zc, dt, seg, n_cols, win, starts[: per_part * parts])

    for order in higher:
        norm = dt * np.sum(win**order)
        acc = acc2 = acc_im = None
        for p in range(parts):
            sp = _part_spectrum(order, a[p * per_part : (p + 1) * per_part], k_max, norm)
            re = np.real(sp)
            if acc is None:
                acc, acc2 = np.zeros_like(re), np.zeros_like(re)
                acc_im = np.zeros_like(re)
            acc += re
            acc2 += re * re
            acc_im += np.imag(sp)
        mean = acc / parts
        pv = parts / (parts - 1) * np.maximum(acc2 / parts - mean**2, 0.0)
        grid = (freqs,) if order == 2 else (freqs, freqs)
        meta = {
            "window": cfg.window,
            "segment_length": seg,
            "segments": per_part * parts,
            "segments_per_part": per_part,
            "parts": parts,
            "dt": dt,
            "f_resolution_actual": 1.0 / (seg * dt),
            "overlap": overlap,
        }
        if return_parts:
            meta["part_variance"] = pv
        imag = acc_im / parts if order == 3 else None
        results[order] = SpectrumEstimate(order, grid, mean, pv / parts, meta, imag)
    return results


def estimate_polyspectrum(trace: DetectorTrace, order: int, cfg: EstimationConfig) -> SpectrumEstimate:
    """Order-``order`` polyspectrum with the variance of the mean over parts."""
    return estimate_polyspectra(trace, [order], cfg)[order]


def estimate_variance(trace: DetectorTrace, order: int, cfg: EstimationConfig, m_parts: int) -> np.ndarray:
    """Per-bin variance of a single part spectrum for ``m_parts`` parts."""
    if m_parts < 2:
        raise TooFewParts("m_parts must be >= 2")
    est = estimate_polyspectra(trace, [order], replace(cfg, parts=m_parts), return_parts=True)
    return est[order].meta["part_variance"]


def background_subtract(signal: SpectrumEstimate, background: SpectrumEstimate) -> SpectrumEstimate:
    """Bin-wise difference of values; variances add."""
    if signal.order != background.order:
        raise GridMismatch(f"orders differ: {signal.order} vs {background.order}")
    if len(signal.grid) != len(background.grid) or any(
        a.shape != b.shape or not np.allclose(a, b, rtol=1e-12, atol=0)
        for a, b in zip(signal.grid, background.grid)
    ):
        raise GridMismatch("frequency grids differ")
    imag = None
    if signal.imag is not None and background.imag is not None:
        imag = signal.imag - background.imag
    meta = dict(signal.meta)
    meta["background_subtracted"] = True
    return SpectrumEstimate(
        signal.order,
        signal.grid,
        signal.values - background.values,
        signal.variance + background.variance,
        meta,
        imag,
    )
