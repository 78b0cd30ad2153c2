"""Closed-form polyspectra of monitored Markov models.

All spectra are built from ``G'(w)``, the Fourier transform of the propagator
with its stationary part removed.  In the eigenbasis of the generator this is
``sum_{k != 0} P_k * (-1 / (lam_k + i w))``.  The convolution integrals of the
fourth-order spectrum are done by residues:
``(1/2pi) int g_a(W - w) g_b(w) dw = -1 / (lam_a + lam_b + i W)``.

The normalization matches :mod:`qdpolyspec.estimation`: ``S2`` is the
two-sided spectral density of the detector output ``z = beta^2 * level``,
so a flat white background of per-sample variance ``sigma^2`` appears as
``sigma^2 * dt``.

Two evaluation routes are available.  ``method="eigen"`` (default) uses the
spectral decomposition and compiled kernels.  ``method="solve"`` uses dense
linear solves per frequency, including a pair-space resolvent for the
convolution terms; it is slow and serves as fallback for defective generators
and as an independent cross-check.
"""

from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from .errors import DegenerateSteadyState, NonDiagonalizable
from .estimation import SpectrumEstimate
from .kernels import ARGS3, ARGS4, HALF4, TAB3, TAB4, s3_kernel, s4_kernel
from .markov import (
    MARKOV,
    Liouvillian,
    MarkovModel,
    MeasurementOperator,
    build_liouvillian,
    measured_liouvillian,
    steady_state,
)

_COND_LIMIT = 1e10
TWO_PI = 2.0 * np.pi


@dataclass(frozen=True, eq=False)
class ResolventCache:
    """Eigendecomposition of a generator with its stationary projector."""

    liouvillian: Liouvillian
    eigenvalues: np.ndarray
    right: np.ndarray
    left: np.ndarray
    zero_index: int
    rho0: np.ndarray
    trace: np.ndarray
    diagonalizable: bool

    @property
    def projector(self) -> np.ndarray:
        return np.outer(self.rho0, self.trace)

    @property
    def nonzero(self) -> np.ndarray:
        return np.array([k for k in range(len(self.eigenvalues)) if k != self.zero_index], dtype=int)


def resolvent_cache(liouvillian: Liouvillian) -> ResolventCache:
    mat = np.asarray(liouvillian.matrix)
    lam, right = linalg.eig(mat)
    radius = max(np.abs(lam).max(), 1e-300)
    small = np.flatnonzero(np.abs(lam) <= 1e-9 * radius)
    if len(mat) > 1 and len(small) != 1:
        raise DegenerateSteadyState(
            f"generator has {len(small)} eigenvalues at zero; exactly one is required"
        )
    zero = int(np.argmin(np.abs(lam)))
    try:
        cond = np.linalg.cond(right)
        left = linalg.inv(right)
        ok = bool(np.isfinite(cond) and cond < _COND_LIMIT)
    except linalg.LinAlgError:
        left = np.full_like(right, np.nan)
        ok = False
    ss = steady_state(liouvillian)
    return ResolventCache(
        liouvillian, lam, right, left, zero, ss.vector.astype(complex),
        liouvillian.trace_row().astype(complex), ok,
    )


def model_cache(model: MarkovModel, meas: MeasurementOperator) -> ResolventCache:
    return resolvent_cache(measured_liouvillian(build_liouvillian(model), meas))


def g_prime(cache: ResolventCache, omega: float, *, strict: bool = False) -> np.ndarray:
    """``G'(omega)`` as a matrix.

    Non-diagonalizable generators fall back to
    ``-(L - P0 + i omega)^-1 (1 - P0)`` unless ``strict`` is set, in which
    case :class:`NonDiagonalizable` is raised.
    """
    if cache.diagonalizable:
        nz = cache.nonzero
        g = -1.0 / (cache.eigenvalues[nz] + 1j * omega)
        return (cache.right[:, nz] * g) @ cache.left[nz, :]
    if strict:
        raise NonDiagonalizable("generator eigenvectors are numerically dependent")
    return _g_prime_solve(cache, omega)


def _g_prime_solve(cache: ResolventCache, omega: float) -> np.ndarray:
    mat = np.asarray(cache.liouvillian.matrix, dtype=complex)
    p0 = cache.projector
    eye = np.eye(len(mat))
    return -linalg.solve(mat - p0 + 1j * omega * eye, eye - p0)


# -- measurement superoperator in the eigenbasis ----------------------------

@dataclass(frozen=True, eq=False)
class EigenTerms:
    """``u = t A' R``, ``M = R^-1 A' R``, ``v = R^-1 A' rho0`` on non-zero modes."""

    lam: np.ndarray
    u: np.ndarray
    M: np.ndarray
    v: np.ndarray
    s1: float
    real: bool


def shifted_measurement(cache: ResolventCache, meas: MeasurementOperator):
    """``A'`` as a matrix and the stationary mean ``Tr[A rho0]`` (without beta)."""
    amat = meas.superoperator(cache.liouvillian.representation).astype(complex)
    s1 = complex(cache.trace @ amat @ cache.rho0)
    return amat - s1 * np.eye(len(amat)), s1.real


def eigen_terms(cache: ResolventCache, meas: MeasurementOperator) -> EigenTerms:
    if not cache.diagonalizable:
        raise NonDiagonalizable("generator eigenvectors are numerically dependent")
    ap, s1 = shifted_measurement(cache, meas)
    nz = cache.nonzero
    r, rinv = cache.right[:, nz], cache.left[nz, :]
    real = cache.liouvillian.representation == MARKOV and not np.iscomplexobj(
        cache.liouvillian.matrix
    )
    return EigenTerms(
        np.ascontiguousarray(cache.eigenvalues[nz].astype(complex)),
        np.ascontiguousarray(cache.trace @ ap @ r),
        np.ascontiguousarray(rinv @ ap @ r),
        np.ascontiguousarray(rinv @ ap @ cache.rho0),
        s1,
        real,
    )


# -- point evaluations (angular frequencies) --------------------------------

def s2_points(terms: EigenTerms, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    uv = terms.u * terms.v
    lam = terms.lam[:, None]
    g = -1.0 / (lam + 1j * w[None, :]) - 1.0 / (lam - 1j * w[None, :])
    return uv @ g


def s3_points(terms: EigenTerms, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    w1 = np.ascontiguousarray(w1, dtype=float)
    w2 = np.ascontiguousarray(w2, dtype=float)
    return s3_kernel(terms.lam, terms.u, terms.M, terms.v, w1, w2, TAB3, ARGS3)


def s4_points(terms: EigenTerms, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Reduced slice ``S4(w1, w2, -w1, -w2)`` without the ``beta^8`` factor."""
    w1 = np.ascontiguousarray(w1, dtype=float)
    w2 = np.ascontiguousarray(w2, dtype=float)
    if terms.real:
        half = s4_kernel(terms.lam, terms.u, terms.M, terms.v, w1, w2, TAB4[HALF4], ARGS4)
        return 2.0 * half.real + 0j
    return s4_kernel(terms.lam, terms.u, terms.M, terms.v, w1, w2, TAB4, ARGS4)


# -- dense-solve route ------------------------------------------------------

class _SolveRoute:
    def __init__(self, cache: ResolventCache, meas: MeasurementOperator):
        self.mat = np.asarray(cache.liouvillian.matrix, dtype=complex)
        self.dim = len(self.mat)
        self.p0 = cache.projector
        self.q0 = np.eye(self.dim) - self.p0
        self.lp = self.mat - self.p0
        self.ap, _ = shifted_measurement(cache, meas)
        self.t = cache.trace
        self.rho = cache.rho0
        self._gcache = {}

    def g(self, w):
        key = float(w)
        if key not in self._gcache:
            self._gcache[key] = -linalg.solve(self.lp + 1j * w * np.eye(self.dim), self.q0)
        return self._gcache[key]

    def pair(self, big_w):
        """``(1/2pi) int G'(W - w) (x) G'(w) dw`` as a matrix on the product space."""
        eye = np.eye(self.dim)
        gen = np.kron(self.lp, eye) + np.kron(eye, self.lp)
        return -linalg.solve(gen + 1j * big_w * np.eye(self.dim**2), np.kron(self.q0, self.q0))

    def s2(self, w):
        ap, t, rho = self.ap, self.t, self.rho
        return t @ ap @ self.g(w) @ ap @ rho + t @ ap @ self.g(-w) @ ap @ rho

    def s3(self, w1, w2):
        ap, t, rho = self.ap, self.t, self.rho
        ws = (w1, w2, -w1 - w2)
        acc = 0j
        for k, _, m in itertools.permutations(range(3)):
            acc += t @ ap @ self.g(ws[m]) @ ap @ self.g(-ws[k]) @ ap @ rho
        return acc

    def s4(self, w1, w2):
        ap, t, rho = self.ap, self.t, self.rho
        ws = (w1, w2, -w1, -w2)
        left = t @ ap
        right = ap @ rho
        acc = 0j
        for k, _, m, n in itertools.permutations(range(4)):
            x, y, z = ws[n], ws[m] + ws[n], -ws[k]
            gx, gz = self.g(x), self.g(z)
            t1 = left @ gx @ ap @ self.g(y) @ ap @ gz @ right
            pair = self.pair(y)
            t2 = np.kron(left @ gx, left) @ pair @ np.kron(right, gz @ right)
            t3 = np.kron(left @ gx @ gz, left) @ pair @ np.kron(right, right)
            acc += t1 - t2 - t3
        return acc


# -- public API -------------------------------------------------------------

def _prepare(model, meas):
    if meas is None:
        meas = MeasurementOperator.from_model(model)
    cache = model_cache(model, meas)
    return cache, meas


def _use_eigen(cache, method):
    if method == "solve":
        return False
    if not cache.diagonalizable:
        warnings.warn("generator is not diagonalizable; using dense solves", RuntimeWarning)
        return False
    return True


def _realify(values, label):
    values = np.asarray(values)
    re = values.real
    scale = np.abs(re).max() if re.size else 0.0
    im = np.abs(values.imag).max() if values.size else 0.0
    if im > 1e-9 * max(scale, 1e-300) and im > 0:
        warnings.warn(
            f"{label} has an imaginary part up to {im / max(scale, 1e-300):.2e} of its "
            "real part; only the real part is returned",
            RuntimeWarning,
        )
    return re


def analytic_s1(model: MarkovModel, meas: Optional[MeasurementOperator] = None) -> float:
    """Stationary mean ``beta^2 Tr[A rho0]``."""
    cache, meas = _prepare(model, meas)
    _, s1 = shifted_measurement(cache, meas)
    return meas.beta**2 * s1


def analytic_s2(
    model: MarkovModel,
    meas: Optional[MeasurementOperator],
    freqs,
    *,
    include_noise: bool = False,
    noise_level: Optional[float] = None,
    method: str = "eigen",
) -> np.ndarray:
    """Second-order spectrum on frequencies ``freqs`` (Hz).

    With ``include_noise`` a flat background is added: ``noise_level`` if
    given, else the detector floor ``beta^2 / 4``.
    """
    cache, meas = _prepare(model, meas)
    f = np.atleast_1d(np.asarray(freqs, dtype=float))
    w = TWO_PI * f
    if _use_eigen(cache, method):
        vals = s2_points(eigen_terms(cache, meas), w)
    else:
        route = _SolveRoute(cache, meas)
        vals = np.array([route.s2(x) for x in w])
    out = meas.beta**4 * _realify(vals, "S2")
    if include_noise:
        out = out + (meas.beta**2 / 4 if noise_level is None else noise_level)
    return out.reshape(np.shape(freqs)) if np.ndim(freqs) else out[0]


def _two_d(model, meas, f1, f2, order, method, outer):
    cache, meas = _prepare(model, meas)
    f1 = np.asarray(f1, dtype=float)
    f2 = np.asarray(f2, dtype=float)
    if outer:
        a, b = np.meshgrid(f1, f2, indexing="ij")
    else:
        a, b = np.broadcast_arrays(f1, f2)
    shape = a.shape
    w1, w2 = TWO_PI * a.ravel(), TWO_PI * b.ravel()
    if _use_eigen(cache, method):
        terms = eigen_terms(cache, meas)
        vals = s3_points(terms, w1, w2) if order == 3 else s4_points(terms, w1, w2)
    else:
        route = _SolveRoute(cache, meas)
        fn = route.s3 if order == 3 else route.s4
        vals = np.array([fn(x, y) for x, y in zip(w1, w2)])
    scale = meas.beta ** (2 * order)
    return scale * _realify(vals, f"S{order}").reshape(shape)


def analytic_s3(model, meas, f1, f2=None, *, outer=True, method="eigen", return_complex=False):
    """Third-order spectrum ``S3(f1, f2, -f1-f2)``.

    With ``outer`` (default) values are returned on the grid ``f1 x f2``;
    otherwise ``f1`` and ``f2`` are paired point-wise.
    """
    f2 = f1 if f2 is None else f2
    if return_complex:
        cache, meas = _prepare(model, meas)
        a, b = np.meshgrid(f1, f2, indexing="ij") if outer else np.broadcast_arrays(f1, f2)
        terms = eigen_terms(cache, meas)
        vals = s3_points(terms, TWO_PI * np.ravel(a), TWO_PI * np.ravel(b))
        return meas.beta**6 * vals.reshape(np.shape(a))
    return _two_d(model, meas, f1, f2, 3, method, outer)


def analytic_s4(model, meas, f1, f2=None, *, outer=True, method="eigen"):
    """Reduced fourth-order spectrum ``S4(f1, f2, -f1, -f2)``."""
    f2 = f1 if f2 is None else f2
    return _two_d(model, meas, f1, f2, 4, method, outer)


def model_spectrum(model, meas, order, grid, **kw) -> SpectrumEstimate:
    """Analytic spectrum packed like an estimate (zero variance)."""
    if order == 1:
        val = analytic_s1(model, meas)
        return SpectrumEstimate(1, (), val, 0.0, {"model_hash": model.fingerprint()})
    if order == 2:
        vals = analytic_s2(model, meas, grid[0], **kw)
        g = (np.asarray(grid[0]),)
    else:
        f1, f2 = grid if len(grid) == 2 else (grid[0], grid[0])
        fn = analytic_s3 if order == 3 else analytic_s4
        vals = fn(model, meas, f1, f2, **kw)
        g = (np.asarray(f1), np.asarray(f2))
    return SpectrumEstimate(order, g, vals, np.zeros_like(vals), {"model_hash": model.fingerprint()})
