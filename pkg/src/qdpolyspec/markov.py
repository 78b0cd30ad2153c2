"""Monitored Markov models and the superoperators derived from them.

Two representations of the generator are used throughout:

``markov-diagonal``
    The N x N rate matrix acting on the vector of occupation probabilities.
    Entry ``(j, i)`` is the rate from state ``i`` to state ``j``; columns sum
    to zero.  This is the default and the only form the fits use.

``full-superoperator``
    The N^2 x N^2 matrix acting on the column-stacked density matrix
    ``vec(rho)[i + j*N] = rho[i, j]``.  Built only when the model carries a
    Hamiltonian.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import linalg

from .errors import (
    DegenerateSteadyState,
    DimensionMismatch,
    ModelError,
    NegativeRate,
    NotTwoLevel,
)

MARKOV = "markov-diagonal"
FULL = "full-superoperator"


@dataclass(frozen=True, eq=False)
class MarkovModel:
    """N-state continuous-time Markov model with one detector level per state.

    Parameters
    ----------
    n_states : int
    rates : mapping
        ``{(i, j): gamma_ij}`` in Hz for the transition ``i -> j``.  Missing
        pairs are zero.
    output_level : sequence of float
        Detector output of each state (arbitrary units).
    hamiltonian : array, optional
        Hermitian N x N matrix in angular-frequency units (hbar = 1).
    """

    n_states: int
    rates: Mapping[tuple, float]
    output_level: tuple
    hamiltonian: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        n = int(self.n_states)
        if n < 1:
            raise ModelError(f"n_states must be positive, got {self.n_states}")
        clean = {}
        for key, gamma in dict(self.rates).items():
            i, j = (int(k) for k in key)
            if not (0 <= i < n and 0 <= j < n):
                raise DimensionMismatch(
                    f"rate gamma_{i}{j} references a state outside 0..{n - 1}"
                )
            if i == j:
                raise ModelError(f"self-transition gamma_{i}{j} is not allowed")
            gamma = float(gamma)
            if not np.isfinite(gamma):
                raise ModelError(f"rate gamma_{i}{j} = {gamma} is not finite")
            if gamma < 0:
                raise NegativeRate(f"rate gamma_{i}{j} = {gamma} is negative")
            clean[(i, j)] = clean.get((i, j), 0.0) + gamma
        if n > 1 and not any(g > 0 for g in clean.values()):
            raise ModelError("at least one rate must be positive")
        levels = tuple(float(x) for x in self.output_level)
        if len(levels) != n:
            raise DimensionMismatch(
                f"output_level has {len(levels)} entries for {n} states"
            )
        ham = self.hamiltonian
        if ham is not None:
            ham = np.array(ham, dtype=complex)
            if ham.shape != (n, n):
                raise DimensionMismatch(f"hamiltonian has shape {ham.shape}, expected {(n, n)}")
            scale = max(np.abs(ham).max(), 1e-300)
            if np.abs(ham - ham.conj().T).max() > 1e-12 * scale:
                raise ModelError("hamiltonian is not Hermitian")
            ham.setflags(write=False)
        object.__setattr__(self, "n_states", n)
        object.__setattr__(self, "rates", MappingProxyType(clean))
        object.__setattr__(self, "output_level", levels)
        object.__setattr__(self, "hamiltonian", ham)

    @property
    def levels(self) -> np.ndarray:
        return np.array(self.output_level)

    def rate_matrix(self) -> np.ndarray:
        """``Q[i, j] = gamma_ij``."""
        q = np.zeros((self.n_states, self.n_states))
        for (i, j), g in self.rates.items():
            q[i, j] = g
        return q

    def exit_rates(self) -> np.ndarray:
        return self.rate_matrix().sum(axis=1)

    def replace(self, **changes) -> "MarkovModel":
        kw = dict(
            n_states=self.n_states,
            rates=dict(self.rates),
            output_level=self.output_level,
            hamiltonian=self.hamiltonian,
        )
        kw.update(changes)
        return MarkovModel(**kw)

    def permuted(self, perm: Sequence[int]) -> "MarkovModel":
        """Relabel states so that old state ``k`` becomes ``perm[k]``."""
        perm = list(perm)
        rates = {(perm[i], perm[j]): g for (i, j), g in self.rates.items()}
        levels = [0.0] * self.n_states
        for old, new in enumerate(perm):
            levels[new] = self.output_level[old]
        ham = None
        if self.hamiltonian is not None:
            inv = np.argsort(perm)
            ham = self.hamiltonian[np.ix_(inv, inv)]
        return MarkovModel(self.n_states, rates, levels, ham)

    def to_dict(self) -> dict:
        d = {
            "n_states": self.n_states,
            "rates": [[i, j, g] for (i, j), g in sorted(self.rates.items())],
            "levels": list(self.output_level),
        }
        if self.hamiltonian is not None:
            d["hamiltonian"] = {
                "real": self.hamiltonian.real.tolist(),
                "imag": self.hamiltonian.imag.tolist(),
            }
        return d

    def fingerprint(self) -> str:
        """Short content hash, stable across runs and platforms."""
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Liouvillian:
    matrix: np.ndarray
    representation: str
    n_states: int

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def trace_row(self) -> np.ndarray:
        """Row vector ``t`` with ``t @ x == Tr(x)`` in this representation."""
        return trace_row(self.n_states, self.representation)


@dataclass(frozen=True)
class MeasurementOperator:
    """Diagonal measurement operator ``A`` and strength ``beta``."""

    diagonal: np.ndarray
    beta: float = 1.0

    def __post_init__(self):
        diag = np.asarray(self.diagonal, dtype=float).copy()
        diag.setflags(write=False)
        object.__setattr__(self, "diagonal", diag)
        # beta = 0 is accepted as the unmeasured limit
        if not self.beta >= 0:
            raise ModelError(f"measurement strength beta must be >= 0, got {self.beta}")

    @classmethod
    def from_model(cls, model: MarkovModel, beta: float = 1.0) -> "MeasurementOperator":
        return cls(model.levels, beta)

    @property
    def n_states(self) -> int:
        return len(self.diagonal)

    def superoperator(self, representation: str = MARKOV) -> np.ndarray:
        """Matrix of ``x -> (A x + x A^dagger) / 2``."""
        a = self.diagonal
        if representation == MARKOV:
            return np.diag(a)
        n = len(a)
        eye = np.eye(n)
        amat = np.diag(a).astype(complex)
        return 0.5 * (np.kron(eye, amat) + np.kron(amat.conj(), eye))


@dataclass(frozen=True, eq=False)
class SteadyState:
    probabilities: np.ndarray
    vector: np.ndarray
    residual: float


def trace_row(n_states: int, representation: str) -> np.ndarray:
    if representation == MARKOV:
        return np.ones(n_states)
    return np.eye(n_states).reshape(-1, order="F").astype(complex)


def _dissipator(d: np.ndarray) -> np.ndarray:
    n = d.shape[0]
    eye = np.eye(n)
    dd = d.conj().T @ d
    return np.kron(d.conj(), d) - 0.5 * (np.kron(eye, dd) + np.kron(dd.T, eye))


def build_liouvillian(model: MarkovModel) -> Liouvillian:
    """Generator of the master equation for ``model``.

    Without a Hamiltonian this is the rate matrix with ``L[j, i] = gamma_ij``
    and ``L[i, i] = -sum_j gamma_ij``.  With one, the full superoperator
    ``sum gamma_ij D[|j><i|] - i[H, .]`` is returned.
    """
    n = model.n_states
    for (i, j), g in model.rates.items():
        if g < 0:
            raise NegativeRate(f"rate gamma_{i}{j} = {g} is negative")
        if i >= n or j >= n:
            raise DimensionMismatch(f"rate gamma_{i}{j} outside {n} states")
    if model.hamiltonian is None:
        q = model.rate_matrix()
        mat = q.T - np.diag(q.sum(axis=1))
        return Liouvillian(mat, MARKOV, n)

    mat = np.zeros((n * n, n * n), dtype=complex)
    for (i, j), g in model.rates.items():
        if g == 0:
            continue
        d = np.zeros((n, n))
        d[j, i] = 1.0
        mat += g * _dissipator(d)
    h = model.hamiltonian
    eye = np.eye(n)
    mat += -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    return Liouvillian(mat, FULL, n)


def as_full(liouvillian: Liouvillian) -> Liouvillian:
    """Embed a rate-matrix generator into the superoperator representation.

    Coherences are left without dynamics of their own (zero rows), which is
    only meaningful together with a dephasing term such as the measurement
    dissipator.
    """
    if liouvillian.representation == FULL:
        return liouvillian
    n = liouvillian.n_states
    mat = np.zeros((n * n, n * n), dtype=complex)
    diag_idx = np.arange(n) * (n + 1)
    mat[np.ix_(diag_idx, diag_idx)] = liouvillian.matrix
    # incoherent jumps also damp coherences by half the summed exit rates
    exits = -np.diag(liouvillian.matrix)
    for i in range(n):
        for j in range(n):
            if i != j:
                mat[i + j * n, i + j * n] = -0.5 * (exits[i] + exits[j])
    return Liouvillian(mat, FULL, n)


def measured_liouvillian(liouvillian: Liouvillian, meas: MeasurementOperator) -> Liouvillian:
    """Add the measurement-induced damping ``beta^2 D[A]``.

    On diagonal states ``D[A]`` vanishes for diagonal ``A``, so the rate-matrix
    representation is returned unchanged.
    """
    if meas.n_states != liouvillian.n_states:
        raise DimensionMismatch(
            f"measurement operator acts on {meas.n_states} states, "
            f"generator on {liouvillian.n_states}"
        )
    if liouvillian.representation == MARKOV:
        return liouvillian
    damping = _dissipator(np.diag(meas.diagonal).astype(complex))
    return Liouvillian(
        liouvillian.matrix + meas.beta ** 2 * damping, FULL, liouvillian.n_states
    )


def steady_state(liouvillian: Liouvillian) -> SteadyState:
    """Stationary state from the normalization-augmented linear system."""
    mat = np.asarray(liouvillian.matrix)
    dim = mat.shape[0]
    t = liouvillian.trace_row()
    if dim > 1:
        eig = linalg.eigvals(mat)
        radius = np.abs(eig).max()
        re = np.sort(np.abs(eig.real))
        if re[1] <= 1e-9 * radius:
            raise DegenerateSteadyState(
                "generator has more than one (near-)zero eigenvalue; "
                "the model is not ergodic"
            )
    aug = mat.copy()
    aug[0, :] = t
    rhs = np.zeros(dim, dtype=aug.dtype)
    rhs[0] = 1.0
    try:
        vec = linalg.solve(aug, rhs)
    except linalg.LinAlgError as exc:
        raise DegenerateSteadyState(str(exc)) from exc

    n = liouvillian.n_states
    if liouvillian.representation == MARKOV:
        vec = np.real(vec)
        vec = np.where(np.abs(vec) < 1e-14, 0.0, vec)
        if vec.min() < -1e-9:
            raise DegenerateSteadyState("steady state has negative probabilities")
        vec = np.clip(vec, 0.0, None)
        vec = vec / vec.sum()
        probs = vec.copy()
    else:
        rho = vec.reshape(n, n, order="F")
        rho = 0.5 * (rho + rho.conj().T)
        rho = rho / np.trace(rho).real
        vec = rho.reshape(-1, order="F")
        probs = np.clip(np.diag(rho).real, 0.0, 1.0)
    scale = max(np.abs(mat).max(), 1e-300) * max(np.linalg.norm(vec), 1e-300)
    residual = float(np.linalg.norm(mat @ vec) / scale)
    return SteadyState(probs, vec, residual)


def jump_partition(model: MarkovModel):
    """Split the rate matrix into level-changing jumps and the rest.

    Returns
    -------
    j_down, j_up, l0 : ndarray
        ``j_down`` holds the rates from high-level to low-level states,
        ``j_up`` the reverse, and ``l0 = L - j_up - j_down`` generates the
        evolution during which the detector level stays constant.
    """
    low, high = two_levels(model)
    levels = model.levels
    lmat = build_liouvillian(model.replace(hamiltonian=None)).matrix
    j_down = np.zeros_like(lmat)
    j_up = np.zeros_like(lmat)
    for (i, j), g in model.rates.items():
        if levels[i] == high and levels[j] == low:
            j_down[j, i] += g
        elif levels[i] == low and levels[j] == high:
            j_up[j, i] += g
    return j_down, j_up, lmat - j_up - j_down


def two_levels(model: MarkovModel):
    """The (low, high) pair of output levels; raises if there are not exactly two."""
    distinct = np.unique(model.levels)
    if len(distinct) != 2:
        raise NotTwoLevel(
            f"model has {len(distinct)} distinct output levels, exactly two required"
        )
    return float(distinct[0]), float(distinct[1])
