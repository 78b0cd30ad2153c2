"""Exact jump simulation of Markov models and detector-trace rendering."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from .errors import AbsorbingState, EmptyRecord
from .markov import MarkovModel, build_liouvillian, steady_state

_BLOCK = 1 << 16
_NOISE_CHUNK = 1 << 22


def stream(seed: int, index: int, purpose: int) -> np.random.Generator:
    """Independent generator for trace ``index``; ``purpose`` 0 = jumps, 1 = noise."""
    return np.random.default_rng([int(seed), int(index), int(purpose)])


@dataclass(frozen=True, eq=False)
class JumpRecord:
    """Sample path of a Markov process.

    ``states[k]`` is occupied on ``[times[k-1], times[k])`` with
    ``times[-1] = 0`` and ``times[len(times)] = t_end`` implied.
    """

    times: np.ndarray
    states: np.ndarray
    t_end: float

    def __post_init__(self):
        if len(self.states) != len(self.times) + 1:
            raise ValueError("states must have exactly one more entry than times")

    @property
    def n_jumps(self) -> int:
        return len(self.times)

    def dwell_times(self) -> np.ndarray:
        """Durations of all visits, including the censored first and last."""
        edges = np.concatenate([[0.0], self.times, [self.t_end]])
        return np.diff(edges)

    def occupation(self, n_states: int) -> np.ndarray:
        """Fraction of ``t_end`` spent in each state."""
        return np.bincount(self.states, weights=self.dwell_times(), minlength=n_states) / self.t_end


@dataclass(frozen=True, eq=False)
class DetectorTrace:
    samples: np.ndarray
    dt: float
    beta: float = 1.0
    noise_sigma: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if len(self.samples) < 2:
            raise ValueError("a trace needs at least two samples")

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) * self.dt


def simulate_jumps(model: MarkovModel, t_end: float, seed: int = 0, *, index: int = 0) -> JumpRecord:
    """Exact (Gillespie) sample path of length ``t_end`` started from the steady state."""
    if not t_end > 0:
        raise ValueError(f"t_end must be positive, got {t_end}")
    rng = stream(seed, index, 0)
    n = model.n_states
    q = model.rate_matrix()
    exits = q.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        cum = np.cumsum(q, axis=1) / exits[:, None]
    p0 = steady_state(build_liouvillian(model.replace(hamiltonian=None))).probabilities
    state = int(rng.choice(n, p=p0 / p0.sum()))

    times, states = [], [state]
    t = 0.0
    while True:
        expo = rng.standard_exponential(_BLOCK)
        unif = rng.random(_BLOCK)
        for k in range(_BLOCK):
            r = exits[state]
            if r <= 0:
                raise AbsorbingState(f"state {state} has zero total exit rate (t = {t:.6g} s)")
            t += expo[k] / r
            if t >= t_end:
                return JumpRecord(np.array(times), np.array(states, dtype=np.int64), float(t_end))
            row = cum[state]
            nxt = int(np.searchsorted(row, unif[k], side="right"))
            # guard against round-off at the top of the cumulative row
            while nxt >= n or q[state, nxt] == 0:
                nxt -= 1
            state = nxt
            times.append(t)
            states.append(state)


def render_trace(
    jumps: JumpRecord,
    model: MarkovModel,
    dt: float,
    noise_sigma: float = 0.0,
    seed: int = 0,
    *,
    index: int = 0,
    beta: float = 1.0,
) -> DetectorTrace:
    """Integrate the output level over each sampling bin and add white noise.

    Sample ``k`` is the average of ``output_level[state(t)]`` over
    ``[k dt, (k+1) dt)`` plus an independent ``N(0, noise_sigma^2)`` draw.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    n = int(np.floor(jumps.t_end / dt + 1e-9))
    if n < 1 or len(jumps.states) == 0:
        raise EmptyRecord("jump record covers less than one sample")
    levels = model.levels[jumps.states]
    times = np.asarray(jumps.times)
    # first bin edge at or after each jump
    edge = np.ceil(times / dt - 1e-12).astype(np.int64)
    bounds = np.concatenate([[0], np.minimum(edge, n), [n]])
    samples = np.repeat(levels, np.diff(bounds))
    # bins straddling a jump get the partial-time correction; jumps after the
    # last full bin have none
    bin_of = edge - 1
    inside = (bin_of >= 0) & (bin_of < n)
    frac = ((bin_of + 1) * dt - times) / dt
    step = np.diff(levels)
    # repeat() leaves each straddling bin at the pre-jump level; several jumps
    # in one bin telescope because each correction uses its own step
    np.add.at(samples, bin_of[inside], (step * frac)[inside])
    if noise_sigma > 0:
        rng = stream(seed, index, 1)
        for lo in range(0, n, _NOISE_CHUNK):
            hi = min(n, lo + _NOISE_CHUNK)
            samples[lo:hi] += noise_sigma * rng.standard_normal(hi - lo)
    meta = {"seed": int(seed), "index": int(index), "model_hash": model.fingerprint()}
    return DetectorTrace(samples, float(dt), float(beta), float(noise_sigma), meta)


def simulate_trace(model, t_end, dt, noise_sigma=0.0, seed=0, *, index=0) -> DetectorTrace:
    jumps = simulate_jumps(model, t_end, seed, index=index)
    return render_trace(jumps, model, dt, noise_sigma, seed, index=index)


def iter_ensemble(model, t_end, dt, noise_sigma, count, seed) -> Iterator[DetectorTrace]:
    """Lazily yield ``count`` independent traces; member ``i`` uses stream ``(seed, i)``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    for i in range(count):
        yield simulate_trace(model, t_end, dt, noise_sigma, seed, index=i)


def simulate_ensemble(model, t_end, dt, noise_sigma, count, seed) -> list:
    return list(iter_ensemble(model, t_end, dt, noise_sigma, count, seed))
