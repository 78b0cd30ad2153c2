"""Waiting-time distributions of two-level telegraph signals.

A dwell in one output level starts with a jump into that level and ends with
the next jump out of it.  For a Markov model with jump superoperators
``J_up``, ``J_down`` and no-jump generator ``L0``:

    w_low(tau)  = Tr[J_up   exp(L0 tau) J_down rho0] / Tr[J_down rho0]
    w_high(tau) = Tr[J_down exp(L0 tau) J_up   rho0] / Tr[J_up   rho0]

For three states with one state alone in its level the densities are an
exponential and a two-exponential mixture in closed form.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, optimize, stats

from .errors import (
    LevelsTooClose,
    NegativeDerivedRate,
    NoDwells,
    NonConvergence,
)
from .markov import MarkovModel, build_liouvillian, jump_partition, steady_state, two_levels
from .simulate import DetectorTrace, JumpRecord

LOW, HIGH = "low", "high"


# -- detection and histograms -----------------------------------------------

def detect_jumps(
    trace: DetectorTrace, low_level: float, high_level: float, hysteresis_fraction: float = 0.25
) -> JumpRecord:
    """Two-threshold (Schmitt trigger) jump detection.

    A switch to high is registered at the first sample above
    ``high - h * delta`` after the signal was last below ``low + h * delta``,
    and vice versa.  The returned record has states 0 (low) and 1 (high);
    jump times are the start times of the triggering samples.
    Reliable only when ``|high - low|`` exceeds a few noise standard deviations.
    """
    delta = high_level - low_level
    lo_th = low_level + hysteresis_fraction * delta
    hi_th = high_level - hysteresis_fraction * delta
    if not delta > 0 or lo_th >= hi_th:
        raise LevelsTooClose(
            f"thresholds overlap: low threshold {lo_th:.6g} >= high threshold {hi_th:.6g}"
        )
    z = np.asarray(trace.samples)
    above = z > hi_th
    decided = np.flatnonzero(above | (z < lo_th))
    t_end = len(z) * trace.dt
    if len(decided) == 0:
        start = int(z[0] > 0.5 * (lo_th + hi_th))
        return JumpRecord(np.zeros(0), np.array([start]), t_end)
    state = above[decided].astype(np.int64)
    change = np.flatnonzero(np.diff(state)) + 1
    times = decided[change] * trace.dt
    states = np.concatenate([[state[0]], state[change]])
    return JumpRecord(times.astype(float), states, t_end)


def noise_sigma_estimate(samples) -> float:
    """Per-sample white-noise level from the median absolute first difference.

    Jumps are rare compared with the sampling rate, so the differences are
    dominated by the noise and the median ignores the few jump steps.
    """
    d = np.diff(np.asarray(samples, dtype=float))
    if len(d) == 0:
        return 0.0
    return float(np.median(np.abs(d - np.median(d))) / stats.norm.ppf(0.75) / np.sqrt(2.0))


def false_trigger_rate(noise_sigma: float, low_level: float, high_level: float, dt: float,
                       hysteresis_fraction: float = 0.25) -> float:
    """Expected rate (1/s) of noise excursions that reach the opposite threshold.

    A sample sitting on one level crosses the other level's threshold with
    probability ``Phi(-(1 - h) delta / sigma)``; each such sample registers a
    spurious jump pair.
    """
    if noise_sigma <= 0:
        return 0.0
    reach = (1.0 - hysteresis_fraction) * abs(high_level - low_level) / noise_sigma
    return float(stats.norm.sf(reach) / dt)


def level_path(jumps: JumpRecord, model: MarkovModel) -> JumpRecord:
    """Collapse a state path onto level tags 0 (low) / 1 (high).

    Transitions between states of equal output level are invisible and are
    merged into a single dwell.
    """
    low, _ = two_levels(model)
    tags = (model.levels[jumps.states] != low).astype(np.int64)
    keep = np.flatnonzero(np.diff(tags)) + 1
    return JumpRecord(np.asarray(jumps.times)[keep - 1], tags[np.concatenate([[0], keep])], jumps.t_end)


def dwell_times(jumps: JumpRecord, level_tag: str) -> np.ndarray:
    """Completed dwells in ``level_tag`` of a two-level record.

    The first and last visits are censored by the record boundaries and are
    dropped.
    """
    code = _tag_code(level_tag)
    states = np.asarray(jumps.states)
    if len(states) < 3:
        return np.zeros(0)
    d = np.diff(np.asarray(jumps.times))
    inner = states[1:-1]
    return d[inner == code]


def _tag_code(tag):
    if tag not in (LOW, HIGH):
        raise ValueError(f"level_tag must be 'low' or 'high', got {tag!r}")
    return 0 if tag == LOW else 1


@dataclass(frozen=True, eq=False)
class WtdHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    level_tag: str
    total_dwells: int
    dwells: np.ndarray = field(repr=False, default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if np.any(np.diff(self.bin_edges) <= 0):
            raise ValueError("bin edges must be increasing")
        if int(np.sum(self.counts)) != self.total_dwells:
            raise ValueError("counts must sum to total_dwells")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    def density(self) -> np.ndarray:
        """Counts normalized to a probability density."""
        widths = np.diff(self.bin_edges)
        return self.counts / (max(self.total_dwells, 1) * widths)


def empirical_wtd(jumps, level_tag: str, bins=None, model: Optional[MarkovModel] = None) -> WtdHistogram:
    """Histogram of dwell durations in ``level_tag``.

    ``jumps`` is a two-level :class:`JumpRecord` (e.g. from
    :func:`detect_jumps`), a state-level record together with ``model``, or a
    plain array of dwell durations.  Only dwells inside the bin range are
    counted.
    """
    if isinstance(jumps, JumpRecord):
        rec = level_path(jumps, model) if model is not None else jumps
        dw = dwell_times(rec, level_tag)
    else:
        _tag_code(level_tag)
        dw = np.asarray(jumps, dtype=float)
    if len(dw) < 2:
        raise NoDwells(f"{len(dw)} complete {level_tag} dwell(s); at least 2 required")
    if bins is None:
        bins = np.linspace(0.0, dw.max() * (1 + 1e-9), 51)
    counts, edges = np.histogram(dw, bins=bins)
    inside = dw[(dw >= edges[0]) & (dw <= edges[-1])]
    return WtdHistogram(edges.astype(float), counts.astype(np.int64), level_tag, int(counts.sum()), inside)


# -- analytic densities -----------------------------------------------------

@dataclass(frozen=True, eq=False)
class WtdAnalytic:
    """Normalized waiting-time density.

    ``mono``: ``k e^{-k tau}``.  ``bi``: proportional to
    ``e^{-g2 tau} + wtd_weight * e^{-g3 tau}`` with ``decay_rates = (g2, g3)``.
    ``numeric``: evaluated from the jump matrices by matrix exponentials.
    """

    form: str
    decay_rates: tuple = ()
    wtd_weight: Optional[float] = None
    amplitudes: tuple = ()
    _matrices: Optional[tuple] = field(default=None, repr=False)

    @classmethod
    def mono(cls, rate):
        return cls("mono", (float(rate),), None, (float(rate),))

    @classmethod
    def bi(cls, g2, g3, alpha):
        g2, g3, alpha = float(g2), float(g3), float(alpha)
        norm = 1.0 / g2 + alpha / g3
        return cls("bi", (g2, g3), alpha, (1.0 / norm, alpha / norm))

    @classmethod
    def from_amplitudes(cls, amps, rates):
        amps = tuple(float(a) for a in amps)
        rates = tuple(float(r) for r in rates)
        if len(rates) == 1:
            return cls("mono", rates, None, amps)
        return cls("bi", rates, amps[1] / amps[0], amps)

    def density(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        if self.form == "numeric":
            return _numeric_density(self._matrices, tau)
        out = np.zeros_like(tau)
        for a, k in zip(self.amplitudes, self.decay_rates):
            out = out + a * np.exp(-k * tau)
        return out

    __call__ = density

    def cdf(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        if self.form == "numeric":
            return _numeric_cdf(self._matrices, tau)
        out = np.zeros_like(tau)
        for a, k in zip(self.amplitudes, self.decay_rates):
            out = out + a / k * (1.0 - np.exp(-k * tau))
        return out

    def total(self) -> float:
        """``int_0^inf w dtau`` from the closed form."""
        if self.form == "numeric":
            return float(_numeric_cdf(self._matrices, np.array([np.inf]))[0])
        return float(sum(a / k for a, k in zip(self.amplitudes, self.decay_rates)))


def _numeric_density(mats, tau):
    t_row, j_to, l0, start = mats
    flat = tau.ravel()
    out = np.empty(flat.shape)
    for i, x in enumerate(flat):
        out[i] = (t_row @ j_to @ linalg.expm(l0 * x) @ start).real
    return out.reshape(tau.shape)


def _numeric_cdf(mats, tau):
    t_row, j_to, l0, start = mats
    row = t_row @ j_to @ linalg.inv(l0)
    flat = tau.ravel()
    out = np.empty(flat.shape)
    for i, x in enumerate(flat):
        prop = np.zeros_like(l0) if np.isinf(x) else linalg.expm(l0 * x)
        out[i] = (row @ (prop - np.eye(len(l0))) @ start).real
    return out.reshape(tau.shape)


@dataclass(frozen=True, eq=False)
class JumpOperators:
    j_down: np.ndarray
    j_up: np.ndarray
    l0: np.ndarray
    rho0: np.ndarray

    def entry(self, tag):
        """Normalized state distribution right after a jump into level ``tag``."""
        j = self.j_up if tag == HIGH else self.j_down
        x = j @ self.rho0
        return x / x.sum()

    def exit_op(self, tag):
        return self.j_down if tag == HIGH else self.j_up


def jump_operators(model: MarkovModel) -> JumpOperators:
    base = model.replace(hamiltonian=None)
    j_down, j_up, l0 = jump_partition(base)
    rho0 = steady_state(build_liouvillian(base)).probabilities
    return JumpOperators(j_down, j_up, l0, rho0)


def numeric_wtd(model: MarkovModel, tag: str, tau) -> np.ndarray:
    """Matrix-exponential evaluation of the single-time WTD (reference route)."""
    ops = jump_operators(model)
    start = ops.entry(tag)
    t_row = np.ones(model.n_states)
    exit_op = ops.exit_op(tag)
    tau = np.asarray(tau, dtype=float)
    out = np.array([t_row @ exit_op @ linalg.expm(ops.l0 * x) @ start for x in tau.ravel()])
    return out.reshape(tau.shape)


def _three_state_closed(g01, g02, g10, g20, g12, g21):
    """Closed-form (single, pair) WTDs with state 0 alone in its level."""
    w_single = WtdAnalytic.mono(g01 + g02)
    s = g10 + g12 + g20 + g21
    gam = np.sqrt(2 * g21 * (-g10 + g12 + g20) + (g10 + g12 - g20) ** 2 + g21**2)
    pref = (g01 * g10 + g02 * g20) / (g01 + g02)
    if gam <= 1e-12 * s or pref <= 0:
        return w_single, None
    beta = (
        g01 * (g10 * (-g12 + g20 + g21 + gam) - g10**2 + 2 * g12 * g20)
        + g02 * (g20 * (g10 + g12 - g21 + gam) + 2 * g10 * g21 - g20**2)
    ) / (2 * gam * (g01 * g10 + g02 * g20))
    r1, r2 = 0.5 * (s - gam), 0.5 * (s + gam)
    amps, rates = [], []
    for amp, rate in ((pref * beta, r1), (pref * (1 - beta), r2)):
        if amp != 0:
            amps.append(amp)
            rates.append(rate)
    return w_single, WtdAnalytic.from_amplitudes(amps, rates)


def analytic_wtd(model: MarkovModel, *, closed_form: bool = True):
    """``(w_low, w_high)`` of a two-level model.

    Two- and three-state models use the closed forms; larger models (or
    ``closed_form=False``) return ``numeric`` densities evaluated by matrix
    exponentials of ``L0``.
    """
    low, _ = two_levels(model)
    n = model.n_states
    q = model.rate_matrix()
    if closed_form and n == 2:
        return WtdAnalytic.mono(q[0, 1] if model.levels[0] == low else q[1, 0]), WtdAnalytic.mono(
            q[1, 0] if model.levels[0] == low else q[0, 1]
        )
    if closed_form and n == 3:
        is_low = model.levels == low
        single_low = is_low.sum() == 1
        s = int(np.flatnonzero(is_low if single_low else ~is_low)[0])
        p, r = [k for k in range(3) if k != s]
        single, pair = _three_state_closed(q[s, p], q[s, r], q[p, s], q[r, s], q[p, r], q[r, p])
        if pair is not None:
            return (single, pair) if single_low else (pair, single)
    ops = jump_operators(model)
    t_row = np.ones(n)
    out = []
    for tag in (LOW, HIGH):
        mats = (t_row, ops.exit_op(tag), ops.l0, ops.entry(tag))
        out.append(WtdAnalytic("numeric", _matrices=mats))
    return tuple(out)


# -- equivalent three-state models ------------------------------------------

@dataclass(frozen=True)
class EquivParams:
    """Parameters ``(a, b, c, d)`` in Hz shared by the four equivalent models."""

    a: float
    b: float
    c: float
    d: float


def equiv_model(params: EquivParams, which: int, levels=(0.0, 1.0, 1.0)) -> MarkovModel:
    """Reduced three-state model ``which`` (1..4) with identical WTDs and spectra.

    State 0 is low, states 1 and 2 high.  Models 1 and 2 route all jumps
    through state 1; models 3 and 4 enter the high level through both states.
    """
    a, b, c, d = params.a, params.b, params.c, params.d
    with np.errstate(divide="ignore", invalid="ignore"):
        if which == 1:
            rates = {
                (0, 1): a,
                (1, 0): c * (a - d) * (b + d) / (a * b),
                (1, 2): c * d**2 * (a - b - d) / (a * b * (a - d)),
                (2, 1): a * c / (a - d),
            }
        elif which == 2:
            rates = {
                (0, 1): a,
                (1, 0): c * (a - d) * (b + d) / (a * b),
                (1, 2): c * d * (b + d) / (a * b),
                (2, 0): c,
            }
        elif which == 3:
            rates = {(0, 1): a - d, (0, 2): d, (1, 0): c * (b + d) / b, (2, 1): c}
        elif which == 4:
            rates = {(0, 1): a - b - d, (0, 2): b + d, (1, 0): c * (b + d) / b, (2, 0): c}
        else:
            raise ValueError(f"which must be 1..4, got {which}")
    for (i, j), g in rates.items():
        if not np.isfinite(g) or g < 0:
            raise NegativeDerivedRate(
                f"model {which}: gamma_{i}{j} = {g:.6g} for (a, b, c, d) = ({a}, {b}, {c}, {d})"
            )
    return MarkovModel(3, rates, levels)


def equiv_params_from_wtd(w_low: WtdAnalytic, w_high: WtdAnalytic) -> EquivParams:
    """Invert the WTDs of the equivalent models to ``(a, b, c, d)``.

    ``w_low`` is the mono-exponential density of the single low state and
    ``w_high`` the bi-exponential one of the high pair.  In model 3 the
    slow decay rate is ``c`` and the fast one ``c (b + d) / b``; the
    amplitude of the slow term fixes the entry split ``d / a``.
    """
    if w_low.form != "mono" or w_high.form != "bi":
        raise ValueError("need a mono-exponential low WTD and a bi-exponential high WTD")
    a = w_low.decay_rates[0]
    (r0, r1), (a0, a1) = w_high.decay_rates, w_high.amplitudes
    if r0 > r1:
        r0, r1, a0 = r1, r0, a1
    c, k1 = r0, r1
    if not k1 > c:
        raise NegativeDerivedRate("high-level decay rates coincide")
    d = a * a0 * (k1 - c) / (k1 * c)
    b = c * d / (k1 - c)
    if not (0 < d < a and b > 0):
        raise NegativeDerivedRate(f"WTD parameters give d = {d:.6g}, b = {b:.6g} for a = {a:.6g}")
    return EquivParams(float(a), float(b), float(c), float(d))


# -- multi-time WTDs --------------------------------------------------------

def multi_time_wtd(model: MarkovModel, level_sequence: Sequence[str], tau_grid) -> np.ndarray:
    """Joint density of consecutive dwells in the levels ``level_sequence``.

    ``tau_grid`` is a list with one 1-D array per dwell; the result is
    evaluated on their outer product, so ``result[i, j]`` belongs to
    ``(tau_grid[0][i], tau_grid[1][j])``.  The first dwell starts with a jump
    into ``level_sequence[0]`` from the stationary state.
    """
    two_levels(model)
    seq = list(level_sequence)
    for t in seq:
        _tag_code(t)
    if len(tau_grid) != len(seq):
        raise ValueError("tau_grid needs one axis per dwell")
    ops = jump_operators(model)
    # alternation is required: two dwells in the same level are not consecutive
    if any(x == y for x, y in zip(seq, seq[1:])):
        return np.zeros(tuple(len(g) for g in tau_grid))
    first = ops.j_up if seq[0] == HIGH else ops.j_down
    start = first @ ops.rho0
    start = start / start.sum()
    # state vector as a function of the leading dwells: shape (*grid, n)
    vec = start
    for k, (tag, taus) in enumerate(zip(seq, tau_grid)):
        props = np.stack([linalg.expm(ops.l0 * x) for x in np.asarray(taus, dtype=float)])
        exit_op = ops.exit_op(tag)
        step = np.einsum("ij,tjk->tik", exit_op, props)
        vec = np.einsum("tik,...k->...ti", step, vec)
    return vec.sum(axis=-1).real


def _product_of_singles(model, seq, tau_grid):
    w_low, w_high = analytic_wtd(model)
    out = np.ones(())
    for tag, taus in zip(seq, tau_grid):
        w = (w_low if tag == LOW else w_high).density(np.asarray(taus, dtype=float))
        out = np.multiply.outer(out, w)
    return out


@dataclass(frozen=True)
class FactorizationReport:
    max_deviation: float
    worst_sequence: tuple
    per_sequence: dict

    @property
    def factorizes(self) -> bool:
        return self.max_deviation <= 1e-9


def default_tau_grid(model: MarkovModel, points: int = 24) -> np.ndarray:
    q = model.rate_matrix()
    pos = q[q > 0]
    return np.concatenate([[0.0], np.geomspace(0.01 / pos.max(), 5.0 / pos.min(), points - 1)])


def factorization_check(model: MarkovModel, tau=None, orders=(2, 3)) -> FactorizationReport:
    """Compare multi-time WTDs with products of single-time WTDs.

    Deviation on each sequence is ``max|joint - product| / max|product|`` over
    the grid.  Sequences of 2 and 3 alternating dwells are checked.
    """
    tau = default_tau_grid(model) if tau is None else np.asarray(tau, dtype=float)
    seqs = []
    for order in orders:
        for first in (LOW, HIGH):
            seq, cur = [], first
            for _ in range(order):
                seq.append(cur)
                cur = HIGH if cur == LOW else LOW
            seqs.append(tuple(seq))
    per = {}
    for seq in seqs:
        grid = [tau] * len(seq)
        joint = multi_time_wtd(model, seq, grid)
        prod = _product_of_singles(model, seq, grid)
        per[seq] = float(np.abs(joint - prod).max() / np.abs(prod).max())
    worst = max(per, key=per.get)
    return FactorizationReport(per[worst], worst, per)


def random_two_level_model(rng, n_states, n_low=1, lo=1.0, hi=1e4) -> MarkovModel:
    """All-to-all model with log-uniform rates; the first ``n_low`` states are low."""
    rates = {}
    for i in range(n_states):
        for j in range(n_states):
            if i != j:
                rates[(i, j)] = float(np.exp(rng.uniform(np.log(lo), np.log(hi))))
    levels = [0.0] * n_low + [1.0] * (n_states - n_low)
    return MarkovModel(n_states, rates, levels)


def find_counterexample(seed: int, threshold: float = 1e-3, attempts: int = 200):
    """Randomized search for a 4-state model whose WTDs do not factorize.

    Models with a single state in one level are renewal processes and always
    factorize, so two states per level are used.
    """
    rng = np.random.default_rng(seed)
    for attempt in range(attempts):
        model = random_two_level_model(rng, 4, n_low=2)
        rep = factorization_check(model, orders=(2,))
        if rep.max_deviation > threshold:
            return model, rep, attempt
    raise RuntimeError("no counterexample found")


# -- maximum-likelihood fits ------------------------------------------------

@dataclass(frozen=True, eq=False)
class WtdFit:
    """Result of :func:`fit_wtd`.

    ``covariance`` refers to ``param_names``: ``("rate",)`` for mono and
    ``("g2", "g3", "alpha")`` for the bi-exponential form.
    """

    analytic: WtdAnalytic
    params: np.ndarray
    covariance: np.ndarray
    param_names: tuple
    loglik: float
    n: int
    converged: bool
    degenerate: bool

    @property
    def errors(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))


def _bi_loglik(params, x):
    g2, g3, alpha = params
    norm = 1.0 / g2 + alpha / g3
    dens = (np.exp(-g2 * x) + alpha * np.exp(-g3 * x)) / norm
    if norm <= 0 or np.any(dens <= 0):
        return -np.inf
    return float(np.sum(np.log(dens)))


def _numeric_hessian(fun, x, rel=1e-4):
    k = len(x)
    h = rel * np.abs(x) + 1e-12
    hess = np.empty((k, k))
    for i in range(k):
        for j in range(i, k):
            ei, ej = np.zeros(k), np.zeros(k)
            ei[i], ej[j] = h[i], h[j]
            val = (fun(x + ei + ej) - fun(x + ei - ej) - fun(x - ei + ej) + fun(x - ei - ej)) / (
                4 * h[i] * h[j]
            )
            hess[i, j] = hess[j, i] = val
    return hess


def _em_biexp(x, max_iter, tol):
    """EM for a two-component exponential mixture ``p k1 e^{-k1 x} + (1-p) k2 e^{-k2 x}``."""
    mean = x.mean()
    k1, k2, p = 2.0 / mean, 0.5 / mean, 0.5
    prev = -np.inf
    for it in range(max_iter):
        a = p * k1 * np.exp(-k1 * x)
        b = (1 - p) * k2 * np.exp(-k2 * x)
        tot = a + b
        ll = float(np.sum(np.log(tot)))
        r = a / tot
        s1 = r.sum()
        p = s1 / len(x)
        k1 = s1 / np.sum(r * x)
        k2 = (len(x) - s1) / np.sum((1 - r) * x)
        if abs(ll - prev) <= tol * abs(ll):
            return k1, k2, p, True, it
        prev = ll
    return k1, k2, p, False, max_iter


def fit_wtd(hist, form: str = "bi", *, max_iter: int = 20000, tol: float = 1e-12) -> WtdFit:
    """Maximum-likelihood fit on the raw dwell times carried by ``hist``.

    ``hist`` may also be a plain array of dwell times.  At least ~100 dwells
    are recommended.  The bi-exponential fit starts from an EM solution and
    is polished by direct likelihood maximization in the
    ``(g2, g3, alpha)`` parameterization; its covariance is the inverse
    observed information.  A bi fit whose two rates coincide within their
    errors (or whose weight vanishes) is flagged ``degenerate``.
    """
    x = np.asarray(hist.dwells if isinstance(hist, WtdHistogram) else hist, dtype=float)
    x = x[x > 0]
    n = len(x)
    if n < 2:
        raise NoDwells("at least two positive dwell times are required")
    if form == "mono":
        rate = n / x.sum()
        cov = np.array([[rate**2 / n]])
        ll = n * np.log(rate) - rate * x.sum()
        return WtdFit(WtdAnalytic.mono(rate), np.array([rate]), cov, ("rate",), ll, n, True, False)
    if form != "bi":
        raise ValueError("form must be 'mono' or 'bi'")

    k1, k2, p, em_ok, _ = _em_biexp(x, max_iter, tol)
    if k1 < k2:
        k1, k2, p = k2, k1, 1 - p
    # paper-form parameters with g2 the slow rate: w ~ e^{-g2 t} + alpha e^{-g3 t}
    g2, g3 = k2, k1
    alpha = (p * k1) / max((1 - p) * k2, 1e-300)
    start = np.log([g2, g3, max(alpha, 1e-12)])

    def nll(logp):
        val = _bi_loglik(np.exp(logp), x)
        return -val if np.isfinite(val) else 1e300

    res = optimize.minimize(nll, start, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-10, "maxiter": 4000})
    params = np.exp(res.x) if res.fun <= nll(start) else np.exp(start)
    ll = _bi_loglik(params, x)
    hess = _numeric_hessian(lambda q: _bi_loglik(q, x), params)
    try:
        cov = linalg.inv(-hess)
        if not np.all(np.isfinite(cov)) or np.any(np.diag(cov) < 0):
            raise linalg.LinAlgError
    except linalg.LinAlgError:
        cov = np.full((3, 3), np.inf)
    err = np.sqrt(np.abs(np.diag(cov)))
    weight_frac = params[2] / params[1] / (1.0 / params[0] + params[2] / params[1])
    degenerate = bool(
        abs(params[0] - params[1]) <= 2 * np.hypot(err[0], err[1])
        or weight_frac < 1e-3
        or weight_frac > 1 - 1e-3
        or not np.all(np.isfinite(err))
    )
    converged = bool(em_ok or res.success)
    if not converged and not degenerate:
        best = WtdAnalytic.bi(*params)
        raise NonConvergence("bi-exponential likelihood fit hit its iteration cap", best)
    if degenerate:
        warnings.warn("bi-exponential fit is degenerate (over-parameterized)", RuntimeWarning)
    return WtdFit(WtdAnalytic.bi(*params), params, cov, ("g2", "g3", "alpha"), ll, n, converged, degenerate)
