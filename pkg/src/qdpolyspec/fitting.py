"""Weighted least-squares fits of model polyspectra, AIC scoring and bootstrap errors.

Free parameters are the logarithms of the free rates of a topology, the
level difference ``delta = I_high - I_low`` and, when order 1 is fitted, the
low level ``I_low``.  Optionally a flat background of the second-order
spectrum is fitted too.  Order-n spectra scale as ``delta^n``, so the model is
evaluated once per rate vector at ``delta = 1`` and rescaled.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import linalg, optimize

from .errors import GridMismatch, NonConvergence, QdPolyspecError
from .estimation import EstimationConfig, SpectrumEstimate, background_subtract, estimate_polyspectra
from .kernels import ARGS3, ARGS4, HALF4, TAB3, TAB4, s3_kernel, s4_kernel
from .markov import MarkovModel, build_liouvillian, steady_state
from .simulate import DetectorTrace, simulate_trace, stream

TWO_PI = 2.0 * np.pi
RATE_BOUNDS = (1e-3, 1e7)
INIT_RANGE = (1.0, 1e5)


# -- topologies -------------------------------------------------------------

@dataclass(frozen=True)
class Topology:
    """Which rates are free; ``level_pattern[k]`` is 0 (low) or 1 (high)."""

    name: str
    n_states: int
    free: tuple
    level_pattern: tuple

    @property
    def n_rates(self) -> int:
        return len(self.free)

    def model(self, rates, low=0.0, delta=1.0) -> MarkovModel:
        levels = [low + delta * p for p in self.level_pattern]
        return MarkovModel(self.n_states, dict(zip(self.free, map(float, rates))), levels)

    def rate_vector(self, model: MarkovModel) -> np.ndarray:
        return np.array([model.rates.get(pair, 0.0) for pair in self.free])


_ALL3 = ((0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1))
TOPOLOGIES = {
    "2state": Topology("2state", 2, ((0, 1), (1, 0)), (0, 1)),
    "m1": Topology("m1", 3, ((0, 1), (1, 0), (1, 2), (2, 1)), (0, 1, 1)),
    "m2": Topology("m2", 3, ((0, 1), (1, 0), (1, 2), (2, 0)), (0, 1, 1)),
    "m3": Topology("m3", 3, ((0, 1), (0, 2), (1, 0), (2, 1)), (0, 1, 1)),
    "m4": Topology("m4", 3, ((0, 1), (0, 2), (1, 0), (2, 0)), (0, 1, 1)),
    "general3": Topology("general3", 3, _ALL3, (0, 1, 1)),
}


def topology(name) -> Topology:
    if isinstance(name, Topology):
        return name
    try:
        return TOPOLOGIES[name]
    except KeyError:
        raise ValueError(f"unknown topology {name!r}; known: {', '.join(TOPOLOGIES)}") from None


# -- data -------------------------------------------------------------------

WEIGHTS = ("local", "raw")
LOCAL_RADIUS = 3
LOCAL_GAP = 1


def local_variance(var, radius: int = LOCAL_RADIUS, gap: int = LOCAL_GAP) -> np.ndarray:
    """Mean variance of the neighbouring bins, for fit weights.

    A bin's own part-variance is correlated with its value (both come from
    the same segments), and inverse-variance weights then pull the fit
    towards low values.  Each bin is given the mean variance of the bins at
    Chebyshev distance ``gap < d <= radius``; for 2-D fields neighbours
    within ``gap`` of the mirror bin ``(j, i)``, which carries the same
    value, are excluded as well.
    """
    var = np.asarray(var, dtype=float)
    if var.ndim == 0:
        return var
    ok_val = np.isfinite(var)
    vals = np.where(ok_val, var, 0.0)
    acc = np.zeros_like(vals)
    cnt = np.zeros_like(vals)
    if var.ndim == 1:
        n = len(var)
        idx = np.arange(n)
        for d in range(-radius, radius + 1):
            if abs(d) <= gap:
                continue
            src = idx + d
            ok = (src >= 0) & (src < n)
            ok[ok] &= ok_val[src[ok]]
            acc[ok] += vals[src[ok]]
            cnt[ok] += 1
    else:
        n1, n2 = var.shape
        ii, jj = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
        for di in range(-radius, radius + 1):
            for dj in range(-radius, radius + 1):
                if max(abs(di), abs(dj)) <= gap:
                    continue
                si, sj = ii + di, jj + dj
                ok = (si >= 0) & (si < n1) & (sj >= 0) & (sj < n2)
                ok &= np.maximum(np.abs(si - jj), np.abs(sj - ii)) > gap
                ok[ok] &= ok_val[si[ok], sj[ok]]
                acc[ok] += vals[si[ok], sj[ok]]
                cnt[ok] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        out = acc / cnt
    # isolated bins without usable neighbours keep their own variance
    return np.where(cnt > 0, out, var)


@dataclass(frozen=True, eq=False)
class OrderData:
    order: int
    values: np.ndarray
    sigma: np.ndarray
    w1: np.ndarray
    w2: Optional[np.ndarray] = None


class FitData:
    """Flattened fit bins of several spectra.

    Two-dimensional spectra contribute their upper triangle; bins touching
    zero frequency are dropped unless ``include_dc``.  With
    ``weights="local"`` (default) the fit weights use :func:`local_variance`
    instead of each bin's own variance (``weights="raw"``).
    """

    def __init__(self, spectra, orders=None, include_dc=False, weights="local"):
        if weights not in WEIGHTS:
            raise ValueError(f"weights must be one of {WEIGHTS}, got {weights!r}")
        self.weights = weights
        if isinstance(spectra, SpectrumEstimate):
            spectra = [spectra]
        if isinstance(spectra, dict):
            spectra = list(spectra.values())
        by_order = {s.order: s for s in spectra}
        orders = sorted(by_order) if orders is None else sorted(set(orders))
        missing = [o for o in orders if o not in by_order]
        if missing:
            raise ValueError(f"no spectrum of order {missing} supplied")
        self.spectra = {o: by_order[o] for o in orders}
        self.orders = tuple(orders)
        self.parts = {}
        grids = [s.grid[0] for s in self.spectra.values() if s.order >= 2]
        for g in grids[1:]:
            if g.shape != grids[0].shape or not np.allclose(g, grids[0], rtol=1e-12):
                raise GridMismatch("spectra of different orders use different frequency grids")
        for o, s in self.spectra.items():
            if o == 1:
                self.parts[1] = OrderData(1, np.atleast_1d(s.values), np.sqrt(np.atleast_1d(s.variance)), np.zeros(1))
                continue
            mask = s.unique_mask() if include_dc else s.fit_mask()
            mask = mask & np.isfinite(s.values)
            var = local_variance(s.variance) if weights == "local" else s.variance
            if o == 2:
                w1 = TWO_PI * s.grid[0][mask]
                w2 = None
            else:
                f1, f2 = np.meshgrid(s.grid[0], s.grid[1], indexing="ij")
                w1, w2 = TWO_PI * f1[mask], TWO_PI * f2[mask]
            self.parts[o] = OrderData(o, s.values[mask], np.sqrt(var[mask]), w1, w2)
        for part in self.parts.values():
            if np.any(~(part.sigma > 0)):
                raise ValueError(f"order {part.order}: variance must be positive on every fitted bin")

    @property
    def n(self) -> int:
        return int(sum(len(p.values) for p in self.parts.values()))

    def decimated(self, stride: int) -> "FitData":
        """Copy keeping every ``stride``-th frequency along each 2-D axis."""
        out = object.__new__(FitData)
        out.spectra, out.orders, out.weights, out.parts = self.spectra, self.orders, self.weights, {}
        for o, p in self.parts.items():
            if o <= 2 or stride <= 1:
                out.parts[o] = p
                continue
            df = np.min(p.w1[p.w1 > 0]) if np.any(p.w1 > 0) else 1.0
            i1 = np.rint(p.w1 / df).astype(np.int64)
            i2 = np.rint(p.w2 / df).astype(np.int64)
            keep = (i1 % stride == 0) & (i2 % stride == 0)
            out.parts[o] = OrderData(o, p.values[keep], p.sigma[keep], p.w1[keep], p.w2[keep])
        return out

    def rescaled(self, factor: float) -> "FitData":
        """Copy with all variances multiplied by ``factor``."""
        out = object.__new__(FitData)
        out.spectra, out.orders, out.weights = self.spectra, self.orders, self.weights
        out.parts = {o: replace(p, sigma=p.sigma * math.sqrt(factor)) for o, p in self.parts.items()}
        return out


@dataclass(frozen=True, eq=False)
class FitProblem:
    """Topology plus data to fit.

    ``fit_floor`` adds a flat second-order background (white detector noise)
    as a free parameter; use it when no background spectrum was subtracted.
    """

    candidate: Topology
    data: FitData
    fit_floor: bool = False

    def __post_init__(self):
        object.__setattr__(self, "candidate", topology(self.candidate))

    @property
    def param_names(self) -> tuple:
        names = [f"log_g{i}{j}" for i, j in self.candidate.free] + ["delta"]
        if 1 in self.data.parts:
            names.append("low")
        if self.fit_floor:
            names.append("floor")
        return tuple(names)

    @property
    def k(self) -> int:
        return len(self.param_names)


# -- model evaluation -------------------------------------------------------

class _Terms:
    __slots__ = ("lam", "u", "M", "v", "p_high")


def _markov_terms(topo: Topology, rates: np.ndarray):
    n = topo.n_states
    q = np.zeros((n, n))
    for (i, j), g in zip(topo.free, rates):
        q[i, j] = g
    gen = q.T - np.diag(q.sum(axis=1))
    lam, right = linalg.eig(gen)
    zero = int(np.argmin(np.abs(lam)))
    left = linalg.inv(right)
    p = np.real(right[:, zero] / right[:, zero].sum())
    levels = np.array(topo.level_pattern, dtype=float)
    a = np.diag(levels - levels @ p)
    nz = [k for k in range(n) if k != zero]
    r, rinv = right[:, nz], left[nz, :]
    t = _Terms()
    t.lam = np.ascontiguousarray(lam[nz].astype(complex))
    t.u = np.ascontiguousarray((np.ones(n) @ a @ r).astype(complex))
    t.M = np.ascontiguousarray((rinv @ a @ r).astype(complex))
    t.v = np.ascontiguousarray((rinv @ a @ p).astype(complex))
    t.p_high = float(levels @ p)
    return t


def unit_spectra(topo: Topology, rates, data: FitData) -> dict:
    """Model spectra at ``delta = 1`` on the fit bins of ``data``."""
    t = _markov_terms(topo, np.asarray(rates, dtype=float))
    out = {}
    for o, part in data.parts.items():
        if o == 1:
            out[1] = np.array([t.p_high])
        elif o == 2:
            lam = t.lam[:, None]
            g = -1.0 / (lam + 1j * part.w1) - 1.0 / (lam - 1j * part.w1)
            out[2] = ((t.u * t.v) @ g).real
        elif o == 3:
            out[3] = s3_kernel(t.lam, t.u, t.M, t.v, part.w1, part.w2, TAB3, ARGS3).real
        else:
            half = s4_kernel(t.lam, t.u, t.M, t.v, part.w1, part.w2, TAB4[HALF4], ARGS4)
            out[4] = 2.0 * half.real
    return out


class _Objective:
    def __init__(self, problem: FitProblem, data: Optional[FitData] = None, step: float = 1e-7):
        self.problem = problem
        self.topo = problem.candidate
        self.data = problem.data if data is None else data
        self.nr = self.topo.n_rates
        self.has_low = 1 in self.data.parts
        self.step = step
        self._key = None
        self._unit = None
        self.nfev = 0
        # data weighted to far below unit size (e.g. unit variances on spectra
        # in physical units) would stall on the absolute gradient tolerance
        z = np.concatenate([p.values / p.sigma for p in self.data.parts.values()])
        rms = float(np.sqrt(np.mean(z**2))) if len(z) else 1.0
        self.scale = rms if 0 < rms < 1 else 1.0

    def unpack(self, x):
        rates = np.exp(x[: self.nr])
        delta = x[self.nr]
        pos = self.nr + 1
        low = x[pos] if self.has_low else 0.0
        pos += self.has_low
        floor = x[pos] if self.problem.fit_floor else 0.0
        return rates, delta, low, floor

    def unit(self, logr):
        key = logr.tobytes()
        if key != self._key:
            self.nfev += 1
            self._unit = unit_spectra(self.topo, np.exp(logr), self.data)
            self._key = key
        return self._unit

    def model(self, x):
        rates, delta, low, floor = self.unpack(x)
        unit = self.unit(np.asarray(x[: self.nr]))
        out = {}
        for o, u in unit.items():
            if o == 1:
                out[1] = low + delta * u
            else:
                out[o] = u * delta**o
                if o == 2:
                    out[2] = out[2] + floor
        return out

    def residual(self, x):
        try:
            mod = self.model(x)
        except (linalg.LinAlgError, ValueError, ZeroDivisionError):
            return np.concatenate([p.values / p.sigma for p in self.data.parts.values()]) * 1e3
        return np.concatenate(
            [(p.values - mod[o]) / p.sigma for o, p in self.data.parts.items()]
        )

    def jac(self, x):
        x = np.asarray(x, dtype=float)
        rates, delta, low, floor = self.unpack(x)
        base_unit = self.unit(x[: self.nr])
        cols = []
        for i in range(self.nr):
            xp = x[: self.nr].copy()
            xp[i] += self.step
            try:
                up = unit_spectra(self.topo, np.exp(xp), self.data)
            except (linalg.LinAlgError, ValueError):
                up = base_unit
            self.nfev += 1
            col = []
            for o, p in self.data.parts.items():
                scale = delta if o == 1 else delta**o
                col.append(-(up[o] - base_unit[o]) * scale / self.step / p.sigma)
            cols.append(np.concatenate(col))
        col = []
        for o, p in self.data.parts.items():
            d = base_unit[o] if o == 1 else o * base_unit[o] * delta ** (o - 1)
            col.append(-d / p.sigma)
        cols.append(np.concatenate(col))
        if self.has_low:
            cols.append(np.concatenate([
                -np.ones_like(p.values) / p.sigma if o == 1 else np.zeros_like(p.values)
                for o, p in self.data.parts.items()
            ]))
        if self.problem.fit_floor:
            cols.append(np.concatenate([
                -np.ones_like(p.values) / p.sigma if o == 2 else np.zeros_like(p.values)
                for o, p in self.data.parts.items()
            ]))
        return np.column_stack(cols)

    def bounds(self):
        lo = [math.log(RATE_BOUNDS[0])] * self.nr + [-np.inf]
        hi = [math.log(RATE_BOUNDS[1])] * self.nr + [np.inf]
        extra = self.has_low + self.problem.fit_floor
        return np.array(lo + [-np.inf] * extra), np.array(hi + [np.inf] * extra)

    def initial_levels(self, logr):
        """Least-squares ``delta``, ``low`` and floor for fixed rates."""
        unit = self.unit(np.asarray(logr))
        parts = self.data.parts
        p2 = parts.get(2) or parts.get(4) or parts.get(3)
        o = p2.order
        u = unit[o] / p2.sigma
        y = p2.values / p2.sigma
        num = float(u @ y)
        den = float(u @ u)
        scale = num / den if den > 0 else 1.0
        if o in (2, 4):
            delta = math.copysign(abs(scale) ** (1.0 / o), 1.0)
        else:
            delta = math.copysign(abs(scale) ** (1.0 / 3), scale)
        extra = []
        if self.has_low:
            extra.append(float(parts[1].values[0] - delta * unit[1][0]))
        if self.problem.fit_floor:
            extra.append(0.0)
        return [delta if delta != 0 else 1.0] + extra


# -- reports ----------------------------------------------------------------

def aic(rss: float, k: int, n: int, form: str = "standard") -> float:
    """Akaike information criterion.

    ``form="standard"``: ``n ln(rss/n) + 2k``.  ``form="paper"``:
    ``2k - 2 ln(rss/n)``.  Only differences at equal ``n`` are meaningful.
    """
    if not (rss > 0 and n > 0 and k >= 1):
        raise ValueError("aic requires rss > 0, n > 0 and k >= 1")
    if form == "standard":
        return n * math.log(rss / n) + 2 * k
    if form == "paper":
        return 2 * k - 2 * math.log(rss / n)
    raise ValueError(f"unknown AIC form {form!r}")


@dataclass(eq=False)
class FitReport:
    topology: str
    rates: dict
    levels: tuple
    delta: float
    rss: float
    aic: float
    k: int
    n: int
    converged: bool
    steady_state: tuple
    params: np.ndarray
    floor: Optional[float] = None
    rate_errors: Optional[dict] = None
    aic_form: str = "standard"
    error: Optional[str] = None
    message: str = ""
    restarts: list = field(default_factory=list)
    bootstrap: Optional[dict] = None

    def model(self) -> MarkovModel:
        topo = topology(self.topology)
        return topo.model([self.rates[p] for p in topo.free], self.levels[0], self.delta)

    def to_dict(self) -> dict:
        d = {
            "topology": self.topology,
            "rates_hz": {f"{i}{j}": v for (i, j), v in self.rates.items()},
            "rate_errors_hz": None
            if self.rate_errors is None
            else {f"{i}{j}": v for (i, j), v in self.rate_errors.items()},
            "levels": list(self.levels),
            "delta": self.delta,
            "noise_floor": self.floor,
            "rss": self.rss,
            "aic": self.aic,
            "aic_form": self.aic_form,
            "k": self.k,
            "n": self.n,
            "converged": self.converged,
            "steady_state": list(self.steady_state),
            "params": [float(x) for x in np.atleast_1d(self.params)],
            "error": self.error,
            "message": self.message,
        }
        if self.bootstrap is not None:
            d["bootstrap"] = self.bootstrap
        return d


def _failed_report(name, err, n, k) -> FitReport:
    return FitReport(name, {}, (np.nan, np.nan), np.nan, np.inf, np.inf, k, n, False, (), np.zeros(0),
                     error=f"{type(err).__name__}: {err}")


def canonical_params(topo: Topology, x) -> np.ndarray:
    """Relabel the two high states so that ``gamma_01 >= gamma_02``.

    Only topologies whose rate set is invariant under swapping states 1 and
    2 (model 4, the general model) are relabelled; the swap leaves every
    spectrum unchanged there.
    """
    x = np.array(x, dtype=float)
    swap = {0: 0, 1: 2, 2: 1}
    index = {pair: k for k, pair in enumerate(topo.free)}
    mapped = [(swap[i], swap[j]) for i, j in topo.free]
    if topo.n_states != 3 or topo.level_pattern[1] != topo.level_pattern[2] or set(mapped) != set(topo.free):
        return x
    if x[index[(0, 2)]] > x[index[(0, 1)]]:
        x[: len(topo.free)] = x[[index[m] for m in mapped]]
    return x


def _report(problem, obj, x, rss, converged, aic_form, message="") -> FitReport:
    x = canonical_params(problem.candidate, x)
    rates, delta, low, floor = obj.unpack(x)
    topo = problem.candidate
    model = topo.model(rates, low, delta)
    p = steady_state(build_liouvillian(model)).probabilities
    n = problem.data.n
    return FitReport(
        topology=topo.name,
        rates=dict(zip(topo.free, map(float, rates))),
        levels=(float(low), float(low + delta)),
        delta=float(delta),
        rss=float(rss),
        aic=aic(rss, problem.k, n, aic_form),
        k=problem.k,
        n=n,
        converged=bool(converged),
        steady_state=tuple(float(v) for v in p),
        params=np.asarray(x, dtype=float),
        floor=float(floor) if problem.fit_floor else None,
        aic_form=aic_form,
        message=message,
    )


# -- fitting ----------------------------------------------------------------

@dataclass(frozen=True)
class FitOptions:
    """Optimizer settings.

    ``restarts`` random starts (log-uniform rates in ``INIT_RANGE``) are run
    on a decimated copy of the data (2-D spectra thinned by ``stride`` along
    each axis); the best ``polish`` of them are refined on all bins.
    """

    restarts: int = 8
    stride: int = 4
    polish: int = 1
    coarse_nfev: int = 60
    max_nfev: int = 200
    tol: float = 1e-10
    aic_form: str = "standard"


def _solve(obj, x0, tol, max_nfev):
    lb, ub = obj.bounds()
    x0 = np.clip(np.asarray(x0, dtype=float), lb + 1e-12, ub - 1e-12)
    scale = obj.scale
    res = optimize.least_squares(
        lambda x: obj.residual(x) / scale, x0, jac=lambda x: obj.jac(x) / scale, bounds=(lb, ub),
        method="trf", x_scale="jac", ftol=tol, xtol=tol, gtol=tol, max_nfev=max_nfev,
    )
    res.cost = res.cost * scale**2
    res.fun = res.fun * scale
    return res


def _random_start(obj, rng):
    logr = rng.uniform(math.log(INIT_RANGE[0]), math.log(INIT_RANGE[1]), obj.nr)
    return np.concatenate([logr, obj.initial_levels(logr)])


def fit_spectra(problem: FitProblem, init=None, seed: int = 0, options: FitOptions = FitOptions(),
                extra_starts: Sequence = ()) -> FitReport:
    """Variance-weighted least-squares fit with multi-start.

    ``init`` (a full parameter vector) and ``extra_starts`` are added to the
    random starts.  With ``options.restarts == 0`` and an ``init`` the fit is
    a single local refinement from ``init``.

    Raises :class:`NonConvergence` (carrying the best report) if no start
    converges within the evaluation cap.
    """
    rng = np.random.default_rng([int(seed), 7])
    full = _Objective(problem)
    starts = [np.asarray(s, dtype=float) for s in extra_starts]
    if init is not None:
        starts.insert(0, np.asarray(init, dtype=float))
    coarse_data = problem.data.decimated(options.stride)
    coarse = _Objective(problem, coarse_data)
    for _ in range(options.restarts):
        starts.append(_random_start(coarse, rng))
    if not starts:
        raise ValueError("no starting point: give init or restarts > 0")

    trials = []
    if options.restarts > 0 or len(starts) > 1:
        for s in starts:
            try:
                res = _solve(coarse, s, 1e-8, options.coarse_nfev)
                trials.append((2 * res.cost, res.x))
            except (ValueError, linalg.LinAlgError, QdPolyspecError) as exc:
                trials.append((np.inf, s))
                warnings.warn(f"start failed: {exc}", RuntimeWarning)
        trials.sort(key=lambda t: t[0])
        candidates = [x for c, x in trials[: max(1, options.polish)] if np.isfinite(c)]
        if not candidates:
            candidates = [starts[0]]
    else:
        candidates = starts

    best = None
    for x in candidates:
        res = _solve(full, x, options.tol, options.max_nfev)
        rss = 2 * res.cost
        if best is None or rss < best[0]:
            best = (rss, res)
    rss, res = best
    converged = res.status > 0
    report = _report(problem, full, res.x, rss, converged, options.aic_form, res.message)
    report.restarts = [float(c) for c, _ in trials]
    if not converged:
        raise NonConvergence(f"{problem.candidate.name}: {res.message}", report)
    return report


def embed_start(report: FitReport, target: Topology, problem: FitProblem, fill: float = 1e-2):
    """Parameter vector for ``target`` reproducing a nested model's fit."""
    logr = [math.log(max(report.rates.get(pair, fill), RATE_BOUNDS[0] * 10)) for pair in target.free]
    tail = [report.delta]
    if 1 in problem.data.parts:
        tail.append(report.levels[0])
    if problem.fit_floor:
        tail.append(report.floor or 0.0)
    return np.array(logr + tail)


def _nested(small: Topology, big: Topology) -> bool:
    return (
        small.n_states == big.n_states
        and small.level_pattern == big.level_pattern
        and set(small.free) <= set(big.free)
        and small.free != big.free
    )


@dataclass(eq=False)
class ScanResult:
    reports: list
    ranks: list
    tie_tol: float

    @property
    def best(self) -> FitReport:
        return self.reports[0]

    def delta_aic(self) -> list:
        ref = self.reports[0].aic
        return [r.aic - ref for r in self.reports]

    def table(self) -> list:
        out = []
        for rank, rep, d in zip(self.ranks, self.reports, self.delta_aic()):
            out.append({"rank": rank, "topology": rep.topology, "aic": rep.aic, "delta_aic": d,
                        "rss": rep.rss, "k": rep.k, "n": rep.n, "rates_hz": {f"{i}{j}": v for (i, j), v in rep.rates.items()},
                        "rate_errors_hz": None if rep.rate_errors is None else {f"{i}{j}": v for (i, j), v in rep.rate_errors.items()},
                        "error": rep.error})
        return out


def model_scan(data: FitData, candidates=("2state", "m1", "m2", "m3", "m4", "general3"), seed: int = 0,
               options: FitOptions = FitOptions(), fit_floor: bool = False, tie_tol: float = 0.5) -> ScanResult:
    """Fit every candidate and rank by AIC.

    Candidates are fitted in order of increasing parameter count; a
    candidate that nests an already fitted one also starts from that
    solution, so the larger model never ends above the smaller one's RSS.
    Candidates within ``tie_tol`` AIC units share a rank.  A failing
    candidate is ranked last with its error recorded.
    """
    topos = [topology(c) for c in candidates]
    if not topos:
        raise ValueError("at least one candidate is required")
    order = sorted(range(len(topos)), key=lambda i: topos[i].n_rates)
    reports = {}
    for idx in order:
        topo = topos[idx]
        problem = FitProblem(topo, data, fit_floor)
        extra = [embed_start(reports[j], topo, problem) for j in reports
                 if reports[j].error is None and _nested(topos[j], topo)]
        try:
            rep = fit_spectra(problem, seed=seed + idx, options=options, extra_starts=extra)
        except NonConvergence as exc:
            rep = exc.best
            rep.error = f"NonConvergence: {exc}"
        except (QdPolyspecError, ValueError, linalg.LinAlgError) as exc:
            rep = _failed_report(topo.name, exc, data.n, problem.k)
        reports[idx] = rep
    ranked = sorted(reports.values(), key=lambda r: (r.error is not None, r.aic))
    ranks, rank = [], 0
    for i, rep in enumerate(ranked):
        if i == 0 or rep.error is not None or abs(rep.aic - ranked[i - 1].aic) > tie_tol:
            rank = i + 1
        ranks.append(rank)
    return ScanResult(ranked, ranks, tie_tol)


# -- bootstrap --------------------------------------------------------------

@dataclass(frozen=True)
class Acquisition:
    """How a dataset was recorded, so replicates can be simulated alike."""

    t_end: float
    dt: float
    noise_sigma: float
    config: EstimationConfig = EstimationConfig()
    orders: tuple = (2, 3, 4)
    background: bool = False


def spectra_for_trace(trace: DetectorTrace, acq: Acquisition, background: Optional[DetectorTrace] = None) -> dict:
    spectra = estimate_polyspectra(trace, acq.orders, acq.config)
    if background is not None:
        bg = estimate_polyspectra(background, [o for o in acq.orders if o >= 2], acq.config)
        spectra = {o: background_subtract(s, bg[o]) if o in bg else s for o, s in spectra.items()}
    return spectra


def noise_trace(n_samples, dt, sigma, seed, index) -> DetectorTrace:
    rng = stream(seed, index, 2)
    return DetectorTrace(sigma * rng.standard_normal(n_samples), dt, 1.0, sigma)


def bootstrap_errors(problem: FitProblem, fitted: FitReport, count: int, seed: int, acq: Acquisition,
                     options: Optional[FitOptions] = None, progress=None) -> dict:
    """Parameter spread over fits to ``count`` simulated replicates.

    Each replicate simulates the fitted model with the original duration,
    sampling and noise, repeats the estimation (and background subtraction)
    with the same configuration and refits starting from the fitted
    parameters.  Returns per-rate standard deviations (Bessel-corrected),
    the replicate values and the number of failed replicates.
    """
    if count < 2:
        raise ValueError("count must be >= 2")
    options = options or FitOptions(restarts=0, tol=1e-8, max_nfev=60)
    model = fitted.model()
    include_dc = False
    samples, failed = [], 0
    t0 = time.time()
    for r in range(count):
        try:
            tr = simulate_trace(model, acq.t_end, acq.dt, acq.noise_sigma, seed, index=r)
            bg = noise_trace(len(tr), acq.dt, acq.noise_sigma, seed, r) if acq.background else None
            spectra = spectra_for_trace(tr, acq, bg)
            del tr, bg
            data = FitData(spectra, acq.orders, include_dc, problem.data.weights)
            rep_problem = FitProblem(problem.candidate, data, problem.fit_floor)
            rep = fit_spectra(rep_problem, init=fitted.params, seed=seed + r, options=options)
            samples.append([rep.rates[p] for p in problem.candidate.free])
        except (QdPolyspecError, ValueError, linalg.LinAlgError) as exc:
            failed += 1
            warnings.warn(f"bootstrap replicate {r} failed: {exc}", RuntimeWarning)
        if progress is not None:
            progress(r + 1, count, time.time() - t0)
    arr = np.array(samples)
    if len(arr) >= 2:
        std = arr.std(axis=0, ddof=1)
    else:
        std = np.full(problem.candidate.n_rates, np.nan)
    errors = dict(zip(problem.candidate.free, map(float, std)))
    fitted.rate_errors = errors
    fitted.bootstrap = {"count": count, "failed": failed, "seed": seed,
                        "mean_hz": {f"{i}{j}": float(v) for (i, j), v in zip(problem.candidate.free, arr.mean(0))} if len(arr) else {}}
    return {"std": errors, "samples": arr, "failed": failed}
