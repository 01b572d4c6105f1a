"""Strong coupling of a unit-rate Poisson process with a Brownian motion.

The pair is built top-down on a dyadic grid of ``[0, T]``.  The endpoint
count ``N ~ Poisson(T)`` and ``B(T) ~ Normal(0, T)`` are driven by one
uniform through their inverse CDFs.  Each dyadic cell is then split: the
left-half count is ``Binomial(n, 1/2)`` and the Brownian midpoint is the
bridge midpoint, again driven by a single shared uniform.  Both marginals
are exact; the monotone coupling keeps ``P(t) - t - B(t)`` small, growing
like ``log T``.

Arrival times inside the finest cells and Brownian values off the grid are
drawn lazily and memoized.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy import ndimage, stats

from ._backend import kernels
from .rng import as_generator, make_rng, open_uniforms

__all__ = [
    "KmtPair",
    "TailCell",
    "TailReport",
    "default_levels",
    "sample_coupled_pair",
    "refine_brownian",
    "kmt_error",
    "validate_tail_bounds",
    "error_growth",
    "error_tail",
    "wilson_upper",
]

MAX_LEVELS = 26


def default_levels(T: float, cell: float = 0.25) -> int:
    """Smallest number of dyadic levels with finest cells no wider than ``cell``."""
    return max(0, int(math.ceil(math.log2(T / cell))))


@dataclass(eq=False)
class KmtPair:
    """A jointly sampled Poisson path ``P`` and Brownian path ``B`` on ``[0, T]``.

    Not thread-safe: lazy refinement mutates the pair.
    """

    T: float
    levels: int
    counts: np.ndarray
    bvals: np.ndarray
    rng: np.random.Generator = field(repr=False)
    _arrivals: np.ndarray | None = field(default=None, repr=False)
    _extra_t: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    _extra_b: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    _known: tuple[np.ndarray, np.ndarray] | None = field(default=None, repr=False)

    @property
    def n_cells(self) -> int:
        return 1 << self.levels

    @property
    def delta(self) -> float:
        return self.T / self.n_cells

    @property
    def grid(self) -> np.ndarray:
        return np.arange(self.n_cells + 1) * self.delta

    @property
    def total(self) -> int:
        return int(self.counts[-1])

    @property
    def arrivals(self) -> np.ndarray:
        """Sorted arrival times of ``P``, materialized on first access."""
        if self._arrivals is None:
            self._arrivals = self._materialize_arrivals()
        return self._arrivals

    def _materialize_arrivals(self) -> np.ndarray:
        per_cell = np.diff(self.counts)
        cell = np.repeat(np.arange(self.n_cells), per_cell)
        u = open_uniforms(self.rng, cell.size)
        order = np.lexsort((u, cell))
        grid = self.grid
        left = grid[cell]
        right = grid[cell + 1]
        times = left + u[order] * self.delta
        # rounding must not push an arrival onto a grid point
        times = np.clip(times, np.nextafter(left, np.inf), np.nextafter(right, -np.inf))
        return times

    def poisson(self, t) -> np.ndarray:
        """Right-continuous counting path ``P(t)``."""
        return np.searchsorted(self.arrivals, np.asarray(t, dtype=float), side="right")

    def _known_points(self) -> tuple[np.ndarray, np.ndarray]:
        if self._known is None:
            if self._extra_t.size == 0:
                self._known = (self.grid, self.bvals)
            else:
                t = np.concatenate([self.grid, self._extra_t])
                b = np.concatenate([self.bvals, self._extra_b])
                order = np.argsort(t, kind="stable")
                self._known = (t[order], b[order])
        return self._known

    def refine_many(self, ts) -> np.ndarray:
        """``B`` at arbitrary times in ``[0, T]``.

        New points are drawn from the Brownian bridge between their nearest
        known neighbours, left to right, and become known points.
        """
        ts = np.asarray(ts, dtype=float)
        flat = ts.ravel()
        if flat.size == 0:
            return np.zeros(ts.shape)
        if np.any(flat < 0.0) or np.any(flat > self.T) or not np.all(np.isfinite(flat)):
            raise ValueError(f"refinement times must lie in [0, {self.T}]")
        kt, kb = self._known_points()
        pos = np.searchsorted(kt, flat)
        hit = (pos < kt.size) & (kt[np.minimum(pos, kt.size - 1)] == flat)
        new = np.unique(flat[~hit])
        if new.size:
            z = self.rng.standard_normal(new.size)
            vals = kernels.bridge_fill(kt, kb, new, z)
            self._extra_t = np.concatenate([self._extra_t, new])
            self._extra_b = np.concatenate([self._extra_b, vals])
            self._known = None
            kt, kb = self._known_points()
            pos = np.searchsorted(kt, flat)
        return kb[pos].reshape(ts.shape)

    def error_process(self, t) -> np.ndarray:
        """``P(t) - t - B(t)``."""
        t = np.asarray(t, dtype=float)
        return self.poisson(t) - t - self.refine_many(t)


def sample_coupled_pair(T: float, levels: int | None = None, rng=None) -> KmtPair:
    """Sample a coupled (Poisson, Brownian) pair on ``[0, T]``.

    Parameters
    ----------
    T
        Horizon, at least 1.
    levels
        Number of dyadic refinements; default gives finest cells of width
        at most 0.25.
    rng
        Generator or seed.  The pair keeps the generator for lazy refinement.
    """
    if not (T >= 1.0 and math.isfinite(T)):
        raise ValueError(f"KMT horizon must be finite and >= 1, got {T}")
    if levels is None:
        levels = default_levels(T)
    if levels < 0 or levels > MAX_LEVELS:
        raise ValueError(f"levels must be in [0, {MAX_LEVELS}], got {levels}")
    rng = as_generator(0 if rng is None else rng)
    u = open_uniforms(rng, 1 << levels)
    counts, bvals = kernels.kmt_tree(float(T), int(levels), u)
    return KmtPair(T=float(T), levels=int(levels), counts=counts, bvals=bvals, rng=rng)


def refine_brownian(pair: KmtPair, t: float) -> float:
    """``B(t)`` for a single time, memoized on the pair."""
    return float(pair.refine_many(np.array([t]))[0])


def kmt_error(pair: KmtPair) -> float:
    """``sup |P(t) - t - B(t)|`` over the dyadic grid and both sides of every arrival."""
    grid = pair.grid
    err = np.abs(pair.counts - grid - pair.bvals).max()
    a = pair.arrivals
    if a.size:
        b = pair.refine_many(a)
        k = np.arange(1, a.size + 1)
        right = np.abs(k - a - b).max()
        left = np.abs(k - 1 - a - b).max()
        err = max(err, right, left)
    return float(err)


# ---------------------------------------------------------------------------
# statistical validation


def wilson_upper(successes: int, n: int, confidence: float = 0.99) -> float:
    """Upper end of the two-sided Wilson score interval."""
    if n <= 0:
        raise ValueError("need at least one trial")
    z = stats.norm.ppf(0.5 + confidence / 2)
    p = successes / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z / denom * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return min(1.0, centre + half)


@dataclass
class TailCell:
    kind: str
    params: dict[str, float]
    bound: float
    frequency: float | None
    upper: float | None
    exceedances: int | None
    replicas: int
    status: str  # pass | fail | vacuous | skipped

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class TailReport:
    cells: list[TailCell]
    growth: dict[str, Any] | None = None
    tail: dict[str, Any] | None = None

    @property
    def passed(self) -> bool:
        ok = all(c.status in ("pass", "vacuous", "skipped") for c in self.cells)
        if self.growth is not None:
            ok = ok and self.growth["pass"]
        if self.tail is not None:
            ok = ok and self.tail["pass"]
        return ok

    def to_dict(self) -> dict[str, Any]:
        return {
            "cells": [c.to_dict() for c in self.cells],
            "growth": self.growth,
            "tail": self.tail,
            "passed": self.passed,
        }


def _poisson_sup(pair: KmtPair, S: float) -> float:
    """``sup_{0<=s<=S} |P(s) - s|`` for a pair whose horizon is ``S``."""
    a = pair.arrivals
    best = abs(pair.total - S)
    if a.size:
        k = np.arange(1, a.size + 1)
        best = max(best, np.abs(k - a).max(), np.abs(k - 1 - a).max())
    return float(best)


def _brownian_sup_exceeds(rng, level: float, S: float, n: int, steps: int = 512) -> np.ndarray:
    """Whether ``sup_{s<=S} |B(s)| >= level`` for ``n`` paths.

    Paths are sampled on a grid; excursions between grid points are
    accounted for exactly through the Brownian bridge crossing probability.
    """
    h = S / steps
    out = np.zeros(n, dtype=bool)
    chunk = max(1, 2_000_000 // steps)
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        b = np.cumsum(rng.standard_normal((m, steps)) * math.sqrt(h), axis=1)
        b = np.concatenate([np.zeros((m, 1)), b], axis=1)
        hit = np.any(np.abs(b) >= level, axis=1)
        x0, x1 = b[:, :-1], b[:, 1:]
        with np.errstate(over="ignore"):
            up = np.exp(-2 * np.clip(level - x0, 0, None) * np.clip(level - x1, 0, None) / h)
            dn = np.exp(-2 * np.clip(level + x0, 0, None) * np.clip(level + x1, 0, None) / h)
        p_stay = np.prod(np.clip(1 - up - dn, 0, 1), axis=1)
        cross = rng.random(m) >= p_stay
        out[start:start + m] = hit | cross
    return out


def _oscillation_exceeds(rng, A: float, S: float, T: float, n: int, per_window: int = 64) -> np.ndarray:
    """Whether ``sup_{|t-s|<=S} |B(t) - B(s)| >= A`` on ``[0, T]`` (grid approximation)."""
    h = S / per_window
    steps = int(math.ceil(T / h))
    out = np.zeros(n, dtype=bool)
    chunk = max(1, 2_000_000 // steps)
    for start in range(0, n, chunk):
        m = min(chunk, n - start)
        b = np.cumsum(rng.standard_normal((m, steps)) * math.sqrt(h), axis=1)
        b = np.concatenate([np.zeros((m, 1)), b], axis=1)
        size = per_window + 1
        hi = ndimage.maximum_filter1d(b, size=size, axis=1, mode="nearest")
        lo = ndimage.minimum_filter1d(b, size=size, axis=1, mode="nearest")
        out[start:start + m] = np.max(hi - lo, axis=1) >= A
    return out


def _judge(kind, params, bound, exceed, n, confidence) -> TailCell:
    x = int(np.sum(exceed))
    upper = wilson_upper(x, n, confidence)
    if bound >= 1.0:
        status = "vacuous"
    else:
        status = "pass" if upper <= bound else "fail"
    return TailCell(kind, dict(params), float(bound), x / n, upper, x, n, status)


def validate_tail_bounds(
    cells: Sequence[Mapping[str, float]],
    replicas: int = 10_000,
    rng=0,
    confidence: float = 0.99,
) -> TailReport:
    """Monte Carlo check of the exponential tail bounds used in the coupling analysis.

    Each cell is a mapping with a ``kind``:

    ``poisson`` (``S``, ``A``)
        ``P(sup_{s<=S} |P(s) - s| >= A) <= 2 exp(-A^2 / 4S)``, valid for
        ``A <= 2 log(2) S``.  The Poisson path is the Poisson half of a
        coupled pair.
    ``brownian_integral`` (``S``, ``A``, ``rho``)
        Stochastic integral with constant integrand ``rho``:
        ``P(sup |rho B| >= A) <= 2 exp(-A^2 / (2 S rho^2))``.
    ``brownian_oscillation`` (``S``, ``T``, ``A``)
        ``P(sup_{|t-s|<=S} |B(t) - B(s)| >= A) <= 2 ceil(T/S) exp(-A^2 / 18 S)``.

    A cell passes when the Wilson upper confidence limit of the empirical
    exceedance frequency is below the bound.
    """
    if replicas < 1000:
        raise ValueError("tail validation needs at least 1000 replicas")
    out = []
    for idx, cell in enumerate(cells):
        kind = cell["kind"]
        if kind == "poisson":
            S, A = float(cell["S"]), float(cell["A"])
            bound = 2 * math.exp(-A * A / (4 * S))
            params = {"S": S, "A": A}
            if A > 2 * math.log(2) * S:
                out.append(TailCell(kind, params, bound, None, None, None, replicas, "skipped"))
                continue
            sups = np.array(
                [_poisson_sup(sample_coupled_pair(S, rng=make_rng(rng, "tail-poisson", idx, r)), S)
                 for r in range(replicas)]
            )
            out.append(_judge(kind, params, bound, sups >= A, replicas, confidence))
        elif kind == "brownian_integral":
            S, A, rho = float(cell["S"]), float(cell["A"]), float(cell["rho"])
            bound = 2 * math.exp(-A * A / (2 * S * rho * rho))
            exceed = _brownian_sup_exceeds(make_rng(rng, "tail-integral", idx), A / rho, S, replicas)
            out.append(_judge(kind, {"S": S, "A": A, "rho": rho}, bound, exceed, replicas, confidence))
        elif kind == "brownian_oscillation":
            S, T, A = float(cell["S"]), float(cell["T"]), float(cell["A"])
            bound = 2 * math.ceil(T / S) * math.exp(-A * A / (18 * S))
            params = {"S": S, "T": T, "A": A}
            if bound >= 1.0:
                out.append(TailCell(kind, params, bound, None, None, None, replicas, "vacuous"))
                continue
            exceed = _oscillation_exceeds(make_rng(rng, "tail-oscillation", idx), A, S, T, replicas)
            out.append(_judge(kind, params, bound, exceed, replicas, confidence))
        else:
            raise ValueError(f"unknown tail cell kind {kind!r}")
    return TailReport(cells=out)


def error_samples(T: float, replicas: int, rng=0, levels: int | None = None) -> np.ndarray:
    """``kmt_error`` over independent pairs on ``[0, T]``."""
    return np.array(
        [kmt_error(sample_coupled_pair(T, levels, rng=make_rng(rng, "kmt-error", int(T * 1000), r)))
         for r in range(replicas)]
    )


def _linear_fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float, float]:
    res = stats.linregress(x, y)
    return float(res.intercept), float(res.slope), float(res.rvalue**2)


def error_growth(
    horizons: Iterable[float] = (2**4, 2**6, 2**8, 2**10, 2**12),
    replicas: int = 1000,
    rng=0,
    min_r2: float = 0.9,
) -> dict[str, Any]:
    """Fit ``median error = c0 + c1 log T`` across horizons."""
    horizons = [float(t) for t in horizons]
    medians = [float(np.median(error_samples(T, replicas, rng))) for T in horizons]
    c0, c1, r2 = _linear_fit(np.log(horizons), np.array(medians))
    return {
        "horizons": horizons,
        "medians": medians,
        "c0": c0,
        "c1": c1,
        "r2": r2,
        "pass": bool(c1 > 0 and r2 > min_r2),
    }


def error_tail(
    T: float = 256.0,
    replicas: int = 1000,
    rng=0,
    min_count: int = 10,
    points: int = 12,
    min_r2: float = 0.9,
    errors: np.ndarray | None = None,
) -> dict[str, Any]:
    """Log-linearity of ``P(error > median + x)`` in ``x``.

    ``x`` runs from 0 to the largest excess still exceeded by ``min_count``
    replicas.
    """
    errs = error_samples(T, replicas, rng) if errors is None else np.asarray(errors)
    med = float(np.median(errs))
    top = np.sort(errs)[-min_count] - med
    xs = np.linspace(0.0, top, points, endpoint=False)
    freq = np.array([np.mean(errs > med + x) for x in xs])
    logf = np.log(freq)
    c0, slope, r2 = _linear_fit(xs, logf)
    decreasing = bool(np.all(np.diff(freq) <= 0))
    return {
        "T": float(T),
        "median": med,
        "x": xs.tolist(),
        "log_exceedance": logf.tolist(),
        "slope": slope,
        "r2": r2,
        "pass": bool(decreasing and slope < 0 and r2 > min_r2),
    }
