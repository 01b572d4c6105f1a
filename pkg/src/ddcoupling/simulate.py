"""Exact chain simulation and the coupled fluctuation process.

The chain is simulated through its time-changed Poisson representation:
channel ``e`` owns a unit-rate Poisson path per unit time interval, read at
the internal clock ``K * int beta_e(X) ds`` accumulated since the start of
the interval.  Two channel factories are provided.  ``ExponentialChannels``
draws plain exponential inter-arrival times (the next-reaction method).
``KmtChannels`` takes the Poisson paths from KMT pairs, so each channel
also carries a coupled Brownian path from which the Gaussian driver of the
fluctuation process is extracted.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import kmt as _kmt
from ._backend import get_kernels
from .analysis import AnalysisError, EquilibriumReport, Trajectory, flow
from .model import DomainError, Model, jacobians
from .rng import make_rng

__all__ = [
    "SimulationError",
    "Compact",
    "working_compact",
    "rate_bounds",
    "JumpPath",
    "ExponentialChannels",
    "KmtChannels",
    "simulate_ctmc",
    "CoupledPath",
    "simulate_coupled",
    "DiffusionPath",
    "simulate_diffusion",
    "gap_crossing_time",
    "time_change_residual",
    "initial_lattice_state",
]

REACHED_END, NEED_ARRIVALS, BUFFER_FULL, STOPPED = 0, 1, 2, 3

# below this multiple of the rate scale a channel is treated as silent
BETA_MIN_REL = 1e-8


class SimulationError(RuntimeError):
    """Runtime failure inside a simulation (non-finite values, bad grids)."""


# ---------------------------------------------------------------------------
# working compact


@dataclass(frozen=True)
class Compact:
    """Axis-aligned box on which channel horizons are sized."""

    lo: np.ndarray
    hi: np.ndarray

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo - 1e-12) & (x <= self.hi + 1e-12), axis=-1)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))


def rate_bounds(model: Model, compact: Compact, points: int = 17) -> np.ndarray:
    """Upper bounds ``M1_e`` of every rate over the compact, by dense evaluation."""
    d = model.d
    if d <= 4:
        axes = [np.linspace(compact.lo[i], compact.hi[i], points) for i in range(d)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    else:
        corners = np.array(list(itertools.product(*zip(compact.lo, compact.hi))))
        rnd = np.random.default_rng(0).uniform(compact.lo, compact.hi, size=(10000, d))
        grid = np.vstack([corners, rnd])
    return model.evaluate_rates(grid).max(axis=0)


def working_compact(
    model: Model,
    x0,
    horizon: float,
    eq: EquilibriumReport | None = None,
    radius: float | None = None,
) -> Compact:
    """Box covering the fluid path from ``x0`` and, given ``eq``, ``x* +- r``.

    ``r`` defaults to half the distance from ``x*`` to the domain boundary.
    Without an equilibrium the hull of the fluid path is padded by ``radius``
    (default ``0.1 * max(1, |x|_inf)``).  The box is clipped to the domain.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    span = float(min(max(horizon, 0.0), 20.0))
    traj = flow(model, x0, span, dt=0.05) if span > 0 else None
    pts = traj.states if traj is not None else x0[None, :]
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    if eq is not None:
        r = radius
        if r is None:
            r = 0.5 * model.domain.boundary_distance(eq.x_star)
            if not math.isfinite(r):
                r = 0.5 * max(1.0, float(np.max(np.abs(eq.x_star))))
        lo = np.minimum(lo, eq.x_star - r)
        hi = np.maximum(hi, eq.x_star + r)
    else:
        pad = radius if radius is not None else 0.1 * max(1.0, float(np.max(np.abs(pts))))
        lo, hi = lo - pad, hi + pad
    dlo = np.asarray(model.domain.lo, dtype=float)
    dhi = np.asarray(model.domain.hi, dtype=float)
    return Compact(np.maximum(lo, dlo), np.minimum(hi, dhi))


def initial_lattice_state(K: float, x0) -> np.ndarray:
    """``floor(K x0)`` as integers, tolerant to rounding just below an integer."""
    v = K * np.atleast_1d(np.asarray(x0, dtype=float))
    return np.floor(v + 1e-9 * np.maximum(1.0, np.abs(v))).astype(np.int64)


# ---------------------------------------------------------------------------
# paths


@dataclass
class JumpPath:
    """Right-continuous piecewise-constant path of the density ``X = N / K``."""

    K: float
    n0: np.ndarray
    jumps: np.ndarray
    event_times: np.ndarray
    event_jumps: np.ndarray
    horizon: float
    end_time: float
    n_end: np.ndarray
    interval_clocks: np.ndarray
    stopped: bool = False
    flags: dict[str, Any] = field(default_factory=dict)

    @property
    def n_events(self) -> int:
        return int(self.event_times.size)

    @property
    def counts(self) -> np.ndarray:
        """Integer states ``N`` at time 0 and after every event, shape ``(n_events + 1, d)``."""
        steps = self.jumps[self.event_jumps]
        return np.vstack([self.n0[None, :], self.n0 + np.cumsum(steps, axis=0)])

    @property
    def states(self) -> np.ndarray:
        return self.counts / self.K

    @property
    def x_end(self) -> np.ndarray:
        return self.n_end / self.K

    def __call__(self, t) -> np.ndarray:
        """``X(t)``."""
        idx = np.searchsorted(self.event_times, np.asarray(t, dtype=float), side="right")
        return self.states[idx]

    def integral(self, coord: int, T: float | None = None) -> float:
        """Exact ``int_0^T X_coord(s) ds`` (the path is piecewise constant)."""
        T = self.end_time if T is None else float(T)
        knots = np.concatenate([[0.0], self.event_times[self.event_times < T], [T]])
        vals = self.states[: knots.size - 1, coord]
        return float(np.dot(vals, np.diff(knots)))


class ExponentialChannels:
    """Unit-rate Poisson paths from i.i.d. exponential gaps (no coupling)."""

    kind = "exponential"

    def __init__(self, model: Model, K: float, bounds: np.ndarray, rng):
        self.m = model.n_jumps
        self.batch = np.ceil(K * np.asarray(bounds, dtype=float)).astype(np.int64) + 16
        self.rng = make_rng(rng, "exp-channels")
        self.extensions = 0

    def begin(self, j: int):
        rows = [np.cumsum(self.rng.standard_exponential(int(n))) for n in self.batch]
        return _pad(rows)

    def extend(self, j: int, e: int, arrivals: np.ndarray, n_arr: np.ndarray):
        rows = [arrivals[i, : n_arr[i]] for i in range(self.m)]
        last = rows[e][-1] if rows[e].size else 0.0
        more = last + np.cumsum(self.rng.standard_exponential(int(max(rows[e].size, 16))))
        rows[e] = np.concatenate([rows[e], more])
        return _pad(rows)


class KmtChannels:
    """Unit-rate Poisson paths taken from fresh KMT pairs on every unit interval.

    The pair for channel ``e`` has horizon ``ceil(1.5 K M1_e) + 8``.  If the
    internal clock overruns it, independent arrivals (and independent Brownian
    increments) extend the pair; every extension is counted.
    """

    kind = "kmt"

    def __init__(self, model: Model, K: float, bounds: np.ndarray, rng, margin: float = 1.5, pad: int = 8):
        self.m = model.n_jumps
        self.horizons = np.ceil(margin * K * np.asarray(bounds, dtype=float)) + pad
        self.base = rng
        self.extensions = 0
        self.pairs: list[_kmt.KmtPair] = []
        self._ext_rng: list[np.random.Generator] = []
        self._j = -1

    def begin(self, j: int):
        self._j = j
        self.pairs = [
            _kmt.sample_coupled_pair(float(T), rng=make_rng(self.base, "kmt", j, e))
            for e, T in enumerate(self.horizons)
        ]
        self._ext_rng = [make_rng(self.base, "kmt-ext", j, e) for e in range(self.m)]
        self._ext_b = [None] * self.m
        return _pad([p.arrivals for p in self.pairs])

    def extend(self, j: int, e: int, arrivals: np.ndarray, n_arr: np.ndarray):
        self.extensions += 1
        rows = [arrivals[i, : n_arr[i]] for i in range(self.m)]
        # memorylessness: arrivals after T are T + independent exponential gaps
        start = max(self.pairs[e].T, rows[e][-1] if rows[e].size else 0.0)
        gaps = self._ext_rng[e].standard_exponential(int(max(self.horizons[e] // 4, 16)))
        rows[e] = np.concatenate([rows[e], start + np.cumsum(gaps)])
        return _pad(rows)

    def brownian(self, e: int, u: np.ndarray) -> np.ndarray:
        """``B_e`` of the current interval at sorted clock values ``u``."""
        pair = self.pairs[e]
        u = np.asarray(u, dtype=float)
        out = np.empty(u.shape)
        inside = u <= pair.T
        out[inside] = pair.refine_many(u[inside])
        if np.any(~inside):
            beyond = u[~inside]
            prev_t, prev_b = (pair.T, float(pair.bvals[-1])) if self._ext_b[e] is None else self._ext_b[e]
            if beyond[0] < prev_t:
                raise SimulationError("Brownian extension queried out of order")
            steps = np.diff(np.concatenate([[prev_t], beyond]))
            z = self._ext_rng[e].standard_normal(beyond.size)
            vals = prev_b + np.cumsum(np.sqrt(steps) * z)
            out[~inside] = vals
            self._ext_b[e] = (float(beyond[-1]), float(vals[-1]))
        return out


def _pad(rows) -> tuple[np.ndarray, np.ndarray]:
    n_arr = np.array([r.size for r in rows], dtype=np.int64)
    arr = np.full((len(rows), max(1, int(n_arr.max()))), np.inf)
    for i, r in enumerate(rows):
        arr[i, : r.size] = r
    return arr, n_arr


CHANNELS = {"exponential": ExponentialChannels, "kmt": KmtChannels}


class _Engine:
    """Resumable driver around the ``ctmc_advance`` kernel."""

    def __init__(self, model: Model, K: float, n0: np.ndarray, channels, record: bool,
                 stop: tuple[np.ndarray, np.ndarray, float] | None, backend: str | None):
        self.model = model
        self.K = float(K)
        self.kern = get_kernels(backend)
        self.packed = model.packed()
        self.jumps = np.ascontiguousarray(model.jumps, dtype=np.int64)
        self.N = n0.astype(np.int64).copy()
        self.channels = channels
        self.record = record
        if stop is None:
            d = model.d
            self.stop = (np.zeros((d, d)), np.zeros(d), 0.0)
        else:
            Q, c, r2 = stop
            self.stop = (np.ascontiguousarray(Q, dtype=float), np.ascontiguousarray(c, dtype=float), float(r2))
        cap = 1024 if record else 1
        self.ev_t = np.empty(cap)
        self.ev_j = np.empty(cap, dtype=np.int64)
        self.n_ev = 0
        self.clamped = False

    def run_interval(self, j: int, t0: float, t_end: float) -> tuple[int, float, np.ndarray]:
        arr, n_arr = self.channels.begin(j)
        m = self.model.n_jumps
        cursor = np.zeros(m, dtype=np.int64)
        clock = np.zeros(m)
        t = t0
        p = self.packed
        while True:
            status, t, n_ev, channel, flag = self.kern.ctmc_advance(
                self.N, self.K, t, t_end, self.jumps, p["term_jump"], p["term_coef"], p["term_exps"],
                p["clamp"], p["indicator"], p["lo"], p["hi"], p["simplex"], arr, n_arr, cursor, clock,
                self.stop[0], self.stop[1], self.stop[2], self.ev_t, self.ev_j, self.n_ev, self.record,
            )
            self.n_ev = n_ev
            self.clamped |= bool(flag)
            if status == NEED_ARRIVALS:
                arr, n_arr = self.channels.extend(j, channel, arr, n_arr)
            elif status == BUFFER_FULL:
                self.ev_t = np.concatenate([self.ev_t, np.empty(self.ev_t.size)])
                self.ev_j = np.concatenate([self.ev_j, np.empty(self.ev_j.size, dtype=np.int64)])
            else:
                return status, t, clock


def _stop_triple(stop) -> tuple[np.ndarray, np.ndarray, float] | None:
    if stop is None:
        return None
    Q, c, r2 = stop
    if not r2 > 0:
        raise ValueError("stop radius must be positive")
    return np.atleast_2d(Q), np.atleast_1d(c), float(r2)


def simulate_ctmc(
    model: Model,
    K: float,
    x0,
    horizon: float,
    channels="exponential",
    rng=0,
    *,
    record: bool = True,
    stop=None,
    compact: Compact | None = None,
    bounds: np.ndarray | None = None,
    backend: str | None = None,
) -> JumpPath:
    """Exact simulation of the chain with rates ``K beta_e(n / K)``.

    Parameters
    ----------
    model
        Density-dependent model.
    K
        Scale parameter.
    x0
        Initial density; the chain starts at ``floor(K x0) / K``.
    horizon
        Final time.
    channels
        ``"exponential"``, ``"kmt"`` or a factory
        ``(model, K, bounds, rng) -> channels``.
    rng
        Seed, ``SeedSequence`` or ``Generator``; all streams derive from it.
    record
        Keep the event list.  Without it only the final state is returned.
    stop
        Optional ``(Q, center, r2)``: stop at the first event after which
        ``(x - center)^T Q (x - center) >= r2``.
    compact, bounds
        Working compact (or the rate bounds derived from it) sizing the
        channels.  Computed from the fluid path when omitted.

    Returns
    -------
    JumpPath
        With flags ``clamped``, ``extensions``, ``left_compact`` and
        ``absorbed``.
    """
    K = float(K)
    if not K > 0:
        raise ValueError("K must be positive")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (model.d,):
        raise ValueError(f"x0 must have {model.d} coordinates")
    if not bool(model.domain.contains(x0, tol=1e-12)):
        raise DomainError(f"x0={x0.tolist()} outside the domain")
    if bounds is None:
        if compact is None:
            compact = working_compact(model, x0, horizon)
        bounds = rate_bounds(model, compact)
    factory = CHANNELS[channels] if isinstance(channels, str) else channels
    ch = factory(model, K, bounds, rng)
    n0 = initial_lattice_state(K, x0)
    stop3 = _stop_triple(stop)
    eng = _Engine(model, K, n0, ch, record, stop3, backend)
    n_int = int(math.ceil(horizon - 1e-12))
    clocks = np.zeros((n_int, model.n_jumps))
    stopped = False
    if stop3 is not None:
        y = n0 / K - stop3[1]
        stopped = bool(y @ stop3[0] @ y >= stop3[2])
    t = 0.0
    if not stopped:
        for j in range(n_int):
            status, t, clock = eng.run_interval(j, float(j), float(min(j + 1, horizon)))
            clocks[j] = clock
            if status == STOPPED:
                stopped = True
                clocks = clocks[: j + 1]
                break
    return _finish(model, eng, n0, horizon, t, clocks, stopped, compact)


def _finish(model, eng, n0, horizon, t, clocks, stopped, compact) -> JumpPath:
    K = eng.K
    path = JumpPath(
        K=K, n0=n0, jumps=eng.jumps,
        event_times=eng.ev_t[: eng.n_ev].copy() if eng.record else np.zeros(0),
        event_jumps=eng.ev_j[: eng.n_ev].copy() if eng.record else np.zeros(0, dtype=np.int64),
        horizon=float(horizon), end_time=float(t), n_end=eng.N.copy(),
        interval_clocks=clocks, stopped=stopped,
    )
    rates_end = model.evaluate_rates(path.x_end)
    left = None
    if compact is not None:
        pts = path.states if eng.record else path.x_end[None, :]
        left = bool(not np.all(compact.contains(pts)))
    path.flags = {
        "clamped": eng.clamped,
        "extensions": int(eng.channels.extensions),
        "left_compact": left,
        "absorbed": bool(np.all(rates_end == 0.0)),
        "events": int(eng.n_ev),
    }
    return path


def time_change_residual(model: Model, path: JumpPath) -> float:
    """Max difference between the engine's end-of-interval clocks and ``K int beta_e(X) ds``.

    The integral is recomputed independently from the event list.
    """
    if path.stopped:
        raise ValueError("time-change check needs a path run to its horizon")
    states = path.states
    rates = model.evaluate_rates(states)
    worst = 0.0
    for j in range(path.interval_clocks.shape[0]):
        a, b = float(j), float(min(j + 1, path.horizon))
        inside = (path.event_times > a) & (path.event_times <= b)
        idx = np.flatnonzero(inside)
        knots = np.concatenate([[a], path.event_times[idx], [b]])
        first = np.searchsorted(path.event_times, a, side="right")
        piece_rates = rates[first : first + idx.size + 1]
        integral = path.K * (np.diff(knots)[:, None] * piece_rates).sum(axis=0)
        scale = max(1.0, float(np.max(np.abs(integral))))
        worst = max(worst, float(np.max(np.abs(integral - path.interval_clocks[j]))) / scale)
    return worst


# ---------------------------------------------------------------------------
# coupled paths


@dataclass
class CoupledPath:
    """Chain ``X`` together with ``Z = phi + U / sqrt(K)`` on a uniform grid."""

    jump_path: JumpPath
    times: np.ndarray
    phi: np.ndarray
    U: np.ndarray
    Z: np.ndarray
    drivers: np.ndarray
    gap_times: np.ndarray
    gap_values: np.ndarray
    flags: dict[str, Any] = field(default_factory=dict)

    @property
    def K(self) -> float:
        return self.jump_path.K

    @property
    def sup_gap(self) -> float:
        return float(self.gap_values.max())

    @property
    def X_grid(self) -> np.ndarray:
        return self.jump_path(self.times)


def _grid(horizon: float, dt: float) -> int:
    """Number of grid steps; ``dt`` must divide 1 and ``horizon`` must be a multiple of it."""
    if not 0 < dt <= 0.01 + 1e-15:
        raise ValueError("dt_grid must lie in (0, 0.01]")
    per_unit = round(1.0 / dt)
    if abs(per_unit * dt - 1.0) > 1e-9:
        raise ValueError(f"dt_grid={dt} must divide 1")
    n = round(horizon / dt)
    if abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError(f"horizon={horizon} must be a multiple of dt_grid={dt}")
    return int(n)


class CoupledSimulator:
    """Reusable coupled-path sampler for one ``(model, eq, K, x0, horizon, dt)`` setup.

    The fluid path, its Jacobians and the channel sizing are computed once;
    :meth:`sample` then draws independent replicas.
    """

    def __init__(self, model: Model, eq: EquilibriumReport, K: float, x0, horizon: float,
                 dt_grid: float = 0.005, compact: Compact | None = None, backend: str | None = None):
        eq.require_stable()
        self.model = model
        self.eq = eq
        self.K = float(K)
        if not self.K > 0:
            raise ValueError("K must be positive")
        self.x0 = np.atleast_1d(np.asarray(x0, dtype=float))
        self.horizon = float(horizon)
        self.dt = float(dt_grid)
        self.n_steps = _grid(self.horizon, self.dt)
        self.backend = backend
        self.compact = compact if compact is not None else working_compact(model, self.x0, horizon, eq)
        if not bool(self.compact.contains(self.x0)):
            raise DomainError(f"x0={self.x0.tolist()} outside the working compact")
        self.bounds = rate_bounds(model, self.compact)
        self.beta_min = BETA_MIN_REL * max(1.0, float(self.bounds.max()))
        traj: Trajectory = flow(model, self.x0, self.horizon, dt=self.dt)
        if traj.exited:
            raise AnalysisError("fluid path leaves the domain before the horizon")
        if traj.times.size != self.n_steps + 1:
            raise SimulationError("fluid grid does not match the coupling grid")
        self.times = np.arange(self.n_steps + 1) * self.dt
        self.phi = traj.states
        self.A = np.ascontiguousarray(jacobians(model, self.phi[:-1]))
        self.sqrt_beta_phi = np.sqrt(model.evaluate_rates(self.phi[:-1]))
        self.per_unit = round(1.0 / self.dt)

    def sample(self, rng) -> CoupledPath:
        model, K, dt = self.model, self.K, self.dt
        m = model.n_jumps
        ch = KmtChannels(model, K, self.bounds, rng)
        n0 = initial_lattice_state(K, self.x0)
        eng = _Engine(model, K, n0, ch, True, None, self.backend)
        n_int = int(math.ceil(self.horizon - 1e-12))
        clocks = np.zeros((n_int, m))
        dW = np.empty((self.n_steps, m))
        aux_used = 0
        for j in range(n_int):
            first_ev = eng.n_ev
            n_before = eng.N.copy()
            t_end = float(min(j + 1, self.horizon))
            _, _, clock = eng.run_interval(j, float(j), t_end)
            clocks[j] = clock
            k0 = j * self.per_unit
            k1 = min(k0 + self.per_unit, self.n_steps)
            aux_used += self._extract(j, ch, eng, first_ev, n_before, k0, k1, dW, rng)
        path = _finish(model, eng, n0, self.horizon, self.horizon, clocks, False, self.compact)
        noise = (self.sqrt_beta_phi * dW) @ model.jumps.astype(float)
        U = get_kernels(self.backend).linear_em(self.A, np.ascontiguousarray(noise), np.zeros(model.d), dt)
        if not np.all(np.isfinite(U)):
            bad = int(np.argmax(~np.all(np.isfinite(U), axis=1)))
            raise SimulationError(f"non-finite fluctuation at t={self.times[bad]:g}")
        Z = self.phi + U / math.sqrt(K)
        gt, gv = _gap_series(path, self.times, Z)
        flags = dict(path.flags)
        flags["aux_increments"] = int(aux_used)
        return CoupledPath(path, self.times, self.phi, U, Z, dW, gt, gv, flags)

    def _extract(self, j, ch: KmtChannels, eng: _Engine, first_ev, n_before, k0, k1, dW, rng) -> int:
        """Brownian driver increments for grid steps ``k0..k1-1`` of interval ``j``."""
        model, K = self.model, self.K
        ev_t = eng.ev_t[first_ev : eng.n_ev]
        ev_j = eng.ev_j[first_ev : eng.n_ev]
        steps = model.jumps[ev_j]
        counts = np.vstack([n_before[None, :], n_before + np.cumsum(steps, axis=0)])
        rates = model.evaluate_rates(counts / K)
        a = float(j)
        b = self.times[k1]
        knots_t = np.concatenate([[a], ev_t, [b]])
        knots_u = np.vstack([np.zeros((1, rates.shape[1])),
                             K * np.cumsum(np.diff(knots_t)[:, None] * rates, axis=0)])
        grid_t = self.times[k0 : k1 + 1]
        n = k1 - k0
        aux = make_rng(rng, "aux", j).standard_normal((n, rates.shape[1])) * math.sqrt(self.dt)
        used = 0
        for e in range(rates.shape[1]):
            u = np.interp(grid_t, knots_t, knots_u[:, e])
            u = np.maximum.accumulate(u)
            du = np.diff(u)
            Bu = ch.brownian(e, u)
            dB = np.diff(Bu)
            live = du > K * self.beta_min * self.dt
            w = np.where(live, dB * np.sqrt(self.dt / np.where(live, du, 1.0)), aux[:, e])
            used += int(n - live.sum())
            dW[k0:k1, e] = w
        return used


def _gap_series(path: JumpPath, times: np.ndarray, Z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``|X - Z|`` on the grid and at both one-sided limits of every jump."""
    X_grid = path(times)
    g_grid = np.linalg.norm(X_grid - Z, axis=1)
    tau = path.event_times
    if tau.size == 0:
        return times.copy(), g_grid
    Zt = np.column_stack([np.interp(tau, times, Z[:, i]) for i in range(Z.shape[1])])
    states = path.states
    g_left = np.linalg.norm(states[:-1] - Zt, axis=1)
    g_right = np.linalg.norm(states[1:] - Zt, axis=1)
    t_all = np.concatenate([times, tau, tau])
    # at equal times: grid, then left limit, then right limit
    rank = np.concatenate([np.zeros(times.size), np.ones(tau.size), np.full(tau.size, 2.0)])
    g_all = np.concatenate([g_grid, g_left, g_right])
    order = np.lexsort((rank, t_all))
    return t_all[order], g_all[order]


def simulate_coupled(model: Model, eq: EquilibriumReport, K: float, x0, horizon: float,
                     dt_grid: float = 0.005, rng=0, **kw) -> CoupledPath:
    """One coupled replica: exact chain ``X`` and its Gaussian approximant ``Z``.

    ``X`` is simulated with KMT channels.  Driver increments are read from
    each channel's Brownian partner at the exact internal clocks on the
    grid, normalized by the mean rate over the step.  ``U`` solves
    ``dU = F'(phi) U dt + sum_e sqrt(beta_e(phi)) dW_e e`` by Euler-Maruyama
    and ``Z = phi + U / sqrt(K)``.
    """
    return CoupledSimulator(model, eq, K, x0, horizon, dt_grid, **kw).sample(rng)


def gap_crossing_time(path: CoupledPath, eps: float) -> float | None:
    """First evaluation time at which the gap strictly exceeds ``eps``, else ``None``."""
    if eps < 0:
        raise ValueError("eps must be non-negative")
    hit = np.flatnonzero(path.gap_values > eps)
    return float(path.gap_times[hit[0]]) if hit.size else None


# ---------------------------------------------------------------------------
# diffusion diagnostic


@dataclass
class DiffusionPath:
    times: np.ndarray
    Y: np.ndarray
    exited: np.ndarray


def simulate_diffusion(model: Model, K: float, x0, horizon: float, dt: float,
                       drivers: np.ndarray | None = None, rng=0, replicas: int = 1) -> DiffusionPath:
    """Euler-Maruyama for ``dY = F(Y) dt + K^{-1/2} sum_e sqrt(beta_e(Y)) dW_e e``.

    Parameters
    ----------
    drivers
        Optional increments ``dW`` of shape ``(steps, n_jumps)`` or
        ``(replicas, steps, n_jumps)``, e.g. the drivers of a coupled path.
        Drawn from ``rng`` when omitted.

    Returns
    -------
    DiffusionPath
        ``Y`` has shape ``(replicas, steps + 1, d)``; ``exited`` flags
        replicas that left the domain (their rates vanish there).
    """
    if not K > 0 or not dt > 0 or not horizon > 0:
        raise ValueError("K, dt and horizon must be positive")
    n = int(round(horizon / dt))
    if abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError("horizon must be a multiple of dt")
    m, d = model.n_jumps, model.d
    if drivers is None:
        drivers = make_rng(rng, "diffusion").standard_normal((replicas, n, m)) * math.sqrt(dt)
    drivers = np.asarray(drivers, dtype=float)
    if drivers.ndim == 2:
        drivers = drivers[None]
    if drivers.shape[1:] != (n, m):
        raise ValueError(f"drivers must have shape (replicas, {n}, {m})")
    R = drivers.shape[0]
    J = model.jumps.astype(float)
    Y = np.empty((R, n + 1, d))
    Y[:, 0] = initial_lattice_state(K, x0) / K
    exited = np.zeros(R, dtype=bool)
    sk = 1.0 / math.sqrt(K)
    for k in range(n):
        y = Y[:, k]
        beta = model.evaluate_rates(y)
        Y[:, k + 1] = y + dt * (beta @ J) + sk * (np.sqrt(beta) * drivers[:, k]) @ J
        exited |= ~np.asarray(model.domain.contains(Y[:, k + 1], tol=1e-12))
    if not np.all(np.isfinite(Y)):
        raise SimulationError("non-finite diffusion state")
    return DiffusionPath(np.arange(n + 1) * dt, Y, exited)
