"""Monte Carlo ensembles: moderate deviations, quasi-stationarity, epidemic cost,
and threshold crossing times of the coupling error.

Every ensemble derives one random stream per replica from the base seed, an
ensemble tag and the replica index, so results do not depend on threading.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy import stats

from .analysis import EquilibriumReport, find_equilibrium
from .model import Model, ModelError, diffusion_matrix, jacobian, make_catalog_model
from .rng import derive, make_rng, map_replicas
from .simulate import (
    Compact,
    CoupledSimulator,
    gap_crossing_time,
    rate_bounds,
    simulate_ctmc,
    working_compact,
)

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentError",
    "ExitTimeSample",
    "moderate_deviation_times",
    "bracket",
    "ConditionedEnsemble",
    "conditioned_ensemble",
    "qsd_exact",
    "wasserstein_truncated_1d",
    "bootstrap_se",
    "CostSample",
    "sirs_cost_samples",
    "sirs_equilibrium",
    "SigmaOracle",
    "sigma_oracle",
    "sigma2_printed",
    "ThresholdRow",
    "ThresholdTable",
    "threshold_time_ensemble",
]


class ExperimentError(RuntimeError):
    """An ensemble produced no usable statistics."""


# ---------------------------------------------------------------------------
# moderate deviations


def bracket(K: float, eta: float, h: float) -> tuple[float, float]:
    """``(exp((1/2 - h) K eta^2), exp((1/2 + h) K eta^2))``."""
    a = K * eta * eta
    return math.exp((0.5 - h) * a), math.exp((0.5 + h) * a)


def _mahalanobis_boundary_distance(model: Model, x_star: np.ndarray, sigma: np.ndarray) -> float:
    """Smallest ``Sigma^{-1}``-norm distance from ``x*`` to a face of the domain."""
    best = math.inf
    d = model.d
    for i in range(d):
        s = math.sqrt(sigma[i, i])
        for bound in (model.domain.lo[i], model.domain.hi[i]):
            if math.isfinite(bound):
                best = min(best, abs(bound - x_star[i]) / s)
    if model.domain.simplex:
        a = np.ones(d)
        best = min(best, abs(1.0 - x_star.sum()) / math.sqrt(a @ sigma @ a))
    return best


@dataclass
class ExitTimeSample:
    K: float
    eta: float
    h: float
    tau: np.ndarray
    censored: np.ndarray
    max_horizon: float
    lower: float
    upper: float

    @property
    def in_bracket(self) -> np.ndarray:
        return (~self.censored) & (self.tau > self.lower) & (self.tau < self.upper)

    @property
    def fraction(self) -> float:
        return float(self.in_bracket.mean())

    def to_dict(self) -> dict[str, Any]:
        return {
            "K": self.K, "eta": self.eta, "h": self.h, "K_eta2": self.K * self.eta**2,
            "replicas": int(self.tau.size), "censored": int(self.censored.sum()),
            "max_horizon": self.max_horizon, "lower": self.lower, "upper": self.upper,
            "fraction_in_bracket": self.fraction,
            "median_tau": float(np.median(self.tau)), "mean_log_tau": float(np.mean(np.log(self.tau))),
        }

    def rows(self) -> tuple[list[str], list[list[Any]]]:
        return ["replica", "tau", "censored", "in_bracket"], [
            [i, float(t), int(c), int(b)] for i, (t, c, b) in enumerate(zip(self.tau, self.censored, self.in_bracket))
        ]


def moderate_deviation_times(
    model: Model,
    eq: EquilibriumReport,
    K: float,
    eta: float,
    h: float = 0.25,
    replicas: int = 200,
    max_horizon: float | None = None,
    rng=0,
    threads: int = 1,
) -> ExitTimeSample:
    """Exit times of ``X`` from the ``Sigma*^{-1}`` ball of radius ``eta`` around ``x*``.

    The chain starts at ``floor(K x*) / K`` and uses plain exponential
    channels.  Runs still inside at ``max_horizon`` (default twice the
    upper bracket end) are censored.
    """
    eq.require_stable()
    if np.min(np.linalg.eigvalsh(eq.S_star)) <= 0:
        raise ValueError("S* must be positive definite")
    sigma = eq.Sigma_star
    try:
        Q = np.linalg.inv(sigma)
    except np.linalg.LinAlgError as exc:
        raise ValueError("Sigma* is singular") from exc
    if not (eta > 0 and h >= 0 and replicas >= 1):
        raise ValueError("need eta > 0, h >= 0, replicas >= 1")
    reach = _mahalanobis_boundary_distance(model, eq.x_star, sigma)
    if eta >= reach:
        raise ValueError(f"eta={eta:g} is unreachable within the domain (boundary at {reach:g})")
    k_eta2 = K * eta * eta
    if not 4.0 <= k_eta2 <= 8.0:
        logger.warning("K eta^2 = %.3g is outside the recommended band [4, 8]", k_eta2)
    if eta * math.sqrt(K) < 1.0:
        logger.warning("eta is not large compared with K^-1/2")
    lower, upper = bracket(K, eta, h)
    if max_horizon is None:
        max_horizon = 2.0 * upper
    half = eta * np.sqrt(np.diag(sigma))
    box = Compact(eq.x_star - half, eq.x_star + half)
    bounds = rate_bounds(model, box)
    stop = (Q, eq.x_star, eta * eta)

    def one(i):
        p = simulate_ctmc(model, K, eq.x_star, max_horizon, "exponential", derive(rng, "moddev", i),
                          record=False, stop=stop, bounds=bounds)
        return p.end_time, not p.stopped

    out = map_replicas(one, replicas, threads)
    tau = np.array([o[0] for o in out])
    cens = np.array([o[1] for o in out])
    if cens.all():
        raise ExperimentError("every replica was censored; increase max_horizon")
    return ExitTimeSample(float(K), float(eta), float(h), tau, cens, float(max_horizon), lower, upper)


# ---------------------------------------------------------------------------
# conditioning on survival


@dataclass
class ConditionedEnsemble:
    K: float
    t: float
    T: float
    replicas: int
    survivors: int
    marginals: np.ndarray
    x_star: float
    window_times: np.ndarray
    windows: np.ndarray

    @property
    def survival_fraction(self) -> float:
        return self.survivors / self.replicas

    @property
    def rescaled(self) -> np.ndarray:
        """``sqrt(K) (x - x*)`` for the surviving marginals."""
        return math.sqrt(self.K) * (self.marginals - self.x_star)

    def to_dict(self) -> dict[str, Any]:
        r = self.rescaled
        return {
            "K": self.K, "t": self.t, "T": self.T, "replicas": self.replicas,
            "survivors": self.survivors, "survival_fraction": self.survival_fraction,
            "mean": float(self.marginals.mean()) if self.survivors else None,
            "rescaled_mean": float(r.mean()) if self.survivors else None,
            "rescaled_var": float(r.var(ddof=1)) if self.survivors > 1 else None,
        }

    def rows(self):
        return ["survivor", "x", "rescaled"], [
            [i, float(x), float(z)] for i, (x, z) in enumerate(zip(self.marginals, self.rescaled))
        ]


def conditioned_ensemble(
    p: float,
    q: float,
    K: float,
    t: float,
    T: float = 0.0,
    replicas: int = 1000,
    rng=0,
    x0: float | None = None,
    window_points: int = 101,
    threads: int = 1,
) -> ConditionedEnsemble:
    """Logistic chains observed at ``t`` (and on ``[t, t + T]``), kept if alive at ``t + T``.

    ``x0`` defaults to ``floor(K x*) / K``.  With ``T = 0`` the windows are
    the single marginals.
    """
    if not (p > q > 0):
        raise ModelError("need p > q > 0")
    if t < 0 or T < 0 or replicas < 1:
        raise ValueError("need t >= 0, T >= 0, replicas >= 1")
    model = make_catalog_model("logistic", {"p": p, "q": q})
    x_star = p - q
    if t < 6.0 / x_star * math.log(K):
        logger.warning("burn-in t=%g is below (6/x*) log K", t)
    if x0 is None:
        x0 = math.floor(K * x_star + 1e-9) / K
    horizon = t + T
    eq = find_equilibrium(model, [x_star])
    bounds = rate_bounds(model, working_compact(model, [x0], horizon, eq))
    wt = np.linspace(t, t + T, window_points if T > 0 else 1)

    def one(i):
        if horizon <= 0:
            return np.full(wt.size, x0)
        path = simulate_ctmc(model, K, [x0], horizon, "exponential", derive(rng, "qsd", i),
                             record=T > 0, bounds=bounds)
        if T > 0:
            return path(wt)[:, 0]
        return np.array([path.x_end[0]])

    out = np.array(map_replicas(one, replicas, threads))
    alive = out[:, -1] > 0
    n_alive = int(alive.sum())
    if n_alive == 0:
        raise ExperimentError(f"no survivors among {replicas} replicas (survival estimate 0)")
    return ConditionedEnsemble(
        K=float(K), t=float(t), T=float(T), replicas=int(replicas), survivors=n_alive,
        marginals=out[alive, 0], x_star=float(x_star), window_times=wt, windows=out[alive],
    )


def qsd_exact(p: float, q: float, K: float, n_max: int | None = None,
              tol: float = 1e-13, max_iter: int = 5_000_000) -> tuple[np.ndarray, np.ndarray]:
    """Quasi-stationary law of the logistic chain on ``{1, ..., n_max}`` by power iteration.

    The sub-generator (births ``p n``, deaths ``q n + n^2 / K``, births
    blocked at ``n_max = 5K``) is uniformized and its left Perron vector
    iterated.  Meant as a cross-check for ``K <= 50``.

    Returns
    -------
    (x, prob)
        Densities ``n / K`` and their probabilities.
    """
    if n_max is None:
        n_max = int(5 * K)
    n = np.arange(1, n_max + 1, dtype=float)
    birth = p * n
    birth[-1] = 0.0
    death = q * n + n * n / K
    lam = float((birth + death).max()) * 1.01
    pi = np.exp(-((n - K * (p - q)) ** 2) / (2 * K * p))
    pi /= pi.sum()
    for _ in range(max_iter):
        new = pi * (1.0 - (birth + death) / lam)
        new[1:] += pi[:-1] * birth[:-1] / lam
        new[:-1] += pi[1:] * death[1:] / lam
        new /= new.sum()
        if np.max(np.abs(new - pi)) < tol:
            pi = new
            break
        pi = new
    else:
        raise ExperimentError("power iteration did not converge")
    return n / K, pi


def wasserstein_truncated_1d(samples: Sequence[float], sigma2: float) -> float:
    """Comonotone-coupling upper bound on the truncated Wasserstein distance to ``N(0, sigma2)``.

    ``(1/n) sum_i min(|x_(i) - sqrt(sigma2) Phi^{-1}((i - 1/2) / n)|, 1)``.
    Any coupling bounds the infimum from above, so this is a bound, not
    the exact distance.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("empty sample")
    if not sigma2 > 0:
        raise ValueError("sigma2 must be positive")
    n = x.size
    z = stats.norm.ppf((np.arange(1, n + 1) - 0.5) / n) * math.sqrt(sigma2)
    return float(np.minimum(np.abs(x - z), 1.0).mean())


def bootstrap_se(samples, fn, B: int = 200, rng=0) -> float:
    """Bootstrap standard error of the statistic ``fn(samples)``."""
    x = np.asarray(samples)
    g = make_rng(rng, "bootstrap")
    vals = [fn(x[g.integers(0, x.size, x.size)]) for _ in range(B)]
    return float(np.std(vals, ddof=1))


# ---------------------------------------------------------------------------
# SIRS epidemic cost


def _check_sirs(lam: float, gam: float, theta: float):
    errors = []
    if not lam > gam:
        errors.append(f"need lambda > gamma (got {lam:g} <= {gam:g})")
    if not gam > 0:
        errors.append("need gamma > 0")
    if not theta > 0:
        errors.append("need theta > 0")
    if errors:
        raise ModelError("; ".join(errors))


def sirs_equilibrium(lam: float, gam: float, theta: float) -> np.ndarray:
    """Endemic equilibrium ``(gamma / lambda, theta (lambda - gamma) / (lambda (gamma + theta)))``."""
    return np.array([gam / lam, theta * (lam - gam) / (lam * (gam + theta))])


def sigma2_printed(lam: float, gam: float, theta: float, substitute: bool = False) -> float | None:
    """The closed-form ``sigma^2`` as printed; ``substitute`` replaces ``(lambda - theta)`` by ``(lambda - gamma)``.

    ``None`` where the printed formula has a pole.
    """
    factor = (lam - gam) if substitute else (lam - theta)
    if factor == 0:
        return None
    return 2 * gam * theta / (lam * factor * (gam + theta) ** 3) * ((lam - gam) ** 2 + (gam + theta) * (lam + theta))


@dataclass
class SigmaOracle:
    sigma2_matrix: float
    sigma2_formula: float | None
    agree: bool
    sigma2_substituted: float | None
    agree_substituted: bool

    def to_dict(self) -> dict[str, Any]:
        return dict(self.__dict__)


def _sigma2_matrix(lam, gam, theta) -> float:
    model = make_catalog_model("sirs", {"lam": lam, "gam": gam, "theta": theta})
    x = sirs_equilibrium(lam, gam, theta)
    Jinv = np.linalg.inv(jacobian(model, x))
    v = Jinv @ diffusion_matrix(model, x) @ Jinv.T
    return float(v[1, 1])


def sigma_oracle(lam: float, gam: float, theta: float, rtol: float = 1e-8) -> SigmaOracle:
    """``sigma^2`` by the matrix route ``(0 1) F'^{-1} S* F'^{-T} (0 1)^T`` and by the closed forms."""
    _check_sirs(lam, gam, theta)
    m = _sigma2_matrix(lam, gam, theta)
    f = sigma2_printed(lam, gam, theta)
    fs = sigma2_printed(lam, gam, theta, substitute=True)

    def close(a):
        return a is not None and math.isclose(a, m, rel_tol=rtol)

    return SigmaOracle(m, f, close(f), fs, close(fs))


@dataclass
class CostSample:
    K: float
    T: float
    costs: np.ndarray
    absorbed: np.ndarray
    i_star: float
    sigma2: float

    @property
    def predicted_mean(self) -> float:
        return self.i_star * self.T

    @property
    def predicted_var(self) -> float:
        return self.sigma2 * self.T / self.K

    @property
    def mean(self) -> float:
        return float(self.costs.mean())

    @property
    def var(self) -> float:
        return float(self.costs.var(ddof=1))

    @property
    def std_error(self) -> float:
        return float(self.costs.std(ddof=1) / math.sqrt(self.costs.size))

    def to_dict(self) -> dict[str, Any]:
        return {
            "K": self.K, "T": self.T, "replicas": int(self.costs.size),
            "absorbed": int(self.absorbed.sum()), "i_star": self.i_star, "sigma2": self.sigma2,
            "sample_mean": self.mean, "sample_var": self.var, "std_error": self.std_error,
            "predicted_mean": self.predicted_mean, "predicted_var": self.predicted_var,
        }

    def rows(self):
        return ["replica", "cost", "absorbed"], [
            [i, float(c), int(a)] for i, (c, a) in enumerate(zip(self.costs, self.absorbed))
        ]


def sirs_cost_samples(lam: float, gam: float, theta: float, K: float, T: float,
                      replicas: int = 500, rng=0, threads: int = 1) -> CostSample:
    """Exact ``int_0^T I(s) ds`` per replica, started at ``floor(K x*) / K``."""
    _check_sirs(lam, gam, theta)
    model = make_catalog_model("sirs", {"lam": lam, "gam": gam, "theta": theta})
    x_star = sirs_equilibrium(lam, gam, theta)
    eq = find_equilibrium(model, x_star)
    bounds = rate_bounds(model, working_compact(model, eq.x_star, T, eq))

    def one(i):
        path = simulate_ctmc(model, K, eq.x_star, T, "exponential", derive(rng, "sirs-cost", i), bounds=bounds)
        return path.integral(1, T), bool(path.counts[:, 1].min() == 0)

    out = map_replicas(one, replicas, threads)
    return CostSample(
        K=float(K), T=float(T), costs=np.array([o[0] for o in out]), absorbed=np.array([o[1] for o in out]),
        i_star=float(x_star[1]), sigma2=_sigma2_matrix(lam, gam, theta),
    )


# ---------------------------------------------------------------------------
# threshold crossing of the coupling error


@dataclass
class ThresholdRow:
    K: float
    eps: float
    crossings: int
    exposure: float
    replicas: int
    times: list[float | None] = field(repr=False)

    @property
    def rate(self) -> float:
        """Crossings per unit of observed time."""
        if self.exposure <= 0:
            return math.inf
        return self.crossings / self.exposure

    def interval(self, confidence: float = 0.99) -> tuple[float, float]:
        """Exact Poisson confidence interval for the rate."""
        a = 1.0 - confidence
        k = self.crossings
        lo = 0.0 if k == 0 else stats.chi2.ppf(a / 2, 2 * k) / 2
        hi = stats.chi2.ppf(1 - a / 2, 2 * k + 2) / 2
        return lo / self.exposure, hi / self.exposure

    def to_dict(self) -> dict[str, Any]:
        lo, hi = self.interval()
        return {"K": self.K, "eps": self.eps, "K_eps": self.K * self.eps, "crossings": self.crossings,
                "exposure": self.exposure, "replicas": self.replicas, "rate": self.rate,
                "rate_lo99": lo, "rate_hi99": hi}


@dataclass
class ThresholdTable:
    alpha: float
    horizon: float
    rows: list[ThresholdRow]

    @property
    def nonincreasing(self) -> bool:
        """Whether the crossing rate is nonincreasing in ``K eps(K)``."""
        ordered = sorted(self.rows, key=lambda r: r.K * r.eps)
        rates = [r.rate for r in ordered]
        return all(b <= a for a, b in zip(rates, rates[1:]))

    def to_dict(self) -> dict[str, Any]:
        return {"alpha": self.alpha, "horizon": self.horizon, "nonincreasing": self.nonincreasing,
                "rows": [r.to_dict() for r in self.rows]}

    def csv_rows(self):
        out = []
        for r in self.rows:
            for i, t in enumerate(r.times):
                out.append([r.K, r.eps, i, "" if t is None else t])
        return ["K", "eps", "replica", "crossing_time"], out


def threshold_time_ensemble(
    model: Model,
    eq: EquilibriumReport,
    K_list: Sequence[float],
    alpha: float,
    replicas: int = 100,
    max_horizon: float = 50.0,
    rng=0,
    x0=None,
    dt_grid: float = 0.01,
    threads: int = 1,
) -> ThresholdTable:
    """Crossing rate of the gap ``|X - Z|`` above ``eps(K) = alpha log K / K``.

    Each replica is one coupled path on ``[0, max_horizon]``; its exposure
    is the crossing time, or the horizon if it never crosses.
    """
    eq.require_stable()
    K_list = [float(k) for k in K_list]
    if any(b <= a for a, b in zip(K_list, K_list[1:])):
        raise ValueError("K_list must be increasing")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    x0 = eq.x_star if x0 is None else np.atleast_1d(np.asarray(x0, dtype=float))
    rows = []
    for idx, K in enumerate(K_list):
        eps = alpha * math.log(K) / K
        sim = CoupledSimulator(model, eq, K, x0, max_horizon, dt_grid)

        def one(i, sim=sim, eps=eps, idx=idx):
            return gap_crossing_time(sim.sample(derive(rng, "threshold", idx, i)), eps)

        times = map_replicas(one, replicas, threads)
        crossings = sum(t is not None for t in times)
        exposure = float(sum(max_horizon if t is None else t for t in times))
        rows.append(ThresholdRow(K, eps, crossings, exposure, replicas, times))
    return ThresholdTable(float(alpha), float(max_horizon), rows)
