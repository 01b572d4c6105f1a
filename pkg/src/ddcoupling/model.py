"""Density-dependent Markov chain models.

A model is a finite list of integer jump vectors ``e`` together with a
non-negative rate function ``beta_e`` for each jump.  For a scale ``K``
the chain ``N`` jumps from ``n`` to ``n + e`` at rate ``K * beta_e(n / K)``;
the density ``X = N / K`` follows the fluid limit ``x' = F(x)`` with
``F(x) = sum_e beta_e(x) e`` when ``K`` is large.

All rates are polynomials (possibly clamped at zero and restricted to the
closure of the model domain), which covers the built-in catalog and lets
the compiled simulation kernels evaluate rates without calling back into
Python.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

__all__ = [
    "ModelError",
    "DomainError",
    "Domain",
    "PolynomialRate",
    "Model",
    "CATALOG",
    "make_catalog_model",
    "make_custom_model",
    "model_from_dict",
    "model_to_dict",
    "load_model",
    "drift",
    "jacobian",
    "jacobians",
    "diffusion_matrix",
]


class ModelError(ValueError):
    """Invalid model definition or parameters."""


class DomainError(ValueError):
    """A point lies outside the region where the model is smooth."""


@dataclass(frozen=True)
class Domain:
    """Hyper-rectangle ``lo <= x <= hi``, optionally intersected with ``sum(x) <= 1``."""

    lo: tuple[float, ...]
    hi: tuple[float, ...]
    simplex: bool = False

    def __post_init__(self):
        if len(self.lo) != len(self.hi):
            raise ModelError("domain bounds lo and hi differ in length")
        if any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ModelError("domain requires lo < hi in every coordinate")
        object.__setattr__(self, "_lo", np.asarray(self.lo, dtype=float))
        object.__setattr__(self, "_hi", np.asarray(self.hi, dtype=float))

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, x, tol: float = 0.0) -> np.ndarray | bool:
        """Membership in the closed domain (vectorized over leading axes)."""
        x = np.asarray(x, dtype=float)
        ok = ((x >= self._lo - tol) & (x <= self._hi + tol)).all(axis=-1)
        if self.simplex:
            ok = ok & (x.sum(axis=-1) <= 1.0 + tol)
        return ok

    def boundary_distance(self, x) -> float:
        """Euclidean distance from an interior point to the domain boundary."""
        x = np.asarray(x, dtype=float)
        d = float(min((x - self._lo).min(), (self._hi - x).min()))
        if self.simplex:
            d = min(d, (1.0 - float(x.sum())) / math.sqrt(x.size))
        return d

    def is_interior(self, x) -> bool:
        return bool(self.contains(x)) and self.boundary_distance(x) > 0.0


@dataclass(frozen=True)
class PolynomialRate:
    """A rate function ``sum_a c_a x^a``.

    Parameters
    ----------
    terms
        ``((exponents, coefficient), ...)`` with one non-negative integer
        exponent per coordinate.
    clamp
        Evaluate to ``max(0, p(x))`` instead of ``p(x)``.
    indicator
        Evaluate to zero outside the closed model domain.
    """

    terms: tuple[tuple[tuple[int, ...], float], ...]
    clamp: bool = True
    indicator: bool = True

    def __post_init__(self):
        dims = {len(exps) for exps, _ in self.terms}
        if len(dims) > 1:
            raise ModelError("polynomial terms have inconsistent dimension")
        for exps, _ in self.terms:
            if any((not isinstance(a, (int, np.integer))) or a < 0 for a in exps):
                raise ModelError("polynomial exponents must be non-negative integers")

    @classmethod
    def from_coeffs(cls, coeffs: Mapping[tuple[int, ...], float], **kw) -> "PolynomialRate":
        terms = tuple((tuple(int(a) for a in k), float(c)) for k, c in coeffs.items())
        return cls(terms=terms, **kw)

    def _arrays(self, d: int):
        if not self.terms:
            return np.zeros((0, d), dtype=np.int64), np.zeros(0)
        exps = np.array([t[0] for t in self.terms], dtype=np.int64).reshape(-1, d)
        coef = np.array([t[1] for t in self.terms], dtype=float)
        return exps, coef

    def polynomial(self, x) -> np.ndarray:
        """Exact polynomial value, ignoring clamp and indicator."""
        x = np.asarray(x, dtype=float)
        exps, coef = self._arrays(x.shape[-1])
        if coef.size == 0:
            return np.zeros(x.shape[:-1])
        mono = np.prod(x[..., None, :] ** exps, axis=-1)
        return mono @ coef

    def polynomial_gradient(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = x.shape[-1]
        exps, coef = self._arrays(d)
        grad = np.zeros(x.shape)
        for i in range(d):
            lowered = exps.copy()
            factor = lowered[:, i].astype(float)
            lowered[:, i] = np.maximum(lowered[:, i] - 1, 0)
            mono = np.prod(x[..., None, :] ** lowered, axis=-1)
            grad[..., i] = mono @ (coef * factor)
        return grad


def _term_tables(rates: Sequence[PolynomialRate], d: int):
    """All monomials of all rates: exponents ``(T, d)`` and weights ``(T, m)``."""
    exps, weights = [], []
    m = len(rates)
    for k, r in enumerate(rates):
        e, c = r._arrays(d)
        for row, coef in zip(e, c):
            w = np.zeros(m)
            w[k] = coef
            exps.append(row)
            weights.append(w)
    if not exps:
        return np.zeros((0, d), dtype=np.int64), np.zeros((0, m))
    return np.array(exps, dtype=np.int64), np.array(weights)


def _rates_with_flag(model: "Model", x):
    x = np.asarray(x, dtype=float)
    exps, weights = model._terms
    if weights.shape[0]:
        v = np.prod(x[..., None, :] ** exps, axis=-1) @ weights
    else:
        v = np.zeros(x.shape[:-1] + (model.n_jumps,))
    clamped = False
    clamp, indicator = model._masks
    if clamp.any():
        neg = (v < 0.0) & clamp
        if neg.any():
            clamped = True
            v = np.where(neg, 0.0, v)
    if indicator.any():
        inside = model.domain.contains(x, tol=1e-12)
        outside = ~np.asarray(inside)[..., None] & indicator
        if outside.any():
            clamped = clamped or bool(np.any(outside & (v != 0.0)))
            v = np.where(outside, 0.0, v)
    return v, clamped


@dataclass(frozen=True, eq=False)
class Model:
    """An immutable density-dependent family.

    ``K`` is not part of the model; it is supplied per run.
    """

    name: str
    jumps: np.ndarray
    rates: tuple[PolynomialRate, ...]
    domain: Domain
    params: Mapping[str, float] = field(default_factory=dict)
    gradient_mode: str = "analytic"

    def __post_init__(self):
        jumps = np.array(self.jumps, dtype=np.int64)
        if jumps.ndim != 2 or jumps.shape[0] == 0:
            raise ModelError("jump list must be a non-empty list of integer vectors")
        if np.any(np.all(jumps == 0, axis=1)):
            raise ModelError("jump list contains the zero vector")
        if len(self.rates) != jumps.shape[0]:
            raise ModelError("need exactly one rate per jump")
        if jumps.shape[1] != self.domain.dim:
            raise ModelError("domain dimension does not match jump dimension")
        if self.gradient_mode not in ("analytic", "fd"):
            raise ModelError("gradient_mode must be 'analytic' or 'fd'")
        jumps.setflags(write=False)
        object.__setattr__(self, "jumps", jumps)
        object.__setattr__(self, "params", dict(self.params))
        object.__setattr__(self, "_terms", _term_tables(self.rates, jumps.shape[1]))
        masks = (np.array([r.clamp for r in self.rates]), np.array([r.indicator for r in self.rates]))
        object.__setattr__(self, "_masks", masks)

    @property
    def d(self) -> int:
        return int(self.jumps.shape[1])

    @property
    def n_jumps(self) -> int:
        return int(self.jumps.shape[0])

    def evaluate_rates(self, x) -> np.ndarray:
        """Rates ``beta_e(x)``, shape ``(..., n_jumps)``."""
        return _rates_with_flag(self, x)[0]

    def rates_with_flag(self, x) -> tuple[np.ndarray, bool]:
        """Rates plus a flag telling whether clamping or the indicator fired."""
        return _rates_with_flag(self, x)

    def rate_gradients(self, x) -> np.ndarray:
        """Gradients ``grad beta_e(x)``, shape ``(n_jumps, d)``."""
        x = np.asarray(x, dtype=float)
        if self.gradient_mode == "fd":
            return _fd_gradients(self, x)
        grads = np.stack([r.polynomial_gradient(x) for r in self.rates])
        for k, r in enumerate(self.rates):
            if r.clamp and r.polynomial(x) < 0.0:
                grads[k] = 0.0
        return grads

    def packed(self) -> dict[str, Any]:
        """Flat array representation consumed by the simulation kernels."""
        term_jump, coef, exps = [], [], []
        for k, r in enumerate(self.rates):
            e, c = r._arrays(self.d)
            term_jump.extend([k] * len(c))
            coef.extend(c.tolist())
            exps.extend(e.tolist())
        hi = np.array(self.domain.hi, dtype=float)
        return {
            "term_jump": np.array(term_jump, dtype=np.int64),
            "term_coef": np.array(coef, dtype=float),
            "term_exps": np.array(exps, dtype=np.int64).reshape(-1, self.d),
            "clamp": np.array([r.clamp for r in self.rates], dtype=np.uint8),
            "indicator": np.array([r.indicator for r in self.rates], dtype=np.uint8),
            "lo": np.array(self.domain.lo, dtype=float),
            "hi": hi,
            "simplex": int(self.domain.simplex),
        }

    def __repr__(self):
        return f"Model(name={self.name!r}, d={self.d}, jumps={self.jumps.tolist()}, params={self.params})"


def _fd_gradients(model: Model, x: np.ndarray) -> np.ndarray:
    grads = np.zeros((model.n_jumps, model.d))
    for i in range(model.d):
        h = max(1e-6, 1e-6 * abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        grads[:, i] = (model.evaluate_rates(xp) - model.evaluate_rates(xm)) / (2 * h)
    return grads


def drift(model: Model, x) -> np.ndarray:
    """The vector field ``F(x) = sum_e beta_e(x) e`` (vectorized over leading axes)."""
    return model.evaluate_rates(x) @ model.jumps.astype(float)


def jacobian(model: Model, x) -> np.ndarray:
    """``F'(x) = sum_e e grad beta_e(x)^T`` at an interior point."""
    x = np.asarray(x, dtype=float)
    if not model.domain.is_interior(x):
        raise DomainError(f"jacobian requested at {x.tolist()}, outside the open domain")
    return model.jumps.T.astype(float) @ model.rate_gradients(x)


def jacobians(model: Model, xs) -> np.ndarray:
    """``F'`` at a batch of interior points ``xs`` of shape ``(n, d)``; returns ``(n, d, d)``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    dom = model.domain
    inside = np.all((xs > np.asarray(dom.lo)) & (xs < np.asarray(dom.hi)), axis=-1)
    if dom.simplex:
        inside &= xs.sum(axis=-1) < 1.0
    if not np.all(inside):
        bad = xs[np.argmin(inside)]
        raise DomainError(f"jacobian requested at {bad.tolist()}, outside the open domain")
    if model.gradient_mode == "fd":
        return np.stack([jacobian(model, x) for x in xs])
    grads = np.stack([r.polynomial_gradient(xs) for r in model.rates])
    for k, r in enumerate(model.rates):
        if r.clamp:
            grads[k][r.polynomial(xs) < 0.0] = 0.0
    return np.einsum("ki,knj->nij", model.jumps.astype(float), grads)


def diffusion_matrix(model: Model, x) -> np.ndarray:
    """Local diffusion ``sum_e beta_e(x) e e^T``."""
    e = model.jumps.astype(float)
    beta = model.evaluate_rates(x)
    return (e.T * beta) @ e


def _require(cond: bool, msg: str, errors: list[str]):
    if not cond:
        errors.append(msg)


def _logistic(params: Mapping[str, float]) -> Model:
    p = float(params.get("p", 2.0))
    q = float(params.get("q", 1.0))
    errors: list[str] = []
    _require(q > 0, f"logistic requires q>0 (got q={q})", errors)
    _require(p > q, f"logistic requires p>q (got p={p}, q={q})", errors)
    if errors:
        raise ModelError("; ".join(errors))
    birth = PolynomialRate.from_coeffs({(1,): p})
    death = PolynomialRate.from_coeffs({(1,): q, (2,): 1.0})
    return Model(
        name="logistic",
        jumps=np.array([[1], [-1]]),
        rates=(birth, death),
        domain=Domain(lo=(0.0,), hi=(math.inf,)),
        params={"p": p, "q": q},
    )


def _sirs(params: Mapping[str, float]) -> Model:
    lam = float(params.get("lam", params.get("lambda", 2.0)))
    gam = float(params.get("gam", params.get("gamma", 1.0)))
    theta = float(params.get("theta", 1.0))
    errors: list[str] = []
    _require(gam > 0, f"sirs requires gamma>0 (got {gam})", errors)
    _require(lam > gam, f"sirs requires lambda>gamma (got lambda={lam}, gamma={gam})", errors)
    _require(theta > 0, f"sirs requires theta>0 (got {theta})", errors)
    if errors:
        raise ModelError("; ".join(errors))
    infection = PolynomialRate.from_coeffs({(1, 1): lam})
    recovery = PolynomialRate.from_coeffs({(0, 1): gam})
    immunity_loss = PolynomialRate.from_coeffs({(0, 0): theta, (1, 0): -theta, (0, 1): -theta})
    return Model(
        name="sirs",
        jumps=np.array([[-1, 1], [0, -1], [1, 0]]),
        rates=(infection, recovery, immunity_loss),
        domain=Domain(lo=(0.0, 0.0), hi=(1.0, 1.0), simplex=True),
        params={"lam": lam, "gam": gam, "theta": theta},
    )


CATALOG = {"logistic": _logistic, "sirs": _sirs}


def make_catalog_model(name: str, params: Mapping[str, float] | None = None) -> Model:
    """Build a catalog model.

    ``logistic`` takes ``p > q > 0`` (birth ``p x``, death ``x (q + x)``);
    ``sirs`` takes ``lam > gam > 0`` and ``theta > 0`` on the (s, i) simplex.
    """
    try:
        factory = CATALOG[name]
    except KeyError:
        raise ModelError(f"unknown catalog model {name!r}; known: {sorted(CATALOG)}") from None
    return factory(params or {})


def make_custom_model(
    jumps: Sequence[Sequence[int]],
    rates: Sequence[PolynomialRate],
    domain: Domain,
    name: str = "custom",
    params: Mapping[str, float] | None = None,
    gradient_mode: str = "analytic",
) -> Model:
    return Model(
        name=name,
        jumps=np.asarray(jumps, dtype=np.int64),
        rates=tuple(rates),
        domain=domain,
        params=params or {},
        gradient_mode=gradient_mode,
    )


def _bound(v, default: float) -> float:
    return default if v is None else float(v)


def model_from_dict(spec: Mapping[str, Any]) -> Model:
    """Build a model from a JSON-compatible definition.

    Either ``{"name": ..., "params": {...}}`` for a catalog model, or
    ``{"custom": {"d", "jumps", "rates": [{"coeffs": [{"exps", "c"}], "clamp"}]},
    "domain": {"lo", "hi", "simplex"}}``.  Infinite bounds are written ``null``.
    """
    if "custom" not in spec:
        if "name" not in spec:
            raise ModelError("model definition needs either 'name' or 'custom'")
        return make_catalog_model(spec["name"], spec.get("params", {}))
    custom = spec["custom"]
    d = int(custom["d"])
    jumps = [list(map(int, j)) for j in custom["jumps"]]
    if any(len(j) != d for j in jumps):
        raise ModelError(f"every jump must have length d={d}")
    rates = []
    for r in custom["rates"]:
        coeffs: dict[tuple[int, ...], float] = {}
        for term in r.get("coeffs", []):
            exps = tuple(int(a) for a in term["exps"])
            if len(exps) != d:
                raise ModelError(f"exponent vector {list(exps)} has wrong length")
            coeffs[exps] = coeffs.get(exps, 0.0) + float(term["c"])
        rates.append(
            PolynomialRate.from_coeffs(
                coeffs, clamp=bool(r.get("clamp", True)), indicator=bool(r.get("indicator", True))
            )
        )
    dom = spec.get("domain", {})
    lo = tuple(_bound(v, -math.inf) for v in dom.get("lo", [None] * d))
    hi = tuple(_bound(v, math.inf) for v in dom.get("hi", [None] * d))
    return make_custom_model(
        jumps,
        rates,
        Domain(lo=lo, hi=hi, simplex=bool(dom.get("simplex", False))),
        name=spec.get("name", "custom"),
        params=spec.get("params", {}),
        gradient_mode=custom.get("gradient", "analytic"),
    )


def model_to_dict(model: Model) -> dict[str, Any]:
    """Inverse of :func:`model_from_dict` (always written in custom form)."""

    def enc(v):
        return None if math.isinf(v) else v

    rates = []
    for r in model.rates:
        rates.append(
            {
                "coeffs": [{"exps": list(e), "c": c} for e, c in r.terms],
                "clamp": r.clamp,
                "indicator": r.indicator,
            }
        )
    return {
        "name": model.name,
        "params": dict(model.params),
        "custom": {
            "d": model.d,
            "jumps": model.jumps.tolist(),
            "rates": rates,
            "gradient": model.gradient_mode,
        },
        "domain": {
            "lo": [enc(v) for v in model.domain.lo],
            "hi": [enc(v) for v in model.domain.hi],
            "simplex": model.domain.simplex,
        },
    }


def load_model(path: str | Path) -> Model:
    with open(path) as fh:
        return model_from_dict(json.load(fh))
