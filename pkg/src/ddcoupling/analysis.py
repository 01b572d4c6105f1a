"""Deterministic analysis of the fluid limit ``x' = F(x)``.

Equilibrium location and stability, the stationary covariance of the
linearized fluctuations (a Lyapunov equation), RK4 flows with cubic Hermite
interpolation, and the principal matrix solution of the variational
equation along a flow.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .model import DomainError, Model, diffusion_matrix, drift, jacobian, jacobians

__all__ = [
    "AnalysisError",
    "EquilibriumReport",
    "Trajectory",
    "PrincipalMatrix",
    "find_equilibrium",
    "stationary_covariance",
    "lyapunov_residual",
    "flow",
    "principal_matrix",
    "default_dt",
]


class AnalysisError(RuntimeError):
    """Newton failure, unstable equilibrium, singular linear algebra."""


@dataclass
class EquilibriumReport:
    x_star: np.ndarray
    jac: np.ndarray
    eigenvalues: np.ndarray
    rho_star: float
    S_star: np.ndarray
    Sigma_star: np.ndarray | None
    residual: float
    iterations: int
    stable: bool

    def relaxation_time(self, K: float) -> float:
        """``(6 / rho_*) log K``: time after which the chain is close to stationary."""
        return 6.0 / self.rho_star * math.log(K)

    def require_stable(self):
        if not self.stable:
            raise AnalysisError(
                f"equilibrium {self.x_star.tolist()} is not exponentially stable "
                f"(eigenvalues {self.eigenvalues.tolist()})"
            )

    def to_dict(self) -> dict:
        return {
            "x_star": self.x_star.tolist(),
            "jacobian": self.jac.tolist(),
            "eigenvalues": [[float(v.real), float(v.imag)] for v in self.eigenvalues],
            "rho_star": self.rho_star,
            "S_star": self.S_star.tolist(),
            "Sigma_star": None if self.Sigma_star is None else self.Sigma_star.tolist(),
            "residual": self.residual,
            "iterations": self.iterations,
            "stable": self.stable,
        }


def stationary_covariance(jac, S) -> np.ndarray:
    """Solve ``J Sigma + Sigma J^T = -S`` for symmetric ``Sigma``.

    Uses the Kronecker form ``(I kron J + J kron I) vec(Sigma) = -vec(S)``.
    ``J`` must be Hurwitz.
    """
    J = np.atleast_2d(np.asarray(jac, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    d = J.shape[0]
    if J.shape != (d, d) or S.shape != (d, d):
        raise ValueError("jacobian and S must be square matrices of equal size")
    abscissa = float(np.max(np.linalg.eigvals(J).real))
    if abscissa >= 0:
        raise AnalysisError(f"matrix is not Hurwitz (spectral abscissa {abscissa:g})")
    eye = np.eye(d)
    L = np.kron(eye, J) + np.kron(J, eye)
    try:
        vec = np.linalg.solve(L, -S.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise AnalysisError("Lyapunov system is singular") from exc
    sigma = vec.reshape(d, d, order="F")
    return 0.5 * (sigma + sigma.T)


def lyapunov_residual(jac, sigma, S) -> float:
    J = np.atleast_2d(jac)
    return float(np.max(np.abs(J @ sigma + sigma @ J.T + np.atleast_2d(S))))


def find_equilibrium(model: Model, guess, tol: float = 1e-12, max_iter: int = 100) -> EquilibriumReport:
    """Damped Newton iteration on ``F``.

    Each Newton step is halved (at most 30 times) until ``|F|`` decreases.
    At an iterate with a numerically singular Jacobian the step is ``F(x)``
    itself (a damped step along the flow).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    x = np.atleast_1d(np.asarray(guess, dtype=float)).copy()
    if not model.domain.is_interior(x):
        raise DomainError(f"initial guess {x.tolist()} is not interior to the domain")
    fx = drift(model, x)
    res = float(np.linalg.norm(fx))
    it = 0
    flow_steps = 0
    while res > tol:
        if it >= max_iter:
            raise AnalysisError(f"Newton did not converge in {max_iter} iterations (|F|={res:g})")
        J = jacobian(model, x)
        if np.linalg.cond(J) < 1e12:
            step = np.linalg.solve(J, -fx)
        else:
            # singular iterate: step along the flow instead, which moves
            # toward a stable equilibrium
            step = fx
            flow_steps += 1
            if flow_steps > 50:
                raise AnalysisError(f"singular Jacobian at {x.tolist()}")
        lam = 1.0
        for _ in range(31):
            cand = x + lam * step
            if model.domain.is_interior(cand):
                f_cand = drift(model, cand)
                r_cand = float(np.linalg.norm(f_cand))
                if r_cand < res:
                    break
            lam *= 0.5
        else:
            raise AnalysisError(f"damped Newton stalled at {x.tolist()} (|F|={res:g})")
        x, fx, res = cand, f_cand, r_cand
        it += 1
    if not model.domain.is_interior(x) or model.domain.boundary_distance(x) < 1e-9:
        raise AnalysisError(f"Newton converged to {x.tolist()}, on the domain boundary")
    J = jacobian(model, x)
    eig = np.linalg.eigvals(J)
    rho = float(np.min(-eig.real))
    stable = bool(rho > 0)
    S = diffusion_matrix(model, x)
    sigma = stationary_covariance(J, S) if stable else None
    return EquilibriumReport(
        x_star=x, jac=J, eigenvalues=eig, rho_star=rho, S_star=S, Sigma_star=sigma,
        residual=res, iterations=it, stable=stable,
    )


def default_dt(rho_star: float | None = None) -> float:
    if rho_star is None or rho_star <= 0:
        return 0.01
    return min(0.01, 0.1 / rho_star)


@dataclass
class Trajectory:
    """RK4 solution of the fluid limit with cubic Hermite interpolation."""

    times: np.ndarray
    states: np.ndarray
    derivatives: np.ndarray
    exited: bool = False
    _spline: CubicHermiteSpline | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.times.size > 1 and np.any(np.diff(self.times) <= 0):
            raise ValueError("trajectory times must be strictly increasing")

    @property
    def t0(self) -> float:
        return float(self.times[0])

    @property
    def t1(self) -> float:
        return float(self.times[-1])

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any(t < self.t0 - 1e-12) or np.any(t > self.t1 + 1e-12):
            raise ValueError(f"time outside trajectory span [{self.t0}, {self.t1}]")
        if self.times.size == 1:
            return np.broadcast_to(self.states[0], t.shape + self.states.shape[1:]).copy()
        if self._spline is None:
            self._spline = CubicHermiteSpline(self.times, self.states, self.derivatives, axis=0)
        return self._spline(np.clip(t, self.t0, self.t1))


def flow(model: Model, x0, horizon: float, dt: float = 0.01) -> Trajectory:
    """Classical RK4 for ``phi' = F(phi)``, ``phi(0) = x0``.

    Stops early, with ``exited`` set, if the state leaves the domain.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if horizon < 0:
        raise ValueError("horizon must be non-negative")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    if not bool(model.domain.contains(x)):
        raise DomainError(f"initial point {x.tolist()} outside the domain")
    n = int(round(horizon / dt))
    if abs(n * dt - horizon) > 1e-9 * max(1.0, horizon):
        n = int(math.ceil(horizon / dt))
    h = horizon / n if n > 0 else 0.0
    times = [0.0]
    states = [x.copy()]
    derivs = [drift(model, x)]
    exited = False
    for k in range(n):
        f1 = derivs[-1]
        f2 = drift(model, x + 0.5 * h * f1)
        f3 = drift(model, x + 0.5 * h * f2)
        f4 = drift(model, x + h * f3)
        x = x + h / 6.0 * (f1 + 2 * f2 + 2 * f3 + f4)
        if not np.all(np.isfinite(x)):
            raise AnalysisError(f"non-finite state at t={(k + 1) * h}")
        if not bool(model.domain.contains(x)):
            exited = True
            break
        times.append((k + 1) * h)
        states.append(x.copy())
        derivs.append(drift(model, x))
    return Trajectory(np.array(times), np.array(states), np.array(derivs), exited=exited)


@dataclass
class PrincipalMatrix:
    s: float
    t: float
    psi: np.ndarray


def principal_matrix(model: Model, traj: Trajectory, s: float, t: float, dt: float | None = None) -> PrincipalMatrix:
    """``Psi(t, s)``: solution of ``dPsi/dt = F'(phi(t)) Psi`` with ``Psi(s, s) = I``.

    RK4 in ``t`` with ``phi`` read from the trajectory's Hermite interpolant.
    """
    if t < s:
        raise ValueError("principal matrix needs t >= s")
    if s < traj.t0 - 1e-12 or t > traj.t1 + 1e-12:
        raise ValueError(f"[{s}, {t}] outside trajectory span [{traj.t0}, {traj.t1}]")
    d = traj.states.shape[1]
    psi = np.eye(d)
    if t == s:
        return PrincipalMatrix(s, t, psi)
    if dt is None:
        dt = float(np.min(np.diff(traj.times))) if traj.times.size > 1 else 0.01
    n = max(1, int(math.ceil((t - s) / dt - 1e-9)))
    h = (t - s) / n

    # Jacobians at every node and half node, evaluated in one batch; for a
    # linear system each RK4 step is multiplication by a fixed matrix
    nodes = np.clip(s + 0.5 * h * np.arange(2 * n + 1), traj.t0, traj.t1)
    J = jacobians(model, traj(nodes))
    j_left, j_mid, j_right = J[0:-1:2], J[1::2], J[2::2]
    eye = np.eye(d)
    a1 = j_left
    a2 = j_mid @ (eye + 0.5 * h * a1)
    a3 = j_mid @ (eye + 0.5 * h * a2)
    a4 = j_right @ (eye + h * a3)
    steps = eye + h / 6.0 * (a1 + 2 * a2 + 2 * a3 + a4)
    for M in steps:
        psi = M @ psi
    return PrincipalMatrix(s, t, psi)
