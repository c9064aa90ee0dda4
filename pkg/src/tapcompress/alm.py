"""Augmented Lagrangian solver for the compressed assignment problem.

Equality ``A1 y + M z = d`` and inequality ``U z >= 0`` each carry their own
multiplier vector and penalty; ``y >= 0`` is left to the bound-constrained
inner solver.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .compress import (STRATEGIES, CompressedProblem, feasibility_certificate,
                       minor_link_flow)
from .netio import Network
from .refsolve import beckmann_gradient, beckmann_objective

logger = logging.getLogger(__name__)

# fhat(y, z) -> (value, grad_y, grad_z)
FhatFn = Callable[[np.ndarray, np.ndarray], tuple[float, np.ndarray, np.ndarray]]


class InnerSolveError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    beta: float = 10.0
    gamma: float = 0.25
    c0: tuple[float, float] = (1e3, 1e3)
    tol: float = 1e-4
    max_outer: int = 20
    max_inner_per_outer: int = 200
    r: int = 50
    strategy: str = "mixed"
    memory: int = 10
    inner_rtol: float = 1e-6

    def __post_init__(self):
        if not self.beta > 1:
            raise ValueError("beta must exceed 1")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if min(self.c0) <= 0:
            raise ValueError("initial penalties must be positive")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        self.c0 = (float(self.c0[0]), float(self.c0[1]))


@dataclass
class ALState:
    y: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    c1: float
    c2: float
    outer_k: int = 0
    prev_eq_viol: float | None = None
    prev_ineq_viol: float | None = None


@dataclass
class TraceRow:
    k: int
    eq_viol: float
    ineq_viol: float
    c1: float
    c2: float
    inner_iters: int
    L_c: float
    f_hat: float
    wall_ms: float


@dataclass
class ALSolution:
    y: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    c1: float
    c2: float
    outer_iterations: int
    inner_iterations: int
    function_evaluations: int
    converged_outer: bool
    converged_inner: bool
    eq_viol: float
    ineq_viol: float
    strategy: str
    inner_seconds: float
    trace: list[TraceRow] = field(default_factory=list)

    @property
    def approximation_bearing(self) -> bool:
        return self.strategy in ("factored", "mixed")

    @property
    def seconds_per_inner(self) -> float:
        return self.inner_seconds / max(self.inner_iterations, 1)

    def to_json(self) -> dict:
        """Solution document; timing lives under the ``timing`` key only."""
        return {
            "schema_version": 1,
            "y": self.y.tolist(), "z": self.z.tolist(),
            "lambda": self.lam.tolist(), "mu": self.mu.tolist(),
            "c1": self.c1, "c2": self.c2,
            "outer_iterations": self.outer_iterations,
            "inner_iterations": self.inner_iterations,
            "function_evaluations": self.function_evaluations,
            "converged_outer": self.converged_outer,
            "converged_inner": self.converged_inner,
            "eq_viol": self.eq_viol, "ineq_viol": self.ineq_viol,
            "strategy": self.strategy,
            "approximation_bearing": self.approximation_bearing,
            "timing": {"inner_seconds": self.inner_seconds,
                       "seconds_per_inner": self.seconds_per_inner},
        }


def h_plus(U: np.ndarray, z: np.ndarray, mu: np.ndarray, c2: float) -> np.ndarray:
    """Componentwise ``max(-[U z]_i, -mu_i / c2)``."""
    if c2 <= 0:
        raise ValueError("c2 must be positive")
    return np.maximum(-(U @ z), -np.asarray(mu) / c2)


def beckmann_fhat(cp: CompressedProblem, net: Network) -> FhatFn:
    """``f(B1'y + Dz + v0)`` and its gradients under ``cp.strategy``."""

    def fhat(y, z):
        w = cp.U @ z if cp.strategy == "chain" else None
        v = cp.B1t @ y + minor_link_flow(cp, z, w) + cp.v0
        t = beckmann_gradient(net, v)
        gy = cp.B1 @ t
        if cp.r == 0:
            gz = np.zeros(0)
        elif cp.strategy == "direct":
            gz = cp.D.T @ t
        elif cp.strategy == "chain":
            gz = cp.U.T @ (cp.B2 @ t)
        else:
            gz = cp.V_sigma.T @ t
        return beckmann_objective(net, v), gy, gz

    return fhat


class AugmentedLagrangian:
    """Value and gradient of ``L_c(y, z, lambda, mu)`` for one compressed problem."""

    def __init__(self, cp: CompressedProblem, fhat: FhatFn):
        self.cp = cp
        self.fhat = fhat
        self.evaluations = 0

    def residual(self, y, z, u=None):
        cp = self.cp
        if cp.r == 0:
            od = 0.0
        elif cp.strategy in ("direct", "factored"):
            od = cp.M @ z
        else:
            od = cp.A2 @ (cp.U @ z if u is None else u)
        return cp.A1 @ y + od - cp.d

    def evaluate(self, y, z, lam, mu, c1, c2, need_grad=True):
        cp = self.cp
        self.evaluations += 1
        u = cp.U @ z
        f, gy_f, gz_f = self.fhat(y, z)
        rho = self.residual(y, z, u)
        q = lam + c1 * rho
        active = np.maximum(0.0, mu - c2 * u)
        value = (f + lam @ rho + 0.5 * c1 * (rho @ rho)
                 + (active @ active - mu @ mu) / (2.0 * c2))
        if not need_grad:
            return value, f
        gy = gy_f + cp.A1t @ q
        if cp.r == 0:
            gz = np.zeros(0)
        elif cp.strategy in ("direct", "factored"):
            gz = gz_f + cp.M.T @ q - cp.U.T @ active
        else:
            gz = gz_f + cp.U.T @ (cp.A2t @ q - active)
        return value, f, gy, gz


def al_value(cp, net, y, z, lam, mu, c) -> float:
    return AugmentedLagrangian(cp, beckmann_fhat(cp, net)).evaluate(
        y, z, lam, mu, c[0], c[1], need_grad=False)[0]


def al_gradients(cp, net, y, z, lam, mu, c) -> tuple[np.ndarray, np.ndarray]:
    _, _, gy, gz = AugmentedLagrangian(cp, beckmann_fhat(cp, net)).evaluate(
        y, z, lam, mu, c[0], c[1])
    return gy, gz


def _projected_gradient(x, g, s):
    pg = g.copy()
    # at an active lower bound only descent directions that stay feasible count
    pg[:s] = x[:s] - np.maximum(x[:s] - g[:s], 0.0)
    return pg


def inner_minimize(al: AugmentedLagrangian, state: ALState, cfg: SolverConfig
                   ) -> tuple[np.ndarray, np.ndarray, int, bool]:
    """Minimize ``L_c`` over ``y >= 0`` and free ``z`` with L-BFGS-B.

    Returns ``(y, z, iterations, converged)``. A line-search breakdown is
    followed by one projected steepest-descent step; if that cannot reduce
    ``L_c`` either, the current point is returned unconverged.
    """
    s, r = al.cp.s, al.cp.r
    lam, mu, c1, c2 = state.lam, state.mu, state.c1, state.c2

    def fun(x):
        val, _, gy, gz = al.evaluate(x[:s], x[s:], lam, mu, c1, c2)
        return val, np.concatenate([gy, gz])

    x = np.concatenate([np.maximum(state.y, 0.0), state.z])
    val0, g0 = fun(x)
    if not np.isfinite(val0):
        raise InnerSolveError(f"non-finite augmented Lagrangian at the start point ({val0})")
    pgtol = cfg.inner_rtol * max(1.0, abs(val0))
    if np.max(np.abs(_projected_gradient(x, g0, s)), initial=0.0) <= pgtol:
        return x[:s], x[s:], 0, True
    bounds = [(0.0, None)] * s + [(None, None)] * r
    budget = cfg.max_inner_per_outer
    used = 0
    converged = False
    while budget - used > 0:
        res = minimize(fun, x, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"maxiter": budget - used, "maxcor": cfg.memory,
                                "gtol": pgtol, "ftol": 0.0, "maxfun": 20 * budget})
        used += max(int(res.nit), 1)
        x = np.concatenate([np.maximum(res.x[:s], 0.0), res.x[s:]])
        if not np.isfinite(res.fun):
            raise InnerSolveError(f"inner solve diverged: {res.message}")
        val, g = fun(x)
        pg = _projected_gradient(x, g, s)
        if np.max(np.abs(pg), initial=0.0) <= pgtol:
            converged = True
            break
        if res.status != 2:
            break
        # line-search breakdown: try a projected steepest-descent step
        step, moved = 1.0, False
        for _ in range(60):
            trial = x - step * g
            trial[:s] = np.maximum(trial[:s], 0.0)
            tval, _ = fun(trial)
            if tval < val - 1e-4 * (g @ (x - trial)):
                x, moved = trial, True
                break
            step *= 0.5
        used += 1
        if not moved:
            logger.debug("inner solve stalled: |pg|=%.3e > %.3e (%s)",
                         np.max(np.abs(pg)), pgtol, res.message)
            break
    return x[:s], x[s:], used, converged


def update_multipliers(state: ALState, residual_eq: np.ndarray, h_plus_vec: np.ndarray
                       ) -> tuple[np.ndarray, np.ndarray]:
    lam = state.lam + state.c1 * residual_eq
    # mu + c2 * max(-u, -mu/c2) == max(mu - c2 u, 0); clip roundoff below zero
    mu = np.maximum(state.mu + state.c2 * h_plus_vec, 0.0)
    return lam, mu


def update_penalties(state: ALState, eq_viol: float, ineq_viol: float, cfg: SolverConfig
                     ) -> tuple[float, float]:
    c1, c2 = state.c1, state.c2
    if state.prev_eq_viol is not None and eq_viol > cfg.gamma * state.prev_eq_viol:
        c1 *= cfg.beta
    if state.prev_ineq_viol is not None and ineq_viol > cfg.gamma * state.prev_ineq_viol:
        c2 *= cfg.beta
    return c1, c2


@dataclass
class WarmStart:
    """Start from full path flows (e.g. another threshold's solution)."""
    x: np.ndarray
    lam: np.ndarray | None = None


def start_point(cp: CompressedProblem, start) -> tuple[np.ndarray, np.ndarray, np.ndarray | None]:
    if isinstance(start, WarmStart):
        x = np.asarray(start.x, dtype=float)
        y = np.maximum(x[cp.partition.major_idx], 0.0)
        z = cp.U.T @ x[cp.partition.minor_idx]
        return y, z, start.lam
    y, z = start
    return np.asarray(y, dtype=float), np.asarray(z, dtype=float), None


def solve_al(cp: CompressedProblem, net: Network | None, cfg: SolverConfig | None = None,
             start=None, fhat: FhatFn | None = None) -> ALSolution:
    """Outer augmented Lagrangian loop.

    ``start`` is a ``(y, z)`` pair or a :class:`WarmStart`; by default the
    feasibility certificate is used. Stops when both the equality residual
    and ``max(0, -U z)`` are within ``cfg.tol`` in the infinity norm.
    """
    cfg = cfg or SolverConfig()
    if fhat is None:
        fhat = beckmann_fhat(cp, net)
    al = AugmentedLagrangian(cp, fhat)
    if start is None:
        start = feasibility_certificate(cp)
    y, z, lam = start_point(cp, start)
    n_minor = cp.partition.minor_idx.size
    state = ALState(y, z, np.zeros(cp.ell) if lam is None else np.asarray(lam, dtype=float),
                    np.zeros(n_minor), cfg.c0[0], cfg.c0[1])
    trace: list[TraceRow] = []
    total_inner, inner_seconds = 0, 0.0
    converged_outer = converged_inner = False
    eq_viol = ineq_viol = np.inf
    for k in range(cfg.max_outer):
        state.outer_k = k
        t0 = time.perf_counter()
        y, z, n_inner, converged_inner = inner_minimize(al, state, cfg)
        elapsed = time.perf_counter() - t0
        inner_seconds += elapsed
        total_inner += n_inner
        state.y, state.z = y, z

        u = cp.U @ z
        rho = al.residual(y, z, u)
        hp = h_plus(cp.U, z, state.mu, state.c2)
        eq_viol = float(np.max(np.abs(rho), initial=0.0))
        h_norm = float(np.max(np.abs(hp), initial=0.0))
        ineq_viol = float(np.max(-u, initial=0.0))
        L, f = al.evaluate(y, z, state.lam, state.mu, state.c1, state.c2, need_grad=False)
        trace.append(TraceRow(k + 1, eq_viol, ineq_viol, state.c1, state.c2, n_inner,
                              float(L), float(f), 1e3 * elapsed))
        logger.debug("outer %d: eq=%.3e ineq=%.3e c=(%.3g, %.3g) inner=%d",
                     k + 1, eq_viol, ineq_viol, state.c1, state.c2, n_inner)

        state.lam, state.mu = update_multipliers(state, rho, hp)
        assert np.all(state.mu >= 0)
        if max(eq_viol, ineq_viol) <= cfg.tol:
            converged_outer = True
            break
        c1, c2 = update_penalties(state, eq_viol, h_norm, cfg)
        state.prev_eq_viol, state.prev_ineq_viol = eq_viol, h_norm
        state.c1, state.c2 = c1, c2

    return ALSolution(state.y, state.z, state.lam, state.mu, state.c1, state.c2,
                      len(trace), total_inner, al.evaluations, converged_outer,
                      converged_inner, eq_viol, ineq_viol, cp.strategy, inner_seconds, trace)
