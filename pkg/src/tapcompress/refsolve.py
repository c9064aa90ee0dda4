"""Beckmann/BPR objective and a path-based gradient projection reference solver."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .netio import Link, Network
from .pathgen import IncidenceSystem

logger = logging.getLogger(__name__)


def bpr_link_time(link: Link, v: float) -> float:
    return link.free_flow_time * (1.0 + link.bpr_alpha * (max(v, 0.0) / link.capacity) ** link.bpr_power)


def beckmann_objective(net: Network, v: np.ndarray) -> float:
    """Sum over links of the BPR travel time integrated from 0 to ``v``.

    For ``v < 0`` the time is held at free flow, which keeps the objective
    convex and continuously differentiable on all of R^m.
    """
    v = np.asarray(v, dtype=float)
    ratio = np.maximum(v, 0.0) / net.capacity
    p = net.bpr_power
    return float(np.sum(net.free_flow_time * (v + net.bpr_alpha / (p + 1.0) * net.capacity * ratio ** (p + 1.0))))


def beckmann_gradient(net: Network, v: np.ndarray) -> np.ndarray:
    """Link travel times, i.e. the gradient of :func:`beckmann_objective`."""
    ratio = np.maximum(np.asarray(v, dtype=float), 0.0) / net.capacity
    return net.free_flow_time * (1.0 + net.bpr_alpha * ratio ** net.bpr_power)


def beckmann_hessian_diag(net: Network, v: np.ndarray) -> np.ndarray:
    ratio = np.maximum(np.asarray(v, dtype=float), 0.0) / net.capacity
    p = net.bpr_power
    return net.free_flow_time * net.bpr_alpha * p * ratio ** (p - 1.0) / net.capacity


class ReferenceSolverError(RuntimeError):
    def __init__(self, message: str, x: np.ndarray | None = None):
        super().__init__(message)
        self.x = x


@dataclass
class ReferenceConfig:
    gap_tol: float = 1e-6
    max_iters: int = 2000
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    zero_flow: float = 1e-12


@dataclass
class ReferenceSolution:
    x_star: np.ndarray
    v_star: np.ndarray
    relative_gap: float
    iterations: int
    converged: bool
    objective_trace: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"x": self.x_star.tolist(), "v": self.v_star.tolist(),
                "gap": self.relative_gap, "iterations": self.iterations,
                "converged": self.converged}

    @classmethod
    def from_json(cls, doc: dict) -> "ReferenceSolution":
        return cls(np.asarray(doc["x"], dtype=float), np.asarray(doc["v"], dtype=float),
                   float(doc["gap"]), int(doc["iterations"]), bool(doc.get("converged", False)))


def _od_min(values: np.ndarray, sys: IncidenceSystem) -> tuple[np.ndarray, np.ndarray]:
    """Per-OD minimum and the index of the first path attaining it."""
    starts = sys.od_start
    mins = np.minimum.reduceat(values, starts)
    # first argmin per OD: smallest index whose value equals the group minimum
    hit = values <= mins[sys.od_of_path]
    idx = np.where(hit, np.arange(values.size), values.size)
    first = np.minimum.reduceat(idx, starts)
    return mins, first


def relative_gap(sys: IncidenceSystem, x: np.ndarray, path_cost: np.ndarray) -> float:
    if sys.ell == 0:
        return 0.0
    tmin, _ = _od_min(path_cost, sys)
    lower = float(sys.d @ tmin)
    return (float(x @ path_cost) - lower) / lower


def all_or_nothing(sys: IncidenceSystem, path_cost: np.ndarray) -> np.ndarray:
    x = np.zeros(sys.n)
    if sys.ell:
        _, best = _od_min(path_cost, sys)
        x[best] = sys.d
    return x


def _snap(sys: IncidenceSystem, x: np.ndarray, rel: float) -> np.ndarray:
    """Zero flows below ``rel`` times their OD demand and restore ``Ax = d``.

    Backtracked shifts leave geometric residue (1e-30 and below) on paths
    that should be empty; that residue would otherwise leak into quantile
    thresholds.
    """
    dem = sys.d[sys.od_of_path]
    x = np.where(x <= rel * dem, 0.0, x)
    totals = np.bincount(sys.od_of_path, weights=x, minlength=sys.ell)
    scale = np.divide(sys.d, totals, out=np.ones(sys.ell), where=totals > 0)
    return x * scale[sys.od_of_path]


def solve_reference_ue(sys: IncidenceSystem, net: Network,
                       cfg: ReferenceConfig | None = None,
                       x0: np.ndarray | None = None) -> ReferenceSolution:
    """Path-based gradient projection with a Newton-scaled shift and Armijo steps.

    Every OD moves flow from its non-shortest paths onto its current shortest
    path; the per-path shift is the projected diagonal-Newton step and one
    common step length is backtracked on the Beckmann objective.
    """
    cfg = cfg or ReferenceConfig()
    if sys.n == 0:
        raise ValueError("empty incidence system")
    B, Bt = sys.B, sys.B.T.tocsr()
    x = all_or_nothing(sys, B @ net.free_flow_time) if x0 is None else np.array(x0, dtype=float)
    v = Bt @ x + sys.v0
    f = beckmann_objective(net, v)
    trace = [f]
    gap = np.inf
    it = 0
    while True:
        t = beckmann_gradient(net, v)
        cost = B @ t
        gap = relative_gap(sys, x, cost)
        if gap <= cfg.gap_tol or it >= cfg.max_iters:
            break
        it += 1
        tmin, best = _od_min(cost, sys)
        best_of_path = best[sys.od_of_path]
        # second-derivative mass over the symmetric difference with the best path
        h = beckmann_hessian_diag(net, v)
        own = B @ h
        common = np.asarray(B.multiply(B[best_of_path]) @ h).ravel()
        curv = own + own[best_of_path] - 2.0 * common
        excess = cost - tmin[sys.od_of_path]
        with np.errstate(divide="ignore", invalid="ignore"):
            shift = np.where(curv > 0, excess / curv, np.inf)
        shift = np.minimum(x, shift)
        shift[excess <= 0] = 0.0
        direction = -shift
        np.add.at(direction, best, np.bincount(sys.od_of_path, weights=shift, minlength=sys.ell))
        dv = Bt @ direction
        slope = float(t @ dv)
        if slope >= 0:
            break
        step = 1.0
        for _ in range(cfg.max_backtracks):
            f_new = beckmann_objective(net, v + step * dv)
            if f_new <= f + cfg.armijo * step * slope:
                break
            step *= cfg.backtrack
        else:
            raise ReferenceSolverError(
                f"line search failed at iteration {it} (objective {f:.6g})", x.copy())
        x = _snap(sys, np.maximum(x + step * direction, 0.0), cfg.zero_flow)
        v = Bt @ x + sys.v0
        f_prev, f = f, beckmann_objective(net, v)
        if f > f_prev * (1 + 1e-12) + 1e-12:
            raise ReferenceSolverError(
                f"objective increased from {f_prev:.12g} to {f:.12g}", x.copy())
        trace.append(f)
    converged = gap <= cfg.gap_tol
    logger.info("reference solve: gap=%.3e after %d iterations", gap, it)
    return ReferenceSolution(x, v, float(gap), it, converged, trace)


def wardrop_violation(sys: IncidenceSystem, net: Network, x: np.ndarray,
                      used: float = 1e-6) -> float:
    """Largest relative excess of a used path's time over its OD minimum."""
    cost = sys.B @ beckmann_gradient(net, sys.link_flows(x))
    tmin, _ = _od_min(cost, sys)
    excess = (cost - tmin[sys.od_of_path]) / tmin[sys.od_of_path]
    mask = x > used * np.maximum(sys.d[sys.od_of_path], 1.0)
    return float(excess[mask].max(initial=0.0))
