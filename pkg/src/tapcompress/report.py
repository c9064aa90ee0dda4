"""Solution-quality metrics, sweep tables and their CSV/JSON emission."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .alm import ALSolution, SolverConfig, TraceRow, WarmStart, solve_al
from .compress import (CompressedProblem, Partition, compress_system, eligible_flows,
                       expand_solution, partition_paths, proportional_start,
                       threshold_from_quantile)
from .netio import Network
from .pathgen import IncidenceSystem
from .refsolve import ReferenceSolution, beckmann_objective

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
DEFAULT_QUANTILES = tuple(i / 10 for i in range(10))
DEFAULT_RANKS = (50, 100, 150, 200)
TIMING_FIELDS = ("cpu_seconds", "cpu_per_inner")


def bpr_gap(v_tilde: np.ndarray, v_star: np.ndarray, net: Network) -> float:
    """Percent excess of the Beckmann objective over the reference's."""
    f_ref = beckmann_objective(net, v_star)
    if f_ref == 0:
        raise ValueError("reference objective is zero; BPR gap undefined")
    return 100.0 * (beckmann_objective(net, v_tilde) - f_ref) / f_ref


def link_r2(v_tilde: np.ndarray, v_star: np.ndarray) -> float:
    v_tilde = np.asarray(v_tilde, dtype=float)
    v_star = np.asarray(v_star, dtype=float)
    a = v_star.mean()
    denom = float(np.sum((v_star - a) ** 2))
    if denom == 0:
        raise ValueError("constant reference link flows; R^2 undefined")
    return 1.0 - float(np.sum((v_tilde - v_star) ** 2)) / denom


@dataclass
class FlowDistribution:
    major_flow: float
    minor_flow: float
    major_share_pct: float
    minor_share_pct: float


def flow_distribution(part: Partition, nominal_x: np.ndarray, total_demand: float) -> FlowDistribution:
    """Nominal flow on major/minor paths; shares are of total demand incl. singletons."""
    x = np.asarray(nominal_x, dtype=float)
    major = float(x[part.major_idx].sum())
    minor = float(x[part.minor_idx].sum())
    return FlowDistribution(major, minor, 100.0 * major / total_demand,
                            100.0 * minor / total_demand)


@dataclass
class SolveReport:
    tau: float
    r: int
    s: int
    n_minus_s: int
    reduction_pct: float
    bpr_gap_pct: float
    link_r2: float
    outer_iters: int
    total_inner_iters: int
    cpu_seconds: float
    cpu_per_inner: float
    converged_outer: bool
    converged_inner: bool
    major_flow_share_pct: float
    minor_flow_share_pct: float
    quantile: float | None = None
    status: str = "ok"

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


@dataclass
class Instance:
    """Everything a sweep needs: network, multi-path system, reference, nominal flows."""
    network: Network
    system: IncidenceSystem
    reference: ReferenceSolution
    total_demand: float
    nominal_x: np.ndarray | None = None

    @property
    def nominal(self) -> np.ndarray:
        return self.reference.x_star if self.nominal_x is None else self.nominal_x


@dataclass
class RunResult:
    problem: CompressedProblem
    solution: ALSolution
    x_hat: np.ndarray
    v_tilde: np.ndarray
    report: SolveReport


def solve_instance(inst: Instance, tau: float, cfg: SolverConfig, start=None,
                   svd_method: str = "auto", quantile: float | None = None,
                   problem: CompressedProblem | None = None) -> RunResult:
    """Compress at ``tau`` (rank capped at min(n - s, m)), solve, and score.

    A prebuilt ``problem`` skips compression; its time is then not counted.
    """
    t0 = time.perf_counter()
    cp = problem or compress_system(inst.system, inst.nominal, tau, cfg.r, cfg.strategy,
                                    svd_method)
    if start is None:
        start = proportional_start(cp, inst.nominal)
    sol = solve_al(cp, inst.network, cfg, start)
    elapsed = time.perf_counter() - t0
    x_hat, v_tilde = expand_solution(cp, sol.y, sol.z)
    n = inst.system.n
    n_minor = cp.partition.minor_idx.size
    dist = flow_distribution(cp.partition, inst.nominal, inst.total_demand)
    report = SolveReport(
        tau=float(tau), r=cp.r, s=cp.s, n_minus_s=n_minor,
        reduction_pct=100.0 * n_minor / n if n else 0.0,
        bpr_gap_pct=bpr_gap(v_tilde, inst.reference.v_star, inst.network),
        link_r2=link_r2(v_tilde, inst.reference.v_star),
        outer_iters=sol.outer_iterations, total_inner_iters=sol.inner_iterations,
        cpu_seconds=elapsed, cpu_per_inner=sol.seconds_per_inner,
        converged_outer=sol.converged_outer, converged_inner=sol.converged_inner,
        major_flow_share_pct=dist.major_share_pct, minor_flow_share_pct=dist.minor_share_pct,
        quantile=quantile)
    return RunResult(cp, sol, x_hat, v_tilde, report)


def failed_report(tau, r, quantile, exc) -> SolveReport:
    nan = math.nan
    return SolveReport(tau, r, 0, 0, nan, nan, nan, 0, 0, nan, nan, False, False, nan, nan,
                       quantile, f"error: {exc}")


def sweep_thresholds(inst: Instance, quantiles: Sequence[float] = DEFAULT_QUANTILES,
                     cfg: SolverConfig | None = None, basis: str = "positive",
                     warm_start: bool = False) -> list[SolveReport]:
    """Baseline (tau = 0) plus one run per quantile threshold, same settings."""
    cfg = cfg or SolverConfig()
    flows = eligible_flows(inst.nominal, inst.system, basis)
    reports = []
    prev: RunResult | None = None
    for q in (None, *quantiles):
        tau = 0.0 if q is None else threshold_from_quantile(flows, q)
        start = WarmStart(prev.x_hat, prev.solution.lam) if warm_start and prev else None
        try:
            prev = solve_instance(inst, tau, cfg, start, quantile=q)
            reports.append(prev.report)
        except Exception as exc:  # a failed row must not abort the sweep
            logger.warning("threshold run tau=%g failed: %s", tau, exc)
            reports.append(failed_report(tau, cfg.r, q, exc))
    return reports


def sweep_ranks(inst: Instance, tau: float, ranks: Sequence[int] = DEFAULT_RANKS,
                cfg: SolverConfig | None = None) -> tuple[list[SolveReport], list[str]]:
    """One run per rank at fixed ``tau``; infeasible ranks are skipped."""
    cfg = cfg or SolverConfig()
    part = partition_paths(inst.nominal, inst.system, tau)
    cap = min(part.minor_idx.size, inst.system.m)
    reports, diagnostics = [], []
    for r in ranks:
        if r > cap:
            diagnostics.append(f"rank {r} skipped: exceeds min(n - s, m) = {cap}")
            continue
        run_cfg = SolverConfig(**{**asdict(cfg), "r": int(r)})
        try:
            reports.append(solve_instance(inst, tau, run_cfg).report)
        except Exception as exc:
            logger.warning("rank run r=%d failed: %s", r, exc)
            reports.append(failed_report(tau, r, None, exc))
    return reports, diagnostics


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "Y" if value else "N"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def reports_csv(reports: Iterable[SolveReport], timing: bool = True) -> str:
    cols = [c for c in SolveReport.columns() if timing or c not in TIMING_FIELDS]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for rep in reports:
        row = asdict(rep)
        w.writerow([_fmt(row[c]) for c in cols])
    return buf.getvalue()


def _json_value(value):
    if isinstance(value, float):
        return None if math.isnan(value) else float(f"{value:.6g}")
    return value


def reports_json(reports: Iterable[SolveReport]) -> dict:
    return {"schema_version": SCHEMA_VERSION,
            "reports": [{k: _json_value(v) for k, v in asdict(rep).items()} for rep in reports]}


def emit_report(reports: Sequence[SolveReport], fmt: str, path: str | Path) -> Path:
    path = Path(path)
    if fmt == "csv":
        path.write_text(reports_csv(reports))
    elif fmt == "json":
        path.write_text(json.dumps(reports_json(reports), indent=2) + "\n")
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    return path


TRACE_COLUMNS = ("k", "eq_viol", "ineq_viol", "c1", "c2", "inner_iters", "L_c", "f_hat", "wall_ms")


def trace_csv(trace: Sequence[TraceRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for row in trace:
        w.writerow([_fmt(getattr(row, c)) for c in TRACE_COLUMNS])
    return buf.getvalue()
