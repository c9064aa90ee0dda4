"""Command-line driver: parse -> paths -> reference -> compress -> solve -> report.

Exit codes: 0 success (non-convergence is a reported status), 2 input
error, 3 numeric failure, 4 invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from itertools import product
from pathlib import Path

import numpy as np

from .alm import InnerSolveError, SolverConfig, WarmStart
from .compress import (STRATEGIES, compress_system, eligible_flows, feasibility_certificate,
                       model_to_json, proportional_start, spectrum_csv,
                       threshold_from_quantile)
from .fixtures import FIXTURES, fixture_paths
from .netio import TNTPParseError, load_network, load_trips, validate_network
from .pathgen import DEFAULT_K, build_path_set, build_system, load_paths, paths_to_json
from .refsolve import ReferenceConfig, ReferenceSolution, ReferenceSolverError, solve_reference_ue
from .report import (DEFAULT_QUANTILES, DEFAULT_RANKS, Instance, SolveReport, _fmt,
                     failed_report, reports_csv, reports_json, solve_instance, sweep_ranks,
                     sweep_thresholds, trace_csv)

logger = logging.getLogger("tapcompress")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC, EXIT_INVARIANT = 0, 2, 3, 4
TUNING_GRID = {"tol": (1e-4, 1e-6), "beta": (4.0, 10.0), "c0": (10.0, 100.0, 1000.0)}
RANK_SWEEP_QUANTILE = 0.9


class InputError(Exception):
    pass


class InvariantError(Exception):
    pass


@dataclass
class RunManifest:
    """Everything needed to rerun a command; written next to its outputs."""
    command: str
    out: str
    net: str | None = None
    trips: str | None = None
    fixture: str | None = None
    paths: str | None = None
    k: int = DEFAULT_K
    tau: float | None = None
    quantile: float | None = None
    quantile_basis: str = "positive"
    rank: int = 50
    beta: float = 10.0
    gamma: float = 0.25
    c0_eq: float = 1e3
    c0_ineq: float = 1e3
    tol: float = 1e-4
    max_outer: int = 20
    max_inner: int = 200
    strategy: str = "mixed"
    nominal: str = "reference"
    early_iters: int = 3
    warm_start: bool = False
    max_iters: int = 2000
    gap_tol: float = 1e-6
    reference: str | None = None
    mode: str | None = None
    quantiles: list[float] = field(default_factory=lambda: list(DEFAULT_QUANTILES))
    ranks: list[int] = field(default_factory=lambda: list(DEFAULT_RANKS))

    def solver_config(self, **over) -> SolverConfig:
        kw = dict(beta=self.beta, gamma=self.gamma, c0=(self.c0_eq, self.c0_ineq), tol=self.tol,
                  max_outer=self.max_outer, max_inner_per_outer=self.max_inner, r=self.rank,
                  strategy=self.strategy)
        kw.update(over)
        return SolverConfig(**kw)

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunManifest":
        names = cls.__dataclass_fields__
        return cls(**{k: v for k, v in vars(args).items() if k in names and v is not None})


def _write(out: Path, name: str, text: str) -> None:
    (out / name).write_text(text)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=False) + "\n"


def _inputs(man: RunManifest):
    if man.fixture:
        if man.net or man.trips:
            raise InputError("--fixture excludes --net/--trips")
        if man.fixture not in FIXTURES:
            raise InputError(f"unknown fixture {man.fixture!r}; choose from {sorted(FIXTURES)}")
        net_path, trips_path = fixture_paths(man.fixture)
    else:
        if not (man.net and man.trips):
            raise InputError("both --net and --trips are required (or --fixture)")
        net_path, trips_path = Path(man.net), Path(man.trips)
    for p in (net_path, trips_path):
        if not Path(p).is_file():
            raise InputError(f"no such file: {p}")
    net = load_network(net_path)
    demand = load_trips(trips_path)
    problems = validate_network(net, demand)
    if problems:
        raise InputError("; ".join(problems))
    return net, demand


def _paths(man: RunManifest, net, demand):
    if man.paths:
        return load_paths(man.paths, demand)
    return build_path_set(net, demand, man.k)


def _reference(man: RunManifest, system, net, max_iters=None) -> ReferenceSolution:
    if man.reference and max_iters is None:
        ref = ReferenceSolution.from_json(json.loads(Path(man.reference).read_text()))
        if ref.x_star.size != system.n or ref.v_star.size != system.m:
            raise InputError("reference file does not match the path set")
        return ref
    cfg = ReferenceConfig(gap_tol=man.gap_tol,
                          max_iters=man.max_iters if max_iters is None else max_iters)
    return solve_reference_ue(system, net, cfg)


def _nominal(man: RunManifest, system, net, ref: ReferenceSolution) -> np.ndarray:
    src = man.nominal
    if src == "reference":
        return ref.x_star
    if src == "early":
        return solve_reference_ue(system, net, ReferenceConfig(max_iters=man.early_iters)).x_star
    doc = json.loads(Path(src).read_text())
    x = np.asarray(doc["x"] if isinstance(doc, dict) else doc, dtype=float)
    if x.shape != (system.n,) or np.any(x < 0) or not np.all(np.isfinite(x)):
        raise InputError(f"nominal flows in {src} must be {system.n} finite nonnegative values")
    return x


def _prepare(man: RunManifest):
    net, demand = _inputs(man)
    paths = _paths(man, net, demand)
    system = build_system(net, demand, man.k, paths)
    return net, demand, paths, system


def _resolve_tau(man: RunManifest, system, nominal, default_q=None) -> tuple[float, float | None]:
    if man.tau is not None and man.quantile is not None:
        raise InputError("give exactly one of --tau and --quantile")
    if man.tau is not None:
        if man.tau < 0:
            raise InputError("--tau must be nonnegative")
        return man.tau, None
    q = man.quantile if man.quantile is not None else default_q
    if q is None:
        raise InputError("one of --tau and --quantile is required")
    if not 0 <= q < 1:
        raise InputError("--quantile must lie in [0, 1)")
    return threshold_from_quantile(eligible_flows(nominal, system, man.quantile_basis), q), q


def cmd_reference(man: RunManifest) -> int:
    out = Path(man.out)
    net, demand, paths, system = _prepare(man)
    ref = _reference(man, system, net)
    _write(out, "paths.json", json.dumps(paths_to_json(paths, demand)) + "\n")
    _write(out, "reference.json", json.dumps(ref.to_json()) + "\n")
    status = "converged" if ref.converged else "not converged"
    print(f"reference: gap={ref.relative_gap:.3e} iterations={ref.iterations} "
          f"paths={system.n} ods={system.ell} status={status}")
    return EXIT_OK


def _check_certificate(cp) -> None:
    y0, z0 = feasibility_certificate(cp)
    if not np.array_equal(cp.A1 @ y0, cp.d) or np.any(cp.U @ z0 < 0):
        raise InvariantError("feasibility certificate violated; this is a bug")


def cmd_solve(man: RunManifest) -> int:
    out = Path(man.out)
    net, demand, paths, system = _prepare(man)
    ref = _reference(man, system, net)
    nominal = _nominal(man, system, net, ref)
    tau, q = _resolve_tau(man, system, nominal)
    cfg = man.solver_config()
    inst = Instance(net, system, ref, demand.total, nominal)
    cp = compress_system(system, nominal, tau, cfg.r, cfg.strategy)
    _check_certificate(cp)
    start = WarmStart(nominal) if man.warm_start else proportional_start(cp, nominal)
    run = solve_instance(inst, tau, cfg, start, quantile=q, problem=cp)
    _write(out, "reference.json", json.dumps(ref.to_json()) + "\n")
    _write(out, "compression.json", json.dumps(model_to_json(run.problem)) + "\n")
    _write(out, "spectrum.csv", spectrum_csv(run.problem.factors.sigma))
    sol_doc = run.solution.to_json()
    sol_doc["x"] = run.x_hat.tolist()
    sol_doc["v"] = run.v_tilde.tolist()
    _write(out, "solution.json", _dump(sol_doc))
    _write(out, "trace.csv", trace_csv(run.solution.trace))
    _write(out, "report.json", _dump(reports_json([run.report])))
    _write(out, "report.csv", reports_csv([run.report]))
    rep = run.report
    print(f"solve: tau={_fmt(rep.tau)} r={rep.r} s={rep.s} reduction={_fmt(rep.reduction_pct)}% "
          f"R2={_fmt(rep.link_r2)} gap={_fmt(rep.bpr_gap_pct)}% outer={rep.outer_iters} "
          f"inner={rep.total_inner_iters} converged={_fmt(rep.converged_outer)}")
    return EXIT_OK


def _tuning_csv(rows: list[tuple[float, float, float, SolveReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tol", "beta", "c0", *SolveReport.columns()])
    for tol, beta, c0, rep in rows:
        d = asdict(rep)
        w.writerow([_fmt(tol), _fmt(beta), _fmt(c0), *(_fmt(d[c]) for c in SolveReport.columns())])
    return buf.getvalue()


def cmd_sweep(man: RunManifest) -> int:
    out = Path(man.out)
    net, demand, paths, system = _prepare(man)
    ref = _reference(man, system, net)
    nominal = _nominal(man, system, net, ref)
    inst = Instance(net, system, ref, demand.total, nominal)
    cfg = man.solver_config()
    if man.mode == "tau":
        reports = sweep_thresholds(inst, man.quantiles, cfg, man.quantile_basis, man.warm_start)
        _write(out, "sweep.csv", reports_csv(reports))
        _write(out, "sweep.json", _dump(reports_json(reports)))
        print(f"sweep tau: {len(reports)} rows")
    elif man.mode == "rank":
        tau, _ = _resolve_tau(man, system, nominal, RANK_SWEEP_QUANTILE)
        reports, diagnostics = sweep_ranks(inst, tau, man.ranks, cfg)
        for msg in diagnostics:
            print(f"warning: {msg}", file=sys.stderr)
        _write(out, "sweep.csv", reports_csv(reports))
        doc = reports_json(reports)
        doc["diagnostics"] = diagnostics
        _write(out, "sweep.json", _dump(doc))
        print(f"sweep rank: {len(reports)} rows, {len(diagnostics)} skipped")
    elif man.mode == "tuning":
        tau, q = _resolve_tau(man, system, nominal, RANK_SWEEP_QUANTILE)
        rows = []
        for tol, beta, c0 in product(*TUNING_GRID.values()):
            run_cfg = man.solver_config(tol=tol, beta=beta, c0=(c0, c0))
            try:
                rep = solve_instance(inst, tau, run_cfg, quantile=q).report
            except (InnerSolveError, FloatingPointError, ValueError) as exc:
                rep = failed_report(tau, run_cfg.r, q, exc)
            rows.append((tol, beta, c0, rep))
        _write(out, "sweep.csv", _tuning_csv(rows))
        print(f"sweep tuning: {len(rows)} rows")
    else:
        raise InputError(f"unknown sweep mode {man.mode!r}")
    return EXIT_OK


COMMANDS = {"reference": cmd_reference, "solve": cmd_solve, "sweep": cmd_sweep}


def _add_inputs(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("inputs")
    g.add_argument("--net", help="TNTP network file")
    g.add_argument("--trips", help="TNTP trips file")
    g.add_argument("--fixture", help=f"bundled instance instead of --net/--trips: {', '.join(FIXTURES)}")
    g.add_argument("--paths", help="path set JSON (as written by the reference command)")
    g.add_argument("--k", type=int, default=DEFAULT_K, help="paths per OD pair (default %(default)s)")
    g.add_argument("--reference", help="reuse a reference.json instead of solving")
    g.add_argument("--max-iters", type=int, default=2000, help="reference solver iteration cap")
    g.add_argument("--gap-tol", type=float, default=1e-6, help="reference relative gap target")
    p.add_argument("--out", default=".", help="output directory (default: current)")


def _add_solver(p: argparse.ArgumentParser, threshold_required: bool) -> None:
    th = p.add_mutually_exclusive_group(required=threshold_required)
    th.add_argument("--tau", type=float, help="minor-path threshold in vehicles")
    th.add_argument("--quantile", type=float, help="threshold as a quantile of nominal flows")
    p.add_argument("--quantile-basis", choices=("all", "candidates", "positive"), default="positive",
                   help="flows the quantile is taken over (default %(default)s)")
    p.add_argument("--rank", type=int, default=50)
    p.add_argument("--beta", type=float, default=10.0)
    p.add_argument("--gamma", type=float, default=0.25)
    p.add_argument("--c0-eq", type=float, default=1e3)
    p.add_argument("--c0-ineq", type=float, default=1e3)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--max-outer", type=int, default=20)
    p.add_argument("--max-inner", type=int, default=200, help="inner iterations per outer")
    p.add_argument("--strategy", choices=STRATEGIES, default="mixed")
    p.add_argument("--nominal", default="reference",
                   help="'reference', 'early' (truncated reference solve) or a JSON file with x")
    p.add_argument("--early-iters", type=int, default=3)
    p.add_argument("--warm-start", action="store_true",
                   help="solve: start from the nominal flows; tau sweep: chain solutions")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tapcompress",
                                     description="Traffic assignment with major/minor path compression.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("reference", help="uncompressed equilibrium by gradient projection")
    _add_inputs(p)

    p = sub.add_parser("solve", help="compress and solve one instance")
    _add_inputs(p)
    _add_solver(p, threshold_required=True)

    p = sub.add_parser("sweep", help="threshold, rank or parameter sweep")
    p.add_argument("mode", choices=("tau", "rank", "tuning"))
    _add_inputs(p)
    _add_solver(p, threshold_required=False)
    p.add_argument("--quantiles", type=float, nargs="+", default=list(DEFAULT_QUANTILES))
    p.add_argument("--ranks", type=int, nargs="+", default=list(DEFAULT_RANKS))

    p = sub.add_parser("replay", help="rerun a command from its manifest.json")
    p.add_argument("manifest")
    p.add_argument("--out", help="override the output directory")
    return parser


def run(man: RunManifest) -> int:
    out = Path(man.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InputError(f"cannot create output directory {out}: {exc}") from exc
    _write(out, "manifest.json", _dump(asdict(man)))
    return COMMANDS[man.command](man)


def _load_manifest(path: str, out: str | None) -> RunManifest:
    try:
        doc = json.loads(Path(path).read_text())
        man = RunManifest(**doc)
    except (OSError, ValueError, TypeError) as exc:
        raise InputError(f"bad manifest {path}: {exc}") from exc
    if out:
        man.out = out
    if man.command not in COMMANDS:
        raise InputError(f"manifest names unknown command {man.command!r}")
    return man


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "replay":
            man = _load_manifest(args.manifest, args.out)
        else:
            man = RunManifest.from_args(args)
        return run(man)
    except (InvariantError, AssertionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (ReferenceSolverError, InnerSolveError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, TNTPParseError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
