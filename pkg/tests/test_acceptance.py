"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL`` line (also repeated in
the terminal summary) before asserting.
"""
from __future__ import annotations

import json
import logging
import shutil
import time

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from conftest import get_case, record_criterion
from tapcompress import alm
from tapcompress.alm import SolverConfig, al_gradients, al_value
from tapcompress.cli import main as cli_main
from tapcompress.compress import (STRATEGIES, compress_system, eligible_flows,
                                  feasibility_certificate, threshold_from_quantile,
                                  truncated_svd)
from tapcompress.fixtures import make_grid
from tapcompress.pathgen import build_system
from tapcompress.refsolve import solve_reference_ue
from tapcompress.report import (DEFAULT_QUANTILES, DEFAULT_RANKS, TIMING_FIELDS, Instance,
                                solve_instance, sweep_thresholds)

log = logging.getLogger("acceptance")
FIXTURE_NAMES = ("braess", "grid9", "siouxfalls")


def tau_grid(case, quantiles=DEFAULT_QUANTILES):
    """(quantile, tau) pairs of the threshold sweep, baseline included."""
    x = case.reference.x_star
    flows = eligible_flows(x, case.system, "positive")
    if flows.size == 0:
        flows = eligible_flows(x, case.system, "candidates")
    return [(None, 0.0)] + [(q, threshold_from_quantile(flows, q)) for q in quantiles]


# 1 ---------------------------------------------------------------------------

def test_criterion_1_feasibility_certificate():
    t0 = time.perf_counter()
    checked, failures = 0, []
    for name in FIXTURE_NAMES:
        case = get_case(name)
        x = case.reference.x_star
        for q, tau in tau_grid(case):
            for r in sorted({50, *DEFAULT_RANKS}):
                cp = compress_system(case.system, x, tau, r)
                y0, z0 = feasibility_certificate(cp)
                checked += 1
                if not (np.array_equal(cp.A1 @ y0, cp.d) and np.all(cp.U @ z0 >= 0)
                        and np.all(y0 >= 0)):
                    failures.append((name, q, r))
    elapsed = time.perf_counter() - t0
    ok = not failures and elapsed < 60
    record_criterion(1, ok, f"{checked} (tau, r) certificates, {len(failures)} failures, "
                            f"{elapsed:.1f}s")
    assert ok, failures


# 2 ---------------------------------------------------------------------------

def _fd_check(cp, net, rng, n_coords=24, n_dirs=4):
    """Relative error of analytic vs central-difference AL gradient at one random point."""
    x = np.asarray(cp.A1.T @ (cp.d / np.maximum(cp.A1 @ np.ones(cp.s), 1.0))).ravel()
    y = x * rng.uniform(0.5, 1.5, cp.s)
    scale = max(float(cp.d.mean()), 1.0)
    z = rng.normal(size=cp.r) * scale
    lam = rng.normal(size=cp.ell) * 10.0
    mu = rng.uniform(0, 5, cp.partition.minor_idx.size)
    c = (float(rng.choice([10.0, 1e3])), float(rng.choice([10.0, 1e3])))
    gy, gz = al_gradients(cp, net, y, z, lam, mu, c)
    g = np.concatenate([gy, gz])
    point = np.concatenate([y, z])
    coords = np.concatenate([rng.choice(cp.s, min(n_coords, cp.s), replace=False),
                             cp.s + np.arange(cp.r)])
    directions = [np.eye(point.size)[i] for i in coords]
    directions += [d / np.linalg.norm(d) for d in rng.normal(size=(n_dirs, point.size))]
    h = 1e-6 * max(scale, 1.0)
    fd, an = [], []
    for d in directions:
        fp = al_value(cp, net, *np.split(point + h * d, [cp.s]), lam, mu, c)
        fm = al_value(cp, net, *np.split(point - h * d, [cp.s]), lam, mu, c)
        fd.append((fp - fm) / (2 * h))
        an.append(g @ d)
    fd, an = np.array(fd), np.array(an)
    return float(np.linalg.norm(fd - an) / np.linalg.norm(an)), (y, z, lam, mu, c)


def test_criterion_2_gradient_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_fd, worst_pair, points = 0.0, 0.0, 0
    for name in FIXTURE_NAMES:
        case = get_case(name)
        x = case.reference.x_star
        tau = 1e9 if name == "braess" else dict(tau_grid(case))[0.5]
        base = compress_system(case.system, x, tau, 50, "direct")
        assert base.r > 0
        problems = {s: base.with_strategy(s) for s in STRATEGIES}
        for _ in range(20):
            for strategy, cp in problems.items():
                err, point = _fd_check(cp, case.net, rng)
                worst_fd = max(worst_fd, err)
            y, z, lam, mu, c = point
            gd = np.concatenate(al_gradients(problems["direct"], case.net, y, z, lam, mu, c))
            gc = np.concatenate(al_gradients(problems["chain"], case.net, y, z, lam, mu, c))
            worst_pair = max(worst_pair, float(np.max(np.abs(gd - gc)) / np.max(np.abs(gc))))
            points += 1
    elapsed = time.perf_counter() - t0
    ok = worst_fd <= 1e-5 and worst_pair <= 1e-10 and elapsed < 60
    record_criterion(2, ok, f"{points} points x 4 strategies, worst FD rel err {worst_fd:.2e}, "
                            f"direct vs chain {worst_pair:.2e}, {elapsed:.1f}s")
    assert ok


# 3 ---------------------------------------------------------------------------

def test_criterion_3_eckart_young_and_svd_oracle():
    rng = np.random.default_rng(11)
    case = get_case("siouxfalls")
    worst_margin = -np.inf
    for q, tau in tau_grid(case, (0.5, 0.9)):
        if q is None:
            continue
        for r in (5, 20, 50):
            cp = compress_system(case.system, case.reference.x_star, tau, r)
            B2 = case.system.B[cp.partition.minor_idx]
            f = cp.factors
            W = rng.normal(size=(B2.shape[0], 100))
            W /= np.linalg.norm(W, axis=0)
            resid = np.linalg.norm(B2.T @ W - f.V @ (f.sigma[:, None] * (f.U.T @ W)), axis=0)
            worst_margin = max(worst_margin, float(np.max(resid - (f.sigma_next + 1e-6))))

    worst_oracle = 0.0
    for rows, cols in [(4, 3), (30, 12), (120, 60), (200, 100), (100, 200)]:
        B = (rng.random((rows, cols)) < 0.3).astype(float)
        U, s, Vt = scipy.linalg.svd(B, full_matrices=False, lapack_driver="gesvd")
        for r in (1, min(rows, cols) // 2, min(rows, cols) - 1):
            f = truncated_svd(sp.csr_matrix(B), r)
            recon = f.U @ np.diag(f.sigma) @ f.V.T
            oracle = U[:, :r] @ np.diag(s[:r]) @ Vt[:r]
            worst_oracle = max(worst_oracle, float(np.max(np.abs(f.sigma - s[:r]))),
                               abs(f.sigma_next - s[r]), float(np.max(np.abs(recon - oracle))))
    ok = worst_margin <= 0 and worst_oracle <= 1e-8
    record_criterion(3, ok, f"max(resid - sigma_next - 1e-6) = {worst_margin:.2e}; "
                            f"dense oracle max deviation {worst_oracle:.2e}")
    assert ok


# 4 ---------------------------------------------------------------------------

def test_criterion_4_uncompressed_equivalence():
    t0 = time.perf_counter()
    rows, ok = [], True
    for name in ("braess", "siouxfalls"):
        case = get_case(name)
        rep = solve_instance(case.instance, 0.0, SolverConfig()).report
        good = rep.n_minus_s == 0 and rep.link_r2 >= 0.999 and abs(rep.bpr_gap_pct) <= 0.5
        ok &= good
        rows.append(f"{name}: R2={rep.link_r2:.6f} gap={rep.bpr_gap_pct:.2e}%")
    # Braess also from the pure certificate, no nominal-flow information at all
    braess = get_case("braess")
    cp = compress_system(braess.system, braess.reference.x_star, 0.0, 50)
    cold = solve_instance(braess.instance, 0.0, SolverConfig(), start=feasibility_certificate(cp))
    ok &= cold.report.link_r2 >= 0.999 and abs(cold.report.bpr_gap_pct) <= 0.5
    rows.append(f"braess cold: R2={cold.report.link_r2:.6f}")
    # reported, not asserted: Sioux Falls from the certificate at the default inner budget
    sioux = get_case("siouxfalls")
    cp = compress_system(sioux.system, sioux.reference.x_star, 0.0, 50)
    cold = solve_instance(sioux.instance, 0.0, SolverConfig(), start=feasibility_certificate(cp))
    rows.append(f"siouxfalls cold (logged only): R2={cold.report.link_r2:.4f} "
                f"gap={cold.report.bpr_gap_pct:.3f}%")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 300
    record_criterion(4, ok, "; ".join(rows) + f"; {elapsed:.1f}s")
    assert ok


# 5 ---------------------------------------------------------------------------

def test_criterion_5_compression_fidelity():
    t0 = time.perf_counter()
    case = get_case("siouxfalls")
    reports = sweep_thresholds(case.instance, DEFAULT_QUANTILES, SolverConfig(r=50))
    gated = [r for r in reports[1:] if r.quantile <= 0.7 + 1e-12]
    high = [r for r in reports[1:] if r.quantile > 0.7 + 1e-12]
    worst = min(r.link_r2 for r in gated)
    elapsed = time.perf_counter() - t0
    ok = len(reports) == 11 and worst >= 0.95 and elapsed < 600
    above = ", ".join(f"q={r.quantile:.1f}: {r.link_r2:.4f}" for r in high)
    record_criterion(5, ok, f"min R2 up to q=0.7 is {worst:.4f}; reported {above}; "
                            f"{elapsed:.1f}s")
    assert ok


# 6 ---------------------------------------------------------------------------

def test_criterion_6_al_machinery(monkeypatch):
    cfg = SolverConfig()
    assert (cfg.beta, cfg.gamma, cfg.c0, cfg.max_outer) == (10.0, 0.25, (1e3, 1e3), 20)
    min_mu = []
    real_update = alm.update_multipliers

    def spy(state, rho, hp):
        lam, mu = real_update(state, rho, hp)
        min_mu.append(float(mu.min(initial=0.0)))
        return lam, mu

    monkeypatch.setattr(alm, "update_multipliers", spy)
    runs, bad_growth, failures = 0, 0, []
    for name in FIXTURE_NAMES:
        case = get_case(name)
        for q, tau in tau_grid(case, (0.5, 0.9)):
            run = solve_instance(case.instance, tau, cfg, quantile=q)
            sol = run.solution
            runs += 1
            for a, b in zip(sol.trace, sol.trace[1:]):
                for before, after in ((a.c1, b.c1), (a.c2, b.c2)):
                    if after not in (before, before * cfg.beta):
                        bad_growth += 1
            if not (sol.converged_outer and sol.eq_viol <= 1e-4 and sol.outer_iterations <= 20):
                failures.append((name, q, sol.outer_iterations, sol.eq_viol))
    ok = min(min_mu) >= 0 and bad_growth == 0 and not failures
    record_criterion(6, ok, f"{runs} runs, {len(min_mu)} multiplier updates, min mu "
                            f"{min(min_mu):.1e}, non-beta penalty steps {bad_growth}, "
                            f"unconverged {failures}")
    assert ok


# 7 ---------------------------------------------------------------------------

def test_criterion_7_rank_insensitivity():
    case = get_case("siouxfalls")
    tau = dict(tau_grid(case, (0.9,)))[0.9]
    r_hi = min(200, case.system.m)
    reports = {r: solve_instance(case.instance, tau, SolverConfig(r=r)).report for r in (20, 50, r_hi)}
    hi = reports[r_hi]
    assert hi.r == min(200, hi.n_minus_s, case.system.m)
    diff = abs(hi.link_r2 - reports[20].link_r2)
    per_inner = [reports[r].cpu_per_inner for r in (20, 50, r_hi)]
    log.info("per-inner seconds by rank 20/50/%d: %s (soft check)", r_hi, per_inner)
    ok = diff <= 0.01
    record_criterion(7, ok, f"|R2(r={hi.r}) - R2(r=20)| = {diff:.2e} (200 requested, capped at "
                            f"m = {case.system.m}); per-inner s {['%.2e' % t for t in per_inner]}"
                            f" nondecreasing={per_inner == sorted(per_inner)} (soft)")
    assert ok


# 8 ---------------------------------------------------------------------------

def test_criterion_8_per_inner_cost_trend():
    net, demand = make_grid(3, 3, parallel=2)
    system = build_system(net, demand, k=100)
    assert system.n >= 5000
    ref = solve_reference_ue(system, net)
    inst = Instance(net, system, ref, demand.total)
    reports = sweep_thresholds(inst, DEFAULT_QUANTILES, SolverConfig())
    base = reports[0]
    converging = [r for r in reports[1:] if r.converged_outer]
    assert converging
    aggressive = max(converging, key=lambda r: r.tau)
    ratio = aggressive.cpu_per_inner / base.cpu_per_inner
    ok = ratio <= 1.05
    record_criterion(8, ok, f"n={system.n}: per-inner {base.cpu_per_inner:.2e}s at tau=0 vs "
                            f"{aggressive.cpu_per_inner:.2e}s at tau={aggressive.tau:.3g} "
                            f"(ratio {ratio:.2f})")
    assert ok


# 9 ---------------------------------------------------------------------------

def _strip_timing(name: str, data: bytes) -> bytes:
    if name == "solution.json":
        doc = json.loads(data)
        doc.pop("timing")
        return json.dumps(doc, sort_keys=True).encode()
    if name == "report.json":
        doc = json.loads(data)
        for rep in doc["reports"]:
            for key in TIMING_FIELDS:
                rep.pop(key)
        return json.dumps(doc, sort_keys=True).encode()
    if name.endswith(".csv"):
        lines = data.decode().splitlines()
        header = lines[0].split(",")
        drop = {i for i, col in enumerate(header) if col in (*TIMING_FIELDS, "wall_ms")}
        keep = [",".join(c for i, c in enumerate(line.split(",")) if i not in drop)
                for line in lines]
        return "\n".join(keep).encode()
    return data


def test_criterion_9_determinism(tmp_path):
    out = tmp_path / "run"
    args = ["solve", "--fixture", "siouxfalls", "--quantile", "0.9", "--rank", "50",
            "--out", str(out)]
    assert cli_main(args) == 0
    shutil.move(out, tmp_path / "first")
    assert cli_main(args) == 0
    names = sorted(p.name for p in (tmp_path / "first").iterdir())
    assert names == sorted(p.name for p in out.iterdir())
    differing = [n for n in names
                 if _strip_timing(n, (tmp_path / "first" / n).read_bytes())
                 != _strip_timing(n, (out / n).read_bytes())]
    ok = not differing
    record_criterion(9, ok, f"{len(names)} output files compared, differing outside timing: "
                            f"{differing or 'none'}")
    assert ok
