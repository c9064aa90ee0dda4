"""Major/minor path partition, truncated SVD of the minor block, compressed problem."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path as FsPath

import numpy as np
import scipy.linalg
import scipy.sparse as sp
from sklearn.utils.extmath import randomized_svd

from .pathgen import IncidenceSystem

STRATEGIES = ("direct", "chain", "factored", "mixed")
DENSE_SVD_LIMIT = 512


@dataclass(frozen=True, eq=False)
class Partition:
    tau: float
    major_idx: np.ndarray
    minor_idx: np.ndarray
    argmax_idx: np.ndarray  # per OD, the path with the largest nominal flow

    @property
    def s(self) -> int:
        return self.major_idx.size

    @property
    def n(self) -> int:
        return self.major_idx.size + self.minor_idx.size


@dataclass(frozen=True, eq=False)
class SvdFactors:
    U: np.ndarray       # (n - s) x r
    sigma: np.ndarray   # r, nonincreasing
    V: np.ndarray       # m x r
    sigma_next: float   # estimate of the largest discarded singular value
    method: str = "dense"

    @property
    def rank(self) -> int:
        return self.sigma.size


@dataclass(frozen=True, eq=False)
class CompressedProblem:
    """Operators of the reduced program in ``(y, z)``.

    Link flows are ``B1'y + Dz + v0`` and the OD constraint is
    ``A1 y + M z = d``; minor path flows are ``U z``.
    """

    A1: sp.csr_matrix
    A2: sp.csr_matrix
    B1: sp.csr_matrix
    B2: sp.csr_matrix
    factors: SvdFactors
    M: np.ndarray
    D: np.ndarray | None
    v0: np.ndarray
    d: np.ndarray
    partition: Partition
    strategy: str = "mixed"

    def __post_init__(self):
        # transposes are reused on every gradient evaluation
        object.__setattr__(self, "B1t", self.B1.T.tocsr())
        object.__setattr__(self, "B2t", self.B2.T.tocsr())
        object.__setattr__(self, "A1t", self.A1.T.tocsr())
        object.__setattr__(self, "A2t", self.A2.T.tocsr())
        object.__setattr__(self, "V_sigma", self.factors.V * self.factors.sigma)

    @property
    def s(self) -> int:
        return self.B1.shape[0]

    @property
    def r(self) -> int:
        return self.factors.rank

    @property
    def m(self) -> int:
        return self.B1.shape[1]

    @property
    def ell(self) -> int:
        return self.A1.shape[0]

    @property
    def U(self) -> np.ndarray:
        return self.factors.U

    def with_strategy(self, strategy: str) -> "CompressedProblem":
        _check_strategy(strategy)
        D = self.D
        if strategy == "direct" and D is None:
            D = np.asarray(self.B2t @ self.U)
        return CompressedProblem(self.A1, self.A2, self.B1, self.B2, self.factors, self.M, D,
                                 self.v0, self.d, self.partition, strategy)


def _check_strategy(strategy: str) -> None:
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}; expected one of {STRATEGIES}")


def od_argmax(nominal_x: np.ndarray, sys: IncidenceSystem) -> np.ndarray:
    """Per-OD index of the largest nominal flow; ties go to the lowest index."""
    if sys.ell == 0:
        return np.zeros(0, dtype=np.int64)
    starts = sys.od_start
    best = np.maximum.reduceat(nominal_x, starts)
    idx = np.where(nominal_x >= best[sys.od_of_path], np.arange(sys.n), sys.n)
    return np.minimum.reduceat(idx, starts)


def partition_paths(nominal_x: np.ndarray, sys: IncidenceSystem, tau: float) -> Partition:
    """Split paths into major and minor.

    Each OD keeps its largest-nominal-flow path; other paths are major iff
    their nominal flow exceeds ``tau``. ``tau == 0`` disables compression.
    """
    x = np.asarray(nominal_x, dtype=float)
    if x.shape != (sys.n,):
        raise ValueError(f"nominal flows have shape {x.shape}, expected ({sys.n},)")
    if tau < 0 or np.any(x < 0):
        raise ValueError("tau and nominal flows must be nonnegative")
    argmax = od_argmax(x, sys)
    major = np.ones(sys.n, dtype=bool) if tau == 0 else x > tau
    major[argmax] = True
    return Partition(float(tau), np.flatnonzero(major), np.flatnonzero(~major), argmax)


def threshold_from_quantile(nominal_x: np.ndarray, q: float) -> float:
    """``q``-quantile of the nominal flows, linear between order statistics."""
    x = np.asarray(nominal_x, dtype=float)
    if x.size == 0:
        raise ValueError("empty flow vector")
    if not 0 <= q < 1:
        raise ValueError("quantile must lie in [0, 1)")
    return float(np.quantile(x, q, method="linear"))


def eligible_flows(nominal_x: np.ndarray, sys: IncidenceSystem, basis: str = "all") -> np.ndarray:
    """Flow values a quantile threshold is taken over.

    ``all`` uses every multi-path flow, ``candidates`` drops each OD's argmax
    path (it can never be minor), ``positive`` keeps strictly positive
    flows of the candidates.
    """
    x = np.asarray(nominal_x, dtype=float)
    if basis == "all":
        return x
    mask = np.ones(x.size, dtype=bool)
    mask[od_argmax(x, sys)] = False
    if basis == "candidates":
        return x[mask]
    if basis == "positive":
        return x[mask & (x > 0)]
    raise ValueError(f"unknown quantile basis {basis!r}")


def truncated_svd(B2, r: int, method: str = "auto", random_state: int = 0,
                  n_oversamples: int = 10, n_iter: int = 4) -> SvdFactors:
    """Rank-``r`` SVD of ``B2`` plus an estimate of sigma_{r+1}.

    ``auto`` uses a dense LAPACK SVD when the smaller dimension is at most
    512 and randomized subspace iteration otherwise.
    """
    rows, cols = B2.shape
    k = min(rows, cols)
    if r < 1 or r > k:
        raise ValueError(f"rank {r} outside 1..{k} for a {rows}x{cols} matrix")
    if method == "auto":
        method = "dense" if k <= DENSE_SVD_LIMIT else "randomized"
    if method == "dense":
        dense = B2.toarray() if sp.issparse(B2) else np.asarray(B2, dtype=float)
        U, s, Vt = np.linalg.svd(dense, full_matrices=False)
    elif method == "randomized":
        n_comp = min(r + 1, k)
        U, s, Vt = randomized_svd(sp.csr_matrix(B2, dtype=float), n_comp,
                                  n_oversamples=n_oversamples, n_iter=n_iter,
                                  power_iteration_normalizer="QR", random_state=random_state)
    else:
        raise ValueError(f"unknown SVD method {method!r}")
    sigma_next = float(s[r]) if s.size > r else 0.0
    return SvdFactors(np.ascontiguousarray(U[:, :r]), s[:r].copy(),
                      np.ascontiguousarray(Vt[:r].T), sigma_next, method)


def empty_factors(n_minor: int, m: int) -> SvdFactors:
    return SvdFactors(np.zeros((n_minor, 0)), np.zeros(0), np.zeros((m, 0)), 0.0, "none")


def build_compressed(sys: IncidenceSystem, part: Partition, factors: SvdFactors,
                     strategy: str = "mixed") -> CompressedProblem:
    _check_strategy(strategy)
    if part.n != sys.n:
        raise ValueError("partition does not match the incidence system")
    if factors.U.shape[0] != part.minor_idx.size or factors.V.shape[0] != sys.m:
        raise ValueError(
            f"factor shapes {factors.U.shape}/{factors.V.shape} do not match "
            f"{part.minor_idx.size} minor paths and {sys.m} links")
    A = sys.A.tocsc()
    A1 = A[:, part.major_idx].tocsr()
    A2 = A[:, part.minor_idx].tocsr()
    B1 = sys.B[part.major_idx].tocsr()
    B2 = sys.B[part.minor_idx].tocsr()
    M = np.asarray(A2 @ factors.U)
    D = np.asarray(B2.T @ factors.U) if strategy == "direct" else None
    return CompressedProblem(A1, A2, B1, B2, factors, M, D, sys.v0, sys.d, part, strategy)


def compress_system(sys: IncidenceSystem, nominal_x: np.ndarray, tau: float, r: int,
                    strategy: str = "mixed", svd_method: str = "auto",
                    random_state: int = 0) -> CompressedProblem:
    """Partition, factor and assemble; ``r`` is capped at min(n - s, m)."""
    part = partition_paths(nominal_x, sys, tau)
    n_minor = part.minor_idx.size
    if n_minor == 0:
        factors = empty_factors(0, sys.m)
    else:
        factors = truncated_svd(sys.B[part.minor_idx], min(r, n_minor, sys.m),
                                svd_method, random_state)
    return build_compressed(sys, part, factors, strategy)


def feasibility_certificate(cp: CompressedProblem) -> tuple[np.ndarray, np.ndarray]:
    """All demand on each OD's argmax (major) path, ``z = 0``."""
    pos = np.full(cp.partition.n, -1, dtype=np.int64)
    pos[cp.partition.major_idx] = np.arange(cp.s)
    slots = pos[cp.partition.argmax_idx]
    if np.any(slots < 0):
        raise AssertionError("an OD has no major path; partition invariant violated")
    y0 = np.zeros(cp.s)
    y0[slots] = cp.d
    return y0, np.zeros(cp.r)


def proportional_start(cp: CompressedProblem, nominal_x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split each OD's demand over its major paths in proportion to nominal flow.

    ODs whose major paths carry no nominal flow fall back to the certificate.
    """
    y_cert, z0 = feasibility_certificate(cp)
    if cp.s == 0:
        return y_cert, z0
    w = np.asarray(nominal_x, dtype=float)[cp.partition.major_idx]
    od = cp.A1.indices if cp.A1.format == "csc" else cp.A1.tocsc().indices
    totals = np.bincount(od, weights=w, minlength=cp.ell)
    ok = totals[od] > 0
    y = np.where(ok, w * cp.d[od] / np.where(ok, totals[od], 1.0), y_cert)
    return y, z0


def expand_solution(cp: CompressedProblem, y: np.ndarray, z: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Full path flows and link flows under the problem's strategy."""
    x_hat = np.zeros(cp.partition.n)
    x_hat[cp.partition.major_idx] = y
    w = cp.U @ z
    x_hat[cp.partition.minor_idx] = w
    return x_hat, cp.B1t @ y + minor_link_flow(cp, z, w) + cp.v0


def minor_link_flow(cp: CompressedProblem, z: np.ndarray, w: np.ndarray | None = None) -> np.ndarray:
    """The ``Dz`` term evaluated the way the strategy prescribes."""
    if cp.r == 0:
        return np.zeros(cp.m)
    if cp.strategy == "direct":
        return cp.D @ z
    if cp.strategy == "chain":
        return cp.B2t @ (cp.U @ z if w is None else w)
    return cp.V_sigma @ z


def spectrum_rows(sigma: np.ndarray) -> list[tuple[int, float, float, float]]:
    """(rank, sigma, cumulative share of sum sigma^2, cumulative share of sum sigma)."""
    s = np.asarray(sigma, dtype=float)
    e2 = np.cumsum(s**2) / max(float(np.sum(s**2)), np.finfo(float).tiny)
    e1 = np.cumsum(s) / max(float(np.sum(s)), np.finfo(float).tiny)
    return [(i + 1, float(s[i]), float(e2[i]), float(e1[i])) for i in range(s.size)]


def spectrum_csv(sigma: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["rank", "sigma", "cum_energy_sq", "cum_energy_abs"])
    for k, s, e2, e1 in spectrum_rows(sigma):
        w.writerow([k, f"{s:.6g}", f"{e2:.6g}", f"{e1:.6g}"])
    return buf.getvalue()


def full_spectrum(B2) -> np.ndarray:
    dense = B2.toarray() if sp.issparse(B2) else np.asarray(B2, dtype=float)
    if dense.size == 0:
        return np.zeros(0)
    return scipy.linalg.svdvals(dense)


def model_to_json(cp: CompressedProblem) -> dict:
    part, f = cp.partition, cp.factors
    return {
        "schema_version": 1,
        "tau": part.tau,
        "major_idx": part.major_idx.tolist(),
        "minor_idx": part.minor_idx.tolist(),
        "argmax_idx": part.argmax_idx.tolist(),
        "rank": f.rank,
        "svd_method": f.method,
        "U": f.U.tolist(),
        "sigma": f.sigma.tolist(),
        "V": f.V.tolist(),
        "sigma_next": f.sigma_next,
    }


def model_from_json(doc: dict, sys: IncidenceSystem, strategy: str = "mixed") -> CompressedProblem:
    n_minor = len(doc["minor_idx"])
    r = int(doc["rank"])
    part = Partition(float(doc["tau"]), np.asarray(doc["major_idx"], dtype=np.int64),
                     np.asarray(doc["minor_idx"], dtype=np.int64),
                     np.asarray(doc["argmax_idx"], dtype=np.int64))
    factors = SvdFactors(np.asarray(doc["U"], dtype=float).reshape(n_minor, r),
                         np.asarray(doc["sigma"], dtype=float),
                         np.asarray(doc["V"], dtype=float).reshape(sys.m, r),
                         float(doc["sigma_next"]), doc.get("svd_method", "dense"))
    return build_compressed(sys, part, factors, strategy)


def save_model(path: str | FsPath, cp: CompressedProblem) -> None:
    FsPath(path).write_text(json.dumps(model_to_json(cp)))
