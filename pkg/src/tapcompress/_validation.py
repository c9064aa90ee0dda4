"""Input checks shared by the estimators and the CLI."""
from __future__ import annotations

import numpy as np

from .netio import Network
from .pathgen import IncidenceSystem


def check_system(system) -> IncidenceSystem:
    if not isinstance(system, IncidenceSystem):
        raise TypeError(f"expected an IncidenceSystem, got {type(system).__name__}")
    if system.n == 0 or system.ell == 0:
        raise ValueError("incidence system has no multi-path OD pairs")
    return system


def check_network(network, system: IncidenceSystem | None = None) -> Network:
    if not isinstance(network, Network):
        raise TypeError(f"expected a Network, got {type(network).__name__}")
    if system is not None and network.m != system.m:
        raise ValueError(f"network has {network.m} links but the system has {system.m}")
    return network


def check_vector(values, size: int, name: str, nonnegative: bool = False) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.ndim != 1 or arr.size != size:
        raise ValueError(f"{name} must be a vector of length {size}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    if nonnegative and np.any(arr < 0):
        raise ValueError(f"{name} must be nonnegative")
    return arr


def check_path_flows(x, system: IncidenceSystem, name: str = "path flows",
                     atol: float = 1e-6) -> np.ndarray:
    """Nonnegative path flows that meet every OD demand up to ``atol`` (relative)."""
    x = check_vector(x, system.n, name, nonnegative=True)
    served = system.A @ x
    bad = np.abs(served - system.d) > atol * np.maximum(system.d, 1.0)
    if np.any(bad):
        od = int(np.flatnonzero(bad)[0])
        raise ValueError(f"{name} violate demand of OD {od}: {served[od]:.6g} != {system.d[od]:.6g}")
    return x


def check_threshold(tau, quantile) -> None:
    if (tau is None) == (quantile is None):
        raise ValueError("give exactly one of tau and quantile")
    if tau is not None and not tau >= 0:
        raise ValueError("tau must be nonnegative")
    if quantile is not None and not 0 <= quantile < 1:
        raise ValueError("quantile must lie in [0, 1)")


def check_rank(rank) -> int:
    if isinstance(rank, bool) or int(rank) != rank or rank < 0:
        raise ValueError(f"rank must be a nonnegative integer, got {rank!r}")
    return int(rank)
