"""Path-based traffic assignment with major/minor path compression."""
from .alm import ALSolution, SolverConfig, WarmStart, al_gradients, al_value, solve_al
from .compress import (CompressedProblem, Partition, SvdFactors, compress_system,
                       feasibility_certificate, partition_paths, truncated_svd)
from .estimators import CompressedAssignment, PathCompressor, ReferenceAssignment
from .fixtures import load_fixture, make_grid
from .netio import DemandTable, Link, Network, TNTPParseError, load_network, load_trips
from .pathgen import IncidenceSystem, build_system
from .refsolve import ReferenceSolution, beckmann_objective, solve_reference_ue
from .report import bpr_gap, link_r2, sweep_ranks, sweep_thresholds

__version__ = "0.1.0"

__all__ = [
    "ALSolution", "SolverConfig", "WarmStart", "al_gradients", "al_value", "solve_al",
    "CompressedProblem", "Partition", "SvdFactors", "compress_system",
    "feasibility_certificate", "partition_paths", "truncated_svd",
    "CompressedAssignment", "PathCompressor", "ReferenceAssignment",
    "load_fixture", "make_grid",
    "DemandTable", "Link", "Network", "TNTPParseError", "load_network", "load_trips",
    "IncidenceSystem", "build_system",
    "ReferenceSolution", "beckmann_objective", "solve_reference_ue",
    "bpr_gap", "link_r2", "sweep_ranks", "sweep_thresholds",
]
