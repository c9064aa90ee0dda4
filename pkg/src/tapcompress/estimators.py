"""Estimator-style wrappers over the reference solver, compression and AL solve.

The "data" here is an :class:`IncidenceSystem` plus its :class:`Network`
rather than a feature matrix, so these follow the scikit-learn conventions
(constructor stores hyperparameters only, ``fit`` returns ``self``, fitted
state ends in an underscore) without claiming pipeline compatibility.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import (check_network, check_path_flows, check_rank, check_system,
                          check_threshold, check_vector)
from .alm import SolverConfig, WarmStart, solve_al
from .compress import (build_compressed, eligible_flows, empty_factors, expand_solution,
                       partition_paths, proportional_start, threshold_from_quantile,
                       truncated_svd)
from .refsolve import ReferenceConfig, solve_reference_ue
from .report import link_r2


class ReferenceAssignment(BaseEstimator):
    """Uncompressed user equilibrium by path-based gradient projection."""

    def __init__(self, gap_tol: float = 1e-6, max_iters: int = 2000):
        self.gap_tol = gap_tol
        self.max_iters = max_iters

    def fit(self, system, network, x0=None):
        system = check_system(system)
        network = check_network(network, system)
        if x0 is not None:
            x0 = check_path_flows(x0, system, "x0")
        sol = solve_reference_ue(system, network,
                                 ReferenceConfig(gap_tol=self.gap_tol, max_iters=self.max_iters), x0)
        self.solution_ = sol
        self.x_ = sol.x_star
        self.link_flows_ = sol.v_star
        self.gap_ = sol.relative_gap
        self.n_iter_ = sol.iterations
        self.converged_ = sol.converged
        return self

    def predict(self):
        check_is_fitted(self, "link_flows_")
        return self.link_flows_


class PathCompressor(BaseEstimator):
    """Major/minor split plus a rank-``rank`` factorisation of the minor block.

    ``transform`` maps full path flows to ``[y, U' w]``; ``inverse_transform``
    maps back, placing ``U z`` on the minor paths.
    """

    def __init__(self, tau=None, quantile=None, rank: int = 50, svd_method: str = "auto",
                 basis: str = "positive", random_state: int = 0):
        self.tau = tau
        self.quantile = quantile
        self.rank = rank
        self.svd_method = svd_method
        self.basis = basis
        self.random_state = random_state

    def _threshold(self, system, nominal) -> float:
        check_threshold(self.tau, self.quantile)
        if self.tau is not None:
            return float(self.tau)
        return threshold_from_quantile(eligible_flows(nominal, system, self.basis), self.quantile)

    def fit(self, system, nominal):
        system = check_system(system)
        nominal = check_vector(nominal, system.n, "nominal flows", nonnegative=True)
        rank = check_rank(self.rank)
        self.tau_ = self._threshold(system, nominal)
        part = partition_paths(nominal, system, self.tau_)
        n_minor = part.minor_idx.size
        if n_minor == 0 or rank == 0:
            factors = empty_factors(n_minor, system.m)
        else:
            factors = truncated_svd(system.B[part.minor_idx], min(rank, n_minor, system.m),
                                    self.svd_method, self.random_state)
        self.system_ = system
        self.partition_ = part
        self.factors_ = factors
        self.rank_ = factors.rank
        self.n_features_in_ = system.n
        return self

    def problem(self, strategy: str = "mixed"):
        check_is_fitted(self, "factors_")
        return build_compressed(self.system_, self.partition_, self.factors_, strategy)

    def transform(self, x) -> np.ndarray:
        check_is_fitted(self, "factors_")
        x = check_vector(x, self.n_features_in_, "path flows")
        y = x[self.partition_.major_idx]
        z = self.factors_.U.T @ x[self.partition_.minor_idx]
        return np.concatenate([y, z])

    def inverse_transform(self, yz) -> np.ndarray:
        check_is_fitted(self, "factors_")
        s = self.partition_.s
        yz = check_vector(yz, s + self.rank_, "compressed variables")
        x = np.zeros(self.n_features_in_)
        x[self.partition_.major_idx] = yz[:s]
        x[self.partition_.minor_idx] = self.factors_.U @ yz[s:]
        return x


class CompressedAssignment(BaseEstimator):
    """Compress, then solve the reduced program by augmented Lagrangian."""

    def __init__(self, tau=None, quantile=None, rank: int = 50, beta: float = 10.0,
                 gamma: float = 0.25, c0_eq: float = 1e3, c0_ineq: float = 1e3,
                 tol: float = 1e-4, max_outer: int = 20, max_inner: int = 200,
                 strategy: str = "mixed", memory: int = 10, svd_method: str = "auto",
                 basis: str = "positive"):
        self.tau = tau
        self.quantile = quantile
        self.rank = rank
        self.beta = beta
        self.gamma = gamma
        self.c0_eq = c0_eq
        self.c0_ineq = c0_ineq
        self.tol = tol
        self.max_outer = max_outer
        self.max_inner = max_inner
        self.strategy = strategy
        self.memory = memory
        self.svd_method = svd_method
        self.basis = basis

    def solver_config(self) -> SolverConfig:
        return SolverConfig(beta=self.beta, gamma=self.gamma, c0=(self.c0_eq, self.c0_ineq),
                            tol=self.tol, max_outer=self.max_outer,
                            max_inner_per_outer=self.max_inner, r=check_rank(self.rank),
                            strategy=self.strategy, memory=self.memory)

    def fit(self, system, network, nominal, warm_start=None):
        """``warm_start`` is optional full path flows (and is checked for feasibility)."""
        cfg = self.solver_config()
        system = check_system(system)
        network = check_network(network, system)
        compressor = PathCompressor(self.tau, self.quantile, self.rank, self.svd_method,
                                    self.basis).fit(system, nominal)
        cp = compressor.problem(self.strategy)
        if warm_start is None:
            start = proportional_start(cp, np.asarray(nominal, dtype=float))
        else:
            start = WarmStart(check_path_flows(warm_start, system, "warm start"))
        sol = solve_al(cp, network, cfg, start)
        self.compressor_ = compressor
        self.problem_ = cp
        self.solution_ = sol
        self.x_, self.link_flows_ = expand_solution(cp, sol.y, sol.z)
        self.n_outer_ = sol.outer_iterations
        self.n_inner_ = sol.inner_iterations
        self.converged_ = sol.converged_outer
        return self

    def predict(self) -> np.ndarray:
        """Link flows of the compressed solution."""
        check_is_fitted(self, "link_flows_")
        return self.link_flows_

    def score(self, v_star) -> float:
        """Link-flow R^2 against reference flows ``v_star``."""
        v_hat = self.predict()
        return link_r2(v_hat, check_vector(v_star, v_hat.size, "reference link flows"))

