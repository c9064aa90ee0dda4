"""Path sets and the sparse OD-path / path-link incidence system."""
from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from pathlib import Path as FsPath
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .netio import DemandTable, Network, ODPair

DEFAULT_K = 8


@dataclass(frozen=True)
class Path:
    od_index: int
    link_ids: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "link_ids", tuple(int(i) for i in self.link_ids))


@dataclass(frozen=True, eq=False)
class IncidenceSystem:
    """Multi-path OD system: ``v = B'x + v0`` and ``Ax = d``.

    ``A`` is ell x n, ``B`` is n x m, both CSR with unit entries. Paths are
    stored grouped by OD, so ``od_of_path`` is nondecreasing.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    v0: np.ndarray
    d: np.ndarray
    paths: tuple[Path, ...]
    od_of_path: np.ndarray
    od_pairs: tuple[ODPair, ...] = ()
    singleton_paths: tuple[Path, ...] = field(default=())

    @property
    def n(self) -> int:
        return self.B.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def ell(self) -> int:
        return self.A.shape[0]

    @property
    def od_start(self) -> np.ndarray:
        """Index of the first path of each OD (length ell)."""
        return np.searchsorted(self.od_of_path, np.arange(self.ell))

    def link_flows(self, x: np.ndarray) -> np.ndarray:
        return self.B.T @ x + self.v0


def _path_nodes(net: Network, origin: int, links: Sequence[int]) -> list[int]:
    nodes = [origin]
    for lid in links:
        nodes.append(net.links[lid].head)
    return nodes


def _shortest(net, cost, source, target, banned_links, banned_nodes):
    dist = {source: 0.0}
    pred: dict[int, int] = {}
    heap = [(0.0, source)]
    done = set()
    while heap:
        du, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == target:
            break
        # zone nodes below the first through node only start or end paths
        if u != source and u < net.first_thru_node:
            continue
        for lid in net.adjacency[u]:
            if lid in banned_links:
                continue
            h = net.links[lid].head
            if h in banned_nodes or h in done:
                continue
            nd = du + cost[lid]
            if nd < dist.get(h, np.inf):
                dist[h] = nd
                pred[h] = lid
                heapq.heappush(heap, (nd, h))
    if target not in done:
        return None
    links = []
    u = target
    while u != source:
        lid = pred[u]
        links.append(lid)
        u = net.links[lid].tail
    links.reverse()
    return dist[target], tuple(links)


def k_shortest_paths(net: Network, origin: int, destination: int, k: int,
                     cost: np.ndarray | None = None) -> list[tuple[float, tuple[int, ...]]]:
    """Yen's k loopless shortest paths over links (parallel links allowed)."""
    if cost is None:
        cost = net.free_flow_time
    first = _shortest(net, cost, origin, destination, frozenset(), frozenset())
    if first is None:
        return []
    found = [first]
    seen = {frozenset(first[1])}
    candidates: list[tuple[float, tuple[int, ...]]] = []
    while len(found) < k:
        _, prev = found[-1]
        nodes = _path_nodes(net, origin, prev)
        for i in range(len(prev)):
            root = prev[:i]
            banned_links = {p[i] for _, p in found if len(p) > i and p[:i] == root}
            spur = _shortest(net, cost, nodes[i], destination,
                             banned_links, frozenset(nodes[:i]))
            if spur is None:
                continue
            links = root + spur[1]
            key = frozenset(links)
            if key in seen:
                continue
            seen.add(key)
            heapq.heappush(candidates, (float(cost[list(links)].sum()), links))
        if not candidates:
            break
        found.append(heapq.heappop(candidates))
    return found


def build_path_set(net: Network, demand: DemandTable, k: int = DEFAULT_K) -> list[Path]:
    """Up to ``k`` free-flow shortest loopless paths for every OD pair."""
    if k < 1:
        raise ValueError("k must be at least 1")
    paths = []
    for idx, (o, d, _) in enumerate(demand.od_pairs):
        ranked = k_shortest_paths(net, o, d, k)
        if not ranked:
            raise ValueError(f"OD ({o + 1}, {d + 1}) is unreachable")
        paths.extend(Path(idx, links) for _, links in ranked)
    return paths


def split_singletons(paths: Sequence[Path], demand: DemandTable, n_links: int
                     ) -> tuple[list[Path], DemandTable, np.ndarray, list[Path]]:
    """Fix single-path ODs onto the offset flow ``v0``.

    Returns the multi-path paths (re-indexed against the returned demand
    table), that table, ``v0`` and the singleton paths (indexed against the
    original table).
    """
    by_od: dict[int, list[Path]] = {}
    for p in paths:
        by_od.setdefault(p.od_index, []).append(p)
    v0 = np.zeros(n_links)
    multi_paths: list[Path] = []
    multi_pairs: list[ODPair] = []
    singletons: list[Path] = []
    for idx, pair in enumerate(demand.od_pairs):
        group = by_od.get(idx, [])
        if len(group) == 1:
            np.add.at(v0, list(group[0].link_ids), pair.demand)
            singletons.append(group[0])
        elif len(group) > 1:
            new_idx = len(multi_pairs)
            multi_pairs.append(pair)
            multi_paths.extend(Path(new_idx, p.link_ids) for p in group)
    return multi_paths, DemandTable(tuple(multi_pairs), demand.zone_count), v0, singletons


def assemble_incidence(paths: Sequence[Path], demand: DemandTable, n_links: int,
                       v0: np.ndarray | None = None,
                       singleton_paths: Sequence[Path] = ()) -> IncidenceSystem:
    ell = len(demand)
    order = sorted(range(len(paths)), key=lambda i: (paths[i].od_index, i))
    paths = [paths[i] for i in order]
    n = len(paths)
    od_of_path = np.array([p.od_index for p in paths], dtype=np.int64)
    if n and (od_of_path.min() < 0 or od_of_path.max() >= ell):
        raise ValueError("path references an unknown OD pair")
    rows, cols = [], []
    for i, p in enumerate(paths):
        if any(lid < 0 or lid >= n_links for lid in p.link_ids):
            raise ValueError(f"path {i} references an unknown link")
        rows.extend([i] * len(p.link_ids))
        cols.extend(p.link_ids)
    B = sp.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n_links))
    A = sp.csr_matrix((np.ones(n), (od_of_path, np.arange(n))), shape=(ell, n))
    if v0 is None:
        v0 = np.zeros(n_links)
    return IncidenceSystem(A, B, np.asarray(v0, dtype=float), demand.demand, tuple(paths),
                           od_of_path, demand.od_pairs, tuple(singleton_paths))


def build_system(net: Network, demand: DemandTable, k: int = DEFAULT_K,
                 paths: Sequence[Path] | None = None) -> IncidenceSystem:
    """Path generation, singleton split and assembly in one call."""
    if paths is None:
        paths = build_path_set(net, demand, k)
    multi, multi_demand, v0, singles = split_singletons(paths, demand, net.m)
    return assemble_incidence(multi, multi_demand, net.m, v0, singles)


def paths_to_json(paths: Sequence[Path], demand: DemandTable) -> list[dict]:
    """Node ids are written 1-based, link ids as 0-based file-order indices."""
    out = []
    for p in paths:
        o, d, _ = demand.od_pairs[p.od_index]
        out.append({"od": [o + 1, d + 1], "links": list(p.link_ids)})
    return out


def paths_from_json(doc: list[dict], demand: DemandTable) -> list[Path]:
    index = {(o, d): i for i, (o, d, _) in enumerate(demand.od_pairs)}
    paths = []
    for entry in doc:
        key = (entry["od"][0] - 1, entry["od"][1] - 1)
        if key not in index:
            raise ValueError(f"path for OD {entry['od']} not in the demand table")
        paths.append(Path(index[key], tuple(entry["links"])))
    return paths


def save_paths(path: str | FsPath, paths: Sequence[Path], demand: DemandTable) -> None:
    FsPath(path).write_text(json.dumps(paths_to_json(paths, demand)))


def load_paths(path: str | FsPath, demand: DemandTable) -> list[Path]:
    return paths_from_json(json.loads(FsPath(path).read_text()), demand)
