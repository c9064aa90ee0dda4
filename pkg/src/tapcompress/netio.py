"""TNTP network and trip-table I/O.

Node and zone ids are 1-based in files and 0-based in memory.
"""
from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import NamedTuple

import numpy as np

# init node, term node, capacity, length, free flow time, b, power, speed, toll, link type
LINK_FIELDS = 10


class TNTPParseError(ValueError):
    """Raised for malformed TNTP content; carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class Link:
    id: int
    tail: int
    head: int
    capacity: float
    free_flow_time: float
    bpr_alpha: float = 0.15
    bpr_power: float = 4.0
    length: float = 0.0
    speed: float = 0.0
    toll: float = 0.0
    link_type: int = 1

    def __post_init__(self):
        if not self.capacity > 0:
            raise ValueError(f"link {self.id}: capacity must be positive")
        if self.free_flow_time < 0:
            raise ValueError(f"link {self.id}: free flow time must be nonnegative")
        if self.bpr_power < 1:
            raise ValueError(f"link {self.id}: BPR power must be >= 1")
        if self.tail == self.head:
            raise ValueError(f"link {self.id}: self loop at node {self.tail}")


@dataclass(frozen=True)
class Network:
    node_count: int
    links: tuple[Link, ...]
    first_thru_node: int = 0
    zone_count: int | None = None

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        for i, link in enumerate(self.links):
            if link.id != i:
                raise ValueError(f"link indices must be dense, got {link.id} at {i}")
            if not (0 <= link.tail < self.node_count and 0 <= link.head < self.node_count):
                raise ValueError(f"link {i} references a node outside 0..{self.node_count - 1}")

    @property
    def m(self) -> int:
        return len(self.links)

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.node_count)]
        for link in self.links:
            out[link.tail].append(link.id)
        return tuple(tuple(ids) for ids in out)

    @cached_property
    def tails(self) -> np.ndarray:
        return np.array([lk.tail for lk in self.links], dtype=np.int64)

    @cached_property
    def heads(self) -> np.ndarray:
        return np.array([lk.head for lk in self.links], dtype=np.int64)

    @cached_property
    def free_flow_time(self) -> np.ndarray:
        return np.array([lk.free_flow_time for lk in self.links], dtype=float)

    @cached_property
    def capacity(self) -> np.ndarray:
        return np.array([lk.capacity for lk in self.links], dtype=float)

    @cached_property
    def bpr_alpha(self) -> np.ndarray:
        return np.array([lk.bpr_alpha for lk in self.links], dtype=float)

    @cached_property
    def bpr_power(self) -> np.ndarray:
        return np.array([lk.bpr_power for lk in self.links], dtype=float)


class ODPair(NamedTuple):
    origin: int
    destination: int
    demand: float


@dataclass(frozen=True)
class DemandTable:
    od_pairs: tuple[ODPair, ...] = field(default_factory=tuple)
    zone_count: int | None = None

    def __post_init__(self):
        pairs = tuple(ODPair(int(o), int(d), float(q)) for o, d, q in self.od_pairs)
        object.__setattr__(self, "od_pairs", pairs)
        seen = set()
        for o, d, q in pairs:
            if q < 0:
                raise ValueError(f"negative demand for OD ({o}, {d})")
            if o == d:
                raise ValueError(f"intrazonal OD pair ({o}, {d})")
            if (o, d) in seen:
                raise ValueError(f"duplicate OD pair ({o}, {d})")
            seen.add((o, d))

    def __len__(self) -> int:
        return len(self.od_pairs)

    @property
    def demand(self) -> np.ndarray:
        return np.array([p.demand for p in self.od_pairs], dtype=float)

    @property
    def total(self) -> float:
        return float(sum(p.demand for p in self.od_pairs))


_META_RE = re.compile(r"^\s*<([^>]+)>(.*)$")


def _strip_comment(line: str) -> str:
    pos = line.find("~")
    return line if pos < 0 else line[:pos]


def _read_metadata(lines: list[str], required: tuple[str, ...]) -> tuple[dict[str, str], int]:
    meta: dict[str, str] = {}
    for i, raw in enumerate(lines):
        m = _META_RE.match(raw)
        if m is None:
            if raw.strip() == "" or raw.lstrip().startswith("~"):
                continue
            raise TNTPParseError(f"expected metadata tag, got {raw.strip()!r}", i + 1)
        key = m.group(1).strip().upper()
        if key == "END OF METADATA":
            missing = [k for k in required if k not in meta]
            if missing:
                raise TNTPParseError(f"malformed header: missing {', '.join(missing)}", i + 1)
            return meta, i + 1
        meta[key] = _strip_comment(m.group(2)).strip()
    raise TNTPParseError("malformed header: no <END OF METADATA>", len(lines))


def _meta_int(meta: dict[str, str], key: str, line: int) -> int:
    try:
        return int(float(meta[key]))
    except ValueError:
        raise TNTPParseError(f"non-numeric value for <{key}>: {meta[key]!r}", line) from None


def parse_network(text: str) -> Network:
    """Parse TNTP network file content into a :class:`Network`."""
    lines = text.splitlines()
    meta, start = _read_metadata(lines, ("NUMBER OF NODES", "NUMBER OF LINKS"))
    node_count = _meta_int(meta, "NUMBER OF NODES", start)
    declared = _meta_int(meta, "NUMBER OF LINKS", start)
    first_thru = _meta_int(meta, "FIRST THRU NODE", start) if "FIRST THRU NODE" in meta else 1
    zones = _meta_int(meta, "NUMBER OF ZONES", start) if "NUMBER OF ZONES" in meta else None

    links: list[Link] = []
    for lineno, raw in enumerate(lines[start:], start=start + 1):
        body = _strip_comment(raw).strip()
        if not body:
            continue
        tokens = [t for t in body.replace(";", " ").split()]
        if not tokens:
            continue
        if len(tokens) != LINK_FIELDS:
            raise TNTPParseError(
                f"link row has {len(tokens)} fields, expected {LINK_FIELDS}", lineno)
        try:
            tail, head = int(tokens[0]), int(tokens[1])
            cap, length, fft, b, power, speed, toll = (float(t) for t in tokens[2:9])
            ltype = int(float(tokens[9]))
        except ValueError:
            raise TNTPParseError(f"non-numeric field in {body!r}", lineno) from None
        if not (1 <= tail <= node_count and 1 <= head <= node_count):
            raise TNTPParseError(f"node id outside 1..{node_count}", lineno)
        try:
            links.append(Link(len(links), tail - 1, head - 1, cap, fft, b, power,
                              length, speed, toll, ltype))
        except ValueError as exc:
            raise TNTPParseError(str(exc), lineno) from None

    if len(links) != declared:
        raise TNTPParseError(
            f"count mismatch: <NUMBER OF LINKS> is {declared}, parsed {len(links)}")
    return Network(node_count, tuple(links), first_thru - 1, zones)


_ENTRY_RE = re.compile(r"^\s*(\S+)\s*:\s*(\S*)\s*$")


def parse_trips(text: str) -> DemandTable:
    """Parse TNTP trips content. Zero-demand entries are dropped."""
    lines = text.splitlines()
    meta: dict[str, str] = {}
    start = 0
    if any(_META_RE.match(ln) for ln in lines[:50]):
        meta, start = _read_metadata(lines, ())
    zones = _meta_int(meta, "NUMBER OF ZONES", start) if "NUMBER OF ZONES" in meta else None

    pairs: dict[tuple[int, int], float] = {}
    origin: int | None = None
    for lineno, raw in enumerate(lines[start:], start=start + 1):
        body = _strip_comment(raw).strip()
        if not body:
            continue
        if body.lower().startswith("origin"):
            parts = body.split()
            if len(parts) != 2:
                raise TNTPParseError(f"malformed Origin block header {body!r}", lineno)
            try:
                origin = int(parts[1])
            except ValueError:
                raise TNTPParseError(f"malformed Origin block header {body!r}", lineno) from None
            continue
        if origin is None:
            raise TNTPParseError("malformed Origin block: entry before any Origin", lineno)
        for chunk in body.split(";"):
            if not chunk.strip():
                continue
            m = _ENTRY_RE.match(chunk)
            if m is None:
                raise TNTPParseError(f"malformed entry {chunk.strip()!r}", lineno)
            if m.group(2) == "":
                raise TNTPParseError(f"destination {m.group(1)} without demand", lineno)
            try:
                dest, q = int(m.group(1)), float(m.group(2))
            except ValueError:
                raise TNTPParseError(f"non-numeric entry {chunk.strip()!r}", lineno) from None
            if q < 0:
                raise TNTPParseError(f"negative demand {q} for ({origin}, {dest})", lineno)
            if q == 0 or dest == origin:
                continue
            key = (origin - 1, dest - 1)
            if key in pairs:
                raise TNTPParseError(f"duplicate OD pair ({origin}, {dest})", lineno)
            pairs[key] = q
    return DemandTable(tuple(ODPair(o, d, q) for (o, d), q in pairs.items()), zones)


def validate_network(net: Network, demand: DemandTable) -> list[str]:
    """Return one diagnostic per OD pair whose destination is unreachable."""
    diagnostics = []
    reach: dict[int, np.ndarray] = {}
    for o, d, _ in demand.od_pairs:
        if not (0 <= o < net.node_count and 0 <= d < net.node_count):
            diagnostics.append(f"unreachable: OD ({o + 1}, {d + 1}) references an unknown node")
            continue
        if o not in reach:
            reach[o] = _reachable(net, o)
        if not reach[o][d]:
            diagnostics.append(f"unreachable: no directed path from {o + 1} to {d + 1}")
    return diagnostics


def _reachable(net: Network, source: int) -> np.ndarray:
    seen = np.zeros(net.node_count, dtype=bool)
    seen[source] = True
    queue = deque([source])
    while queue:
        u = queue.popleft()
        if u != source and u < net.first_thru_node:
            continue
        for lid in net.adjacency[u]:
            h = net.links[lid].head
            if not seen[h]:
                seen[h] = True
                queue.append(h)
    return seen


def format_network(net: Network) -> str:
    out = []
    if net.zone_count is not None:
        out.append(f"<NUMBER OF ZONES> {net.zone_count}")
    out += [
        f"<NUMBER OF NODES> {net.node_count}",
        f"<FIRST THRU NODE> {net.first_thru_node + 1}",
        f"<NUMBER OF LINKS> {net.m}",
        "<END OF METADATA>",
        "",
        "~\tinit_node\tterm_node\tcapacity\tlength\tfree_flow_time\tb\tpower\tspeed\ttoll\tlink_type\t;",
    ]
    for lk in net.links:
        vals = (lk.capacity, lk.length, lk.free_flow_time, lk.bpr_alpha, lk.bpr_power,
                lk.speed, lk.toll)
        out.append("\t" + "\t".join([str(lk.tail + 1), str(lk.head + 1)]
                                    + [repr(float(v)) for v in vals]
                                    + [str(lk.link_type), ";"]))
    return "\n".join(out) + "\n"


def format_trips(demand: DemandTable) -> str:
    zones = demand.zone_count
    if zones is None:
        zones = max((max(o, d) + 1 for o, d, _ in demand.od_pairs), default=0)
    out = [f"<NUMBER OF ZONES> {zones}", f"<TOTAL OD FLOW> {demand.total!r}",
           "<END OF METADATA>", ""]
    by_origin: dict[int, list[ODPair]] = {}
    for p in demand.od_pairs:
        by_origin.setdefault(p.origin, []).append(p)
    for o in sorted(by_origin):
        out.append(f"Origin {o + 1}")
        out.append(" ".join(f"{p.destination + 1} : {p.demand!r};" for p in by_origin[o]))
        out.append("")
    return "\n".join(out)


def load_network(path: str | Path) -> Network:
    return parse_network(Path(path).read_text())


def load_trips(path: str | Path) -> DemandTable:
    return parse_trips(Path(path).read_text())
