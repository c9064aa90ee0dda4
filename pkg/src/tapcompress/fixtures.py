"""Bundled desk-scale networks and a grid generator."""
from __future__ import annotations

from importlib import resources
from pathlib import Path

from .netio import DemandTable, Link, Network, ODPair, parse_network, parse_trips

FIXTURES = {
    "braess": ("braess_net.tntp", "braess_trips.tntp"),
    "grid9": ("grid9_net.tntp", "grid9_trips.tntp"),
    "siouxfalls": ("SiouxFalls_net.tntp", "SiouxFalls_trips.tntp"),
}


def fixture_paths(name: str) -> tuple[Path, Path]:
    try:
        net_file, trips_file = FIXTURES[name]
    except KeyError:
        raise ValueError(f"unknown fixture {name!r}; choose from {sorted(FIXTURES)}") from None
    root = resources.files("tapcompress") / "data"
    return Path(str(root / net_file)), Path(str(root / trips_file))


def load_fixture(name: str) -> tuple[Network, DemandTable]:
    net_path, trips_path = fixture_paths(name)
    return parse_network(net_path.read_text()), parse_trips(trips_path.read_text())


def make_grid(rows: int = 3, cols: int = 3, parallel: int = 1) -> tuple[Network, DemandTable]:
    """Bidirectional grid with `parallel` copies of every directed link.

    Link attributes and demands are deterministic functions of the node
    indices, so repeated calls give identical instances. Every ordered node
    pair carries demand.
    """
    links: list[Link] = []

    def node(i, j):
        return i * cols + j

    edges = []
    for i in range(rows):
        for j in range(cols):
            if j + 1 < cols:
                edges.append((node(i, j), node(i, j + 1)))
            if i + 1 < rows:
                edges.append((node(i, j), node(i + 1, j)))
    for a, b in edges:
        for tail, head in ((a, b), (b, a)):
            for lane in range(parallel):
                fft = 1.0 + 0.5 * ((3 * tail + 5 * head + 2 * lane) % 5)
                cap = 60.0 + 20.0 * ((tail + 2 * head + lane) % 4)
                links.append(Link(len(links), tail, head, cap, fft, 0.15, 4.0, length=fft))
    n = rows * cols
    net = Network(n, tuple(links), 0, n)
    pairs = [ODPair(o, d, float(10 + (7 * o + 3 * d) % 25))
             for o in range(n) for d in range(n) if o != d]
    return net, DemandTable(tuple(pairs), n)
