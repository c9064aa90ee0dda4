from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pytest

from tapcompress.fixtures import load_fixture
from tapcompress.netio import DemandTable, Link, Network, ODPair
from tapcompress.pathgen import build_system
from tapcompress.refsolve import solve_reference_ue
from tapcompress.report import Instance


@dataclass
class Case:
    name: str
    net: Network
    demand: DemandTable
    system: object
    reference: object

    @property
    def instance(self) -> Instance:
        return Instance(self.net, self.system, self.reference, self.demand.total)


_CACHE: dict[tuple[str, int], Case] = {}


def get_case(name: str, k: int = 8) -> Case:
    key = (name, k)
    if key not in _CACHE:
        net, demand = load_fixture(name)
        system = build_system(net, demand, k)
        _CACHE[key] = Case(name, net, demand, system, solve_reference_ue(system, net))
    return _CACHE[key]


@pytest.fixture(scope="session")
def braess() -> Case:
    return get_case("braess")


@pytest.fixture(scope="session")
def grid9() -> Case:
    return get_case("grid9")


@pytest.fixture(scope="session")
def sioux() -> Case:
    return get_case("siouxfalls")


@pytest.fixture(params=["braess", "grid9", "siouxfalls"])
def any_case(request) -> Case:
    return get_case(request.param)


def parallel_net(n_parallel: int, fft=1.0, cap=2.0, alpha=0.15, power=4.0) -> Network:
    links = tuple(Link(i, 0, 1, cap, fft, alpha, power) for i in range(n_parallel))
    return Network(2, links, 0, 2)


def single_od(demand: float, origin=0, dest=1) -> DemandTable:
    return DemandTable((ODPair(origin, dest, demand),))


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
