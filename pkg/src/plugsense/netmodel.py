"""Radial feeder data model and the embedded IEEE 37-node test feeder."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np

from .errors import InvalidGridError, UnknownBusError

SLACK = "slack"
LOAD = "load"


@dataclass(frozen=True)
class LineParams:
    r_ohm_per_km: float = 0.208
    x_ohm_per_km: float = 0.080
    max_i_a: float = 270.0

    def __post_init__(self):
        if not self.r_ohm_per_km > 0:
            raise InvalidGridError(f"r_ohm_per_km must be > 0, got {self.r_ohm_per_km}")
        if not self.x_ohm_per_km >= 0:
            raise InvalidGridError(f"x_ohm_per_km must be >= 0, got {self.x_ohm_per_km}")


# NAYY 4x150 SE, 0.6/1 kV
NAYY_4X150_SE = LineParams()


@dataclass(frozen=True)
class Bus:
    id: str
    kind: str = LOAD


@dataclass(frozen=True)
class Line:
    from_bus: str
    to_bus: str
    length_m: float
    params: LineParams = NAYY_4X150_SE

    @property
    def impedance(self) -> complex:
        km = self.length_m / 1000.0
        return complex(self.params.r_ohm_per_km * km, self.params.x_ohm_per_km * km)


@dataclass(frozen=True)
class Violation:
    invariant: str
    element: str
    message: str

    def __str__(self):
        return f"{self.invariant}: {self.element}: {self.message}"


@dataclass(frozen=True)
class Topology:
    """Slack-rooted view of a radial grid.

    ``order`` lists buses breadth-first from the slack, so every bus appears
    after its parent. ``parent_line[b]`` is the line feeding ``b``.
    """

    slack: str
    order: tuple[str, ...]
    parent: dict[str, str]
    parent_line: dict[str, Line]
    children: dict[str, tuple[str, ...]]


@dataclass(frozen=True, eq=False)
class BranchArrays:
    index: dict[str, int]
    downstream: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class GridModel:
    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    slack_voltage_v: float = 230.0
    name: str = field(default="grid", compare=False)

    @cached_property
    def bus_ids(self) -> frozenset[str]:
        return frozenset(b.id for b in self.buses)

    @cached_property
    def slack(self) -> str:
        slacks = [b.id for b in self.buses if b.kind == SLACK]
        if len(slacks) != 1:
            raise InvalidGridError(f"expected exactly one slack bus, found {len(slacks)}")
        return slacks[0]

    @cached_property
    def topology(self) -> Topology:
        problems = validate(self)
        if problems:
            raise InvalidGridError("; ".join(str(p) for p in problems))
        return _walk(self)

    @cached_property
    def branch_arrays(self) -> BranchArrays:
        """Dense arrays used by the sweep solver, indexed in breadth-first order."""
        topo = self.topology
        index = {b: i for i, b in enumerate(topo.order)}
        n = len(topo.order)
        # row i-1 is the branch feeding bus i; downstream[i-1, k] = 1 if bus k sits behind it
        downstream = np.zeros((n - 1, n))
        z = np.zeros(n - 1, dtype=complex)
        for bus in reversed(topo.order[1:]):
            i = index[bus]
            downstream[i - 1, i] = 1.0
            for c in topo.children[bus]:
                downstream[i - 1] += downstream[index[c] - 1]
            z[i - 1] = topo.parent_line[bus].impedance
        return BranchArrays(index=index, downstream=downstream, z=z)

    def load_buses(self) -> list[str]:
        """Non-slack buses in breadth-first order."""
        return list(self.topology.order[1:])

    def require(self, bus: str) -> None:
        if bus not in self.bus_ids:
            raise UnknownBusError(bus)

    def path(self, bus: str) -> list[str]:
        """Buses from the slack down to ``bus``, both ends included."""
        self.require(bus)
        topo = self.topology
        out = [bus]
        while out[-1] != topo.slack:
            out.append(topo.parent[out[-1]])
        return out[::-1]

    def subtree(self, bus: str) -> set[str]:
        self.require(bus)
        children = self.topology.children
        seen = {bus}
        stack = [bus]
        while stack:
            for c in children[stack.pop()]:
                seen.add(c)
                stack.append(c)
        return seen


def _walk(grid: GridModel) -> Topology:
    adj: dict[str, list[Line]] = {b.id: [] for b in grid.buses}
    for line in grid.lines:
        adj[line.from_bus].append(line)
        adj[line.to_bus].append(line)
    slack = grid.slack
    parent: dict[str, str] = {}
    parent_line: dict[str, Line] = {}
    children: dict[str, list[str]] = {b.id: [] for b in grid.buses}
    order = [slack]
    queue = deque([slack])
    seen = {slack}
    while queue:
        u = queue.popleft()
        for line in adj[u]:
            v = line.to_bus if line.from_bus == u else line.from_bus
            if v in seen:
                continue
            seen.add(v)
            parent[v] = u
            parent_line[v] = line
            children[u].append(v)
            order.append(v)
            queue.append(v)
    return Topology(
        slack=slack,
        order=tuple(order),
        parent=parent,
        parent_line=parent_line,
        children={k: tuple(v) for k, v in children.items()},
    )


def validate(grid: GridModel) -> list[Violation]:
    """Check every GridModel invariant; an empty list means the grid is usable."""
    out: list[Violation] = []
    ids = [b.id for b in grid.buses]
    seen: set[str] = set()
    for bid in ids:
        if bid in seen:
            out.append(Violation("unique-bus-ids", bid, "bus id appears more than once"))
        seen.add(bid)

    slacks = [b.id for b in grid.buses if b.kind == SLACK]
    if len(slacks) != 1:
        out.append(
            Violation(
                "slack-uniqueness",
                ",".join(slacks) or "<none>",
                f"expected exactly one slack bus, found {len(slacks)}",
            )
        )
    for b in grid.buses:
        if b.kind not in (SLACK, LOAD):
            out.append(Violation("bus-kind", b.id, f"unknown kind {b.kind!r}"))

    if not grid.slack_voltage_v > 0:
        out.append(Violation("slack-voltage", "grid", f"slack_voltage_v must be > 0, got {grid.slack_voltage_v}"))

    good_lines = []
    for line in grid.lines:
        name = f"{line.from_bus}-{line.to_bus}"
        ok = True
        for end in (line.from_bus, line.to_bus):
            if end not in seen:
                out.append(Violation("line-endpoints", name, f"endpoint {end!r} is not a bus"))
                ok = False
        if line.from_bus == line.to_bus:
            out.append(Violation("radiality", name, "self-loop"))
            ok = False
        if not line.length_m > 0:
            out.append(Violation("line-length", name, f"length_m must be > 0, got {line.length_m}"))
        if ok:
            good_lines.append(line)

    if len(grid.lines) != len(seen) - 1:
        out.append(
            Violation(
                "radiality",
                "grid",
                f"radial grid needs |lines| = |buses| - 1, got {len(grid.lines)} lines for {len(seen)} buses",
            )
        )

    # union-find over the valid lines catches cycles and disconnected islands
    root = {b: b for b in seen}

    def find(x):
        while root[x] != x:
            root[x] = root[root[x]]
            x = root[x]
        return x

    for line in good_lines:
        a, b = find(line.from_bus), find(line.to_bus)
        if a == b:
            out.append(Violation("radiality", f"{line.from_bus}-{line.to_bus}", "line closes a cycle"))
        else:
            root[a] = b
    components = {find(b) for b in seen}
    if len(components) > 1:
        out.append(Violation("connectivity", "grid", f"grid has {len(components)} disconnected parts"))
    return out


def path_impedance(grid: GridModel, bus: str) -> complex:
    """Series impedance of the unique slack-to-``bus`` path, in ohms."""
    grid.require(bus)
    topo = grid.topology
    z = 0j
    node = bus
    while node != topo.slack:
        z += topo.parent_line[node].impedance
        node = topo.parent[node]
    return z


# IEEE 37-node test feeder line segments (from, to); 799 is the substation.
# 799-701 is the regulator position and 709-775 the XFM-1 branch in the
# original feeder; both are kept as ordinary cable segments here.
IEEE37_SEGMENTS: tuple[tuple[str, str], ...] = (
    ("799", "701"),
    ("701", "702"),
    ("702", "705"),
    ("702", "713"),
    ("702", "703"),
    ("703", "727"),
    ("703", "730"),
    ("704", "714"),
    ("704", "720"),
    ("705", "742"),
    ("705", "712"),
    ("706", "725"),
    ("707", "724"),
    ("707", "722"),
    ("708", "733"),
    ("708", "732"),
    ("709", "731"),
    ("709", "708"),
    ("709", "775"),
    ("710", "735"),
    ("710", "736"),
    ("711", "741"),
    ("711", "740"),
    ("713", "704"),
    ("714", "718"),
    ("720", "707"),
    ("720", "706"),
    ("727", "744"),
    ("730", "709"),
    ("733", "734"),
    ("734", "737"),
    ("734", "710"),
    ("737", "738"),
    ("738", "711"),
    ("744", "728"),
    ("744", "729"),
)
IEEE37_SLACK = "799"


def build_ieee37(
    spacing_m: float = 40.0,
    params: LineParams = NAYY_4X150_SE,
    slack_voltage_v: float = 230.0,
) -> GridModel:
    if not spacing_m > 0:
        raise InvalidGridError(f"spacing_m must be > 0, got {spacing_m}")
    ids: list[str] = []
    for a, b in IEEE37_SEGMENTS:
        for n in (a, b):
            if n not in ids:
                ids.append(n)
    buses = tuple(Bus(n, SLACK if n == IEEE37_SLACK else LOAD) for n in sorted(ids))
    lines = tuple(Line(a, b, float(spacing_m), params) for a, b in IEEE37_SEGMENTS)
    return GridModel(buses, lines, float(slack_voltage_v), name="ieee37")


def make_grid(
    slack: str,
    edges: Iterable[tuple[str, str, float]],
    params: LineParams = NAYY_4X150_SE,
    slack_voltage_v: float = 230.0,
) -> GridModel:
    """Build a grid from ``(from, to, length_m)`` triples."""
    edges = list(edges)
    ids = {slack}
    for a, b, _ in edges:
        ids.update((a, b))
    buses = tuple(Bus(n, SLACK if n == slack else LOAD) for n in sorted(ids))
    lines = tuple(Line(a, b, float(length), params) for a, b, length in edges)
    return GridModel(buses, lines, float(slack_voltage_v))
