"""Network model: parsed cases, topologies, and sensor placement.

The static model is a bus/branch network parsed from a MATPOWER-style
``.m`` case (baseMVA, bus, gen, branch tables) or an equivalent JSON
form.  The dynamic part is a :class:`Topology` — the set of branches
active during one switching period.  All flow vectors in this package
are indexed by branch id, ascending, within whatever edge set applies;
that ordering contract is fixed here and relied on everywhere else.

Bus powers are stored in MW as parsed; computational vectors are
per-unit (divide by ``base_mva``).  Branch resistance and shunt data in
case files are accepted and discarded: the whole package works on the
lossless DC model, which only needs series reactance.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import cached_property

from .errors import CaseParseError, ModelError

__all__ = [
    "Bus",
    "Branch",
    "GridCase",
    "Topology",
    "SensorSet",
    "parse_case",
    "case_to_json",
    "load_case",
    "observed_edges",
    "symmetric_difference",
    "connected_components",
]


@dataclass(frozen=True)
class Bus:
    id: int
    p_load: float = 0.0  # MW
    p_gen: float = 0.0  # MW


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    reactance: float  # per-unit, > 0
    status: bool = True


@dataclass(frozen=True)
class GridCase:
    """Immutable parsed network case.

    ``name`` identifies the case in topology cross-checks and file
    output; two topologies may only be combined when they reference the
    same case.
    """

    name: str
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    slack_bus: int

    def __post_init__(self):
        if self.base_mva <= 0:
            raise ModelError(f"base_mva must be positive, got {self.base_mva}")
        seen: set[int] = set()
        for bus in self.buses:
            if bus.id in seen:
                raise ModelError(f"duplicate bus id {bus.id}")
            seen.add(bus.id)
        if self.slack_bus not in seen:
            raise ModelError(f"slack bus {self.slack_bus} not in bus table")
        branch_ids: set[int] = set()
        for br in self.branches:
            if br.id in branch_ids:
                raise ModelError(f"duplicate branch id {br.id}")
            branch_ids.add(br.id)
            if br.from_bus == br.to_bus:
                raise ModelError(f"branch {br.id} connects bus {br.from_bus} to itself")
            for end in (br.from_bus, br.to_bus):
                if end not in seen:
                    raise ModelError(f"branch {br.id} references unknown bus {end}")
            if not br.reactance > 0:
                raise ModelError(f"branch {br.id} has non-positive reactance {br.reactance}")

    @cached_property
    def bus_index(self) -> dict[int, int]:
        """Bus id -> position in ``buses`` (the per-bus vector layout)."""
        return {bus.id: i for i, bus in enumerate(self.buses)}

    @cached_property
    def branch_by_id(self) -> dict[int, Branch]:
        return {br.id: br for br in self.branches}

    @cached_property
    def default_active_edges(self) -> tuple[int, ...]:
        """Branch ids in service per the case file, ascending — the
        default baseline edge set."""
        return tuple(sorted(br.id for br in self.branches if br.status))

    def base_injections_mw(self):
        import numpy as np

        return np.array([bus.p_gen - bus.p_load for bus in self.buses], dtype=float)

    def base_injections_pu(self):
        return self.base_injections_mw() / self.base_mva

    def baseline_topology(self, label: int = 0) -> "Topology":
        return Topology(self, self.default_active_edges, label)


@dataclass(frozen=True, eq=False)
class Topology:
    """Active edge set at one switching period, against a fixed case."""

    case: GridCase
    active_edges: tuple[int, ...]
    label: int = 0

    def __post_init__(self):
        edges = tuple(sorted(set(self.active_edges)))
        object.__setattr__(self, "active_edges", edges)
        for eid in edges:
            if eid not in self.case.branch_by_id:
                raise ModelError(f"topology references unknown branch {eid}")

    @cached_property
    def edge_set(self) -> frozenset[int]:
        return frozenset(self.active_edges)

    def without(self, *branch_ids: int, label: int | None = None) -> "Topology":
        missing = [b for b in branch_ids if b not in self.edge_set]
        if missing:
            raise ModelError(f"cannot remove inactive branches {missing}")
        remaining = tuple(e for e in self.active_edges if e not in set(branch_ids))
        return Topology(self.case, remaining, self.label if label is None else label)


@dataclass(frozen=True)
class SensorSet:
    """Sensor buses and the branch flows they expose.

    ``observed_edges`` is exactly the set of branches incident to a
    sensor bus, ascending by branch id.  An empty sensor set is valid;
    detection built on it degenerates to scoring nothing.
    """

    buses: frozenset[int]
    observed_edges: tuple[int, ...] = field(default=())

    @cached_property
    def observed_set(self) -> frozenset[int]:
        return frozenset(self.observed_edges)


def observed_edges(case: GridCase, sensors) -> SensorSet:
    """Build the sensor set for sensors placed at ``sensors`` bus ids."""
    sensor_buses = frozenset(int(b) for b in sensors)
    unknown = sorted(sensor_buses - set(case.bus_index))
    if unknown:
        raise ModelError(f"sensor buses not in case: {unknown}")
    edges = sorted(
        br.id for br in case.branches if br.from_bus in sensor_buses or br.to_bus in sensor_buses
    )
    return SensorSet(sensor_buses, tuple(edges))


def symmetric_difference(t1: Topology, t2: Topology) -> frozenset[int]:
    """Branches active in exactly one of the two topologies."""
    if t1.case is not t2.case and t1.case != t2.case:
        raise ModelError(
            f"topologies reference different cases ({t1.case.name!r} vs {t2.case.name!r})"
        )
    return t1.edge_set ^ t2.edge_set


def connected_components(case: GridCase, edges) -> list[list[int]]:
    """Connected components over buses touched by ``edges``.

    Buses with zero degree in the edge set are not listed; callers that
    care about them (the DC solver) check their injections separately.
    """
    adj: dict[int, list[int]] = {}
    for eid in edges:
        br = case.branch_by_id[eid]
        adj.setdefault(br.from_bus, []).append(br.to_bus)
        adj.setdefault(br.to_bus, []).append(br.from_bus)
    components: list[list[int]] = []
    unvisited = set(adj)
    while unvisited:
        start = unvisited.pop()
        comp = [start]
        stack = [start]
        while stack:
            node = stack.pop()
            for nxt in adj[node]:
                if nxt in unvisited:
                    unvisited.remove(nxt)
                    comp.append(nxt)
                    stack.append(nxt)
        components.append(sorted(comp))
    components.sort()
    return components


# --------------------------------------------------------------------------
# MATPOWER ``.m`` subset parser
# --------------------------------------------------------------------------

_MATRIX_RE = re.compile(r"mpc\.(?P<table>baseMVA|bus|gen|branch)\s*=\s*(?P<rest>.*)", re.DOTALL)

_BUS_TYPE_SLACK = 3


def _strip_comment(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _parse_matrix(lines: list[str], start: int, table: str) -> tuple[list[list[float]], int]:
    """Parse rows of a ``[...]`` matrix starting at ``lines[start]``,
    which must contain the opening bracket.  Returns rows and the index
    of the line holding the closing ``]``."""
    rows: list[list[float]] = []
    i = start
    seen_open = False
    while i < len(lines):
        text = _strip_comment(lines[i])
        if not seen_open:
            if "[" not in text:
                raise CaseParseError(f"expected '[' to open mpc.{table}", line=i + 1)
            text = text.split("[", 1)[1]
            seen_open = True
        closing = "]" in text
        if closing:
            text = text.split("]", 1)[0]
        text = text.replace(";", " ")
        if text.strip():
            try:
                rows.append([float(tok) for tok in text.split()])
            except ValueError as exc:
                raise CaseParseError(f"bad number in mpc.{table}: {exc}", line=i + 1) from None
        if closing:
            return rows, i
        i += 1
    raise CaseParseError(f"mpc.{table} table never closed with ']'", line=len(lines))


def _parse_matpower(text: str, name: str) -> GridCase:
    lines = text.splitlines()
    base_mva: float | None = None
    tables: dict[str, list[list[float]]] = {}
    i = 0
    while i < len(lines):
        stripped = _strip_comment(lines[i])
        m = _MATRIX_RE.match(stripped.strip())
        if m:
            table = m.group("table")
            if table == "baseMVA":
                rest = m.group("rest").replace(";", " ").strip()
                try:
                    base_mva = float(rest.split()[0])
                except (IndexError, ValueError):
                    raise CaseParseError("cannot read mpc.baseMVA value", line=i + 1) from None
            else:
                rows, i = _parse_matrix(lines, i, table)
                tables[table] = rows
        i += 1
    if base_mva is None:
        raise CaseParseError("missing mpc.baseMVA")
    for required in ("bus", "branch"):
        if required not in tables:
            raise CaseParseError(f"missing mpc.{required} table")

    buses: list[Bus] = []
    slack: int | None = None
    for lineno, row in enumerate(tables["bus"]):
        if len(row) < 3:
            raise CaseParseError(f"bus row {lineno + 1} has {len(row)} columns, expected >= 3")
        bus_id, bus_type, p_load = int(row[0]), int(row[1]), float(row[2])
        buses.append(Bus(bus_id, p_load=p_load))
        if bus_type == _BUS_TYPE_SLACK:
            if slack is not None:
                raise ModelError(f"multiple slack buses declared ({slack} and {bus_id})")
            slack = bus_id
    if slack is None:
        raise ModelError("no slack bus (type 3) declared in bus table")

    # Aggregate in-service generator output per bus.
    gen_mw: dict[int, float] = {}
    for lineno, row in enumerate(tables.get("gen", [])):
        if len(row) < 2:
            raise CaseParseError(f"gen row {lineno + 1} has {len(row)} columns, expected >= 2")
        status = 1.0 if len(row) < 8 else row[7]
        if status > 0:
            gen_mw[int(row[0])] = gen_mw.get(int(row[0]), 0.0) + float(row[1])
    buses = [
        Bus(b.id, p_load=b.p_load, p_gen=gen_mw.get(b.id, 0.0)) for b in buses
    ]

    branches: list[Branch] = []
    for lineno, row in enumerate(tables["branch"]):
        if len(row) < 4:
            raise CaseParseError(f"branch row {lineno + 1} has {len(row)} columns, expected >= 4")
        status = True if len(row) < 11 else row[10] > 0
        branches.append(
            Branch(
                id=lineno + 1,  # positional: MATPOWER branch tables carry no ids
                from_bus=int(row[0]),
                to_bus=int(row[1]),
                reactance=float(row[3]),
                status=status,
            )
        )
    return GridCase(name, base_mva, tuple(buses), tuple(branches), slack)


# --------------------------------------------------------------------------
# JSON case form
# --------------------------------------------------------------------------


def _parse_json_case(text: str, name: str) -> GridCase:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseParseError(f"invalid JSON case: {exc.msg}", line=exc.lineno) from None
    try:
        buses = tuple(
            Bus(int(b["id"]), float(b.get("p_load", 0.0)), float(b.get("p_gen", 0.0)))
            for b in doc["buses"]
        )
        branches = tuple(
            Branch(
                int(br["id"]),
                int(br["from_bus"]),
                int(br["to_bus"]),
                float(br["reactance"]),
                bool(br.get("status", True)),
            )
            for br in doc["branches"]
        )
        return GridCase(
            str(doc.get("name", name)),
            float(doc["base_mva"]),
            buses,
            branches,
            int(doc["slack_bus"]),
        )
    except KeyError as exc:
        raise CaseParseError(f"JSON case missing required key {exc}") from None


def case_to_json(case: GridCase) -> str:
    doc = {
        "name": case.name,
        "base_mva": case.base_mva,
        "slack_bus": case.slack_bus,
        "buses": [
            {"id": b.id, "p_load": b.p_load, "p_gen": b.p_gen} for b in case.buses
        ],
        "branches": [
            {
                "id": br.id,
                "from_bus": br.from_bus,
                "to_bus": br.to_bus,
                "reactance": br.reactance,
                "status": br.status,
            }
            for br in case.branches
        ],
    }
    return json.dumps(doc, indent=1, sort_keys=True)


def parse_case(text: str, name: str = "case") -> GridCase:
    """Parse case-file content, auto-detecting MATPOWER ``.m`` vs JSON."""
    head = text.lstrip()
    if head.startswith("{"):
        return _parse_json_case(text, name)
    return _parse_matpower(text, name)


def load_case(path) -> GridCase:
    from pathlib import Path

    p = Path(path)
    return parse_case(p.read_text(), name=p.stem)
