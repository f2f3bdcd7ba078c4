"""Bundled benchmark networks and the MATPOWER-format writer.

The builders construct deterministic meshed transmission-style grids at
a requested scale: a ring backbone (so no branch is a bridge by
construction) plus mostly-local chords, lognormal-ish reactances, and
load/generation spread over the buses.  ``bench118`` and ``bench2383``
match the bus/branch counts of the classic 118-bus and 2383-bus/2896-
branch study systems; the genuine datasets are not redistributable
here, so these stand-ins carry the same scale and mesh character for
benchmarks and tests.
"""

from __future__ import annotations

import numpy as np

from .errors import ModelError
from .netmodel import Branch, Bus, GridCase

__all__ = ["build_benchmark_case", "builtin_case", "write_matpower_case", "BUILTIN_CASES"]


def build_benchmark_case(
    n_buses: int,
    n_branches: int,
    seed: int,
    name: str,
    gen_fraction: float = 0.15,
    load_fraction: float = 0.7,
) -> GridCase:
    if n_branches < n_buses:
        raise ModelError("need at least one branch per bus for the ring backbone")
    rng = np.random.default_rng(seed)
    edges: set[tuple[int, int]] = set()
    for i in range(1, n_buses + 1):
        j = i % n_buses + 1
        edges.add((min(i, j), max(i, j)))
    # Chords: mostly short-range (meshing neighborhoods), a few long-range ties.
    while len(edges) < n_branches:
        i = int(rng.integers(1, n_buses + 1))
        if rng.random() < 0.85:
            offset = int(rng.integers(2, min(12, n_buses - 1) + 1))
        else:
            offset = int(rng.integers(2, n_buses))
        j = (i + offset - 1) % n_buses + 1
        if i == j:
            continue
        edges.add((min(i, j), max(i, j)))

    branch_list = sorted(edges)
    reactances = np.exp(rng.normal(np.log(0.08), 0.45, size=len(branch_list)))
    reactances = np.clip(reactances, 0.01, 0.4)
    branches = tuple(
        Branch(k + 1, f, t, float(x)) for k, ((f, t), x) in enumerate(zip(branch_list, reactances))
    )

    load_mw = np.where(rng.random(n_buses) < load_fraction, rng.uniform(15.0, 120.0, n_buses), 0.0)
    n_gens = max(2, int(round(gen_fraction * n_buses)))
    gen_buses = rng.choice(n_buses, size=n_gens, replace=False)
    gen_mw = np.zeros(n_buses)
    gen_mw[gen_buses] = load_mw.sum() / n_gens
    buses = tuple(
        Bus(i + 1, p_load=round(float(load_mw[i]), 3), p_gen=round(float(gen_mw[i]), 3))
        for i in range(n_buses)
    )
    return GridCase(name, 100.0, buses, branches, slack_bus=int(gen_buses[0]) + 1)


def _triangle() -> GridCase:
    buses = (Bus(1, p_load=0.0, p_gen=100.0), Bus(2, p_load=60.0), Bus(3, p_load=40.0))
    branches = (Branch(1, 1, 2, 1.0), Branch(2, 2, 3, 1.0), Branch(3, 3, 1, 1.0))
    return GridCase("triangle", 100.0, buses, branches, slack_bus=1)


BUILTIN_CASES = {
    "triangle": _triangle,
    "bench30": lambda: build_benchmark_case(30, 41, seed=30, name="bench30"),
    "bench118": lambda: build_benchmark_case(118, 186, seed=118, name="bench118"),
    "bench2383": lambda: build_benchmark_case(2383, 2896, seed=2383, name="bench2383"),
}


def builtin_case(name: str) -> GridCase:
    try:
        return BUILTIN_CASES[name]()
    except KeyError:
        raise ModelError(
            f"unknown builtin case {name!r}; available: {sorted(BUILTIN_CASES)}"
        ) from None


def write_matpower_case(case: GridCase, path) -> None:
    """Write ``case`` as a MATPOWER ``.m`` file (the subset this package
    parses: baseMVA, bus, gen, branch)."""
    lines = [
        f"function mpc = {case.name}",
        f"%% {case.name}: {len(case.buses)} buses, {len(case.branches)} branches",
        "mpc.version = '2';",
        f"mpc.baseMVA = {case.base_mva!r};",
        "",
        "%% bus data",
        "%\tbus_i\ttype\tPd\tQd\tGs\tBs\tarea\tVm\tVa\tbaseKV\tzone\tVmax\tVmin",
        "mpc.bus = [",
    ]
    for bus in case.buses:
        bus_type = 3 if bus.id == case.slack_bus else (2 if bus.p_gen > 0 else 1)
        lines.append(f"\t{bus.id}\t{bus_type}\t{bus.p_load!r}\t0\t0\t0\t1\t1\t0\t138\t1\t1.1\t0.9;")
    lines += ["];", "", "%% generator data", "%\tbus\tPg\tQg\tQmax\tQmin\tVg\tmBase\tstatus\tPmax\tPmin", "mpc.gen = ["]
    for bus in case.buses:
        if bus.p_gen != 0.0 or bus.id == case.slack_bus:
            lines.append(
                f"\t{bus.id}\t{bus.p_gen!r}\t0\t300\t-300\t1\t{case.base_mva!r}\t1\t{bus.p_gen + 500.0!r}\t0;"
            )
    lines += ["];", "", "%% branch data", "%\tfbus\ttbus\tr\tx\tb\trateA\trateB\trateC\tratio\tangle\tstatus\tangmin\tangmax", "mpc.branch = ["]
    for br in case.branches:
        status = 1 if br.status else 0
        lines.append(
            f"\t{br.from_bus}\t{br.to_bus}\t0\t{br.reactance!r}\t0\t0\t0\t0\t0\t0\t{status}\t-360\t360;"
        )
    lines += ["];", ""]
    from pathlib import Path

    Path(path).write_text("\n".join(lines))
