"""Deterministic synthetic scenario generation.

A scenario is a stream of per-tick sensor measurements over a network
whose switching state changes once per period: each period deactivates
one randomly chosen observed, non-bridge branch of the baseline graph
(an anticipated change the operator knows about).  Injections follow a
sinusoidal profile with configurable relative amplitude, optional
persistent shift events on a random subset of buses, and optional
Gaussian noise.  A configurable number of ticks carry a seeded anomaly:
an additional *unobserved* branch is silently removed from the true
topology while the presumed topology still contains it.

Anticipated changes are drawn from observed branches so a missing
branch's baseline flow is an unknown the inverse projection can carry;
anomaly branches are drawn from unobserved branches (status changes on
measured branches are directly visible and not the interesting case)
and are required to couple to at least one observed flow above
``min_anomaly_coupling``, otherwise they would be undetectable in
principle from the chosen sensors.

All randomness flows from ``numpy``'s seeded PCG64 generators; per-tick
noise comes from a generator keyed by (seed, tick) so generation is
reproducible tick-by-tick regardless of evaluation order.  Saved
scenario directories are byte-identical across runs for equal configs.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

import networkx as nx
import numpy as np

from .cases import builtin_case
from .errors import ConfigError, ModelError
from .mapping import MeasurementFrame
from .netmodel import (
    GridCase,
    SensorSet,
    Topology,
    case_to_json,
    load_case,
    observed_edges,
    parse_case,
)
from .sensitivity import LinearGridModel, balance_injections

__all__ = [
    "ScenarioConfig",
    "Scenario",
    "generate_load_profile",
    "generate_scenario",
    "save_scenario",
    "load_scenario",
    "resolve_case",
]


@dataclass(frozen=True)
class ScenarioConfig:
    """Generation parameters.  ``case`` is a builtin case name or a
    path to a case file; exactly one of ``sensor_fraction`` /
    ``sensors`` picks the sensor placement."""

    case: str
    seed: int = 0
    n_periods: int = 20
    n_tau: int = 60
    n_anomalies: int = 20
    load_variability: float = 0.0
    n_shift_events: int = 0
    shift_magnitude: float = 0.2
    shift_bus_fraction: float = 0.1
    noise_stdev: float = 0.0
    sensor_fraction: float | None = 0.25
    sensors: tuple[int, ...] | None = None
    shift_ticks: tuple[int, ...] | None = None
    min_anomaly_coupling: float = 1e-3

    def __post_init__(self):
        if self.n_periods <= 0 or self.n_tau <= 0:
            raise ConfigError("n_periods and n_tau must be positive")
        counts = {
            "n_anomalies": self.n_anomalies,
            "n_shift_events": self.n_shift_events,
        }
        for name, value in counts.items():
            if value < 0:
                raise ConfigError(f"{name} must be nonnegative, got {value}")
        if self.n_anomalies > self.n_periods * self.n_tau:
            raise ConfigError("more anomalies requested than ticks in the scenario")
        if (self.sensors is None) == (self.sensor_fraction is None):
            raise ConfigError("set exactly one of sensor_fraction or sensors")
        if self.sensor_fraction is not None and not 0.0 < self.sensor_fraction <= 1.0:
            raise ConfigError("sensor_fraction must be in (0, 1]")
        for name in ("load_variability", "noise_stdev", "shift_magnitude"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.shift_ticks is not None:
            object.__setattr__(self, "shift_ticks", tuple(int(t) for t in self.shift_ticks))
        if self.sensors is not None:
            object.__setattr__(self, "sensors", tuple(int(b) for b in self.sensors))

    @property
    def n_ticks(self) -> int:
        return self.n_periods * self.n_tau

    def to_json_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["sensors"] = list(self.sensors) if self.sensors is not None else None
        out["shift_ticks"] = list(self.shift_ticks) if self.shift_ticks is not None else None
        return out

    @classmethod
    def from_json_dict(cls, doc: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigError(f"unknown scenario config keys: {sorted(unknown)}")
        doc = dict(doc)
        for key in ("sensors", "shift_ticks"):
            if doc.get(key) is not None:
                doc[key] = tuple(doc[key])
        return cls(**doc)


@dataclass(frozen=True, eq=False)
class Scenario:
    config: ScenarioConfig
    case: GridCase
    sensor_set: SensorSet
    period_topologies: tuple[Topology, ...]  # entry t-1 is period t
    frames: tuple[MeasurementFrame, ...]
    truth: frozenset[tuple[int, int]]  # (tick, anomalous branch id)
    shift_ticks: tuple[int, ...]

    @property
    def truth_ticks(self) -> frozenset[int]:
        return frozenset(t for t, _ in self.truth)

    def topologies_by_period(self) -> dict[int, Topology]:
        return {t + 1: topo for t, topo in enumerate(self.period_topologies)}


def resolve_case(ref: str) -> GridCase:
    """A case reference is a builtin name or a file path."""
    path = Path(ref)
    if path.suffix in (".m", ".json") or path.exists():
        return load_case(path)
    return builtin_case(ref)


def _structure_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, 0)))


def _tick_rng(seed: int, tick: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((seed, 1, tick)))


def generate_load_profile(config: ScenarioConfig, case: GridCase) -> tuple[np.ndarray, tuple[int, ...]]:
    """Per-tick injection vectors (n_ticks × n_buses, per-unit) and the
    shift ticks that were applied.

    Injection trajectory per bus: base × shift-steps × (1 + a·sin) with
    additive Gaussian noise scaled to the base magnitude.  The sinusoid
    spans one full cycle over the scenario horizon.
    """
    base = case.base_injections_pu()
    n_ticks = config.n_ticks
    rng = _structure_rng(config.seed)

    if config.shift_ticks is not None:
        shift_ticks = tuple(sorted(config.shift_ticks))
        if any(not 1 <= t <= n_ticks for t in shift_ticks):
            raise ConfigError("shift ticks outside the scenario horizon")
    elif config.n_shift_events > 0:
        picks = rng.choice(np.arange(2, n_ticks + 1), size=config.n_shift_events, replace=False)
        shift_ticks = tuple(int(t) for t in np.sort(picks))
    else:
        shift_ticks = ()

    multipliers = np.ones((len(shift_ticks), len(case.buses)))
    n_shift_buses = max(1, int(round(config.shift_bus_fraction * len(case.buses))))
    for j in range(len(shift_ticks)):
        chosen = rng.choice(len(case.buses), size=n_shift_buses, replace=False)
        sign = 1.0 if rng.random() < 0.5 else -1.0
        multipliers[j, chosen] = 1.0 + sign * config.shift_magnitude

    phase = 2.0 * np.pi * np.arange(1, n_ticks + 1) / n_ticks
    pattern = 1.0 + config.load_variability * np.sin(phase)

    profile = np.empty((n_ticks, len(case.buses)))
    level = base.copy()
    next_shift = 0
    for tick in range(1, n_ticks + 1):
        while next_shift < len(shift_ticks) and shift_ticks[next_shift] == tick:
            level = level * multipliers[next_shift]
            next_shift += 1
        row = level * pattern[tick - 1]
        if config.noise_stdev > 0:
            row = row + _tick_rng(config.seed, tick).normal(
                0.0, config.noise_stdev * np.abs(base)
            )
        profile[tick - 1] = row
    return profile, shift_ticks


def _bridges(case: GridCase, edges: frozenset[int]) -> frozenset[int]:
    graph = nx.MultiGraph()
    for eid in edges:
        br = case.branch_by_id[eid]
        graph.add_edge(br.from_bus, br.to_bus, key=eid)
    bridge_pairs = set(nx.bridges(nx.Graph(graph)))
    out = set()
    for eid in edges:
        br = case.branch_by_id[eid]
        if (br.from_bus, br.to_bus) in bridge_pairs or (br.to_bus, br.from_bus) in bridge_pairs:
            # A bridge in the simple graph is only a real bridge if no
            # parallel branch shares its endpoints.
            if graph.number_of_edges(br.from_bus, br.to_bus) == 1:
                out.add(eid)
    return frozenset(out)


def generate_scenario(config: ScenarioConfig, case: GridCase | None = None) -> Scenario:
    if case is None:
        case = resolve_case(config.case)
    # Scenario structure draws from its own stream; the load profile's
    # draws live on (seed, 0) and per-tick noise on (seed, 1, tick).
    pick_rng = np.random.default_rng(np.random.SeedSequence((config.seed, 2)))

    if config.sensors is not None:
        sensor_buses = config.sensors
    else:
        count = max(1, int(round(config.sensor_fraction * len(case.buses))))
        sensor_buses = tuple(
            int(case.buses[i].id)
            for i in np.sort(pick_rng.choice(len(case.buses), size=count, replace=False))
        )
    sensor_set = observed_edges(case, sensor_buses)

    baseline = case.baseline_topology()
    baseline_bridges = _bridges(case, baseline.edge_set)
    anticipated_pool = sorted(
        (sensor_set.observed_set & baseline.edge_set) - baseline_bridges
    )
    if not anticipated_pool:
        raise ModelError(
            "no observed non-bridge branch available for anticipated topology changes"
        )

    period_topologies = []
    for t in range(1, config.n_periods + 1):
        removed = int(pick_rng.choice(anticipated_pool))
        period_topologies.append(baseline.without(removed, label=t))

    profile, shift_ticks = generate_load_profile(config, case)

    anomaly_ticks = (
        np.sort(pick_rng.choice(np.arange(2, config.n_ticks + 1), size=config.n_anomalies, replace=False))
        if config.n_anomalies
        else np.array([], dtype=int)
    )

    models: dict[frozenset[int], LinearGridModel] = {}
    bridge_cache: dict[frozenset[int], frozenset[int]] = {}

    def model_for(edges: frozenset[int]) -> LinearGridModel:
        if edges not in models:
            models[edges] = LinearGridModel(case, Topology(case, tuple(edges)))
        return models[edges]

    def bridges_of(edges: frozenset[int]) -> frozenset[int]:
        if edges not in bridge_cache:
            bridge_cache[edges] = _bridges(case, edges)
        return bridge_cache[edges]

    truth = set()
    anomaly_edge_at: dict[int, int] = {}
    for tick in anomaly_ticks:
        period = (int(tick) - 1) // config.n_tau + 1
        topo = period_topologies[period - 1]
        observed_active = tuple(e for e in sensor_set.observed_edges if e in topo.edge_set)
        candidates = sorted(topo.edge_set - sensor_set.observed_set - bridges_of(topo.edge_set))
        if not candidates:
            raise ModelError(
                f"period {period} has no unobserved non-bridge branch to fail"
            )
        pick_rng.shuffle(candidates)
        model = model_for(topo.edge_set)
        chosen = None
        for branch in candidates:
            ratios = model.outage_ratios(int(branch), observed_active)
            if np.abs(ratios).max(initial=0.0) >= config.min_anomaly_coupling:
                chosen = int(branch)
                break
        if chosen is None:
            raise ModelError(
                f"period {period}: no candidate anomaly branch couples to the observed "
                f"flows above {config.min_anomaly_coupling}"
            )
        truth.add((int(tick), chosen))
        anomaly_edge_at[int(tick)] = chosen

    frames = []
    for tick in range(1, config.n_ticks + 1):
        period = (tick - 1) // config.n_tau + 1
        presumed = period_topologies[period - 1]
        true_edges = presumed.edge_set
        if tick in anomaly_edge_at:
            true_edges = true_edges - {anomaly_edge_at[tick]}
        injections = balance_injections(case, profile[tick - 1])
        solution = model_for(true_edges).solve(injections)
        observed_active = tuple(e for e in sensor_set.observed_edges if e in presumed.edge_set)
        pos = {eid: i for i, eid in enumerate(solution.edge_ids)}
        flows = np.array([solution.flows[pos[e]] for e in observed_active])
        frames.append(
            MeasurementFrame(
                tick=tick,
                period=period,
                flows=flows,
                injections=profile[tick - 1].copy(),
                edge_ids=observed_active,
            )
        )

    return Scenario(
        config=config,
        case=case,
        sensor_set=sensor_set,
        period_topologies=tuple(period_topologies),
        frames=tuple(frames),
        truth=frozenset(truth),
        shift_ticks=shift_ticks,
    )


# --------------------------------------------------------------------------
# Scenario directory I/O
#
# A scenario directory holds exactly:
#   config.json      the generation parameters
#   topologies.json  serialized case, sensor buses, baseline and
#                    per-period active edge lists
#   frames.csv       tick,period,flow_<branch>...,inj_<bus>...  (MW;
#                    a flow cell is empty when the branch is out of
#                    service in that tick's presumed topology)
#   truth.csv        tick,branch rows for seeded anomalies (optional
#                    when importing externally generated data)
# --------------------------------------------------------------------------


def save_scenario(scenario: Scenario, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    case = scenario.case
    base = case.base_mva

    (out / "config.json").write_text(
        json.dumps(scenario.config.to_json_dict(), indent=1, sort_keys=True)
    )

    topo_doc = {
        "case": json.loads(case_to_json(case)),
        "sensors": sorted(scenario.sensor_set.buses),
        "baseline_edges": list(case.default_active_edges),
        "periods": [
            {"period": t + 1, "active_edges": list(topo.active_edges)}
            for t, topo in enumerate(scenario.period_topologies)
        ],
        "shift_ticks": list(scenario.shift_ticks),
    }
    (out / "topologies.json").write_text(json.dumps(topo_doc, indent=1, sort_keys=True))

    flow_cols = list(scenario.sensor_set.observed_edges)
    bus_ids = [b.id for b in case.buses]
    header = (
        ["tick", "period"]
        + [f"flow_{e}" for e in flow_cols]
        + [f"inj_{b}" for b in bus_ids]
    )
    lines = [",".join(header)]
    for frame in scenario.frames:
        by_edge = dict(zip(frame.edge_ids, frame.flows))
        cells = [str(frame.tick), str(frame.period)]
        cells += [
            repr(float(by_edge[e]) * base) if e in by_edge else "" for e in flow_cols
        ]
        cells += [repr(float(v) * base) for v in frame.injections]
        lines.append(",".join(cells))
    (out / "frames.csv").write_text("\n".join(lines) + "\n")

    truth_lines = ["tick,branch"] + [
        f"{tick},{branch}" for tick, branch in sorted(scenario.truth)
    ]
    (out / "truth.csv").write_text("\n".join(truth_lines) + "\n")
    return out


def load_scenario(path) -> Scenario:
    src = Path(path)
    if not src.is_dir():
        raise ConfigError(f"scenario directory not found: {src}")
    for required in ("config.json", "topologies.json", "frames.csv"):
        if not (src / required).exists():
            raise ConfigError(f"scenario directory is missing {required}")

    config = ScenarioConfig.from_json_dict(json.loads((src / "config.json").read_text()))
    topo_doc = json.loads((src / "topologies.json").read_text())
    case = parse_case(json.dumps(topo_doc["case"]))
    sensor_set = observed_edges(case, topo_doc["sensors"])
    period_topologies = tuple(
        Topology(case, tuple(entry["active_edges"]), label=int(entry["period"]))
        for entry in sorted(topo_doc["periods"], key=lambda e: e["period"])
    )

    truth = set()
    if (src / "truth.csv").exists():
        with (src / "truth.csv").open() as fh:
            for row in csv.DictReader(fh):
                truth.add((int(row["tick"]), int(row["branch"])))

    base = case.base_mva
    frames = []
    with (src / "frames.csv").open() as fh:
        reader = csv.reader(fh)
        header = next(reader)
        flow_cols = [(i, int(h[5:])) for i, h in enumerate(header) if h.startswith("flow_")]
        inj_cols = [(i, int(h[4:])) for i, h in enumerate(header) if h.startswith("inj_")]
        bus_order = {b.id: i for i, b in enumerate(case.buses)}
        for row in reader:
            tick, period = int(row[0]), int(row[1])
            edge_ids = []
            flows = []
            for i, eid in flow_cols:
                if row[i] != "":
                    edge_ids.append(eid)
                    flows.append(float(row[i]) / base)
            injections = np.zeros(len(case.buses))
            for i, bid in inj_cols:
                injections[bus_order[bid]] = float(row[i]) / base
            frames.append(
                MeasurementFrame(
                    tick=tick,
                    period=period,
                    flows=np.array(flows),
                    injections=injections,
                    edge_ids=tuple(edge_ids),
                )
            )
    frames.sort(key=lambda f: f.tick)
    if [f.tick for f in frames] != list(range(1, len(frames) + 1)):
        raise ConfigError("frames.csv ticks must be consecutive starting at 1")

    return Scenario(
        config=config,
        case=case,
        sensor_set=sensor_set,
        period_topologies=period_topologies,
        frames=tuple(frames),
        truth=frozenset(truth),
        shift_ticks=tuple(topo_doc.get("shift_ticks", [])),
    )
