"""Conversion of raw observed flows into context-agnostic flows.

A measurement frame comes from whatever grid context held at its tick:
the period's switching state and that tick's load/generation level.
Two pure transformations strip both dependencies out:

1. injection correction — shift each observed flow by the transfer-
   factor response to moving the injections back to the baseline
   vector, yielding the flows the same topology would have carried
   under baseline loading;
2. inverse projection — recover a full baseline-edge flow vector
   consistent with those corrected flows through the outage ratios of
   the branches missing from the period topology, picking the feasible
   vector closest (Euclidean) to the baseline power-flow solution.

The projection constraint ``A·x = p̂`` uses a matrix with an identity
pattern over the currently-active observed branches and one outage-
ratio column per missing observed branch.  Each ratio vector is
computed on the period topology *plus* the missing branch, which for a
single missing branch makes the baseline solution exactly feasible on
DC-generated data; with several simultaneous missing branches the
per-branch columns superpose, which is an approximation (interaction
terms are dropped).

The projection itself is the closed-form equality-constrained
least-squares solution x* = p + Aᵀ(AAᵀ)⁻¹(p̂ − A·p); AAᵀ = I + Σ d dᵀ is
symmetric positive definite, so it is solved by Cholesky, factored once
per period and cached.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ModelError, NumericalError
from .netmodel import GridCase, SensorSet, Topology
from .sensitivity import (
    LinearGridModel,
    LodfVector,
    PtdfMatrix,
    balance_injections,
)

__all__ = [
    "BaselineContext",
    "MeasurementFrame",
    "CorrectedFrame",
    "ContextAgnosticFrame",
    "injection_correct",
    "build_observation_matrix",
    "inverse_project",
    "context_agnostic",
    "embed_raw",
]

_FEASIBILITY_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class MeasurementFrame:
    """Sensor readings for one tick: flows on the observed branches
    active in the tick's period topology (ascending branch id) plus the
    full nodal injection vector, all per-unit."""

    tick: int
    period: int
    flows: np.ndarray
    injections: np.ndarray
    edge_ids: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class CorrectedFrame:
    """Flows after injection correction, same indexing as the source."""

    tick: int
    values: np.ndarray
    edge_ids: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class ContextAgnosticFrame:
    """Flows mapped onto the observed baseline branches.

    ``residual`` is the Euclidean distance between the recovered vector
    and the baseline power-flow solution — the length of the projection
    step, useful as a per-tick mapping diagnostic.
    """

    tick: int
    values: np.ndarray
    edge_ids: tuple[int, ...]
    residual: float = 0.0


class _PeriodOperators:
    """Per-period cache entry: transfer matrix, observation matrix and
    its Cholesky factor, built once and shared across the ticks of the
    period."""

    def __init__(self, ptdf: PtdfMatrix, matrix: np.ndarray, active_obs: tuple[int, ...]):
        self.ptdf = ptdf
        self.matrix = matrix
        self.active_obs = active_obs
        gram = matrix @ matrix.T
        try:
            self.chol = sla.cho_factor(gram)
        except sla.LinAlgError:
            raise NumericalError(
                "observation matrix is rank deficient; outage-ratio geometry is degenerate"
            ) from None


@dataclass(eq=False)
class BaselineContext:
    """The fixed reference context all measurements are mapped onto.

    Holds the baseline topology and injections, the baseline power-flow
    solution restricted to observed baseline branches, and per-period
    caches of the operators the mapping needs.  Build via
    :meth:`build`, which validates the baseline by solving it.
    """

    case: GridCase
    sensor_set: SensorSet
    topology: Topology
    injections: np.ndarray
    baseline_edge_ids: tuple[int, ...]
    baseline_flows: np.ndarray
    _models: dict[frozenset[int], LinearGridModel] = field(default_factory=dict)
    _period_ops: dict[frozenset[int], _PeriodOperators] = field(default_factory=dict)

    @classmethod
    def build(
        cls,
        case: GridCase,
        sensor_set: SensorSet,
        topology: Topology | None = None,
        injections=None,
    ) -> "BaselineContext":
        if topology is None:
            topology = case.baseline_topology()
        if injections is None:
            injections = case.base_injections_pu()
        injections = balance_injections(case, np.asarray(injections, dtype=float))
        model = LinearGridModel(case, topology)
        solution = model.solve(injections)
        observed = tuple(e for e in sensor_set.observed_edges if e in topology.edge_set)
        pos = [solution.edge_ids.index(e) for e in observed]
        ctx = cls(
            case=case,
            sensor_set=sensor_set,
            topology=topology,
            injections=injections,
            baseline_edge_ids=observed,
            baseline_flows=solution.flows[pos],
        )
        ctx._models[topology.edge_set] = model
        return ctx

    # -- caches -------------------------------------------------------------

    def model_for(self, edges: frozenset[int]) -> LinearGridModel:
        model = self._models.get(edges)
        if model is None:
            model = LinearGridModel(self.case, Topology(self.case, tuple(edges)))
            self._models[edges] = model
        return model

    def operators_for(self, topology: Topology) -> _PeriodOperators:
        key = topology.edge_set
        ops = self._period_ops.get(key)
        if ops is not None:
            return ops
        extra = key - self.topology.edge_set
        if extra:
            raise ModelError(
                f"period topology activates branches {sorted(extra)} outside the baseline "
                "edge set; choose a baseline containing every switchable branch"
            )
        model = self.model_for(key)
        active_obs = tuple(e for e in self.sensor_set.observed_edges if e in key)
        if not active_obs:
            raise ModelError("no observed branches are active in this period topology")
        ptdf = PtdfMatrix(
            model.transfer_factors(active_obs), active_obs, topology, self.case.slack_bus
        )
        missing = tuple(e for e in self.baseline_edge_ids if e not in key)
        ratios = []
        for k in missing:
            restored = self.model_for(key | {k})
            vals = restored.outage_ratios(k, active_obs)
            ratios.append(LodfVector(vals, active_obs, k, restored.topology))
        matrix = build_observation_matrix(self.baseline_edge_ids, missing, ratios)
        ops = _PeriodOperators(ptdf, matrix, active_obs)
        self._period_ops[key] = ops
        return ops


def injection_correct(
    frame: MeasurementFrame, baseline: BaselineContext, ptdf: PtdfMatrix
) -> CorrectedFrame:
    """Shift observed flows to baseline loading: p̂ = p + F·(p0 − pτ)."""
    if ptdf.edge_ids != frame.edge_ids:
        raise ModelError(
            f"transfer matrix rows {len(ptdf.edge_ids)} do not match frame flows "
            f"{len(frame.edge_ids)}"
        )
    if frame.flows.shape != (len(frame.edge_ids),):
        raise ModelError("frame flow vector length does not match its edge ids")
    delta = baseline.injections - frame.injections
    corrected = frame.flows + ptdf.values @ delta
    return CorrectedFrame(frame.tick, corrected, frame.edge_ids)


def build_observation_matrix(
    baseline_edges: tuple[int, ...],
    missing_edges,
    ratio_vectors: list[LodfVector],
) -> np.ndarray:
    """Matrix mapping baseline-edge flows to currently-observable flows.

    Rows are the active observed branches (baseline order with the
    missing ones dropped), columns are all observed baseline branches.
    Active columns carry the identity pattern; each missing branch's
    column carries its outage-ratio vector, so ``A·x = p̂`` states that
    every observable flow equals its baseline value plus the ratio-
    weighted flows of the missing branches.
    """
    missing = tuple(sorted(missing_edges))
    by_outage = {v.outage_edge: v for v in ratio_vectors}
    absent = [k for k in missing if k not in by_outage]
    if absent:
        raise ModelError(f"no outage-ratio vector supplied for missing branches {absent}")
    active = tuple(e for e in baseline_edges if e not in set(missing))
    col_of = {e: j for j, e in enumerate(baseline_edges)}
    matrix = np.zeros((len(active), len(baseline_edges)))
    for i, e in enumerate(active):
        matrix[i, col_of[e]] = 1.0
    for k in missing:
        if k not in col_of:
            raise ModelError(f"missing branch {k} is not an observed baseline branch")
        vec = by_outage[k]
        if vec.edge_ids != active:
            raise ModelError(
                f"outage-ratio vector for branch {k} is indexed on different branches"
            )
        matrix[:, col_of[k]] = vec.values
    return matrix


def _project(
    corrected: CorrectedFrame,
    baseline: BaselineContext,
    matrix: np.ndarray,
    chol=None,
) -> ContextAgnosticFrame:
    if matrix.shape != (len(corrected.values), len(baseline.baseline_edge_ids)):
        raise ModelError(
            f"observation matrix shape {matrix.shape} does not match "
            f"({len(corrected.values)}, {len(baseline.baseline_edge_ids)})"
        )
    prior = baseline.baseline_flows
    gap = corrected.values - matrix @ prior
    if chol is None:
        gram = matrix @ matrix.T
        try:
            chol = sla.cho_factor(gram)
        except sla.LinAlgError:
            raise NumericalError(
                "observation matrix is rank deficient; outage-ratio geometry is degenerate"
            ) from None
    step = matrix.T @ sla.cho_solve(chol, gap)
    values = prior + step
    infeas = np.abs(matrix @ values - corrected.values).max(initial=0.0)
    if infeas > _FEASIBILITY_TOL * max(1.0, np.abs(corrected.values).max(initial=0.0)):
        raise NumericalError(f"projection constraint residual {infeas:.3e} above tolerance")
    return ContextAgnosticFrame(
        corrected.tick, values, baseline.baseline_edge_ids, float(np.linalg.norm(step))
    )


def inverse_project(
    corrected: CorrectedFrame, baseline: BaselineContext, matrix: np.ndarray
) -> ContextAgnosticFrame:
    """Closest-to-baseline flow vector satisfying ``matrix·x = p̂``."""
    return _project(corrected, baseline, matrix)


def context_agnostic(
    frame: MeasurementFrame,
    baseline: BaselineContext,
    topology: Topology,
    correct_injections: bool = True,
) -> ContextAgnosticFrame:
    """Full mapping of one frame: injection correction (optional, on by
    default) then inverse projection, using the per-period cached
    operators for the frame's topology."""
    ops = baseline.operators_for(topology)
    if frame.edge_ids != ops.active_obs:
        raise ModelError(
            f"frame at tick {frame.tick} is indexed on branches {frame.edge_ids[:5]}..., "
            "which do not match the period topology's observed active branches"
        )
    if correct_injections:
        corrected = injection_correct(frame, baseline, ops.ptdf)
    else:
        corrected = CorrectedFrame(frame.tick, frame.flows, frame.edge_ids)
    return _project(corrected, baseline, ops.matrix, ops.chol)


def embed_raw(frame: MeasurementFrame, baseline: BaselineContext) -> ContextAgnosticFrame:
    """Raw flows placed on the baseline-edge index with no correction:
    observed active branches keep their measured value, branches out of
    service read zero (an open branch carries no flow).  This is the
    no-mapping data path used by the ablation variants."""
    values = np.zeros(len(baseline.baseline_edge_ids))
    pos = {e: i for i, e in enumerate(baseline.baseline_edge_ids)}
    for val, eid in zip(frame.flows, frame.edge_ids):
        if eid in pos:
            values[pos[eid]] = val
    residual = float(np.linalg.norm(values - baseline.baseline_flows))
    return ContextAgnosticFrame(frame.tick, values, baseline.baseline_edge_ids, residual)
