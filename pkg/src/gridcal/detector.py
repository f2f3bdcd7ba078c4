"""Streaming anomaly detection over context-agnostic flows.

Each tick: weight the historical ticks by topology distance to the
current period (previously flagged ticks weighted zero), fit a weighted
mean/stdev per observed baseline branch, map the incoming frame, and
score it with the largest absolute z-score across branches.  A score
above the threshold flags the tick, and flagged ticks feed back into
the next tick's weighting — contaminated history never informs the
model.

The mapping applied to frames is selectable (:class:`MappingVariant`),
which is what the evaluation harness ablates:

* ``RAW``   — no mapping; raw flows placed on the baseline index.
* ``PROJECTION`` — inverse projection only.
* ``FULL``  — injection correction then inverse projection.

Processing is strictly sequential per stream (the feedback forbids
reordering); separate streams are independent.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import GridcalError, ModelError
from .mapping import (
    BaselineContext,
    ContextAgnosticFrame,
    MeasurementFrame,
    context_agnostic,
    embed_raw,
)
from .netmodel import Topology
from .weighting import DistanceCalculator, TickWeights, compute_weights

__all__ = [
    "MappingVariant",
    "TickModel",
    "AnomalyVerdict",
    "DetectionState",
    "fit_model",
    "score",
    "step",
    "reanchor",
    "run_stream",
]

log = logging.getLogger(__name__)

DEFAULT_THRESHOLD = 10.0

# Relative floor keeping z-scores finite on branches whose weighted
# history shows (numerically) zero variance.
_SIGMA_FLOOR_REL = 1e-6


class MappingVariant(str, Enum):
    RAW = "naive"
    PROJECTION = "ip"
    FULL = "iplc"

    @classmethod
    def parse(cls, text: str) -> "MappingVariant":
        try:
            return cls(text.lower())
        except ValueError:
            raise ModelError(
                f"unknown variant {text!r}; expected one of {[v.value for v in cls]}"
            ) from None


@dataclass(frozen=True, eq=False)
class TickModel:
    """Weighted per-branch distribution over the history."""

    means: np.ndarray
    stdevs: np.ndarray
    weights: TickWeights


@dataclass(frozen=True)
class AnomalyVerdict:
    tick: int
    score: float
    argmax_edge: int | None
    is_anomalous: bool
    threshold: float
    error_cause: str | None = None

    def to_json_dict(self) -> dict:
        out = {
            "tick": self.tick,
            "score": self.score if math.isfinite(self.score) else None,
            "argmax_edge": self.argmax_edge,
            "anomalous": self.is_anomalous,
        }
        if self.error_cause is not None:
            out["cause"] = self.error_cause
        return out


def _sigma_floor(means: np.ndarray) -> np.ndarray:
    return _SIGMA_FLOOR_REL * np.maximum(1.0, np.abs(means))


def fit_model(history, weights: TickWeights) -> TickModel:
    """Weighted mean and stdev per branch over mapped history frames.

    ``history`` is a sequence of :class:`ContextAgnosticFrame` or a
    (ticks × branches) array.  Weights must align with it and sum to 1.
    """
    if isinstance(history, np.ndarray):
        values = history
    else:
        frames = list(history)
        if not frames:
            raise ModelError("cannot fit a model on empty history")
        values = np.stack([f.values for f in frames])
    if values.shape[0] == 0:
        raise ModelError("cannot fit a model on empty history")
    w = weights.weights
    if w.shape[0] != values.shape[0]:
        raise ModelError(
            f"{w.shape[0]} weights for {values.shape[0]} history ticks"
        )
    if abs(w.sum() - 1.0) > 1e-9:
        raise ModelError("weights must sum to one")
    means = w @ values
    variances = w @ np.square(values) - np.square(means)
    stdevs = np.sqrt(np.maximum(variances, 0.0))
    stdevs = np.maximum(stdevs, _sigma_floor(means))
    return TickModel(means, stdevs, weights)


def score(frame: ContextAgnosticFrame, model: TickModel, threshold: float = DEFAULT_THRESHOLD) -> AnomalyVerdict:
    """Largest absolute z-score across branches; exact ties go to the
    lowest branch id (branch ids ascend along the vectors)."""
    if frame.values.shape != model.means.shape:
        raise ModelError(
            f"frame has {frame.values.shape[0]} branches, model has {model.means.shape[0]}"
        )
    z = np.abs(frame.values - model.means) / model.stdevs
    best = int(np.argmax(z))
    value = float(z[best])
    return AnomalyVerdict(
        tick=frame.tick,
        score=value,
        argmax_edge=frame.edge_ids[best],
        is_anomalous=value > threshold,
        threshold=threshold,
    )


class _HistoryBuffer:
    """Append-only (ticks × branches) matrix with doubling growth."""

    def __init__(self, width: int):
        self._data = np.empty((64, width))
        self._len = 0

    def append(self, row: np.ndarray) -> None:
        if self._len == self._data.shape[0]:
            grown = np.empty((2 * self._data.shape[0], self._data.shape[1]))
            grown[: self._len] = self._data
            self._data = grown
        self._data[self._len] = row
        self._len += 1

    def view(self) -> np.ndarray:
        return self._data[: self._len]

    def __len__(self) -> int:
        return self._len


@dataclass(eq=False)
class DetectionState:
    """Mutable per-stream state: baseline context, raw and mapped
    history, period topologies seen so far, and the flagged-tick set.

    Raw frames are retained so the stream can be re-anchored onto a new
    baseline later.
    """

    baseline: BaselineContext
    variant: MappingVariant = MappingVariant.FULL
    warmup: int = 60
    raw_frames: list[MeasurementFrame] = field(default_factory=list)
    anomalous_ticks: set[int] = field(default_factory=set)
    period_topologies: dict[int, Topology] = field(default_factory=dict)
    mapped: _HistoryBuffer | None = None
    _calculator: DistanceCalculator | None = None
    _period_distance: dict[tuple[frozenset[int], frozenset[int]], float] = field(default_factory=dict)

    def __post_init__(self):
        if self.mapped is None:
            self.mapped = _HistoryBuffer(len(self.baseline.baseline_edge_ids))
        if self._calculator is None:
            self._calculator = DistanceCalculator(self.baseline.case)

    @property
    def tick_count(self) -> int:
        return len(self.raw_frames)

    def register_period(self, period: int, topology: Topology) -> None:
        known = self.period_topologies.get(period)
        if known is not None and known.edge_set != topology.edge_set:
            raise ModelError(f"period {period} registered twice with different topologies")
        self.period_topologies[period] = topology

    def topology_of(self, period: int) -> Topology:
        try:
            return self.period_topologies[period]
        except KeyError:
            raise ModelError(f"no topology registered for period {period}") from None


def _map_frame(state: DetectionState, frame: MeasurementFrame, topology: Topology) -> ContextAgnosticFrame:
    if state.variant is MappingVariant.RAW:
        return embed_raw(frame, state.baseline)
    return context_agnostic(
        frame,
        state.baseline,
        topology,
        correct_injections=state.variant is MappingVariant.FULL,
    )


def _tick_distances(state: DetectionState, current: Topology) -> np.ndarray:
    """Distance of each historical tick's period topology to the
    current one (zero for same-topology periods, including the current
    period itself)."""
    cache: dict[int, float] = {}
    out = np.empty(state.tick_count)
    for i, frame in enumerate(state.raw_frames):
        if frame.period not in cache:
            topo = state.topology_of(frame.period)
            cache[frame.period] = (
                0.0
                if topo.edge_set == current.edge_set
                else state._calculator.distance(topo, current)
            )
        out[i] = cache[frame.period]
    return out


def step(
    state: DetectionState,
    frame: MeasurementFrame,
    threshold: float = DEFAULT_THRESHOLD,
    rho: float | None = None,
    topology: Topology | None = None,
) -> tuple[AnomalyVerdict, DetectionState]:
    """Process the next tick: weight history, fit, map, score, update.

    ``topology`` registers the presumed topology of the frame's period
    on first use; later frames of a known period may omit it.  A frame
    whose mapping fails is flagged anomalous with the failure recorded
    in ``error_cause`` (an unmappable tick is a context inconsistency —
    the conservative reading is anomalous) and a neutral baseline row is
    stored so the zero-weighted history stays finite.
    """
    expected = state.tick_count + 1
    if frame.tick != expected:
        raise ModelError(f"expected tick {expected}, got {frame.tick}")
    if topology is not None:
        state.register_period(frame.period, topology)
    topo = state.topology_of(frame.period)

    mapped: ContextAgnosticFrame | None
    cause: str | None = None
    try:
        mapped = _map_frame(state, frame, topo)
    except GridcalError as exc:
        mapped = None
        cause = f"{type(exc).__name__}: {exc}"
        log.warning("tick %d could not be mapped: %s", frame.tick, cause)

    if state.tick_count == 0:
        verdict = AnomalyVerdict(
            frame.tick,
            math.inf if mapped is None else 0.0,
            None,
            mapped is None,
            threshold,
            cause,
        )
    else:
        distances = _tick_distances(state, topo)
        weights = compute_weights(distances, rho, state.anomalous_ticks)
        model = fit_model(state.mapped.view(), weights)
        if mapped is None:
            verdict = AnomalyVerdict(frame.tick, math.inf, None, True, threshold, cause)
        else:
            verdict = score(mapped, model, threshold)

    state.raw_frames.append(frame)
    state.mapped.append(
        state.baseline.baseline_flows if mapped is None else mapped.values
    )
    if verdict.is_anomalous and state.tick_count > state.warmup:
        state.anomalous_ticks.add(frame.tick)
    return verdict, state


def reanchor(state: DetectionState, new_baseline: BaselineContext) -> DetectionState:
    """Rebuild the stream's state under a different baseline context.

    Raw frames are re-mapped; a tick whose remapping fails is dropped
    from the model history (its row is stored as the new baseline
    flows and it is flagged, so it carries no weight).  Flagged ticks
    are preserved.
    """
    fresh = DetectionState(
        baseline=new_baseline,
        variant=state.variant,
        warmup=state.warmup,
        anomalous_ticks=set(state.anomalous_ticks),
        period_topologies=dict(state.period_topologies),
    )
    for frame in state.raw_frames:
        topo = fresh.topology_of(frame.period)
        try:
            mapped = _map_frame(fresh, frame, topo)
            fresh.mapped.append(mapped.values)
        except GridcalError as exc:
            log.warning(
                "tick %d cannot be remapped under the new baseline (%s); dropping it",
                frame.tick,
                exc,
            )
            fresh.mapped.append(new_baseline.baseline_flows)
            fresh.anomalous_ticks.add(frame.tick)
        fresh.raw_frames.append(frame)
    return fresh


def run_stream(
    baseline: BaselineContext,
    frames,
    topologies: dict[int, Topology],
    variant: MappingVariant = MappingVariant.FULL,
    threshold: float = DEFAULT_THRESHOLD,
    rho: float | None = None,
    warmup: int | None = None,
) -> tuple[list[AnomalyVerdict], DetectionState]:
    """Drive a whole frame sequence through :func:`step`."""
    if warmup is None:
        state = DetectionState(baseline=baseline, variant=variant)
    else:
        state = DetectionState(baseline=baseline, variant=variant, warmup=warmup)
    for period, topo in topologies.items():
        state.register_period(period, topo)
    verdicts = []
    for frame in frames:
        verdict, state = step(state, frame, threshold=threshold, rho=rho)
        verdicts.append(verdict)
    return verdicts, state
