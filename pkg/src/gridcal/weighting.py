"""History weighting from topology distances.

Historical ticks are weighted by how electrically similar their
switching state was to the current one.  Each branch in the symmetric
difference of two period topologies contributes the mean absolute
outage ratio it exerts over the union edge set; the distance is the sum
of contributions.  Distances extend to ticks block-wise (every tick of
a period shares its period's distance; current-period ticks are at
distance zero), and weights come from the closed-form solution of the
simplex-constrained bias-variance problem

    min_w  wᵀd + (ρ/2)‖w‖²   s.t.  Σw = 1, w ≥ 0,

namely w_τ = max{(λ* − d_τ)/ρ, 0} with the unique level λ* satisfying
Σ max{(λ* − d_τ)/ρ, 0} = 1.  The level is found exactly by sorting and
scanning breakpoints — no iterative tolerance.  Ticks already flagged
anomalous are zeroed afterwards and the rest renormalized.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import BridgeError, ModelError
from .netmodel import GridCase, Topology, symmetric_difference
from .sensitivity import LinearGridModel

__all__ = [
    "GraphDistance",
    "TickWeights",
    "edge_contribution",
    "graph_distance",
    "tickwise_distances",
    "solve_water_level",
    "default_rho",
    "assign_weights",
    "compute_weights",
    "DistanceCalculator",
]

log = logging.getLogger(__name__)

# Stand-in contribution for bridge branches, whose outage ratios do not
# exist: at least as large as any real contribution seen alongside it.
_BRIDGE_FALLBACK_FLOOR = 1.0


@dataclass(frozen=True)
class GraphDistance:
    from_period: int
    to_period: int
    value: float


@dataclass(frozen=True, eq=False)
class TickWeights:
    """Per-tick distances and the weights derived from them.

    ``water_level`` is the multiplier solving the water-filling
    equation; ``rho`` the variance weight it was solved under.
    """

    distances: np.ndarray
    weights: np.ndarray
    water_level: float
    rho: float
    anomalous_ticks: frozenset[int]


def _union_model(case: GridCase, union_edges: frozenset[int]) -> LinearGridModel:
    return LinearGridModel(case, Topology(case, tuple(union_edges)))


def edge_contribution(case: GridCase, union_edges, k: int, model: LinearGridModel | None = None) -> float:
    """Mean absolute outage ratio of branch ``k`` over the other union
    branches: (1/|union|) Σ_{l≠k} |d_l(k)|, on the union graph.

    Raises :class:`BridgeError` if ``k`` bridges the union graph;
    callers decide the substitution policy.
    """
    union = frozenset(union_edges)
    if k not in union:
        raise ModelError(f"branch {k} is not in the union edge set")
    if model is None:
        model = _union_model(case, union)
    others = tuple(e for e in sorted(union) if e != k)
    ratios = model.outage_ratios(k, others)
    return float(np.abs(ratios).sum() / len(union))


class DistanceCalculator:
    """Graph-distance computation with caching.

    Contributions are cached by (union edge set, branch) and distances
    by the unordered topology pair, so a detector re-scoring the same
    period pairs tick after tick pays for each sensitivity solve once.
    """

    def __init__(self, case: GridCase):
        self.case = case
        self._contrib: dict[tuple[frozenset[int], int], float] = {}
        self._distance: dict[frozenset[frozenset[int]], float] = {}
        self._models: dict[frozenset[int], LinearGridModel] = {}

    def _model(self, union: frozenset[int]) -> LinearGridModel:
        model = self._models.get(union)
        if model is None:
            model = _union_model(self.case, union)
            self._models[union] = model
        return model

    def contribution(self, union: frozenset[int], k: int) -> float | None:
        """Contribution of one branch, or None for a bridge."""
        key = (union, k)
        if key not in self._contrib:
            try:
                value = edge_contribution(self.case, union, k, self._model(union))
            except BridgeError:
                value = None
            self._contrib[key] = value
        return self._contrib[key]

    def distance(self, t1: Topology, t2: Topology) -> float:
        key = frozenset((t1.edge_set, t2.edge_set))
        cached = self._distance.get(key)
        if cached is not None:
            return cached
        differing = symmetric_difference(t1, t2)
        union = t1.edge_set | t2.edge_set
        contributions: dict[int, float | None] = {
            k: self.contribution(union, k) for k in differing
        }
        real = [v for v in contributions.values() if v is not None]
        bridges = [k for k, v in contributions.items() if v is None]
        if bridges:
            fallback = max(real, default=0.0)
            fallback = max(fallback, _BRIDGE_FALLBACK_FLOOR)
            log.warning(
                "branches %s bridge the union graph; substituting contribution %.3g",
                sorted(bridges),
                fallback,
            )
            real.extend(fallback for _ in bridges)
        value = float(sum(real))
        self._distance[key] = value
        return value


def graph_distance(t1: Topology, t2: Topology, calculator: DistanceCalculator | None = None) -> GraphDistance:
    """Distance between two period topologies: sum of contributions of
    the branches active in exactly one of them."""
    calc = calculator if calculator is not None else DistanceCalculator(t1.case)
    return GraphDistance(t1.label, t2.label, calc.distance(t1, t2))


def tickwise_distances(period_distances, n_tau: int, current_tick_count: int) -> np.ndarray:
    """Extend per-period distances to per-tick distances.

    Period t (1-based) covers ticks (t−1)·n_tau+1 … t·n_tau and every
    tick in it gets that period's distance; ticks after the last listed
    period (the current period, possibly partial) get zero.
    """
    if n_tau <= 0:
        raise ModelError(f"ticks per period must be positive, got {n_tau}")
    if current_tick_count < 0:
        raise ModelError("tick count must be nonnegative")
    out = np.zeros(current_tick_count)
    for t, dist in enumerate(period_distances):
        lo = t * n_tau
        hi = min((t + 1) * n_tau, current_tick_count)
        if lo >= current_tick_count:
            break
        out[lo:hi] = dist
    return out


def solve_water_level(distances, rho: float) -> float:
    """The unique λ with Σ max{(λ − d_τ)/ρ, 0} = 1, solved exactly.

    Sorting d ascending, on the interval (d_(m), d_(m+1)] the sum is
    (mλ − Σ_{i≤m} d_(i))/ρ, so each candidate level is
    λ_m = (ρ + Σ_{i≤m} d_(i))/m; the valid one lands in its own
    interval.
    """
    d = np.asarray(distances, dtype=float)
    if d.size == 0:
        raise ModelError("cannot solve for a water level with no ticks")
    if not np.all(np.isfinite(d)) or np.any(d < 0):
        raise ModelError("distances must be finite and nonnegative")
    if rho <= 0:
        raise ModelError(f"variance weight must be positive, got {rho}")
    ds = np.sort(d)
    cumulative = np.cumsum(ds)
    for m in range(1, ds.size + 1):
        level = (rho + cumulative[m - 1]) / m
        if level > ds[m - 1] and (m == ds.size or level <= ds[m]):
            return float(level)
    raise ModelError("water-filling scan found no valid level")  # pragma: no cover


def default_rho(distances) -> float:
    """Default variance weight when none is configured: the mean tick
    distance plus a small epsilon so it is strictly positive."""
    d = np.asarray(distances, dtype=float)
    return float(d.mean() + 1e-6) if d.size else 1e-6


def assign_weights(distances, water_level: float, rho: float, anomalous=frozenset()) -> TickWeights:
    """Weights w_τ = max{(λ − d_τ)/ρ, 0}, anomalous ticks zeroed, then
    normalized to sum to one.

    Ticks are 1-based: ``anomalous`` holds tick numbers, position τ−1
    in the arrays.  If masking zeroes every weight the distance-only
    weights are used unchanged (with a warning): a stream where every
    historical tick was flagged still needs a model.
    """
    d = np.asarray(distances, dtype=float)
    anomalous = frozenset(int(t) for t in anomalous)
    raw = np.maximum((water_level - d) / rho, 0.0)
    masked = raw.copy()
    for tick in anomalous:
        if 1 <= tick <= d.size:
            masked[tick - 1] = 0.0
    total = masked.sum()
    if total <= 0.0:
        if raw.sum() <= 0.0:
            raise ModelError("all weights are zero even before anomaly masking")
        log.warning("every weighted tick is flagged anomalous; ignoring the anomaly mask")
        masked = raw
        total = raw.sum()
    return TickWeights(d, masked / total, float(water_level), float(rho), anomalous)


def compute_weights(distances, rho: float | None = None, anomalous=frozenset()) -> TickWeights:
    """Convenience composition: solve the level, then assign weights."""
    rho_val = default_rho(distances) if rho is None else float(rho)
    level = solve_water_level(distances, rho_val)
    return assign_weights(distances, level, rho_val, anomalous)
