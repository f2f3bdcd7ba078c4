"""DC power flow and linear sensitivity factors.

Everything here works on the lossless linear model: bus angles solve
``B θ = p`` with the slack angle pinned at zero, and the flow on branch
(i, j) is ``(θ_i − θ_j) / x_ij``, oriented from_bus → to_bus.  Within
that model superposition is exact, which is what makes the two factor
families below usable as equalities rather than approximations:

* transfer factors: flow response on a monitored branch per unit of
  power injected at a bus and withdrawn at the slack (or, for a branch
  transfer, injected at its from-bus and withdrawn at its to-bus);
* outage ratios: flow change on a monitored branch per unit of
  pre-outage flow on a branch being removed.  For a non-bridge branch k
  the post-outage flow on every surviving branch e satisfies
  ``flow_post(e) = flow_pre(e) + d_e(k) · flow_pre(k)`` exactly, for
  any injection vector.

The reduced susceptance matrix is factored once per topology
(:class:`LinearGridModel`) and reused across all transfer-factor
columns and outage vectors; instances are immutable after construction
and safe to share read-only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import BridgeError, IslandingError, ModelError, NumericalError
from .netmodel import GridCase, SensorSet, Topology, connected_components

__all__ = [
    "DcFlowSolution",
    "PtdfMatrix",
    "LodfVector",
    "LinearGridModel",
    "solve_dc",
    "ptdf",
    "lodf",
]

_RESIDUAL_TOL = 1e-10
_BRIDGE_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class DcFlowSolution:
    """Angles (radians, per bus in case order) and per-branch flows
    (per-unit, aligned with ``edge_ids``)."""

    angles: np.ndarray
    flows: np.ndarray
    edge_ids: tuple[int, ...]

    def flow_of(self, branch_id: int) -> float:
        return float(self.flows[self.edge_ids.index(branch_id)])


@dataclass(frozen=True, eq=False)
class PtdfMatrix:
    """Transfer factors: rows are monitored branches, columns are buses
    in case order; entry (l, i) is the flow change on branch l per unit
    injected at bus i and withdrawn at the slack.  The slack column is
    identically zero."""

    values: np.ndarray
    edge_ids: tuple[int, ...]
    topology: Topology
    slack: int


@dataclass(frozen=True, eq=False)
class LodfVector:
    """Outage ratios of one branch onto monitored branches.

    ``values[i]`` multiplies the pre-outage flow on ``outage_edge`` to
    give the flow change on ``edge_ids[i]``; the self-entry, when the
    outage branch is monitored, is −1.
    """

    values: np.ndarray
    edge_ids: tuple[int, ...]
    outage_edge: int
    topology: Topology


class LinearGridModel:
    """Factored DC model of one (case, topology) pair.

    Construction validates connectivity: buses with nonzero degree in
    the active edge set must form a single component containing the
    slack.  Zero-degree buses are tolerated structurally; the solver
    rejects them only if asked to inject power there.
    """

    def __init__(self, case: GridCase, topology: Topology):
        if topology.case is not case and topology.case != case:
            raise ModelError("topology belongs to a different case")
        self.case = case
        self.topology = topology
        self.edge_ids: tuple[int, ...] = topology.active_edges
        n = len(case.buses)
        idx = case.bus_index

        if not self.edge_ids:
            raise ModelError("topology has no active branches")
        components = connected_components(case, self.edge_ids)
        energized = {b for comp in components for b in comp}
        if len(components) > 1:
            raise IslandingError(components)
        if case.slack_bus not in energized:
            raise IslandingError(components + [[case.slack_bus]])
        self._energized = energized

        m = len(self.edge_ids)
        frm = np.empty(m, dtype=np.int64)
        to = np.empty(m, dtype=np.int64)
        x = np.empty(m)
        for k, eid in enumerate(self.edge_ids):
            br = case.branch_by_id[eid]
            frm[k], to[k], x[k] = idx[br.from_bus], idx[br.to_bus], br.reactance
        self._frm, self._to, self._susceptance = frm, to, 1.0 / x

        rows = np.concatenate([np.arange(m)] * 2)
        cols = np.concatenate([frm, to])
        vals = np.concatenate([np.ones(m), -np.ones(m)])
        incidence = sp.coo_matrix((vals, (rows, cols)), shape=(m, n)).tocsr()
        b_full = incidence.T @ sp.diags(self._susceptance) @ incidence

        self._slack_pos = idx[case.slack_bus]
        # Zero-degree buses carry no angle equation; keeping them would
        # leave zero rows in the reduced matrix.
        keep = np.array(
            [
                i
                for i in range(n)
                if i != self._slack_pos and case.buses[i].id in energized
            ],
            dtype=np.int64,
        )
        self._keep = keep
        self._edge_pos = {eid: k for k, eid in enumerate(self.edge_ids)}
        reduced = b_full.tocsc()[keep][:, keep].tocsc()
        try:
            self._lu = spla.splu(reduced)
        except RuntimeError as exc:
            raise NumericalError(f"reduced susceptance matrix is singular: {exc}") from None
        self._reduced = reduced
        self._n = n

    # -- low-level solves ---------------------------------------------------

    def solve_angles(self, injections_pu: np.ndarray) -> np.ndarray:
        """Bus angles for the given injections; any imbalance is carried
        by the slack bus, whose angle is 0."""
        p = np.asarray(injections_pu, dtype=float)
        if p.shape != (self._n,):
            raise ModelError(f"injection vector has shape {p.shape}, expected ({self._n},)")
        dead = [
            self.case.buses[i].id
            for i in range(self._n)
            if i != self._slack_pos
            and self.case.buses[i].id not in self._energized
            and p[i] != 0.0
        ]
        if dead:
            raise IslandingError([[b] for b in dead], f"nonzero injection at isolated buses {dead}")
        rhs = p[self._keep]
        theta_r = self._lu.solve(rhs)
        residual = np.abs(self._reduced @ theta_r - rhs).max(initial=0.0)
        if residual > _RESIDUAL_TOL * max(1.0, np.abs(rhs).max(initial=0.0)):
            raise NumericalError(f"DC solve residual {residual:.3e} above tolerance")
        theta = np.zeros(self._n)
        theta[self._keep] = theta_r
        return theta

    def flows_from_angles(self, theta: np.ndarray) -> np.ndarray:
        return self._susceptance * (theta[self._frm] - theta[self._to])

    def solve(self, injections_pu: np.ndarray) -> DcFlowSolution:
        theta = self.solve_angles(injections_pu)
        return DcFlowSolution(theta, self.flows_from_angles(theta), self.edge_ids)

    def _edge_rows(self, edge_ids) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        try:
            pos = np.array([self._edge_pos[eid] for eid in edge_ids], dtype=np.int64)
        except KeyError as exc:
            raise ModelError(f"branch {exc.args[0]} is not active in this topology") from None
        return self._frm[pos], self._to[pos], self._susceptance[pos]

    def transfer_factors(self, edge_ids) -> np.ndarray:
        """Rows of the bus-to-slack transfer matrix for ``edge_ids``.

        Row l is obtained from one solve against the factored system:
        the flow response of branch l to a unit injection is a linear
        functional of the angles, so its coefficient vector is pushed
        through the (symmetric) inverse directly.
        """
        frm, to, b = self._edge_rows(edge_ids)
        m = len(frm)
        rhs = np.zeros((self._n, m))
        rhs[frm, np.arange(m)] += b
        rhs[to, np.arange(m)] -= b
        sol = self._lu.solve(rhs[self._keep])
        out = np.zeros((m, self._n))
        out[:, self._keep] = sol.T
        return out

    def branch_transfer_response(self, branch_id: int) -> np.ndarray:
        """Angles for a unit transfer injected at the branch's from-bus
        and withdrawn at its to-bus."""
        br = self.case.branch_by_id[branch_id]
        p = np.zeros(self._n)
        p[self.case.bus_index[br.from_bus]] += 1.0
        p[self.case.bus_index[br.to_bus]] -= 1.0
        rhs = p[self._keep]
        theta = np.zeros(self._n)
        theta[self._keep] = self._lu.solve(rhs)
        return theta

    def outage_ratios(self, outage: int, monitored: tuple[int, ...]) -> np.ndarray:
        """Outage-ratio entries of ``outage`` onto ``monitored`` branches
        (all of which must be active here, including the outage)."""
        if outage not in self.topology.edge_set:
            raise ModelError(f"outage branch {outage} is not active in this topology")
        theta = self.branch_transfer_response(outage)
        out_frm, out_to, out_b = self._edge_rows([outage])
        self_transfer = float(out_b[0] * (theta[out_frm[0]] - theta[out_to[0]]))
        denom = 1.0 - self_transfer
        if abs(denom) < _BRIDGE_TOL:
            raise BridgeError(outage)
        frm, to, b = self._edge_rows(monitored)
        vals = b * (theta[frm] - theta[to]) / denom
        for i, eid in enumerate(monitored):
            if eid == outage:
                vals[i] = -1.0
        return vals


def balance_injections(case: GridCase, injections_pu: np.ndarray) -> np.ndarray:
    """Assign any net imbalance to the slack bus so the vector sums to
    zero.  The reduced solve ignores the slack entry, so this only
    changes what the slack is reported to absorb."""
    p = np.array(injections_pu, dtype=float)
    p[case.bus_index[case.slack_bus]] -= p.sum()
    return p


def solve_dc(case: GridCase, topology: Topology, injections_pu) -> DcFlowSolution:
    model = LinearGridModel(case, topology)
    return model.solve(balance_injections(case, np.asarray(injections_pu, dtype=float)))


def ptdf(case: GridCase, topology: Topology, sensor_set: SensorSet, slack: int | None = None) -> PtdfMatrix:
    """Transfer-factor matrix for the observed branches active in
    ``topology``.  ``slack`` other than the case's slack is supported by
    re-basing columns (factor(i, s') = factor(i, s) − factor(s', s))."""
    model = LinearGridModel(case, topology)
    observed_active = tuple(e for e in sensor_set.observed_edges if e in topology.edge_set)
    values = model.transfer_factors(observed_active)
    slack_bus = case.slack_bus if slack is None else int(slack)
    if slack_bus != case.slack_bus:
        if slack_bus not in case.bus_index:
            raise ModelError(f"slack bus {slack_bus} not in case")
        ref_col = values[:, case.bus_index[slack_bus]]
        values = values - ref_col[:, None]
    values[:, case.bus_index[slack_bus]] = 0.0
    return PtdfMatrix(values, observed_active, topology, slack_bus)


def lodf(case: GridCase, topology: Topology, sensor_set: SensorSet, outage: int) -> LodfVector:
    """Outage ratios of ``outage`` (active in ``topology``) onto the
    observed branches active in ``topology``."""
    model = LinearGridModel(case, topology)
    observed_active = tuple(e for e in sensor_set.observed_edges if e in topology.edge_set)
    vals = model.outage_ratios(outage, observed_active)
    return LodfVector(vals, observed_active, outage, topology)
