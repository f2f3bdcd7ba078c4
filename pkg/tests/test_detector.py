"""Streaming detection: weighted model fit, scoring, feedback, re-anchoring."""

from __future__ import annotations

import math

import numpy as np
import pytest

from gridcal.detector import (
    DetectionState,
    MappingVariant,
    fit_model,
    reanchor,
    run_stream,
    score,
    step,
)
from gridcal.errors import IslandingError, ModelError
from gridcal.mapping import BaselineContext, ContextAgnosticFrame, MeasurementFrame
from gridcal.netmodel import observed_edges
from gridcal.scengen import ScenarioConfig, generate_scenario
from gridcal.weighting import compute_weights

from test_mapping import dc_frame


def frames_of(values, edge_ids=(1, 2)):
    return [
        ContextAgnosticFrame(t + 1, np.asarray(v, dtype=float), tuple(edge_ids))
        for t, v in enumerate(values)
    ]


class TestFitModel:
    def test_constant_history_floors_sigma(self):
        history = frames_of([[2.0, -1.0]] * 5)
        model = fit_model(history, compute_weights(np.zeros(5), rho=1.0))
        assert np.allclose(model.means, [2.0, -1.0])
        assert np.allclose(model.stdevs, [1e-6 * 2.0, 1e-6 * 1.0])

    def test_point_mass_weight_reproduces_first_frame(self):
        history = frames_of([[1.0, 5.0], [9.0, -9.0]])
        weights = compute_weights(np.array([0.0, 100.0]), rho=1.0)
        assert np.allclose(weights.weights, [1.0, 0.0])
        model = fit_model(history, weights)
        assert np.allclose(model.means, [1.0, 5.0])

    def test_hand_checked_weighted_moments(self):
        """Uniform weights over values {1, 3}: mean 2, stdev 1."""
        history = frames_of([[1.0], [3.0]], edge_ids=(4,))
        model = fit_model(history, compute_weights(np.zeros(2), rho=1.0))
        assert model.means[0] == pytest.approx(2.0)
        assert model.stdevs[0] == pytest.approx(1.0)

    def test_empty_history_rejected(self):
        with pytest.raises(ModelError, match="empty history"):
            fit_model([], compute_weights(np.zeros(1), rho=1.0))


class TestScore:
    def test_exact_match_scores_zero(self):
        model = fit_model(frames_of([[1.0, 2.0], [1.0, 4.0]]), compute_weights(np.zeros(2), rho=1.0))
        verdict = score(ContextAgnosticFrame(3, np.array([1.0, 3.0]), (1, 2)), model)
        assert verdict.score == pytest.approx(0.0)
        assert not verdict.is_anomalous

    def test_single_deviating_edge_arithmetic(self):
        """One branch three sigmas out: score 3, argmax on that branch."""
        history = frames_of([[0.0, -1.0], [0.0, 1.0]])
        model = fit_model(history, compute_weights(np.zeros(2), rho=1.0))
        verdict = score(ContextAgnosticFrame(3, np.array([0.0, 3.0]), (1, 2)), model)
        assert verdict.score == pytest.approx(3.0)
        assert verdict.argmax_edge == 2

    def test_tie_broken_to_lowest_branch_id(self):
        history = frames_of([[-1.0, -1.0], [1.0, 1.0]])
        model = fit_model(history, compute_weights(np.zeros(2), rho=1.0))
        verdict = score(ContextAgnosticFrame(3, np.array([2.0, 2.0]), (1, 2)), model)
        assert verdict.argmax_edge == 1

    def test_index_mismatch_rejected(self):
        model = fit_model(frames_of([[0.0]], edge_ids=(1,)), compute_weights(np.zeros(1), rho=1.0))
        with pytest.raises(ModelError, match="branches"):
            score(ContextAgnosticFrame(2, np.array([0.0, 0.0]), (1, 2)), model)


@pytest.fixture(scope="module")
def small_scenario():
    config = ScenarioConfig(
        case="bench30",
        seed=5,
        n_periods=4,
        n_tau=10,
        n_anomalies=3,
        sensor_fraction=0.4,
    )
    return generate_scenario(config)


def scenario_baseline(scenario):
    return BaselineContext.build(scenario.case, scenario.sensor_set)


class TestStep:
    def test_stationary_stream_stays_quiet(self, bench30):
        ss = observed_edges(bench30, [b.id for b in bench30.buses][:10])
        ctx = BaselineContext.build(bench30, ss)
        topo = bench30.baseline_topology()
        state = DetectionState(baseline=ctx, warmup=0)
        frame_proto = dc_frame(bench30, topo, ctx.injections, ss)
        for tick in range(1, 20):
            frame = MeasurementFrame(tick, 1, frame_proto.flows, frame_proto.injections, frame_proto.edge_ids)
            verdict, state = step(state, frame, topology=topo)
            assert verdict.score <= 1e-3
        assert state.anomalous_ticks == set()

    def test_tick_must_be_consecutive(self, small_scenario):
        state = DetectionState(baseline=scenario_baseline(small_scenario))
        frame = small_scenario.frames[3]
        with pytest.raises(ModelError, match="expected tick 1"):
            step(state, frame, topology=small_scenario.period_topologies[0])

    def test_flagged_tick_gets_zero_weight_afterwards(self, small_scenario):
        """Once a tick lands in the flagged set, every later model fit
        gives it zero weight."""
        scenario = small_scenario
        state = DetectionState(baseline=scenario_baseline(scenario), warmup=2)
        topologies = scenario.topologies_by_period()
        truth = sorted(scenario.truth_ticks)
        for frame in scenario.frames:
            _, state = step(state, frame, threshold=1e3, topology=topologies[frame.period])
        assert set(truth) <= state.anomalous_ticks
        from gridcal.weighting import compute_weights as cw

        distances = np.zeros(state.tick_count)
        weights = cw(distances, rho=1.0, anomalous=state.anomalous_ticks)
        for tick in state.anomalous_ticks:
            assert weights.weights[tick - 1] == 0.0

    def test_warmup_blocks_feedback_but_not_scores(self, small_scenario):
        scenario = small_scenario
        state = DetectionState(baseline=scenario_baseline(scenario), warmup=10**9)
        topologies = scenario.topologies_by_period()
        scores = []
        for frame in scenario.frames:
            verdict, state = step(state, frame, threshold=1e3, topology=topologies[frame.period])
            scores.append(verdict.score)
        assert state.anomalous_ticks == set()
        assert max(scores) > 1e3  # anomalies still scored far above threshold

    def test_replay_is_deterministic(self, small_scenario):
        scenario = small_scenario
        runs = []
        for _ in range(2):
            verdicts, _ = run_stream(
                scenario_baseline(scenario),
                scenario.frames,
                scenario.topologies_by_period(),
                threshold=50.0,
                warmup=scenario.config.n_tau,
            )
            runs.append([(v.tick, v.score, v.is_anomalous) for v in verdicts])
        assert runs[0] == runs[1]

    def test_threshold_monotone_at_first_divergence(self, small_scenario):
        """Raising the threshold cannot flag a tick the lower threshold
        passed, on the prefix where both runs share identical history."""
        scenario = small_scenario
        low, high = 5.0, 500.0
        verdicts = {}
        for thr in (low, high):
            vs, _ = run_stream(
                scenario_baseline(scenario),
                scenario.frames,
                scenario.topologies_by_period(),
                threshold=thr,
                warmup=2,
            )
            verdicts[thr] = vs
        for v_low, v_high in zip(verdicts[low], verdicts[high]):
            if v_low.is_anomalous != v_high.is_anomalous:
                assert v_low.is_anomalous and not v_high.is_anomalous
                break

    def test_unmappable_frame_flagged_with_cause(self, small_scenario):
        scenario = small_scenario
        state = DetectionState(baseline=scenario_baseline(scenario), warmup=0)
        topologies = scenario.topologies_by_period()
        _, state = step(state, scenario.frames[0], topology=topologies[1])
        broken = MeasurementFrame(
            tick=2,
            period=1,
            flows=scenario.frames[1].flows[:-1],
            injections=scenario.frames[1].injections,
            edge_ids=scenario.frames[1].edge_ids[:-1],
        )
        verdict, state = step(state, broken)
        assert verdict.is_anomalous
        assert verdict.error_cause is not None
        assert math.isinf(verdict.score)
        assert 2 in state.anomalous_ticks


class TestEndToEnd:
    def test_noise_free_anomalies_dominate_scores(self, small_scenario):
        """On exact DC data every seeded anomaly tick outranks every
        normal tick."""
        scenario = small_scenario
        verdicts, _ = run_stream(
            scenario_baseline(scenario),
            scenario.frames,
            scenario.topologies_by_period(),
            threshold=10.0,
            warmup=scenario.config.n_tau,
        )
        scores = np.array([v.score for v in verdicts])
        truth = np.array(sorted(scenario.truth_ticks)) - 1
        normal = np.setdiff1d(np.arange(len(scores)), truth)
        assert scores[truth].min() > scores[normal].max()

    def test_full_protocol_scores_every_tick(self, bench30):
        config = ScenarioConfig(
            case="bench30", seed=1, n_periods=6, n_tau=8, n_anomalies=4, sensor_fraction=0.5
        )
        scenario = generate_scenario(config)
        verdicts, _ = run_stream(
            scenario_baseline(scenario),
            scenario.frames,
            scenario.topologies_by_period(),
            warmup=config.n_tau,
        )
        assert len(verdicts) == config.n_ticks
        assert [v.tick for v in verdicts] == list(range(1, config.n_ticks + 1))


class TestReanchor:
    def test_identical_baseline_is_noop(self, small_scenario):
        scenario = small_scenario
        baseline = scenario_baseline(scenario)
        verdicts, state = run_stream(
            baseline,
            scenario.frames[:20],
            scenario.topologies_by_period(),
            warmup=scenario.config.n_tau,
        )
        fresh = reanchor(state, BaselineContext.build(scenario.case, scenario.sensor_set))
        assert np.abs(fresh.mapped.view() - state.mapped.view()).max() <= 1e-10
        assert fresh.anomalous_ticks == state.anomalous_ticks

    def test_disconnected_baseline_rejected(self, bench30, small_scenario):
        incident = [br.id for br in bench30.branches if 22 in (br.from_bus, br.to_bus)]
        bad_topo = bench30.baseline_topology().without(*incident)
        p = bench30.base_injections_pu()
        if p[bench30.bus_index[22]] == 0.0:
            p[bench30.bus_index[22]] = 0.1
        with pytest.raises(IslandingError):
            BaselineContext.build(
                bench30, small_scenario.sensor_set, topology=bad_topo, injections=p
            )

    def test_reanchor_after_shift_reduces_residuals(self, bench30):
        """Projection-only detection on a persistent load shift: moving
        the baseline injections to the shifted level drops the residuals
        for every later tick."""
        config = ScenarioConfig(
            case="bench30",
            seed=9,
            n_periods=4,
            n_tau=12,
            n_anomalies=0,
            sensor_fraction=0.5,
            n_shift_events=1,
            shift_ticks=(20,),
            shift_magnitude=0.4,
        )
        scenario = generate_scenario(config)
        baseline = scenario_baseline(scenario)
        topologies = scenario.topologies_by_period()

        def residuals_after(state, frames):
            out = []
            for frame in frames:
                _, state = step(state, frame, threshold=1e9)
                out.append(np.abs(state.mapped.view()[-1] - state.baseline.baseline_flows).max())
            return np.median(out)

        head, tail = scenario.frames[:24], scenario.frames[24:36]
        plain = DetectionState(baseline=baseline, variant=MappingVariant.PROJECTION, warmup=10**9)
        for period, topo in topologies.items():
            plain.register_period(period, topo)
        for frame in head:
            _, plain = step(plain, frame, threshold=1e9)

        shifted_inj = scenario.frames[23].injections
        new_baseline = BaselineContext.build(
            scenario.case, scenario.sensor_set, injections=shifted_inj
        )
        anchored = reanchor(plain, new_baseline)

        med_plain = residuals_after(plain, tail)
        med_anchored = residuals_after(anchored, tail)
        assert med_anchored < med_plain
