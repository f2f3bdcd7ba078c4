"""Ranking metrics and the variant sweep."""

from __future__ import annotations

import csv

import numpy as np
import pytest

from gridcal.detector import MappingVariant
from gridcal.errors import ModelError
from gridcal.evaluation import (
    auc,
    f_measure_topk,
    run_variant,
    sweep,
    write_sweep_outputs,
)
from gridcal.scengen import ScenarioConfig, generate_scenario


class TestAuc:
    def test_perfect_ranking(self):
        assert auc([0.1, 0.2, 5.0, 7.0], {3, 4}) == 1.0

    def test_all_ties_is_half(self):
        assert auc([1.0, 1.0, 1.0, 1.0], {2}) == 0.5

    def test_enumerated_pair_example(self):
        """scores (3, 1, 2) with the third tick anomalous: one win, one
        loss across the two pairs."""
        assert auc([3.0, 1.0, 2.0], {3}) == 0.5

    def test_brute_force_pair_counting(self):
        rng = np.random.default_rng(6)
        scores = rng.normal(size=40)
        scores[7] = scores[12] = scores[30]  # inject ties
        truth = {3, 8, 21, 31}
        wins = ties = 0
        for pos in truth:
            for neg in set(range(1, 41)) - truth:
                a, b = scores[pos - 1], scores[neg - 1]
                wins += a > b
                ties += a == b
        expected = (wins + 0.5 * ties) / (len(truth) * (40 - len(truth)))
        assert auc(scores, truth) == pytest.approx(expected, abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(2)
        scores = rng.uniform(0, 5, 50)
        truth = {2, 9, 44}
        base = auc(scores, truth)
        assert auc(3.0 * scores + 7.0, truth) == pytest.approx(base)
        assert auc(np.tanh(scores), truth) == pytest.approx(base)

    def test_degenerate_truth_rejected(self):
        with pytest.raises(ModelError):
            auc([1.0, 2.0], set())
        with pytest.raises(ModelError):
            auc([1.0, 2.0], {1, 2})


class TestFMeasure:
    def test_perfect_topk(self):
        scores = np.zeros(50)
        truth = set(range(1, 21))
        scores[:20] = 10.0
        assert f_measure_topk(scores, truth, 20) == 1.0

    def test_disjoint_topk(self):
        scores = np.zeros(50)
        scores[30:] = 5.0
        assert f_measure_topk(scores, set(range(1, 21)), 20) == 0.0

    def test_half_hit_rate(self):
        """10 of the top 20 in a 20-tick truth set: P = R = F = 0.5."""
        scores = np.zeros(100)
        truth = set(range(1, 21))
        scores[:10] = 10.0  # ticks 1..10 hit
        scores[50:60] = 9.0  # ticks 51..60 miss
        assert f_measure_topk(scores, truth, 20) == pytest.approx(0.5)

    def test_cutoff_ties_prefer_earlier_tick(self):
        scores = np.array([5.0, 1.0, 1.0, 0.0])
        # k=2: tick 1 then the tie between ticks 2 and 3 -> tick 2 wins.
        assert f_measure_topk(scores, {2}, 2) == pytest.approx(2 * 0.5 * 1.0 / 1.5)
        assert f_measure_topk(scores, {3}, 2) == 0.0

    def test_k_equals_truth_size_makes_precision_recall_equal(self):
        rng = np.random.default_rng(11)
        scores = rng.normal(size=60)
        truth = {4, 17, 33, 48}
        f = f_measure_topk(scores, truth, k=len(truth))
        order = np.lexsort((np.arange(1, 61), -scores))
        hits = len(set((order[:4] + 1).tolist()) & truth)
        p = r = hits / 4
        expected = 0.0 if p + r == 0 else 2 * p * r / (p + r)
        assert f == pytest.approx(expected)

    def test_empty_truth_rejected(self):
        with pytest.raises(ModelError):
            f_measure_topk([1.0, 2.0], set())


@pytest.fixture(scope="module")
def eval_scenario():
    return generate_scenario(
        ScenarioConfig(
            case="bench30",
            seed=12,
            n_periods=4,
            n_tau=10,
            n_anomalies=4,
            sensor_fraction=0.5,
        )
    )


class TestRunVariant:
    def test_full_mapping_separates_perfectly_on_exact_data(self, eval_scenario):
        result = run_variant(eval_scenario, "iplc")
        assert result.auc == 1.0
        assert result.f_measure == 1.0
        assert result.undetectable_ticks == ()

    def test_raw_variant_worse_than_full_under_topology_changes(self, eval_scenario):
        full = run_variant(eval_scenario, MappingVariant.FULL)
        raw = run_variant(eval_scenario, MappingVariant.RAW)
        assert raw.auc < full.auc

    def test_unknown_variant_rejected(self, eval_scenario):
        with pytest.raises(ModelError, match="unknown variant"):
            run_variant(eval_scenario, "fancy")

    def test_sensor_restriction_subsets_frames(self, eval_scenario):
        subset = sorted(eval_scenario.sensor_set.buses)[:6]
        result = run_variant(eval_scenario, "iplc", sensors=subset)
        assert result.sensor_count == len(subset)

    def test_sensor_restriction_must_be_subset(self, eval_scenario):
        outside = [
            b.id
            for b in eval_scenario.case.buses
            if b.id not in eval_scenario.sensor_set.buses
        ][:2]
        with pytest.raises(ModelError, match="without generated data"):
            run_variant(eval_scenario, "iplc", sensors=outside)

    def test_more_sensors_no_worse_auc(self, eval_scenario):
        buses = sorted(eval_scenario.sensor_set.buses)
        small = run_variant(eval_scenario, "iplc", sensors=buses[:5])
        large = run_variant(eval_scenario, "iplc")
        assert large.auc >= small.auc - 1e-12


class TestSweep:
    def test_row_count_is_cartesian_product(self):
        config = ScenarioConfig(
            case="bench30", seed=0, n_periods=2, n_tau=6, n_anomalies=2, sensor_fraction=0.4
        )
        rows = sweep(
            config,
            variants=("naive", "ip", "iplc"),
            sensor_fractions=(0.3, 0.5),
            seeds=(0, 1),
        )
        assert len(rows) == 3 * 2 * 2

    def test_failed_cell_recorded_as_missing(self, caplog):
        import logging

        config = ScenarioConfig(
            case="triangle", seed=0, n_periods=2, n_tau=4, n_anomalies=2, sensor_fraction=0.5
        )
        with caplog.at_level(logging.WARNING, logger="gridcal.evaluation"):
            rows = sweep(config, variants=("iplc",), sensor_fractions=(1.0,), seeds=(0,))
        assert rows == [None]
        assert any("failed" in r.message for r in caplog.records)

    def test_outputs_written(self, tmp_path):
        config = ScenarioConfig(
            case="bench30", seed=1, n_periods=2, n_tau=6, n_anomalies=2, sensor_fraction=0.4
        )
        rows = sweep(config, variants=("iplc", "naive"), sensor_fractions=(0.4,), seeds=(1,))
        paths = write_sweep_outputs(rows, tmp_path)
        with paths["results"].open() as fh:
            table = list(csv.DictReader(fh))
        assert {row["variant"] for row in table} == {"iplc", "naive"}
        assert (tmp_path / "figure_data" / "auc_vs_sensors.csv").exists()
        assert (tmp_path / "roc_points.csv").exists()

    def test_deterministic_across_calls(self):
        config = ScenarioConfig(
            case="bench30", seed=2, n_periods=2, n_tau=6, n_anomalies=2, sensor_fraction=0.4
        )
        a = sweep(config, variants=("iplc",), sensor_fractions=(0.4,), seeds=(7,))
        b = sweep(config, variants=("iplc",), sensor_fractions=(0.4,), seeds=(7,))
        assert np.array_equal(a[0].scores, b[0].scores)
        assert a[0].auc == b[0].auc
