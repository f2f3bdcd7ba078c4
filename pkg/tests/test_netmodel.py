"""Case parsing, sensor placement, and topology set operations."""

from __future__ import annotations

import pytest

from gridcal.cases import builtin_case, write_matpower_case
from gridcal.errors import CaseParseError, ModelError
from gridcal.netmodel import (
    Topology,
    case_to_json,
    observed_edges,
    parse_case,
    symmetric_difference,
)

from conftest import TRIANGLE_M


class TestParseMatpower:
    def test_triangle_counts(self):
        case = parse_case(TRIANGLE_M, name="triangle")
        assert len(case.buses) == 3
        assert len(case.branches) == 3
        assert case.slack_bus == 1
        assert case.base_mva == 100.0

    def test_gen_aggregation_per_bus(self):
        text = TRIANGLE_M.replace(
            "mpc.gen = [\n\t1\t100.0",
            "mpc.gen = [\n\t1\t40.0\t0\t300\t-300\t1\t100\t1\t600\t0;\n\t1\t100.0",
        )
        case = parse_case(text)
        assert case.buses[0].p_gen == pytest.approx(140.0)

    def test_out_of_service_gen_ignored(self):
        text = TRIANGLE_M.replace(
            "\t1\t100.0\t0\t300\t-300\t1\t100\t1\t600\t0;",
            "\t1\t100.0\t0\t300\t-300\t1\t100\t0\t600\t0;",
        )
        assert parse_case(text).buses[0].p_gen == 0.0

    def test_branch_status_zero_excluded_from_default_active(self):
        text = TRIANGLE_M.replace(
            "\t2\t3\t0\t1.0\t0\t0\t0\t0\t0\t0\t1\t-360\t360;",
            "\t2\t3\t0\t1.0\t0\t0\t0\t0\t0\t0\t0\t-360\t360;",
        )
        case = parse_case(text)
        assert case.default_active_edges == (1, 3)

    def test_unknown_bus_reference_rejected(self):
        text = TRIANGLE_M.replace("\t3\t1\t0\t1.0", "\t3\t99\t0\t1.0")
        with pytest.raises(ModelError, match="unknown bus 99"):
            parse_case(text)

    def test_no_slack_rejected(self):
        text = TRIANGLE_M.replace("\t1\t3\t0.0", "\t1\t1\t0.0")
        with pytest.raises(ModelError, match="no slack"):
            parse_case(text)

    def test_duplicate_bus_rejected(self):
        text = TRIANGLE_M.replace("\t2\t1\t60.0", "\t1\t1\t60.0")
        with pytest.raises(ModelError, match="duplicate bus"):
            parse_case(text)

    def test_malformed_number_reports_line(self):
        text = TRIANGLE_M.replace("\t2\t1\t60.0", "\t2\t1\tsixty")
        with pytest.raises(CaseParseError, match="line 5"):
            parse_case(text)

    def test_missing_table_rejected(self):
        with pytest.raises(CaseParseError, match="mpc.bus"):
            parse_case("function mpc = x\nmpc.baseMVA = 100;\n")

    def test_comments_and_blank_lines_ignored(self):
        text = TRIANGLE_M.replace(
            "mpc.bus = [", "% a comment\n\nmpc.bus = [  % trailing"
        )
        assert len(parse_case(text).buses) == 3


class TestJsonRoundTrip:
    def test_parse_serialized_case_is_identical(self, triangle):
        assert parse_case(case_to_json(triangle)) == triangle

    def test_benchmark_roundtrip(self, bench30):
        assert parse_case(case_to_json(bench30)) == bench30

    def test_missing_key_rejected(self):
        with pytest.raises(CaseParseError, match="base_mva"):
            parse_case('{"buses": [], "branches": [], "slack_bus": 1}')


class TestMatpowerWriter:
    def test_write_then_parse_preserves_model(self, bench30, tmp_path):
        path = tmp_path / "bench30.m"
        write_matpower_case(bench30, path)
        again = parse_case(path.read_text(), name="bench30")
        assert again == bench30

    def test_benchmark_scale_counts(self, tmp_path):
        case = builtin_case("bench2383")
        path = tmp_path / "bench2383.m"
        write_matpower_case(case, path)
        parsed = parse_case(path.read_text(), name="bench2383")
        assert len(parsed.buses) == 2383
        assert len(parsed.branches) == 2896


class TestObservedEdges:
    def test_single_sensor_sees_incident_branches(self, triangle):
        ss = observed_edges(triangle, [1])
        assert ss.observed_edges == (1, 3)

    def test_all_sensors_see_all_branches(self, triangle):
        ss = observed_edges(triangle, [1, 2, 3])
        assert ss.observed_edges == tuple(br.id for br in triangle.branches)

    def test_empty_sensor_set_is_valid(self, triangle):
        ss = observed_edges(triangle, [])
        assert ss.buses == frozenset()
        assert ss.observed_edges == ()

    def test_unknown_bus_rejected(self, triangle):
        with pytest.raises(ModelError, match="sensor buses"):
            observed_edges(triangle, [7])

    def test_every_observed_edge_touches_a_sensor(self, bench30):
        ss = observed_edges(bench30, [3, 11, 20])
        for eid in ss.observed_edges:
            br = bench30.branch_by_id[eid]
            assert br.from_bus in ss.buses or br.to_bus in ss.buses


class TestSymmetricDifference:
    def test_identical_topologies(self, triangle):
        t = triangle.baseline_topology()
        assert symmetric_difference(t, t) == frozenset()

    def test_single_deletion(self, bench30):
        base = bench30.baseline_topology()
        assert symmetric_difference(base, base.without(7)) == {7}

    def test_disjoint_deletions(self, bench30):
        base = bench30.baseline_topology()
        assert symmetric_difference(base.without(3), base.without(5)) == {3, 5}

    def test_symmetry(self, bench30):
        base = bench30.baseline_topology()
        t1, t2 = base.without(3), base.without(5, 9)
        assert symmetric_difference(t1, t2) == symmetric_difference(t2, t1)

    def test_empty_iff_equal(self, bench30):
        base = bench30.baseline_topology()
        t1 = base.without(4)
        t2 = Topology(bench30, t1.active_edges, label=9)
        assert symmetric_difference(t1, t2) == frozenset()

    def test_mismatched_cases_rejected(self, triangle, bench30):
        with pytest.raises(ModelError, match="different cases"):
            symmetric_difference(triangle.baseline_topology(), bench30.baseline_topology())


class TestTopology:
    def test_unknown_branch_rejected(self, triangle):
        with pytest.raises(ModelError, match="unknown branch"):
            Topology(triangle, (1, 2, 9))

    def test_without_inactive_branch_rejected(self, triangle):
        topo = triangle.baseline_topology().without(2)
        with pytest.raises(ModelError, match="inactive"):
            topo.without(2)

    def test_edges_sorted_and_deduplicated(self, triangle):
        topo = Topology(triangle, (3, 1, 1, 2))
        assert topo.active_edges == (1, 2, 3)
