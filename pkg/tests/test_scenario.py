"""Scenario loading: packaged files, inheritance, validation diagnostics."""

import json

import pytest

from fgddf.errors import ConfigError
from fgddf.scenario import load_scenario, packaged_scenario_names, parse_scenario
from fgddf.variables import VariableKind


def minimal_doc(**overrides) -> dict:
    doc = {
        "name": "tiny",
        "dt": 1.0,
        "steps": 5,
        "seed": 7,
        "topology": [[1, 2]],
        "robots": [
            {"id": 1, "kind": "tracker", "position_noise": [1.0, 1.0], "targets": [1]},
            {"id": 2, "kind": "tracker", "position_noise": [1.0, 1.0], "targets": [1]},
        ],
        "targets": [{"id": 1, "kind": "controlled", "start": [0.0, 0.0]}],
    }
    doc.update(overrides)
    return doc


class TestPackagedScenarios:
    def test_sim5x6_shape(self):
        cfg = load_scenario("sim5x6.json")
        assert cfg.name == "sim5x6"
        assert len(cfg.robots) == 5
        assert len(cfg.targets) == 6
        assert cfg.topology.edges == ((1, 2), (2, 3), (3, 4), (4, 5))
        # 5 poses of 3 states plus 6 planar targets
        assert cfg.global_dimension() == 27
        assert cfg.rule == "hs-cf"
        assert cfg.delivery == 1.0

    def test_sim5x6_allocation_overlap(self):
        alloc = load_scenario("sim5x6.json").allocation()
        common34 = alloc.common(3, 4)
        assert [v.owner for v in common34] == [4, 5]
        assert all(v.kind is VariableKind.TARGET_STATE for v in common34)

    def test_hw2x5_shape(self):
        cfg = load_scenario("hw2x5.json")
        alloc = cfg.allocation()
        for rid in (1, 2):
            assert sum(v.dim for v in alloc.robots[rid]) == 14
        assert cfg.topology.edges == ((1, 2),)
        common = alloc.common(1, 2)
        assert len(common) == 1 and common[0].dim == 4

    def test_hw2x5_measurement_noise(self):
        cfg = load_scenario("hw2x5.json")
        assert cfg.robot(1).position_noise == (1.0, 10.0)
        assert cfg.robot(2).position_noise == (3.0, 3.0)

    def test_dropout_variants_extend_base(self):
        for name, delivery in (
            ("sim5x6_p90.json", 0.9),
            ("sim5x6_p50.json", 0.5),
            ("hw2x5_p90.json", 0.9),
            ("hw2x5_p50.json", 0.5),
        ):
            cfg = load_scenario(name)
            assert cfg.delivery == delivery
        base = load_scenario("sim5x6.json")
        variant = load_scenario("sim5x6_p50.json")
        assert variant.robots == base.robots
        assert variant.targets == base.targets

    def test_packaged_names_cover_shipped_set(self):
        names = packaged_scenario_names()
        assert "sim5x6.json" in names
        assert "hw2x5.json" in names
        assert "homog2x2.json" in names


class TestValidation:
    def test_missing_topology_names_the_field(self):
        doc = minimal_doc()
        del doc["topology"]
        with pytest.raises(ConfigError, match="topology"):
            parse_scenario(doc)

    def test_unknown_robot_kind(self):
        doc = minimal_doc()
        doc["robots"][0]["kind"] = "quadrotor"
        with pytest.raises(ConfigError, match="quadrotor"):
            parse_scenario(doc)

    def test_unknown_target_kind(self):
        doc = minimal_doc()
        doc["targets"][0]["kind"] = "balloon"
        with pytest.raises(ConfigError, match="balloon"):
            parse_scenario(doc)

    def test_robot_referencing_absent_target(self):
        doc = minimal_doc()
        doc["robots"][0]["targets"] = [9]
        with pytest.raises(ConfigError, match="unknown target id 9"):
            parse_scenario(doc)

    def test_unassigned_target_rejected(self):
        doc = minimal_doc()
        doc["targets"].append({"id": 2, "kind": "controlled", "start": [1.0, 1.0]})
        with pytest.raises(ConfigError, match="assigned to no robot"):
            parse_scenario(doc)

    def test_edge_to_unknown_robot(self):
        doc = minimal_doc(topology=[[1, 3]])
        with pytest.raises(ConfigError):
            parse_scenario(doc)

    def test_delivery_out_of_range(self):
        doc = minimal_doc(fusion={"rule": "hs-cf", "delivery": 1.5})
        with pytest.raises(ConfigError, match="delivery"):
            parse_scenario(doc)

    def test_bad_rule_name(self):
        doc = minimal_doc(fusion={"rule": "average"})
        with pytest.raises(ConfigError, match="rule"):
            parse_scenario(doc)

    def test_dubins_requires_landmarks(self):
        doc = minimal_doc()
        doc["robots"][0] = {
            "id": 1, "kind": "dubins", "start": [0.0, 0.0, 0.0], "targets": [1],
        }
        with pytest.raises(ConfigError, match="landmark"):
            parse_scenario(doc)

    def test_velocity_and_waypoints_are_exclusive(self):
        doc = minimal_doc()
        doc["targets"][0].update(velocity=[0.1, 0.0], waypoints=[[1.0, 0.0]])
        with pytest.raises(ConfigError, match="not both"):
            parse_scenario(doc)

    def test_duplicate_robot_ids(self):
        doc = minimal_doc()
        doc["robots"][1]["id"] = 1
        with pytest.raises(ConfigError, match="duplicate robot id"):
            parse_scenario(doc)


class TestLoading:
    def test_extends_resolves_relative_then_packaged(self, tmp_path):
        child = tmp_path / "child.json"
        child.write_text(json.dumps({"extends": "sim5x6.json", "steps": 3}))
        cfg = load_scenario(child)
        assert cfg.steps == 3
        assert cfg.name == "sim5x6"

    def test_extends_cycle_detected(self, tmp_path):
        a = tmp_path / "a.json"
        b = tmp_path / "b.json"
        a.write_text(json.dumps({"extends": "b.json"}))
        b.write_text(json.dumps({"extends": "a.json"}))
        with pytest.raises(ConfigError, match="extends"):
            load_scenario(a)

    def test_invalid_json_reports_file(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_scenario(bad)

    def test_missing_file(self):
        with pytest.raises(ConfigError, match="no such file"):
            load_scenario("does_not_exist.json")

    def test_with_overrides_revalidates(self):
        cfg = load_scenario("sim5x6.json")
        out = cfg.with_overrides(rule="hs-ci", delivery=0.5, mc_runs=3, seed=99)
        assert (out.rule, out.delivery, out.mc_runs, out.seed) == ("hs-ci", 0.5, 3, 99)
        # the original is untouched
        assert (cfg.rule, cfg.delivery) == ("hs-cf", 1.0)
        with pytest.raises(ConfigError):
            cfg.with_overrides(delivery=-0.1)
