import math

import pytest

from spooflab.scenario import (
    Scenario,
    ScenarioError,
    fixture_path,
    load_fixture,
    load_scenario,
    parse_scenario,
    scenario_hash,
    scenario_to_dict,
    validate_scenario,
)

FIXTURES = [
    "clean_feature_rich",
    "attack_rich_static",
    "attack_rich_osc",
    "attack_sparse_static",
    "sweep_window",
    "sweep_speed",
    "course_a",
    "course_b",
]


def minimal_raw(**extra):
    raw = {
        "name": "t",
        "trajectory": {
            "waypoints_m": [[0.0, 0.0, 0.0], [10.0, 0.0, 0.0]],
            "speed_mps": 2.0,
        },
    }
    raw.update(extra)
    return raw


# --- fixtures -----------------------------------------------------------------


@pytest.mark.parametrize("name", FIXTURES)
def test_packaged_fixtures_load_and_validate(name):
    sc = load_fixture(name)
    assert sc.name == name
    assert validate_scenario(sc) == []
    assert len(sc.waypoints_m) >= 2


def test_fixture_path_unknown_name():
    with pytest.raises(FileNotFoundError) as ei:
        fixture_path("does_not_exist")
    assert "available" in str(ei.value)


def test_clean_fixture_has_no_attack():
    sc = load_fixture("clean_feature_rich")
    assert sc.attack is None
    assert sc.placement is None


def test_attack_fixtures_carry_attack_sections():
    for name in ("attack_rich_static", "attack_rich_osc", "attack_sparse_static"):
        sc = load_fixture(name)
        assert sc.attack is not None
        assert sc.placement is not None


def test_defense_fixture_weights_normalized():
    sc = load_fixture("course_b")
    assert sc.defense is not None
    assert sc.defense.w_ori + sc.defense.w_speed == pytest.approx(1.0, abs=1e-9)


# --- parsing -------------------------------------------------------------------


def test_parse_minimal_scenario_uses_defaults():
    sc = parse_scenario(minimal_raw())
    assert sc.world_kind == "feature_rich"
    assert sc.attack is None
    assert sc.defense is None
    assert sc.lidar.channels == 16
    assert sc.odometry.max_correspondence_distance == 1.0
    assert sc.trials == 10
    assert sc.tau_m == 3.0


def test_parse_rejects_unknown_keys():
    with pytest.raises(ScenarioError) as ei:
        parse_scenario(minimal_raw(bogus=1))
    assert "bogus" in str(ei.value)
    with pytest.raises(ScenarioError):
        parse_scenario(minimal_raw(lidar={"channels": 4, "typo_key": 3}))


def test_parse_rejects_missing_trajectory():
    with pytest.raises(ScenarioError) as ei:
        parse_scenario({"name": "t"})
    assert "trajectory" in str(ei.value)


def test_parse_rejects_single_waypoint():
    raw = minimal_raw()
    raw["trajectory"]["waypoints_m"] = [[0.0, 0.0, 0.0]]
    with pytest.raises(ScenarioError):
        parse_scenario(raw)


def test_parse_rejects_bad_world_kind():
    with pytest.raises(ScenarioError):
        parse_scenario(minimal_raw(world={"kind": "mars"}))


def test_parse_rejects_bad_attack_values():
    raw = minimal_raw(attack={"motion": "oscillating", "d_min_m": 5.0, "d_max_m": 5.0})
    with pytest.raises(ScenarioError):
        parse_scenario(raw)


def test_parse_attack_defaults():
    sc = parse_scenario(minimal_raw(attack={}))
    assert sc.attack.shape == "corner"
    assert sc.attack.motion == "oscillating"
    assert sc.attack.window_width == pytest.approx(math.radians(80.0))
    assert sc.attack.d_min == 1.0
    assert sc.attack.d_max == 50.0
    assert sc.placement.mode == "roadside"


def test_parse_defense_weights_must_normalize():
    raw = minimal_raw(defense={"w_ori": 0.7, "w_speed": 0.7})
    with pytest.raises(ScenarioError):
        parse_scenario(raw)


def test_scenario_requires_attack_and_placement_together():
    sc = parse_scenario(minimal_raw(attack={}))
    with pytest.raises(ValueError):
        Scenario(
            name=sc.name,
            world_kind=sc.world_kind,
            world_params=sc.world_params,
            waypoints_m=sc.waypoints_m,
            speed_mps=sc.speed_mps,
            lidar=sc.lidar,
            odometry=sc.odometry,
            attack=sc.attack,
            placement=None,
            defense=None,
            dr_noise=sc.dr_noise,
            trials=sc.trials,
            base_seed=sc.base_seed,
        )


# --- round trip and hashing -------------------------------------------------------


def test_scenario_dict_round_trips_through_parse():
    for name in FIXTURES:
        sc = load_fixture(name)
        d = scenario_to_dict(sc)
        assert d["name"] == sc.name
        assert d["trials"] == sc.trials
        if sc.attack is not None:
            assert d["attack"]["shape"] == sc.attack.shape


def test_scenario_hash_stable_and_sensitive():
    a = parse_scenario(minimal_raw())
    b = parse_scenario(minimal_raw())
    assert scenario_hash(a) == scenario_hash(b)
    c = parse_scenario(minimal_raw(trials=11))
    assert scenario_hash(a) != scenario_hash(c)
    assert len(scenario_hash(a)) == 64


def test_scenario_hash_ignores_out_dir():
    a = parse_scenario(minimal_raw())
    b = parse_scenario(minimal_raw(out_dir="/tmp/somewhere"))
    assert scenario_hash(a) == scenario_hash(b)


def test_load_scenario_from_file(tmp_path):
    p = tmp_path / "s.yaml"
    p.write_text(
        "trajectory:\n"
        "  waypoints_m: [[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]]\n"
        "  speed_mps: 1.0\n"
    )
    sc = load_scenario(p)
    assert sc.name == "s"  # file stem fills in the name
    assert sc.speed_mps == 1.0


def test_load_scenario_bad_yaml(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("trajectory: [unclosed\n")
    with pytest.raises(ScenarioError):
        load_scenario(p)


# --- schedule validation ------------------------------------------------------------


def test_validate_flags_infeasible_injection():
    raw = minimal_raw(
        attack={"d_max_m": 500.0, "cycle_s": 1000.0},
        lidar={"max_range_m": 100.0},
    )
    sc = parse_scenario(raw)
    findings = validate_scenario(sc)
    assert findings, "injection beyond sensor range must be reported"


def test_validate_clean_scenario_no_findings():
    assert validate_scenario(parse_scenario(minimal_raw())) == []
