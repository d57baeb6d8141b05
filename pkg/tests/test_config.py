import numpy as np
import pytest

from dfplan.config import (ConfigError, bundled_config, emit_scenario, load_scenario, load_study, scenario_to_dict)

MINIMAL = """\
schema_version: 1
robot:
  model: nav2d
grid:
  origin: [0.0, 0.0, 0.0]
  resolution: 0.1
  dims: [20, 20, 1]
start: [0.2, 0.2]
goal: [1.5, 1.5]
"""


def test_minimal_scenario_defaults():
    sc = load_scenario(MINIMAL)
    assert sc.model.dof == 2
    assert sc.world.kind == "signed" and sc.world.sensing == "omniscient"
    assert sc.cfg.monitor_rate == 250.0
    assert sc["seed"] == 0
    assert np.array_equal(sc.goal, [1.5, 1.5])


@pytest.mark.parametrize("name", ["floor_pickup", "replan_budget", "nav_sensing"])
def test_round_trip(name):
    sc = load_scenario(bundled_config(name))
    text = emit_scenario(sc)
    sc2 = load_scenario(text)
    assert scenario_to_dict(sc2) == scenario_to_dict(sc)
    assert emit_scenario(sc2) == text


def test_missing_field_is_named_with_line():
    bad = MINIMAL.replace("  resolution: 0.1\n", "")
    with pytest.raises(ConfigError) as e:
        load_scenario(bad)
    assert "grid.resolution" in str(e.value)
    assert e.value.line == 4


def test_wrong_type_reports_line():
    bad = MINIMAL.replace("dims: [20, 20, 1]", "dims: [20, twenty, 1]")
    with pytest.raises(ConfigError) as e:
        load_scenario(bad)
    assert e.value.line == 7
    assert "grid.dims" in str(e.value)


def test_unknown_field_and_bad_dimension():
    with pytest.raises(ConfigError, match="unknown field 'colour'"):
        load_scenario(MINIMAL + "colour: red\n")
    with pytest.raises(ConfigError, match="expected 2 values"):
        load_scenario(MINIMAL.replace("goal: [1.5, 1.5]", "goal: [1.5, 1.5, 0.0]"))
    with pytest.raises(ConfigError, match="unknown robot model"):
        load_scenario(MINIMAL.replace("model: nav2d", "model: hexapod"))


def test_bad_waypoints_and_yaml_syntax():
    moving = """moving:
  - shape: {type: cuboid, center: [1, 1, 0], half_extents: [0.1, 0.1, 0.1]}
    waypoints:
      - {t: 1.0, center: [1, 1, 0]}
      - {t: 0.5, center: [1, 1, 0]}
"""
    with pytest.raises(ConfigError, match="strictly increasing") as e:
        load_scenario(MINIMAL + moving)
    assert e.value.line is not None
    with pytest.raises(ConfigError, match="invalid YAML") as e:
        load_scenario(MINIMAL + "start: [1, 2\n")
    with pytest.raises(ConfigError, match="schema_version"):
        load_scenario(MINIMAL.replace("schema_version: 1", "schema_version: 7"))


def test_study_config():
    d = load_study(bundled_config("study_full_scale"))
    assert d.case == "nav2d"
    assert d.n_pairs == 153
    assert d.n_problems == 15300
    d2 = load_study("schema_version: 1\ncase: arm\nn_states: 4\nlm: {max_iters: 7}\n")
    assert d2.n_states == 4 and d2.lm.max_iters == 7 and d2.dt == 0.5
    with pytest.raises(ConfigError, match="case"):
        load_study("schema_version: 1\nn_states: 4\n")
