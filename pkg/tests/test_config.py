from pathlib import Path

import pytest

from rio.association import MatchStrategy
from rio.config import MatcherKind, MotionModelKind, RunConfig, ScenarioConfig, Variant, load_config
from rio.errors import ConfigurationError
from rio.trajectory import TrajectoryKind


def test_defaults_select_a_simulated_scenario():
    config = load_config()
    assert config.dataset is None
    assert config.scenario == ScenarioConfig()
    assert config.matcher is MatcherKind.NDT
    assert config.motion_model is MotionModelKind.RNN
    assert config.association is MatchStrategy.MUNKRES
    assert config.policy.max_value == pytest.approx(0.0225)
    assert config.ndt.cell_size == 0.5
    assert config.bootstrap_frames == 5


def test_yaml_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(
        "seed: 7\n"
        "matcher: icp\n"
        "association: greedy\n"
        "scenario:\n"
        "  trajectory: {kind: sharp_turns, length: 14.0}\n"
        "  ghost_rate: 0.2\n"
        "policy: {score_threshold: 0.8}\n"
    )
    config = load_config(path)
    assert config.seed == 7
    assert config.matcher is MatcherKind.ICP
    assert config.association is MatchStrategy.GREEDY
    assert config.scenario.trajectory.kind is TrajectoryKind.SHARP_TURNS
    assert config.scenario.trajectory.length == 14.0
    assert config.scenario.ghost_rate == 0.2
    assert config.policy.score_threshold == 0.8


def test_empty_file_is_the_default(tmp_path):
    path = tmp_path / "empty.yaml"
    path.write_text("")
    assert load_config(path).snapshot() == load_config().snapshot()


def test_relative_dataset_paths_resolve_against_the_file(tmp_path):
    data = tmp_path / "data"
    data.mkdir()
    for name in ("scans.jsonl", "imu.csv", "groundtruth.csv"):
        (data / name).write_text("")
    path = tmp_path / "run.yaml"
    path.write_text("dataset: data\n")
    config = load_config(path)
    assert config.dataset == data
    assert config.scenario is None


def test_overrides_replace_top_level_keys():
    config = load_config(None, seed=3, matcher="icp", model_params=None)
    assert config.seed == 3
    assert config.matcher is MatcherKind.ICP


@pytest.mark.parametrize(
    "text",
    [
        "dataset: missing_dir\nscenario: {}\n",
        "dataset: missing_dir\n",
        "unknown_key: 1\n",
        "policy: {max_value: -1}\n",
        "scenario: {ghost_rate: 2.0}\n",
        "max_sync_gap: 0\n",
        "bootstrap_frames: 0\n",
        "- a list\n",
        "matcher: [unclosed\n",
        "model_params: nope.json\n",
    ],
)
def test_bad_configs(tmp_path, text):
    path = tmp_path / "bad.yaml"
    path.write_text(text)
    with pytest.raises(ConfigurationError):
        load_config(path)


def test_unreadable_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "nope.yaml")


@pytest.mark.parametrize(
    "variant, field, value",
    [
        (Variant.ICP, "matcher", MatcherKind.ICP),
        (Variant.CV, "motion_model", MotionModelKind.CONSTANT_VELOCITY),
        (Variant.RADAR_REMOVED, "radar_enabled", False),
    ],
)
def test_variants_change_one_component(variant, field, value):
    base = load_config()
    changed = base.for_variant(variant)
    assert getattr(changed, field) == value
    diff = {k for k, v in changed.snapshot().items() if base.snapshot()[k] != v}
    assert diff == {field}


def test_full_variant_is_the_base():
    base = load_config()
    assert base.for_variant("full").snapshot() == base.snapshot()


def test_configs_are_frozen():
    config = RunConfig()
    with pytest.raises(Exception):
        config.seed = 5


def test_scenario_presets():
    scenario = ScenarioConfig.preset("infinity_loop", seed=4)
    assert scenario.trajectory.kind is TrajectoryKind.INFINITY_LOOP
    assert scenario.trajectory.rate == 100.0
    assert scenario.seed == 4


def test_snapshot_is_json_ready():
    snap = load_config().snapshot()
    assert snap["matcher"] == "ndt"
    assert isinstance(snap["output_dir"], str)
    assert Path(snap["output_dir"]).name
