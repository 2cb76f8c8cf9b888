import logging

import numpy as np
import pandas as pd
import pytest

from uncertainRL.base import ConfigError
from uncertainRL.cli import (
    _build_parser,
    cmd_ablate,
    cmd_eval,
    cmd_train,
    load_config,
    main,
    reward_threshold,
    steps_to_threshold,
    summarize_curves,
)
from uncertainRL.config import (
    ExperimentConfig,
    apply_overrides,
    config_items,
    read_config,
    write_config,
)
from uncertainRL.soft_actor_critic import SACAgent, SACConfig


def _straight_driver(directory):
    """Agent whose deterministic action is always zero steering."""
    agent = SACAgent(23, SACConfig(hidden_layer_sizes=(8,)), random_state=0)
    for p in agent.actor.net.params:
        p[:] = 0.0
    agent.save(directory)
    return directory


def test_config_round_trip(small_config, tmp_path):
    config = small_config(seeds=[0, 1, 2], rollout__omega=np.inf)
    write_config(config, tmp_path / "config.txt")
    loaded = read_config(tmp_path / "config.txt")
    assert config_items(loaded) == config_items(config)
    assert loaded.model.hidden_layer_sizes == (16,)
    assert loaded.rollout.omega == np.inf


def test_config_file_comments_and_defaults(tmp_path):
    path = tmp_path / "exp.txt"
    path.write_text(
        "# three seeds\nseeds = [0, 1, 2]\nsac.gamma = 0.99  # longer horizon\n"
    )
    config = read_config(path).validate()
    assert config.run_seeds == [0, 1, 2]
    assert config.sac.gamma == 0.99
    assert config.sac.tau == 0.005


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        read_config(tmp_path / "absent.txt")
    with pytest.raises(ConfigError):
        apply_overrides(ExperimentConfig(), ["sac=1"])
    with pytest.raises(ValueError):
        apply_overrides(ExperimentConfig(), ["sac.nope=1"])
    with pytest.raises(ConfigError):
        ExperimentConfig(algorithm="mbpo").validate()


def test_load_config_precedence(tmp_path):
    path = tmp_path / "exp.txt"
    path.write_text("seeds = [3, 4]\nsac.gamma = 0.95\n")
    args = _build_parser().parse_args(
        ["train", "--config", str(path), "--seed", "7", "--override", "sac.gamma=0.9"]
    )
    config = load_config(args)
    assert config.run_seeds == [7]
    assert config.sac.gamma == 0.9


def test_unknown_override_fails_cleanly(tmp_path, capsys):
    code = main(["train", "--out", str(tmp_path), "--override", "sac.nope=1"])
    err = capsys.readouterr().err
    assert code == 1
    assert len(err.splitlines()) == 1
    assert err.startswith("uncertainrl train: error:")


def test_out_of_range_value_names_the_key(tmp_path, capsys):
    code = main(["train", "--out", str(tmp_path), "--override", "sac.gamma=1.5"])
    err = capsys.readouterr().err
    assert code == 1
    assert "sac.gamma" in err
    assert not list(tmp_path.iterdir())


def test_bound_command(tmp_path):
    args = ["bound", "--out", str(tmp_path), "--k-max", "10"]
    args += ["--eps-m", "0.2", "0.0", "--eps-pi", "0.1", "0.0"]
    assert main(args) == 0
    table = pd.read_csv(tmp_path / "bound.csv")
    assert len(table) == 44
    row = table[(table.eps_m == 0.2) & (table.eps_pi == 0.1) & (table.k == 0)]
    assert np.isclose(row.C.iloc[0], 111.11, atol=0.01)
    assert np.allclose(table.gap, 2 * table.C)
    minima = pd.read_csv(tmp_path / "bound_minima.csv")
    assert len(minima) == 4
    assert minima[(minima.eps_m == 0.0) & (minima.eps_pi == 0.1)].k_best.iloc[0] == 10


def test_summarize_curves():
    runs = [
        [{"episode_reward": 1.0}, {"episode_reward": 3.0}, {"episode_reward": 0.0}],
        [{"episode_reward": 3.0}, {"episode_reward": 5.0}],
    ]
    summary = summarize_curves(runs, smoothing=0.9)
    assert list(summary.epoch) == [0, 1]
    assert np.allclose(summary["mean"], [2.0, 4.0])
    assert np.allclose(summary["std"], [1.0, 1.0])
    assert np.allclose(summary.lower, [1.0, 3.0])
    assert np.allclose(summary.mean_smoothed, [2.0, 0.9 * 2.0 + 0.1 * 4.0])
    assert (summary.n_seeds == 2).all()


def test_train_command_is_reproducible(small_config, tmp_path):
    path = tmp_path / "exp.txt"
    write_config(small_config(seeds=[0, 1, 2], n_epochs=5), path)
    for out in ("first", "second"):
        assert main(["train", "--config", str(path), "--out", str(tmp_path / out)]) == 0

    first, second = tmp_path / "first", tmp_path / "second"
    assert (first / "config.txt").exists()
    for seed in range(3):
        name = "metrics_seed%d.jsonl" % seed
        assert len((first / name).read_text().splitlines()) == 5
        assert (first / name).read_bytes() == (second / name).read_bytes()
        assert (first / ("checkpoint_seed%d" % seed) / "manifest.txt").exists()
    assert len(pd.read_csv(first / "summary.csv")) == 5
    assert (first / "summary.csv").read_bytes() == (second / "summary.csv").read_bytes()


def test_eval_of_a_straight_driver(tmp_path):
    checkpoint = _straight_driver(tmp_path / "agent")
    report = cmd_eval(
        ExperimentConfig(), checkpoint, ["straight"], 0.0, tmp_path / "a", episodes=2
    )
    assert len(report) == 1
    row = report.iloc[0]
    assert row.aad_yaw_rate == 0.0
    assert row.aad_v_lat == 0.0
    assert row.completion_rate == 1.0
    assert row.collision_rate == 0.0
    assert row.duration_sem == 0.0

    cmd_eval(
        ExperimentConfig(), checkpoint, ["straight"], 0.0, tmp_path / "b", episodes=2
    )
    report_a = (tmp_path / "a" / "eval_report.csv").read_bytes()
    assert report_a == (tmp_path / "b" / "eval_report.csv").read_bytes()


def test_eval_command_adds_a_noisy_condition(tmp_path):
    checkpoint = _straight_driver(tmp_path / "agent")
    args = ["eval", "--checkpoint", str(checkpoint), "--scenarios", "straight", "a"]
    args += ["--noise-level", "0.1", "--episodes", "2", "--out", str(tmp_path / "out")]
    assert main(args) == 0
    report = pd.read_csv(tmp_path / "out" / "eval_report.csv")
    assert list(report.scenario) == ["straight", "straight", "a", "a"]
    assert list(report.noise_level) == [0.0, 0.1, 0.0, 0.1]
    assert (tmp_path / "out" / "eval_report.txt").exists()


def test_eval_of_missing_checkpoint(tmp_path, capsys):
    args = ["eval", "--checkpoint", str(tmp_path / "none"), "--out", str(tmp_path)]
    code = main(args)
    assert code == 1
    assert capsys.readouterr().err.startswith("uncertainrl eval: error:")


def test_ablation(small_config, tmp_path):
    curves, efficiency = cmd_ablate(small_config(n_epochs=1), [1], tmp_path)
    assert list(curves.columns) == [
        "epoch",
        "fixed_k=1",
        "fixed_k=1_smoothed",
        "adaptive",
        "adaptive_smoothed",
        "vanilla",
        "vanilla_smoothed",
    ]
    assert len(curves) == 1
    assert (tmp_path / "ablation.csv").exists()
    assert list(efficiency.variant) == ["fixed_k=1", "adaptive", "vanilla"]
    assert efficiency.threshold.nunique() == 1
    assert np.isclose(efficiency.threshold.iloc[0], curves.vanilla.iloc[0])
    vanilla = efficiency[efficiency.variant == "vanilla"].iloc[0]
    assert vanilla.episodes == 1
    assert np.isclose(vanilla.final_reward, vanilla.threshold)
    saved = pd.read_csv(tmp_path / "ablation_efficiency.csv")
    assert list(saved.columns) == list(efficiency.columns)
    with pytest.raises(ConfigError):
        cmd_ablate(small_config(), [], tmp_path)


def test_reward_threshold_uses_the_final_episodes():
    runs = [
        [{"episode_reward": float(v)} for v in range(100)],
        [{"episode_reward": float(v)} for v in range(100, 200)],
    ]
    assert reward_threshold(runs) == (99 + 150) / 2
    assert reward_threshold(runs, last=1) == (99 + 199) / 2


def test_steps_to_threshold():
    rewards = [0.0, 1.0, 3.0, 3.0]
    run = [
        {"episode_reward": r, "real_steps": 10 * (i + 1)} for i, r in enumerate(rewards)
    ]
    assert steps_to_threshold(run, 2.0, smoothing=0.0) == (30, 3)
    # smoothed curve 0, 0.5, 1.75, 2.375
    assert steps_to_threshold(run, 2.0, smoothing=0.5) == (40, 4)
    assert steps_to_threshold(run, 10.0) == (None, None)


def test_workers_set_up_logging_from_verbose(small_config, tmp_path, monkeypatch):
    levels = []
    monkeypatch.setattr(
        logging, "basicConfig", lambda **kwargs: levels.append(kwargs["level"])
    )
    cmd_train(small_config(n_epochs=1, verbose=2), tmp_path / "train")
    assert levels == [logging.DEBUG]
    levels.clear()
    cmd_ablate(small_config(n_epochs=1, verbose=1), [1], tmp_path / "ablate")
    assert levels == [logging.INFO] * 3


@pytest.fixture(scope="module")
def scenario_a_ablation(tmp_path_factory):
    """Per-run efficiency of a five-seed ablation at the default settings."""
    config = ExperimentConfig(seeds=[0, 1, 2, 3, 4], n_jobs=-1, record_wall_time=False)
    return cmd_ablate(config, [1, 10], tmp_path_factory.mktemp("ablation"))[1]


@pytest.mark.slow
def test_adaptive_reaches_the_vanilla_level_sooner(scenario_a_ablation):
    steps = scenario_a_ablation.set_index("variant").steps_to_threshold.fillna(np.inf)
    assert steps["adaptive"].median() < steps["vanilla"].median()


@pytest.mark.slow
def test_long_fixed_rollouts_do_not_pay_off(scenario_a_ablation):
    final = scenario_a_ablation.groupby("variant").final_reward.median()
    assert final["fixed_k=1"] >= final["fixed_k=10"]
    assert final["adaptive"] >= final["fixed_k=10"]


@pytest.mark.slow
def test_trained_agent_survives_action_noise(tmp_path):
    config = ExperimentConfig(seeds=[0], record_wall_time=False)
    cmd_train(config, tmp_path / "train")
    report = cmd_eval(
        config, tmp_path / "train" / "checkpoint_seed0", ["a"], 0.1, tmp_path
    )
    clean, noisy = report.completion_rate
    assert noisy >= 0.5 * clean
