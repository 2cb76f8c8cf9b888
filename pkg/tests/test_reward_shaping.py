import numpy as np
import pytest

from uncertainRL.base import ConfigError
from uncertainRL.driving_env import EgoState, LaneDrivingEnv, load_scenario
from uncertainRL.dense_network import AdamState
from uncertainRL.reward_shaping import (
    RNDPair,
    ShapingConfig,
    ngu_reward,
    potential,
    potential_reward,
    ultimate_reward,
    update_rnd,
)


def _small_pair(seed=0, **params):
    config = ShapingConfig(hidden_layer_sizes=(16,), n_features=8, **params)
    return RNDPair(4, config, random_state=seed)


def test_potential():
    scenario = load_scenario("a")
    assert np.isclose(potential(EgoState(x_lon=0.0), scenario), -0.9)
    assert potential(EgoState(x_lon=90.0), scenario) == 0.0
    r = potential_reward(EgoState(x_lon=10.0), EgoState(x_lon=10.4), scenario, 0.97)
    assert np.isclose(r, 0.97 * -0.796 + 0.8)


def _recorded_episodes(n_episodes, seed=0):
    """Ego states and observations of random-steering episodes on scenario (a)."""
    env = LaneDrivingEnv(load_scenario("a"))
    rng = np.random.RandomState(seed)
    episodes = []
    for _ in range(n_episodes):
        observations = [env.reset(rng.randint(np.iinfo(np.int32).max))]
        egos = [env.ego]
        done = False
        while not done:
            result = env.step(rng.normal(0.0, 0.05))
            observations.append(result.observation)
            egos.append(env.ego)
            done = result.done
        episodes.append((egos, np.array(observations)))
    return env, episodes


def test_potential_reward_telescopes():
    _, episodes = _recorded_episodes(10)
    scenario = load_scenario("a")
    gamma = 0.97
    for egos, _ in episodes:
        assert len(egos) > 2
        shaped = sum(
            gamma**t * potential_reward(s, s_next, scenario, gamma)
            for t, (s, s_next) in enumerate(zip(egos[:-1], egos[1:]))
        )
        T = len(egos) - 1
        expected = gamma**T * potential(egos[-1], scenario) - potential(
            egos[0], scenario
        )
        assert np.isclose(shaped, expected, rtol=0, atol=1e-12)


def test_shaping_config_validation():
    ShapingConfig().validate()
    with pytest.raises(ConfigError):
        ShapingConfig(L=0.5).validate()
    with pytest.raises(ConfigError):
        ShapingConfig(gamma=1.0).validate()


def test_networks_are_independent():
    pair = _small_pair(seed=3)
    assert pair.fixed_net.checksum() != pair.adjustable_net.checksum()
    again = _small_pair(seed=3)
    assert pair.fixed_net.checksum() == again.fixed_net.checksum()
    assert pair.adjustable_net.checksum() == again.adjustable_net.checksum()


def test_warmup_returns_one():
    pair = _small_pair(warmup=100)
    rng = np.random.RandomState(0)
    rewards = [ngu_reward(pair, rng.normal(size=4)) for _ in range(100)]
    assert rewards == [1.0] * 100
    assert pair.update_count == 100


def test_upper_clamp():
    pair = _small_pair()
    pair.update_count = 200
    pair.novelty_mean = 0.0
    pair._m2 = 0.0
    assert ngu_reward(pair, np.ones(4)) == pair.config.L


def test_lower_floor():
    pair = _small_pair()
    pair.update_count = 200
    pair.novelty_mean = 1e6
    pair._m2 = 200.0
    assert ngu_reward(pair, np.ones(4)) == 1.0


def test_normalization_by_hand():
    pair = _small_pair(warmup=0, L=5.0)
    states = np.random.RandomState(1).normal(size=(3, 4))
    raws = [float(pair.novelty(s)[0]) for s in states]

    for i, s in enumerate(states):
        seen = raws[:i]
        mean = np.mean(seen) if seen else 0.0
        std = max(np.std(seen) if seen else 0.0, pair.config.std_floor)
        expected = min(max((raws[i] - mean) / std, 0.0) + 1.0, 5.0)
        assert np.isclose(ngu_reward(pair, s), expected)
    assert np.isclose(pair.novelty_mean, np.mean(raws))
    assert np.isclose(pair.novelty_std, np.std(raws))


def test_novelty_reward_stays_bounded():
    pair = _small_pair(warmup=10)
    rng = np.random.RandomState(2)
    rewards = np.array([ngu_reward(pair, rng.normal(size=4)) for _ in range(10000)])
    assert np.all(rewards >= 0.0)
    assert np.all(rewards <= pair.config.L)


def test_update_is_zero_when_networks_agree():
    pair = _small_pair()
    pair.adjustable_net = pair.fixed_net.copy()
    pair.adam = AdamState(pair.adjustable_net.params, lr=pair.config.rnd_lr)
    before = pair.adjustable_net.checksum()
    assert update_rnd(pair, np.random.RandomState(0).normal(size=(8, 4))) == 0.0
    assert pair.adjustable_net.checksum() == before


def test_fixed_network_never_changes():
    pair = _small_pair()
    before = pair.fixed_net.checksum()
    rng = np.random.RandomState(0)
    for _ in range(20):
        update_rnd(pair, rng.normal(size=(8, 4)))
    assert pair.fixed_net.checksum() == before


def test_distillation_loss_decreases():
    pair = _small_pair(rnd_lr=1e-4)
    batch = np.random.RandomState(4).normal(size=(32, 4))
    losses = np.array([update_rnd(pair, batch) for _ in range(100)])
    assert np.all(np.diff(losses[::10]) < 0)


def test_visited_states_are_less_novel():
    pair = _small_pair(rnd_lr=1e-3)
    rng = np.random.RandomState(5)
    train = rng.normal(0.0, 1.0, size=(256, 4))
    holdout = rng.normal(3.0, 1.0, size=(256, 4))
    for _ in range(500):
        update_rnd(pair, train[rng.randint(256, size=32)])
    assert np.median(pair.novelty(train)) < np.median(pair.novelty(holdout))


def test_novelty_decays_on_revisit():
    env, episodes = _recorded_episodes(5, seed=1)
    frozen = np.vstack([observations for _, observations in episodes])
    pair = RNDPair(env.observation_size, ShapingConfig(), env.observation_scale(), 0)
    raw_before = pair.novelty(frozen).mean()
    before = np.mean([ngu_reward(pair, s) for s in frozen])

    rng = np.random.RandomState(2)
    for _ in range(1000):
        update_rnd(pair, frozen[rng.randint(len(frozen), size=64)])
    after = np.mean([ngu_reward(pair, s) for s in frozen])
    assert pair.novelty(frozen).mean() < raw_before
    assert after < before


def test_ultimate_reward():
    assert np.isclose(ultimate_reward(0.1, 0.2, 1.5), 1.8)
    assert ultimate_reward(-0.9, 0.0, 1.0) == pytest.approx(0.1)
