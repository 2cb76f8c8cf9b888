import pytest


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run slow tests"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def small_config():
    """Factory of a seconds-long experiment; keyword arguments go to set_params."""
    from uncertainRL.config import ExperimentConfig
    from uncertainRL.driving_env import EnvConfig
    from uncertainRL.ensemble_dynamics_model import ModelConfig
    from uncertainRL.reward_shaping import ShapingConfig
    from uncertainRL.soft_actor_critic import SACConfig
    from uncertainRL.uncertainty_aware_trainer import RolloutConfig

    def make(**params):
        config = ExperimentConfig(
            scenario="a",
            n_epochs=3,
            warmup_steps=10,
            de_capacity=4096,
            dm_capacity=4096,
            env=EnvConfig(max_episode_steps=40),
            sac=SACConfig(hidden_layer_sizes=(16,), batch_size=16),
            model=ModelConfig(
                n_members=3, hidden_layer_sizes=(16,), batch_size=8, epochs=2
            ),
            rollout=RolloutConfig(k_base=3, M=2, sanity_bound=1e6),
            shaping=ShapingConfig(
                hidden_layer_sizes=(16,), n_features=8, batch_size=8, warmup=10
            ),
            record_wall_time=False,
        )
        return config.set_params(**params)

    return make
