"""
Experiment configuration and its text file format.

A configuration file holds one ``key = value`` pair per line. Nested sections
use dotted keys and values are Python literals::

    # scenario (a), three seeds
    algorithm = 'adaptive'
    scenario = 'a'
    seeds = [0, 1, 2]
    n_epochs = 500
    sac.gamma = 0.97
    rollout.omega = 10.0
    model.hidden_layer_sizes = (128, 128)

Keys left out keep their defaults; unknown keys are rejected.
"""
from pathlib import Path

from .base import BaseConfig, ConfigError, _check_range, format_value, parse_key_values
from .driving_env import EnvConfig
from .ensemble_dynamics_model import ModelConfig
from .reward_shaping import ShapingConfig
from .soft_actor_critic import SACConfig
from .uncertainty_aware_trainer import ALGORITHMS, RolloutConfig

SECTIONS = ("env", "sac", "model", "rollout", "shaping")


class ExperimentConfig(BaseConfig):
    """
    Everything one experiment needs, sections included.

    Parameters
    ----------
    algorithm : {"adaptive", "fixed_k", "vanilla"}, default="adaptive"
        Uncertainty-truncated rollouts, fixed-length rollouts, or plain SAC.

    fixed_k : int, default=1
        Rollout length of the ``fixed_k`` algorithm.

    scenario : str, default="a"
        Preset name or path of a scenario file.

    master_seed : int, default=0

    seeds : list of int, default=None
        Seeds of repeated trials; ``[master_seed]`` when None.

    n_epochs : int, default=500
        One real episode per epoch.

    warmup_steps : int, default=1000
        Real transitions collected before SAC updates and rollouts start.

    de_capacity, dm_capacity : int, default=32768
        Capacities of the real and the imagined buffers.

    env, sac, model, rollout, shaping : section configs, default=None
        Default-constructed when None.

    output_dir : str, default="runs"

    n_jobs : int, default=None
        Processes used for independent seeds.

    eval_episodes : int, default=20
        Episodes per scenario and noise condition in evaluation.

    noise_level : float, default=0.1
        Evaluation action-noise std as a fraction of the action range width.

    smoothing : float, default=0.9
        Factor of the moving average applied to reward curves.

    record_wall_time : bool, default=True
        Store epoch wall time in the metrics; turn off for byte-identical
        reruns.

    verbose : int, default=0
    """

    def __init__(
        self,
        algorithm="adaptive",
        fixed_k=1,
        scenario="a",
        master_seed=0,
        seeds=None,
        n_epochs=500,
        warmup_steps=1000,
        de_capacity=32768,
        dm_capacity=32768,
        env=None,
        sac=None,
        model=None,
        rollout=None,
        shaping=None,
        output_dir="runs",
        n_jobs=None,
        eval_episodes=20,
        noise_level=0.1,
        smoothing=0.9,
        record_wall_time=True,
        verbose=0,
    ):
        self.algorithm = algorithm
        self.fixed_k = fixed_k
        self.scenario = scenario
        self.master_seed = master_seed
        self.seeds = seeds
        self.n_epochs = n_epochs
        self.warmup_steps = warmup_steps
        self.de_capacity = de_capacity
        self.dm_capacity = dm_capacity
        self.env = env if env is not None else EnvConfig()
        self.sac = sac if sac is not None else SACConfig()
        self.model = model if model is not None else ModelConfig()
        self.rollout = rollout if rollout is not None else RolloutConfig()
        self.shaping = shaping if shaping is not None else ShapingConfig()
        self.output_dir = output_dir
        self.n_jobs = n_jobs
        self.eval_episodes = eval_episodes
        self.noise_level = noise_level
        self.smoothing = smoothing
        self.record_wall_time = record_wall_time
        self.verbose = verbose

    @property
    def run_seeds(self):
        return [self.master_seed] if self.seeds is None else list(self.seeds)

    def _validate_hyperparameters(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(
                "algorithm must be one of %s, got %r" % (ALGORITHMS, self.algorithm)
            )
        _check_range("fixed_k", self.fixed_k, 0)
        _check_range("master_seed", self.master_seed, 0)
        for seed in self.run_seeds:
            _check_range("seeds", seed, 0)
        _check_range("n_epochs", self.n_epochs, 0)
        _check_range("warmup_steps", self.warmup_steps, 1)
        _check_range("de_capacity", self.de_capacity, 1)
        _check_range("dm_capacity", self.dm_capacity, 1)
        _check_range("eval_episodes", self.eval_episodes, 1)
        _check_range("noise_level", self.noise_level, 0.0)
        _check_range("smoothing", self.smoothing, 0.0, 1.0, closed="left")


def config_items(config):
    """Flat ``(dotted_key, value)`` pairs of every leaf hyperparameter."""
    return [
        (key.replace("__", "."), value)
        for key, value in config.get_params(deep=True).items()
        if not isinstance(value, BaseConfig)
    ]


def write_config(config, path):
    text = "".join("%s = %s\n" % (k, format_value(v)) for k, v in config_items(config))
    Path(path).write_text(text, encoding="utf-8")


def apply_pairs(config, pairs):
    """Set dotted ``(key, value)`` pairs; unknown keys raise ValueError."""
    params = {key.replace(".", "__"): value for key, value in pairs}
    for key in params:
        if key.split("__", 1)[0] in SECTIONS and "__" not in key:
            raise ConfigError("%s is a section, set one of its keys instead" % key)
    return config.set_params(**params)


def apply_overrides(config, overrides):
    """Apply ``KEY=VALUE`` strings as given on the command line."""
    return apply_pairs(config, parse_key_values("\n".join(overrides), "--override"))


def read_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError("config file not found: %s" % path)
    config = ExperimentConfig()
    pairs = parse_key_values(path.read_text(encoding="utf-8"), str(path))
    return apply_pairs(config, pairs)
