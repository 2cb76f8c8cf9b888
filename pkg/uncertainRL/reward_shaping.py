"""
Reward shaping: a potential-based progress term and a distillation novelty
bonus, summed with the environment reward into the reward the agent learns.
"""
import logging

import numpy as np
from sklearn.utils import check_random_state

from .base import BaseConfig, _check_input, _check_range
from .dense_network import AdamState, DenseNet

logger = logging.getLogger(__name__)


class ShapingConfig(BaseConfig):
    """
    Parameters
    ----------
    L : float, default=5.0
        Upper clamp of the novelty reward.

    gamma : float, default=0.97
        Discount of the potential difference; matches the agent's discount.

    rnd_lr : float, default=0.001
        Learning rate of the adjustable network.

    std_floor : float, default=1e-6
        Lower bound of the running novelty standard deviation.

    warmup : int, default=100
        Number of novelty samples collected before normalization starts.

    hidden_layer_sizes : tuple of int, default=(64, 64)

    n_features : int, default=32
        Output width of both distillation networks.

    batch_size : int, default=64
        Batch drawn from the real buffer for each adjustable-network update.
    """

    def __init__(
        self,
        L=5.0,
        gamma=0.97,
        rnd_lr=0.001,
        std_floor=1e-6,
        warmup=100,
        hidden_layer_sizes=(64, 64),
        n_features=32,
        batch_size=64,
    ):
        self.L = L
        self.gamma = gamma
        self.rnd_lr = rnd_lr
        self.std_floor = std_floor
        self.warmup = warmup
        self.hidden_layer_sizes = hidden_layer_sizes
        self.n_features = n_features
        self.batch_size = batch_size

    def _validate_hyperparameters(self):
        _check_range("shaping.L", self.L, 1.0)
        _check_range("shaping.gamma", self.gamma, 0.0, 1.0, closed="neither")
        _check_range("shaping.rnd_lr", self.rnd_lr, 0.0, closed="right")
        _check_range("shaping.std_floor", self.std_floor, 0.0, closed="right")
        _check_range("shaping.warmup", self.warmup, 0)
        for width in self.hidden_layer_sizes:
            _check_range("shaping.hidden_layer_sizes", width, 1)
        _check_range("shaping.n_features", self.n_features, 1)
        _check_range("shaping.batch_size", self.batch_size, 1)


def potential(ego, scenario):
    """Negative remaining distance to the goal, normalized by road length."""
    return -(scenario.target_lon - ego.x_lon) / scenario.road_length


def potential_reward(s, s_next, scenario, gamma):
    """``gamma * potential(s_next) - potential(s)``."""
    return gamma * potential(s_next, scenario) - potential(s, scenario)


class RNDPair:
    """
    Fixed random network and the adjustable network trained to imitate it.

    Parameters
    ----------
    n_inputs : int

    config : ShapingConfig, default=None

    input_scale : array-like of shape (n_inputs,), default=None
        Observations are divided by this before entering either network.

    random_state : int, RandomState instance or None, default=None
        The two networks draw their weights from it one after the other, so
        they are initialized independently.

    Attributes
    ----------
    novelty_mean, novelty_std : float
        Welford running statistics of the raw novelty.

    update_count : int
        Number of novelty samples folded into the statistics.
    """

    def __init__(self, n_inputs, config=None, input_scale=None, random_state=None):
        self.config = config if config is not None else ShapingConfig()
        widths = [n_inputs, *self.config.hidden_layer_sizes, self.config.n_features]
        rng = check_random_state(random_state)
        self.fixed_net = DenseNet(widths, random_state=rng)
        self.adjustable_net = DenseNet(widths, random_state=rng)
        self.adam = AdamState(self.adjustable_net.params, lr=self.config.rnd_lr)
        if input_scale is None:
            input_scale = np.ones(n_inputs)
        self.input_scale = np.asarray(input_scale, dtype=np.float64)

        self.update_count = 0
        self.novelty_mean = 0.0
        self._m2 = 0.0

    @property
    def novelty_std(self):
        if self.update_count == 0:
            return self.config.std_floor
        return max(np.sqrt(self._m2 / self.update_count), self.config.std_floor)

    def _features(self, obs):
        obs, _ = _check_input(obs, self.fixed_net.n_inputs, "obs")
        return obs / self.input_scale

    def novelty(self, obs):
        """Raw L1 distillation error, one value per row of ``obs``."""
        X = self._features(obs)
        return np.abs(self.adjustable_net.forward(X) - self.fixed_net.forward(X)).sum(
            axis=1
        )

    def observe(self, raw):
        """Fold one raw novelty value into the running statistics."""
        self.update_count += 1
        delta = raw - self.novelty_mean
        self.novelty_mean += delta / self.update_count
        self._m2 += delta * (raw - self.novelty_mean)


def ngu_reward(pair, s_next, config=None):
    """Clamped, normalized novelty of ``s_next``; updates the statistics after.

    Returns 1 until ``config.warmup`` novelty samples have been seen.
    """
    config = config if config is not None else pair.config
    raw = float(pair.novelty(s_next)[0])
    if pair.update_count < config.warmup:
        reward = 1.0
        if pair.update_count + 1 == config.warmup:
            logger.debug("novelty warmup done after %d states", config.warmup)
    else:
        normalized = max((raw - pair.novelty_mean) / pair.novelty_std, 0.0)
        reward = min(normalized + 1.0, config.L)
    pair.observe(raw)
    return reward


def update_rnd(pair, batch):
    """One Adam step pulling the adjustable network onto the fixed one.

    Returns
    -------
    loss : float
        Mean squared output difference before the step.
    """
    X = pair._features(batch)
    diff = pair.adjustable_net.forward(X) - pair.fixed_net.forward(X)
    loss = float(np.mean(diff**2))
    grads, _ = pair.adjustable_net.backward(X, 2.0 * diff / diff.size)
    pair.adam.step(pair.adjustable_net.params, grads)
    return loss


def ultimate_reward(base_r, r_P, r_NGU):
    return base_r + r_P + r_NGU
