"""
Soft actor-critic with a fixed temperature.

A squashed-Gaussian actor and twin soft-Q critics with Polyak-averaged target
copies. Observations are divided by a fixed ``input_scale`` before entering any
network; the action enters the critics unscaled.
"""
import logging
from pathlib import Path

import numpy as np
from sklearn.utils import check_random_state

from .base import (
    BaseConfig,
    InputContractError,
    PreconditionError,
    _check_input,
    _check_range,
    format_value,
    parse_key_values,
)
from .dense_network import AdamState, DenseNet, load_checkpoint, save_checkpoint
from .squashed_gaussian import SquashedGaussianHead, sample_squashed, squashed_backward

logger = logging.getLogger(__name__)

NETWORK_NAMES = ("actor", "q1", "q2", "q1_target", "q2_target")


class SACConfig(BaseConfig):
    """
    Parameters
    ----------
    alpha : float, default=0.005
        Entropy temperature, held constant.

    gamma : float, default=0.97

    tau : float, default=0.005
        Soft-update factor of the target critics.

    lr : float, default=0.0001
        Learning rate of actor and critics.

    batch_size : int, default=64

    hidden_layer_sizes : tuple of int, default=(256, 128)

    action_scale : float, default=pi/2
        Half-range of the steering action.
    """

    def __init__(
        self,
        alpha=0.005,
        gamma=0.97,
        tau=0.005,
        lr=0.0001,
        batch_size=64,
        hidden_layer_sizes=(256, 128),
        action_scale=np.pi / 2,
    ):
        self.alpha = alpha
        self.gamma = gamma
        self.tau = tau
        self.lr = lr
        self.batch_size = batch_size
        self.hidden_layer_sizes = hidden_layer_sizes
        self.action_scale = action_scale

    def _validate_hyperparameters(self):
        _check_range("sac.alpha", self.alpha, 0.0)
        _check_range("sac.gamma", self.gamma, 0.0, 1.0, closed="neither")
        _check_range("sac.tau", self.tau, 0.0, 1.0, closed="right")
        _check_range("sac.lr", self.lr, 0.0, closed="right")
        _check_range("sac.batch_size", self.batch_size, 1)
        for width in self.hidden_layer_sizes:
            _check_range("sac.hidden_layer_sizes", width, 1)
        _check_range("sac.action_scale", self.action_scale, 0.0, closed="right")


def _scale(n_obs, input_scale):
    if input_scale is None:
        return np.ones(n_obs)
    input_scale = np.asarray(input_scale, dtype=np.float64)
    if input_scale.shape != (n_obs,):
        raise InputContractError(
            "input_scale must have shape (%d,), got %s" % (n_obs, input_scale.shape)
        )
    return input_scale


class Actor:
    """
    Policy network ``observation -> (mu, log_std)`` with a squashed head.

    Parameters
    ----------
    n_obs : int

    config : SACConfig, default=None

    input_scale : array-like of shape (n_obs,), default=None

    random_state : int, RandomState instance or None, default=None
    """

    def __init__(self, n_obs, config=None, input_scale=None, random_state=None):
        config = config if config is not None else SACConfig()
        self.n_obs = n_obs
        self.scale = float(config.action_scale)
        self.input_scale = _scale(n_obs, input_scale)
        self.net = DenseNet(
            [n_obs, *config.hidden_layer_sizes, 2], random_state=random_state
        )
        self.adam = AdamState(self.net.params, lr=config.lr)

    def features(self, obs):
        obs, _ = _check_input(obs, self.n_obs, "obs")
        return obs / self.input_scale

    def head(self, obs):
        out = self.net.forward(self.features(obs))
        return SquashedGaussianHead(out[:, :1], out[:, 1:], self.scale)


class CriticPair:
    """
    Twin soft-Q networks ``concat(observation, action) -> Q`` and their targets.

    Parameters
    ----------
    n_obs : int

    config : SACConfig, default=None

    input_scale : array-like of shape (n_obs,), default=None

    random_state : int, RandomState instance or None, default=None
    """

    def __init__(self, n_obs, config=None, input_scale=None, random_state=None):
        config = config if config is not None else SACConfig()
        rng = check_random_state(random_state)
        self.n_obs = n_obs
        self.input_scale = _scale(n_obs, input_scale)
        widths = [n_obs + 1, *config.hidden_layer_sizes, 1]
        self.q1 = DenseNet(widths, random_state=rng)
        self.q2 = DenseNet(widths, random_state=rng)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.adam1 = AdamState(self.q1.params, lr=config.lr)
        self.adam2 = AdamState(self.q2.params, lr=config.lr)

    def inputs(self, obs, actions):
        obs, _ = _check_input(obs, self.n_obs, "obs")
        actions = np.asarray(actions, dtype=np.float64).reshape(obs.shape[0], 1)
        return np.hstack([obs / self.input_scale, actions])


def act(actor, s, mode="stochastic", rng=None):
    """Action for one observation (float) or a batch (array of shape (n, 1))."""
    single = np.ndim(s) == 1
    head = actor.head(s)
    if mode == "deterministic":
        action = head.mode()
    elif mode == "stochastic":
        noise = check_random_state(rng).standard_normal(head.mu.shape)
        action, _ = sample_squashed(head, noise)
    else:
        raise ValueError("mode must be 'stochastic' or 'deterministic', got %r" % mode)
    return float(action[0, 0]) if single else action


def critic_targets(batch, actor, critics, config, rng=None, noise=None):
    """``r + gamma * (1 - done) * (min target Q(s', a') - alpha * log pi(a'|s'))``.

    ``a'`` is drawn from the current policy with ``noise`` when given,
    otherwise with standard-normal draws from ``rng``.
    """
    head = actor.head(batch.next_obs)
    if noise is None:
        noise = check_random_state(rng).standard_normal(head.mu.shape)
    next_actions, log_prob = sample_squashed(head, noise)
    X_next = critics.inputs(batch.next_obs, next_actions)
    q_next = np.minimum(
        critics.q1_target.forward(X_next), critics.q2_target.forward(X_next)
    )[:, 0]
    rewards = np.asarray(batch.rewards, dtype=np.float64).ravel()
    not_done = 1.0 - np.asarray(batch.dones, dtype=np.float64).ravel()
    # the mask zeroes the bootstrap so done rows equal r exactly
    bootstrap = np.where(not_done > 0.0, q_next - config.alpha * log_prob, 0.0)
    return rewards + config.gamma * bootstrap


def critic_loss(net, X, targets):
    """``0.5 * mean((Q(X) - y)^2)`` and its parameter gradients."""
    diff = net.forward(X) - np.asarray(targets, dtype=np.float64).reshape(-1, 1)
    grads, _ = net.backward(X, diff / diff.shape[0])
    return 0.5 * float(np.mean(diff**2)), grads


def update_critics(critics, batch, targets):
    """One Adam step on each critic; returns the pre-step losses."""
    X = critics.inputs(batch.obs, batch.actions)
    loss1, grads1 = critic_loss(critics.q1, X, targets)
    loss2, grads2 = critic_loss(critics.q2, X, targets)
    critics.adam1.step(critics.q1.params, grads1)
    critics.adam2.step(critics.q2.params, grads2)
    return loss1, loss2


def actor_loss(actor, critics, obs, noise, alpha):
    """``mean(alpha * log pi(a|s) - Q1(s, a))`` with ``a`` reparameterized.

    Returns
    -------
    loss : float

    grads : list of ndarray
        Gradients with respect to ``actor.net.params``. Critic weights get
        none.
    """
    X = actor.features(obs)
    out = actor.net.forward(X)
    head = SquashedGaussianHead(out[:, :1], out[:, 1:], actor.scale)
    noise = np.asarray(noise, dtype=np.float64).reshape(head.mu.shape)
    actions, log_prob = sample_squashed(head, noise)
    X_q = critics.inputs(obs, actions)
    q = critics.q1.forward(X_q)[:, 0]
    n = X.shape[0]
    loss = float(np.mean(alpha * log_prob - q))

    _, d_input = critics.q1.backward(X_q, np.full((n, 1), -1.0 / n))
    d_mu, d_log_std = squashed_backward(
        head, noise, d_input[:, -1:], np.full(n, alpha / n)
    )
    grads, _ = actor.net.backward(X, np.hstack([d_mu, d_log_std]))
    return loss, grads


def update_actor(batch, actor, critics, config, rng=None, noise=None):
    """One Adam step on the actor; returns the pre-step loss."""
    if noise is None:
        noise = check_random_state(rng).standard_normal((len(batch.obs), 1))
    loss, grads = actor_loss(actor, critics, batch.obs, noise, config.alpha)
    actor.adam.step(actor.net.params, grads)
    return loss


def soft_update(critics, tau):
    """``target <- tau * online + (1 - tau) * target``, in place."""
    for online, target in (
        (critics.q1, critics.q1_target),
        (critics.q2, critics.q2_target),
    ):
        for t, o in zip(target.params, online.params):
            t *= 1.0 - tau
            t += tau * o
    return critics


class SACAgent:
    """
    Actor, critics and the update step that ties them together.

    Parameters
    ----------
    n_obs : int

    config : SACConfig, default=None

    input_scale : array-like of shape (n_obs,), default=None

    random_state : int, RandomState instance or None, default=None
        Actor weights are drawn first, then the critics.
    """

    def __init__(self, n_obs, config=None, input_scale=None, random_state=None):
        self.config = config if config is not None else SACConfig()
        rng = check_random_state(random_state)
        self.actor = Actor(n_obs, self.config, input_scale, rng)
        self.critics = CriticPair(n_obs, self.config, input_scale, rng)

    def act(self, s, mode="stochastic", rng=None):
        return act(self.actor, s, mode, rng)

    def update(self, batch, rng, train_actor=True):
        """Critic step, actor step, then target tracking.

        ``train_actor=False`` skips the actor step, which lets the critics
        warm-start on exploration data before the policy starts moving.

        Returns
        -------
        critic_loss, actor_loss : float
            Mean of the two critic losses, and the actor loss, before the step.
            The actor loss is None when the actor step is skipped.
        """
        rng = check_random_state(rng)
        targets = critic_targets(batch, self.actor, self.critics, self.config, rng)
        loss1, loss2 = update_critics(self.critics, batch, targets)
        loss_pi = None
        if train_actor:
            loss_pi = update_actor(batch, self.actor, self.critics, self.config, rng)
        soft_update(self.critics, self.config.tau)
        return 0.5 * (loss1 + loss2), loss_pi

    def save(self, directory):
        """One checkpoint per network plus ``manifest.txt``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        nets = self._networks()
        for name in NETWORK_NAMES:
            save_checkpoint(nets[name], directory / ("%s.bin" % name))
        manifest = [
            ("n_obs", self.actor.n_obs),
            ("input_scale", self.actor.input_scale),
            ("action_scale", self.actor.scale),
            ("networks", list(NETWORK_NAMES)),
        ]
        (directory / "manifest.txt").write_text(
            "".join("%s = %s\n" % (k, format_value(v)) for k, v in manifest),
            encoding="utf-8",
        )
        logger.debug("saved agent checkpoint to %s", directory)

    @classmethod
    def load(cls, directory, config=None):
        directory = Path(directory)
        manifest = directory / "manifest.txt"
        if not manifest.exists():
            raise PreconditionError("agent checkpoint not found: %s" % directory)
        fields = dict(
            parse_key_values(manifest.read_text(encoding="utf-8"), str(manifest))
        )
        agent = cls(fields["n_obs"], config, fields["input_scale"], random_state=0)
        agent.actor.scale = float(fields["action_scale"])
        for name in fields["networks"]:
            net = load_checkpoint(directory / ("%s.bin" % name))
            if name == "actor":
                agent.actor.net = net
            else:
                setattr(agent.critics, name, net)
        agent.actor.adam = AdamState(agent.actor.net.params, lr=agent.config.lr)
        agent.critics.adam1 = AdamState(agent.critics.q1.params, lr=agent.config.lr)
        agent.critics.adam2 = AdamState(agent.critics.q2.params, lr=agent.config.lr)
        return agent

    def _networks(self):
        return {
            "actor": self.actor.net,
            "q1": self.critics.q1,
            "q2": self.critics.q2,
            "q1_target": self.critics.q1_target,
            "q2_target": self.critics.q2_target,
        }

    def checksum(self):
        nets = self._networks()
        return {name: nets[name].checksum() for name in NETWORK_NAMES}
