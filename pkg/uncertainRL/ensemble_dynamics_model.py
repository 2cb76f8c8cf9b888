"""
Probabilistic ensemble of one-step dynamics models.

Every member maps ``concat(observation, action)`` to the mean of
``concat(observation delta, reward)`` in normalized units and samples around
it with a fixed per-dimension standard deviation. Member disagreement is the
epistemic uncertainty that decides how far imagined rollouts may run.
"""
import logging
from collections import namedtuple
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed
from sklearn.base import clone
from sklearn.preprocessing import StandardScaler
from sklearn.utils import check_random_state, gen_batches

from .base import (
    BaseConfig,
    InputContractError,
    ModelDivergenceError,
    PreconditionError,
    TrainingDivergenceError,
    _check_input,
    _check_range,
    format_value,
    parse_key_values,
)
from .dense_network import AdamState, DenseNet

logger = logging.getLogger(__name__)

EnsembleLosses = namedtuple("EnsembleLosses", ["total", "state", "reward"])


class ModelConfig(BaseConfig):
    """
    Parameters
    ----------
    n_members : int, default=5
        Ensemble size.

    hidden_layer_sizes : tuple of int, default=(128, 128)

    lr : float, default=0.0005

    batch_size : int, default=128

    epochs : int, default=20
        Passes over the real buffer at every retraining; weights warm-start.

    sigma_obs : float, default=0.01
        Fixed standard deviation of every normalized observation delta.

    sigma_reward : float, default=0.05
        Fixed standard deviation of the normalized reward.

    bootstrap : bool, default=True
        Train every member on its own resample, drawn with replacement, of
        the buffer. Member disagreement then shrinks as the buffer grows.

    n_jobs : int, default=None
        Threads used to train the members side by side.
    """

    def __init__(
        self,
        n_members=5,
        hidden_layer_sizes=(128, 128),
        lr=0.0005,
        batch_size=128,
        epochs=20,
        sigma_obs=0.01,
        sigma_reward=0.05,
        bootstrap=True,
        n_jobs=None,
    ):
        self.n_members = n_members
        self.hidden_layer_sizes = hidden_layer_sizes
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.sigma_obs = sigma_obs
        self.sigma_reward = sigma_reward
        self.bootstrap = bootstrap
        self.n_jobs = n_jobs

    def _validate_hyperparameters(self):
        _check_range("model.n_members", self.n_members, 1)
        for width in self.hidden_layer_sizes:
            _check_range("model.hidden_layer_sizes", width, 1)
        _check_range("model.lr", self.lr, 0.0, closed="right")
        _check_range("model.batch_size", self.batch_size, 1)
        _check_range("model.epochs", self.epochs, 0)
        _check_range("model.sigma_obs", self.sigma_obs, 0.0, closed="right")
        _check_range("model.sigma_reward", self.sigma_reward, 0.0, closed="right")


class Normalization:
    """Input and target standardization shared by all members.

    Identity until the first ``fit``; statistics then stay frozen until the
    next one.
    """

    def __init__(self):
        self.input_scaler = None
        self.target_scaler = None

    @property
    def fitted(self):
        return self.input_scaler is not None

    def fit(self, X, Y):
        self.input_scaler = StandardScaler().fit(X)
        self.target_scaler = StandardScaler().fit(Y)
        return self

    def inputs(self, X):
        return self.input_scaler.transform(X) if self.fitted else X

    def targets(self, Y):
        return self.target_scaler.transform(Y) if self.fitted else Y

    def inverse_targets(self, Y):
        return self.target_scaler.inverse_transform(Y) if self.fitted else Y

    def to_record(self):
        if not self.fitted:
            return [("fitted", False)]
        return [
            ("fitted", True),
            ("input_mean", self.input_scaler.mean_),
            ("input_scale", self.input_scaler.scale_),
            ("target_mean", self.target_scaler.mean_),
            ("target_scale", self.target_scaler.scale_),
        ]

    @classmethod
    def from_record(cls, fields):
        norm = cls()
        if fields.get("fitted"):
            norm.input_scaler = _frozen_scaler(
                fields["input_mean"], fields["input_scale"]
            )
            norm.target_scaler = _frozen_scaler(
                fields["target_mean"], fields["target_scale"]
            )
        return norm


def _frozen_scaler(mean, scale):
    scaler = StandardScaler()
    scaler.mean_ = np.asarray(mean, dtype=np.float64)
    scaler.scale_ = np.asarray(scale, dtype=np.float64)
    scaler.var_ = scaler.scale_**2
    scaler.n_features_in_ = scaler.mean_.shape[0]
    scaler.n_samples_seen_ = 1
    return scaler


class DynamicsModel:
    """
    One ensemble member.

    Parameters
    ----------
    n_obs : int

    n_actions : int, default=1

    config : ModelConfig, default=None

    normalization : Normalization, default=None
        Shared with the rest of the ensemble.

    random_state : int, RandomState instance or None, default=None

    Attributes
    ----------
    net : DenseNet
        ``n_obs + n_actions -> hidden -> n_obs + 1``.

    sigma_fixed : ndarray of shape (n_obs + 1,)

    loss_curve_ : list of float
        Mean training loss of every epoch run so far.
    """

    def __init__(
        self, n_obs, n_actions=1, config=None, normalization=None, random_state=None
    ):
        config = config if config is not None else ModelConfig()
        self.n_obs = n_obs
        self.n_actions = n_actions
        self.net = DenseNet(
            [n_obs + n_actions, *config.hidden_layer_sizes, n_obs + 1],
            random_state=random_state,
        )
        self.sigma_fixed = np.append(
            np.full(n_obs, float(config.sigma_obs)), float(config.sigma_reward)
        )
        self.adam = AdamState(self.net.params, lr=config.lr)
        if normalization is None:
            normalization = Normalization()
        self.normalization = normalization
        self.loss_curve_ = []

    def checksum(self):
        return self.net.checksum()

    def _join(self, s, a):
        s, single = _check_input(s, self.n_obs, "s")
        a = np.asarray(a, dtype=np.float64).reshape(s.shape[0], -1)
        if a.shape[1] != self.n_actions:
            raise InputContractError(
                "a must have %d columns, got %d" % (self.n_actions, a.shape[1])
            )
        return s, np.hstack([s, a]), single

    def mean_normalized(self, s, a):
        """Mean prediction in normalized output units, shape (n, n_obs + 1)."""
        _, X, _ = self._join(s, a)
        try:
            return self.net.forward(self.normalization.inputs(X))
        except TrainingDivergenceError as error:
            raise ModelDivergenceError(str(error)) from None


def predict(model, s, a, noise):
    """Sample the next observation and reward.

    Parameters
    ----------
    model : DynamicsModel

    s : ndarray of shape (n, n_obs) or (n_obs,)

    a : ndarray of shape (n, n_actions), (n,) or scalar

    noise : ndarray, shape of the output (``n_obs + 1`` per row)
        Standard-normal draws scaled by ``sigma_fixed``.

    Returns
    -------
    s_next : ndarray, shape of ``s``

    r : ndarray of shape (n,) or float
    """
    s_arr, X, single = model._join(s, a)
    noise = np.asarray(noise, dtype=np.float64).reshape(s_arr.shape[0], -1)
    if noise.shape[1] != model.n_obs + 1:
        raise InputContractError(
            "noise must have %d columns, got %d" % (model.n_obs + 1, noise.shape[1])
        )
    try:
        mean = model.net.forward(model.normalization.inputs(X))
    except TrainingDivergenceError as error:
        raise ModelDivergenceError(str(error)) from None
    out = model.normalization.inverse_targets(mean + model.sigma_fixed * noise)
    s_next = s_arr + out[:, : model.n_obs]
    r = out[:, model.n_obs]
    if not (np.isfinite(s_next).all() and np.isfinite(r).all()):
        raise ModelDivergenceError("world model prediction is not finite")
    if single:
        return s_next[0], float(r[0])
    return s_next, r


class Ensemble:
    """
    ``n_members`` independently initialized dynamics models.

    Parameters
    ----------
    n_obs : int

    n_actions : int, default=1

    config : ModelConfig, default=None

    random_state : int, RandomState instance or None, default=None
        Members draw their initial weights from it in order.

    Attributes
    ----------
    uncertainty_scale_ : ndarray of shape (n_obs,) or None
        Raw scale of the observation deltas in which ``uncertainty`` is
        measured. Taken from the target normalization of the first fit and
        kept through later refits; None before it. Set it before the first
        fit to compare ensembles trained on different buffers.
    """

    def __init__(self, n_obs, n_actions=1, config=None, random_state=None):
        self.config = config if config is not None else ModelConfig()
        rng = check_random_state(random_state)
        self.normalization = Normalization()
        self.members = [
            DynamicsModel(n_obs, n_actions, self.config, self.normalization, rng)
            for _ in range(self.config.n_members)
        ]
        self.n_obs = n_obs
        self.n_actions = n_actions
        self.n_train_calls_ = 0
        self.uncertainty_scale_ = None

    def __len__(self):
        return len(self.members)

    @property
    def trained(self):
        return self.n_train_calls_ > 0

    def normalized_observation(self, s):
        """Observation columns of the input normalization applied to ``s``."""
        s, _ = _check_input(s, self.n_obs, "s")
        if not self.normalization.fitted:
            return s
        scaler = self.normalization.input_scaler
        return (s - scaler.mean_[: self.n_obs]) / scaler.scale_[: self.n_obs]

    def member_means(self, s, a):
        """Stacked member means, shape (n_members, n, n_obs + 1)."""
        return np.stack([m.mean_normalized(s, a) for m in self.members])

    def uncertainty_units(self):
        """Factor taking normalized observation deltas to ``uncertainty_scale_``."""
        if self.uncertainty_scale_ is None or not self.normalization.fitted:
            return np.ones(self.n_obs)
        scale = self.normalization.target_scaler.scale_[: self.n_obs]
        return scale / self.uncertainty_scale_


def mixture_moments(means, variances):
    """Mean and variance of a uniform mixture of Gaussians.

    ``sigma2 = mean(variances) + mean(means**2) - mean(means)**2``, with the
    second group clipped at zero and set exactly to zero wherever all
    members agree.

    Parameters
    ----------
    means, variances : ndarray of shape (n_members, ...)

    Returns
    -------
    mu, sigma2 : ndarray of shape ``means.shape[1:]``
    """
    means = np.asarray(means, dtype=np.float64)
    variances = np.broadcast_to(np.asarray(variances, dtype=np.float64), means.shape)
    mu = means.mean(axis=0)
    epistemic = _epistemic(means, mu)
    return mu, variances.mean(axis=0) + epistemic


def _epistemic(means, mu):
    spread = np.maximum((means**2).mean(axis=0) - mu**2, 0.0)
    return np.where(np.all(means == means[0], axis=0), 0.0, spread)


def ensemble_stats(ensemble, s, a):
    """Mixture mean and variance per normalized output dimension."""
    means = ensemble.member_means(s, a)
    variances = np.stack([m.sigma_fixed**2 for m in ensemble.members])[:, None, :]
    return mixture_moments(means, variances)


def uncertainty(ensemble, s, policy_action):
    """Mean epistemic variance over the next-observation outputs.

    Member means are expressed in units of ``ensemble.uncertainty_scale_``
    so values stay comparable across refits. The reward output is left out.
    Returns a float for a single state and an array of shape (n,) for a
    batch.
    """
    single = np.ndim(s) == 1
    means = ensemble.member_means(s, policy_action)[:, :, : ensemble.n_obs]
    means = means * ensemble.uncertainty_units()
    sigma2 = _epistemic(means, means.mean(axis=0)).mean(axis=1)
    return float(sigma2[0]) if single else sigma2


def sample_member(ensemble, rng):
    return ensemble.members[check_random_state(rng).randint(len(ensemble.members))]


def _train_member(member, X, Y, epochs, batch_size, bootstrap, random_state):
    rng = check_random_state(random_state)
    n_samples = Y.shape[0]
    if bootstrap:
        resample = rng.randint(n_samples, size=n_samples)
        X, Y = X[resample], Y[resample]
    n_obs = member.n_obs
    total = state = reward = np.nan
    for _ in range(epochs):
        order = rng.permutation(n_samples)
        sums = np.zeros(3)
        for batch_slice in gen_batches(n_samples, batch_size):
            idx = order[batch_slice]
            X_batch, Y_batch = X[idx], Y[idx]
            diff = member.net.forward(X_batch) - Y_batch
            squared = diff**2
            sums += len(idx) * np.array(
                [squared.mean(), squared[:, :n_obs].mean(), squared[:, n_obs].mean()]
            )
            grads, _ = member.net.backward(X_batch, 2.0 * diff / diff.size)
            member.adam.step(member.net.params, grads)
        total, state, reward = sums / n_samples
        member.loss_curve_.append(total)
    return total, state, reward


def train_ensemble(ensemble, buffer, epochs=None, batch_size=None, random_state=None):
    """Fit every member to the transitions of ``buffer``.

    Normalization statistics are refit from the buffer first and stay frozen
    while the members train on independently shuffled mini-batches of their
    own bootstrap resample (plain copies when ``config.bootstrap`` is off).
    The first fit also fixes ``ensemble.uncertainty_scale_`` unless it was
    set beforehand.

    Returns
    -------
    losses : EnsembleLosses
        Final-epoch mean losses per member, total and split into the state
        and reward outputs.
    """
    config = ensemble.config
    epochs = config.epochs if epochs is None else epochs
    batch_size = config.batch_size if batch_size is None else batch_size
    if len(buffer) < batch_size:
        raise PreconditionError(
            "world model needs at least %d transitions, buffer holds %d"
            % (batch_size, len(buffer))
        )
    rng = check_random_state(random_state)
    data = buffer.arrays()
    X = np.hstack([data.obs, data.actions])
    Y = np.hstack([data.next_obs - data.obs, data.rewards[:, None]])
    ensemble.normalization.fit(X, Y)
    if ensemble.uncertainty_scale_ is None:
        target_scale = ensemble.normalization.target_scaler.scale_
        ensemble.uncertainty_scale_ = target_scale[: ensemble.n_obs].copy()
    Xn = ensemble.normalization.inputs(X)
    Yn = ensemble.normalization.targets(Y)

    seeds = rng.randint(np.iinfo(np.int32).max, size=len(ensemble.members))
    outs = Parallel(n_jobs=config.n_jobs, prefer="threads")(
        delayed(_train_member)(
            member, Xn, Yn, epochs, batch_size, config.bootstrap, seed
        )
        for member, seed in zip(ensemble.members, seeds)
    )
    ensemble.n_train_calls_ += 1
    losses = EnsembleLosses(*(np.array(column) for column in zip(*outs)))
    logger.info(
        "ensemble trained on %d transitions: loss %.5f (state %.5f, reward %.5f)",
        len(buffer),
        losses.total.mean(),
        losses.state.mean(),
        losses.reward.mean(),
    )
    return losses


def save_ensemble(ensemble, path):
    """Normalization record followed by the concatenated member networks."""
    record = [
        ("n_members", len(ensemble.members)),
        ("n_obs", ensemble.n_obs),
        ("n_actions", ensemble.n_actions),
        ("sigma_fixed", ensemble.members[0].sigma_fixed),
        ("n_train_calls", ensemble.n_train_calls_),
    ]
    if ensemble.uncertainty_scale_ is not None:
        record.append(("uncertainty_scale", ensemble.uncertainty_scale_))
    record += ensemble.normalization.to_record()
    header = "".join("%s = %s\n" % (k, format_value(v)) for k, v in record) + "\n"
    body = b"".join(m.net.to_bytes() for m in ensemble.members)
    Path(path).write_bytes(header.encode("ascii") + body)


def load_ensemble(path, config=None):
    path = Path(path)
    if not path.exists():
        raise PreconditionError("ensemble checkpoint not found: %s" % path)
    data = path.read_bytes()
    header_end = data.find(b"\n\n")
    if header_end < 0:
        raise InputContractError("ensemble checkpoint header is not terminated")
    fields = dict(parse_key_values(data[:header_end].decode("ascii"), str(path)))

    config = clone(config if config is not None else ModelConfig())
    config.set_params(n_members=int(fields["n_members"]))
    ensemble = Ensemble(fields["n_obs"], fields["n_actions"], config, random_state=0)
    ensemble.normalization = Normalization.from_record(fields)
    ensemble.n_train_calls_ = int(fields["n_train_calls"])
    if "uncertainty_scale" in fields:
        scale = np.asarray(fields["uncertainty_scale"], dtype=np.float64)
        ensemble.uncertainty_scale_ = scale
    offset = header_end + 2
    for member in ensemble.members:
        member.net, offset = DenseNet.from_bytes(data, offset)
        member.sigma_fixed = np.asarray(fields["sigma_fixed"], dtype=np.float64)
        member.normalization = ensemble.normalization
        member.adam = AdamState(member.net.params, lr=config.lr)
    return ensemble
