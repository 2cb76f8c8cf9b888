"""
Dense feed-forward networks with a hand-written reverse pass.

The layer bookkeeping follows scikit-learn's multi-layer perceptron: weights
live in ``coefs_`` with shape (fan_in, fan_out), biases in ``intercepts_``, and
the optimizer walks ``coefs_ + intercepts_`` in that order.
"""
import copy
import hashlib
from pathlib import Path

import numpy as np
from sklearn.neural_network._base import ACTIVATIONS, DERIVATIVES
from sklearn.neural_network._stochastic_optimizers import AdamOptimizer
from sklearn.utils import check_random_state

from .base import (
    InputContractError,
    PreconditionError,
    TrainingDivergenceError,
    _check_finite,
    _check_input,
)

SUPPORTED_ACTIVATIONS = ("tanh", "relu", "identity")
CHECKPOINT_VERSION = 1


class DenseNet:
    """
    Fully connected network ``x -> act_L(... act_1(x W_1 + b_1) ... W_L + b_L)``.

    Parameters
    ----------
    layer_widths : sequence of int
        Input width, hidden widths and output width, e.g. ``[24, 128, 128, 24]``.

    activations : sequence of {"tanh", "relu", "identity"}, default=None
        One tag per layer. Defaults to tanh for hidden layers and identity for
        the output layer.

    random_state : int, RandomState instance or None, default=None
        Seeds the uniform ``[-1/sqrt(fan_in), 1/sqrt(fan_in)]`` initialization.

    Attributes
    ----------
    coefs_ : list of ndarray of shape (fan_in, fan_out)

    intercepts_ : list of ndarray of shape (fan_out,)
    """

    def __init__(self, layer_widths, activations=None, random_state=None):
        layer_widths = [int(width) for width in layer_widths]
        if len(layer_widths) < 2 or min(layer_widths) <= 0:
            raise InputContractError(
                "layer_widths needs at least two positive widths, got %s."
                % layer_widths
            )
        n_layers = len(layer_widths) - 1
        if activations is None:
            activations = ["tanh"] * (n_layers - 1) + ["identity"]
        activations = list(activations)
        if len(activations) != n_layers:
            raise InputContractError(
                "Expected %d activations, got %d." % (n_layers, len(activations))
            )
        for activation in activations:
            if activation not in SUPPORTED_ACTIVATIONS:
                raise InputContractError("unknown activation: %s" % activation)

        self.layer_widths = layer_widths
        self.activations = activations

        rng = check_random_state(random_state)
        self.coefs_ = []
        self.intercepts_ = []
        for fan_in, fan_out in zip(layer_widths[:-1], layer_widths[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            self.coefs_.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
            self.intercepts_.append(rng.uniform(-bound, bound, fan_out))

    @property
    def n_layers_(self):
        return len(self.coefs_)

    @property
    def n_inputs(self):
        return self.layer_widths[0]

    @property
    def n_outputs(self):
        return self.layer_widths[-1]

    @property
    def params(self):
        """The live parameter arrays, weights first then biases."""
        return self.coefs_ + self.intercepts_

    @property
    def n_params(self):
        return sum(p.size for p in self.params)

    def _forward_pass(self, X):
        activations = [X]
        for i in range(self.n_layers_):
            Z = activations[i] @ self.coefs_[i] + self.intercepts_[i]
            ACTIVATIONS[self.activations[i]](Z)
            activations.append(Z)
        return activations

    def forward(self, X):
        """Evaluate the network.

        Parameters
        ----------
        X : ndarray of shape (n_samples, n_inputs) or (n_inputs,)

        Returns
        -------
        y : ndarray of shape (n_samples, n_outputs) or (n_outputs,)
        """
        X, single = _check_input(X, self.n_inputs)
        y = self._forward_pass(X)[-1]
        _check_finite([y], TrainingDivergenceError, "network output is not finite")
        return y[0] if single else y

    def backward(self, X, upstream):
        """Propagate ``upstream = dL/dy`` back to parameters and inputs.

        Gradients are summed over the samples of the batch; losses that
        average over samples scale ``upstream`` themselves.

        Parameters
        ----------
        X : ndarray of shape (n_samples, n_inputs) or (n_inputs,)

        upstream : ndarray of shape (n_samples, n_outputs) or (n_outputs,)

        Returns
        -------
        param_grads : list of ndarray
            Same order and shapes as ``params``.

        input_grad : ndarray, same shape as ``X``
        """
        X, single = _check_input(X, self.n_inputs)
        upstream, _ = _check_input(upstream, self.n_outputs, "upstream")
        if upstream.shape[0] != X.shape[0]:
            raise InputContractError(
                "upstream has %d rows but X has %d." % (upstream.shape[0], X.shape[0])
            )

        activations = self._forward_pass(X)
        delta = upstream.copy()
        coef_grads = [None] * self.n_layers_
        intercept_grads = [None] * self.n_layers_
        for i in range(self.n_layers_ - 1, -1, -1):
            DERIVATIVES[self.activations[i]](activations[i + 1], delta)
            coef_grads[i] = activations[i].T @ delta
            intercept_grads[i] = delta.sum(axis=0)
            delta = delta @ self.coefs_[i].T

        return coef_grads + intercept_grads, delta[0] if single else delta

    def copy(self):
        return copy.deepcopy(self)

    def checksum(self):
        return hashlib.sha256(self.to_bytes()).hexdigest()

    def to_bytes(self):
        """Serialize as a text header followed by little-endian float64 data.

        The header is ``key=value`` lines (version, layer_widths, activations)
        closed by an empty line. Parameters follow layer by layer, each weight
        matrix row-major and then its bias.
        """
        header = (
            "version=%d\nlayer_widths=%s\nactivations=%s\n\n"
            % (
                CHECKPOINT_VERSION,
                ",".join(str(w) for w in self.layer_widths),
                ",".join(self.activations),
            )
        )
        flat = np.concatenate(
            [
                np.concatenate([W.ravel(), b])
                for W, b in zip(self.coefs_, self.intercepts_)
            ]
        )
        return header.encode("ascii") + flat.astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, data, offset=0):
        """Read one network starting at ``offset``.

        Returns
        -------
        net : DenseNet

        end : int
            Offset of the first byte after this network, so several
            checkpoints can be concatenated.
        """
        header_end = data.find(b"\n\n", offset)
        if header_end < 0:
            raise InputContractError("checkpoint header is not terminated")
        fields = dict(
            line.split("=", 1)
            for line in data[offset:header_end].decode("ascii").splitlines()
        )
        if int(fields.get("version", -1)) != CHECKPOINT_VERSION:
            raise InputContractError(
                "unsupported checkpoint version %s" % fields.get("version")
            )
        widths = [int(w) for w in fields["layer_widths"].split(",")]
        net = cls(widths, fields["activations"].split(","), random_state=0)

        start = header_end + 2
        count = net.n_params
        stop = start + 8 * count
        if len(data) < stop:
            raise InputContractError("checkpoint is truncated")
        flat = np.frombuffer(data, dtype="<f8", count=count, offset=start)
        position = 0
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            size = fan_in * fan_out
            net.coefs_[i] = (
                flat[position : position + size]
                .reshape(fan_in, fan_out)
                .astype(np.float64)
            )
            position += size
            net.intercepts_[i] = flat[position : position + fan_out].astype(np.float64)
            position += fan_out
        return net, stop


class AdamState(AdamOptimizer):
    """
    Adam moments for one parameter list, driven by scikit-learn's optimizer.

    Parameters
    ----------
    params : list of ndarray
        The arrays that ``step`` updates in place.

    lr : float, default=0.001
        Learning rate; mutable between steps.

    beta1, beta2, eps : float
        Moment decay rates and the denominator offset.

    Attributes
    ----------
    m, v : list of ndarray
        First and second moments, shaped like ``params``.

    t : int
        Number of steps taken.
    """

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        super().__init__(
            params,
            learning_rate_init=lr,
            beta_1=beta1,
            beta_2=beta2,
            epsilon=eps,
        )
        self._shapes = [np.shape(p) for p in params]

    @property
    def lr(self):
        return self.learning_rate_init

    @lr.setter
    def lr(self, value):
        self.learning_rate_init = float(value)

    @property
    def m(self):
        return self.ms

    @property
    def v(self):
        return self.vs

    def step(self, params, grads):
        """Apply one bias-corrected Adam update to ``params`` in place."""
        if [np.shape(p) for p in params] != self._shapes or [
            np.shape(g) for g in grads
        ] != self._shapes:
            raise InputContractError("parameter and gradient shapes do not agree")
        _check_finite(grads, TrainingDivergenceError, "gradient is not finite")
        self.update_params(params, grads)
        return params


def adam_step(params, grads, state):
    """Functional spelling of ``state.step``; returns ``(params, state)``."""
    state.step(params, grads)
    return params, state


def save_checkpoint(net, path):
    Path(path).write_bytes(net.to_bytes())


def load_checkpoint(path):
    path = Path(path)
    if not path.exists():
        raise PreconditionError("checkpoint not found: %s" % path)
    net, _ = DenseNet.from_bytes(path.read_bytes())
    return net
