"""Tanh-squashed Gaussian policy head with the reparameterization trick."""
import numpy as np

from .base import InputContractError

LOG_STD_MIN = -10.0
LOG_STD_MAX = 2.0

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
# keeps scale * tanh(u) strictly inside the interval once tanh rounds to 1
_EDGE = 1.0 - 1e-12


def _log1m_tanh2(u):
    """log(1 - tanh(u)^2) without cancellation for large |u|."""
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


class SquashedGaussianHead:
    """
    Diagonal Gaussian in pre-squash space mapped onto ``(-scale, scale)``.

    Parameters
    ----------
    mu : array-like of shape (..., n_dims)
        Pre-squash mean.

    log_std : array-like of shape (..., n_dims)
        Pre-squash log standard deviation, clamped to [-10, 2].

    scale : float, default=pi/2
        Action half-range.
    """

    def __init__(self, mu, log_std, scale=np.pi / 2):
        self.mu = np.asarray(mu, dtype=np.float64)
        self.raw_log_std = np.asarray(log_std, dtype=np.float64)
        if self.mu.shape != self.raw_log_std.shape:
            raise InputContractError(
                "mu %s and log_std %s differ in shape"
                % (self.mu.shape, self.raw_log_std.shape)
            )
        self.log_std = np.clip(self.raw_log_std, LOG_STD_MIN, LOG_STD_MAX)
        self.scale = float(scale)

    @property
    def std(self):
        return np.exp(self.log_std)

    def mode(self):
        """Deterministic action ``scale * tanh(mu)``."""
        return self.scale * np.clip(np.tanh(self.mu), -_EDGE, _EDGE)


def sample_squashed(head, noise):
    """Draw ``scale * tanh(mu + std * noise)`` and its log-density.

    Parameters
    ----------
    head : SquashedGaussianHead

    noise : array-like, same shape as ``head.mu``
        Standard-normal draws supplied by the caller.

    Returns
    -------
    action : ndarray, same shape as ``head.mu``

    log_prob : ndarray of shape ``head.mu.shape[:-1]``
        Density of ``action`` including the tanh change of variables.
    """
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != head.mu.shape:
        raise InputContractError(
            "noise %s does not match head %s" % (noise.shape, head.mu.shape)
        )
    u = head.mu + head.std * noise
    action = head.scale * np.clip(np.tanh(u), -_EDGE, _EDGE)
    log_prob = (
        -0.5 * noise**2
        - head.log_std
        - _HALF_LOG_2PI
        - np.log(head.scale)
        - _log1m_tanh2(u)
    ).sum(axis=-1)
    return action, log_prob


def squashed_backward(head, noise, d_action, d_log_prob):
    """Reverse pass of ``sample_squashed`` for fixed noise.

    Parameters
    ----------
    d_action : array-like, same shape as ``head.mu``
        Gradient of the loss with respect to the action.

    d_log_prob : array-like of shape ``head.mu.shape[:-1]``
        Gradient of the loss with respect to the log-density.

    Returns
    -------
    d_mu, d_log_std : ndarray
        Gradients with respect to the unclamped head inputs. Entries whose
        log_std sits outside the clamp receive zero log_std gradient.
    """
    noise = np.asarray(noise, dtype=np.float64)
    d_action = np.asarray(d_action, dtype=np.float64)
    d_log_prob = np.expand_dims(np.asarray(d_log_prob, dtype=np.float64), -1)
    std = head.std
    squashed = np.tanh(head.mu + std * noise)

    d_u = d_action * head.scale * (1.0 - squashed**2) + d_log_prob * 2.0 * squashed
    inside = (head.raw_log_std > LOG_STD_MIN) & (head.raw_log_std < LOG_STD_MAX)
    d_log_std = np.where(inside, d_u * std * noise - d_log_prob, 0.0)
    return d_u, d_log_std
