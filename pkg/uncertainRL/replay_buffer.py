"""Fixed-capacity FIFO transition storage for real and imagined experience."""
from collections import namedtuple
from dataclasses import dataclass

import numpy as np
from sklearn.utils import check_random_state

from .base import InputContractError, PreconditionError, _check_input

SOURCES = ("real", "virtual")

Batch = namedtuple("Batch", ["obs", "actions", "rewards", "next_obs", "dones"])


@dataclass
class Transition:
    s: np.ndarray
    a: float
    r: float
    s_next: np.ndarray
    done: bool
    source: str = "real"


def concat_batches(*batches):
    return Batch(*(np.concatenate(parts) for parts in zip(*batches)))


class ReplayBuffer:
    """
    Ring of transitions stored column-wise in preallocated arrays.

    Parameters
    ----------
    capacity : int

    n_obs : int

    source : {"real", "virtual"}, default="real"
        Tag attached to every transition handed back by ``transitions``.
    """

    def __init__(self, capacity, n_obs, source="real"):
        if capacity < 1:
            raise InputContractError("capacity must be positive, got %r" % capacity)
        if source not in SOURCES:
            raise InputContractError("source must be one of %s" % (SOURCES,))
        self.capacity = int(capacity)
        self.n_obs = n_obs
        self.source = source
        self._obs = np.zeros((self.capacity, n_obs))
        self._actions = np.zeros((self.capacity, 1))
        self._rewards = np.zeros(self.capacity)
        self._next_obs = np.zeros((self.capacity, n_obs))
        self._dones = np.zeros(self.capacity, dtype=bool)
        self.write_index = 0
        self.size = 0

    def __len__(self):
        return self.size

    def push(self, s, a, r, s_next, done):
        """Store one transition, overwriting the oldest when full."""
        if not np.isfinite(r):
            raise InputContractError("reward must be finite, got %r" % r)
        s, _ = _check_input(s, self.n_obs, "s")
        s_next, _ = _check_input(s_next, self.n_obs, "s_next")
        if len(s) != 1 or len(s_next) != 1 or np.size(a) != 1:
            raise InputContractError("push stores one transition at a time")
        i = self.write_index
        self._obs[i] = s[0]
        self._actions[i] = a
        self._rewards[i] = r
        self._next_obs[i] = s_next[0]
        self._dones[i] = done
        self.write_index = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def push_transition(self, t):
        self.push(t.s, t.a, t.r, t.s_next, t.done)

    def _take(self, idx):
        return Batch(
            self._obs[idx],
            self._actions[idx],
            self._rewards[idx],
            self._next_obs[idx],
            self._dones[idx],
        )

    def _ordered(self):
        start = self.write_index if self.size == self.capacity else 0
        return (start + np.arange(self.size)) % self.capacity

    def sample(self, n, rng=None):
        """``n`` transitions drawn uniformly with replacement."""
        if self.size == 0:
            raise PreconditionError("cannot sample from an empty buffer")
        idx = check_random_state(rng).randint(self.size, size=n)
        return self._take(self._ordered()[idx])

    def arrays(self):
        """Every stored transition, oldest first, as a Batch of copies."""
        return self._take(self._ordered())

    def transitions(self):
        data = self.arrays()
        return [
            Transition(s, float(a[0]), float(r), s_next, bool(done), self.source)
            for s, a, r, s_next, done in zip(*data)
        ]
