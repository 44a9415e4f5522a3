"""Fixed-capacity ring buffer of (s, a, r, s', done) transitions."""
from __future__ import annotations

import numpy as np


class ReplayBuffer:
    def __init__(self, capacity: int, obs_size: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, obs_size))
        self.s2 = np.zeros((capacity, obs_size))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.done = np.zeros(capacity, dtype=bool)
        self._next = 0
        self.size = 0
        self.pushed = 0

    def __len__(self) -> int:
        return self.size

    def push(self, s, a, r, s2, done) -> None:
        """Push one transition or a batch (leading axis) of them."""
        s = np.atleast_2d(np.asarray(s, dtype=float))
        s2 = np.atleast_2d(np.asarray(s2, dtype=float))
        a = np.atleast_1d(a)
        r = np.atleast_1d(r)
        done = np.atleast_1d(done)
        k = len(a)
        if k > self.capacity:
            s, a, r, s2, done = s[-self.capacity:], a[-self.capacity:], r[-self.capacity:], \
                s2[-self.capacity:], done[-self.capacity:]
        idx = (self._next + k - len(a) + np.arange(len(a))) % self.capacity
        self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx] = s, a, r, s2, done
        self._next = int((self._next + k) % self.capacity)
        self.size = min(self.size + k, self.capacity)
        self.pushed += k

    def sample(self, batch_size: int, rng: np.random.Generator):
        """Uniform batch without replacement."""
        if batch_size > self.size:
            raise ValueError(f"cannot sample {batch_size} from {self.size} transitions")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx]

    def ordered(self):
        """Stored transitions oldest first (for inspection and tests)."""
        if self.size < self.capacity:
            idx = np.arange(self.size)
        else:
            idx = (np.arange(self.capacity) + self._next) % self.capacity
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx]
