"""Prioritized replay, n-step return folding, and running observation norms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Transition:
    obs: np.ndarray           # normalized observation at decision time
    action: int
    n_step_return: float      # discounted reward sum over the folded window
    boot_obs: np.ndarray      # observation n steps later (bootstrap point)
    boot_mask: np.ndarray     # valid-action mask at boot_obs
    done: bool                # True when the window ran into the episode end
    gamma_n: float            # discount to apply to the bootstrap value


class NStepAccumulator:
    """Folds single-step rewards into n-step returns.

    ``push`` returns the transitions that became complete at this step; a
    terminal push (or ``flush``) drains the shortened tails.
    """

    def __init__(self, n: int, gamma: float):
        if n < 1:
            raise ValueError(f"n must be >= 1, got {n}")
        self.n = n
        self.gamma = float(gamma)
        self._window = []  # (obs, action, reward)

    def push(self, obs, action, reward, boot_obs, boot_mask, done):
        self._window.append((obs, int(action), float(reward)))
        if done:
            return self._drain(boot_obs, boot_mask, terminal=True)
        out = []
        if len(self._window) == self.n:
            out.append(self._fold(0, boot_obs, boot_mask, done=False))
            self._window.pop(0)
        return out

    def flush(self, boot_obs=None, boot_mask=None, terminal=True):
        """Drain shortened tails (episode ended or was truncated externally)."""
        return self._drain(boot_obs, boot_mask, terminal)

    def _drain(self, boot_obs, boot_mask, terminal):
        out = []
        while self._window:
            out.append(self._fold(0, boot_obs, boot_mask, done=terminal))
            self._window.pop(0)
        return out

    def _fold(self, start, boot_obs, boot_mask, done):
        g = 0.0
        m = len(self._window) - start
        for k in range(m):
            g += (self.gamma ** k) * self._window[start + k][2]
        obs, action, _ = self._window[start]
        return Transition(
            obs=obs,
            action=action,
            n_step_return=g,
            boot_obs=boot_obs,
            boot_mask=boot_mask,
            done=done,
            gamma_n=self.gamma ** m,
        )

    def __len__(self):
        return len(self._window)


class SumTree:
    """Array-backed binary sum tree over a fixed capacity of leaves."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        depth = 1
        while (1 << depth) < capacity:
            depth += 1
        self.leaf_base = (1 << depth) - 1
        self.tree = np.zeros((1 << (depth + 1)) - 1, dtype=np.float64)
        self.depth = depth

    def set(self, idx: int, value: float):
        node = self.leaf_base + idx
        delta = value - self.tree[node]
        while True:
            self.tree[node] += delta
            if node == 0:
                break
            node = (node - 1) // 2

    def get(self, idx: int) -> float:
        return float(self.tree[self.leaf_base + idx])

    @property
    def total(self) -> float:
        return float(self.tree[0])

    def find(self, u):
        """Vectorized descent: leaf indices whose cumulative range contains u."""
        u = np.asarray(u, dtype=np.float64).copy()
        node = np.zeros(u.shape, dtype=np.int64)
        for _ in range(self.depth):
            left = 2 * node + 1
            left_sum = self.tree[left]
            go_left = u < left_sum
            node = np.where(go_left, left, left + 1)
            u = np.where(go_left, u, u - left_sum)
        return np.minimum(node - self.leaf_base, self.capacity - 1)

    def leaves(self, count: int):
        return self.tree[self.leaf_base: self.leaf_base + count]


class PERBuffer:
    """Proportional prioritized replay with importance-sampling weights.

    Sampling draws independently with P(i) = p_i^alpha / sum_k p_k^alpha where
    p_i = |delta_i| + eps; the tree stores the exponentiated priorities so the
    prefix-sum descent realizes exactly that distribution.  Importance weights
    are (1 / (N P(i)))^beta normalized by the batch maximum, with beta
    annealed linearly toward 1.
    """

    def __init__(self, capacity: int, alpha: float = 0.6, beta: float = 0.4,
                 beta_end: float = 1.0, beta_steps: int = 100_000,
                 eps: float = 1e-3, seed: int = 0):
        if capacity <= 0:
            raise ValueError("capacity must be > 0")
        self.capacity = int(capacity)
        self.alpha = float(alpha)
        self.beta0 = float(beta)
        self.beta_end = float(beta_end)
        self.beta_steps = int(beta_steps)
        self.eps = float(eps)
        self._tree = SumTree(self.capacity)
        self._data = [None] * self.capacity
        self._write = 0
        self._size = 0
        self._max_priority = 1.0   # raw (pre-alpha) priority for fresh entries
        self._sample_calls = 0
        self._rng = np.random.default_rng(seed)

    def __len__(self):
        return self._size

    @property
    def beta(self) -> float:
        if self.beta_steps <= 0:
            return self.beta_end
        frac = min(1.0, self._sample_calls / self.beta_steps)
        return self.beta0 + (self.beta_end - self.beta0) * frac

    def push(self, transition: Transition):
        idx = self._write
        self._data[idx] = transition
        self._tree.set(idx, self._max_priority ** self.alpha)
        self._write = (self._write + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        return idx

    def sample(self, batch_size: int):
        if self._size == 0:
            raise ValueError("cannot sample from an empty buffer")
        total = self._tree.total
        u = self._rng.uniform(0.0, total, size=batch_size)
        indices = self._tree.find(u)
        indices = np.minimum(indices, self._size - 1)
        self._sample_calls += 1
        beta = self.beta
        leaf = self._tree.leaves(self._size)
        probs = leaf[indices] / total
        weights = (1.0 / (self._size * probs)) ** beta
        weights = weights / weights.max()
        batch = [self._data[i] for i in indices]
        return batch, indices, weights

    def update_priorities(self, indices, td_errors):
        td_errors = np.abs(np.asarray(td_errors, dtype=np.float64))
        for idx, delta in zip(np.asarray(indices, dtype=np.int64), td_errors):
            p = float(delta) + self.eps
            self._max_priority = max(self._max_priority, p)
            self._tree.set(int(idx), p ** self.alpha)

    def probabilities(self):
        """Current sampling distribution over the stored entries."""
        leaf = self._tree.leaves(self._size)
        return leaf / leaf.sum()


class RunningNorm:
    """Per-feature Welford statistics with clipping normalization.

    Uses the sample (n-1) variance.  Constant streams normalize to zeros; the
    output is clipped to +-clip so outliers cannot blow up the inputs.
    """

    def __init__(self, dim: int, clip: float = 5.0):
        self.dim = int(dim)
        self.clip = float(clip)
        self.count = 0
        self.mean = np.zeros(self.dim, dtype=np.float64)
        self.m2 = np.zeros(self.dim, dtype=np.float64)

    def observe(self, x):
        x = np.asarray(x, dtype=np.float64)
        self.count += 1
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    @property
    def std(self):
        if self.count < 2:
            return np.zeros(self.dim)
        return np.sqrt(self.m2 / (self.count - 1))

    def normalize(self, x):
        x = np.asarray(x, dtype=np.float64)
        z = (x - self.mean) / (self.std + 1e-8)
        return np.clip(z, -self.clip, self.clip)

    def to_doc(self):
        return {"dim": self.dim, "clip": self.clip, "count": self.count,
                "mean": self.mean.tolist(), "m2": self.m2.tolist()}

    @classmethod
    def from_doc(cls, doc):
        norm = cls(int(doc["dim"]), float(doc["clip"]))
        norm.count = int(doc["count"])
        norm.mean = np.asarray(doc["mean"], dtype=np.float64)
        norm.m2 = np.asarray(doc["m2"], dtype=np.float64)
        return norm
