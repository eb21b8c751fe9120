"""Experience storage: uniform ring buffer and SumTree-backed prioritized buffer.

Prioritized sampling draws transitions with probability p_i^alpha / sum_j
p_j^alpha, where p_i = |td_error_i| + epsilon_p. The tree stores the
already-exponentiated mass so proportional sampling is a prefix-sum descent.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NotReadyError


def _next_power_of_two(n: int) -> int:
    p = 1
    while p < n:
        p *= 2
    return p


class SumTree:
    """Complete binary tree whose internal nodes hold child sums.

    Leaf k covers the half-open prefix interval [cum_k, cum_k + value_k);
    a prefix mass equal to an interval boundary resolves to the right leaf.
    """

    def __init__(self, capacity: int):
        if capacity < 1 or capacity & (capacity - 1):
            raise ContractError("SumTree capacity must be a power of two")
        self.capacity = capacity
        self.nodes = np.zeros(2 * capacity - 1)
        self.node_visits = 0  # instrumentation for complexity checks

    def total(self) -> float:
        return float(self.nodes[0])

    def get(self, leaf: int) -> float:
        return float(self.nodes[self.capacity - 1 + leaf])

    def update(self, leaf: int, value: float) -> None:
        if not 0 <= leaf < self.capacity:
            raise ContractError(f"leaf {leaf} out of range")
        if value < 0:
            raise ContractError("priorities must be non-negative")
        idx = self.capacity - 1 + leaf
        delta = value - self.nodes[idx]
        while True:
            self.nodes[idx] += delta
            self.node_visits += 1
            if idx == 0:
                break
            idx = (idx - 1) // 2

    def find(self, prefix_mass: float) -> int:
        """Leaf whose cumulative interval contains ``prefix_mass``; O(log capacity)."""
        total = self.total()
        if not 0.0 <= prefix_mass <= total:
            raise ContractError(f"prefix mass {prefix_mass} outside [0, {total}]")
        if prefix_mass == total:
            # the boundary of the last non-empty interval; land inside it
            prefix_mass = np.nextafter(total, 0.0)
        idx = 0
        while idx < self.capacity - 1:
            self.node_visits += 1
            left = 2 * idx + 1
            if prefix_mass < self.nodes[left]:
                idx = left
            else:
                prefix_mass -= self.nodes[left]
                idx = left + 1
        return idx - (self.capacity - 1)


def sumtree_find(tree: SumTree, prefix_mass: float) -> int:
    return tree.find(prefix_mass)


@dataclass
class BetaSchedule:
    """Linear annealing for the importance-sampling exponent."""

    start: float = 0.4
    end: float = 1.0
    steps: int = 10_000

    def at(self, step: int) -> float:
        if self.steps <= 0:
            return self.end
        frac = min(1.0, max(0.0, step / self.steps))
        return self.start + frac * (self.end - self.start)


class PrioritizedBuffer:
    """Ring buffer over a SumTree mapping priorities to sampling mass."""

    def __init__(self, capacity: int = 2000, alpha: float = 0.6,
                 epsilon_p: float = 1e-5, use_is: bool = False,
                 beta: BetaSchedule | None = None):
        if capacity < 1:
            raise ContractError("capacity must be positive")
        if epsilon_p <= 0:
            raise ContractError("epsilon_p must be positive")
        self.capacity = capacity
        self.alpha = alpha
        self.epsilon_p = epsilon_p
        self.use_is = use_is
        self.beta = beta if beta is not None else BetaSchedule()
        self.tree = SumTree(_next_power_of_two(capacity))
        self.store: list = [None] * capacity
        self.priorities = np.zeros(capacity)  # raw p_i, pre-exponentiation
        self.write = 0
        self.size = 0
        self.max_priority_seen = 1.0
        self.sample_steps = 0

    def __len__(self) -> int:
        return self.size

    def _set_priority(self, idx: int, p: float) -> None:
        self.priorities[idx] = p
        self.tree.update(idx, p ** self.alpha)
        if p > self.max_priority_seen:
            self.max_priority_seen = p

    def push(self, transition) -> None:
        """Store at max seen priority so fresh transitions are sampled promptly."""
        idx = self.write
        self.store[idx] = transition
        self._set_priority(idx, self.max_priority_seen)
        self.write = (self.write + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def probability(self, idx: int) -> float:
        total = self.tree.total()
        return self.tree.get(idx) / total if total > 0 else 0.0

    def sample(self, batch: int, rng: np.random.Generator):
        """Stratified prefix-sum sampling; returns [(index, transition, prob)]."""
        if self.size < batch:
            raise NotReadyError(f"buffer holds {self.size} < batch {batch}")
        total = self.tree.total()
        out = []
        seg = total / batch
        for k in range(batch):
            mass = rng.uniform(k * seg, (k + 1) * seg)
            idx = self.tree.find(mass)
            out.append((idx, self.store[idx], self.tree.get(idx) / total))
        self.sample_steps += 1
        return out

    def update_priorities(self, indices, td_errors) -> None:
        td_errors = np.asarray(td_errors, dtype=np.float64)
        for idx, err in zip(indices, td_errors):
            if not 0 <= idx < self.size:
                raise ContractError(f"index {idx} out of range")
            self._set_priority(int(idx), abs(float(err)) + self.epsilon_p)

    def importance_weights(self, probs) -> np.ndarray:
        """(N*prob)^-beta normalized by the batch max; all-ones when IS is off."""
        probs = np.asarray(probs, dtype=np.float64)
        if not self.use_is:
            return np.ones_like(probs)
        beta = self.beta.at(self.sample_steps)
        w = (self.size * probs) ** (-beta)
        return w / w.max()

    def dump_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for i in range(self.size):
                fh.write(json.dumps({"priority": float(self.priorities[i]),
                                     "transition": _transition_doc(self.store[i])},
                                    sort_keys=True) + "\n")


def _transition_doc(tr) -> dict:
    if hasattr(tr, "to_json_dict"):
        return tr.to_json_dict()
    return {"repr": repr(tr)}


class UniformBuffer:
    """Plain experience-replay ring with uniform sampling."""

    def __init__(self, capacity: int = 2000):
        if capacity < 1:
            raise ContractError("capacity must be positive")
        self.capacity = capacity
        self.store: list = [None] * capacity
        self.write = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, transition) -> None:
        self.store[self.write] = transition
        self.write = (self.write + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator):
        if self.size < batch:
            raise NotReadyError(f"buffer holds {self.size} < batch {batch}")
        idx = rng.integers(0, self.size, size=batch)
        return [(int(i), self.store[int(i)], 1.0 / self.size) for i in idx]

    def update_priorities(self, indices, td_errors) -> None:
        pass  # uniform sampling ignores TD errors

    def importance_weights(self, probs) -> np.ndarray:
        return np.ones(len(probs))
