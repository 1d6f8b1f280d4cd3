from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .envs import Transition


@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray

    def __len__(self):
        return self.rewards.shape[0]

    def with_rewards(self, rewards) -> "Batch":
        return Batch(self.states, self.actions, np.asarray(rewards, dtype=float), self.next_states, self.dones)

    @staticmethod
    def concat(a: "Batch", b: "Batch") -> "Batch":
        return Batch(*(np.concatenate([x, y]) for x, y in zip(
            (a.states, a.actions, a.rewards, a.next_states, a.dones),
            (b.states, b.actions, b.rewards, b.next_states, b.dones))))

    @classmethod
    def from_transitions(cls, transitions) -> "Batch":
        return cls(
            np.stack([t.state for t in transitions]),
            np.stack([t.action for t in transitions]),
            np.array([t.reward for t in transitions]),
            np.stack([t.next_state for t in transitions]),
            np.array([float(t.done) for t in transitions]),
        )


class ReplayBuffer:
    """Fixed-capacity ring buffer of transitions with uniform sampling."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.state_dim, self.action_dim = state_dim, action_dim
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, t: Transition) -> None:
        i = self.cursor
        self.states[i] = t.state
        self.actions[i] = t.action
        self.rewards[i] = t.reward
        self.next_states[i] = t.next_state
        self.dones[i] = float(t.done)
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def extend(self, transitions) -> None:
        for t in transitions:
            self.add(t)

    def sample(self, rng: np.random.Generator, batch_size: int) -> Batch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, self.size, size=batch_size)
        return self.gather(idx)

    def gather(self, idx) -> Batch:
        return Batch(self.states[idx], self.actions[idx], self.rewards[idx], self.next_states[idx], self.dones[idx])

    def transitions(self) -> list[Transition]:
        """Contents in insertion order (oldest first)."""
        start = self.cursor if self.size == self.capacity else 0
        order = [(start + k) % self.capacity for k in range(self.size)]
        return [Transition(self.states[i], self.actions[i], self.rewards[i], self.next_states[i],
                           bool(self.dones[i])) for i in order]

    def to_dict(self) -> dict:
        n = self.size
        return {
            "capacity": self.capacity, "state_dim": self.state_dim, "action_dim": self.action_dim,
            "cursor": self.cursor, "size": n,
            "states": self.states[:n].ravel().tolist(), "actions": self.actions[:n].ravel().tolist(),
            "rewards": self.rewards[:n].tolist(), "next_states": self.next_states[:n].ravel().tolist(),
            "dones": self.dones[:n].tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReplayBuffer":
        buf = cls(d["capacity"], d["state_dim"], d["action_dim"])
        n = d["size"]
        buf.states[:n] = np.array(d["states"]).reshape(n, buf.state_dim)
        buf.actions[:n] = np.array(d["actions"]).reshape(n, buf.action_dim)
        buf.rewards[:n] = d["rewards"]
        buf.next_states[:n] = np.array(d["next_states"]).reshape(n, buf.state_dim)
        buf.dones[:n] = d["dones"]
        buf.cursor, buf.size = d["cursor"], n
        return buf
