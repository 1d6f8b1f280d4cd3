from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class DiscreteMDP:
    """Finite MDP with tensors ``transition[s, a, s']`` and ``reward[s, a]``.

    ``initial`` is the start-state distribution used by occupancy
    computations; it defaults to uniform over non-terminal states.
    Terminal states must self-loop with zero reward.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    terminal: frozenset = frozenset()
    initial: np.ndarray | None = None
    n_states: int = field(init=False)
    n_actions: int = field(init=False)

    def __post_init__(self):
        self.transition = np.asarray(self.transition, dtype=float)
        self.reward = np.asarray(self.reward, dtype=float)
        self.terminal = frozenset(int(s) for s in self.terminal)
        if self.transition.ndim != 3 or self.transition.shape[0] != self.transition.shape[2]:
            raise ValueError(f"transition must be [S, A, S], got {self.transition.shape}")
        self.n_states, self.n_actions, _ = self.transition.shape
        if self.reward.shape != (self.n_states, self.n_actions):
            raise ValueError(f"reward must be [{self.n_states}, {self.n_actions}], got {self.reward.shape}")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")
        if np.any(self.transition < 0) or not np.allclose(self.transition.sum(-1), 1.0, atol=1e-12, rtol=0):
            raise ValueError("each transition[s, a] must be a probability vector")
        if not np.all(np.isfinite(self.reward)):
            raise ValueError("reward contains non-finite entries")
        for s in self.terminal:
            if not 0 <= s < self.n_states:
                raise ValueError(f"terminal state {s} out of range")
            if not np.all(self.transition[s, :, s] == 1.0) or np.any(self.reward[s] != 0.0):
                raise ValueError(f"terminal state {s} must self-loop with zero reward")
        if self.initial is None:
            init = np.ones(self.n_states)
            init[list(self.terminal)] = 0.0
            if init.sum() == 0:
                init[:] = 1.0
            self.initial = init / init.sum()
        else:
            self.initial = np.asarray(self.initial, dtype=float)
            if self.initial.shape != (self.n_states,) or abs(self.initial.sum() - 1.0) > 1e-12:
                raise ValueError("initial must be a distribution over states")

    @property
    def terminal_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_states, dtype=bool)
        mask[list(self.terminal)] = True
        return mask

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "terminal": sorted(self.terminal),
            "initial": self.initial.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DiscreteMDP":
        missing = {"n_states", "n_actions", "gamma", "transition", "reward"} - set(doc)
        if missing:
            raise ValueError(f"MDP document missing keys: {sorted(missing)}")
        mdp = cls(
            transition=np.asarray(doc["transition"], dtype=float),
            reward=np.asarray(doc["reward"], dtype=float),
            gamma=float(doc["gamma"]),
            terminal=frozenset(doc.get("terminal", [])),
            initial=None if doc.get("initial") is None else np.asarray(doc["initial"], dtype=float),
        )
        if (mdp.n_states, mdp.n_actions) != (doc["n_states"], doc["n_actions"]):
            raise ValueError(
                f"declared shape ({doc['n_states']}, {doc['n_actions']}) does not match tensors "
                f"({mdp.n_states}, {mdp.n_actions})"
            )
        return mdp

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "DiscreteMDP":
        return cls.from_dict(json.loads(text))


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float,
               reward_scale: float = 1.0, branching: int | None = None) -> DiscreteMDP:
    """Garnet-style random MDP: each (s, a) reaches ``branching`` successor states."""
    b = n_states if branching is None else min(branching, n_states)
    P = np.zeros((n_states, n_actions, n_states))
    for s in range(n_states):
        for a in range(n_actions):
            succ = rng.choice(n_states, size=b, replace=False)
            P[s, a, succ] = rng.dirichlet(np.ones(b))
    P /= P.sum(-1, keepdims=True)
    R = reward_scale * rng.uniform(-1.0, 1.0, size=(n_states, n_actions))
    return DiscreteMDP(P, R, gamma)
