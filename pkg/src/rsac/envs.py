"""Desk-scale chase tasks and scripted demonstration policies.

Both chase tasks put the agent in the bottom-right corner and a static
target in the top-left one. Reaching the target pays +1 and ends the
episode; every step that lands in the upper half of the arena while still
far from the target pays -0.01. The scripted demonstrator circles in the
lower half and never approaches the target.

Coordinates are (x, y) with y pointing up.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .distributions import Categorical, SquashedGaussianParams, squashed_log_prob_pre
from .mdp import DiscreteMDP

UP, DOWN, LEFT, RIGHT, STAY = range(5)
MOVES = np.array([(0, 1), (0, -1), (-1, 0), (1, 0), (0, 0)])
ACTION_NAMES = ("up", "down", "left", "right", "stay")


class UsageError(RuntimeError):
    pass


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool

    def __post_init__(self):
        self.state = np.asarray(self.state, dtype=float)
        self.next_state = np.asarray(self.next_state, dtype=float)
        self.action = np.atleast_1d(np.asarray(self.action, dtype=float))
        self.reward = float(self.reward)
        self.done = bool(self.done)
        if not np.isfinite(self.reward):
            raise ValueError("transition reward must be finite")

    def to_dict(self) -> dict:
        return {
            "state": self.state.tolist(),
            "action": self.action.tolist(),
            "reward": self.reward,
            "next_state": self.next_state.tolist(),
            "done": self.done,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transition":
        return cls(d["state"], d["action"], d["reward"], d["next_state"], d["done"])


def save_transitions(path, transitions) -> None:
    with open(path, "w") as fh:
        for t in transitions:
            fh.write(json.dumps(t.to_dict()) + "\n")


def load_transitions(path) -> list[Transition]:
    lines = Path(path).read_text().splitlines()
    return [Transition.from_dict(json.loads(line)) for line in lines if line.strip()]


class _Episodic:
    max_steps: int

    def _begin(self):
        self.step_count = 0
        self.done = False
        self.truncated = False

    @property
    def finished(self) -> bool:
        return self.done or self.truncated

    def _check_running(self):
        if self.finished:
            raise UsageError("episode finished; call reset() before stepping again")

    def _advance(self, terminal: bool):
        self.step_count += 1
        self.done = terminal
        self.truncated = (not terminal) and self.step_count >= self.max_steps


class GridChase(_Episodic):
    discrete = True
    n_actions = 5
    state_dim = 2

    def __init__(self, width: int = 8, height: int = 8, max_steps: int = 200,
                 far_threshold: int = 2, aux_reward: float = -0.01, task_reward: float = 1.0):
        if width < 2 or height < 2:
            raise ValueError("grid must be at least 2x2")
        self.width, self.height = width, height
        self.max_steps = max_steps
        self.far_threshold = far_threshold
        self.aux_reward = aux_reward
        self.task_reward = task_reward
        self.start = np.array([width - 1, 0])
        self.target = np.array([0, height - 1])
        self.reset()

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    @property
    def obs_dim(self) -> int:
        return self.n_cells

    def in_upper_half(self, pos) -> bool:
        return pos[1] >= self.height // 2

    def reset(self, rng: np.random.Generator | None = None, start=None) -> np.ndarray:
        """Start at the default corner, or at ``start`` (an (x, y) cell) if given."""
        if start is None:
            self.agent_pos = self.start.copy()
        else:
            pos = np.asarray(start, dtype=int).reshape(2)
            if not (0 <= pos[0] < self.width and 0 <= pos[1] < self.height):
                raise ValueError(f"start cell {tuple(pos)} lies outside the grid")
            if np.array_equal(pos, self.target):
                raise ValueError("cannot start on the target cell")
            self.agent_pos = pos
        self._begin()
        return self.state

    @property
    def state(self) -> np.ndarray:
        return self.agent_pos.astype(float)

    def lower_half_cells(self) -> list[tuple[int, int]]:
        return [(x, y) for y in range(self.height // 2) for x in range(self.width)]

    def cell_index(self, states) -> np.ndarray:
        s = np.asarray(states, dtype=float).reshape(-1, 2).astype(int)
        return s[:, 1] * self.width + s[:, 0]

    def observe(self, states) -> np.ndarray:
        idx = self.cell_index(states)
        out = np.zeros((idx.size, self.n_cells))
        out[np.arange(idx.size), idx] = 1.0
        return out

    def _move(self, pos, action):
        nxt = pos + MOVES[action]
        if not (0 <= nxt[0] < self.width and 0 <= nxt[1] < self.height):
            return pos.copy()
        return nxt

    def _reward(self, nxt) -> tuple[float, bool]:
        if np.array_equal(nxt, self.target):
            return self.task_reward, True
        cheb = np.max(np.abs(nxt - self.target))
        if self.in_upper_half(nxt) and cheb > self.far_threshold:
            return self.aux_reward, False
        return 0.0, False

    def step(self, action):
        self._check_running()
        a = int(np.asarray(action).ravel()[0])
        if not 0 <= a < self.n_actions:
            raise ValueError(f"invalid action {a}")
        self.agent_pos = self._move(self.agent_pos, a)
        reward, terminal = self._reward(self.agent_pos)
        self._advance(terminal)
        return self.state, reward, terminal

    def get_state(self) -> dict:
        return {"agent_pos": self.agent_pos.tolist(), "step_count": self.step_count,
                "done": self.done, "truncated": self.truncated}

    def set_state(self, d: dict) -> None:
        self.agent_pos = np.array(d["agent_pos"], dtype=int)
        self.step_count = int(d["step_count"])
        self.done = bool(d["done"])
        self.truncated = bool(d["truncated"])


def as_discrete_mdp(env: GridChase, gamma: float = 0.99) -> DiscreteMDP:
    """Exact tensor form of GridChase; cell ``y * width + x``, plus one absorbing state.

    Moving onto the target leads to the absorbing state. The target cell
    itself is never occupied during an episode; its row also leads to the
    absorbing state with zero reward.
    """
    if not isinstance(env, GridChase):
        raise TypeError("as_discrete_mdp supports GridChase only")
    n = env.n_cells
    absorbing = n
    P = np.zeros((n + 1, env.n_actions, n + 1))
    R = np.zeros((n + 1, env.n_actions))
    target_idx = int(env.cell_index(env.target)[0])
    for y in range(env.height):
        for x in range(env.width):
            s = y * env.width + x
            for a in range(env.n_actions):
                if s == target_idx:
                    P[s, a, absorbing] = 1.0
                    continue
                nxt = env._move(np.array([x, y]), a)
                r, terminal = env._reward(nxt)
                R[s, a] = r
                P[s, a, absorbing if terminal else int(env.cell_index(nxt)[0])] = 1.0
    P[absorbing, :, absorbing] = 1.0
    initial = np.zeros(n + 1)
    initial[int(env.cell_index(env.start)[0])] = 1.0
    return DiscreteMDP(P, R, gamma, terminal=frozenset({absorbing}), initial=initial)


class PointChase(_Episodic):
    """Point mass in the arena [-1, 1]^2 driven by a clipped 2-d acceleration."""

    discrete = False
    action_dim = 2
    state_dim = 4
    obs_dim = 4

    def __init__(self, dt: float = 0.1, max_steps: int = 200, accel: float = 2.0,
                 max_speed: float = 1.0, reach_radius: float = 0.1, far_threshold: float = 0.3,
                 aux_reward: float = -0.01, task_reward: float = 1.0, start_noise: float = 0.0):
        self.dt, self.max_steps, self.accel, self.max_speed = dt, max_steps, accel, max_speed
        self.reach_radius, self.far_threshold = reach_radius, far_threshold
        self.aux_reward, self.task_reward = aux_reward, task_reward
        self.start_noise = start_noise
        self.start = np.array([0.9, -0.9])
        self.target = np.array([-0.9, 0.9])
        self.reset(np.random.default_rng(0))

    def in_upper_half(self, pos) -> bool:
        return pos[1] > 0.0

    def reset(self, rng: np.random.Generator | None = None) -> np.ndarray:
        self.pos = self.start.copy()
        if self.start_noise > 0:
            if rng is None:
                raise ValueError("start_noise > 0 needs an rng")
            self.pos = np.clip(self.pos + rng.uniform(-self.start_noise, self.start_noise, 2), -1, 1)
        self.vel = np.zeros(2)
        self._begin()
        return self.state

    @property
    def state(self) -> np.ndarray:
        return np.concatenate([self.pos, self.vel])

    def observe(self, states) -> np.ndarray:
        return np.asarray(states, dtype=float).reshape(-1, 4)

    def step(self, action):
        self._check_running()
        a = np.clip(np.asarray(action, dtype=float).reshape(2), -1.0, 1.0)
        vel = self.vel + self.accel * self.dt * a
        speed = np.linalg.norm(vel)
        if speed > self.max_speed:
            vel *= self.max_speed / speed
        pos = self.pos + vel * self.dt
        hit = np.abs(pos) > 1.0
        pos = np.clip(pos, -1.0, 1.0)
        vel[hit] = 0.0
        self.pos, self.vel = pos, vel
        dist = np.linalg.norm(pos - self.target)
        terminal = bool(dist < self.reach_radius)
        if terminal:
            reward = self.task_reward
        elif self.in_upper_half(pos) and dist > self.far_threshold:
            reward = self.aux_reward
        else:
            reward = 0.0
        self._advance(terminal)
        return self.state, reward, terminal

    def get_state(self) -> dict:
        return {"pos": self.pos.tolist(), "vel": self.vel.tolist(), "step_count": self.step_count,
                "done": self.done, "truncated": self.truncated}

    def set_state(self, d: dict) -> None:
        self.pos = np.array(d["pos"], dtype=float)
        self.vel = np.array(d["vel"], dtype=float)
        self.step_count = int(d["step_count"])
        self.done = bool(d["done"])
        self.truncated = bool(d["truncated"])


class ContinuousBandit(_Episodic):
    """One-step task with reward -(a - center)^2; used to sanity-check the actor-critic."""

    discrete = False
    action_dim = 1
    state_dim = 1
    obs_dim = 1

    def __init__(self, center: float = 0.3):
        self.center = center
        self.max_steps = 1
        self._begin()

    def reward_fn(self, a):
        return -(np.asarray(a) - self.center) ** 2

    def reset(self, rng=None):
        self._begin()
        return self.state

    @property
    def state(self):
        return np.zeros(1)

    def observe(self, states):
        return np.asarray(states, dtype=float).reshape(-1, 1)

    def step(self, action):
        self._check_running()
        a = float(np.clip(np.asarray(action, dtype=float).ravel()[0], -1.0, 1.0))
        self._advance(True)
        return self.state, float(self.reward_fn(a)), True

    def get_state(self):
        return {"step_count": self.step_count, "done": self.done, "truncated": self.truncated}

    def set_state(self, d):
        self.step_count, self.done, self.truncated = d["step_count"], d["done"], d["truncated"]


# ---------------------------------------------------------------------------
# Demonstration policies

class GridLoopDemo:
    """Scripted demonstrator walking a rectangular loop in the lower half of GridChase.

    On the loop it goes up the left edge, right along the top edge, down the
    right edge and left along the bottom edge. Off the loop (but in the lower
    half) it heads for the nearest loop cell. The chosen action gets mass
    ``1 - epsilon``; the rest is spread evenly. In the upper half the
    distribution is uniform.
    """

    kind = "scripted-circle"
    discrete = True

    def __init__(self, env: GridChase, epsilon: float = 0.01, loop=None):
        if not 0 < epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        self.env = env
        self.epsilon = epsilon
        half = env.height // 2
        self.x0, self.x1, self.y0, self.y1 = loop if loop is not None else (1, env.width - 2, 0, half - 1)
        if not (0 <= self.x0 < self.x1 < env.width and 0 <= self.y0 < self.y1 < half):
            raise ValueError(f"loop {loop} must be a rectangle inside the lower half")
        self.n_actions = env.n_actions
        self.table = self._build_table()
        self.log_table = np.log(self.table)

    def mode_action(self, pos) -> int | None:
        """Scripted action at ``pos``; None in the upper half."""
        x, y = int(pos[0]), int(pos[1])
        if self.env.in_upper_half((x, y)):
            return None
        x0, x1, y0, y1 = self.x0, self.x1, self.y0, self.y1
        on_loop = (x in (x0, x1) and y0 <= y <= y1) or (y in (y0, y1) and x0 <= x <= x1)
        if on_loop:
            if x == x0 and y < y1:
                return UP
            if y == y1 and x < x1:
                return RIGHT
            if x == x1 and y > y0:
                return DOWN
            return LEFT
        # nearest loop cell, ties broken toward the horizontal move
        if x < x0:
            return RIGHT
        if x > x1:
            return LEFT
        if y > y1:
            return DOWN
        if y < y0:
            return UP
        gaps = {LEFT: x - x0, RIGHT: x1 - x, DOWN: y - y0, UP: y1 - y}
        return min(gaps, key=lambda a: (gaps[a], a))

    def _build_table(self) -> np.ndarray:
        K = self.n_actions
        table = np.full((self.env.n_cells, K), 1.0 / K)
        for y in range(self.env.height):
            for x in range(self.env.width):
                a = self.mode_action((x, y))
                if a is not None:
                    row = np.full(K, self.epsilon / (K - 1))
                    row[a] = 1.0 - self.epsilon
                    table[y * self.env.width + x] = row
        return table

    def tabular(self, n_extra_states: int = 1) -> np.ndarray:
        """Table over ``as_discrete_mdp`` states (absorbing rows uniform)."""
        return np.vstack([self.table, np.full((n_extra_states, self.n_actions), 1.0 / self.n_actions)])

    def probs(self, states) -> np.ndarray:
        return self.table[self.env.cell_index(states)]

    def log_probs(self, states) -> np.ndarray:
        return self.log_table[self.env.cell_index(states)]

    def action_dist(self, state) -> Categorical:
        return Categorical(self.probs(state)[0])

    def act(self, state, rng=None, sample: bool = False):
        if sample:
            return int(rng.choice(self.n_actions, p=self.probs(state)[0]))
        return int(np.argmax(self.probs(state)[0]))


class TableDemo:
    """Demonstrator given as a [cells, actions] table, floored by epsilon."""

    kind = "table"
    discrete = True

    def __init__(self, env: GridChase, table, epsilon: float = 0.01):
        table = np.asarray(table, dtype=float)
        if table.shape != (env.n_cells, env.n_actions):
            raise ValueError(f"table must be [{env.n_cells}, {env.n_actions}]")
        table = table / table.sum(-1, keepdims=True)
        self.env = env
        self.epsilon = epsilon
        self.n_actions = env.n_actions
        self.table = (1.0 - epsilon) * table + epsilon / env.n_actions
        self.log_table = np.log(self.table)

    tabular = GridLoopDemo.tabular
    probs = GridLoopDemo.probs
    log_probs = GridLoopDemo.log_probs
    action_dist = GridLoopDemo.action_dist
    act = GridLoopDemo.act


class PointCircleDemo:
    """Squashed-Gaussian demonstrator circling in the lower half of PointChase.

    Same orientation as the grid loop: up on the left side, down on the right.
    """

    kind = "scripted-circle"
    discrete = False

    def __init__(self, env: PointChase, center=(0.0, -0.5), radius: float = 0.3, speed: float = 0.5,
                 gain: float = 3.0, std: float = 0.2):
        self.env = env
        self.center = np.asarray(center, dtype=float)
        self.radius, self.speed, self.gain = radius, speed, gain
        self.log_std_val = float(np.log(std))
        self.action_dim = env.action_dim

    def params(self, states):
        s = np.asarray(states, dtype=float).reshape(-1, 4)
        pos, vel = s[:, :2], s[:, 2:]
        r = pos - self.center
        dist = np.maximum(np.linalg.norm(r, axis=1, keepdims=True), 1e-9)
        tangent = np.stack([r[:, 1], -r[:, 0]], axis=1) / dist
        want = self.speed * tangent + self.gain * (self.radius - dist) * r / dist
        acc = np.clip(self.gain * (want - vel), -0.95, 0.95)
        mean = np.arctanh(acc)
        log_std = np.full_like(mean, self.log_std_val)
        upper = pos[:, 1] > 0.0
        mean[upper] = 0.0
        log_std[upper] = 0.0
        return mean, log_std

    def log_prob_pre(self, states, u):
        mean, log_std = self.params(states)
        return squashed_log_prob_pre(u, mean, log_std)

    def action_dist(self, state) -> SquashedGaussianParams:
        mean, log_std = self.params(state)
        return SquashedGaussianParams(mean[0], log_std[0])

    def act(self, state, rng=None, sample: bool = False):
        dist = self.action_dist(state)
        if sample:
            return dist.sample(rng)
        return np.tanh(dist.mean)


def demo_action_dist(demo, state):
    return demo.action_dist(state)


def record_demo(env, demo, episodes: int, rng: np.random.Generator | None = None,
                sample: bool = False, starts=None) -> list[Transition]:
    """Roll out the demonstrator; mode actions unless ``sample``.

    ``starts`` (GridChase only) is a list of start cells cycled over the
    episodes, so the recording can cover cells the default start never reaches.
    """
    out = []
    for k in range(episodes):
        s = env.reset(rng) if starts is None else env.reset(rng, start=starts[k % len(starts)])
        while not env.finished:
            a = demo.act(s, rng, sample=sample)
            s2, r, done = env.step(a)
            out.append(Transition(s, a, r, s2, done))
            s = s2
    return out
