"""Reward-shaped imitation baseline.

Demonstration transitions are relabelled with a constant imitation reward
and mixed 50/50 with fresh environment transitions in every minibatch; a
plain soft actor-critic learns from the mix. There is no multiplier: the
imitation strength is fixed by the constant.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .agent import AgentConfig, rollout_stats
from .buffer import Batch
from .nn import polyak_update
from .sac import SACAgent

DEFAULT_SWEEP = tuple(round(0.1 * k, 1) for k in range(11))
REPORT_HEADER = ("imitation_reward", "ce", "mission_reward", "seed")


@dataclass
class ShapedConfig:
    imitation_reward: float = 0.0
    task_reward: float = 1.0
    # "env" keeps environment rewards on fresh transitions; "zero" drops them
    # (pure demonstration-reward learning)
    new_reward: str = "env"
    sweep: tuple = field(default_factory=lambda: DEFAULT_SWEEP)

    def __post_init__(self):
        self.sweep = tuple(float(v) for v in self.sweep)
        if not self.sweep:
            raise ValueError("sweep must list at least one imitation reward")
        if not all(math.isfinite(v) for v in self.sweep):
            raise ValueError(f"sweep values must be finite, got {self.sweep}")
        if not math.isfinite(self.imitation_reward):
            raise ValueError("imitation_reward must be finite")
        if self.new_reward not in ("env", "zero"):
            raise ValueError(f"new_reward must be 'env' or 'zero', got {self.new_reward!r}")


class ShapedAgent(SACAgent):
    """SAC on minibatches drawn half from the demo buffer, half from fresh experience."""

    def __init__(self, cfg: AgentConfig, featurize, demo=None, seed: int = 0,
                 shaped: ShapedConfig | None = None):
        super().__init__(cfg, featurize, demo, seed)
        self.shaped = shaped if shaped is not None else ShapedConfig()

    def mixed_batch(self) -> Batch:
        if self.buf_demo.size == 0:
            raise ValueError("the shaped baseline needs demonstration transitions")
        rng = self.rngs["batch"]
        n_demo = self.cfg.batch_size // 2
        demo = self.buf_demo.sample(rng, n_demo)
        demo = demo.with_rewards(np.full(n_demo, self.shaped.imitation_reward))
        new = self.buf_new.sample(rng, self.cfg.batch_size - n_demo)
        if self.shaped.new_reward == "zero":
            new = new.with_rewards(np.zeros(len(new)))
        return Batch.concat(demo, new)

    def gradient_step(self) -> dict:
        batch = self.mixed_batch()
        q_loss = self._sac_critic_step(batch)
        pi_loss = self._sac_policy_step(batch)
        polyak_update(self.q_target, self.critic, self.cfg.tau)
        if self.critic2 is not None:
            polyak_update(self.q2_target, self.critic2, self.cfg.tau)
        self.grad_steps += 1
        return {"critic_loss": q_loss, "policy_loss": pi_loss}


def run_shaped_agent(env, demo_transitions, cfg: ShapedConfig, steps: int, seed: int,
                     agent_cfg: AgentConfig, featurize, demo=None) -> ShapedAgent:
    """Train the shaped baseline for ``steps`` environment steps."""
    demo_transitions = list(demo_transitions)
    if not demo_transitions:
        raise ValueError("demo transitions must be nonempty")
    if hasattr(env, "task_reward"):
        env.task_reward = cfg.task_reward
    agent = ShapedAgent(agent_cfg, featurize, demo, seed, cfg)
    agent.buf_demo.extend(demo_transitions)
    while agent.env_steps < steps:
        agent.train_iteration(env)
    return agent


def sweep_and_report(make_env, demo, demo_transitions, cfg: ShapedConfig, steps: int,
                     eval_episodes: int, seeds, agent_cfg: AgentConfig, featurize,
                     out_path=None) -> list[dict]:
    """One row per (imitation reward, seed), sorted by imitation reward ascending.

    ``mission_reward`` is the mean per-episode task reward over
    ``eval_episodes`` evaluation episodes; ``ce`` the per-step cross-entropy
    to the demonstrator along those episodes.
    """
    rows = []
    for value in sorted(cfg.sweep):
        point = ShapedConfig(value, cfg.task_reward, cfg.new_reward, (value,))
        for seed in seeds:
            env = make_env()
            agent = run_shaped_agent(env, demo_transitions, point, steps, seed, agent_cfg, featurize, demo)
            eval_env = make_env()
            if hasattr(eval_env, "task_reward"):
                eval_env.task_reward = cfg.task_reward
            stats = rollout_stats(agent, eval_env, demo, eval_episodes, np.random.default_rng([seed, steps]))
            rows.append({"imitation_reward": value, "ce": stats["ce"],
                         "mission_reward": stats["task_reward"], "seed": int(seed)})
    if out_path is not None:
        write_report(rows, out_path)
    return rows


def write_report(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=REPORT_HEADER)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(row[k]) if isinstance(row[k], float) else row[k] for k in REPORT_HEADER})
