"""Regularized soft actor-critic.

One critic ``Q_theta`` with a Polyak-tracked target copy, a policy
``pi_phi`` and a non-negative multiplier ``beta`` on the cross-entropy to
a demonstration policy. Every gradient step runs two phases:

1. a minibatch from the fresh buffer with ``beta`` forced to zero (plain
   SAC update), followed by a projected dual step on ``beta``;
2. a minibatch from the demonstration buffer with the current ``beta``.

Discrete mode (categorical policy, critic outputs one value per action)
uses exact expectations over actions in the policy loss and cross-entropy.
Continuous mode uses a tanh-squashed Gaussian policy with the
reparameterization trick.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .buffer import Batch, ReplayBuffer
from .distributions import LOG_STD_MAX, LOG_STD_MIN, squashed_log_prob_pre, tanh_log_jacobian
from .envs import Transition
from .nn import Adam, Mlp, TrainingError, adam_step, backward, forward, polyak_update
from .tabular import DualState, dual_step

RNG_STREAMS = ("act", "batch", "noise", "dual")


@dataclass
class AgentConfig:
    mode: str = "discrete"
    obs_dim: int = 1
    state_dim: int = 1
    n_actions: int = 2
    action_dim: int = 1
    hidden: tuple = (64, 64)
    alpha: float = 0.2
    beta0: float = 0.0
    ce_target: float = 1.0
    lr_beta: float = 1e-3
    lr_q: float = 3e-4
    lr_pi: float = 3e-4
    tau: float = 0.005
    gamma: float = 0.99
    batch_size: int = 256
    buffer_capacity: int = 100_000
    env_steps_per_iter: int = 1
    grad_steps_per_iter: int = 1
    learning_starts: int = 0
    twin_critic: bool = False
    reuse_dual_batch: bool = True
    demo_updates: bool = True
    update_beta: bool = True
    # "expected" sums the bootstrap over next actions; "sampled" draws one a'
    discrete_target: str = "expected"

    def __post_init__(self):
        if self.mode not in ("discrete", "continuous"):
            raise ValueError(f"mode must be 'discrete' or 'continuous', got {self.mode!r}")
        if self.discrete_target not in ("expected", "sampled"):
            raise ValueError(f"discrete_target must be 'expected' or 'sampled'")
        self.hidden = tuple(int(h) for h in self.hidden)

    @property
    def discrete(self) -> bool:
        return self.mode == "discrete"

    @property
    def buffer_action_dim(self) -> int:
        return 1 if self.discrete else self.action_dim


def log_softmax(z):
    m = z.max(axis=-1, keepdims=True)
    z = z - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def spawn_rngs(seed: int):
    ss = np.random.SeedSequence(seed)
    init, *rest = (np.random.default_rng(s) for s in ss.spawn(1 + len(RNG_STREAMS)))
    return init, dict(zip(RNG_STREAMS, rest))


def build_networks(cfg: AgentConfig, rng: np.random.Generator):
    """Critic, optional second critic, policy; drawn from ``rng`` in that order."""
    if cfg.discrete:
        q_sizes = [cfg.obs_dim, *cfg.hidden, cfg.n_actions]
        pi_sizes = [cfg.obs_dim, *cfg.hidden, cfg.n_actions]
    else:
        q_sizes = [cfg.obs_dim + cfg.action_dim, *cfg.hidden, 1]
        pi_sizes = [cfg.obs_dim, *cfg.hidden, 2 * cfg.action_dim]
    critic = Mlp.init(q_sizes, rng)
    critic2 = Mlp.init(q_sizes, rng) if cfg.twin_critic else None
    policy = Mlp.init(pi_sizes, rng)
    return critic, critic2, policy


class RSACAgent:
    def __init__(self, cfg: AgentConfig, featurize, demo=None, seed: int = 0):
        self.cfg = cfg
        self.featurize = featurize
        self.demo = demo
        init_rng, self.rngs = spawn_rngs(seed)
        self.critic, self.critic2, self.policy = build_networks(cfg, init_rng)
        self.q_target = self.critic.copy()
        self.q2_target = self.critic2.copy() if self.critic2 is not None else None
        self.q_opt = Adam.for_net(self.critic, cfg.lr_q)
        self.q2_opt = Adam.for_net(self.critic2, cfg.lr_q) if self.critic2 is not None else None
        self.pi_opt = Adam.for_net(self.policy, cfg.lr_pi)
        self.dual = DualState(cfg.beta0, cfg.alpha, cfg.ce_target, cfg.lr_beta)
        self.buf_new = ReplayBuffer(cfg.buffer_capacity, cfg.state_dim, cfg.buffer_action_dim)
        self.buf_demo = ReplayBuffer(cfg.buffer_capacity, cfg.state_dim, cfg.buffer_action_dim)
        self.env_steps = 0
        self.grad_steps = 0
        self.episodes = 0
        self._state = None
        self._ep_return = 0.0
        self.last_metrics: dict = {}

    @property
    def alpha(self) -> float:
        return self.cfg.alpha

    @property
    def beta(self) -> float:
        return self.dual.beta

    # ------------------------------------------------------------------
    # policy

    def _policy_head(self, out):
        d = self.cfg.action_dim
        mean, raw = out[:, :d], out[:, d:]
        return mean, np.clip(raw, LOG_STD_MIN, LOG_STD_MAX), raw

    def action_probs(self, obs):
        logp = log_softmax(self.policy(obs))
        return np.exp(logp), logp

    def gaussian_params(self, obs):
        mean, log_std, _ = self._policy_head(self.policy(obs))
        return mean, log_std

    def sample_action(self, state, rng: np.random.Generator, deterministic: bool = False):
        """Returns (env action, pre-squash value or None)."""
        obs = self.featurize(np.asarray(state)[None])
        if self.cfg.discrete:
            probs, _ = self.action_probs(obs)
            p = probs[0]
            a = int(np.argmax(p)) if deterministic else int(rng.choice(p.size, p=p))
            return a, None
        mean, log_std = self.gaussian_params(obs)
        u = mean[0] if deterministic else mean[0] + np.exp(log_std[0]) * rng.standard_normal(mean.shape[1])
        return np.tanh(u), u

    def _sample_squashed(self, obs, eps=None, rng=None):
        out = self.policy(obs)
        mean, log_std, _ = self._policy_head(out)
        if eps is None:
            eps = rng.standard_normal(mean.shape)
        u = mean + np.exp(log_std) * eps
        return np.tanh(u), u, squashed_log_prob_pre(u, mean, log_std)

    def _demo_log_probs(self, states):
        if self.demo is None:
            raise ValueError("beta > 0 requires a demonstration policy")
        return self.demo.log_probs(states)

    # ------------------------------------------------------------------
    # critic

    def _q_all(self, net, obs):
        return net(obs)

    def _q_sa(self, net, obs, actions):
        return net(np.concatenate([obs, actions], axis=1))[:, 0]

    def critic_target(self, batch: Batch, beta_effective: float, next_actions=None) -> np.ndarray:
        """Bootstrap targets y = r + gamma (1 - done) [Qbar - alpha log pi + beta log demo](s', a').

        Only target-network parameters enter ``y``. ``next_actions`` fixes a'
        (discrete: indices, continuous: pre-squash values); otherwise a' is
        drawn from the current policy (or summed over in discrete
        "expected" mode).
        """
        cfg = self.cfg
        obs2 = self.featurize(batch.next_states)
        if cfg.discrete:
            _, logp2 = self.action_probs(obs2)
            q2 = self._q_all(self.q_target, obs2)
            if self.q2_target is not None:
                q2 = np.minimum(q2, self._q_all(self.q2_target, obs2))
            soft = q2 - cfg.alpha * logp2
            if beta_effective:
                soft = soft + beta_effective * self._demo_log_probs(batch.next_states)
            if next_actions is not None:
                v2 = soft[np.arange(len(batch)), np.asarray(next_actions, dtype=int)]
            elif cfg.discrete_target == "expected":
                v2 = np.sum(np.exp(logp2) * soft, axis=1)
            else:
                idx = _sample_rows(np.exp(logp2), self.rngs["noise"])
                v2 = soft[np.arange(len(batch)), idx]
        else:
            if next_actions is not None:
                out = self.policy(obs2)
                mean, log_std, _ = self._policy_head(out)
                u2 = np.asarray(next_actions, dtype=float).reshape(mean.shape)
                a2, logp2 = np.tanh(u2), squashed_log_prob_pre(u2, mean, log_std)
            else:
                a2, u2, logp2 = self._sample_squashed(obs2, rng=self.rngs["noise"])
            q2 = self._q_sa(self.q_target, obs2, a2)
            if self.q2_target is not None:
                q2 = np.minimum(q2, self._q_sa(self.q2_target, obs2, a2))
            v2 = q2 - cfg.alpha * logp2
            if beta_effective:
                v2 = v2 + beta_effective * self.demo.log_prob_pre(batch.next_states, u2)
        return batch.rewards + cfg.gamma * (1.0 - batch.dones) * v2

    def _critic_loss_grad_net(self, net, obs, actions, y):
        n = y.shape[0]
        if self.cfg.discrete:
            q, cache = forward(net, obs)
            idx = actions[:, 0].astype(int)
            diff = q[np.arange(n), idx] - y
            g = np.zeros_like(q)
            g[np.arange(n), idx] = diff / n
        else:
            q, cache = forward(net, np.concatenate([obs, actions], axis=1))
            diff = q[:, 0] - y
            g = (diff / n)[:, None]
        loss = 0.5 * float(np.mean(diff * diff))
        if not np.isfinite(loss):
            raise TrainingError("non-finite critic loss")
        grads, _ = backward(cache, g)
        return loss, grads

    def critic_loss_and_grad(self, batch: Batch, beta_effective: float, y=None):
        """(loss, grads) for the critic; with twin critics, lists of both."""
        if y is None:
            y = self.critic_target(batch, beta_effective)
        obs = self.featurize(batch.states)
        loss, grads = self._critic_loss_grad_net(self.critic, obs, batch.actions, y)
        if self.critic2 is None:
            return loss, grads
        loss2, grads2 = self._critic_loss_grad_net(self.critic2, obs, batch.actions, y)
        return [loss, loss2], [grads, grads2]

    # ------------------------------------------------------------------
    # policy loss

    def policy_loss_and_grad(self, batch: Batch, beta: float, eps=None):
        """Loss mean[alpha log pi - beta log demo - Q] and its gradient w.r.t. phi.

        Continuous mode reparameterizes a = tanh(mu + sigma * eps); pass
        ``eps`` to freeze the noise. The critic is held fixed.
        """
        cfg = self.cfg
        obs = self.featurize(batch.states)
        n = obs.shape[0]
        out, cache = forward(self.policy, obs)
        if cfg.discrete:
            logp = log_softmax(out)
            p = np.exp(logp)
            q = self._q_all(self.critic, obs)
            if self.critic2 is not None:
                q = np.minimum(q, self._q_all(self.critic2, obs))
            g = cfg.alpha * logp - q
            if beta:
                g = g - beta * self._demo_log_probs(batch.states)
            per_state = np.sum(p * g, axis=1)
            grad_out = p * (g - per_state[:, None]) / n
            loss = float(np.mean(per_state))
        else:
            mean, log_std, raw = self._policy_head(out)
            if eps is None:
                eps = self.rngs["noise"].standard_normal(mean.shape)
            std = np.exp(log_std)
            u = mean + std * eps
            a = np.tanh(u)
            logp = squashed_log_prob_pre(u, mean, log_std)
            q, dq_da = self._q_and_action_grad(obs, a)
            per_item = cfg.alpha * logp - q
            g_u = 2.0 * cfg.alpha * a - dq_da * np.exp(tanh_log_jacobian(u))
            if beta:
                d_mean, d_log_std = self.demo.params(batch.states)
                per_item = per_item - beta * squashed_log_prob_pre(u, d_mean, d_log_std)
                g_u = g_u + beta * ((u - d_mean) * np.exp(-2.0 * d_log_std) - 2.0 * a)
            loss = float(np.mean(per_item))
            g_mean = g_u / n
            g_log_std = (-cfg.alpha + g_u * std * eps) / n
            g_log_std = np.where((raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX), g_log_std, 0.0)
            grad_out = np.concatenate([g_mean, g_log_std], axis=1)
        if not np.isfinite(loss):
            raise TrainingError("non-finite policy loss")
        grads, _ = backward(cache, grad_out)
        return loss, grads

    def _q_and_action_grad(self, obs, a):
        d = self.cfg.action_dim
        x = np.concatenate([obs, a], axis=1)
        q1, c1 = forward(self.critic, x)
        _, gx1 = backward(c1, np.ones_like(q1))
        if self.critic2 is None:
            return q1[:, 0], gx1[:, -d:]
        q2, c2 = forward(self.critic2, x)
        _, gx2 = backward(c2, np.ones_like(q2))
        pick1 = (q1[:, 0] <= q2[:, 0])[:, None]
        return np.minimum(q1, q2)[:, 0], np.where(pick1, gx1[:, -d:], gx2[:, -d:])

    # ------------------------------------------------------------------
    # dual

    def batch_log_demo(self, batch: Batch) -> np.ndarray:
        """log demo(a|s) at batch states with a drawn from the current policy.

        Discrete mode returns the exact expectation over a per state.
        """
        obs = self.featurize(batch.states)
        if self.cfg.discrete:
            p, _ = self.action_probs(obs)
            return np.sum(p * self._demo_log_probs(batch.states), axis=1)
        _, u, _ = self._sample_squashed(obs, rng=self.rngs["dual"])
        return self.demo.log_prob_pre(batch.states, u)

    def dual_loss_and_step(self, batch_from_new: Batch) -> DualState:
        if len(batch_from_new) == 0:
            raise ValueError("dual update needs a non-empty batch from the fresh buffer")
        log_demo = self.batch_log_demo(batch_from_new)
        self.last_metrics["dual_ce"] = -float(np.mean(log_demo))
        self.dual = dual_step(self.dual, log_demo)
        return self.dual

    # ------------------------------------------------------------------
    # updates

    def _update_critic(self, batch: Batch, beta_effective: float) -> float:
        loss, grads = self.critic_loss_and_grad(batch, beta_effective)
        if self.critic2 is None:
            adam_step(self.q_opt, self.critic, grads, "critic")
            return loss
        adam_step(self.q_opt, self.critic, grads[0], "critic")
        adam_step(self.q2_opt, self.critic2, grads[1], "critic2")
        return 0.5 * (loss[0] + loss[1])

    def _update_policy(self, batch: Batch, beta: float) -> float:
        loss, grads = self.policy_loss_and_grad(batch, beta)
        adam_step(self.pi_opt, self.policy, grads, "policy")
        return loss

    def _update_targets(self):
        polyak_update(self.q_target, self.critic, self.cfg.tau)
        if self.critic2 is not None:
            polyak_update(self.q2_target, self.critic2, self.cfg.tau)

    def update_phase(self, batch: Batch, beta_effective: float) -> tuple[float, float]:
        """Critic step, policy step, target update on one minibatch."""
        q_loss = self._update_critic(batch, beta_effective)
        pi_loss = self._update_policy(batch, beta_effective)
        self._update_targets()
        return q_loss, pi_loss

    def gradient_step(self) -> dict:
        cfg = self.cfg
        rng = self.rngs["batch"]
        m = {}
        batch = self.buf_new.sample(rng, cfg.batch_size)
        m["critic_loss"], m["policy_loss"] = self.update_phase(batch, 0.0)
        if cfg.update_beta:
            dual_batch = batch if cfg.reuse_dual_batch else self.buf_new.sample(rng, cfg.batch_size)
            self.dual_loss_and_step(dual_batch)
            m["dual_ce"] = self.last_metrics["dual_ce"]
        if cfg.demo_updates and self.buf_demo.size:
            demo_batch = self.buf_demo.sample(rng, cfg.batch_size)
            m["critic_loss_demo"], m["policy_loss_demo"] = self.update_phase(demo_batch, self.dual.beta)
        self.grad_steps += 1
        return m

    def env_step(self, env) -> float | None:
        """One environment step with a policy sample; returns episode return when one ends."""
        if self._state is None or env.finished:
            self._state = env.reset(self.rngs["act"])
            self._ep_return = 0.0
        s = self._state
        a, _ = self.sample_action(s, self.rngs["act"])
        s2, r, done = env.step(a)
        self.buf_new.add(Transition(s, a, r, s2, done))
        self.env_steps += 1
        self._ep_return += r
        self._state = s2
        if env.finished:
            self.episodes += 1
            ret, self._state = self._ep_return, None
            return ret
        return None

    def train_iteration(self, env) -> dict:
        cfg = self.cfg
        finished = []
        for _ in range(cfg.env_steps_per_iter):
            ret = self.env_step(env)
            if ret is not None:
                finished.append(ret)
        m = {}
        if self.buf_new.size >= max(1, cfg.learning_starts):
            for _ in range(cfg.grad_steps_per_iter):
                m = self.gradient_step()
        m.update(env_steps=self.env_steps, grad_steps=self.grad_steps, beta=self.dual.beta,
                 alpha=cfg.alpha, episode_returns=finished)
        self.last_metrics.update(m)
        return m

    # ------------------------------------------------------------------
    # persistence

    def to_dict(self, include_buffers: bool = True, env=None) -> dict:
        d = {
            "config": asdict(self.cfg),
            "critic": self.critic.to_dict(),
            "critic_target": self.q_target.to_dict(),
            "policy": self.policy.to_dict(),
            "q_opt": self.q_opt.to_dict(),
            "pi_opt": self.pi_opt.to_dict(),
            "dual": asdict(self.dual),
            "rng": {k: g.bit_generator.state for k, g in self.rngs.items()},
            "env_steps": self.env_steps,
            "grad_steps": self.grad_steps,
            "episodes": self.episodes,
            "current_state": None if self._state is None else self._state.tolist(),
            "ep_return": self._ep_return,
        }
        if self.critic2 is not None:
            d.update(critic2=self.critic2.to_dict(), critic2_target=self.q2_target.to_dict(),
                     q2_opt=self.q2_opt.to_dict())
        if include_buffers:
            d["buf_new"] = self.buf_new.to_dict()
            d["buf_demo"] = self.buf_demo.to_dict()
        if env is not None:
            d["env_state"] = env.get_state()
        return d

    @classmethod
    def from_dict(cls, d: dict, featurize, demo=None, env=None) -> "RSACAgent":
        cfg = AgentConfig(**d["config"])
        agent = cls(cfg, featurize, demo, seed=0)
        agent.critic = Mlp.from_dict(d["critic"])
        agent.q_target = Mlp.from_dict(d["critic_target"])
        agent.policy = Mlp.from_dict(d["policy"])
        agent.q_opt = Adam.from_dict(d["q_opt"])
        agent.pi_opt = Adam.from_dict(d["pi_opt"])
        if cfg.twin_critic:
            agent.critic2 = Mlp.from_dict(d["critic2"])
            agent.q2_target = Mlp.from_dict(d["critic2_target"])
            agent.q2_opt = Adam.from_dict(d["q2_opt"])
        agent.dual = DualState(**d["dual"])
        for k, state in d["rng"].items():
            agent.rngs[k].bit_generator.state = state
        agent.env_steps, agent.grad_steps, agent.episodes = d["env_steps"], d["grad_steps"], d["episodes"]
        agent._state = None if d["current_state"] is None else np.array(d["current_state"], dtype=float)
        agent._ep_return = d["ep_return"]
        if "buf_new" in d:
            agent.buf_new = ReplayBuffer.from_dict(d["buf_new"])
            agent.buf_demo = ReplayBuffer.from_dict(d["buf_demo"])
        if env is not None and "env_state" in d:
            env.set_state(d["env_state"])
        return agent


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row by inverse CDF."""
    c = np.cumsum(probs, axis=1)
    r = rng.random((probs.shape[0], 1)) * c[:, -1:]
    return np.minimum((r > c).sum(axis=1), probs.shape[1] - 1)


class TabularPolicyActor:
    """Wraps a ``[cells, actions]`` table so it can be rolled out like an agent."""

    def __init__(self, table, cell_index):
        self.table = np.asarray(table, dtype=float)
        self.cell_index = cell_index

    def sample_action(self, state, rng, deterministic=False):
        p = self.table[self.cell_index(np.asarray(state)[None])[0]]
        return (int(np.argmax(p)) if deterministic else int(rng.choice(p.size, p=p))), None


def rollout_stats(actor, env, demo, episodes: int, rng: np.random.Generator) -> dict:
    """Monte-Carlo evaluation with actions sampled from ``actor``.

    ``ce`` is the per-step average of -log demo(a|s) over all visited steps;
    ``ce_se`` its delta-method standard error across episodes.
    """
    if episodes < 1:
        raise ValueError("need at least one evaluation episode")
    ep_ce, ep_len, ep_total, ep_task = [], [], [], []
    for _ in range(episodes):
        s = env.reset(rng)
        ce_sum, total, task, n = 0.0, 0.0, 0.0, 0
        while not env.finished:
            a, u = actor.sample_action(s, rng)
            if demo is not None:
                if u is None:
                    ce_sum -= float(demo.log_probs(s)[0, int(a)])
                else:
                    ce_sum -= float(demo.log_prob_pre(np.asarray(s)[None], np.asarray(u)[None])[0])
            s, r, done = env.step(a)
            total += r
            if done:
                task += r
            n += 1
        ep_ce.append(ce_sum)
        ep_len.append(n)
        ep_total.append(total)
        ep_task.append(task)
    ep_ce, ep_len = np.array(ep_ce), np.array(ep_len, dtype=float)
    ce = ep_ce.sum() / ep_len.sum()
    if episodes > 1:
        resid = ep_ce - ce * ep_len
        ce_se = float(np.std(resid, ddof=1) / (ep_len.mean() * np.sqrt(episodes)))
    else:
        ce_se = 0.0
    return {
        "ce": float(ce),
        "ce_se": ce_se,
        "total_reward": float(np.mean(ep_total)),
        "task_reward": float(np.mean(ep_task)),
        "episode_length": float(ep_len.mean()),
    }


def estimate_policy_ce(actor, env, demo, eval_episodes: int, rng: np.random.Generator) -> float:
    return rollout_stats(actor, env, demo, eval_episodes, rng)["ce"]
