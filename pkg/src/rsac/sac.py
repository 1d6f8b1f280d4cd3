"""Plain soft actor-critic, written out separately from the regularized agent.

Serves as the reference the regularized agent must reproduce exactly when
its multiplier is pinned at zero and demonstration updates are off. Only
the environment plumbing and persistence are inherited; every loss and
gradient below is coded independently.
"""
from __future__ import annotations

import numpy as np

from .agent import RSACAgent, log_softmax
from .distributions import LOG_STD_MAX, LOG_STD_MIN, squashed_log_prob_pre, tanh_log_jacobian
from .nn import adam_step, backward, forward, polyak_update


class SACAgent(RSACAgent):
    def __init__(self, cfg, featurize, demo=None, seed: int = 0):
        super().__init__(cfg, featurize, demo, seed)
        self.dual = self.dual.__class__(0.0, cfg.alpha, cfg.ce_target, 0.0)

    def _pi(self, obs):
        out = self.policy(obs)
        if self.cfg.discrete:
            return log_softmax(out)
        d = self.cfg.action_dim
        return out[:, :d], np.clip(out[:, d:], LOG_STD_MIN, LOG_STD_MAX)

    def _soft_target(self, batch):
        cfg = self.cfg
        s2 = self.featurize(batch.next_states)
        if cfg.discrete:
            logp2 = self._pi(s2)
            qbar = self.q_target(s2)
            if self.q2_target is not None:
                qbar = np.minimum(qbar, self.q2_target(s2))
            inner = qbar - cfg.alpha * logp2
            if cfg.discrete_target == "expected":
                v = np.sum(np.exp(logp2) * inner, axis=1)
            else:
                p = np.exp(logp2)
                c = np.cumsum(p, axis=1)
                r = self.rngs["noise"].random((p.shape[0], 1)) * c[:, -1:]
                k = np.minimum((r > c).sum(axis=1), p.shape[1] - 1)
                v = inner[np.arange(p.shape[0]), k]
        else:
            mu, ls = self._pi(s2)
            u = mu + np.exp(ls) * self.rngs["noise"].standard_normal(mu.shape)
            a = np.tanh(u)
            logp = squashed_log_prob_pre(u, mu, ls)
            x = np.concatenate([s2, a], axis=1)
            qbar = self.q_target(x)[:, 0]
            if self.q2_target is not None:
                qbar = np.minimum(qbar, self.q2_target(x)[:, 0])
            v = qbar - cfg.alpha * logp
        return batch.rewards + cfg.gamma * (1.0 - batch.dones) * v

    def _critic_grads(self, net, s, batch, y):
        n = len(batch)
        if self.cfg.discrete:
            q, cache = forward(net, s)
            rows, cols = np.arange(n), batch.actions[:, 0].astype(int)
            err = q[rows, cols] - y
            dq = np.zeros_like(q)
            dq[rows, cols] = err / n
        else:
            q, cache = forward(net, np.concatenate([s, batch.actions], axis=1))
            err = q[:, 0] - y
            dq = (err / n)[:, None]
        return 0.5 * float(np.mean(err * err)), backward(cache, dq)[0]

    def _sac_critic_step(self, batch):
        y = self._soft_target(batch)
        s = self.featurize(batch.states)
        loss, grads = self._critic_grads(self.critic, s, batch, y)
        adam_step(self.q_opt, self.critic, grads, "critic")
        if self.critic2 is None:
            return loss
        loss2, grads2 = self._critic_grads(self.critic2, s, batch, y)
        adam_step(self.q2_opt, self.critic2, grads2, "critic2")
        return 0.5 * (loss + loss2)

    def _sac_policy_step(self, batch):
        cfg = self.cfg
        s = self.featurize(batch.states)
        n = s.shape[0]
        out, cache = forward(self.policy, s)
        if cfg.discrete:
            logp = log_softmax(out)
            p = np.exp(logp)
            q = self.critic(s)
            if self.critic2 is not None:
                q = np.minimum(q, self.critic2(s))
            adv = cfg.alpha * logp - q
            per_state = np.sum(p * adv, axis=1)
            dout = p * (adv - per_state[:, None]) / n
            loss = float(np.mean(per_state))
        else:
            d = cfg.action_dim
            mu, raw = out[:, :d], out[:, d:]
            ls = np.clip(raw, LOG_STD_MIN, LOG_STD_MAX)
            eps = self.rngs["noise"].standard_normal(mu.shape)
            sd = np.exp(ls)
            u = mu + sd * eps
            a = np.tanh(u)
            logp = squashed_log_prob_pre(u, mu, ls)
            x = np.concatenate([s, a], axis=1)
            q1, c1 = forward(self.critic, x)
            dx = backward(c1, np.ones_like(q1))[1][:, -d:]
            q = q1[:, 0]
            if self.critic2 is not None:
                q2, c2 = forward(self.critic2, x)
                dx2 = backward(c2, np.ones_like(q2))[1][:, -d:]
                use1 = (q1[:, 0] <= q2[:, 0])[:, None]
                q = np.minimum(q1, q2)[:, 0]
                dx = np.where(use1, dx, dx2)
            loss = float(np.mean(cfg.alpha * logp - q))
            du = 2.0 * cfg.alpha * a - dx * np.exp(tanh_log_jacobian(u))
            dls = (-cfg.alpha + du * sd * eps) / n
            dls = np.where((raw >= LOG_STD_MIN) & (raw <= LOG_STD_MAX), dls, 0.0)
            dout = np.concatenate([du / n, dls], axis=1)
        adam_step(self.pi_opt, self.policy, backward(cache, dout)[0], "policy")
        return loss

    def gradient_step(self) -> dict:
        batch = self.buf_new.sample(self.rngs["batch"], self.cfg.batch_size)
        q_loss = self._sac_critic_step(batch)
        pi_loss = self._sac_policy_step(batch)
        polyak_update(self.q_target, self.critic, self.cfg.tau)
        if self.critic2 is not None:
            polyak_update(self.q2_target, self.critic2, self.cfg.tau)
        self.grad_steps += 1
        return {"critic_loss": q_loss, "policy_loss": pi_loss}
