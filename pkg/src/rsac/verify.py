"""Oracle suite: mathematical properties and reference comparisons.

Each check returns ``(passed, detail)``; ``run_checks`` times them and
``format_table`` renders the report printed by ``rsac verify``.
"""
from __future__ import annotations

import time

import numpy as np

from . import tabular
from .agent import AgentConfig, RSACAgent
from .buffer import Batch
from .distributions import squashed_log_prob_pre
from .envs import GridChase, GridLoopDemo, PointChase, PointCircleDemo, Transition, record_demo
from .mdp import random_mdp
from .nn import check_mlp_gradients, finite_difference, relative_error
from .sac import SACAgent
from .tabular import DualState


def random_demo(rng, n_states, n_actions):
    return rng.dirichlet(np.ones(n_actions), size=n_states)


def plain_soft_value_iteration(mdp, alpha: float, tol: float = 1e-12, max_iters: int = 200_000):
    """Max-entropy soft Q iteration: Q = r + gamma P [alpha log sum exp(Q/alpha)], V = 0 on terminals."""
    q = np.zeros((mdp.n_states, mdp.n_actions))
    term = mdp.terminal_mask
    for _ in range(max_iters):
        z = q / alpha
        zmax = z.max(axis=1)
        v = alpha * (zmax + np.log(np.exp(z - zmax[:, None]).sum(axis=1)))
        v[term] = 0.0
        q_new = mdp.reward + mdp.gamma * mdp.transition @ v
        if np.max(np.abs(q_new - q)) < tol:
            return q_new
        q = q_new
    raise RuntimeError("soft value iteration did not converge")


# ---------------------------------------------------------------------------
# tabular checks

def check_contraction(n_mdps: int = 100, seed: int = 0, gamma=None):
    rng = np.random.default_rng(seed)
    worst_slack, worst_ratio = -np.inf, 0.0
    for _ in range(n_mdps):
        S, A = int(rng.integers(2, 11)), int(rng.integers(2, 6))
        g = float(rng.uniform(0.5, 0.99)) if gamma is None else gamma
        mdp = random_mdp(rng, S, A, g)
        demo = random_demo(rng, S, A)
        dual = DualState(float(rng.uniform(0, 2)), float(rng.uniform(0.05, 2)), 1.0, 1e-3)
        q1, q2 = rng.normal(0, 5, (S, A)), rng.normal(0, 5, (S, A))
        lhs = np.max(np.abs(tabular.bellman_operator(q1, mdp, demo, dual)
                            - tabular.bellman_operator(q2, mdp, demo, dual)))
        rhs = np.max(np.abs(q1 - q2))
        worst_slack = max(worst_slack, lhs - g * rhs)
        worst_ratio = max(worst_ratio, lhs / rhs)
    return worst_slack <= 1e-9, f"max ratio {worst_ratio:.4f}, max slack {worst_slack:.2e}"


def check_fixed_point(n_mdps: int = 50, seed: int = 1):
    rng = np.random.default_rng(seed)
    worst_res, worst_gap = 0.0, 0.0
    for _ in range(n_mdps):
        S, A = int(rng.integers(2, 11)), int(rng.integers(2, 6))
        mdp = random_mdp(rng, S, A, float(rng.uniform(0.5, 0.95)))
        demo = random_demo(rng, S, A)
        dual = DualState(float(rng.uniform(0, 1)), float(rng.uniform(0.1, 1)), 1.0, 1e-3)
        res = tabular.q_iteration(mdp, demo, dual, tol=1e-11)
        q_eval = tabular.evaluate_policy_regularized(mdp, res.policy, demo, dual)
        worst_res = max(worst_res, res.residual)
        worst_gap = max(worst_gap, float(np.max(np.abs(q_eval - res.q))))
    return worst_res < 1e-10 and worst_gap < 1e-8, f"max residual {worst_res:.1e}, max gap {worst_gap:.1e}"


def check_sac_reduction_tabular(n_mdps: int = 20, seed: int = 2):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_mdps):
        S, A = int(rng.integers(2, 9)), int(rng.integers(2, 5))
        mdp = random_mdp(rng, S, A, float(rng.uniform(0.5, 0.95)))
        alpha = float(rng.uniform(0.1, 1.0))
        demo = random_demo(rng, S, A)
        res = tabular.q_iteration(mdp, demo, DualState(0.0, alpha, 1.0, 1e-3), tol=1e-12)
        worst = max(worst, float(np.max(np.abs(res.q - plain_soft_value_iteration(mdp, alpha)))))
    return worst < 1e-8, f"max |Q - Q_soft| {worst:.1e}"


def check_policy_improvement(n_mdps: int = 50, seed: int = 3):
    rng = np.random.default_rng(seed)
    worst_drop, worst_tv = 0.0, 0.0
    for _ in range(n_mdps):
        mdp = random_mdp(rng, 5, int(rng.integers(2, 5)), float(rng.uniform(0.5, 0.95)))
        demo = random_demo(rng, 5, mdp.n_actions)
        dual = DualState(float(rng.uniform(0, 1)), float(rng.uniform(0.1, 1)), 1.0, 1e-3)
        pi = random_demo(rng, 5, mdp.n_actions)
        q = tabular.evaluate_policy_regularized(mdp, pi, demo, dual)
        for _ in range(200):
            pi = tabular.policy_improvement_step(q, demo, dual)
            q_next = tabular.evaluate_policy_regularized(mdp, pi, demo, dual)
            worst_drop = max(worst_drop, float(np.max(q - q_next)))
            if np.max(np.abs(q_next - q)) < 1e-13:
                q = q_next
                break
            q = q_next
        ref = tabular.q_iteration(mdp, demo, dual, tol=1e-12).policy
        worst_tv = max(worst_tv, float(np.max(0.5 * np.abs(pi - ref).sum(axis=1))))
    return worst_drop <= 1e-9 and worst_tv <= 1e-6, f"max drop {worst_drop:.1e}, max TV {worst_tv:.1e}"


def check_dual_sign(n: int = 200):
    """Violation raises beta, satisfaction lowers it and clamps at zero."""
    d = DualState(0.5, 1.0, 1.0, 1e-2)
    violated = np.full(8, -3.0)   # CE 3 > target 1
    satisfied = np.full(8, -0.2)  # CE 0.2 < target 1
    up = tabular.dual_step(d, violated).beta > d.beta
    down = tabular.dual_step(d, satisfied).beta < d.beta
    x, floor_ok = d, True
    for _ in range(n):
        x = tabular.dual_step(x, satisfied)
        floor_ok &= x.beta >= 0.0
    ok = up and down and floor_ok and x.beta == 0.0
    return ok, f"rises on violation: {up}, falls on satisfaction: {down}, clamps at 0: {x.beta == 0.0}"


# ---------------------------------------------------------------------------
# neural checks

def _small_agent(mode: str, seed: int, hidden=(8, 8), batch_size=6):
    if mode == "discrete":
        cfg = AgentConfig(mode="discrete", obs_dim=5, state_dim=5, n_actions=4, hidden=hidden, alpha=0.3,
                          batch_size=batch_size, gamma=0.9)
    else:
        cfg = AgentConfig(mode="continuous", obs_dim=4, state_dim=4, action_dim=2, hidden=hidden, alpha=0.3,
                          batch_size=batch_size, gamma=0.9)
    demo = _GaussianToyDemo() if mode == "continuous" else _TableToyDemo(np.random.default_rng(seed))
    return RSACAgent(cfg, lambda s: np.asarray(s, dtype=float).reshape(-1, cfg.state_dim), demo, seed)


class _TableToyDemo:
    """Demo for 5-d toy states: categorical over 4 actions depending on argmax feature."""

    def __init__(self, rng):
        self.table = rng.dirichlet(np.ones(4), size=5)

    def log_probs(self, states):
        s = np.asarray(states, dtype=float).reshape(-1, 5)
        return np.log(self.table[np.argmax(s, axis=1)])


class _GaussianToyDemo:
    def params(self, states):
        s = np.asarray(states, dtype=float).reshape(-1, 4)
        return 0.3 * s[:, :2], np.full((s.shape[0], 2), np.log(0.6))

    def log_prob_pre(self, states, u):
        m, ls = self.params(states)
        return squashed_log_prob_pre(u, m, ls)


def _toy_batch(agent, rng, n):
    cfg = agent.cfg
    s = rng.normal(size=(n, cfg.state_dim))
    s2 = rng.normal(size=(n, cfg.state_dim))
    if cfg.discrete:
        a = rng.integers(0, cfg.n_actions, size=(n, 1)).astype(float)
    else:
        a = rng.uniform(-0.9, 0.9, size=(n, cfg.action_dim))
    return Batch(s, a, rng.normal(size=n), s2, (rng.random(n) < 0.2).astype(float))


def critic_gradient_error(mode: str, seed: int) -> float:
    rng = np.random.default_rng(seed)
    agent = _small_agent(mode, seed)
    batch = _toy_batch(agent, rng, agent.cfg.batch_size)
    beta = float(rng.uniform(0, 1))
    y = agent.critic_target(batch, beta)
    _, grads = agent.critic_loss_and_grad(batch, beta, y=y)
    fd = finite_difference(lambda: agent.critic_loss_and_grad(batch, beta, y=y)[0], agent.critic.params, 1e-6)
    return relative_error(grads, fd)


def policy_gradient_error(mode: str, seed: int) -> float:
    rng = np.random.default_rng(seed)
    agent = _small_agent(mode, seed)
    batch = _toy_batch(agent, rng, agent.cfg.batch_size)
    beta = float(rng.uniform(0, 1))
    eps = rng.standard_normal((len(batch), agent.cfg.action_dim)) if mode == "continuous" else None
    _, grads = agent.policy_loss_and_grad(batch, beta, eps=eps)
    fd = finite_difference(lambda: agent.policy_loss_and_grad(batch, beta, eps=eps)[0], agent.policy.params, 1e-6)
    return relative_error(grads, fd)


def check_gradients(draws: int = 20, seed: int = 5):
    worst = {}
    rng = np.random.default_rng(seed)
    worst["mlp"] = max(check_mlp_gradients([int(rng.integers(2, 6)), 7, 5, int(rng.integers(1, 4))],
                                           np.random.default_rng(seed + k), batch=4) for k in range(draws))
    for mode in ("discrete", "continuous"):
        worst[f"critic/{mode}"] = max(critic_gradient_error(mode, seed + k) for k in range(draws))
        worst[f"policy/{mode}"] = max(policy_gradient_error(mode, seed + k) for k in range(draws))
    ok = all(v <= 1e-4 for v in worst.values())
    return ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items())


def sac_trace_pair(mode: str = "discrete", iterations: int = 300, seed: int = 0):
    """Train the regularized agent (beta pinned at 0, demo updates off) and the SAC reference side by side."""
    if mode == "discrete":
        env_a, env_b = GridChase(), GridChase()
        demo = GridLoopDemo(env_a)
        cfg = AgentConfig(mode="discrete", obs_dim=64, state_dim=2, n_actions=5, hidden=(16, 16), alpha=0.05,
                          batch_size=16, learning_starts=32, beta0=0.0, lr_beta=0.0, demo_updates=False)
    else:
        env_a, env_b = PointChase(), PointChase()
        demo = PointCircleDemo(env_a)
        cfg = AgentConfig(mode="continuous", obs_dim=4, state_dim=4, action_dim=2, hidden=(16, 16), alpha=0.1,
                          batch_size=16, learning_starts=32, beta0=0.0, lr_beta=0.0, demo_updates=False)
    rsac = RSACAgent(cfg, env_a.observe, demo, seed)
    rsac.buf_demo.extend(record_demo(GridChase(max_steps=20), demo, 2) if mode == "discrete" else [])
    sac = SACAgent(cfg, env_b.observe, demo, seed)
    trace_a, trace_b = [], []
    keys = ("critic_loss", "policy_loss", "beta")
    for _ in range(iterations):
        ma, mb = rsac.train_iteration(env_a), sac.train_iteration(env_b)
        trace_a.append(tuple(ma.get(k) for k in keys))
        trace_b.append(tuple(mb.get(k) for k in keys))
    return rsac, sac, trace_a, trace_b


def check_sac_reduction_neural(iterations: int = 300):
    details, ok = [], True
    for mode in ("discrete", "continuous"):
        a, b, ta, tb = sac_trace_pair(mode, iterations)
        same = ta == tb and all(np.array_equal(x.flat, y.flat) for x, y in
                                ((a.critic, b.critic), (a.policy, b.policy), (a.q_target, b.q_target)))
        ok &= same
        details.append(f"{mode}: {'identical' if same else 'DIFFERENT'} over {iterations} iterations")
    return ok, "; ".join(details)


def check_buffer_separation(grad_steps: int = 20):
    """Phase one must only see fresh transitions, phase two only demonstrations."""
    agent = _small_agent("discrete", 0)
    rng = np.random.default_rng(0)
    fresh, demo = _toy_batch(agent, rng, 50), _toy_batch(agent, rng, 50)
    fresh.states[:, 0] = 1000.0   # tag
    demo.states[:, 0] = -1000.0
    for i in range(50):
        agent.buf_new.add(Transition(fresh.states[i], fresh.actions[i], fresh.rewards[i], fresh.next_states[i],
                                     bool(fresh.dones[i])))
        agent.buf_demo.add(Transition(demo.states[i], demo.actions[i], demo.rewards[i], demo.next_states[i],
                                      bool(demo.dones[i])))
    seen = []
    original = agent.update_phase

    def spy(batch, beta_effective):
        seen.append((beta_effective, set(np.unique(batch.states[:, 0]))))
        return original(batch, beta_effective)

    agent.update_phase = spy
    agent.dual = DualState(0.25, agent.cfg.alpha, agent.cfg.ce_target, agent.cfg.lr_beta)
    for _ in range(grad_steps):
        agent.gradient_step()
    first = seen[0::2]
    second = seen[1::2]
    ok = (len(seen) == 2 * grad_steps
          and all(b == 0.0 and tags == {1000.0} for b, tags in first)
          and all(b > 0.0 and tags == {-1000.0} for b, tags in second))
    return ok, f"{len(first)} fresh-phase and {len(second)} demo-phase updates inspected"


CHECKS = (
    ("contraction", check_contraction),
    ("fixed point", check_fixed_point),
    ("SAC reduction (tabular)", check_sac_reduction_tabular),
    ("SAC reduction (neural trace)", check_sac_reduction_neural),
    ("policy improvement", check_policy_improvement),
    ("gradient checks", check_gradients),
    ("dual sign", check_dual_sign),
    ("buffer separation", check_buffer_separation),
)


def run_checks(checks=CHECKS) -> list[dict]:
    results = []
    for name, fn in checks:
        t = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:  # a crashing check is a failing check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append({"check": name, "passed": bool(passed), "detail": detail,
                        "seconds": time.perf_counter() - t})
    return results


def format_table(results) -> str:
    w = max(len(r["check"]) for r in results)
    lines = [f"{'check':<{w}}  result  time    detail", "-" * (w + 60)]
    for r in results:
        lines.append(f"{r['check']:<{w}}  {'PASS' if r['passed'] else 'FAIL':<6}  "
                     f"{r['seconds']:5.1f}s  {r['detail']}")
    return "\n".join(lines)
