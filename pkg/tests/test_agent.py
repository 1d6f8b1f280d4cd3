import numpy as np
import pytest

from rsac.agent import AgentConfig, RSACAgent, TabularPolicyActor, estimate_policy_ce, rollout_stats
from rsac.buffer import Batch
from rsac.envs import ContinuousBandit, GridChase, GridLoopDemo, as_discrete_mdp, record_demo
from rsac.distributions import squashed_log_prob_pre
from rsac.nn import Mlp, TrainingError
from rsac.sac import SACAgent
from rsac.tabular import policy_cross_entropy
from rsac.verify import critic_gradient_error, policy_gradient_error


class ToyDemo:
    def __init__(self, table):
        self.table = np.asarray(table, dtype=float)

    def log_probs(self, states):
        s = np.asarray(states, dtype=float).reshape(-1, self.table.shape[0])
        return np.log(self.table[np.argmax(s, axis=1)])


def toy_agent(seed=0, **kw):
    kw = {"mode": "discrete", "obs_dim": 3, "state_dim": 3, "n_actions": 2, "hidden": (4,),
          "alpha": 0.5, "gamma": 0.9, "batch_size": 4, **kw}
    demo = ToyDemo([[0.7, 0.3], [0.2, 0.8], [0.5, 0.5]])
    return RSACAgent(AgentConfig(**kw), lambda s: np.asarray(s, dtype=float).reshape(-1, 3), demo, seed)


def toy_batch(n=4, seed=0, done=0.0):
    rng = np.random.default_rng(seed)
    eye = np.eye(3)
    return Batch(eye[rng.integers(0, 3, n)], rng.integers(0, 2, (n, 1)).astype(float), rng.normal(size=n),
                 eye[rng.integers(0, 3, n)], np.full(n, done))


def reference_mlp(net, x):
    W1, b1, W2, b2 = net.params
    return np.tanh(x @ W1 + b1) @ W2 + b2


def test_terminal_target_is_reward():
    agent = toy_agent()
    b = toy_batch(done=1.0)
    assert np.array_equal(agent.critic_target(b, 0.7), b.rewards)


def test_target_hand_evaluated():
    agent = toy_agent(seed=3)
    b = toy_batch(seed=5)
    a2 = np.array([0, 1, 1, 0])
    beta = 0.4
    q_bar = reference_mlp(agent.q_target, b.next_states)
    logits = reference_mlp(agent.policy, b.next_states)
    logp = logits - np.log(np.exp(logits).sum(1, keepdims=True))
    log_demo = agent.demo.log_probs(b.next_states)
    rows = np.arange(4)
    expected = b.rewards + 0.9 * (q_bar[rows, a2] - 0.5 * logp[rows, a2] + beta * log_demo[rows, a2])
    assert np.allclose(agent.critic_target(b, beta, next_actions=a2), expected, atol=1e-12)
    sac = b.rewards + 0.9 * (q_bar[rows, a2] - 0.5 * logp[rows, a2])
    assert np.allclose(agent.critic_target(b, 0.0, next_actions=a2), sac, atol=1e-12)


def test_target_ignores_online_critic():
    agent = toy_agent()
    b = toy_batch()
    y = agent.critic_target(b, 0.3)
    agent.critic.flat += 1.0
    assert np.array_equal(agent.critic_target(b, 0.3), y)


def test_critic_loss_zero_at_target_and_duplication_invariant():
    agent = toy_agent()
    b = toy_batch()
    q = agent.critic(b.states)[np.arange(4), b.actions[:, 0].astype(int)]
    loss, grads = agent.critic_loss_and_grad(b, 0.0, y=q)
    assert loss == 0.0 and all(not g.any() for g in grads)
    y = agent.critic_target(b, 0.2)
    loss1, g1 = agent.critic_loss_and_grad(b, 0.2, y=y)
    bb = Batch.concat(b, b)
    loss2, g2 = agent.critic_loss_and_grad(bb, 0.2, y=np.concatenate([y, y]))
    assert loss2 == pytest.approx(loss1) and all(np.allclose(x, z) for x, z in zip(g1, g2))


def test_nonfinite_critic_loss_raises():
    agent = toy_agent()
    with pytest.raises(TrainingError):
        agent.critic_loss_and_grad(toy_batch(), 0.0, y=np.full(4, np.inf))


def test_uniform_policy_is_stationary_for_constant_q():
    agent = toy_agent()
    for net in (agent.policy, agent.critic):
        net.weights[-1][:] = 0.0
        net.biases[-1][:] = 1.5
        net.touch()
    _, grads = agent.policy_loss_and_grad(toy_batch(), 0.0)
    assert max(np.abs(g).max() for g in grads) < 1e-15


@pytest.mark.parametrize("mode", ["discrete", "continuous"])
def test_gradients_match_finite_differences(mode):
    for seed in range(5):
        assert critic_gradient_error(mode, seed) <= 1e-4
        assert policy_gradient_error(mode, seed) <= 1e-4


def test_dual_rises_under_sustained_violation():
    agent = toy_agent(ce_target=0.1, lr_beta=0.01)
    b = toy_batch()
    betas = [agent.beta]
    for _ in range(100):
        agent.dual_loss_and_step(b)
        betas.append(agent.beta)
    assert np.all(np.diff(betas) > 0)
    with pytest.raises(ValueError):
        agent.dual_loss_and_step(toy_batch(n=0))


def test_dual_unchanged_when_constraint_met():
    agent = toy_agent(beta0=0.3, lr_beta=0.1)
    b = toy_batch()
    agent.dual = agent.dual.__class__(0.3, agent.alpha, -float(np.mean(agent.batch_log_demo(b))), 0.1)
    agent.dual_loss_and_step(b)
    assert agent.beta == pytest.approx(0.3, abs=1e-15)


def _grid_agent(seed=0, **kw):
    env = GridChase(max_steps=50)
    demo = GridLoopDemo(env)
    cfg = AgentConfig(mode="discrete", obs_dim=64, state_dim=2, n_actions=5, hidden=(16,), alpha=0.05,
                      batch_size=16, learning_starts=16, env_steps_per_iter=3, lr_beta=1e-3, ce_target=1.0, **kw)
    agent = RSACAgent(cfg, env.observe, demo, seed)
    agent.buf_demo.extend(record_demo(GridChase(max_steps=20), demo, 3))
    return agent, env


def test_iteration_appends_env_steps_and_stays_finite():
    agent, env = _grid_agent()
    for k in range(1, 1001):
        before = len(agent.buf_new)
        m = agent.train_iteration(env)
        assert len(agent.buf_new) == before + 3
        assert m["env_steps"] == 3 * k
        vals = [v for key, v in m.items() if key != "episode_returns"]
        assert np.all(np.isfinite(vals))
        assert m["beta"] >= 0.0
    assert agent.grad_steps > 0


def test_checkpoint_round_trip_continues_identically():
    agent, env = _grid_agent(seed=4)
    for _ in range(60):
        agent.train_iteration(env)
    d = agent.to_dict(env=env)
    env2 = GridChase(max_steps=50)
    clone = RSACAgent.from_dict(d, env2.observe, agent.demo, env=env2)
    for _ in range(40):
        a, b = agent.train_iteration(env), clone.train_iteration(env2)
        assert a == b
    assert np.array_equal(agent.critic.flat, clone.critic.flat)


def test_sac_bandit_reaches_soft_optimum():
    alpha, center = 0.05, 0.3
    x, w = np.polynomial.hermite_e.hermegauss(80)
    w = w / w.sum()

    def soft_objective(mu, ls):
        u = mu + np.exp(ls) * x
        logp = squashed_log_prob_pre(u[:, None], np.array([mu]), np.array([ls]))
        return np.sum(w * (-(np.tanh(u) - center) ** 2 - alpha * logp))

    _, mu, ls = max((soft_objective(m, s), m, s) for m in np.linspace(-1, 1, 101) for s in np.linspace(-4, 0, 81))
    oracle_mean = np.sum(w * np.tanh(mu + np.exp(ls) * x))

    cfg = AgentConfig(mode="continuous", obs_dim=1, state_dim=1, action_dim=1, hidden=(16, 16), alpha=alpha,
                      batch_size=64, learning_starts=64, lr_beta=0.0, demo_updates=False, update_beta=False,
                      lr_q=3e-3, lr_pi=3e-3)
    env = ContinuousBandit(center)
    agent = SACAgent(cfg, env.observe, None, 0)
    for _ in range(3000):
        agent.train_iteration(env)
    m, s = agent.gaussian_params(np.zeros((1, 1)))
    learned_mean = np.sum(w * np.tanh(m[0, 0] + np.exp(s[0, 0]) * x))
    assert abs(learned_mean - oracle_mean) < 0.05


def test_ce_estimate_matches_exact_occupancy():
    env = GridChase(max_steps=30)
    demo = GridLoopDemo(env, epsilon=0.2)
    actor = TabularPolicyActor(demo.table, env.cell_index)
    stats = rollout_stats(actor, env, demo, 400, np.random.default_rng(0))
    mdp = as_discrete_mdp(env)
    exact = policy_cross_entropy(mdp, demo.tabular(), demo.tabular(), gamma_weighting=False, horizon=30)
    assert abs(stats["ce"] - exact) <= 3 * stats["ce_se"]
    assert stats["ce"] >= 0.0


def test_ce_estimate_uniform_demo_is_log_k():
    env = GridChase(max_steps=20)
    demo = GridLoopDemo(env)
    demo.table = np.full_like(demo.table, 0.2)
    demo.log_table = np.log(demo.table)
    agent, _ = _grid_agent()
    ce = estimate_policy_ce(agent, env, demo, 3, np.random.default_rng(1))
    assert ce == pytest.approx(np.log(5), abs=1e-12)


def test_sac_agent_is_reference_for_zero_beta():
    from rsac.verify import sac_trace_pair
    rsac, sac, ta, tb = sac_trace_pair("discrete", iterations=80)
    assert ta == tb
    assert isinstance(sac, SACAgent) and np.array_equal(rsac.policy.flat, sac.policy.flat)


def test_mlp_shapes_follow_mode():
    agent = toy_agent()
    assert isinstance(agent.critic, Mlp) and agent.critic.sizes == [3, 4, 2]
    cont = RSACAgent(AgentConfig(mode="continuous", obs_dim=4, state_dim=4, action_dim=2, hidden=(5,)),
                     lambda s: s, None, 0)
    assert cont.critic.sizes == [6, 5, 1] and cont.policy.sizes == [4, 5, 4]
    with pytest.raises(ValueError):
        AgentConfig(mode="hybrid")
