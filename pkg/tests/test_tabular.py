import numpy as np
import pytest

from rsac import tabular
from rsac.distributions import SupportError, entropy
from rsac.mdp import DiscreteMDP, random_mdp
from rsac.tabular import (
    ConvergenceError,
    DualState,
    NonErgodicError,
    bellman_operator,
    dual_step,
    evaluate_policy_regularized,
    optimal_policy,
    policy_cross_entropy,
    policy_improvement_step,
    q_iteration,
    regularized_value,
    residual_trace,
    soft_policy_iteration,
)
from rsac.verify import plain_soft_value_iteration, random_demo

# Reference values computed with mpmath at 30 digits.
V_08E = 0.864839725163190384558112415021        # log(0.8 e + 0.2)
PI_08E = (0.915776191599102609858490061013, 0.0842238084008973901415099389865)
LOG_E_PLUS_1 = 1.31326168751822283404899549497
SOFTMAX_1_0 = (0.731058578630004879251159317, 0.268941421369995120748840683)


def one_state(r, gamma):
    return DiscreteMDP(np.ones((1, len(r), 1)), np.array([r], dtype=float), gamma)


def test_regularized_value_constant_q():
    dual = DualState(0.0, 0.3, 1.0)
    q = np.array([[2.0, 2.0]])
    assert regularized_value(q, np.full((1, 2), 0.5), dual, 0) == pytest.approx(2.0 + 0.3 * np.log(2))


def test_regularized_value_beta0_is_plain_soft_value():
    rng = np.random.default_rng(0)
    q = rng.normal(size=(4, 3))
    dual = DualState(0.0, 0.7, 1.0)
    expected = 0.7 * np.log(np.exp(q / 0.7).sum(1))
    assert np.allclose(regularized_value(q, random_demo(rng, 4, 3), dual), expected, atol=1e-12)


def test_regularized_value_and_policy_worked_example():
    dual = DualState(1.0, 1.0, 1.0)
    q, demo = np.array([[1.0, 0.0]]), np.array([[0.8, 0.2]])
    assert regularized_value(q, demo, dual, 0) == pytest.approx(V_08E, abs=1e-12)
    assert np.allclose(optimal_policy(q, demo, dual)[0], PI_08E, atol=1e-12)


def test_softmax_policy_at_beta0():
    pi = optimal_policy(np.array([[1.0, 0.0]]), np.full((1, 2), 0.5), DualState(0.0, 1.0, 1.0))
    assert np.allclose(pi[0], SOFTMAX_1_0, atol=1e-12)


def test_logsumexp_bound_and_no_overflow():
    rng = np.random.default_rng(1)
    for _ in range(50):
        q = rng.normal(0, 50, (3, 4))
        demo = random_demo(rng, 3, 4)
        dual = DualState(float(rng.uniform(0, 3)), float(rng.uniform(0.01, 2)), 1.0)
        x = dual.beta * np.log(demo) + q
        v = regularized_value(q, demo, dual)
        assert np.all(x.max(1) <= v + 1e-9)
        assert np.all(v <= x.max(1) + dual.alpha * np.log(4) + 1e-9)
    v = regularized_value(np.array([[1e4, 0.0]]), np.full((1, 2), 0.5), DualState(1.0, 1e-3, 1.0))
    assert np.isfinite(v).all()


def test_zero_demo_support_error():
    with pytest.raises(SupportError):
        regularized_value(np.zeros((1, 2)), np.array([[1.0, 0.0]]), DualState(1.0, 1.0, 1.0))
    # beta = 0 ignores the demo entirely
    assert np.isfinite(regularized_value(np.zeros((1, 2)), np.array([[1.0, 0.0]]), DualState(0.0, 1.0, 1.0))).all()


def test_bellman_gamma0_returns_reward():
    rng = np.random.default_rng(2)
    mdp = random_mdp(rng, 4, 3, 0.0)
    out = bellman_operator(rng.normal(size=(4, 3)), mdp, random_demo(rng, 4, 3), DualState(0.5, 0.5, 1.0))
    assert np.allclose(out, mdp.reward)


def test_bellman_one_application():
    mdp = one_state([1.0, 0.0], 0.5)
    q = np.array([[2.0, -1.0]])
    out = bellman_operator(q, mdp, np.full((1, 2), 0.5), DualState(0.0, 1.0, 1.0))
    # 1 + 0.5*log(e^2 + e^-1) = 2.02429367578687102937946295993 (mpmath)
    assert out[0, 0] == pytest.approx(2.02429367578687102937946295993, abs=1e-12)
    assert out[0, 1] == pytest.approx(1.02429367578687102937946295993, abs=1e-12)


def test_q_iteration_one_state_closed_form():
    res = q_iteration(one_state([1.0, 0.0], 0.0), np.full((1, 2), 0.5), DualState(0.0, 1.0, 1.0))
    assert np.allclose(res.q, [[1.0, 0.0]])
    assert res.v[0] == pytest.approx(LOG_E_PLUS_1, abs=1e-12)
    assert np.allclose(res.policy[0], SOFTMAX_1_0, atol=1e-12)


def test_q_iteration_convergence_error():
    mdp = random_mdp(np.random.default_rng(0), 4, 2, 0.99)
    with pytest.raises(ConvergenceError) as info:
        q_iteration(mdp, np.full((4, 2), 0.5), DualState(0.0, 1.0, 1.0), max_iters=3)
    assert info.value.residual > 0 and info.value.iterations == 3


def test_q_iteration_matches_plain_soft_vi_at_beta0():
    rng = np.random.default_rng(3)
    for _ in range(10):
        mdp = random_mdp(rng, 6, 3, float(rng.uniform(0.5, 0.95)))
        alpha = float(rng.uniform(0.1, 2.0))
        res = q_iteration(mdp, random_demo(rng, 6, 3), DualState(0.0, alpha, 1.0))
        assert np.max(np.abs(res.q - plain_soft_value_iteration(mdp, alpha))) < 1e-8


def test_residuals_decay_at_gamma_rate():
    rng = np.random.default_rng(4)
    mdp = random_mdp(rng, 5, 3, 0.8)
    res = residual_trace(mdp, random_demo(rng, 5, 3), DualState(0.4, 0.5, 1.0), 40)
    ratios = res[6:] / res[5:-1]
    assert np.all(ratios <= 0.8 + 1e-9)


def test_terminal_states_have_zero_value():
    P = np.zeros((2, 2, 2))
    P[0, :, 1] = 1.0
    P[1, :, 1] = 1.0
    mdp = DiscreteMDP(P, np.array([[1.0, 3.0], [0.0, 0.0]]), 0.9, terminal={1})
    res = q_iteration(mdp, np.full((2, 2), 0.5), DualState(0.2, 0.5, 1.0))
    assert res.v[1] == 0.0
    assert np.allclose(res.q[0], [1.0, 3.0])


def test_policy_cross_entropy_examples():
    # two-state swap chain: occupancy (0.5, 0.5)
    P = np.zeros((2, 2, 2))
    P[0, :, 1] = 1.0
    P[1, :, 0] = 1.0
    mdp = DiscreteMDP(P, np.zeros((2, 2)), 0.9)
    pi = np.array([[0.6, 0.4], [0.1, 0.9]])
    demo = np.array([[0.3, 0.7], [0.5, 0.5]])
    a = -(0.6 * np.log(0.3) + 0.4 * np.log(0.7))
    b = np.log(2)
    assert policy_cross_entropy(mdp, pi, demo, gamma_weighting=False) == pytest.approx((a + b) / 2, abs=1e-12)
    # pi == demo: occupancy-weighted demo entropy
    ent = (entropy(demo[0]) + entropy(demo[1])) / 2
    assert policy_cross_entropy(mdp, demo, demo, gamma_weighting=False) == pytest.approx(ent, abs=1e-12)
    # uniform demo: ln K regardless of pi
    rng = np.random.default_rng(5)
    m = random_mdp(rng, 5, 4, 0.9)
    assert policy_cross_entropy(m, random_demo(rng, 5, 4), np.full((5, 4), 0.25)) == pytest.approx(np.log(4))


def test_policy_cross_entropy_non_ergodic():
    P = np.zeros((2, 1, 2))
    P[0, 0, 0] = 1.0
    P[1, 0, 1] = 1.0
    mdp = DiscreteMDP(P, np.zeros((2, 1)), 0.9)
    with pytest.raises(NonErgodicError):
        policy_cross_entropy(mdp, np.ones((2, 1)), np.ones((2, 1)), gamma_weighting=False)


def test_evaluate_policy_examples():
    rng = np.random.default_rng(6)
    mdp0 = random_mdp(rng, 4, 3, 0.0)
    assert np.allclose(evaluate_policy_regularized(mdp0, random_demo(rng, 4, 3), random_demo(rng, 4, 3),
                                                   DualState(0.3, 0.5, 1.0)), mdp0.reward)
    # deterministic two-state cycle with one action:
    # Q0 = 1 + g Q1, Q1 = 2 + g Q0  ->  Q0 = (1 + 2g)/(1 - g^2)
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = 1.0
    P[1, 0, 0] = 1.0
    mdp = DiscreteMDP(P, np.array([[1.0], [2.0]]), 0.5)
    q = evaluate_policy_regularized(mdp, np.ones((2, 1)), np.ones((2, 1)), DualState(0.0, 1.0, 1.0))
    assert q[:, 0] == pytest.approx([2.0 / 0.75, 2.0 + 0.5 * 2.0 / 0.75], abs=1e-12)


def test_optimal_policy_is_evaluation_fixed_point():
    rng = np.random.default_rng(7)
    mdp = random_mdp(rng, 5, 3, 0.9)
    demo = random_demo(rng, 5, 3)
    dual = DualState(0.6, 0.4, 1.0)
    res = q_iteration(mdp, demo, dual)
    assert np.max(np.abs(evaluate_policy_regularized(mdp, res.policy, demo, dual) - res.q)) < 1e-8


def test_policy_iteration_monotone_and_converges():
    rng = np.random.default_rng(8)
    mdp = random_mdp(rng, 5, 3, 0.9)
    demo = random_demo(rng, 5, 3)
    dual = DualState(0.8, 0.5, 1.0)
    pi, history = soft_policy_iteration(mdp, demo, dual)
    for q_prev, q_next in zip(history, history[1:]):
        assert np.all(q_next >= q_prev - 1e-9)
    res = q_iteration(mdp, demo, dual)
    assert np.max(0.5 * np.abs(pi - res.policy).sum(1)) < 1e-6
    assert np.allclose(policy_improvement_step(res.q, demo, dual), res.policy)


def test_dual_step_examples():
    d = DualState(0.5, 1.0, 2.0, 0.1)
    assert dual_step(d, [-2.0, -2.0]).beta == 0.5
    assert dual_step(d, [-3.0]).beta == pytest.approx(0.6)
    assert dual_step(DualState(0.0, 1.0, 2.0, 0.1), [-0.5]).beta == 0.0
    assert dual_step(DualState(0.05, 1.0, 2.0, 0.1), [-0.5]).beta == 0.0
    with pytest.raises(ValueError):
        dual_step(d, [])


def test_dual_sawtooth_matches_scalar_recursion():
    rng = np.random.default_rng(9)
    d = DualState(0.0, 1.0, 1.5, 0.05)
    beta = 0.0
    for k in range(2000):
        mean = -2.5 if (k // 50) % 2 == 0 else -0.5
        batch = mean + rng.normal(0, 0.1, 8)
        d = dual_step(d, batch)
        beta = max(0.0, beta - 0.05 * (batch.mean() + 1.5))
        assert d.beta == pytest.approx(beta, abs=1e-12)
        assert d.beta >= 0.0


def test_dual_state_validation():
    for kw in ({"alpha": 0.0}, {"beta": -1.0}, {"ce_target": 0.0}, {"lr_beta": -1.0}):
        with pytest.raises(ValueError):
            DualState(**kw)
    assert DualState(ce_target=1.5).ce_bar == -1.5


def test_dual_gradient_is_looked_up_at_call_time(monkeypatch):
    monkeypatch.setattr(tabular, "dual_gradient", lambda b, c: -(float(np.mean(b)) - c))
    assert dual_step(DualState(1.0, 1.0, 1.0, 0.1), [-3.0]).beta < 1.0
