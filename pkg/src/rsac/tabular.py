"""Exact solver for the demo-regularized maximum-entropy objective.

Q tables are ``[S, A]`` arrays, value tables ``[S]`` arrays and tabular
policies ``[S, A]`` arrays whose rows are categorical distributions. The
demonstration policy is a tabular policy as well.

The regularized soft value of a state is

    V(s) = alpha * log sum_a demo(a|s) ** (beta / alpha) * exp(Q(s, a) / alpha)

and the matching optimal policy is proportional to the summand. Terminal
states are absorbing with zero continuation value.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .distributions import SupportError
from .mdp import DiscreteMDP


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class NonErgodicError(ValueError):
    """The induced chain has no unique long-run distribution."""


class NumericError(ArithmeticError):
    pass


@dataclass(frozen=True)
class DualState:
    """Lagrange multiplier ``beta`` for the cross-entropy constraint.

    ``ce_target`` is the positive cross-entropy budget c (constraint:
    E[-log demo] <= c). Internally the constraint is written as
    E[log demo] >= ce_bar with ``ce_bar = -ce_target``.
    """

    beta: float = 0.0
    alpha: float = 1.0
    ce_target: float = 1.0
    lr_beta: float = 1e-3

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if not self.ce_target > 0:
            raise ValueError(f"ce_target must be > 0, got {self.ce_target}")
        if not self.lr_beta >= 0:
            raise ValueError(f"lr_beta must be >= 0, got {self.lr_beta}")

    @property
    def ce_bar(self) -> float:
        return -self.ce_target


@dataclass
class SolveResult:
    q: np.ndarray
    v: np.ndarray
    policy: np.ndarray
    iterations: int
    residual: float

    def to_dict(self) -> dict:
        return {
            "Q": self.q.tolist(),
            "V": self.v.tolist(),
            "policy": self.policy.tolist(),
            "iterations": self.iterations,
            "residual": self.residual,
        }


def _log_demo(demo: np.ndarray, beta: float) -> np.ndarray:
    demo = np.asarray(demo, dtype=float)
    if beta == 0.0:
        # demo^0 == 1 even where demo is zero
        return np.zeros_like(demo)
    if np.any(demo <= 0):
        s, a = np.argwhere(demo <= 0)[0]
        raise SupportError(f"demo policy has zero mass at state {s}, action {a}")
    return np.log(demo)


def _logits(q, demo, dual: DualState) -> np.ndarray:
    return (dual.beta / dual.alpha) * _log_demo(demo, dual.beta) + np.asarray(q, dtype=float) / dual.alpha


def _logsumexp(x: np.ndarray) -> np.ndarray:
    m = x.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True)))[..., 0]


def regularized_value(q, demo, dual: DualState, s: int | None = None):
    """Regularized soft value; all states when ``s`` is None."""
    if s is not None:
        return float(dual.alpha * _logsumexp(_logits(np.asarray(q)[s], np.asarray(demo)[s], dual)))
    return dual.alpha * _logsumexp(_logits(q, demo, dual))


def optimal_policy(q, demo, dual: DualState) -> np.ndarray:
    x = _logits(q, demo, dual)
    x = x - x.max(axis=-1, keepdims=True)
    p = np.exp(x)
    return p / p.sum(axis=-1, keepdims=True)


# Same closed form, applied to the Q of the current policy rather than a
# fixed point.
def policy_improvement_step(q_pi, demo, dual: DualState) -> np.ndarray:
    return optimal_policy(q_pi, demo, dual)


def bellman_operator(q, mdp: DiscreteMDP, demo, dual: DualState) -> np.ndarray:
    v = regularized_value(q, demo, dual)
    v = np.where(mdp.terminal_mask, 0.0, v)
    out = mdp.reward + mdp.gamma * mdp.transition @ v
    out[mdp.terminal_mask] = mdp.reward[mdp.terminal_mask]
    return out


def q_iteration(mdp: DiscreteMDP, demo, dual: DualState, tol: float = 1e-10,
                max_iters: int = 100_000, q0=None) -> SolveResult:
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.zeros((mdp.n_states, mdp.n_actions)) if q0 is None else np.array(q0, dtype=float)
    residual = np.inf
    for it in range(1, max_iters + 1):
        q_next = bellman_operator(q, mdp, demo, dual)
        residual = float(np.max(np.abs(q_next - q)))
        q = q_next
        if residual < tol:
            v = np.where(mdp.terminal_mask, 0.0, regularized_value(q, demo, dual))
            return SolveResult(q, v, optimal_policy(q, demo, dual), it, residual)
    raise ConvergenceError(f"no convergence after {max_iters} iterations (residual {residual:.3e})",
                           residual, max_iters)


def residual_trace(mdp: DiscreteMDP, demo, dual: DualState, n: int, q0=None) -> np.ndarray:
    """Sup-norm change of the first ``n`` Q-iteration updates."""
    q = np.zeros((mdp.n_states, mdp.n_actions)) if q0 is None else np.array(q0, dtype=float)
    out = np.empty(n)
    for k in range(n):
        q_next = bellman_operator(q, mdp, demo, dual)
        out[k] = np.max(np.abs(q_next - q))
        q = q_next
    return out


def state_bonus(pi, demo, dual: DualState) -> np.ndarray:
    """alpha * H(pi(.|s)) - beta * CE(pi(.|s), demo(.|s)) for every state."""
    pi = np.asarray(pi, dtype=float)
    log_pi = np.log(np.where(pi > 0, pi, 1.0))
    ent = -np.sum(pi * log_pi, axis=-1)
    if dual.beta == 0.0:
        return dual.alpha * ent
    return dual.alpha * ent - dual.beta * per_state_cross_entropy(pi, demo)


def per_state_cross_entropy(pi, demo) -> np.ndarray:
    pi, demo = np.asarray(pi, dtype=float), np.asarray(demo, dtype=float)
    bad = np.argwhere((pi > 0) & (demo <= 0))
    if bad.size:
        s, a = bad[0]
        raise SupportError(f"demo has zero mass at state {s}, action {a} where the policy acts")
    log_demo = np.log(np.where(pi > 0, demo, 1.0))
    return -np.sum(pi * log_demo, axis=-1)


def evaluate_policy_regularized(mdp: DiscreteMDP, pi, demo, dual: DualState) -> np.ndarray:
    """Exact regularized Q of ``pi`` by a linear solve over state-action pairs.

    Q(s,a) = r(s,a) + gamma * E_s'[ bonus(s') + E_{a'~pi} Q(s',a') ],
    with terminal successors contributing nothing.
    """
    S, A = mdp.n_states, mdp.n_actions
    pi = np.asarray(pi, dtype=float)
    live = ~mdp.terminal_mask
    bonus = np.where(live, state_bonus(pi, demo, dual), 0.0)
    # P_sa_to_s'a'[(s,a), (s',a')] = p(s'|s,a) * pi(a'|s') on live s'
    P = mdp.transition * live[None, None, :]
    M = (P[:, :, :, None] * pi[None, None, :, :]).reshape(S * A, S * A)
    rhs = (mdp.reward + mdp.gamma * P @ bonus).reshape(S * A)
    lhs = np.eye(S * A) - mdp.gamma * M
    try:
        q = np.linalg.solve(lhs, rhs)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"singular policy-evaluation system: {exc}") from exc
    if not np.all(np.isfinite(q)):
        raise NumericError("policy evaluation produced non-finite values")
    q = q.reshape(S, A)
    q[mdp.terminal_mask] = mdp.reward[mdp.terminal_mask]
    return q


def soft_policy_iteration(mdp: DiscreteMDP, demo, dual: DualState, pi0=None, tol: float = 1e-12,
                          max_iters: int = 1000):
    """Alternate exact evaluation and improvement; returns (policy, [Q_0, Q_1, ...])."""
    pi = np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions) if pi0 is None else np.asarray(pi0)
    history = []
    for _ in range(max_iters):
        q = evaluate_policy_regularized(mdp, pi, demo, dual)
        history.append(q)
        new_pi = policy_improvement_step(q, demo, dual)
        if np.max(np.abs(new_pi - pi)) < tol:
            return new_pi, history
        pi = new_pi
    raise ConvergenceError("policy iteration did not converge", float(np.max(np.abs(new_pi - pi))), max_iters)


def state_occupancy(mdp: DiscreteMDP, pi, gamma_weighting: bool = True,
                    horizon: int | None = None) -> np.ndarray:
    """Normalized state-visitation distribution of ``pi`` over non-terminal states.

    With ``gamma_weighting`` visits are discounted; otherwise they are plain
    counts per episode (or long-run frequencies for chains that never
    terminate). ``horizon`` truncates episodes after that many steps.
    """
    pi = np.asarray(pi, dtype=float)
    live = ~mdp.terminal_mask
    P_pi = np.einsum("sa,sap->sp", pi, mdp.transition)
    M = P_pi * live[:, None] * live[None, :]
    mu0 = mdp.initial * live
    if mu0.sum() == 0:
        raise NonErgodicError("initial distribution puts no mass on non-terminal states")
    w = mdp.gamma if gamma_weighting else 1.0
    if horizon is not None:
        d = np.zeros(mdp.n_states)
        mu = mu0.copy()
        scale = 1.0
        for _ in range(horizon):
            d += scale * mu
            mu = mu @ M
            scale *= w
    elif gamma_weighting or _spectral_radius(M) < 1.0 - 1e-12:
        d = np.linalg.solve((np.eye(mdp.n_states) - w * M).T, mu0)
    elif not mdp.terminal:
        d = _stationary(P_pi)
    else:
        raise NonErgodicError("policy can loop forever without reaching a terminal state; "
                              "pass a horizon or use gamma weighting")
    d = np.clip(d, 0.0, None)
    return d / d.sum()


def _spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(np.linalg.eigvals(M)))) if M.size else 0.0


def _stationary(P: np.ndarray) -> np.ndarray:
    S = P.shape[0]
    A = np.vstack([(np.eye(S) - P).T, np.ones(S)])
    if np.linalg.matrix_rank(A[:-1], tol=1e-10) < S - 1:
        raise NonErgodicError("chain has more than one recurrent class; long-run frequencies are not unique")
    b = np.zeros(S + 1)
    b[-1] = 1.0
    return np.linalg.lstsq(A, b, rcond=None)[0]


def policy_cross_entropy(mdp: DiscreteMDP, pi, demo, gamma_weighting: bool = True,
                         horizon: int | None = None) -> float:
    """Occupancy-weighted E[-log demo(a|s)] under ``pi``."""
    d = state_occupancy(mdp, pi, gamma_weighting, horizon)
    return float(d @ per_state_cross_entropy(pi, demo))


def dual_gradient(batch_log_demo: np.ndarray, ce_bar: float) -> float:
    return float(np.mean(batch_log_demo)) - ce_bar


def dual_step(dual: DualState, batch_log_demo) -> DualState:
    """One projected gradient step on beta.

    beta grows when the sampled cross-entropy exceeds the target and shrinks
    (never below zero) otherwise.
    """
    batch = np.asarray(batch_log_demo, dtype=float).ravel()
    if batch.size == 0:
        raise ValueError("dual_step needs a non-empty batch of log demo probabilities")
    grad = dual_gradient(batch, dual.ce_bar)
    return replace(dual, beta=max(0.0, dual.beta - dual.lr_beta * grad))
