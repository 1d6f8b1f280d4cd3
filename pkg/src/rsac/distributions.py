"""Categorical and tanh-squashed Gaussian helpers.

All quantities are in nats.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)
_LOG2 = np.log(2.0)


class SupportError(ValueError):
    """Raised when a log-probability would be taken of a zero-mass action."""


@dataclass(frozen=True)
class Categorical:
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise ValueError("Categorical needs a non-empty 1-d probability vector")
        if np.any(p < 0) or not np.all(np.isfinite(p)):
            raise ValueError(f"negative or non-finite probability in {p}")
        if abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "probs", p)

    def __len__(self):
        return self.probs.size


def _as_probs(p) -> np.ndarray:
    if isinstance(p, Categorical):
        return p.probs
    return Categorical(p).probs


def entropy(p) -> float:
    p = _as_probs(p)
    nz = p > 0
    return float(-np.sum(p[nz] * np.log(p[nz])))


def cross_entropy(p, q) -> float:
    """-sum_a p(a) log q(a). Raises SupportError if q(a)=0 where p(a)>0."""
    p, q = _as_probs(p), _as_probs(q)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.size} vs {q.size}")
    nz = p > 0
    bad = np.flatnonzero(nz & (q <= 0))
    if bad.size:
        raise SupportError(f"q has zero mass on action {int(bad[0])} where p > 0")
    return float(-np.sum(p[nz] * np.log(q[nz])))


def kl_divergence(p, q) -> float:
    return cross_entropy(p, q) - entropy(p)


def softplus(x):
    return np.logaddexp(0.0, x)


def tanh_log_jacobian(u):
    """log(1 - tanh(u)^2), stable for large |u|."""
    return 2.0 * (_LOG2 - u - softplus(-2.0 * u))


@dataclass(frozen=True)
class SquashedGaussianParams:
    """Diagonal Gaussian over pre-squash values; the action is tanh of a draw."""

    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        log_std = np.atleast_1d(np.asarray(self.log_std, dtype=float))
        if mean.shape != log_std.shape:
            raise ValueError(f"mean shape {mean.shape} != log_std shape {log_std.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "log_std", np.clip(log_std, LOG_STD_MIN, LOG_STD_MAX))

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        eps = rng.standard_normal(self.mean.shape)
        return np.tanh(self.mean + np.exp(self.log_std) * eps)


def gaussian_log_prob(u, mean, log_std):
    """Log-density of diagonal Gaussian, summed over the last axis."""
    z = (u - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - _HALF_LOG_2PI, axis=-1)


def squashed_log_prob_pre(u, mean, log_std):
    """Log-density of tanh(u) where u is the known pre-squash value.

    Works on batches (last axis = action dimension). Avoids atanh entirely,
    so it stays finite when tanh(u) rounds to +-1.
    """
    return gaussian_log_prob(u, mean, log_std) - np.sum(tanh_log_jacobian(u), axis=-1)


def squashed_log_prob(params: SquashedGaussianParams, action) -> float:
    a = np.atleast_1d(np.asarray(action, dtype=float))
    if a.shape != params.mean.shape:
        raise ValueError(f"action shape {a.shape} != parameter shape {params.mean.shape}")
    if np.any(np.abs(a) >= 1.0):
        idx = int(np.flatnonzero(np.abs(a) >= 1.0)[0])
        raise SupportError(f"action component {idx} = {a[idx]!r} outside (-1, 1)")
    u = np.arctanh(a)
    return float(squashed_log_prob_pre(u, params.mean, params.log_std))
