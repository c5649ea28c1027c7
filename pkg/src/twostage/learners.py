"""Adversarial learning subroutines: projected OGD, Hedge, EXP3.

These are the step/update machines the run loops are built from.  All
of them are plain mutable state holders; randomness comes in through an
explicit numpy Generator so trajectories are reproducible bit for bit.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np


def default_step_schedule(t: int) -> float:
    """The 1/sqrt(t) schedule behind the standard OGD regret bound."""
    return 1.0 / math.sqrt(t)


class OnlineGradientDescent:
    """Projected online (sub)gradient descent over a box.

    The iterate is always kept inside [lo, hi] by coordinatewise
    clipping after every update.
    """

    def __init__(self, lo, hi, initial=None, step_schedule: Optional[Callable[[int], float]] = None):
        self.lo = np.atleast_1d(np.asarray(lo, dtype=float))
        self.hi = np.atleast_1d(np.asarray(hi, dtype=float))
        if self.lo.shape != self.hi.shape or np.any(self.lo > self.hi):
            raise ValueError("invalid box")
        if initial is None:
            initial = 0.5 * (self.lo + self.hi)
        self.iterate = np.clip(np.atleast_1d(np.asarray(initial, dtype=float)), self.lo, self.hi)
        self.step_schedule = step_schedule or default_step_schedule
        self.t = 1

    def update(self, subgradient) -> np.ndarray:
        """One descent step; returns the new (projected) iterate."""
        grad = np.atleast_1d(np.asarray(subgradient, dtype=float))
        if not np.all(np.isfinite(grad)):
            raise FloatingPointError("non-finite subgradient")
        eta = self.step_schedule(self.t)
        self.iterate = np.clip(self.iterate - eta * grad, self.lo, self.hi)
        self.t += 1
        return self.iterate


def ogd_update(state: OnlineGradientDescent, subgradient) -> OnlineGradientDescent:
    state.update(subgradient)
    return state


class Hedge:
    """Exponential weights over m experts, reward-maximizing orientation.

    Weights are kept in log space so that 1e4 rounds of updates cannot
    overflow.  Feedback outside [-reward_scale, reward_scale] is clipped
    (counted in ``clip_count``) before entering the exponent.
    """

    def __init__(self, m: int, epsilon: float, reward_scale: float = 1.0):
        if m < 1:
            raise ValueError("need at least one expert")
        if epsilon <= 0 or reward_scale <= 0:
            raise ValueError("epsilon and reward_scale must be positive")
        self.m = m
        self.epsilon = float(epsilon)
        self.reward_scale = float(reward_scale)
        self.log_weights = np.zeros(m)
        self.t = 1
        self.clip_count = 0

    @classmethod
    def for_horizon(cls, m: int, horizon: int, reward_scale: float = 1.0) -> "Hedge":
        """Hedge with the horizon-tuned rate sqrt(log m / T)."""
        eps = math.sqrt(math.log(max(m, 2)) / max(horizon, 1))
        return cls(m, eps, reward_scale)

    @property
    def distribution(self) -> np.ndarray:
        w = self.log_weights - np.max(self.log_weights)
        y = np.exp(w)
        return y / y.sum()

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.m, p=self.distribution))

    def update(self, rewards) -> None:
        r = np.asarray(rewards, dtype=float)
        if r.shape != (self.m,):
            raise ValueError("reward vector has wrong shape")
        clipped = np.clip(r, -self.reward_scale, self.reward_scale)
        self.clip_count += int(np.sum(clipped != r))
        self.log_weights += self.epsilon * clipped / self.reward_scale
        self.t += 1


def hedge_sample(state: Hedge, rng: np.random.Generator) -> int:
    return state.sample(rng)


def hedge_update(state: Hedge, rewards) -> Hedge:
    state.update(rewards)
    return state


class Exp3:
    """EXP3 for bandit feedback on K arms, reward-maximizing.

    Sampling mixes the exponential-weights distribution with uniform
    exploration at rate gamma; updates use the usual importance-weighted
    reward estimate for the chosen arm only.
    """

    def __init__(self, n_arms: int, gamma: Optional[float] = None,
                 horizon: Optional[int] = None, reward_scale: float = 1.0):
        if n_arms < 1:
            raise ValueError("need at least one arm")
        if gamma is None:
            if horizon is None:
                raise ValueError("provide gamma or horizon")
            gamma = min(1.0, math.sqrt(n_arms * math.log(max(n_arms, 2)) / max(horizon, 1)))
        if not 0 < gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        self.n_arms = n_arms
        self.gamma = float(gamma)
        self.reward_scale = float(reward_scale)
        self.log_weights = np.zeros(n_arms)
        self.t = 1
        self.clip_count = 0

    @property
    def distribution(self) -> np.ndarray:
        w = self.log_weights - np.max(self.log_weights)
        y = np.exp(w)
        y /= y.sum()
        return (1.0 - self.gamma) * y + self.gamma / self.n_arms

    def sample(self, rng: np.random.Generator) -> int:
        return int(rng.choice(self.n_arms, p=self.distribution))

    def step(self, chosen: int, observed_reward: float) -> None:
        """Importance-weighted update from the chosen arm's reward.

        The reward is mapped to [0, 1] via the declared scale before
        the estimate is formed, so weights stay bounded.
        """
        r = float(observed_reward) / self.reward_scale
        if abs(r) > 1.0:
            self.clip_count += 1
            r = max(-1.0, min(1.0, r))
        prob = self.distribution[chosen]
        estimate = (0.5 * (r + 1.0)) / prob  # shift to [0, 1] for the estimator
        self.log_weights[chosen] += self.gamma * estimate / self.n_arms
        # Renormalize in log space occasionally for numerical hygiene.
        if self.t % 256 == 0:
            self.log_weights -= np.max(self.log_weights)
        self.t += 1


def exp3_step(state: Exp3, chosen: int, observed_reward: float) -> Exp3:
    state.step(chosen, observed_reward)
    return state
