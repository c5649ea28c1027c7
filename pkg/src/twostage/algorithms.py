"""Full-horizon run loops: DAL (doubly adversarial) and IAL (informed).

Both loops couple a dual Hedge over the long-term constraints with a
first-stage rule: online gradient descent (or EXP3 over a finite action
set) for DAL, and prediction-informed per-period minimization for IAL.
Each run yields a RunTrace of everything that happened.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import environments as env
from .learners import Exp3, Hedge, OnlineGradientDescent
from .problem import ConstraintDirection, TwoStageFamily, TypeRealization
from .solvers import (SaddleSolution, constraint_feedback, fluid_opt,
                      inner_solve, segment_expected_lagrangian_argmin,
                      solve_saddle)

PACKING = ConstraintDirection.PACKING
COVERING = ConstraintDirection.COVERING


class ConfigurationError(ValueError):
    """Algorithm configuration inconsistent with the family."""


@dataclass
class DalConfig:
    """Knobs of the doubly adversarial loop.

    ``mu`` defaults to the horizon for packing and to a fluid-dual based
    scale for covering; ``discrete_c`` switches the first stage to EXP3
    over the given finite action set.
    """

    mu: Optional[float] = None
    ogd_step: Optional[Callable[[int], float]] = None
    ogd_initial: Optional[np.ndarray] = None
    hedge_epsilon: Optional[float] = None
    direction: Optional[ConstraintDirection] = None
    discrete_c: Optional[np.ndarray] = None
    covering_mu_factor: float = 2.0
    covering_mu_norm: str = "l1"
    warmup_mu: bool = False
    mu_samples: int = 400


@dataclass
class IalConfig:
    """Knobs of the prediction-informed loop.

    ``mu`` defaults to the chosen norm of the saddle dual.  ``c_rule``
    selects the per-period budget: 'saddle' uses the cached per-segment
    saddle minimizer, 'sampled-dual' re-minimizes against the sampled
    constraint's dual as literally stated.
    """

    mu: Optional[float] = None
    mu_norm: str = "l1"
    hedge_epsilon: Optional[float] = None
    n_samples: int = 1000
    saddle_max_iters: int = 2000
    saddle_seed: int = 0
    c_rule: str = "saddle"


@dataclass
class RunTrace:
    """Per-period record of one run plus aggregate slots."""

    T: int
    m: int
    c: np.ndarray
    i_dual: np.ndarray
    corrupted: np.ndarray
    x: np.ndarray
    obj_inc: np.ndarray      # raw objective units
    g: np.ndarray            # raw constraint units
    cum_g: np.ndarray
    terminated_at: Optional[int] = None
    w_realized: int = 0
    algorithm: str = ""
    seed: int = 0
    metrics: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return float(self.obj_inc.sum())

    @property
    def final_consumption(self) -> np.ndarray:
        return self.cum_g[-1]

    def d_violation(self, beta: np.ndarray, direction: ConstraintDirection) -> float:
        """Worst terminal violation of the horizon-average constraints."""
        avg = self.final_consumption / self.T
        if direction is COVERING:
            return float(np.max(beta - avg))
        return float(np.max(avg - beta))


def _hedge_scale(family: TwoStageFamily, mu: float, T: int) -> float:
    return 1.0 + mu / (T * float(np.min(family.beta_norm)))


def _resolve_mu_dal(family, schedule, config: DalConfig, direction, seed) -> float:
    if config.mu is not None:
        return float(config.mu)
    T = schedule.T
    if direction is PACKING:
        return float(T)
    if config.warmup_mu:
        n = max(int(math.isqrt(T)), 8)
        draws = env.sample_horizon(schedule, env.stream(seed, "saa"))[:n]
        seg = env.Segment(0, T, draws.mean(axis=0), float(draws.std()))
        sched = env.EnvironmentSchedule(T, (seg,))
    else:
        sched = schedule
    fluid = fluid_opt(family, sched, n_samples=config.mu_samples,
                      direction=direction, seed=seed)
    dual = fluid.dual_estimate
    norm = float(np.sum(dual)) if config.covering_mu_norm == "l1" else float(np.max(dual))
    if norm <= 0:
        norm = T * float(np.max(family.beta_norm))  # constraints never bind
    return config.covering_mu_factor * norm


def dal_run(family: TwoStageFamily, schedule, config: DalConfig, seed: int,
            corruption: Optional[env.CorruptionPlan] = None) -> RunTrace:
    """One full DAL run (Algorithm: OGD/EXP3 x Hedge with termination)."""
    direction = config.direction or family.direction
    T = schedule.T
    m = family.m
    if schedule.dim != family.second_stage.dim and family.name == "resource_allocation":
        raise ConfigurationError("schedule dimension does not match the family")

    clean = env.sample_horizon(schedule, env.stream(seed, "demand"))
    observed, w_realized = env.apply_corruption(clean, corruption)
    corrupted_flags = np.zeros(T, dtype=bool)
    if corruption is not None:
        for t in corruption.periods:
            corrupted_flags[t] = not np.array_equal(observed[t], clean[t])

    mu = _resolve_mu_dal(family, schedule, config, direction, seed)
    eps = config.hedge_epsilon or math.sqrt(math.log(max(m, 2)) / T)
    hedge = Hedge(m, eps, reward_scale=_hedge_scale(family, mu, T))
    dual_rng = env.stream(seed, "dual")

    exp3 = None
    ogd = None
    if config.discrete_c is not None:
        actions = np.atleast_2d(np.asarray(config.discrete_c, dtype=float))
        if actions.shape[0] == 1 and actions.shape[1] > 1 and family.first_stage_lo.size == 1:
            actions = actions.T
        exp3 = Exp3(actions.shape[0], horizon=T,
                    reward_scale=_hedge_scale(family, mu, T))
        primal_rng = env.stream(seed, "primal")
    else:
        step = config.ogd_step
        if step is None:
            diam = max(family.first_stage_diameter, 1e-12)
            step = lambda t, _d=diam: _d / math.sqrt(t)
        ogd = OnlineGradientDescent(family.first_stage_lo, family.first_stage_hi,
                                    initial=config.ogd_initial, step_schedule=step)

    trace = RunTrace(
        T=T, m=m,
        c=np.zeros(T), i_dual=np.full(T, -1, dtype=int),
        corrupted=corrupted_flags,
        x=np.zeros((T, family.second_stage.dim or m)),
        obj_inc=np.zeros(T), g=np.zeros((T, m)), cum_g=np.zeros((T, m)),
        w_realized=w_realized, algorithm="dal", seed=seed,
    )

    budget = T * family.beta
    cum = np.zeros(m)
    terminated = False
    for t in range(T):
        if terminated:
            trace.cum_g[t] = cum
            continue
        if exp3 is not None:
            arm = exp3.sample(primal_rng)
            c_vec = actions[arm]
        else:
            c_vec = ogd.iterate.copy()
        i = hedge.sample(dual_rng)
        theta = TypeRealization(observed[t])
        lam = np.zeros(m)
        lam[i] = mu
        sol = inner_solve(family, theta, c_vec, lam, direction, horizon=T)

        g_raw = np.asarray(family.g(theta, c_vec, sol.x), dtype=float)
        obj_raw = (family.p_norm(c_vec) + family.f_norm(theta, sol.x)) * family.scale.f_max
        rewards = constraint_feedback(family, theta, c_vec, sol.x, mu,
                                      direction, horizon=T)
        hedge.update(rewards)
        if exp3 is not None:
            exp3.step(arm, -rewards[i])
        else:
            ogd.update(family.p_grad_norm(c_vec) + sol.c_subgradient)

        cum = cum + g_raw
        trace.c[t] = c_vec[0] if c_vec.size == 1 else float(np.linalg.norm(c_vec))
        trace.i_dual[t] = i
        trace.x[t] = sol.x
        trace.obj_inc[t] = obj_raw
        trace.g[t] = g_raw
        trace.cum_g[t] = cum
        if direction is PACKING and np.any(cum > budget):
            terminated = True
            trace.terminated_at = t
    return trace


@dataclass
class IalPrecompute:
    """Cached saddle data shared across seeds of one configuration."""

    saddle: SaddleSolution
    mu: float
    c_table: np.ndarray      # (n_segments, m) budgets per sampled dual
    direction: ConstraintDirection


def ial_precompute(family: TwoStageFamily, predictions, config: IalConfig,
                   direction: Optional[ConstraintDirection] = None) -> IalPrecompute:
    """Solve the prediction saddle and cache per-period decision data."""
    direction = direction or family.direction
    saddle = solve_saddle(family, predictions.schedule,
                          n_samples=config.n_samples,
                          max_iters=config.saddle_max_iters,
                          seed=config.saddle_seed, direction=direction)
    if config.mu is not None:
        mu = float(config.mu)
    else:
        lam = saddle.lambda_star
        mu = float(np.sum(lam)) if config.mu_norm == "l1" else float(np.max(lam))
        if mu <= 0:
            mu = predictions.T * float(np.max(family.beta_norm))
    n_seg = len(saddle.segments)
    c_table = np.zeros((n_seg, family.m))
    for s, model in enumerate(saddle.segments):
        if config.c_rule == "saddle":
            c_table[s, :] = saddle.c_star[s]
        else:
            for i in range(family.m):
                lam_i = np.zeros(family.m)
                lam_i[i] = mu
                c_table[s, i] = segment_expected_lagrangian_argmin(
                    family, model, lam_i, predictions.T, direction)
    return IalPrecompute(saddle=saddle, mu=mu, c_table=c_table, direction=direction)


def ial_run(family: TwoStageFamily, schedule, predictions, config: IalConfig,
            seed: int, corruption: Optional[env.CorruptionPlan] = None,
            precomputed: Optional[IalPrecompute] = None) -> RunTrace:
    """One full IAL run; never terminates early, violations are recorded."""
    direction = family.direction
    T = schedule.T
    m = family.m
    if predictions.T != T:
        raise ConfigurationError("predictions do not span the horizon")
    pre = precomputed or ial_precompute(family, predictions, config, direction)
    mu = pre.mu
    saddle = pre.saddle

    clean = env.sample_horizon(schedule, env.stream(seed, "demand"))
    observed, w_realized = env.apply_corruption(clean, corruption)
    corrupted_flags = np.zeros(T, dtype=bool)
    if corruption is not None:
        for t in corruption.periods:
            corrupted_flags[t] = not np.array_equal(observed[t], clean[t])

    eps = config.hedge_epsilon or math.sqrt(math.log(max(m, 2)) / T)
    hedge = Hedge(m, eps, reward_scale=_hedge_scale(family, mu, T))
    dual_rng = env.stream(seed, "dual")

    seg_index = np.zeros(T, dtype=int)
    for k, model in enumerate(saddle.segments):
        seg_index[model.start:model.end] = k

    trace = RunTrace(
        T=T, m=m,
        c=np.zeros(T), i_dual=np.full(T, -1, dtype=int),
        corrupted=corrupted_flags,
        x=np.zeros((T, family.second_stage.dim or m)),
        obj_inc=np.zeros(T), g=np.zeros((T, m)), cum_g=np.zeros((T, m)),
        w_realized=w_realized, algorithm="ial", seed=seed,
    )
    cum = np.zeros(m)
    for t in range(T):
        i = hedge.sample(dual_rng)
        s = seg_index[t]
        c_vec = np.array([pre.c_table[s, i]])
        theta = TypeRealization(observed[t])
        lam = np.zeros(m)
        lam[i] = mu
        sol = inner_solve(family, theta, c_vec, lam, direction, horizon=T)

        g_raw = np.asarray(family.g(theta, c_vec, sol.x), dtype=float)
        obj_raw = (family.p_norm(c_vec) + family.f_norm(theta, sol.x)) * family.scale.f_max
        rewards = constraint_feedback(family, theta, c_vec, sol.x, mu, direction,
                                      horizon=T, beta_hat_row=saddle.beta_hat_segments[s])
        hedge.update(rewards)

        cum = cum + g_raw
        trace.c[t] = c_vec[0]
        trace.i_dual[t] = i
        trace.x[t] = sol.x
        trace.obj_inc[t] = obj_raw
        trace.g[t] = g_raw
        trace.cum_g[t] = cum
    return trace
