"""Inner second-stage solves, subgradients, fluid oracle and saddle solver.

Conventions
-----------
The dual vector ``lam`` always lives in the units of the per-period
Lagrangian built on the *normalized* family: the consumption term is
``lam_i * g_i / (T * beta_i)`` which is invariant to the g-scale, so
all price arithmetic below uses raw g units with the effective
per-unit price ``rho_i = lam_i / (T * beta_raw_i)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .problem import ConstraintDirection, TwoStageFamily, TypeRealization

PACKING = ConstraintDirection.PACKING
COVERING = ConstraintDirection.COVERING


class InfeasibleProgramError(RuntimeError):
    """The (SAA of the) fluid program admits no feasible solution."""


class SaddleConvergenceError(RuntimeError):
    """Saddle solver exhausted its iteration budget; carries diagnostics."""

    def __init__(self, message, gap_estimate=None):
        super().__init__(message)
        self.gap_estimate = gap_estimate


@dataclass(frozen=True)
class InnerSolution:
    """Minimizer of the inner problem plus its value and c-sensitivity.

    ``value`` is the inner objective f_n(x) +/- sum rho_i g_i(x) at the
    minimizer; ``c_subgradient`` is a subgradient of that value in the
    first-stage action (the p-term is added by callers).
    """

    x: np.ndarray
    value: float
    c_subgradient: np.ndarray


def _prices(family: TwoStageFamily, lam: np.ndarray, horizon: int) -> np.ndarray:
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (family.m,):
        raise ValueError("dual vector has wrong shape")
    if np.any(lam < -1e-12):
        raise ValueError("dual vector must be nonnegative")
    return np.maximum(lam, 0.0) / (horizon * family.beta)


# ---------------------------------------------------------------------------
# Resource-family exact inner solver (continuous knapsack greedy).


def _resource_allocate(demand: np.ndarray, c: float, rho: np.ndarray,
                       covering: bool):
    """Serve min(c, sum D) splitting across price tiers.

    Packing fills the cheapest tiers first, covering the most rewarding
    first; within a tier of equal price the load is split proportionally
    to the remaining per-resource capacity, which keeps the allocation
    symmetric under relabeling.
    Returns (x, signed value, d value / d c).
    """
    total = float(demand.sum())
    required = min(c, total)
    x = np.zeros_like(demand)
    prices = np.unique(rho)
    order = prices[::-1] if covering else prices
    remaining = required
    stopped_price = 0.0
    for price in order:
        tier = rho == price
        cap = float(demand[tier].sum())
        if cap <= 0.0:
            continue
        take = min(remaining, cap)
        x[tier] = demand[tier] * (take / cap)
        remaining -= take
        if remaining <= 1e-15 and take < cap:
            stopped_price = price
            break
        stopped_price = price
    else:
        stopped_price = order[-1] if len(order) else 0.0
    sign = -1.0 if covering else 1.0
    value = sign * float(rho @ x)
    # Right derivative of the value in c: the next unit (if demand still
    # allows one) lands on the tier the fill stopped in.
    if c < total:
        marginal = _marginal_price(demand, required, rho, covering)
        dvdc = sign * marginal
    else:
        dvdc = 0.0
    return x, value, dvdc


def _marginal_price(demand, served, rho, covering):
    prices = np.unique(rho)
    order = prices[::-1] if covering else prices
    acc = 0.0
    for price in order:
        cap = float(demand[rho == price].sum())
        acc += cap
        if acc > served + 1e-12:
            return float(price)
    return float(order[-1]) if len(order) else 0.0


def resource_inner_solver(family: TwoStageFamily, theta: TypeRealization,
                          c, lam, direction: ConstraintDirection,
                          horizon: int) -> InnerSolution:
    """Exact inner solve for the resource family."""
    demand = theta.payload
    c0 = float(np.asarray(c).reshape(-1)[0])
    rho = _prices(family, lam, horizon)
    x, value, dvdc = _resource_allocate(demand, c0, rho, direction is COVERING)
    return InnerSolution(x=x, value=value, c_subgradient=np.array([dvdc]))


# ---------------------------------------------------------------------------
# Generic fallback inner solver (projected subgradient over K).


def _generic_inner(family: TwoStageFamily, theta: TypeRealization, c, lam,
                   direction: ConstraintDirection, horizon: int,
                   iters: int = 500) -> InnerSolution:
    project = family.second_stage.project
    if project is None:
        raise NotImplementedError(
            f"family {family.name!r} has neither an exact inner solver nor a "
            "projection for the generic one")
    rho = _prices(family, lam, horizon)
    sign = -1.0 if direction is COVERING else 1.0
    c = np.atleast_1d(np.asarray(c, dtype=float))
    dim = family.second_stage.dim or family.m
    x = project(theta, c, np.zeros(dim))

    def objective(pt):
        return family.f_norm(theta, pt) + sign * float(rho @ family.g_norm(theta, c, pt)) * family.scale.g_max

    # g_norm scales by g_max; rho is a raw-unit price, so undo the scale.
    best_x, best_v = x.copy(), objective(x)
    h = 1e-6
    for k in range(1, iters + 1):
        grad = np.zeros_like(x)
        base = objective(x)
        for j in range(len(x)):  # forward differences; dims are tiny here
            xp = x.copy()
            xp[j] += h
            grad[j] = (objective(xp) - base) / h
        x = project(theta, c, x - (0.5 / math.sqrt(k)) * grad)
        v = objective(x)
        if v < best_v - 1e-15:
            best_v, best_x = v, x.copy()
    # Central-difference sensitivity in the first coordinate of c.
    eps = 1e-5
    lo_c = np.maximum(c - eps, family.first_stage_lo)
    hi_c = np.minimum(c + eps, family.first_stage_hi)

    def value_at(cc):
        sol_x = project(theta, cc, best_x)
        return family.f_norm(theta, sol_x) + sign * float(rho @ family.g(theta, cc, sol_x))

    dv = (value_at(hi_c) - value_at(lo_c)) / max(float(np.sum(hi_c - lo_c)), 1e-12)
    return InnerSolution(x=best_x, value=float(best_v), c_subgradient=np.full(c.shape, dv))


def inner_solve(family: TwoStageFamily, theta: TypeRealization, c, lam,
                direction: Optional[ConstraintDirection] = None,
                horizon: int = 1) -> InnerSolution:
    """Minimize f_n(x) +/- sum_i lam_i g_i(c,x)/(T beta_i) over K(theta, c)."""
    direction = direction or family.direction
    if family.inner_solver is not None:
        return family.inner_solver(family, theta, c, lam, direction, horizon)
    return _generic_inner(family, theta, c, lam, direction, horizon)


def single_period_lagrangian(family: TwoStageFamily, theta: TypeRealization,
                             c, lam, direction: Optional[ConstraintDirection] = None,
                             horizon: int = 1) -> float:
    """The per-period Lagrangian L(c, lam, theta) for either direction."""
    direction = direction or family.direction
    lam = np.asarray(lam, dtype=float)
    sol = inner_solve(family, theta, c, lam, direction, horizon)
    dual_term = float(lam.sum()) / horizon
    base = family.p_norm(c) + sol.value
    return base + (dual_term if direction is COVERING else -dual_term)


def lagrangian_c_subgradient(family: TwoStageFamily, theta: TypeRealization,
                             c, lam, direction: Optional[ConstraintDirection] = None,
                             horizon: int = 1) -> np.ndarray:
    """Subgradient of the per-period Lagrangian in the first-stage action."""
    direction = direction or family.direction
    sol = inner_solve(family, theta, c, lam, direction, horizon)
    return family.p_grad_norm(c) + sol.c_subgradient


def constraint_feedback(family: TwoStageFamily, theta: TypeRealization,
                        c, x, mu: float,
                        direction: Optional[ConstraintDirection] = None,
                        horizon: int = 1,
                        beta_hat_row: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-constraint feedback vector handed to the dual learner.

    With ``beta_hat_row`` (raw g units) the per-period offsets of the
    prediction-informed variant replace the flat mu/T term.
    """
    direction = direction or family.direction
    base = family.p_norm(c) + family.f_norm(theta, x)
    ratio = np.asarray(family.g(theta, c, x), dtype=float) / family.beta
    if beta_hat_row is None:
        offset = np.full(family.m, mu / horizon)
    else:
        offset = mu * np.asarray(beta_hat_row, dtype=float) / (horizon * family.beta)
    consume = mu * ratio / horizon
    if direction is COVERING:
        return base + offset - consume
    return base - offset + consume


# ---------------------------------------------------------------------------
# Segment models: SAA of one stationary stretch of the horizon.


@dataclass
class SegmentModel:
    """SAA of one piecewise-stationary segment.

    ``demands`` holds the fast vectorized path for the resource family;
    other families carry the sampled realizations and run the generic
    inner solver point by point.
    """

    start: int
    end: int  # 0-based, half-open
    thetas: list
    demands: Optional[np.ndarray] = None

    @property
    def length(self) -> int:
        return self.end - self.start

    @property
    def n_samples(self) -> int:
        return self.demands.shape[0] if self.demands is not None else len(self.thetas)


def build_segment_models(family: TwoStageFamily, schedule, n_samples: int,
                         rng: np.random.Generator) -> list:
    """Draw per-segment SAA samples for a schedule (one shared pool per
    distinct segment, exploiting piecewise stationarity)."""
    models = []
    for seg in schedule.segments:
        draws = seg.sample(n_samples, rng)
        if family.name == "resource_allocation":
            models.append(SegmentModel(seg.start, seg.end, thetas=[], demands=draws))
        else:
            thetas = [TypeRealization(row) for row in draws]
            models.append(SegmentModel(seg.start, seg.end, thetas=thetas))
    return models


def _segment_value_and_consumption(family, model: SegmentModel, c: float,
                                   rho: np.ndarray, covering: bool):
    """Mean inner value and mean raw consumption vector at budget c."""
    if model.demands is not None:
        x, value = _batch_allocate(model.demands, c, rho, covering)
        return float(value.mean()), x.mean(axis=0)
    values = []
    cons = np.zeros(family.m)
    lam = rho * 0.0  # placeholder, generic path rebuilds lam by price
    for theta in model.thetas:
        sol = _generic_or_exact(family, theta, c, rho, covering)
        values.append(sol.value)
        cons += np.asarray(family.g(theta, np.atleast_1d(c), sol.x), dtype=float)
    n = len(model.thetas)
    return float(np.mean(values)), cons / n


def _generic_or_exact(family, theta, c, rho, covering):
    # Rebuild lam from prices: lam_i = rho_i * T * beta_i with T folded in.
    lam = rho * family.beta  # horizon=1 convention below
    direction = COVERING if covering else PACKING
    return inner_solve(family, theta, np.atleast_1d(c), lam, direction, horizon=1)


def _batch_allocate(demands: np.ndarray, c: float, rho: np.ndarray, covering: bool):
    """Vectorized tier allocation across SAA samples (resource family)."""
    totals = demands.sum(axis=1)
    required = np.minimum(c, totals)
    prices = np.unique(rho)
    seq = prices[::-1] if covering else prices
    x = np.zeros_like(demands)
    remaining = required.copy()
    for price in seq:
        tier = rho == price
        cap = demands[:, tier].sum(axis=1)
        take = np.minimum(remaining, cap)
        safe = np.where(cap > 0, cap, 1.0)
        x[:, tier] = demands[:, tier] * (take / safe)[:, None]
        remaining = remaining - take
    sign = -1.0 if covering else 1.0
    value = sign * (x @ rho)
    return x, value


def _batch_dvalue_dc(demands: np.ndarray, c: float, rho: np.ndarray, covering: bool):
    """Mean right-derivative of the inner value in c across samples."""
    totals = demands.sum(axis=1)
    open_mask = c < totals
    if not np.any(open_mask):
        return 0.0
    prices = np.unique(rho)
    seq = prices[::-1] if covering else prices
    caps = np.stack([demands[:, rho == p].sum(axis=1) for p in seq], axis=1)
    cumcap = np.cumsum(caps, axis=1)
    idx = np.sum(cumcap <= c, axis=1)
    idx = np.minimum(idx, len(seq) - 1)
    marginal = np.asarray(seq)[idx]
    sign = -1.0 if covering else 1.0
    return float(np.mean(np.where(open_mask, sign * marginal, 0.0)))


def segment_expected_lagrangian_argmin(family: TwoStageFamily, model: SegmentModel,
                                       lam: np.ndarray, horizon: int,
                                       direction: ConstraintDirection,
                                       iters: int = 60) -> float:
    """argmin over the (scalar) first-stage box of the segment's expected
    per-period Lagrangian, by bisection on the convex value's derivative."""
    covering = direction is COVERING
    rho = _prices(family, lam, horizon)
    lo = float(family.first_stage_lo[0])
    hi = float(family.first_stage_hi[0])
    pslope = float(family.p_grad_norm(np.array([lo]))[0])  # linear p for builtins

    def derivative(c):
        if model.demands is not None:
            return pslope + _batch_dvalue_dc(model.demands, c, rho, covering)
        h = 1e-5 * max(hi - lo, 1.0)
        v0, _ = _segment_value_and_consumption(family, model, c, rho, covering)
        v1, _ = _segment_value_and_consumption(family, model, min(c + h, hi), rho, covering)
        return pslope + (v1 - v0) / h

    if derivative(lo) >= 0:
        return lo
    if derivative(hi) <= 0:
        return hi
    a, b = lo, hi
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if derivative(mid) >= 0:
            b = mid
        else:
            a = mid
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# Saddle solver (prediction-informed dual) and the fluid oracle.


@dataclass
class SaddleSolution:
    """Solution of max_lam min_c of the SAA'd predicted Lagrangian.

    ``beta_hat`` rows are in raw g units (divide by the family g-scale
    for the normalized view); ``c_star`` holds one scalar per segment.
    """

    lambda_star: np.ndarray
    c_star: np.ndarray
    beta_hat_segments: np.ndarray  # (n_segments, m), raw g units
    saddle_value: float            # raw objective units, whole horizon
    segments: list                 # SegmentModel list (with boundaries)
    horizon: int
    iterations: int
    residual: float

    def beta_hat_at(self, t: int) -> np.ndarray:
        for k, seg in enumerate(self.segments):
            if seg.start <= t < seg.end:
                return self.beta_hat_segments[k]
        raise IndexError(f"period {t} outside horizon")

    def c_star_at(self, t: int) -> float:
        for k, seg in enumerate(self.segments):
            if seg.start <= t < seg.end:
                return float(self.c_star[k])
        raise IndexError(f"period {t} outside horizon")

    def beta_hat_matrix(self) -> np.ndarray:
        out = np.zeros((self.horizon, len(self.beta_hat_segments[0])))
        for k, seg in enumerate(self.segments):
            out[seg.start:seg.end] = self.beta_hat_segments[k]
        return out


def _consumption_profile(family, models, lam, horizon, direction):
    """Horizon-average raw consumption vector at the argmin budgets."""
    covering = direction is COVERING
    rho = _prices(family, lam, horizon)
    total = np.zeros(family.m)
    cstars = []
    for model in models:
        c = segment_expected_lagrangian_argmin(family, model, lam, horizon, direction)
        cstars.append(c)
        _, cons = _segment_value_and_consumption(family, model, c, rho, covering)
        total += model.length * cons
    return total / horizon, np.asarray(cstars)


def solve_saddle(family: TwoStageFamily, schedule, n_samples: int = 1000,
                 max_iters: int = 2000, tol: Optional[float] = None,
                 seed: int = 0, direction: Optional[ConstraintDirection] = None,
                 rng: Optional[np.random.Generator] = None) -> SaddleSolution:
    """Solve the prediction-informed saddle problem on an SAA.

    Projected supergradient ascent in the dual with Polyak averaging,
    followed by a coordinatewise equilibrium polish that drives the
    active constraints' expected consumption onto their targets; this
    is what makes the complementarity identity hold to fine tolerance.
    """
    direction = direction or family.direction
    covering = direction is COVERING
    T = schedule.T
    if tol is None:
        tol = 1e-3 * T
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5ADD1E)))
    models = build_segment_models(family, schedule, n_samples, rng)
    m = family.m
    lam_cap = 10.0 * T
    beta = family.beta

    iterations = 0

    def consumption(lam):
        nonlocal iterations
        iterations += 1
        return _consumption_profile(family, models, lam, T, direction)

    # Warm start at the scale the complementary prices live on.
    lam = T * family.beta_norm * 0.5
    ascent_steps = min(12, max_iters)
    for k in range(1, ascent_steps + 1):
        cons, _ = consumption(lam)
        grad = cons / beta - 1.0
        if covering:
            grad = -grad
        lam = np.clip(lam + (0.25 * T * family.beta_norm) * grad / math.sqrt(k), 0.0, lam_cap)

    # Coordinatewise polish: packing consumption decreases in the own
    # price, covering increases, so bisection per coordinate converges.
    # Convergence is judged on the dual iterate itself: consumption may
    # jump at the equilibrium price on degenerate (e.g. deterministic)
    # instances, in which case the bisected price is still exact.
    sweeps = 0
    moved = np.inf
    prev = None
    while iterations < max_iters and sweeps < 40:
        sweeps += 1
        for i in range(m):
            lam = _polish_coordinate(family, models, lam, i, T, direction,
                                     consumption, lam_cap)
        if prev is not None:
            moved = float(np.max(np.abs(lam - prev)))
            if moved <= 1e-9 * (1.0 + float(np.max(lam))):
                break
        prev = lam.copy()

    cons, cstars = consumption(lam)
    if covering:
        # Unreachable targets: even maximal prices cannot lift consumption.
        short = cons < beta - 1e-6
        if np.any(short & (lam >= lam_cap * (1.0 - 1e-9))):
            raise InfeasibleProgramError(
                f"covering targets unreachable: consumption {cons} vs beta {beta}")

    if moved > 1e-6 * (1.0 + float(np.max(lam))) and sweeps >= 40:
        raise SaddleConvergenceError(
            f"saddle polish still moving after {sweeps} sweeps "
            f"(last move {moved:.3g})", gap_estimate=moved)

    # Primal selection.  When several constraints bind, their polished
    # prices tie and the greedy's argmin face is degenerate: the raw
    # tie-broken allocation is not the complementary one.  The saddle's
    # optimality conditions guarantee the face contains a selection with
    # expected consumption exactly beta on every active constraint, so
    # report that selection: budgets are re-rooted so the total expected
    # consumption matches the active targets plus the honest slack
    # consumption, and active beta_hat rows are pinned to their targets.
    is_active = lam > 1e-9 * T
    rho = _prices(family, lam, T)
    beta_hat = np.zeros((len(models), m))
    value_n = 0.0
    residual = 0.0
    for k, model in enumerate(models):
        if np.any(is_active):
            c = _complementary_budget(family, model, lam, T, direction, is_active)
            cstars[k] = c
        c = float(cstars[k])
        val, consv = _segment_value_and_consumption(family, model, c, rho, covering)
        beta_hat[k] = np.where(is_active, beta, consv)
        gap = abs(float(np.sum(consv)) - float(np.sum(beta_hat[k])))
        residual = max(residual, gap / max(float(np.sum(beta)), 1e-12))
        dual_term = float(lam.sum()) / T
        per_period = family.p_norm(np.array([c])) + val + (dual_term if covering else -dual_term)
        value_n += model.length * per_period
    return SaddleSolution(
        lambda_star=lam,
        c_star=cstars,
        beta_hat_segments=beta_hat,
        saddle_value=value_n * family.scale.f_max,
        segments=models,
        horizon=T,
        iterations=iterations,
        residual=residual,
    )


def _complementary_budget(family, model, lam, T, direction, is_active,
                          iters: int = 60) -> float:
    """Segment budget of the complementary primal selection.

    Total expected consumption is allocation-invariant, so the budget is
    the root (in c) of total consumption = active targets + the slack
    constraints' consumption under the greedy at the polished prices.
    """
    covering = direction is COVERING
    rho = _prices(family, lam, T)
    lo = float(family.first_stage_lo[0])
    hi = float(family.first_stage_hi[0])

    def gap(c):
        _, cons = _segment_value_and_consumption(family, model, c, rho, covering)
        target = float(np.sum(np.where(is_active, family.beta, cons)))
        return float(np.sum(cons)) - target

    if gap(hi) <= 0:
        return hi
    if gap(lo) >= 0:
        return lo
    a, b = lo, hi
    for _ in range(iters):
        mid = 0.5 * (a + b)
        if gap(mid) >= 0:
            b = mid
        else:
            a = mid
    return 0.5 * (a + b)


def _polish_coordinate(family, models, lam, i, T, direction, consumption, lam_cap):
    covering = direction is COVERING
    lam = lam.copy()
    beta_i = family.beta[i]

    def cons_i(v):
        lam[i] = v
        c, _ = consumption(lam)
        return c[i]

    at_zero = cons_i(0.0)
    if (not covering and at_zero <= beta_i) or (covering and at_zero >= beta_i):
        lam[i] = 0.0
        return lam
    lo, hi = 0.0, lam_cap
    for _ in range(48):
        mid = 0.5 * (lo + hi)
        c_mid = cons_i(mid)
        too_much = c_mid > beta_i
        # Packing: raising the price lowers own consumption.
        if too_much == (not covering):
            lo = mid
        else:
            hi = mid
    lam[i] = 0.5 * (lo + hi)
    return lam


@dataclass(frozen=True)
class FluidSolution:
    """Fluid relaxation value (a lower bound on the optimal policy) and
    the dual estimate used to size scaling factors."""

    opt_value: float          # raw objective units over the horizon
    dual_estimate: np.ndarray
    c_per_segment: np.ndarray
    residual: float


def fluid_opt(family: TwoStageFamily, schedule, n_samples: int = 1000,
              direction: Optional[ConstraintDirection] = None,
              seed: int = 0) -> FluidSolution:
    """Sample-average fluid oracle: per-segment first-stage marginals,
    horizon-averaged constraints.  Returns the dual (lower-bound) value,
    which coincides with the fluid optimum in the convex regime."""
    sol = solve_saddle(family, schedule, n_samples=n_samples, seed=seed,
                       direction=direction)
    return FluidSolution(
        opt_value=sol.saddle_value,
        dual_estimate=sol.lambda_star,
        c_per_segment=sol.c_star,
        residual=sol.residual,
    )
