"""Problem definitions: two-stage families with long-term constraints.

A family bundles the first-stage cost, the second-stage objective and
constraint functions, the feasible sets of both stages, and the scale
bounds used to map everything onto the unit ranges the learners expect.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class ConstraintDirection(enum.Enum):
    """Orientation of the long-term constraints.

    PACKING requires the horizon average of each constraint function to
    stay below its target; COVERING requires it to stay above.
    """

    PACKING = "packing"
    COVERING = "covering"


class FeasibilityError(ValueError):
    """Raised when a second-stage action violates its feasible set."""


@dataclass(frozen=True)
class TypeRealization:
    """One per-period draw of the uncertain model parameter.

    For the resource family the payload is the demand vector (units of
    demand per resource for that period).
    """

    payload: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "payload", np.asarray(self.payload, dtype=float))


@dataclass(frozen=True)
class ScaleBounds:
    """Declared bounds used for internal normalization.

    ``f_max`` bounds the per-period objective magnitude |p(c) + f(x)|,
    ``g_max`` bounds each constraint function value.  Algorithms work
    with f/f_max and g/g_max so that the unit-range assumptions behind
    the learning-rate defaults hold; metrics are reported unnormalized.
    """

    f_max: float
    g_max: float

    def __post_init__(self):
        if self.f_max <= 0 or self.g_max <= 0:
            raise ValueError("scale bounds must be positive")


@dataclass(frozen=True)
class SecondStageSet:
    """Description of the second-stage feasible set K(theta, c).

    ``residuals(theta, c, x)`` returns an array that is elementwise
    <= 0 exactly when x is feasible.  ``project`` (optional) maps an
    arbitrary point to a nearby feasible one and enables the generic
    inner solver; families with an exact inner solver may omit it.
    """

    residuals: Callable[[TypeRealization, np.ndarray, np.ndarray], np.ndarray]
    project: Optional[Callable[[TypeRealization, np.ndarray, np.ndarray], np.ndarray]] = None
    dim: int = 0


@dataclass(frozen=True)
class TwoStageFamily:
    """A concrete two-stage problem family.

    All callables take raw (unnormalized) arguments and return raw
    values; the ``*_norm`` helpers divide by the declared scale bounds.
    ``beta`` lives in raw g-units and must normalize into (0, 1).
    """

    m: int
    first_stage_lo: np.ndarray
    first_stage_hi: np.ndarray
    beta: np.ndarray
    direction: ConstraintDirection
    p: Callable[[np.ndarray], float]
    p_grad: Callable[[np.ndarray], np.ndarray]
    f: Callable[[TypeRealization, np.ndarray], float]
    g: Callable[[TypeRealization, np.ndarray, np.ndarray], np.ndarray]
    second_stage: SecondStageSet
    scale: ScaleBounds
    # Family-specific exact inner solver, signature matching
    # solvers.inner_solve; installed by builders that know the structure.
    inner_solver: Optional[Callable] = None
    # Lipschitz constant of the induced (f, g) tuple with respect to the
    # type payload, used by the closed-form prediction-inaccuracy metric.
    theta_lipschitz: float = 1.0
    name: str = "family"

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.first_stage_lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.first_stage_hi, dtype=float))
        beta = np.asarray(self.beta, dtype=float)
        object.__setattr__(self, "first_stage_lo", lo)
        object.__setattr__(self, "first_stage_hi", hi)
        object.__setattr__(self, "beta", beta)
        if lo.shape != hi.shape or np.any(lo > hi):
            raise ValueError("invalid first-stage box")
        if np.any(lo > 0) or np.any(hi < 0):
            raise ValueError("first-stage box must contain the null action 0")
        if beta.shape != (self.m,):
            raise ValueError(f"beta must have shape ({self.m},)")
        bnorm = beta / self.scale.g_max
        if np.any(bnorm <= 0) or np.any(bnorm >= 1):
            raise ValueError("normalized beta must lie in (0, 1)")

    # Normalized views used by the algorithms.

    @property
    def beta_norm(self) -> np.ndarray:
        return self.beta / self.scale.g_max

    def p_norm(self, c) -> float:
        return self.p(np.asarray(c, dtype=float)) / self.scale.f_max

    def p_grad_norm(self, c) -> np.ndarray:
        return np.asarray(self.p_grad(np.asarray(c, dtype=float))) / self.scale.f_max

    def f_norm(self, theta, x) -> float:
        return self.f(theta, x) / self.scale.f_max

    def g_norm(self, theta, c, x) -> np.ndarray:
        return np.asarray(self.g(theta, c, x)) / self.scale.g_max

    def project_first_stage(self, c) -> np.ndarray:
        return np.clip(np.asarray(c, dtype=float), self.first_stage_lo, self.first_stage_hi)

    @property
    def first_stage_midpoint(self) -> np.ndarray:
        return 0.5 * (self.first_stage_lo + self.first_stage_hi)

    @property
    def first_stage_diameter(self) -> float:
        return float(np.linalg.norm(self.first_stage_hi - self.first_stage_lo))


def check_second_stage_feasible(family: TwoStageFamily, theta: TypeRealization,
                                c, x, tol: float = 1e-9) -> bool:
    """True iff all defining inequalities of K(theta, c) hold within tol."""
    res = family.second_stage.residuals(theta, np.atleast_1d(np.asarray(c, float)),
                                        np.asarray(x, dtype=float))
    return bool(np.all(np.asarray(res) <= tol))


def evaluate_stage_costs(family: TwoStageFamily, theta: TypeRealization,
                         c, x, tol: float = 1e-9):
    """Evaluate one period: normalized objective increment and g vector.

    Raises :class:`FeasibilityError` naming the violated constraint when
    x is infeasible in K(theta, c) beyond ``tol``.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    x = np.asarray(x, dtype=float)
    if np.any(c < family.first_stage_lo - tol) or np.any(c > family.first_stage_hi + tol):
        raise FeasibilityError(f"first-stage action {c} outside box")
    res = np.asarray(family.second_stage.residuals(theta, c, x))
    worst = int(np.argmax(res))
    if res[worst] > tol:
        raise FeasibilityError(
            f"second-stage constraint {worst} violated by {res[worst]:.3g}")
    obj = family.p_norm(c) + family.f_norm(theta, x)
    return obj, family.g_norm(theta, c, x)


# ---------------------------------------------------------------------------
# Resource allocation family (budget + allocation layers).


@dataclass(frozen=True)
class ResourceAllocationInstance:
    """Parameters of the resource-allocation experiments.

    Each period a scalar budget c is committed, demand D is realized,
    and the allocation x must serve min(c, sum(D)) units in total,
    within per-resource demand caps and the committed budget.  Packing
    runs maximize the total committed budget (p(c) = -c); covering runs
    minimize it (p(c) = +c) subject to service-level targets.
    """

    n_resources: int = 4
    beta: tuple = (0.95, 0.90, 0.85, 0.80)
    budget_cap: float = 10.0
    direction: ConstraintDirection = ConstraintDirection.PACKING
    maximize_budget: Optional[bool] = None  # default: packing yes, covering no

    def wants_max(self) -> bool:
        if self.maximize_budget is None:
            return self.direction is ConstraintDirection.PACKING
        return self.maximize_budget


def _resource_residuals(theta: TypeRealization, c, x):
    d = theta.payload
    c0 = float(np.asarray(c).reshape(-1)[0])
    total = float(np.sum(x))
    required = min(c0, float(np.sum(d)))
    return np.concatenate([
        -x,                                   # x >= 0
        x - d,                                # x <= D
        [required - total],                   # serve at least min(c, sum D)
        [total - c0],                         # within the committed budget
    ])


def resource_allocation_family(instance: ResourceAllocationInstance) -> TwoStageFamily:
    """Build the TwoStageFamily for the resource-allocation experiments."""
    m = instance.n_resources
    beta = np.asarray(instance.beta, dtype=float)
    if beta.shape != (m,):
        raise ValueError("beta length must match n_resources")
    cap = float(instance.budget_cap)
    sign = -1.0 if instance.wants_max() else 1.0

    def p(c):
        return sign * float(np.asarray(c).reshape(-1)[0])

    def p_grad(c):
        return np.array([sign])

    def f(theta, x):
        return 0.0

    def g(theta, c, x):
        return np.asarray(x, dtype=float)

    from .solvers import resource_inner_solver  # deferred: solvers imports problem

    return TwoStageFamily(
        m=m,
        first_stage_lo=np.array([0.0]),
        first_stage_hi=np.array([cap]),
        beta=beta,
        direction=instance.direction,
        p=p,
        p_grad=p_grad,
        f=f,
        g=g,
        second_stage=SecondStageSet(residuals=_resource_residuals, dim=m),
        scale=ScaleBounds(f_max=cap, g_max=cap),
        inner_solver=resource_inner_solver,
        theta_lipschitz=1.0,
        name="resource_allocation",
    )


# ---------------------------------------------------------------------------
# Single-constraint reward collection (first stage deactivated).


def reward_collection_family(beta: float = 0.5, reward_bound: float = 2.0) -> TwoStageFamily:
    """One long-term constraint, x in [0, 1], reward slope as the type.

    The first stage is a singleton {0}; each period the payload s gives
    the second-stage objective -s*x with consumption g = x.  This is the
    family behind the paper-style lower-bound scenarios and a compact
    exercise of the machinery with a nontrivial f.
    """

    def p(c):
        return 0.0

    def p_grad(c):
        return np.array([0.0])

    def f(theta, x):
        return -float(theta.payload[0]) * float(np.asarray(x).reshape(-1)[0])

    def g(theta, c, x):
        return np.array([float(np.asarray(x).reshape(-1)[0])])

    def residuals(theta, c, x):
        xv = float(np.asarray(x).reshape(-1)[0])
        return np.array([-xv, xv - 1.0])

    def project(theta, c, x):
        return np.clip(np.asarray(x, dtype=float), 0.0, 1.0)

    def inner(family, theta, c, lam, direction, horizon):
        from .solvers import InnerSolution
        slope_n = float(theta.payload[0]) / family.scale.f_max
        rho = float(np.asarray(lam).reshape(-1)[0]) / (horizon * family.beta[0])
        sign = -1.0 if direction is ConstraintDirection.COVERING else 1.0
        marginal = -slope_n + sign * rho
        x = 1.0 if marginal < 0 else 0.0
        return InnerSolution(x=np.array([x]), value=marginal * x,
                             c_subgradient=np.array([0.0]))

    return TwoStageFamily(
        m=1,
        first_stage_lo=np.array([0.0]),
        first_stage_hi=np.array([0.0]),
        beta=np.array([beta]),
        direction=ConstraintDirection.PACKING,
        p=p,
        p_grad=p_grad,
        f=f,
        g=g,
        second_stage=SecondStageSet(residuals=residuals, project=project, dim=1),
        scale=ScaleBounds(f_max=reward_bound, g_max=1.0),
        inner_solver=inner,
        theta_lipschitz=1.0,
        name="reward_collection",
    )
