"""Environment generation: demand schedules, corruption, predictions.

Schedules are piecewise stationary: a partition of the horizon into
segments, each carrying a zero-clamped normal distribution over the
type payload.  All sampling is driven by named, seeded streams so that
demand, corruption and learner randomness never share a generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .problem import TypeRealization

# Purpose tags for the named RNG streams of one run.
STREAMS = {"demand": 1, "corruption": 2, "dual": 3, "primal": 4, "saa": 5}


def stream(seed: int, purpose: str) -> np.random.Generator:
    """Independent generator for one (seed, purpose) pair."""
    return np.random.default_rng(np.random.SeedSequence((int(seed), STREAMS[purpose])))


def clamped_normal_mean(mean: float, std: float) -> float:
    """E[max(0, N(mean, std^2))], the effective demand mean after clamping."""
    if std == 0.0:
        return max(0.0, mean)
    z = mean / std
    phi = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    cdf = 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))
    return mean * cdf + std * phi


@dataclass(frozen=True)
class Segment:
    """One stationary stretch: periods [start, end) draw i.i.d. payloads
    from a normal clamped at zero, coordinatewise."""

    start: int
    end: int
    mean: np.ndarray
    std: float

    def __post_init__(self):
        object.__setattr__(self, "mean", np.atleast_1d(np.asarray(self.mean, dtype=float)))
        if self.end <= self.start:
            raise ValueError("empty segment")
        if self.std < 0:
            raise ValueError("negative std")

    @property
    def length(self) -> int:
        return self.end - self.start

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.std == 0.0:
            return np.tile(np.maximum(self.mean, 0.0), (n, 1))
        draws = rng.normal(self.mean, self.std, size=(n, self.mean.size))
        return np.maximum(draws, 0.0)

    def clamped_means(self) -> np.ndarray:
        return np.array([clamped_normal_mean(m, self.std) for m in self.mean])


@dataclass(frozen=True)
class EnvironmentSchedule:
    """Segments partitioning [0, T) without gaps or overlaps."""

    T: int
    segments: tuple

    def __post_init__(self):
        segs = tuple(sorted(self.segments, key=lambda s: s.start))
        object.__setattr__(self, "segments", segs)
        cursor = 0
        for seg in segs:
            if seg.start != cursor:
                raise ValueError(f"segment gap/overlap at period {cursor}")
            cursor = seg.end
        if cursor != self.T:
            raise ValueError("segments do not cover the horizon")

    @property
    def dim(self) -> int:
        return self.segments[0].mean.size

    def segment_at(self, t: int) -> Segment:
        for seg in self.segments:
            if seg.start <= t < seg.end:
                return seg
        raise IndexError(f"period {t} outside horizon")


def stationary_schedule(T: int, mean, std: float) -> EnvironmentSchedule:
    return EnvironmentSchedule(T, (Segment(0, T, np.asarray(mean, float), std),))


def piecewise_schedule(T: int, boundaries: Sequence[float], means: Sequence, std: float) -> EnvironmentSchedule:
    """Build segments from fractional boundaries, e.g. [0, .5, 1]."""
    if len(means) != len(boundaries) - 1:
        raise ValueError("need one mean per interval")
    cuts = [int(round(b * T)) for b in boundaries]
    segs = [Segment(cuts[i], cuts[i + 1], np.asarray(means[i], float), std)
            for i in range(len(means))]
    return EnvironmentSchedule(T, tuple(segs))


# The four demand patterns of the resource-allocation experiments.
EXPERIMENT_K_PATTERNS = {
    "a": [2],
    "b": [1, 3],
    "c": [3, 1],
    "d": [1, 2, 3, 2, 1],
}
CASE_LABELS = {"a": "stationary", "b": "nonstat-1", "c": "nonstat-2", "d": "nonstat-3"}


def experiment_schedule(case: str, T: int, n_resources: int = 4,
                        mu0: float = 5.0, sigma0: float = 10.0 / 3.0) -> EnvironmentSchedule:
    ks = EXPERIMENT_K_PATTERNS[case]
    bounds = np.linspace(0.0, 1.0, len(ks) + 1)
    means = [np.full(n_resources, k * mu0) for k in ks]
    return piecewise_schedule(T, bounds, means, sigma0)


def sample_horizon(schedule: EnvironmentSchedule, seed_or_rng) -> np.ndarray:
    """Independent draws for every period; shape (T, dim)."""
    rng = seed_or_rng if isinstance(seed_or_rng, np.random.Generator) \
        else stream(seed_or_rng, "demand")
    out = np.empty((schedule.T, schedule.dim))
    for seg in schedule.segments:
        out[seg.start:seg.end] = seg.sample(seg.length, rng)
    return out


# ---------------------------------------------------------------------------
# Adversarial corruption.


@dataclass(frozen=True)
class CorruptionPlan:
    """Replace the realization of chosen periods.

    ``kind``: 'scale' multiplies the payload by ``factor``; 'shift' adds
    ``delta`` (clamped at zero); 'replace' substitutes ``value``.
    """

    periods: tuple
    kind: str = "scale"
    factor: float = 1.0
    delta: float = 0.0
    value: Optional[np.ndarray] = None

    def corrupt_one(self, payload: np.ndarray) -> np.ndarray:
        if self.kind == "scale":
            return payload * self.factor
        if self.kind == "shift":
            return np.maximum(payload + self.delta, 0.0)
        if self.kind == "replace":
            return np.asarray(self.value, dtype=float).copy()
        raise ValueError(f"unknown corruption kind {self.kind!r}")


def apply_corruption(realizations: np.ndarray, plan: Optional[CorruptionPlan]):
    """Return (corrupted copy, realized corruption count W)."""
    if plan is None:
        return realizations.copy(), 0
    corrupted = realizations.copy()
    w = 0
    for t in plan.periods:
        new = plan.corrupt_one(realizations[t])
        if not np.array_equal(new, realizations[t]):
            corrupted[t] = new
            w += 1
    return corrupted, w


# ---------------------------------------------------------------------------
# Predictions and their inaccuracy.


@dataclass(frozen=True)
class PredictionSchedule:
    """A per-period forecast of the environment, same segment structure.

    ``w_total_override`` lets callers supply the cumulative inaccuracy
    directly when the closed form does not apply.
    """

    schedule: EnvironmentSchedule
    w_total_override: Optional[float] = None

    @property
    def T(self) -> int:
        return self.schedule.T

    @property
    def segments(self):
        return self.schedule.segments


def exact_predictions(schedule: EnvironmentSchedule) -> PredictionSchedule:
    return PredictionSchedule(schedule)


def perturbed_predictions(schedule: EnvironmentSchedule, mean_shift) -> PredictionSchedule:
    """Shift every segment mean by ``mean_shift`` (scalar or vector)."""
    segs = tuple(replace(s, mean=s.mean + mean_shift) for s in schedule.segments)
    return PredictionSchedule(EnvironmentSchedule(schedule.T, segs))


class UnsupportedMetricError(ValueError):
    """The closed-form inaccuracy metric does not cover this pair."""


def prediction_inaccuracy(schedule: EnvironmentSchedule,
                          predictions: PredictionSchedule,
                          theta_lipschitz: float = 1.0) -> float:
    """Total inaccuracy W_T of the predictions against the truth.

    Implemented in closed form for location pairs of equal-deviation
    zero-clamped normals: the optimal (quantile) coupling makes the
    per-period transport cost the difference of clamped means, scaled
    by the declared Lipschitz constant of the induced function tuple.
    """
    if predictions.w_total_override is not None:
        return float(predictions.w_total_override)
    total = 0.0
    for t in range(schedule.T):
        true_seg = schedule.segment_at(t)
        pred_seg = predictions.schedule.segment_at(t)
        if true_seg.std != pred_seg.std:
            raise UnsupportedMetricError(
                "closed form needs equal deviations; supply w_total_override")
        shift = np.abs(true_seg.clamped_means() - pred_seg.clamped_means())
        total += theta_lipschitz * float(shift.max())
    return total


# ---------------------------------------------------------------------------
# Lower-bound constructions used as test scenarios.


def two_scenario_schedules(T: int, w_total: float):
    """The two-scenario corruption construction.

    A single-constraint instance with the first stage deactivated; the
    base type has unit reward slope, and after the midpoint the slope is
    shifted up (scenario one) or down (scenario two) by w_total / T.
    The two scenarios are indistinguishable before the midpoint yet any
    policy loses order w_total on at least one of them.
    """
    if T % 2:
        raise ValueError("construction needs an even horizon")
    w = w_total / T
    half = T // 2
    base = Segment(0, half, np.array([1.0]), 0.0)
    up = Segment(half, T, np.array([1.0 + w]), 0.0)
    down = Segment(half, T, np.array([1.0 - w]), 0.0)
    scenario_up = EnvironmentSchedule(T, (base, up))
    scenario_down = EnvironmentSchedule(T, (base, down))
    return scenario_up, scenario_down
