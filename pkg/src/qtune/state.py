"""Standardized state vectors and the scalar reward.

Every run's statistics are expressed relative to a reference baseline (the
first, vanilla-configuration run): each performance variable contributes a
fractional-improvement feature for its mean and its max, so features are
scale-free and the baseline run itself maps to the zero vector.  The process
count enters as one extra normalized feature.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .variables import PerformanceStats, Profile

STANDARDIZE_EPS = 1e-9
NPROCS_LOG_SCALE = 16  # log2(nprocs)/16 stays in [0, 1] up to 65536 processes
REWARD_FLOOR = -10.0
REWARD_CEIL = 1.0


class MissingBaselineError(RuntimeError):
    """Raised when standardization is requested before a baseline exists."""

    def __init__(self):
        super().__init__(
            "no reference baseline recorded; run the application once with "
            "AITUNING_FIRST_RUN=1 to capture it"
        )


@dataclass
class ReferenceBaseline:
    """First-run statistics used to standardize every later run."""

    stats: dict[str, PerformanceStats]
    nprocs_ref: int

    def to_jsonable(self) -> dict:
        return {
            "nprocs_ref": self.nprocs_ref,
            "stats": {k: v.to_jsonable() for k, v in self.stats.items()},
        }

    @classmethod
    def from_jsonable(cls, d: dict) -> "ReferenceBaseline":
        return cls(
            stats={k: PerformanceStats.from_jsonable(v) for k, v in d["stats"].items()},
            nprocs_ref=int(d["nprocs_ref"]),
        )


@dataclass
class StateVector:
    features: np.ndarray

    @property
    def dimension(self) -> int:
        return int(self.features.shape[0])


@dataclass
class Reward:
    value: float


def relativize(baseline_value: float, current_value: float) -> float:
    """Difference from the reference run; positive means improvement for
    time-like metrics."""
    return baseline_value - current_value


def _fractional(baseline_value: float | None, current_value: float | None) -> float:
    if baseline_value is None or current_value is None:
        return 0.0
    denom = max(abs(baseline_value), STANDARDIZE_EPS)
    return relativize(baseline_value, current_value) / denom


def state_dimension(profile: Profile) -> int:
    return 2 * len(profile.performance) + 1


def build_state(
    profile: Profile,
    stats: dict[str, PerformanceStats],
    nprocs: int,
    baseline: ReferenceBaseline | None,
) -> StateVector:
    """Assemble the fixed-order feature vector for one run.

    Per performance variable (profile order): fractional improvement of the
    mean, then of the max.  A variable absent from this run or from the
    baseline (count 0) contributes 0 for both.  The final feature is
    log2(nprocs) / 16.
    """
    if baseline is None:
        raise MissingBaselineError()
    features = np.empty(state_dimension(profile), dtype=np.float64)
    i = 0
    for spec in profile.performance:
        base = baseline.stats.get(spec.name)
        cur = stats.get(spec.name)
        if base is None or cur is None or base.count == 0 or cur.count == 0:
            features[i] = 0.0
            features[i + 1] = 0.0
        else:
            features[i] = _fractional(base.mean, cur.mean)
            features[i + 1] = _fractional(base.max, cur.max)
        i += 2
    features[i] = math.log2(nprocs) / NPROCS_LOG_SCALE
    if not np.all(np.isfinite(features)):
        raise ValueError("state vector contains non-finite features")
    return StateVector(features)


def compute_reward(baseline_total: float, current_total: float) -> Reward:
    """Fractional improvement of total time vs the reference run, clamped."""
    if baseline_total <= 0:
        raise ValueError(f"baseline total time must be positive, got {baseline_total}")
    raw = (baseline_total - current_total) / baseline_total
    return Reward(min(REWARD_CEIL, max(REWARD_FLOOR, raw)))
