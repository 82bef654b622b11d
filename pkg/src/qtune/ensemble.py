"""Post-exploration inference: distill the run history into one setting.

Runs whose total time was worse than the baseline are discarded; of the rest,
only runs within a tolerance of the best total time are kept (the ensemble).
Each stepped control gets the median of its kept values snapped to the step
lattice; binary controls take a majority vote.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass

from .state import ReferenceBaseline
from .store import RunRecord
from .variables import BINARY, ControlSetting, Profile

DEFAULT_TOLERANCE = 0.05
DEFAULT_MIN_RUNS = 20


class InsufficientRunsError(RuntimeError):
    pass


@dataclass
class Recommendation:
    settings: ControlSetting
    kept_runs: list[int]  # run indices in the ensemble
    baseline_total: float
    best_total: float | None
    fallback_defaults: bool  # True when every run was penalized
    spread: dict[str, tuple[int, int]]  # per-variable (min, max) over kept runs


def _snap_to_lattice(median: float, spec) -> int:
    """Nearest lattice value; half-step ties resolve toward the default."""
    offset = (median - spec.default) / spec.step
    lo = int(offset // 1)
    candidates = [lo, lo + 1]
    best = None
    for k in candidates:
        dist = abs(offset - k)
        if best is None or dist < best[0] - 1e-12 or (
            abs(dist - best[0]) <= 1e-12 and abs(k) < abs(best[1])
        ):
            best = (dist, k)
    value = spec.default + best[1] * spec.step
    return max(spec.min, min(spec.max, value))


def recommend(
    runs: list[RunRecord],
    baseline: ReferenceBaseline,
    profile: Profile,
    tolerance: float = DEFAULT_TOLERANCE,
    min_runs: int = DEFAULT_MIN_RUNS,
) -> Recommendation:
    """Ensemble recommendation over at least ``min_runs`` completed runs."""
    if len(runs) < min_runs:
        raise InsufficientRunsError(
            f"need at least {min_runs} completed runs, have {len(runs)}"
        )
    baseline_total = baseline.stats[profile.total_time_variable].mean
    if baseline_total is None:
        raise ValueError("baseline has no total-time statistics")

    timed = [(r, r.total_time(profile)) for r in runs]
    not_penalized = [(r, t) for r, t in timed if t is not None and t <= baseline_total]
    if not not_penalized:
        return Recommendation(
            settings=profile.defaults(),
            kept_runs=[],
            baseline_total=baseline_total,
            best_total=None,
            fallback_defaults=True,
            spread={},
        )

    best_total = min(t for _, t in not_penalized)
    kept = [(r, t) for r, t in not_penalized if t <= best_total * (1.0 + tolerance)]

    values: dict[str, int] = {}
    spread: dict[str, tuple[int, int]] = {}
    for spec in profile.controls:
        kept_values = [r.settings[spec.name] for r, _ in kept]
        spread[spec.name] = (min(kept_values), max(kept_values))
        if spec.kind == BINARY:
            ones = sum(kept_values)
            zeros = len(kept_values) - ones
            if ones > zeros:
                values[spec.name] = 1
            elif zeros > ones:
                values[spec.name] = 0
            else:
                values[spec.name] = spec.default
        else:
            values[spec.name] = _snap_to_lattice(statistics.median(kept_values), spec)

    return Recommendation(
        settings=ControlSetting(values),
        kept_runs=[r.run_index for r, _ in kept],
        baseline_total=baseline_total,
        best_total=best_total,
        fallback_defaults=False,
        spread=spread,
    )


def report(
    runs: list[RunRecord], recommendation: Recommendation, profile: Profile
) -> str:
    """Human-readable summary of the recommendation."""
    lines = []
    lines.append(f"runs considered:   {len(runs)}")
    lines.append(f"baseline total:    {recommendation.baseline_total:.6g}")
    if recommendation.fallback_defaults:
        lines.append("no run improved on the baseline; returning default settings")
    else:
        lines.append(f"best total:        {recommendation.best_total:.6g}")
        lines.append(f"ensemble size:     {len(recommendation.kept_runs)}")
        lines.append(f"kept run indices:  {recommendation.kept_runs}")
    lines.append("recommended settings:")
    for spec in profile.controls:
        value = recommendation.settings.values[spec.name]
        if recommendation.fallback_defaults:
            lines.append(f"  {spec.name} = {value}")
        else:
            lo, hi = recommendation.spread[spec.name]
            lines.append(f"  {spec.name} = {value}  (kept-run range {lo}..{hi})")
    return "\n".join(lines) + "\n"
