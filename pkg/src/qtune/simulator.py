"""Synthetic plants with known optima, plus full closed-loop campaigns.

A plant maps a control setting to a deterministic total time (separable
quadratic bowl over the step lattice; binary variables contribute an
indicator penalty) and derives secondary performance variables as fixed
monotone multiples of it.  Evaluation adds multiplicative Gaussian noise to
every reported sample, emulating run-to-run variability.

Campaigns drive the exact same code paths as the CLI: init a store, record
the baseline episode, then repeatedly export settings → evaluate → complete
run, and finally compute the ensemble recommendation.
"""

from __future__ import annotations

import itertools
import json
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ensemble import DEFAULT_MIN_RUNS, DEFAULT_TOLERANCE, Recommendation, recommend
from .store import (
    RunRecord,
    TunerConfig,
    complete_run,
    export_settings,
    init_store,
    parse_report,
    record_first_run,
    stats_from_samples,
)
from .variables import (
    BINARY,
    ControlSetting,
    ControlVariableSpec,
    PerformanceVariableSpec,
    Profile,
)

SAMPLES_PER_VARIABLE = 32
SIM_NPROCS = 64
MAX_NOISE_FRACTION = 0.3

# Secondary metrics are monotone functions of total time (times a fixed
# factor) plus independent noise, so state features are realistically
# correlated without adding new degrees of freedom.
SIM_SECONDARY_FACTORS = {
    "unexpected_recvq_length": 2.0,
    "flush_time": 0.2,
    "put_time": 0.1,
}


class PlantError(ValueError):
    """Malformed plant definition."""


def sim_profile(controls: list[ControlVariableSpec], layer: str = "SIM") -> Profile:
    """Standard simulation profile around the given controls."""
    performance = [
        PerformanceVariableSpec(
            "unexpected_recvq_length", "builtin", False, 0.0, 1e9, "count"
        ),
        PerformanceVariableSpec("flush_time", "user-defined", True, 0.0, 1e6, "seconds"),
        PerformanceVariableSpec("put_time", "user-defined", True, 0.0, 1e6, "seconds"),
        PerformanceVariableSpec(
            "total_execution_time", "user-defined", True, 0.0, 1e7, "seconds"
        ),
    ]
    return Profile(
        layer=layer,
        controls=list(controls),
        performance=performance,
        total_time_variable="total_execution_time",
    )


@dataclass
class SyntheticPlant:
    """Response surface with a known optimum and bounded Gaussian noise."""

    profile: Profile
    optimum: ControlSetting
    curvatures: dict[str, float]
    base_time: float
    noise_fraction: float
    seed: int = 0
    nprocs: int = SIM_NPROCS
    factors: dict[str, float] = field(default_factory=lambda: dict(SIM_SECONDARY_FACTORS))

    def __post_init__(self):
        if not 0.0 <= self.noise_fraction <= MAX_NOISE_FRACTION:
            raise PlantError(
                f"noise_fraction {self.noise_fraction} outside [0, {MAX_NOISE_FRACTION}]"
            )
        if self.base_time <= 0:
            raise PlantError("base_time must be positive")
        for spec in self.profile.controls:
            value = self.optimum.values.get(spec.name)
            if value is None:
                raise PlantError(f"optimum missing control {spec.name!r}")
            if not spec.min <= value <= spec.max:
                raise PlantError(f"optimum {spec.name}={value} out of range")
            if spec.kind != BINARY and (value - spec.default) % spec.step != 0:
                raise PlantError(f"optimum {spec.name}={value} off the step lattice")

    def noiseless_total(self, settings: ControlSetting) -> float:
        """Separable bowl: base_time * (1 + sum_i curvature_i * distance_i^2),
        with binary variables contributing their curvature when flipped."""
        excess = 0.0
        for spec in self.profile.controls:
            curv = self.curvatures.get(spec.name, 0.0)
            c = settings.values[spec.name]
            opt = self.optimum.values[spec.name]
            if spec.kind == BINARY:
                excess += curv * (1.0 if c != opt else 0.0)
            else:
                dist = (c - opt) / spec.step
                excess += curv * dist * dist
        return self.base_time * (1.0 + excess)


def parabola_plant(
    spec: ControlVariableSpec,
    optimum_value: int,
    curvature: float,
    base_time: float,
    noise_fraction: float,
    seed: int = 0,
) -> SyntheticPlant:
    """One-control plant whose total time is a parabola over the lattice."""
    if curvature <= 0:
        raise PlantError("curvature must be positive")
    profile = sim_profile([spec])
    return SyntheticPlant(
        profile=profile,
        optimum=ControlSetting({spec.name: optimum_value}),
        curvatures={spec.name: curvature},
        base_time=base_time,
        noise_fraction=noise_fraction,
        seed=seed,
    )


def multi_var_plant(
    specs: list[ControlVariableSpec],
    optimum: ControlSetting,
    curvatures: dict[str, float],
    base_time: float,
    noise_fraction: float,
    seed: int = 0,
) -> SyntheticPlant:
    """Separable additive plant over several controls."""
    if set(curvatures) != {s.name for s in specs}:
        raise PlantError("curvatures must cover exactly the given controls")
    profile = sim_profile(list(specs))
    return SyntheticPlant(
        profile=profile,
        optimum=optimum.copy(),
        curvatures=dict(curvatures),
        base_time=base_time,
        noise_fraction=noise_fraction,
        seed=seed,
    )


def evaluate(
    plant: SyntheticPlant,
    settings: ControlSetting,
    rng: np.random.Generator,
    samples_per_variable: int = SAMPLES_PER_VARIABLE,
) -> str:
    """Simulate one run at the given settings; returns the report file text.

    Every sample is ``noiseless * (1 + noise_fraction * g)`` with independent
    standard normal g, clamped to stay positive.
    """
    total = plant.noiseless_total(settings)
    lines = [f"nprocs {plant.nprocs}"]
    for spec in plant.profile.performance:
        if spec.name == plant.profile.total_time_variable:
            level = total
        else:
            level = plant.factors.get(spec.name, 0.5) * total
        noise = plant.noise_fraction * rng.standard_normal(samples_per_variable)
        values = level * (1.0 + noise)
        np.maximum(values, 1e-9, out=values)
        for v in values:
            lines.append(f"{spec.name} {float(v)!r}")
    return "\n".join(lines) + "\n"


def exhaustive_optimum(plant: SyntheticPlant, max_points: int = 200_000) -> ControlSetting:
    """Brute-force lattice search for the noiseless minimum (small lattices)."""
    lattices = [(s.name, s.lattice()) for s in plant.profile.controls]
    total_points = 1
    for _, lat in lattices:
        total_points *= len(lat)
    if total_points > max_points:
        raise PlantError(f"lattice too large for exhaustive search ({total_points})")

    best = None
    best_setting = None
    idx = [0] * len(lattices)
    while True:
        setting = ControlSetting(
            {name: lat[i] for (name, lat), i in zip(lattices, idx)}
        )
        t = plant.noiseless_total(setting)
        if best is None or t < best:
            best = t
            best_setting = setting
        k = len(lattices) - 1
        while k >= 0:
            idx[k] += 1
            if idx[k] < len(lattices[k][1]):
                break
            idx[k] = 0
            k -= 1
        if k < 0:
            return best_setting


@dataclass
class CampaignResult:
    seed: int
    episodes: int
    runs: list[RunRecord]
    recommendation: Recommendation
    replay_runs: list[int]
    distance_steps: dict[str, int]
    regret: float
    optimum: ControlSetting
    store_path: str


def run_campaign(
    plant: SyntheticPlant,
    profile: Profile,
    episodes: int,
    seed: int,
    store_dir: str | Path | None = None,
    policy: str = "dqn",
    tolerance: float = DEFAULT_TOLERANCE,
    min_runs: int = DEFAULT_MIN_RUNS,
    config: TunerConfig | None = None,
) -> CampaignResult:
    """Full closed loop: baseline episode, episodes-1 tuned episodes, then
    the ensemble recommendation; fully reproducible from (plant.seed, seed)."""
    if episodes < min_runs + 1:
        raise ValueError(
            f"episodes must be at least {min_runs + 1} (baseline + {min_runs} runs)"
        )
    if {c.name for c in profile.controls} != {c.name for c in plant.profile.controls}:
        raise PlantError("profile controls do not match the plant's controls")

    if config is None:
        config = TunerConfig(seed=seed, policy=policy, fsync=False)
    noise_rng = np.random.default_rng([plant.seed, seed])

    temp_dir = None
    if store_dir is None:
        temp_dir = tempfile.mkdtemp(prefix="qtune-campaign-")
        store_dir = temp_dir

    ticks = itertools.count()

    def clock() -> float:
        # deterministic timestamps keep identically-seeded campaign stores
        # byte-identical
        return float(next(ticks))

    try:
        store = init_store(store_dir, profile, config, clock=clock)

        report = evaluate(plant, export_settings(store), noise_rng)
        nprocs, samples, _ = parse_report(report, profile)
        record_first_run(store, stats_from_samples(samples), nprocs)

        for _ in range(episodes - 1):
            settings = export_settings(store)
            report = evaluate(plant, settings, noise_rng)
            nprocs, samples, _ = parse_report(report, profile)
            complete_run(store, stats_from_samples(samples), nprocs)

        rec = recommend(store.runs, store.baseline, profile, tolerance, min_runs)

        opt_time = plant.noiseless_total(plant.optimum)
        rec_time = plant.noiseless_total(rec.settings)
        regret = (rec_time - opt_time) / opt_time

        distance = {}
        for spec in profile.controls:
            delta = abs(rec.settings.values[spec.name] - plant.optimum.values[spec.name])
            distance[spec.name] = delta if spec.kind == BINARY else delta // spec.step

        return CampaignResult(
            seed=seed,
            episodes=episodes,
            runs=list(store.runs),
            recommendation=rec,
            replay_runs=[ri for ri, _ in store.replay_events],
            distance_steps=distance,
            regret=regret,
            optimum=plant.optimum.copy(),
            store_path=str(store_dir),
        )
    finally:
        if temp_dir is not None:
            shutil.rmtree(temp_dir, ignore_errors=True)


def campaign_csv(results: list[CampaignResult], profile: Profile) -> str:
    """Per-episode table (seed, episode, settings, total time, reward)."""
    controls = [c.name for c in profile.controls]
    header = ["seed", "episode"] + controls + ["total_time", "reward"]
    rows = [",".join(header)]
    for res in results:
        for run in res.runs:
            total = run.total_time(profile)
            cells = [str(res.seed), str(run.run_index)]
            cells += [str(run.settings[name]) for name in controls]
            cells.append("" if total is None else repr(float(total)))
            cells.append("" if run.reward is None else repr(float(run.reward)))
            rows.append(",".join(cells))
    return "\n".join(rows) + "\n"


def load_plant(path: str | Path, profile: Profile) -> SyntheticPlant:
    """Plant definition file: optimum/curvature/noise riding on a profile.

    JSON object with ``base_time``, ``noise_fraction``, ``optimum`` (map,
    missing controls default), ``curvatures`` (map, missing controls 0) and
    optional ``seed``, ``nprocs``, ``factors``.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise PlantError(f"cannot read plant {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise PlantError(f"plant {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise PlantError("plant file: top level must be an object")

    control_names = {c.name for c in profile.controls}
    optimum_raw = raw.get("optimum", {})
    curvatures_raw = raw.get("curvatures", {})
    for source, label in ((optimum_raw, "optimum"), (curvatures_raw, "curvatures")):
        unknown = set(source) - control_names
        if unknown:
            raise PlantError(f"plant {label} names unknown controls: {sorted(unknown)}")

    optimum = profile.defaults()
    optimum.values.update({k: int(v) for k, v in optimum_raw.items()})
    curvatures = {name: float(curvatures_raw.get(name, 0.0)) for name in control_names}

    try:
        plant = SyntheticPlant(
            profile=profile,
            optimum=optimum,
            curvatures=curvatures,
            base_time=float(raw["base_time"]),
            noise_fraction=float(raw["noise_fraction"]),
            seed=int(raw.get("seed", 0)),
            nprocs=int(raw.get("nprocs", SIM_NPROCS)),
        )
    except KeyError as exc:
        raise PlantError(f"plant file missing field {exc}") from exc
    if "factors" in raw:
        plant.factors = {str(k): float(v) for k, v in raw["factors"].items()}
    return plant
