"""Typed model of control and performance variables, and profile files.

A *profile* describes one communication layer: the control variables (knobs)
the tuner may change and the performance variables (metrics) it observes.
Profiles are JSON files, conventionally named ``<layer>.profile``::

    {
      "format": 1,
      "layer": "MPICH",
      "total_time_variable": "total_execution_time",
      "controls": [
        {"name": "ASYNC_PROGRESS", "kind": "binary", "default": 0,
         "min": 0, "max": 1, "env": "MPIR_CVAR_ASYNC_PROGRESS",
         "description": "..."},
        {"name": "CH3_EAGER_MAX_MSG_SIZE", "kind": "stepped-numeric",
         "default": 131072, "min": 0, "max": 1048576, "step": 1024,
         "env": "MPIR_CVAR_CH3_EAGER_MAX_MSG_SIZE", "description": "..."}
      ],
      "performance": [
        {"name": "total_execution_time", "source": "user-defined",
         "relative": true, "valid_min": 0.0, "valid_max": 1e7,
         "unit": "seconds"}
      ]
    }

``kind`` is "binary" (values 0/1) or "stepped-numeric" (integer moved in
fixed steps).  ``env`` is optional and gives the environment-variable name
used in settings export files; it defaults to ``name``.  ``step`` is ignored
for binary controls.  ``total_time_variable`` must name a performance
variable marked relative; its per-run mean drives the reward.
"""

from __future__ import annotations

import json
import math
import statistics
from dataclasses import dataclass, field
from pathlib import Path

BINARY = "binary"
STEPPED = "stepped-numeric"

DECREASE = "decrease"
INCREASE = "increase"
TOGGLE = "toggle"
NONE = "none"

PROFILE_FORMAT = 1


class ProfileError(ValueError):
    """Malformed profile file or violated variable invariant."""


class SampleError(ValueError):
    """A probe sample failed validation (out of range or non-finite)."""


@dataclass(frozen=True)
class ControlVariableSpec:
    name: str
    kind: str
    default: int
    min: int
    max: int
    step: int = 1
    description: str = ""
    env_name: str = ""

    def __post_init__(self):
        if self.kind not in (BINARY, STEPPED):
            raise ProfileError(f"{self.name}: unknown kind {self.kind!r}")
        if not self.min <= self.default <= self.max:
            raise ProfileError(
                f"{self.name}: default {self.default} outside [{self.min}, {self.max}]"
            )
        if self.min > self.max:
            raise ProfileError(f"{self.name}: min {self.min} > max {self.max}")
        if self.kind == BINARY and (self.min, self.max) != (0, 1):
            raise ProfileError(f"{self.name}: binary controls must span exactly [0, 1]")
        if self.kind == STEPPED:
            if self.step < 1:
                raise ProfileError(f"{self.name}: step must be >= 1")
            if self.max - self.min < self.step:
                raise ProfileError(f"{self.name}: range narrower than one step")
        if not self.env_name:
            object.__setattr__(self, "env_name", self.name)

    def lattice(self) -> list[int]:
        """All values reachable from the default by whole steps (ascending)."""
        if self.kind == BINARY:
            return [0, 1]
        down = (self.default - self.min) // self.step
        up = (self.max - self.default) // self.step
        return [self.default + k * self.step for k in range(-down, up + 1)]


@dataclass(frozen=True)
class PerformanceVariableSpec:
    name: str
    source: str  # "builtin" or "user-defined"
    relative: bool
    valid_min: float
    valid_max: float
    unit: str = ""

    def __post_init__(self):
        if self.source not in ("builtin", "user-defined"):
            raise ProfileError(f"{self.name}: unknown source {self.source!r}")
        if not self.valid_min < self.valid_max:
            raise ProfileError(
                f"{self.name}: valid_min {self.valid_min} must be < valid_max {self.valid_max}"
            )


@dataclass
class PerformanceStats:
    """Per-run summary of one variable's validated samples."""

    count: int
    min: float | None = None
    max: float | None = None
    mean: float | None = None
    median: float | None = None

    def to_jsonable(self) -> dict:
        return {
            "count": self.count,
            "min": self.min,
            "max": self.max,
            "mean": self.mean,
            "median": self.median,
        }

    @classmethod
    def from_jsonable(cls, d: dict) -> "PerformanceStats":
        return cls(
            count=int(d["count"]),
            min=d.get("min"),
            max=d.get("max"),
            mean=d.get("mean"),
            median=d.get("median"),
        )


@dataclass
class ControlSetting:
    """Current integer value of every control variable, in profile order."""

    values: dict[str, int] = field(default_factory=dict)

    def copy(self) -> "ControlSetting":
        return ControlSetting(dict(self.values))

    def __getitem__(self, name: str) -> int:
        return self.values[name]


@dataclass
class Profile:
    layer: str
    controls: list[ControlVariableSpec]
    performance: list[PerformanceVariableSpec]
    total_time_variable: str

    def __post_init__(self):
        names = [c.name for c in self.controls]
        if len(set(names)) != len(names):
            raise ProfileError("duplicate control variable names")
        pnames = [p.name for p in self.performance]
        if len(set(pnames)) != len(pnames):
            raise ProfileError("duplicate performance variable names")
        total = self._perf_by_name().get(self.total_time_variable)
        if total is None:
            raise ProfileError(
                f"total_time_variable {self.total_time_variable!r} not in performance list"
            )
        if not total.relative:
            raise ProfileError(f"{total.name}: total-time variable must be marked relative")

    def _perf_by_name(self) -> dict[str, PerformanceVariableSpec]:
        return {p.name: p for p in self.performance}

    def control(self, name: str) -> ControlVariableSpec:
        for c in self.controls:
            if c.name == name:
                return c
        raise ProfileError(f"unknown control variable {name!r}")

    def perf(self, name: str) -> PerformanceVariableSpec:
        spec = self._perf_by_name().get(name)
        if spec is None:
            raise ProfileError(f"unknown performance variable {name!r}")
        return spec

    def defaults(self) -> ControlSetting:
        return ControlSetting({c.name: c.default for c in self.controls})


def validate_setting(profile: Profile, setting: ControlSetting) -> None:
    """Check a setting against the ControlSetting invariants."""
    if set(setting.values) != {c.name for c in profile.controls}:
        raise ProfileError("setting does not cover exactly the profile's controls")
    for spec in profile.controls:
        value = setting.values[spec.name]
        if not spec.min <= value <= spec.max:
            raise ProfileError(
                f"{spec.name}: value {value} outside [{spec.min}, {spec.max}]"
            )
        if spec.kind == STEPPED and (value - spec.default) % spec.step != 0:
            raise ProfileError(
                f"{spec.name}: value {value} off the step lattice (step {spec.step})"
            )


def validate_sample(spec: PerformanceVariableSpec, value: float) -> float:
    """Return the sample unchanged if finite and within the spec's valid range."""
    if not math.isfinite(value):
        raise SampleError(f"{spec.name}: non-finite sample {value!r}")
    if not spec.valid_min <= value <= spec.valid_max:
        raise SampleError(
            f"{spec.name}: sample {value} outside valid range "
            f"[{spec.valid_min}, {spec.valid_max}]"
        )
    return value


def aggregate(samples: list[float]) -> PerformanceStats:
    """Summarize validated samples; an empty list yields count 0, no stats.

    The mean uses exactly-rounded summation so it is permutation invariant.
    """
    if not samples:
        return PerformanceStats(count=0)
    return PerformanceStats(
        count=len(samples),
        min=min(samples),
        max=max(samples),
        mean=math.fsum(samples) / len(samples),
        median=statistics.median(samples),
    )


def apply_change(
    setting: ControlSetting, spec: ControlVariableSpec, direction: str
) -> ControlSetting:
    """Move one control by one whole step (or toggle a binary control).

    Steps that would leave [min, max] do not move at all, so every reachable
    value stays on the default-anchored lattice.  Other variables are
    untouched; a new setting is returned.
    """
    if spec.name not in setting.values:
        raise ProfileError(f"setting has no value for control {spec.name!r}")
    if direction == NONE:
        return setting.copy()
    out = setting.copy()
    value = out.values[spec.name]
    if spec.kind == BINARY:
        out.values[spec.name] = 1 - value
        return out
    if direction == INCREASE:
        candidate = value + spec.step
    elif direction == DECREASE:
        candidate = value - spec.step
    else:
        raise ProfileError(f"{spec.name}: invalid direction {direction!r}")
    if spec.min <= candidate <= spec.max:
        out.values[spec.name] = candidate
    return out


def _control_from_dict(d: dict) -> ControlVariableSpec:
    try:
        return ControlVariableSpec(
            name=str(d["name"]),
            kind=str(d["kind"]),
            default=int(d["default"]),
            min=int(d["min"]),
            max=int(d["max"]),
            step=int(d.get("step", 1)),
            description=str(d.get("description", "")),
            env_name=str(d.get("env", "")),
        )
    except KeyError as exc:
        raise ProfileError(f"control entry missing field {exc}") from exc


def _perf_from_dict(d: dict) -> PerformanceVariableSpec:
    try:
        return PerformanceVariableSpec(
            name=str(d["name"]),
            source=str(d["source"]),
            relative=bool(d["relative"]),
            valid_min=float(d["valid_min"]),
            valid_max=float(d["valid_max"]),
            unit=str(d.get("unit", "")),
        )
    except KeyError as exc:
        raise ProfileError(f"performance entry missing field {exc}") from exc


def profile_from_dict(d: dict) -> Profile:
    fmt = d.get("format", PROFILE_FORMAT)
    if fmt != PROFILE_FORMAT:
        raise ProfileError(f"unsupported profile format {fmt!r}")
    try:
        return Profile(
            layer=str(d["layer"]),
            controls=[_control_from_dict(c) for c in d["controls"]],
            performance=[_perf_from_dict(p) for p in d["performance"]],
            total_time_variable=str(d["total_time_variable"]),
        )
    except KeyError as exc:
        raise ProfileError(f"profile missing field {exc}") from exc


def profile_to_dict(profile: Profile) -> dict:
    return {
        "format": PROFILE_FORMAT,
        "layer": profile.layer,
        "total_time_variable": profile.total_time_variable,
        "controls": [
            {
                "name": c.name,
                "kind": c.kind,
                "default": c.default,
                "min": c.min,
                "max": c.max,
                "step": c.step,
                "description": c.description,
                "env": c.env_name,
            }
            for c in profile.controls
        ],
        "performance": [
            {
                "name": p.name,
                "source": p.source,
                "relative": p.relative,
                "valid_min": p.valid_min,
                "valid_max": p.valid_max,
                "unit": p.unit,
            }
            for p in profile.performance
        ],
    }


def load_profile(path: str | Path) -> Profile:
    """Load and validate a profile file; any defect rejects the whole file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ProfileError(f"cannot read profile {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ProfileError(f"profile {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ProfileError(f"profile {path}: top level must be an object")
    return profile_from_dict(raw)


def save_profile(profile: Profile, path: str | Path) -> None:
    Path(path).write_text(json.dumps(profile_to_dict(profile), indent=2) + "\n")


def bundled_profile_path(layer: str = "mpich") -> Path:
    """Path of a profile shipped with the package."""
    return Path(__file__).parent / "profiles" / f"{layer}.profile"
