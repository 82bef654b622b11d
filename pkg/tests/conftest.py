from __future__ import annotations

import pytest

from qtune.variables import (
    ControlVariableSpec,
    PerformanceVariableSpec,
    Profile,
    bundled_profile_path,
    load_profile,
)


@pytest.fixture(scope="session")
def mpich_profile() -> Profile:
    return load_profile(bundled_profile_path())


@pytest.fixture()
def mini_profile() -> Profile:
    """Small profile for fast protocol tests: one knob, one flag, two metrics."""
    return Profile(
        layer="MINI",
        controls=[
            ControlVariableSpec("KNOB", "stepped-numeric", 4096, 0, 8192, 1024),
            ControlVariableSpec("FLAG", "binary", 0, 0, 1),
        ],
        performance=[
            PerformanceVariableSpec("queue_len", "builtin", False, 0.0, 1e9, "count"),
            PerformanceVariableSpec(
                "total_execution_time", "user-defined", True, 0.0, 1e7, "seconds"
            ),
        ],
        total_time_variable="total_execution_time",
    )


@pytest.fixture()
def four_two_profile() -> Profile:
    """Four flags plus two knobs."""
    controls = [
        ControlVariableSpec(f"FLAG_{i}", "binary", 0, 0, 1) for i in range(4)
    ] + [
        ControlVariableSpec("KNOB_A", "stepped-numeric", 1000, 0, 2000, 100),
        ControlVariableSpec("KNOB_B", "stepped-numeric", 512, 0, 4096, 512),
    ]
    return Profile(
        layer="SYNTH",
        controls=controls,
        performance=[
            PerformanceVariableSpec(
                "total_execution_time", "user-defined", True, 0.0, 1e7, "seconds"
            ),
        ],
        total_time_variable="total_execution_time",
    )


def report_text(profile: Profile, nprocs: int, means: dict[str, float], spread: float = 0.0) -> str:
    """Render a report with a few samples per variable around each mean."""
    lines = [f"nprocs {nprocs}"]
    offsets = (-spread, 0.0, spread, 0.0)
    for spec in profile.performance:
        mean = means[spec.name]
        for off in offsets:
            lines.append(f"{spec.name} {mean + off!r}")
    return "\n".join(lines) + "\n"
