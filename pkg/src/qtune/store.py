"""Durable experience store: one tuning session across many process runs.

The store is a directory of plain JSON files so it can be inspected with
standard tools while debugging on a cluster::

    store/
      meta.json        format number, profile hash, creation time
      profile.json     immutable copy of the profile used at init
      config.json      hyperparameters and seed
      CURRENT          name of the committed generation directory
      gen-000042/      baseline.json, runs.jsonl, weights.json, rng.json,
                       buffer.jsonl, control.json
      .lock            transient; present only while a mutator is running

Every mutation writes a complete new generation directory and then atomically
renames CURRENT over the old pointer, so a killed process leaves either the
old state or the new state, never a torn mixture.  A lock file (containing
the holder's pid) makes concurrent mutators fail fast; locks owned by dead
processes are broken automatically.

External interfaces
-------------------
Settings export file: one ``NAME=VALUE`` line per control variable, using the
profile's env names, suitable for sourcing as environment variables before
the communication layer initializes.

Performance report file (input for each completed run)::

    nprocs 256
    total_execution_time 104.2
    flush_time 0.0041
    ...

One ``variable_name value`` pair per line, whitespace-tolerant, ``#`` starts
a comment.  Unknown variable names reject the whole report; out-of-range or
non-finite values are dropped and counted, not fatal.

The environment variable AITUNING_FIRST_RUN=1 marks the baseline run.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shutil
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import agent as agent_mod
from .agent import ActionSpace, QNetwork, ReplayBuffer, Transition, enumerate_actions
from .state import (
    MissingBaselineError,
    ReferenceBaseline,
    build_state,
    compute_reward,
    state_dimension,
)
from .variables import (
    ControlSetting,
    PerformanceStats,
    Profile,
    SampleError,
    aggregate,
    apply_change,
    profile_from_dict,
    profile_to_dict,
    validate_sample,
)

log = logging.getLogger(__name__)

STORE_FORMAT = 1
FIRST_RUN_ENV = "AITUNING_FIRST_RUN"


class StoreError(RuntimeError):
    """Store/protocol errors (missing store, lock conflicts, corruption...)."""


class StoreExistsError(StoreError):
    pass


class StoreNotFoundError(StoreError):
    pass


class StoreCorruptError(StoreError):
    pass


class StoreLockedError(StoreError):
    pass


class BaselineExistsError(StoreError):
    pass


class ReportError(ValueError):
    """Malformed performance report file."""


@dataclass
class TunerConfig:
    # alpha and epsilon_end were set from closed-loop simulation campaigns:
    # smaller alpha learns too slowly within a 200-run session and a low
    # epsilon floor lets the policy park on near-miss settings, starving the
    # ensemble of diverse near-optimal samples.
    seed: int = 0
    gamma: float = 0.9
    alpha: float = 0.05
    hidden: tuple[int, ...] = (32, 32)
    batch_size: int = 64
    replay_every: int = agent_mod.REPLAY_EVERY
    epsilon_start: float = 1.0
    epsilon_end: float = 0.35
    epsilon_decay_runs: int = 20
    policy: str = "dqn"  # "random" gives the no-learning baseline
    fsync: bool = True

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.policy not in ("dqn", "random"):
            raise ValueError(f"unknown policy {self.policy!r}")

    def to_jsonable(self) -> dict:
        return {
            "seed": self.seed,
            "gamma": self.gamma,
            "alpha": self.alpha,
            "hidden": list(self.hidden),
            "batch_size": self.batch_size,
            "replay_every": self.replay_every,
            "epsilon_start": self.epsilon_start,
            "epsilon_end": self.epsilon_end,
            "epsilon_decay_runs": self.epsilon_decay_runs,
            "policy": self.policy,
            "fsync": self.fsync,
        }

    @classmethod
    def from_jsonable(cls, d: dict) -> "TunerConfig":
        return cls(
            seed=int(d["seed"]),
            gamma=float(d["gamma"]),
            alpha=float(d["alpha"]),
            hidden=tuple(d["hidden"]),
            batch_size=int(d["batch_size"]),
            replay_every=int(d["replay_every"]),
            epsilon_start=float(d["epsilon_start"]),
            epsilon_end=float(d["epsilon_end"]),
            epsilon_decay_runs=int(d["epsilon_decay_runs"]),
            policy=str(d.get("policy", "dqn")),
            fsync=bool(d.get("fsync", True)),
        )


@dataclass
class RunRecord:
    run_index: int
    settings: dict[str, int]
    stats: dict[str, PerformanceStats]
    nprocs: int
    reward: float | None
    action_taken: int | None
    timestamp: float

    def to_jsonable(self) -> dict:
        return {
            "run": self.run_index,
            "settings": self.settings,
            "stats": {k: v.to_jsonable() for k, v in self.stats.items()},
            "nprocs": self.nprocs,
            "reward": self.reward,
            "action": self.action_taken,
            "ts": self.timestamp,
        }

    @classmethod
    def from_jsonable(cls, d: dict) -> "RunRecord":
        return cls(
            run_index=int(d["run"]),
            settings={k: int(v) for k, v in d["settings"].items()},
            stats={k: PerformanceStats.from_jsonable(v) for k, v in d["stats"].items()},
            nprocs=int(d["nprocs"]),
            reward=d.get("reward"),
            action_taken=d.get("action"),
            timestamp=float(d.get("ts", 0.0)),
        )

    def total_time(self, profile: Profile) -> float | None:
        st = self.stats.get(profile.total_time_variable)
        if st is None or st.count == 0:
            return None
        return st.mean


# ---------------------------------------------------------------------------
# report parsing


def parse_report(
    text: str, profile: Profile
) -> tuple[int, dict[str, list[float]], dict[str, int]]:
    """Parse a performance report into validated samples per variable.

    Returns (nprocs, samples, rejected_counts).  Unknown variable names and a
    missing/invalid header are fatal; individually invalid samples are
    dropped and counted.
    """
    known = {p.name: p for p in profile.performance}
    samples: dict[str, list[float]] = {name: [] for name in known}
    rejected: dict[str, int] = {}
    nprocs: int | None = None
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ReportError(f"line {lineno}: expected 'name value', got {raw_line!r}")
        name, value_text = parts
        if nprocs is None:
            if name != "nprocs":
                raise ReportError(
                    f"line {lineno}: report must start with an 'nprocs N' header"
                )
            try:
                nprocs = int(value_text)
            except ValueError as exc:
                raise ReportError(f"line {lineno}: bad nprocs {value_text!r}") from exc
            if nprocs < 1:
                raise ReportError(f"line {lineno}: nprocs must be positive")
            continue
        spec = known.get(name)
        if spec is None:
            raise ReportError(f"line {lineno}: unknown performance variable {name!r}")
        try:
            value = float(value_text)
        except ValueError as exc:
            raise ReportError(f"line {lineno}: bad value {value_text!r}") from exc
        try:
            samples[name].append(validate_sample(spec, value))
        except SampleError:
            rejected[name] = rejected.get(name, 0) + 1
    if nprocs is None:
        raise ReportError("empty report: missing 'nprocs N' header")
    return nprocs, samples, rejected


def stats_from_samples(samples: dict[str, list[float]]) -> dict[str, PerformanceStats]:
    return {name: aggregate(vals) for name, vals in samples.items()}


def settings_lines(profile: Profile, setting: ControlSetting) -> str:
    """Render a setting as sourceable NAME=VALUE lines (profile env names)."""
    lines = [f"{c.env_name}={setting.values[c.name]}" for c in profile.controls]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# locking


class StoreLock:
    """Exclusive mutation lock; breaks locks held by dead processes."""

    def __init__(self, directory: Path):
        self.path = Path(directory) / ".lock"
        self._fd: int | None = None

    def acquire(self) -> None:
        for attempt in (0, 1):
            try:
                fd = os.open(str(self.path), os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
                os.write(fd, str(os.getpid()).encode())
                self._fd = fd
                return
            except FileExistsError:
                if attempt == 1 or not self._holder_dead():
                    raise StoreLockedError(
                        f"store is locked by another process ({self.path})"
                    )
                self.path.unlink(missing_ok=True)

    def _holder_dead(self) -> bool:
        try:
            pid = int(self.path.read_text().strip())
        except (OSError, ValueError):
            return True  # unreadable/empty lock: treat as stale
        try:
            os.kill(pid, 0)
        except ProcessLookupError:
            return True
        except PermissionError:
            return False
        return False

    def release(self) -> None:
        if self._fd is not None:
            os.close(self._fd)
            self._fd = None
            self.path.unlink(missing_ok=True)

    def __enter__(self) -> "StoreLock":
        self.acquire()
        return self

    def __exit__(self, *exc) -> None:
        self.release()


# ---------------------------------------------------------------------------
# the store


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def _dumps_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class ExperienceStore:
    """In-memory view of one tuning session, persisted per mutation."""

    def __init__(
        self,
        path: Path,
        profile: Profile,
        config: TunerConfig,
        clock: Callable[[], float] | None = None,
    ):
        self.path = Path(path)
        self.profile = profile
        self.config = config
        self.clock = clock or time.time
        self.action_space: ActionSpace = enumerate_actions(profile)
        self.baseline: ReferenceBaseline | None = None
        self.runs: list[RunRecord] = []
        self.buffer = ReplayBuffer()
        self.rng = np.random.default_rng(config.seed)
        self.net = QNetwork.initialize(
            [state_dimension(profile), *config.hidden, self.action_space.size],
            self.rng,
            alpha=config.alpha,
            gamma=config.gamma,
        )
        self.current_settings: ControlSetting = profile.defaults()
        self.pending: tuple[np.ndarray, int] | None = None
        self.replay_events: list[tuple[int, int]] = []
        self.generation = 0
        self.persist_hook: Callable[[int, str], None] | None = None
        self._hook_step = 0

    # -- persistence -------------------------------------------------------

    def _hook(self, label: str) -> None:
        if self.persist_hook is not None:
            self._hook_step += 1
            self.persist_hook(self._hook_step, label)

    def _write(self, path: Path, content: str) -> None:
        with open(path, "w") as fh:
            fh.write(content)
            if self.config.fsync:
                fh.flush()
                os.fsync(fh.fileno())

    def commit(self) -> None:
        """Persist the full mutable state as a new generation, atomically."""
        gen = self.generation + 1
        gen_dir = self.path / f"gen-{gen:06d}"
        if gen_dir.exists():
            shutil.rmtree(gen_dir)  # leftover from an interrupted commit
        gen_dir.mkdir()

        baseline = None if self.baseline is None else self.baseline.to_jsonable()
        self._write(gen_dir / "baseline.json", _dumps(baseline))
        self._hook("baseline")

        runs_text = "".join(_dumps_line(r.to_jsonable()) + "\n" for r in self.runs)
        self._write(gen_dir / "runs.jsonl", runs_text)
        self._hook("runs")

        self._write(gen_dir / "weights.json", _dumps(self.net.to_jsonable()))
        self._hook("weights")

        self._write(gen_dir / "rng.json", _dumps(self.rng.bit_generator.state))
        self._hook("rng")

        buffer_text = "".join(
            _dumps_line(t.to_jsonable()) + "\n" for t in self.buffer.transitions
        )
        self._write(gen_dir / "buffer.jsonl", buffer_text)
        self._hook("buffer")

        control = {
            "current_settings": self.current_settings.values,
            "pending": None
            if self.pending is None
            else {"state": self.pending[0].tolist(), "action": self.pending[1]},
            "replay_events": [list(ev) for ev in self.replay_events],
        }
        self._write(gen_dir / "control.json", _dumps(control))
        self._hook("control")

        # Commit point: CURRENT flips to the new generation or not at all.
        current_tmp = self.path / "CURRENT.tmp"
        self._write(current_tmp, gen_dir.name + "\n")
        self._hook("pointer-staged")
        os.replace(current_tmp, self.path / "CURRENT")
        self._hook("pointer-swapped")

        self.generation = gen
        for stale in self.path.glob("gen-*"):
            if stale.name != gen_dir.name:
                shutil.rmtree(stale, ignore_errors=True)
        self._hook("gc")

    # -- derived views -----------------------------------------------------

    def run_count(self) -> int:
        return len(self.runs)

    def next_epsilon(self) -> float:
        return agent_mod.epsilon_schedule(
            self.run_count() + 1,
            self.config.epsilon_start,
            self.config.epsilon_end,
            self.config.epsilon_decay_runs,
        )


def _profile_hash(profile_text: str) -> str:
    return hashlib.sha256(profile_text.encode()).hexdigest()


def init_store(
    directory: str | Path,
    profile: Profile,
    config: TunerConfig | None = None,
    clock: Callable[[], float] | None = None,
) -> ExperienceStore:
    """Create a fresh store (directory must be empty or absent)."""
    directory = Path(directory)
    if directory.exists():
        if (directory / "meta.json").exists():
            raise StoreExistsError(f"{directory} already contains a store")
        if any(directory.iterdir()):
            raise StoreExistsError(f"{directory} is not empty")
    directory.mkdir(parents=True, exist_ok=True)
    config = config or TunerConfig()
    store = ExperienceStore(directory, profile, config, clock)

    profile_text = _dumps(profile_to_dict(profile))
    store._write(directory / "profile.json", profile_text)
    store._write(directory / "config.json", _dumps(config.to_jsonable()))
    meta = {
        "format": STORE_FORMAT,
        "layer": profile.layer,
        "profile_sha256": _profile_hash(profile_text),
        "created": store.clock(),
    }
    store._write(directory / "meta.json", _dumps(meta))
    with StoreLock(directory):
        store.commit()
    return store


def load_store(
    directory: str | Path, clock: Callable[[], float] | None = None
) -> ExperienceStore:
    """Load a store, verifying format and the profile tamper guard."""
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.exists():
        raise StoreNotFoundError(f"no store at {directory}")
    try:
        meta = json.loads(meta_path.read_text())
        profile_text = (directory / "profile.json").read_text()
        config = TunerConfig.from_jsonable(json.loads((directory / "config.json").read_text()))
        current = (directory / "CURRENT").read_text().strip()
        gen_dir = directory / current
        baseline_raw = json.loads((gen_dir / "baseline.json").read_text())
        runs_raw = (gen_dir / "runs.jsonl").read_text()
        weights_raw = json.loads((gen_dir / "weights.json").read_text())
        rng_state = json.loads((gen_dir / "rng.json").read_text())
        buffer_raw = (gen_dir / "buffer.jsonl").read_text()
        control = json.loads((gen_dir / "control.json").read_text())
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise StoreCorruptError(f"cannot load store at {directory}: {exc}") from exc

    if meta.get("format") != STORE_FORMAT:
        raise StoreCorruptError(f"unsupported store format {meta.get('format')!r}")
    if _profile_hash(profile_text) != meta.get("profile_sha256"):
        raise StoreCorruptError("profile hash mismatch: profile.json was modified")

    profile = profile_from_dict(json.loads(profile_text))
    store = ExperienceStore(directory, profile, config, clock)
    store.generation = int(current.split("-")[1])
    store.baseline = (
        None if baseline_raw is None else ReferenceBaseline.from_jsonable(baseline_raw)
    )
    store.runs = [
        RunRecord.from_jsonable(json.loads(line))
        for line in runs_raw.splitlines()
        if line.strip()
    ]
    store.net = QNetwork.from_jsonable(weights_raw)
    store.rng = np.random.default_rng(config.seed)
    store.rng.bit_generator.state = rng_state
    store.buffer = ReplayBuffer(
        [Transition.from_jsonable(json.loads(line)) for line in buffer_raw.splitlines() if line.strip()]
    )
    store.current_settings = ControlSetting(
        {k: int(v) for k, v in control["current_settings"].items()}
    )
    pending = control.get("pending")
    store.pending = (
        None
        if pending is None
        else (np.array(pending["state"], dtype=np.float64), int(pending["action"]))
    )
    store.replay_events = [(int(a), int(b)) for a, b in control.get("replay_events", [])]
    return store


def _require_total(store: ExperienceStore, stats: dict[str, PerformanceStats]) -> float:
    name = store.profile.total_time_variable
    st = stats.get(name)
    if st is None or st.count == 0 or st.mean is None:
        raise ReportError(f"report contains no valid {name} samples")
    return st.mean


def record_first_run(
    store: ExperienceStore,
    stats: dict[str, PerformanceStats],
    nprocs: int,
    recapture: bool = False,
) -> ControlSetting:
    """Capture the reference baseline from the first (vanilla) run.

    The run is recorded, the distinguished no-op is scheduled as the first
    pending action, and the settings for the next run (unchanged) are
    returned.  With ``recapture`` the existing baseline is replaced, which
    resets the standardization reference mid-session.
    """
    if store.baseline is not None and not recapture:
        raise BaselineExistsError(
            "baseline already recorded; unset AITUNING_FIRST_RUN or pass recapture"
        )
    if store.baseline is not None:
        log.warning("recapturing baseline over an existing one (env override)")
    total = _require_total(store, stats)
    if total <= 0:
        raise ReportError("baseline total time must be positive")
    missing = [p.name for p in store.profile.performance if p.name not in stats]
    if missing:
        raise ReportError(f"baseline stats missing variables: {missing}")

    with StoreLock(store.path):
        store.baseline = ReferenceBaseline(stats=dict(stats), nprocs_ref=nprocs)
        record = RunRecord(
            run_index=store.run_count() + 1,
            settings=dict(store.current_settings.values),
            stats=dict(stats),
            nprocs=nprocs,
            reward=None,
            action_taken=ActionSpace.NOOP,
            timestamp=store.clock(),
        )
        store.runs.append(record)
        state = build_state(store.profile, stats, nprocs, store.baseline)
        store.pending = (state.features, ActionSpace.NOOP)
        store.commit()
    return store.current_settings.copy()


def complete_run(
    store: ExperienceStore, stats: dict[str, PerformanceStats], nprocs: int
) -> tuple[ControlSetting, float]:
    """Close out one application run and schedule the next action.

    Builds the run's state and reward, closes the pending (state, action)
    pair into a transition, trains online, applies the replay gate at this
    run index, selects the next action, and persists atomically.  Returns
    (settings for the next run, this run's reward).
    """
    if store.baseline is None:
        raise MissingBaselineError()
    total = _require_total(store, stats)
    baseline_total = store.baseline.stats[store.profile.total_time_variable].mean
    state = build_state(store.profile, stats, nprocs, store.baseline)
    reward = compute_reward(baseline_total, total)

    with StoreLock(store.path):
        run_index = store.run_count() + 1
        if store.pending is not None:
            prev_state, prev_action = store.pending
            transition = Transition(prev_state, prev_action, reward.value, state.features)
            store.buffer.add(transition)
            if store.config.policy == "dqn":
                agent_mod.train_step(store.net, transition)
                steps = agent_mod.replay(
                    store.net,
                    store.buffer,
                    run_index,
                    store.config.batch_size,
                    store.rng,
                    every=store.config.replay_every,
                )
                if steps:
                    store.replay_events.append((run_index, steps))

        if store.config.policy == "random":
            action = int(store.rng.integers(store.action_space.size))
        else:
            epsilon = agent_mod.epsilon_schedule(
                run_index,
                store.config.epsilon_start,
                store.config.epsilon_end,
                store.config.epsilon_decay_runs,
            )
            action = agent_mod.select_action(store.net, state, epsilon, store.rng)

        record = RunRecord(
            run_index=run_index,
            settings=dict(store.current_settings.values),
            stats=dict(stats),
            nprocs=nprocs,
            reward=reward.value,
            action_taken=action,
            timestamp=store.clock(),
        )
        store.runs.append(record)
        store.pending = (state.features, action)

        chosen = store.action_space[action]
        if chosen.name is None:
            next_settings = store.current_settings.copy()
        else:
            next_settings = apply_change(
                store.current_settings, store.profile.control(chosen.name), chosen.direction
            )
        store.current_settings = next_settings
        store.commit()
    return next_settings.copy(), reward.value


def export_settings(store: ExperienceStore) -> ControlSetting:
    """Settings for the upcoming run (defaults until an action was chosen)."""
    return store.current_settings.copy()
