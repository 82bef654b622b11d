"""Command-line surface for the episodic tuning protocol.

Exit codes are a stable scripting contract: 0 success, 1 usage error,
2 store/protocol error, 3 data/parse error.
"""

from __future__ import annotations

import argparse
import os
import statistics
import sys
from pathlib import Path

from . import ensemble as ensemble_mod
from . import simulator as simulator_mod
from .ensemble import InsufficientRunsError
from .state import MissingBaselineError
from .simulator import PlantError
from .store import (
    FIRST_RUN_ENV,
    ReportError,
    StoreError,
    TunerConfig,
    complete_run,
    export_settings,
    init_store,
    load_store,
    parse_report,
    record_first_run,
    settings_lines,
    stats_from_samples,
)
from .variables import ProfileError, SampleError, load_profile

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_STORE = 2
EXIT_DATA = 3

CRASH_ENV = "QTUNE_CRASH_AT"  # fault-injection hook for crash-safety testing


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _install_crash_hook(store) -> None:
    raw = os.environ.get(CRASH_ENV)
    if not raw:
        return
    crash_at = int(raw)

    def hook(step: int, label: str) -> None:
        if step == crash_at:
            os._exit(70)

    store.persist_hook = hook


def cmd_init(args) -> int:
    profile = load_profile(args.profile)
    config = TunerConfig(
        seed=args.seed,
        gamma=args.gamma,
        alpha=args.alpha,
        hidden=tuple(int(h) for h in args.hidden.split(",") if h),
        batch_size=args.batch_size,
        replay_every=args.replay_every,
        epsilon_start=args.epsilon_start,
        epsilon_end=args.epsilon_end,
        epsilon_decay_runs=args.epsilon_decay_runs,
        policy=args.policy,
    )
    init_store(args.store, profile, config)
    print(f"initialized store at {args.store} for layer {profile.layer}")
    return EXIT_OK


def cmd_pre_run(args) -> int:
    store = load_store(args.store)
    setting = export_settings(store)
    text = settings_lines(store.profile, setting)
    Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_post_run(args) -> int:
    store = load_store(args.store)
    _install_crash_hook(store)
    report_text = Path(args.report).read_text()
    nprocs, samples, rejected = parse_report(report_text, store.profile)
    for name, count in sorted(rejected.items()):
        print(f"warning: dropped {count} invalid sample(s) for {name}", file=sys.stderr)
    stats = stats_from_samples(samples)

    first_run_requested = os.environ.get(FIRST_RUN_ENV) == "1"
    if first_run_requested or store.baseline is None:
        next_settings = record_first_run(
            store, stats, nprocs, recapture=first_run_requested and store.baseline is not None
        )
        print(f"baseline recorded (run {store.run_count()}, nprocs {nprocs})")
    else:
        next_settings, reward = complete_run(store, stats, nprocs)
        print(f"run {store.run_count()} recorded; reward {reward:+.4f}")
    print("next settings:")
    print(settings_lines(store.profile, next_settings), end="")
    return EXIT_OK


def cmd_recommend(args) -> int:
    store = load_store(args.store)
    if store.baseline is None:
        raise MissingBaselineError()
    rec = ensemble_mod.recommend(
        store.runs, store.baseline, store.profile, args.tolerance, args.min_runs
    )
    print(ensemble_mod.report(store.runs, rec, store.profile), end="")
    out = args.out or str(Path(args.store) / "recommended.settings")
    Path(out).write_text(settings_lines(store.profile, rec.settings))
    print(f"settings written to {out}")
    # the baseline run always survives the penalized filter, so "nothing
    # improved" shows up as an ensemble that never beat the baseline time
    improved = rec.best_total is not None and rec.best_total < rec.baseline_total
    if not improved:
        print("warning: no run beat the baseline; defaults recommended", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    profile = load_profile(args.profile)
    plant = simulator_mod.load_plant(args.plant, profile)
    results = []
    for seed in range(args.seed_base, args.seed_base + args.seeds):
        results.append(
            simulator_mod.run_campaign(
                plant,
                profile,
                episodes=args.episodes,
                seed=seed,
                policy=args.policy,
                tolerance=args.tolerance,
                min_runs=args.min_runs,
            )
        )
    Path(args.out).write_text(simulator_mod.campaign_csv(results, profile))

    print(f"{'seed':>6}  {'regret':>8}  {'steps-off':>9}  recommendation")
    for res in results:
        off = sum(res.distance_steps.values())
        rec = " ".join(
            f"{k}={v}" for k, v in res.recommendation.settings.values.items()
        )
        print(f"{res.seed:>6}  {res.regret:>8.4f}  {off:>9}  {rec}")
    median_regret = statistics.median(r.regret for r in results)
    print(f"median regret over {len(results)} seed(s): {median_regret:.4f}")
    print(f"episode table written to {args.out}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    meta = Path(args.store) / "meta.json"
    if not meta.exists():
        print("uninitialized")
        return EXIT_OK
    store = load_store(args.store)
    print(f"layer:        {store.profile.layer}")
    print(f"runs:         {store.run_count()}")
    if store.baseline is None:
        print("baseline:     not recorded")
    else:
        total = store.baseline.stats[store.profile.total_time_variable].mean
        print(f"baseline:     total {total:.6g} at nprocs {store.baseline.nprocs_ref}")
    print(f"epsilon:      {store.next_epsilon():.4f} (next selection)")
    last_reward = next(
        (r.reward for r in reversed(store.runs) if r.reward is not None), None
    )
    print(f"last reward:  {'n/a' if last_reward is None else f'{last_reward:+.4f}'}")
    print(f"transitions:  {len(store.buffer)}")
    print(f"replay events: {store.replay_events}")
    print("next settings:")
    print(settings_lines(store.profile, export_settings(store)), end="")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="qtune", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create a tuning store for a profile")
    p.add_argument("--store", required=True)
    p.add_argument("--profile", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gamma", type=float, default=TunerConfig.gamma)
    p.add_argument("--alpha", type=float, default=TunerConfig.alpha)
    p.add_argument("--hidden", default="32,32", help="comma-separated hidden sizes")
    p.add_argument("--batch-size", type=int, default=TunerConfig.batch_size)
    p.add_argument("--replay-every", type=int, default=TunerConfig.replay_every)
    p.add_argument("--epsilon-start", type=float, default=TunerConfig.epsilon_start)
    p.add_argument("--epsilon-end", type=float, default=TunerConfig.epsilon_end)
    p.add_argument("--epsilon-decay-runs", type=int, default=TunerConfig.epsilon_decay_runs)
    p.add_argument("--policy", choices=("dqn", "random"), default="dqn")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("pre-run", help="export settings for the upcoming run")
    p.add_argument("--store", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_pre_run)

    p = sub.add_parser("post-run", help="ingest a performance report")
    p.add_argument("--store", required=True)
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_post_run)

    p = sub.add_parser("recommend", help="ensemble recommendation from the history")
    p.add_argument("--store", required=True)
    p.add_argument("--tolerance", type=float, default=ensemble_mod.DEFAULT_TOLERANCE)
    p.add_argument("--min-runs", type=int, default=ensemble_mod.DEFAULT_MIN_RUNS)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_recommend)

    p = sub.add_parser("simulate", help="closed-loop campaigns on a synthetic plant")
    p.add_argument("--profile", required=True)
    p.add_argument("--plant", required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--seed-base", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--policy", choices=("dqn", "random"), default="dqn")
    p.add_argument("--tolerance", type=float, default=ensemble_mod.DEFAULT_TOLERANCE)
    p.add_argument("--min-runs", type=int, default=ensemble_mod.DEFAULT_MIN_RUNS)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("inspect", help="print store status")
    p.add_argument("--store", required=True)
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except (ProfileError, ReportError, PlantError, SampleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (StoreError, MissingBaselineError, InsufficientRunsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STORE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STORE


if __name__ == "__main__":
    sys.exit(main())
