from __future__ import annotations

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qtune.variables import (
    BINARY,
    DECREASE,
    INCREASE,
    NONE,
    STEPPED,
    TOGGLE,
    ControlSetting,
    ControlVariableSpec,
    PerformanceVariableSpec,
    Profile,
    ProfileError,
    SampleError,
    aggregate,
    apply_change,
    load_profile,
    save_profile,
    validate_sample,
    validate_setting,
)


class TestBundledProfile:
    def test_eager_threshold_step(self, mpich_profile):
        eager = mpich_profile.control("CH3_EAGER_MAX_MSG_SIZE")
        assert eager.kind == STEPPED
        assert eager.step == 1024

    def test_async_progress_is_binary(self, mpich_profile):
        spec = mpich_profile.control("ASYNC_PROGRESS")
        assert spec.kind == BINARY
        assert (spec.min, spec.max) == (0, 1)

    def test_control_and_performance_sets(self, mpich_profile):
        assert len(mpich_profile.controls) == 6
        assert {p.name for p in mpich_profile.performance} == {
            "unexpected_recvq_length",
            "flush_time",
            "put_time",
            "get_time",
            "total_execution_time",
        }
        assert mpich_profile.total_time_variable == "total_execution_time"
        assert mpich_profile.perf("total_execution_time").relative

    def test_env_names_mapped(self, mpich_profile):
        assert (
            mpich_profile.control("POLLS_BEFORE_YIELD").env_name
            == "MPIR_CVAR_POLLS_BEFORE_YIELD"
        )

    def test_polls_default(self, mpich_profile):
        assert mpich_profile.control("POLLS_BEFORE_YIELD").default == 1000


class TestProfileValidation:
    def test_min_above_max_rejected(self, tmp_path):
        bad = tmp_path / "bad.profile"
        bad.write_text(
            """{"format": 1, "layer": "X", "total_time_variable": "t",
            "controls": [{"name": "A", "kind": "stepped-numeric",
                          "default": 7, "min": 10, "max": 5, "step": 1}],
            "performance": [{"name": "t", "source": "user-defined",
                             "relative": true, "valid_min": 0, "valid_max": 1}]}"""
        )
        with pytest.raises(ProfileError):
            load_profile(bad)

    def test_not_json_rejected(self, tmp_path):
        bad = tmp_path / "bad.profile"
        bad.write_text("KNOB = 3\n")
        with pytest.raises(ProfileError):
            load_profile(bad)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ProfileError):
            load_profile(tmp_path / "absent.profile")

    def test_binary_span_enforced(self):
        with pytest.raises(ProfileError):
            ControlVariableSpec("F", BINARY, 0, 0, 2)

    def test_range_narrower_than_step(self):
        with pytest.raises(ProfileError):
            ControlVariableSpec("K", STEPPED, 5, 0, 10, step=100)

    def test_duplicate_names_rejected(self, mini_profile):
        with pytest.raises(ProfileError):
            Profile(
                layer="X",
                controls=mini_profile.controls + [mini_profile.controls[0]],
                performance=mini_profile.performance,
                total_time_variable="total_execution_time",
            )

    def test_total_time_must_be_relative(self, mini_profile):
        absolute_total = PerformanceVariableSpec(
            "total_execution_time", "user-defined", False, 0.0, 1e7, "seconds"
        )
        with pytest.raises(ProfileError):
            Profile(
                layer="X",
                controls=mini_profile.controls,
                performance=[absolute_total],
                total_time_variable="total_execution_time",
            )

    def test_round_trip(self, tmp_path, mpich_profile):
        path = tmp_path / "copy.profile"
        save_profile(mpich_profile, path)
        assert load_profile(path) == mpich_profile


class TestValidateSample:
    FLUSH = PerformanceVariableSpec("flush_time", "user-defined", True, 0.0, 1e6, "s")
    QUEUE = PerformanceVariableSpec("queue_len", "builtin", False, 0.0, 1e9, "count")

    def test_in_range_identity(self):
        assert validate_sample(self.FLUSH, 0.004) == 0.004

    def test_below_range_rejected_with_name(self):
        with pytest.raises(SampleError, match="flush_time"):
            validate_sample(self.FLUSH, -1.0)

    @pytest.mark.parametrize("value", [math.nan, math.inf, -math.inf])
    def test_non_finite_rejected(self, value):
        with pytest.raises(SampleError, match="queue_len"):
            validate_sample(self.QUEUE, value)


class TestAggregate:
    def test_basic_stats(self):
        stats = aggregate([1.0, 2.0, 3.0, 4.0])
        assert (stats.min, stats.max, stats.mean, stats.median) == (1.0, 4.0, 2.5, 2.5)
        assert stats.count == 4

    def test_singleton(self):
        stats = aggregate([7.0])
        assert stats.count == 1
        assert stats.min == stats.max == stats.mean == stats.median == 7.0

    def test_empty(self):
        stats = aggregate([])
        assert stats.count == 0
        assert stats.min is stats.max is stats.mean is stats.median is None

    @given(st.lists(st.floats(0.0, 1e6), min_size=1, max_size=40), st.randoms())
    def test_permutation_invariant(self, samples, rnd):
        shuffled = list(samples)
        rnd.shuffle(shuffled)
        assert aggregate(shuffled) == aggregate(samples)


KNOB = ControlVariableSpec("KNOB", STEPPED, 4096, 0, 8192, 1024)
FLAG = ControlVariableSpec("FLAG", BINARY, 0, 0, 1)


class TestApplyChange:
    def test_increase_by_step(self):
        setting = ControlSetting({"KNOB": 4096})
        assert apply_change(setting, KNOB, INCREASE).values["KNOB"] == 5120

    def test_binary_toggle(self):
        setting = ControlSetting({"FLAG": 0})
        assert apply_change(setting, FLAG, TOGGLE).values["FLAG"] == 1

    def test_decrease_clamped_at_min(self):
        setting = ControlSetting({"KNOB": 0})
        assert apply_change(setting, KNOB, DECREASE).values["KNOB"] == 0

    def test_none_is_identity(self):
        setting = ControlSetting({"KNOB": 4096, "FLAG": 1})
        assert apply_change(setting, KNOB, NONE) == setting

    def test_other_variables_untouched(self):
        setting = ControlSetting({"KNOB": 4096, "FLAG": 1})
        out = apply_change(setting, KNOB, INCREASE)
        assert out.values["FLAG"] == 1

    def test_unknown_variable(self):
        with pytest.raises(ProfileError):
            apply_change(ControlSetting({"OTHER": 1}), KNOB, INCREASE)

    def test_original_not_mutated(self):
        setting = ControlSetting({"KNOB": 4096})
        apply_change(setting, KNOB, INCREASE)
        assert setting.values["KNOB"] == 4096

    @given(st.integers(0, 8))
    def test_opposite_direction_inverts_when_not_clamped(self, k):
        value = k * 1024
        setting = ControlSetting({"KNOB": value})
        up = apply_change(setting, KNOB, INCREASE)
        if up.values["KNOB"] != value:  # the first step was not clamped
            assert apply_change(up, KNOB, DECREASE) == setting

    @given(st.lists(st.tuples(st.sampled_from(["KNOB", "FLAG"]),
                              st.sampled_from([DECREASE, INCREASE, NONE])),
                    max_size=60))
    @settings(max_examples=50)
    def test_closure_under_actions(self, moves):
        profile = Profile(
            layer="X",
            controls=[KNOB, FLAG],
            performance=[
                PerformanceVariableSpec(
                    "total_execution_time", "user-defined", True, 0.0, 1e7, "s"
                )
            ],
            total_time_variable="total_execution_time",
        )
        setting = profile.defaults()
        for name, direction in moves:
            spec = profile.control(name)
            direction = TOGGLE if spec.kind == BINARY and direction != NONE else direction
            setting = apply_change(setting, spec, direction)
        validate_setting(profile, setting)


class TestLattice:
    def test_lattice_anchored_at_default(self):
        spec = ControlVariableSpec("K", STEPPED, 500, 0, 2000, 300)
        assert spec.lattice() == [200, 500, 800, 1100, 1400, 1700, 2000]

    def test_binary_lattice(self):
        assert FLAG.lattice() == [0, 1]
