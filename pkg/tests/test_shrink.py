import json
from dataclasses import replace
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from isdarts.config import RunConfig, ShrinkSchedule, reserved_count
from isdarts.errors import ConfigError, UsageError
from isdarts.iim import IimReport
from isdarts.search_space import ComparisonSubsets, Mask
from isdarts.shrink import SearchState, run_search, shrink_step


def reference_counts(n, C, r):
    """Exact-rational evaluation of the cumulative-rounding schedule."""
    r = Fraction(r).limit_denominator(1000)
    total = int(Fraction(1) / r + Fraction(1, 2))
    out = []
    for z in range(total + 1):
        if z == 0:
            out.append(n)
        elif z == total:
            out.append(C)
        else:
            v = n - z * r * (n - C)
            out.append(max(C, int(v + Fraction(1, 2))))
    return out


def test_benchmark_counts():
    assert ShrinkSchedule(r=0.25).reserved_counts(5, 1) == [5, 4, 3, 2, 1]


def test_per_node_counts_with_r_one_seventh():
    assert ShrinkSchedule(r=1 / 7).reserved_counts(40, 2) == [40, 35, 29, 24, 18, 13, 7, 2]
    assert reference_counts(40, 2, Fraction(1, 7)) == [40, 35, 29, 24, 18, 13, 7, 2]


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 60), st.integers(1, 4), st.sampled_from([1, 0.5, 0.25, 0.2, 0.143, 0.1, 1 / 3, 1 / 7]))
def test_counts_start_full_end_at_C_and_decrease(n, C, r):
    assume(C < n)
    sched = ShrinkSchedule(r=r)
    counts = sched.reserved_counts(n, C)
    assert counts[0] == n and counts[-1] == C
    assert reserved_count(sched.total_steps, n, C, r) == C
    try:
        sched.check([n], C)
    except ConfigError as exc:
        assert exc.path == "schedule.r"
        assert any(b >= a for a, b in zip(counts, counts[1:]))
    else:
        assert all(b < a for a, b in zip(counts, counts[1:]))


def test_plateau_schedule_rejected_with_field_path():
    with pytest.raises(ConfigError) as exc:
        ShrinkSchedule(r=0.1).check([3], 1)
    assert exc.value.path == "schedule.r"


def _single_subset_state(n):
    subsets = ComparisonSubsets("per-edge", [list(range(n))], 1)
    return subsets, SearchState.initial(subsets)


def test_lowest_importance_is_discarded():
    subsets, state = _single_subset_state(5)
    report = IimReport(1, dict(enumerate([0.1, 0.5, 0.3, 0.2, 0.4])), 10)
    new = shrink_step(state, report, subsets, 0.25)
    assert new.discarded == [[0]] and new.mask.active() == [1, 2, 3, 4]


def test_ties_discard_the_lower_index():
    subsets, state = _single_subset_state(3)
    report = IimReport(1, dict(enumerate([0.2, 0.2, 0.9])), 10)
    new = shrink_step(state, report, subsets, 0.5)
    assert new.discarded == [[0]] and new.reserved == [[1, 2]]


def test_report_missing_active_slot_is_usage_error():
    subsets, state = _single_subset_state(3)
    with pytest.raises(UsageError):
        shrink_step(state, IimReport(1, {0: 1.0, 1: 2.0}, 1), subsets, 0.5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 10, allow_nan=False), min_size=12, max_size=12),
       st.floats(1e-3, 1e3), st.sampled_from([0.25, 0.5, 1.0]))
def test_outcome_depends_on_ranks_only_and_keeps_bookkeeping(values, scale, r):
    subsets = ComparisonSubsets("per-edge", [[0, 1, 2, 3, 4, 5], [6, 7, 8, 9, 10, 11]], 2)
    state = SearchState.initial(subsets)
    scaled_state = SearchState.initial(subsets)
    total = ShrinkSchedule(r=r).total_steps
    for z in range(1, total + 1):
        report = IimReport(z, {s: values[s] for s in state.mask.active()}, 1)
        scaled = IimReport(z, {s: values[s] * scale for s in scaled_state.mask.active()}, 1)
        before = [len(a) for a in state.reserved]
        prev_bits = state.mask.bits
        state = shrink_step(state, report, subsets, r)
        scaled_state = shrink_step(scaled_state, scaled, subsets, r)
        state.check(subsets)
        target = reserved_count(z, 6, 2, r)
        assert [len(a) for a in state.reserved] == [target, target]
        assert all(b - len(a) == reserved_count(z - 1, 6, 2, r) - target for b, a in zip(before, state.reserved))
        assert all(not (new and not old) for old, new in zip(prev_bits, state.mask.bits))
        # reporting a scaled copy must not change anything unless float rounding creates ties
        if len(set(values)) == len(values):
            assert scaled_state.mask == state.mask
    assert state.mask.is_final(subsets)


def _small_config(**kw):
    base = {"preset": "micro", "total_epochs": 5, "iim_samples": 40,
            "dataset": {"train": 96, "val": 64, "test": 64}}
    base.update(kw)
    return RunConfig.from_dict(base)


def test_run_search_end_to_end_properties(tmp_path):
    config = _small_config()
    result = run_search(config, out_dir=str(tmp_path / "run"))
    subsets = result.model.subsets
    assert result.final_mask.is_final(subsets)
    warm, total = config.schedule.epochs(config.total_epochs)
    assert result.epochs == total == warm + config.schedule.interval_epochs * config.schedule.total_steps
    assert [e["epoch"] for e in result.log if e["event"] == "epoch"] == list(range(total))
    prev = Mask.full(subsets.num_slots)
    for m in result.masks:
        assert all(not (b and not a) for a, b in zip(prev.bits, m.bits))
        prev = m
    names = sorted(p.name for p in (tmp_path / "run").iterdir())
    assert names == ["checkpoint_step_1.mnl", "checkpoint_step_2.mnl", "config.json", "final_mask.json",
                     "iim_step_1.csv", "iim_step_2.csv", "log.jsonl", "mask_step_1.json", "mask_step_2.json"]
    final = json.loads((tmp_path / "run" / "final_mask.json").read_text())
    assert all(sum(g) == 1 for g in final["groups"])


def test_run_search_is_deterministic():
    config = _small_config(seed=4)
    a, b = run_search(config), run_search(config)
    assert a.final_mask == b.final_mask
    assert [r.values for r in a.reports] == [r.values for r in b.reports]


def test_i_darts_is_a_single_step():
    config = _small_config(method="i-darts")
    assert config.schedule.r == 1.0 and config.schedule.total_steps == 1
    result = run_search(config)
    assert len(result.reports) == 1 and result.final_mask.is_final(result.model.subsets)


def test_benchmark_preset_epoch_accounting():
    config = RunConfig.from_dict({"preset": "nb201"})
    assert config.schedule.epochs(config.total_epochs) == (22, 30)
    assert config.iim_samples == 200 and config.schedule.r == 0.25 and config.schedule.interval_epochs == 2


def test_darts_preset_values():
    config = RunConfig.from_dict({"preset": "darts"})
    assert config.schedule.r == 0.143 and config.iim_samples == 600
    assert config.schedule.reserved_counts(40, 2)[-1] == 2


def test_run_search_refuses_darts_method():
    with pytest.raises(UsageError):
        run_search(replace(_small_config(), method="darts"))
