import itertools
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isdarts.errors import ConfigError, UsageError
from isdarts.search_space import (CellSpec, ComparisonSubsets, Mask, SupernetSpec, comparison_subsets,
                                  enumerate_subnets, load_space, micro_cell, parameterized_slots,
                                  preset, save_space)


def test_benchmark_cell_has_30_slots_in_6_subsets_of_5():
    spec = preset("nb201")
    subsets = comparison_subsets(spec)
    assert spec.cell.num_slots == 30
    assert [len(g) for g in subsets.groups] == [5] * 6 and subsets.C == 1


def test_micro_cell_has_9_slots():
    assert preset("micro").cell.num_slots == 9


def test_per_node_subsets_of_darts_cell():
    subsets = comparison_subsets(preset("darts"))
    assert [len(g) for g in subsets.groups] == [16, 24, 32, 40] and subsets.C == 2


def test_single_edge_cell_gives_one_subset():
    cell = CellSpec(num_nodes=2, edges=[(0, 1)], candidate_ops=[("skip", "conv3x3")])
    assert len(comparison_subsets(cell)) == 1


@pytest.mark.parametrize("sizes,C,expected", [([5] * 6, 1, 15625), ([3] * 3, 1, 27), ([4], 2, 6)])
def test_enumeration_counts(sizes, C, expected):
    groups, start = [], 0
    for n in sizes:
        groups.append(list(range(start, start + n)))
        start += n
    subsets = ComparisonSubsets("per-edge", groups, C)
    masks = list(enumerate_subnets(subsets, cap=20000))
    assert len(masks) == subsets.count() == expected
    assert len({m.bits for m in masks}) == expected
    assert all(m.is_final(subsets) for m in masks)


def test_enumeration_is_lexicographic_and_capped():
    subsets = comparison_subsets(preset("micro"))
    ids = [m.mask_id(subsets) for m in enumerate_subnets(subsets)]
    assert ids[:3] == ["100-100-100", "100-100-010", "100-100-001"]
    with pytest.raises(UsageError, match="27"):
        list(enumerate_subnets(subsets, cap=26))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(1, 4), st.sampled_from(["per-edge", "per-node"]))
def test_subsets_partition_all_slots(num_nodes, n_ops, mode):
    from isdarts.search_space import complete_dag

    ops = ("zero", "skip", "conv3x3", "avg_pool3x3")[:n_ops]
    edges, cand = complete_dag(num_nodes, ops)
    cell = CellSpec(num_nodes, edges, cand)
    subsets = comparison_subsets(cell, mode=mode, C=1)
    flat = [s for g in subsets.groups for s in g]
    assert sorted(flat) == list(range(cell.num_slots)) and len(flat) == len(set(flat))


def test_subset_partition_is_enforced():
    with pytest.raises(ConfigError):
        ComparisonSubsets("per-edge", [[0, 1], [1, 2]], 1)


def test_mask_id_round_trip_and_dict():
    subsets = comparison_subsets(preset("micro"))
    mask = Mask.from_id("001-010-100", subsets)
    assert mask.active() == [2, 4, 6]
    d = mask.to_dict(subsets, "abc")
    assert Mask.from_dict(json.loads(json.dumps(d))) == mask
    assert d["groups"] == [[0, 0, 1], [0, 1, 0], [1, 0, 0]]


def test_mask_validation_bounds():
    subsets = comparison_subsets(preset("micro"))
    Mask.full(9).validate(subsets)
    with pytest.raises(UsageError):
        Mask.from_id("000-111-111", subsets).validate(subsets)
    with pytest.raises(UsageError):
        Mask((1, 2))


def test_without_never_resurrects():
    m = Mask.full(9).without([1, 4]).without([2])
    assert m.active() == [0, 3, 5, 6, 7, 8]


def test_cell_validation():
    with pytest.raises(ConfigError) as exc:
        CellSpec(num_nodes=3, edges=[(1, 0)], candidate_ops=[("skip",)])
    assert exc.value.path == "cell.edges[0]"
    with pytest.raises(ConfigError):
        CellSpec(num_nodes=3, edges=[(0, 1)], candidate_ops=[("skip",)])  # node 2 has no input
    with pytest.raises(ConfigError):
        CellSpec(num_nodes=2, edges=[(0, 1)], candidate_ops=[("conv9x9",)])


def test_spec_rejects_too_few_classes_and_large_C():
    with pytest.raises(ConfigError):
        SupernetSpec(micro_cell(), num_classes=1)
    with pytest.raises(ConfigError):
        SupernetSpec(micro_cell(), C=4)


def test_space_file_round_trip_and_fingerprint(tmp_path):
    spec = preset("darts")
    path = tmp_path / "space.json"
    save_space(spec, path)
    again = load_space(path)
    assert again == spec and again.fingerprint() == spec.fingerprint()
    assert preset("micro").fingerprint() != spec.fingerprint()


def test_preset_overrides_from_dict():
    spec = SupernetSpec.from_dict({"preset": "micro", "channels": 4})
    assert spec.channels == 4 and spec.cell == preset("micro").cell
    with pytest.raises(ConfigError):
        SupernetSpec.from_dict({"preset": "micro", "chanels": 4})


def test_parameterized_slots_of_micro():
    assert parameterized_slots(preset("micro").cell) == {2, 5, 8}
