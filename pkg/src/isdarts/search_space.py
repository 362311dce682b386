"""Cells, supernet descriptions, comparison subsets and binary masks.

A *candidate slot* is one (edge, operation) pair of the cell.  Slots are
numbered edge-major: all candidates of edge 0, then edge 1, and so on.  Masks
and comparison subsets refer to slots by that number; a mask is shared by every
stacked copy of the cell.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

from .errors import ConfigError, UsageError
from .ops import EDGE_KINDS, PARAMETER_FREE

MODES = ("per-edge", "per-node")
DEFAULT_ENUMERATION_CAP = 1_000_000


@dataclass(frozen=True)
class CellSpec:
    num_nodes: int
    edges: tuple
    candidate_ops: tuple
    num_inputs: int = 1
    output: str = "last"

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(tuple(e) for e in self.edges))
        object.__setattr__(self, "candidate_ops", tuple(tuple(ops) for ops in self.candidate_ops))
        if self.num_inputs not in (1, 2):
            raise ConfigError("num_inputs must be 1 or 2", "cell.num_inputs")
        if self.num_nodes <= self.num_inputs:
            raise ConfigError("need at least one non-input node", "cell.num_nodes")
        if self.output not in ("last", "concat"):
            raise ConfigError("output must be 'last' or 'concat'", "cell.output")
        if len(self.candidate_ops) != len(self.edges):
            raise ConfigError(
                f"{len(self.edges)} edges but {len(self.candidate_ops)} candidate lists",
                "cell.candidate_ops",
            )
        for n, (i, j) in enumerate(self.edges):
            if not (0 <= i < j < self.num_nodes):
                raise ConfigError(f"edge ({i}, {j}) must satisfy 0 <= i < j < num_nodes", f"cell.edges[{n}]")
            if j < self.num_inputs:
                raise ConfigError(f"edge ({i}, {j}) ends at an input node", f"cell.edges[{n}]")
        if len(set(self.edges)) != len(self.edges):
            raise ConfigError("duplicate edges", "cell.edges")
        for n, ops in enumerate(self.candidate_ops):
            if not ops:
                raise ConfigError("edge without candidates", f"cell.candidate_ops[{n}]")
            for op in ops:
                if op not in EDGE_KINDS:
                    raise ConfigError(f"unknown operation kind {op!r}", f"cell.candidate_ops[{n}]")
        for j in range(self.num_inputs, self.num_nodes):
            if not any(e[1] == j for e in self.edges):
                raise ConfigError(f"node {j} has no incoming edge", "cell.edges")

    @property
    def num_slots(self) -> int:
        return sum(len(ops) for ops in self.candidate_ops)

    def slots(self) -> list[tuple[int, int, str]]:
        """(edge index, candidate index, kind) for every slot in slot order."""
        return [(e, k, op) for e, ops in enumerate(self.candidate_ops) for k, op in enumerate(ops)]

    def slot_label(self, slot: int) -> str:
        e, k, op = self.slots()[slot]
        i, j = self.edges[e]
        return f"{i}->{j}:{op}"

    def to_dict(self) -> dict:
        return {
            "num_nodes": self.num_nodes,
            "num_inputs": self.num_inputs,
            "edges": [list(e) for e in self.edges],
            "candidate_ops": [list(ops) for ops in self.candidate_ops],
            "output": self.output,
        }

    @classmethod
    def from_dict(cls, d: dict, path: str = "space.cell") -> "CellSpec":
        try:
            edges = d["edges"]
            ops = d.get("candidate_ops")
            if ops is None and "ops" in d:
                ops = [d["ops"]] * len(edges)
            return cls(
                num_nodes=int(d["num_nodes"]),
                edges=edges,
                candidate_ops=ops,
                num_inputs=int(d.get("num_inputs", 1)),
                output=d.get("output", "last"),
            )
        except KeyError as exc:
            raise ConfigError(f"missing field {exc.args[0]!r}", path) from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), path) from None


def complete_dag(num_nodes: int, ops: Sequence[str], num_inputs: int = 1) -> tuple:
    """Every edge (i, j) with i < j that does not end at an input node."""
    edges = tuple((i, j) for j in range(num_inputs, num_nodes) for i in range(j))
    return edges, tuple(tuple(ops) for _ in edges)


@dataclass(frozen=True)
class SupernetSpec:
    cell: CellSpec
    channels: int = 16
    cells_per_block: int = 5
    num_blocks: int = 3
    num_classes: int = 10
    in_channels: int = 3
    stem_kernel: int = 3
    mode: str = "per-edge"
    C: int = 1

    def __post_init__(self):
        for name in ("channels", "cells_per_block", "num_blocks", "in_channels"):
            if int(getattr(self, name)) < 1:
                raise ConfigError("must be >= 1", f"space.{name}")
        if self.num_classes < 2:
            raise ConfigError("classifier needs at least 2 classes", "space.num_classes")
        if self.stem_kernel not in (1, 3):
            raise ConfigError("stem_kernel must be 1 or 3", "space.stem_kernel")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}", "space.mode")
        if self.C < 1:
            raise ConfigError("C must be >= 1", "space.C")
        for h, group in enumerate(comparison_subsets(self).groups):
            if len(group) < self.C:
                raise ConfigError(
                    f"comparison subset {h} has {len(group)} candidates, fewer than C={self.C}", "space.C"
                )

    @property
    def num_cells(self) -> int:
        return self.cells_per_block * self.num_blocks

    def to_dict(self) -> dict:
        return {
            "cell": self.cell.to_dict(),
            "channels": self.channels,
            "cells_per_block": self.cells_per_block,
            "num_blocks": self.num_blocks,
            "num_classes": self.num_classes,
            "in_channels": self.in_channels,
            "stem_kernel": self.stem_kernel,
            "mode": self.mode,
            "C": self.C,
        }

    @classmethod
    def from_dict(cls, d: dict, path: str = "space") -> "SupernetSpec":
        if not isinstance(d, dict):
            raise ConfigError("expected an object", path)
        if "preset" in d:
            base = preset(d["preset"]).to_dict()
            overrides = {k: v for k, v in d.items() if k != "preset"}
            unknown = set(overrides) - set(base)
            if unknown:
                raise ConfigError(f"unknown field(s) {sorted(unknown)}", path)
            base.update(overrides)
            d = base
        if "cell" not in d:
            raise ConfigError("missing field 'cell'", path)
        cell = CellSpec.from_dict(d["cell"], f"{path}.cell")
        known = {"channels", "cells_per_block", "num_blocks", "num_classes", "in_channels",
                 "stem_kernel", "mode", "C"}
        unknown = set(d) - known - {"cell"}
        if unknown:
            raise ConfigError(f"unknown field(s) {sorted(unknown)}", path)
        kwargs = {k: d[k] for k in known if k in d}
        for k, v in kwargs.items():
            if k != "mode" and (not isinstance(v, int) or isinstance(v, bool)):
                raise ConfigError("must be an integer", f"{path}.{k}")
        return cls(cell=cell, **kwargs)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def load_space(path) -> SupernetSpec:
    with open(path) as fh:
        return SupernetSpec.from_dict(json.load(fh))


def save_space(spec: SupernetSpec, path) -> None:
    with open(path, "w") as fh:
        json.dump(spec.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------- presets

NB201_OPS = ("zero", "skip", "conv1x1", "conv3x3", "avg_pool3x3")
DARTS_OPS = ("zero", "skip", "sep_conv3x3", "sep_conv5x5", "dil_conv3x3", "dil_conv5x5",
             "max_pool3x3", "avg_pool3x3")
MICRO_OPS = ("zero", "skip", "conv3x3")


def nb201_cell(ops: Sequence[str] = NB201_OPS) -> CellSpec:
    edges, cand = complete_dag(4, ops)
    return CellSpec(num_nodes=4, edges=edges, candidate_ops=cand)


def darts_cell(ops: Sequence[str] = DARTS_OPS) -> CellSpec:
    edges, cand = complete_dag(6, ops, num_inputs=2)
    return CellSpec(num_nodes=6, edges=edges, candidate_ops=cand, num_inputs=2, output="concat")


def micro_cell(ops: Sequence[str] = MICRO_OPS) -> CellSpec:
    edges, cand = complete_dag(3, ops)
    return CellSpec(num_nodes=3, edges=edges, candidate_ops=cand)


def preset(name: str) -> SupernetSpec:
    """Named search spaces.

    ``nb201``: V=4 nodes, 6 edges, 5 ops, per-edge subsets with C=1, 3 blocks of 5 cells.
    ``darts``: 2 input + 4 intermediate nodes, 14 edges, 8 ops, per-node subsets with C=2.
    ``micro``: 3 nodes, 3 edges, ops zero/skip/conv3x3, 27 subnets; the stem is a 1x1
    convolution so that no spatial filtering happens outside the searched cell.
    """
    if name == "nb201":
        return SupernetSpec(nb201_cell(), channels=16, cells_per_block=5, num_blocks=3,
                            num_classes=10, in_channels=3, mode="per-edge", C=1)
    if name == "darts":
        return SupernetSpec(darts_cell(), channels=16, cells_per_block=2, num_blocks=3,
                            num_classes=10, in_channels=3, mode="per-node", C=2)
    if name == "micro":
        return SupernetSpec(micro_cell(), channels=8, cells_per_block=2, num_blocks=1,
                            num_classes=2, in_channels=1, stem_kernel=1, mode="per-edge", C=1)
    raise ConfigError(f"unknown preset {name!r}; choose nb201, darts or micro", "space.preset")


# ------------------------------------------------------------ comparison sets


@dataclass(frozen=True)
class ComparisonSubsets:
    mode: str
    groups: tuple
    C: int
    num_slots: int = field(default=0)

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(tuple(g) for g in self.groups))
        if not self.num_slots:
            object.__setattr__(self, "num_slots", sum(len(g) for g in self.groups))
        flat = sorted(s for g in self.groups for s in g)
        if flat != list(range(self.num_slots)):
            raise ConfigError("comparison subsets must partition the candidate slots", "space.mode")

    def __len__(self):
        return len(self.groups)

    def group_of(self) -> dict[int, int]:
        return {s: h for h, g in enumerate(self.groups) for s in g}

    def count(self) -> int:
        return math.prod(math.comb(len(g), self.C) for g in self.groups)


def comparison_subsets(spec, mode: Optional[str] = None, C: Optional[int] = None) -> ComparisonSubsets:
    """Group candidate slots into comparison subsets.

    ``spec`` may be a :class:`SupernetSpec` or a bare :class:`CellSpec`.
    """
    cell = spec.cell if isinstance(spec, SupernetSpec) else spec
    if mode is None:
        mode = spec.mode if isinstance(spec, SupernetSpec) else "per-edge"
    if C is None:
        C = spec.C if isinstance(spec, SupernetSpec) else (1 if mode == "per-edge" else 2)
    slot_of_edge = []
    start = 0
    for ops in cell.candidate_ops:
        slot_of_edge.append(list(range(start, start + len(ops))))
        start += len(ops)
    if mode == "per-edge":
        groups = slot_of_edge
    elif mode == "per-node":
        groups = []
        for j in range(cell.num_inputs, cell.num_nodes):
            groups.append([s for e, (_, jj) in enumerate(cell.edges) if jj == j for s in slot_of_edge[e]])
    else:
        raise ConfigError(f"mode must be one of {MODES}", "space.mode")
    return ComparisonSubsets(mode=mode, groups=groups, C=C, num_slots=cell.num_slots)


# ----------------------------------------------------------------------- masks


@dataclass(frozen=True)
class Mask:
    """Presence bits over candidate slots (1 = active)."""

    bits: tuple

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise UsageError("mask bits must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def full(cls, num_slots: int) -> "Mask":
        return cls((1,) * num_slots)

    @classmethod
    def from_active(cls, active, num_slots: int) -> "Mask":
        active = set(active)
        return cls(tuple(1 if s in active else 0 for s in range(num_slots)))

    def __len__(self):
        return len(self.bits)

    def __getitem__(self, slot):
        return self.bits[slot]

    def active(self) -> list[int]:
        return [s for s, b in enumerate(self.bits) if b]

    def counts(self, subsets: ComparisonSubsets) -> list[int]:
        return [sum(self.bits[s] for s in g) for g in subsets.groups]

    def validate(self, subsets: ComparisonSubsets) -> None:
        if len(self.bits) != subsets.num_slots:
            raise UsageError(f"mask has {len(self.bits)} bits, space has {subsets.num_slots} slots")
        for h, (n, g) in enumerate(zip(self.counts(subsets), subsets.groups)):
            if not subsets.C <= n <= len(g):
                raise UsageError(f"subset {h} has {n} active candidates, outside [{subsets.C}, {len(g)}]")

    def is_final(self, subsets: ComparisonSubsets) -> bool:
        return len(self.bits) == subsets.num_slots and all(n == subsets.C for n in self.counts(subsets))

    def without(self, slots) -> "Mask":
        drop = set(slots)
        return Mask(tuple(0 if s in drop else b for s, b in enumerate(self.bits)))

    def mask_id(self, subsets: ComparisonSubsets) -> str:
        return "-".join("".join(str(self.bits[s]) for s in g) for g in subsets.groups)

    @classmethod
    def from_id(cls, mask_id: str, subsets: ComparisonSubsets) -> "Mask":
        parts = mask_id.split("-")
        if len(parts) != len(subsets.groups) or any(len(p) != len(g) for p, g in zip(parts, subsets.groups)):
            raise UsageError(f"mask id {mask_id!r} does not match the comparison subsets")
        bits = [0] * subsets.num_slots
        for p, g in zip(parts, subsets.groups):
            for ch, s in zip(p, g):
                bits[s] = int(ch)
        return cls(tuple(bits))

    def to_dict(self, subsets: ComparisonSubsets, fingerprint: str = "") -> dict:
        return {
            "fingerprint": fingerprint,
            "mode": subsets.mode,
            "C": subsets.C,
            "groups": [[self.bits[s] for s in g] for g in subsets.groups],
            "slots": [list(g) for g in subsets.groups],
        }

    @classmethod
    def from_dict(cls, d: dict, subsets: Optional[ComparisonSubsets] = None) -> "Mask":
        groups, slots = d["groups"], d.get("slots")
        if slots is None:
            if subsets is None:
                raise UsageError("mask file lacks slot layout and no subsets were given")
            slots = subsets.groups
        n = sum(len(g) for g in slots)
        bits = [0] * n
        for g_bits, g_slots in zip(groups, slots):
            if len(g_bits) != len(g_slots):
                raise UsageError("mask group length does not match its slot list")
            for b, s in zip(g_bits, g_slots):
                bits[s] = int(b)
        return cls(tuple(bits))


def enumerate_subnets(subsets: ComparisonSubsets, cap: int = DEFAULT_ENUMERATION_CAP) -> Iterator[Mask]:
    """Every mask with exactly C active candidates per subset, lexicographically.

    The first subset varies slowest; within a subset, combinations follow
    :func:`itertools.combinations` order.
    """
    total = subsets.count()
    if total > cap:
        raise UsageError(f"{total} subnets exceed the enumeration cap of {cap}")
    per_group = [list(itertools.combinations(g, subsets.C)) for g in subsets.groups]
    for choice in itertools.product(*per_group):
        yield Mask.from_active([s for combo in choice for s in combo], subsets.num_slots)


def parameterized_slots(cell: CellSpec) -> set[int]:
    return {s for s, (_, _, op) in enumerate(cell.slots()) if op not in PARAMETER_FREE}
