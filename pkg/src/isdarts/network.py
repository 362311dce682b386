"""Supernets built from a :class:`SupernetSpec`, and materialized subnets.

Layout: stem (conv + norm) -> blocks of stacked cells, separated by fixed
stride-2 reduction blocks that double the channel count -> norm, ReLU,
global average pooling, linear classifier.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from . import functional as F
from .errors import DimensionError, UsageError
from .ops import NormState, OpBlock, OperationDescriptor, describe, kaiming_uniform
from .optim import Parameter
from .search_space import ComparisonSubsets, Mask, SupernetSpec, comparison_subsets
from .tensor import Tensor


class Cell:
    def __init__(self, spec: SupernetSpec, channels: int, c_prev_prev: int, c_prev: int,
                 rng: np.random.Generator, prefix: str):
        cell = spec.cell
        self.cell = cell
        self.channels = channels
        self.preprocess: list[Optional[OpBlock]] = []
        ins = [c_prev] if cell.num_inputs == 1 else [c_prev_prev, c_prev]
        for n, c_in in enumerate(ins):
            if cell.num_inputs == 2 or c_in != channels:
                desc = OperationDescriptor("conv1x1", c_in=c_in, c_out=channels)
                self.preprocess.append(OpBlock(desc, rng, f"{prefix}pre{n}."))
            else:
                self.preprocess.append(None)
        self.blocks: dict[int, OpBlock] = {}
        for slot, (e, k, kind) in enumerate(cell.slots()):
            self.blocks[slot] = OpBlock(describe(kind, channels), rng, f"{prefix}s{slot}.")
        n_inter = cell.num_nodes - cell.num_inputs
        self.out_channels = channels * n_inter if cell.output == "concat" else channels

    def blocks_list(self):
        return [b for b in self.preprocess if b is not None] + [self.blocks[s] for s in sorted(self.blocks)]

    def forward(self, s0: Tensor, s1: Tensor, mask: Optional[Mask], alpha_w, training: bool,
                probe: Optional[dict]) -> Tensor:
        cell = self.cell
        raw = [s1] if cell.num_inputs == 1 else [s0, s1]
        nodes = [pre(x, training) if pre is not None else x for pre, x in zip(self.preprocess, raw)]
        slot = 0
        incoming: dict[int, list] = {j: [] for j in range(cell.num_inputs, cell.num_nodes)}
        for e, ((i, j), ops) in enumerate(zip(cell.edges, cell.candidate_ops)):
            incoming[j].append((e, i, slot, len(ops)))
            slot += len(ops)
        for j in range(cell.num_inputs, cell.num_nodes):
            terms = []
            for e, i, start, n_ops in incoming[j]:
                for k in range(n_ops):
                    s = start + k
                    if mask is not None and not mask[s]:
                        continue
                    block = self.blocks.get(s)
                    if block is None:
                        continue
                    out = block(nodes[i], training)
                    if probe is not None:
                        probe.setdefault(s, []).append(out.data)
                    if block.desc.kind == "zero":
                        continue
                    if alpha_w is not None:
                        out = out * alpha_w[e][k]
                    terms.append(out)
            if terms:
                try:
                    nodes.append(F.add_n(terms))
                except DimensionError as exc:
                    raise DimensionError(f"node {j}: edge outputs disagree in shape ({exc})") from None
            else:
                ref = nodes[0]
                nodes.append(Tensor(np.zeros((ref.shape[0], self.channels) + ref.shape[2:], dtype=ref.dtype)))
        if cell.output == "concat":
            return F.concat(nodes[cell.num_inputs:], axis=1)
        return nodes[-1]


class Supernet:
    """All candidates of every cell, trained with weight sharing across the mask."""

    def __init__(self, spec: SupernetSpec, seed: int = 0):
        self.spec = spec
        self.subsets: ComparisonSubsets = comparison_subsets(spec)
        rng = np.random.default_rng(seed)
        c = spec.channels
        k = spec.stem_kernel
        self.stem_w = Parameter(kaiming_uniform(rng, (c, spec.in_channels, k, k), spec.in_channels * k * k),
                                "stem.w")
        self.stem_norm = NormState(c, name="stem.bn")
        self.cells: list[Cell] = []
        self.reductions: dict[int, OpBlock] = {}
        c_pp, c_p = c, c
        idx = 0
        for b in range(spec.num_blocks):
            if b > 0:
                desc = OperationDescriptor("conv3x3", c_in=c_p, c_out=2 * c, stride=2)
                c *= 2
                self.reductions[idx] = OpBlock(desc, rng, f"red{b}.")
                c_pp, c_p = c, c
            for _ in range(spec.cells_per_block):
                cell = Cell(spec, c, c_pp, c_p, rng, f"cell{idx}.")
                self.cells.append(cell)
                c_pp, c_p = c_p, cell.out_channels
                idx += 1
        self.head_norm = NormState(c_p, name="head.bn")
        self.classifier = OpBlock(OperationDescriptor("linear", c_in=c_p, c_out=spec.num_classes), rng, "head.fc.")
        self.fixed_mask: Optional[Mask] = None

    # ------------------------------------------------------------- bookkeeping

    def _blocks(self):
        out = []
        for idx, cell in enumerate(self.cells):
            if idx in self.reductions:
                out.append(self.reductions[idx])
            out += cell.blocks_list()
        out.append(self.classifier)
        return out

    def parameters(self) -> list[Parameter]:
        params = [self.stem_w]
        for block in self._blocks():
            params += block.all_params()
        params += self.stem_norm.params() + self.head_norm.params()
        return params

    def norm_states(self) -> list[NormState]:
        norms = [self.stem_norm]
        for block in self._blocks():
            norms += block.norms
        norms.append(self.head_norm)
        return norms

    def named_parameters(self) -> dict[str, Parameter]:
        return {p.name: p for p in self.parameters()}

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Every parameter and running statistic, by name (for checkpoints)."""
        out = {p.name: p.data for p in self.parameters()}
        for n in self.norm_states():
            out[f"{n.name}.running_mean"] = n.running_mean
            out[f"{n.name}.running_var"] = n.running_var
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        targets = self.state_arrays()
        missing = set(targets) - set(arrays)
        if missing:
            raise UsageError(f"checkpoint lacks {sorted(missing)[:5]}")
        for name, dst in targets.items():
            src = arrays[name]
            if src.shape != dst.shape:
                raise DimensionError(f"{name}: checkpoint shape {src.shape} != model shape {dst.shape}")
            dst[...] = src

    # ----------------------------------------------------------------- forward

    def forward(self, x, mask: Optional[Mask] = None, alpha: Optional[Sequence[Tensor]] = None,
                training: bool = True, probe: Optional[dict] = None) -> Tensor:
        """Logits for a batch ``x`` of shape (N, in_channels, H, W).

        ``mask`` disables candidate slots (they are not computed at all);
        ``alpha`` (one vector per edge) switches every edge to the softmax-weighted
        mixture; ``probe`` collects each evaluated candidate's output per slot.
        """
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise DimensionError(f"expected input (N, {self.spec.in_channels}, H, W), got {x.shape}")
        if mask is None:
            mask = self.fixed_mask
        if mask is not None and len(mask) != self.subsets.num_slots:
            raise UsageError(f"mask has {len(mask)} bits, supernet has {self.subsets.num_slots} slots")
        alpha_w = None
        if alpha is not None:
            if len(alpha) != len(self.spec.cell.edges):
                raise UsageError(f"expected {len(self.spec.cell.edges)} alpha vectors, got {len(alpha)}")
            alpha_w = []
            for e, a in enumerate(alpha):
                n_ops = len(self.spec.cell.candidate_ops[e])
                if a.shape != (n_ops,):
                    raise UsageError(f"alpha[{e}] has shape {a.shape}, edge has {n_ops} candidates")
                w = F.softmax(a)
                alpha_w.append([w[k] for k in range(n_ops)])
        h = self.stem_norm(F.conv2d(x, self.stem_w.value, 1, self.spec.stem_kernel // 2), training)
        s0 = s1 = h
        for idx, cell in enumerate(self.cells):
            if idx in self.reductions:
                s1 = self.reductions[idx](s1, training)
                s0 = s1
            s0, s1 = s1, cell.forward(s0, s1, mask, alpha_w, training, probe)
        h = F.relu(self.head_norm(s1, training))
        return self.classifier(F.global_avg_pool(h), training)

    __call__ = forward

    def copy(self) -> "Supernet":
        new = Supernet.__new__(Supernet)
        new.spec, new.subsets = self.spec, self.subsets
        new.stem_w = Parameter(self.stem_w.data.copy(), self.stem_w.name)
        new.stem_w.momentum_buffer = self.stem_w.momentum_buffer.copy()
        new.stem_norm = self.stem_norm.copy()
        new.head_norm = self.head_norm.copy()
        new.classifier = self.classifier.copy()
        new.reductions = {i: b.copy() for i, b in self.reductions.items()}
        new.cells = []
        for cell in self.cells:
            c = Cell.__new__(Cell)
            c.cell, c.channels, c.out_channels = cell.cell, cell.channels, cell.out_channels
            c.preprocess = [None if b is None else b.copy() for b in cell.preprocess]
            c.blocks = {s: b.copy() for s, b in cell.blocks.items()}
            new.cells.append(c)
        new.fixed_mask = self.fixed_mask
        return new


def build_supernet(spec: SupernetSpec, seed: int = 0) -> Supernet:
    return Supernet(spec, seed)


def materialize_subnet(supernet: Supernet, final_mask: Mask) -> Supernet:
    """Standalone network holding only the active candidates of ``final_mask``.

    Weights and running statistics are copied, so the result computes exactly
    what the masked supernet computes.
    """
    if not final_mask.is_final(supernet.subsets):
        raise UsageError(
            f"mask is not fully shrunk: active counts {final_mask.counts(supernet.subsets)}, "
            f"need {supernet.subsets.C} per subset"
        )
    net = supernet.copy()
    for cell in net.cells:
        cell.blocks = {s: b for s, b in cell.blocks.items() if final_mask[s]}
    net.fixed_mask = None
    return net
