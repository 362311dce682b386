"""First-order DARTS: softmax-relaxed edges and alternating bi-level updates."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import functional as F
from .config import RunConfig
from .datasets import Dataset, synth_generate
from .errors import NumericalError, UsageError
from .network import Supernet, build_supernet
from .optim import TrainHyper, cosine_lr
from .search_space import CellSpec, ComparisonSubsets, Mask
from .tensor import Tensor, backward, default_dtype, precision
from .training import batches, train_step

ALPHA_CSV_COLUMNS = ("step", "subset", "candidate", "alpha", "softmax")


class ArchParams:
    """One architecture vector per edge, initialized to zeros.

    In per-edge mode edges and comparison subsets coincide.
    """

    def __init__(self, cell: CellSpec):
        self.vectors = [Tensor(np.zeros(len(ops), dtype=default_dtype()), requires_grad=True)
                        for ops in cell.candidate_ops]

    def __len__(self):
        return len(self.vectors)

    def weights(self) -> list[np.ndarray]:
        out = []
        for v in self.vectors:
            e = np.exp(v.data.astype(np.float64) - v.data.max())
            out.append(e / e.sum())
        return out

    def slot_scores(self) -> np.ndarray:
        """softmax(alpha) of every slot, edge-major like the slot numbering."""
        return np.concatenate(self.weights())

    def slot_alphas(self) -> np.ndarray:
        return np.concatenate([v.data for v in self.vectors]).astype(np.float64)

    def copy(self) -> "ArchParams":
        new = ArchParams.__new__(ArchParams)
        new.vectors = [Tensor(v.data.copy(), requires_grad=True) for v in self.vectors]
        return new


def mixed_edge_forward(x: Tensor, candidates: Sequence, alpha: Tensor, training: bool = True) -> Tensor:
    """softmax(alpha)-weighted sum of the candidate outputs on one edge."""
    if alpha.shape != (len(candidates),):
        raise UsageError(f"alpha has shape {alpha.shape}, edge has {len(candidates)} candidates")
    w = F.softmax(alpha)
    terms = [cand(x, training) * w[k] for k, cand in enumerate(candidates)]
    return F.add_n(terms)


def bilevel_step(model: Supernet, alpha: ArchParams, train_batch, val_batch, hyper: TrainHyper,
                 lr: float, alpha_lr: float) -> tuple[float, float]:
    """Update alpha on the validation batch (weights frozen), then the weights
    on the training batch (alpha frozen).  Returns (train loss, val loss)."""
    xt, yt = train_batch
    xv, yv = val_batch
    if len(yt) == 0 or len(yv) == 0:
        raise UsageError("bilevel_step needs non-empty train and val batches")
    logits = model(Tensor(xv.astype(default_dtype(), copy=False)), alpha=alpha.vectors, training=True)
    val_loss = F.softmax_cross_entropy(logits, yv)
    backward(val_loss, alpha.vectors)
    if alpha_lr:
        for v in alpha.vectors:
            v.data -= (alpha_lr * v.grad).astype(v.data.dtype)
    for v in alpha.vectors:
        v.grad = None
    train_loss = train_step(model, xt, yt, lr, hyper, alpha=alpha.vectors)
    for v in alpha.vectors:
        v.grad = None
    return train_loss, val_loss.item()


def select_by_alpha(alpha: ArchParams, subsets: ComparisonSubsets) -> Mask:
    """Keep the C highest-weighted candidates of every subset (ties: lower slot)."""
    scores = alpha.slot_scores()
    active = []
    for g in subsets.groups:
        ranked = sorted(g, key=lambda s: (-scores[s], s))
        active += ranked[:subsets.C]
    return Mask.from_active(active, subsets.num_slots)


def swap(mask: Mask, out_slot: int, in_slot: int) -> Mask:
    """Replace active ``out_slot`` by ``in_slot``."""
    if out_slot == in_slot:
        return mask
    bits = list(mask.bits)
    bits[out_slot], bits[in_slot] = 0, 1
    return Mask(tuple(bits))


@dataclass
class SwapResult:
    accuracies: list
    masks: list
    swaps: list  # (winner slot, loser slot)
    violations: int


def swap_experiment(winners: Mask, scores: Sequence[float], subsets: ComparisonSubsets, table,
                    num_swaps: Optional[int] = None) -> SwapResult:
    """Repeatedly replace the highest-scored remaining winner by the highest-scored
    unused loser of the same subset, looking up each subnet in the oracle table.

    A violation is a swap after which the oracle accuracy goes up.
    """
    group_of = subsets.group_of()
    remaining = sorted(winners.active(), key=lambda s: (-scores[s], s))
    used: set = set()
    plan = []
    for w in remaining:
        pool = [s for s in subsets.groups[group_of[w]] if not winners[s] and s not in used]
        if pool:
            loser = min(pool, key=lambda s: (-scores[s], s))
            used.add(loser)
            plan.append((w, loser))
    if num_swaps is None:
        num_swaps = len(plan)
    if num_swaps > len(plan):
        raise UsageError(f"only {len(plan)} swaps are possible, {num_swaps} requested")
    mask = winners
    masks = [mask]
    accs = [table.accuracy(mask, subsets)]
    for w, loser in plan[:num_swaps]:
        mask = swap(mask, w, loser)
        masks.append(mask)
        accs.append(table.accuracy(mask, subsets))
    violations = sum(1 for a, b in zip(accs, accs[1:]) if b > a)
    return SwapResult(accs, masks, plan[:num_swaps], violations)


@dataclass
class DartsResult:
    final_mask: Mask
    alpha: ArchParams
    trajectory: list = field(default_factory=list)  # rows of ALPHA_CSV_COLUMNS
    model: Optional[Supernet] = None
    log: list = field(default_factory=list)


def _trajectory_rows(step, alpha: ArchParams, subsets: ComparisonSubsets, cell: CellSpec):
    scores = alpha.slot_scores()
    alphas = alpha.slot_alphas()
    group_of = subsets.group_of()
    return [(step, group_of[s], cell.slot_label(s), float(alphas[s]), float(scores[s]))
            for s in range(subsets.num_slots)]


def trajectory_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ALPHA_CSV_COLUMNS)
    for step, h, label, a, p in rows:
        w.writerow((step, h, label, repr(a), repr(p)))
    return buf.getvalue()


def run_darts(config: RunConfig, data: Optional[Dataset] = None, out_dir: Optional[str] = None) -> DartsResult:
    """First-order DARTS on ``config``: weights see the train split, alpha the val split."""
    from .shrink import seeds_for

    spec = config.space
    with precision(config.precision):
        init_seed, data_seed, _, _ = seeds_for(config.seed)
        model = build_supernet(spec, init_seed)
        subsets = model.subsets
        alpha = ArchParams(spec.cell)
        data = data if data is not None else synth_generate(config.dataset)
        rng = np.random.default_rng(data_seed)
        rows = _trajectory_rows(0, alpha, subsets, spec.cell)
        events = []
        total = config.total_epochs
        for epoch in range(total):
            lr = cosine_lr(epoch, total, config.hyper)
            losses = []
            pairs = zip(batches(data.train, config.hyper.batch_size, rng),
                        batches(data.val, config.hyper.batch_size, rng))
            for tb, vb in pairs:
                try:
                    losses.append(bilevel_step(model, alpha, tb, vb, config.hyper, lr, config.alpha_lr))
                except NumericalError as exc:
                    exc.epoch = epoch
                    raise
            tl, vl = (np.mean([l[0] for l in losses]), np.mean([l[1] for l in losses])) if losses else (np.nan, np.nan)
            events.append({"event": "epoch", "epoch": epoch, "loss": float(tl), "val_loss": float(vl), "lr": lr})
            rows += _trajectory_rows(epoch + 1, alpha, subsets, spec.cell)
        final = select_by_alpha(alpha, subsets)
        result = DartsResult(final, alpha, rows, model, events)
        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, "config.json"), "w") as fh:
                json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
                fh.write("\n")
            with open(os.path.join(out_dir, "alpha.csv"), "w", newline="") as fh:
                fh.write(trajectory_csv(rows))
            with open(os.path.join(out_dir, "final_mask.json"), "w") as fh:
                json.dump(final.to_dict(subsets, spec.fingerprint()), fh, indent=2, sort_keys=True)
                fh.write("\n")
            with open(os.path.join(out_dir, "log.jsonl"), "w") as fh:
                for ev in events:
                    fh.write(json.dumps(ev, sort_keys=True) + "\n")
        return result
