"""Progressive supernet shrinking driven by feature-map importance.

Warm up the full supernet, then repeat: train the current masked subnet for a
few epochs on train+val data, measure each active candidate's importance on a
fixed validation slice, and discard the least important candidates of every
comparison subset until each holds exactly C.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .checkpoint import save_checkpoint
from .config import RunConfig, reserved_count
from .datasets import Dataset, synth_generate
from .errors import NumericalError, UsageError
from .iim import IimReport, accumulate_iim
from .network import Supernet, build_supernet
from .optim import cosine_lr
from .search_space import ComparisonSubsets, Mask
from .tensor import precision
from .training import concat_splits, train_epoch

log = logging.getLogger(__name__)


@dataclass
class SearchState:
    step: int
    reserved: list  # per subset: sorted slot list (A)
    discarded: list  # per subset: slots in discard order (B)
    mask: Mask
    epoch: int = 0

    @classmethod
    def initial(cls, subsets: ComparisonSubsets) -> "SearchState":
        return cls(0, [list(g) for g in subsets.groups], [[] for _ in subsets.groups],
                   Mask.full(subsets.num_slots))

    def check(self, subsets: ComparisonSubsets) -> None:
        for h, g in enumerate(subsets.groups):
            a, b = set(self.reserved[h]), set(self.discarded[h])
            if a & b or a | b != set(g):
                raise UsageError(f"subset {h}: reserved/discarded sets do not partition the subset")


def shrink_step(state: SearchState, report: IimReport, subsets: ComparisonSubsets, r: float) -> SearchState:
    """Discard, per subset, the lowest-importance candidates down to the next reserved count.

    Ties go to the lower slot index (it is discarded first).
    """
    z = state.step + 1
    reserved, discarded, drop = [], [], []
    for h, group in enumerate(subsets.groups):
        active = state.reserved[h]
        missing = [s for s in active if s not in report.values]
        if missing:
            raise UsageError(f"importance report lacks active slots {missing} of subset {h}")
        target = reserved_count(z, len(group), subsets.C, r)
        n_drop = len(active) - target
        if n_drop < 0:
            raise UsageError(f"subset {h}: {len(active)} active but schedule wants {target}")
        ranked = sorted(active, key=lambda s: (report.values[s], s))
        gone = ranked[:n_drop]
        drop += gone
        reserved.append(sorted(set(active) - set(gone)))
        discarded.append(state.discarded[h] + gone)
    return SearchState(z, reserved, discarded, state.mask.without(drop), state.epoch)


@dataclass
class SearchResult:
    final_mask: Mask
    reports: list = field(default_factory=list)
    masks: list = field(default_factory=list)
    log: list = field(default_factory=list)
    model: Optional[Supernet] = None
    epochs: int = 0


def seeds_for(seed: int, n: int = 4) -> list[int]:
    """Independent integer seeds for model init, data order, importance slice, ..."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def iim_slice(data: Dataset, n: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """A fixed, seed-selected subset of the validation split: (images, indices)."""
    idx = np.sort(np.random.default_rng(seed).choice(len(data.val), size=n, replace=False))
    return data.val.images[idx], idx


def _dump_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_search(config: RunConfig, data: Optional[Dataset] = None, out_dir: Optional[str] = None,
               checkpoints: bool = True) -> SearchResult:
    """Run the shrinking search described by ``config`` (methods is-darts / i-darts).

    When ``out_dir`` is given the run directory is written there: config.json,
    mask_step_{z}.json, iim_step_{z}.csv, checkpoint_step_{z}.mnl,
    final_mask.json and log.jsonl.
    """
    if config.method == "darts":
        raise UsageError("run_search implements the shrinking methods; use darts.run_darts")
    spec = config.space
    schedule = config.schedule
    with precision(config.precision):
        model = build_supernet(spec, seeds_for(config.seed)[0])
        subsets = model.subsets
        schedule.check([len(g) for g in subsets.groups], subsets.C)
        warmup, total = schedule.epochs(config.total_epochs)
        data = data if data is not None else synth_generate(config.dataset)
        train_data = concat_splits(data.train, data.val)
        _, data_seed, slice_seed, _ = seeds_for(config.seed)
        rng = np.random.default_rng(data_seed)
        probe_images, probe_idx = iim_slice(data, config.iim_samples, slice_seed)
        fingerprint = spec.fingerprint()

        if out_dir:
            os.makedirs(out_dir, exist_ok=True)
            _dump_json(os.path.join(out_dir, "config.json"), config.to_dict())
        events = []

        def emit(event):
            events.append(event)
            log.debug("%s", event)

        state = SearchState.initial(subsets)
        result = SearchResult(final_mask=state.mask, model=model)
        epoch = 0

        def train(n_epochs):
            nonlocal epoch
            for _ in range(n_epochs):
                lr = cosine_lr(epoch, total, config.hyper)
                try:
                    loss = train_epoch(model, train_data, lr, config.hyper, rng, mask=state.mask,
                                       use_augment=config.dataset.augment)
                except NumericalError as exc:
                    exc.epoch = epoch
                    raise
                emit({"event": "epoch", "epoch": epoch, "loss": loss, "lr": lr, "step": state.step,
                      "active": len(state.mask.active())})
                epoch += 1

        train(warmup)
        for z in range(1, schedule.total_steps + 1):
            train(schedule.interval_epochs)
            report = accumulate_iim(model, state.mask, probe_images, subsets, step=z, indices=probe_idx)
            state = shrink_step(state, report, subsets, schedule.r)
            state.epoch = epoch
            state.check(subsets)
            result.reports.append(report)
            result.masks.append(state.mask)
            emit({"event": "shrink", "step": z, "epoch": epoch,
                  "discarded": [spec.cell.slot_label(s) for b in state.discarded for s in b],
                  "active": len(state.mask.active())})
            if out_dir:
                _dump_json(os.path.join(out_dir, f"mask_step_{z}.json"), state.mask.to_dict(subsets, fingerprint))
                with open(os.path.join(out_dir, f"iim_step_{z}.csv"), "w", newline="") as fh:
                    fh.write(report.to_csv(spec.cell))
                if checkpoints:
                    save_checkpoint(os.path.join(out_dir, f"checkpoint_step_{z}.mnl"), model.state_arrays())

        if not state.mask.is_final(subsets):
            raise UsageError(f"search ended with active counts {state.mask.counts(subsets)}")
        result.final_mask = state.mask
        result.log = events
        result.epochs = epoch
        if out_dir:
            _dump_json(os.path.join(out_dir, "final_mask.json"), state.mask.to_dict(subsets, fingerprint))
            with open(os.path.join(out_dir, "log.jsonl"), "w") as fh:
                for ev in events:
                    fh.write(json.dumps(ev, sort_keys=True) + "\n")
        return result
