"""Exhaustive ground truth for micro search spaces.

Every subnet is materialized from a freshly seeded supernet, trained for a
fixed number of optimizer steps on the train split and scored on the val and
test splits.
"""

from __future__ import annotations

import csv
import json
import logging
import zlib
from dataclasses import asdict, dataclass
from typing import Iterable, Optional

import numpy as np
from scipy import stats

from .datasets import Dataset
from .errors import FingerprintError, NumericalError, OracleLookupError, UsageError
from .network import build_supernet, materialize_subnet
from .optim import TrainHyper, cosine_lr
from .search_space import Mask, SupernetSpec, comparison_subsets, enumerate_subnets
from .tensor import precision
from .training import batches, evaluate, train_step

log = logging.getLogger(__name__)

DEFAULT_CAP = 256


@dataclass(frozen=True)
class OracleRecord:
    mask_id: str
    val_acc: float
    test_acc: float
    train_steps: int
    seed: int
    final_loss: float
    flagged: bool = False


class OracleTable:
    def __init__(self, fingerprint: str, records: Iterable[OracleRecord], metric: str = "test_acc"):
        self.fingerprint = fingerprint
        self.records = {r.mask_id: r for r in records}
        self.metric = metric

    def __len__(self):
        return len(self.records)

    def __contains__(self, mask_id):
        return mask_id in self.records

    def _key(self, mask, subsets=None) -> str:
        if isinstance(mask, str):
            return mask
        if subsets is None:
            raise UsageError("need comparison subsets to look up a Mask")
        return mask.mask_id(subsets)

    def accuracy(self, mask, subsets=None, metric: Optional[str] = None) -> float:
        key = self._key(mask, subsets)
        try:
            rec = self.records[key]
        except KeyError:
            raise OracleLookupError(f"mask {key} is not in the oracle table") from None
        return getattr(rec, metric or self.metric)

    def accuracies(self, metric: Optional[str] = None) -> dict[str, float]:
        return {k: getattr(r, metric or self.metric) for k, r in self.records.items()}

    def best(self, metric: Optional[str] = None) -> str:
        accs = self.accuracies(metric)
        top = max(accs.values())
        return min(k for k, v in accs.items() if v == top)

    def check_fingerprint(self, fingerprint: str) -> None:
        if fingerprint and fingerprint != self.fingerprint:
            raise FingerprintError(f"search-space fingerprint {fingerprint} does not match table {self.fingerprint}")

    def save(self, path) -> None:
        with open(path, "w") as fh:
            for key in sorted(self.records):
                rec = dict(asdict(self.records[key]), fingerprint=self.fingerprint)
                fh.write(json.dumps(rec, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "OracleTable":
        records, fps = [], set()
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                d = json.loads(line)
                fps.add(d.pop("fingerprint"))
                records.append(OracleRecord(**d))
        if len(fps) > 1:
            raise FingerprintError(f"table mixes fingerprints {sorted(fps)}")
        return cls(fps.pop() if fps else "", records)

    def to_csv(self, path) -> None:
        cols = ["mask_id", "val_acc", "test_acc", "train_steps", "seed", "final_loss", "flagged"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for key in sorted(self.records):
                rec = asdict(self.records[key])
                w.writerow([rec[c] for c in cols])


def subnet_seed(seed: int, mask_id: str) -> int:
    """Seed for one subnet, derived from the global seed and the mask id."""
    return int(np.random.SeedSequence([seed, zlib.crc32(mask_id.encode())]).generate_state(1)[0])


def train_subnet(spec: SupernetSpec, mask: Mask, data: Dataset, steps: int, hyper: TrainHyper,
                 seed: int) -> tuple:
    """Train one materialized subnet; returns (network, final loss, flagged)."""
    net = materialize_subnet(build_supernet(spec, seed), mask)
    rng = np.random.default_rng(seed)
    done, loss, flagged = 0, float("nan"), False
    while done < steps and not flagged:
        for images, labels in batches(data.train, hyper.batch_size, rng):
            lr = cosine_lr(done, steps, hyper)
            try:
                loss = train_step(net, images, labels, lr, hyper)
            except NumericalError:
                flagged = True
                break
            done += 1
            if done >= steps:
                break
    return net, loss, flagged


def build_oracle(spec: SupernetSpec, data: Dataset, train_steps: int = 200, seed: int = 0,
                 hyper: Optional[TrainHyper] = None, cap: int = DEFAULT_CAP,
                 dtype: str = "float32") -> OracleTable:
    hyper = hyper or TrainHyper(batch_size=32)
    subsets = comparison_subsets(spec)
    count = subsets.count()
    if count > cap:
        raise UsageError(f"{count} subnets exceed the oracle cap of {cap}")
    records = []
    with precision(dtype):
        for mask in enumerate_subnets(subsets, cap):
            mid = mask.mask_id(subsets)
            s = subnet_seed(seed, mid)
            net, loss, flagged = train_subnet(spec, mask, data, train_steps, hyper, s)
            if flagged:
                val_acc = test_acc = 0.0
            else:
                val_acc, test_acc = evaluate(net, data.val), evaluate(net, data.test)
            log.info("oracle %s val=%.4f test=%.4f", mid, val_acc, test_acc)
            records.append(OracleRecord(mid, val_acc, test_acc, train_steps, s,
                                        float(loss) if np.isfinite(loss) else float("nan"), flagged))
    return OracleTable(spec.fingerprint(), records)


def regret(mask, table: OracleTable, subsets=None, metric: Optional[str] = None) -> float:
    """Best accuracy in the table minus the accuracy of ``mask``."""
    acc = table.accuracy(mask, subsets, metric)
    return max(table.accuracies(metric).values()) - acc


def rank_correlation(scores: dict, table: OracleTable, metric: Optional[str] = None) -> float:
    """Kendall tau-b between ``scores`` (mask id -> score) and table accuracies."""
    accs = table.accuracies(metric)
    keys = sorted(k for k in scores if k in accs)
    if len(keys) < 2:
        raise UsageError("rank correlation needs at least 2 scored table entries")
    return kendall_tau_b([scores[k] for k in keys], [accs[k] for k in keys])


def kendall_tau_b(x, y) -> float:
    """Kendall tau-b; 0 when either ranking is constant."""
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) < 2:
        raise UsageError("rank correlation needs at least 2 entries")
    if np.all(x == x[0]) or np.all(y == y[0]):
        return 0.0
    return float(stats.kendalltau(x, y, variant="b").statistic)
