"""Information-based importance of feature maps.

For a feature map with C channels and p = H*W pixels the importance is

    M = sum over pixels m of var_m / 3

where var_m is the population variance of the C channel values at pixel m.
A map whose channels agree everywhere (in particular the output of the zero
operation) scores 0; larger values mean the map is further from noise.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionError, MeasurementError, UsageError
from .search_space import ComparisonSubsets, Mask
from .tensor import Tensor, default_dtype, no_grad

CSV_COLUMNS = ("step", "subset_id", "edge", "candidate_kind", "iim", "n_samples")


def _as_array(fm) -> np.ndarray:
    return fm.data if isinstance(fm, Tensor) else np.asarray(fm)


def iim_of_feature_map(fm) -> float:
    """Importance of one C x H x W feature map, accumulated in float64."""
    arr = _as_array(fm).astype(np.float64)
    if arr.ndim != 3:
        raise DimensionError(f"expected a C x H x W feature map, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise MeasurementError(f"channel variance needs at least 2 channels, got {arr.shape[0]}")
    return float(arr.var(axis=0).sum() / 3.0)


def iim_per_sample(batch) -> np.ndarray:
    """Importance of each map in an N x C x H x W batch."""
    arr = _as_array(batch).astype(np.float64)
    if arr.ndim != 4:
        raise DimensionError(f"expected N x C x H x W, got shape {arr.shape}")
    if arr.shape[1] < 2:
        raise MeasurementError(f"channel variance needs at least 2 channels, got {arr.shape[1]}")
    return arr.var(axis=1).sum(axis=(1, 2)) / 3.0


def node_additivity_diagnostic(fms: Sequence) -> tuple[float, float]:
    """(importance of the summed maps, sum of the individual importances).

    The two agree in expectation when the summands are independent; for
    correlated maps they differ (two copies of X give 4x, not 2x).
    """
    arrays = [_as_array(f).astype(np.float64) for f in fms]
    if not arrays:
        raise UsageError("need at least one feature map")
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise DimensionError(f"feature map shape {a.shape} differs from {shape}")
    total = arrays[0].copy()
    for a in arrays[1:]:
        total += a
    return iim_of_feature_map(total), float(sum(iim_of_feature_map(a) for a in arrays))


@dataclass
class IimReport:
    step: int
    values: dict  # slot -> mean importance, active slots only
    n_samples: int
    subsets: Optional[ComparisonSubsets] = field(default=None, repr=False)

    def group_values(self, h: int) -> list[tuple[int, float]]:
        return [(s, self.values[s]) for s in self.subsets.groups[h] if s in self.values]

    def scaled(self, factor: float) -> "IimReport":
        return IimReport(self.step, {s: v * factor for s, v in self.values.items()}, self.n_samples, self.subsets)

    def rows(self, cell) -> list[tuple]:
        slots = cell.slots()
        group_of = self.subsets.group_of()
        out = []
        for s in sorted(self.values):
            e, _, kind = slots[s]
            i, j = cell.edges[e]
            out.append((self.step, group_of[s], f"{i}->{j}", kind, self.values[s], self.n_samples))
        return out

    def to_csv(self, cell) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows(cell):
            w.writerow(row[:4] + (repr(float(row[4])),) + row[5:])
        return buf.getvalue()


def read_iim_csv(path, cell) -> IimReport:
    """Inverse of :meth:`IimReport.to_csv` (subsets are not restored)."""
    lookup = {}
    for s, (e, _, kind) in enumerate(cell.slots()):
        i, j = cell.edges[e]
        lookup[(f"{i}->{j}", kind)] = s
    values, step, n = {}, 0, 0
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            step, n = int(row["step"]), int(row["n_samples"])
            values[lookup[(row["edge"], row["candidate_kind"])]] = float(row["iim"])
    return IimReport(step, values, n)


def accumulate_iim(model, mask: Optional[Mask], samples, subsets: ComparisonSubsets,
                   step: int = 0, indices: Optional[Sequence[int]] = None) -> IimReport:
    """Mean importance of every active candidate over ``samples``.

    The model runs in evaluation mode one sample at a time; each candidate's
    value is averaged over all stacked cells and all samples.  Samples are
    reduced in increasing ``indices`` order (defaults to their position), so
    the result does not depend on the order they are passed in.
    """
    images = np.asarray(samples)
    if images.ndim != 4 or len(images) == 0:
        raise UsageError("need a non-empty N x C x H x W sample array")
    idx = np.arange(len(images)) if indices is None else np.asarray(indices)
    if len(idx) != len(images):
        raise UsageError("indices and samples differ in length")
    order = np.argsort(idx, kind="stable")
    sums: dict[int, float] = {}
    counts: dict[int, int] = {}
    dtype = default_dtype()
    with no_grad():
        for pos in order:
            probe: dict = {}
            model(Tensor(images[pos:pos + 1].astype(dtype, copy=False)), mask=mask, training=False, probe=probe)
            for slot, outs in probe.items():
                for out in outs:
                    sums[slot] = sums.get(slot, 0.0) + float(iim_per_sample(out)[0])
                    counts[slot] = counts.get(slot, 0) + 1
    values = {s: sums[s] / counts[s] for s in sorted(sums)}
    return IimReport(step=step, values=values, n_samples=len(images), subsets=subsets)
