"""Run configuration: schema, presets and validation.

A config file is a JSON object.  ``{"preset": "micro"}`` alone is valid;
any other key overrides the preset, nested objects are merged one level deep::

    {
      "preset": "micro",
      "method": "is-darts",
      "seed": 3,
      "schedule": {"r": 0.5, "interval_epochs": 2},
      "hyper": {"batch_size": 32}
    }
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

from .datasets import DatasetSpec
from .errors import ConfigError
from .optim import TrainHyper
from .search_space import SupernetSpec, comparison_subsets

METHODS = ("is-darts", "darts", "i-darts")
_EPS = 1e-9


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5 + _EPS))


@dataclass(frozen=True)
class ShrinkSchedule:
    r: float = 0.25
    interval_epochs: int = 2
    warmup_epochs: Optional[int] = None

    def __post_init__(self):
        if not (isinstance(self.r, (int, float)) and 0 < self.r <= 1):
            raise ConfigError("shrink rate must lie in (0, 1]", "schedule.r")
        if int(self.interval_epochs) != self.interval_epochs or self.interval_epochs < 1:
            raise ConfigError("must be a positive integer", "schedule.interval_epochs")
        if self.warmup_epochs is not None and (int(self.warmup_epochs) != self.warmup_epochs
                                               or self.warmup_epochs < 0):
            raise ConfigError("must be a non-negative integer", "schedule.warmup_epochs")

    @property
    def total_steps(self) -> int:
        return max(1, _round_half_up(1.0 / self.r))

    def reserved_counts(self, subset_size: int, C: int) -> list[int]:
        return [reserved_count(z, subset_size, C, self.r) for z in range(self.total_steps + 1)]

    def check(self, subset_sizes, C: int) -> None:
        """Reject schedules whose reserved counts stall before reaching C."""
        for n in sorted(set(subset_sizes)):
            seq = self.reserved_counts(n, C)
            for a, b in zip(seq, seq[1:]):
                if not b < a:
                    raise ConfigError(
                        f"reserved counts {seq} for a subset of {n} candidates are not strictly "
                        f"decreasing; choose r >= 1/{n - C}",
                        "schedule.r",
                    )

    def epochs(self, total_epochs: int) -> tuple[int, int]:
        """(warmup epochs, total epochs) after filling in the default warmup."""
        shrink = self.interval_epochs * self.total_steps
        warm = total_epochs - shrink if self.warmup_epochs is None else self.warmup_epochs
        if warm < 0:
            raise ConfigError(
                f"total_epochs={total_epochs} is shorter than the {shrink} shrinking epochs",
                "total_epochs",
            )
        return warm, warm + shrink

    def to_dict(self) -> dict:
        return {"r": self.r, "interval_epochs": self.interval_epochs, "warmup_epochs": self.warmup_epochs}


def reserved_count(z: int, subset_size: int, C: int, r: float) -> int:
    """Candidates kept in a subset of ``subset_size`` after ``z`` shrink steps.

    ``round(size - z*r*(size - C))`` rounded half up, pinned to the exact
    endpoints: z=0 keeps everything, z=round(1/r) keeps exactly C.
    """
    total = max(1, _round_half_up(1.0 / r))
    if not 0 <= z <= total:
        raise ConfigError(f"step {z} outside [0, {total}]", "schedule")
    if z == 0:
        return subset_size
    if z == total:
        return C
    return max(C, _round_half_up(subset_size - z * r * (subset_size - C)))


@dataclass(frozen=True)
class RunConfig:
    space: SupernetSpec
    dataset: DatasetSpec
    method: str = "is-darts"
    schedule: ShrinkSchedule = field(default_factory=ShrinkSchedule)
    hyper: TrainHyper = field(default_factory=TrainHyper)
    total_epochs: int = 30
    iim_samples: int = 200
    alpha_lr: float = 3e-4
    seed: int = 0
    out: str = "runs/search"
    oracle_steps: int = 200
    oracle_cap: int = 256
    precision: str = "float32"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"must be one of {METHODS}", "method")
        if self.method == "i-darts" and self.schedule.r != 1:
            object.__setattr__(self, "schedule", replace(self.schedule, r=1.0))
        if self.space.num_classes != self.dataset.classes:
            raise ConfigError(
                f"space has {self.space.num_classes} classes, dataset has {self.dataset.classes}",
                "space.num_classes",
            )
        if self.space.in_channels != self.dataset.channels:
            raise ConfigError(
                f"space expects {self.space.in_channels} input channels, dataset has {self.dataset.channels}",
                "space.in_channels",
            )
        if self.iim_samples < 1:
            raise ConfigError("must be >= 1", "iim_samples")
        if self.iim_samples > self.dataset.val:
            raise ConfigError(f"exceeds the {self.dataset.val} validation samples", "iim_samples")
        if self.alpha_lr < 0:
            raise ConfigError("must be >= 0", "alpha_lr")
        if self.total_epochs < 1:
            raise ConfigError("must be >= 1", "total_epochs")
        if self.precision not in ("float32", "float64"):
            raise ConfigError("must be float32 or float64", "precision")
        if self.method != "darts":
            subsets = comparison_subsets(self.space)
            self.schedule.check([len(g) for g in subsets.groups], subsets.C)
            self.schedule.epochs(self.total_epochs)

    def to_dict(self) -> dict:
        return {
            "space": self.space.to_dict(),
            "dataset": self.dataset.to_dict(),
            "method": self.method,
            "schedule": self.schedule.to_dict(),
            "hyper": self.hyper.to_dict(),
            "total_epochs": self.total_epochs,
            "iim_samples": self.iim_samples,
            "alpha_lr": self.alpha_lr,
            "seed": self.seed,
            "out": self.out,
            "oracle_steps": self.oracle_steps,
            "oracle_cap": self.oracle_cap,
            "precision": self.precision,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = copy.deepcopy(d)
        if "preset" in d:
            name = d.pop("preset")
            base = preset_dict(name)
            for k, v in d.items():
                if isinstance(v, dict) and isinstance(base.get(k), dict) and k != "space":
                    base[k].update(v)
                elif k == "space" and isinstance(v, dict) and "preset" not in v and "cell" not in v:
                    base[k].update(v)
                else:
                    base[k] = v
            d = base
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown field(s) {sorted(unknown)}")
        for req in ("space", "dataset"):
            if req not in d:
                raise ConfigError("missing required field", req)
        kwargs = dict(d)
        kwargs["space"] = SupernetSpec.from_dict(d["space"])
        kwargs["dataset"] = _sub(DatasetSpec, d["dataset"], "dataset")
        if "schedule" in d:
            kwargs["schedule"] = _sub(ShrinkSchedule, d["schedule"], "schedule")
        if "hyper" in d:
            kwargs["hyper"] = _sub(TrainHyper, d["hyper"], "hyper")
        for name, typ in (("total_epochs", int), ("iim_samples", int), ("seed", int),
                          ("oracle_steps", int), ("oracle_cap", int), ("alpha_lr", float),
                          ("method", str), ("out", str), ("precision", str)):
            if name in kwargs:
                v = kwargs[name]
                ok = isinstance(v, typ) and not isinstance(v, bool)
                if typ is float:
                    ok = isinstance(v, (int, float)) and not isinstance(v, bool)
                if not ok:
                    raise ConfigError(f"expected {typ.__name__}, got {type(v).__name__}", name)
        return cls(**kwargs)


def _sub(cls, d, path):
    if not isinstance(d, dict):
        raise ConfigError("expected an object", path)
    known = {f.name for f in fields(cls)}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown field(s) {sorted(unknown)}", path)
    try:
        return cls(**d)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), path) from None


def preset_dict(name: str) -> dict:
    """Plain-dict run presets.

    ``nb201``: shrink rate 0.25, 2-epoch interval, 30 epochs, 200 importance samples.
    ``darts``: shrink rate 0.143, 3-epoch interval, 50 epochs, 600 importance samples.
    ``micro``: desk-scale 27-subnet space on two-class oriented bars.
    """
    if name == "nb201":
        return {
            "space": {"preset": "nb201"},
            "dataset": {"kind": "oriented-bars", "classes": 10, "height": 16, "width": 16,
                        "channels": 3, "train": 5000, "val": 5000, "test": 1000},
            "schedule": {"r": 0.25, "interval_epochs": 2},
            "hyper": {"batch_size": 64},
            "total_epochs": 30,
            "iim_samples": 200,
        }
    if name == "darts":
        return {
            "space": {"preset": "darts"},
            "dataset": {"kind": "oriented-bars", "classes": 10, "height": 16, "width": 16,
                        "channels": 3, "train": 5000, "val": 5000, "test": 1000},
            "schedule": {"r": 0.143, "interval_epochs": 3},
            "hyper": {"batch_size": 64},
            "total_epochs": 50,
            "iim_samples": 600,
        }
    if name == "micro":
        return {
            "space": {"preset": "micro"},
            "dataset": {"kind": "oriented-bars", "classes": 2, "height": 8, "width": 8,
                        "channels": 1, "train": 400, "val": 300, "test": 400, "noise": 0.7},
            "schedule": {"r": 0.5, "interval_epochs": 2},
            "hyper": {"batch_size": 32},
            "total_epochs": 12,
            "iim_samples": 200,
            "alpha_lr": 0.3,
        }
    raise ConfigError(f"unknown preset {name!r}; choose nb201, darts or micro", "preset")


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}") from None
    return RunConfig.from_dict(raw)
