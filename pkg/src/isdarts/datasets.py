"""Synthetic image-classification tasks and an IDX file reader/writer.

Both generators produce classes that agree in their global and per-channel
pixel means, so a linear readout of the globally averaged image sits at
chance.  For ``oriented-bars`` with two classes the second class is the exact
transpose of a sample drawn for the first, so every network built only from
pixelwise maps, symmetric pooling and global pooling cannot tell them apart.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, FormatError

GENERATORS = ("oriented-bars", "checker-frequency")
IMAGE_MAGIC = {3: 0x00000803, 4: 0x00000804}
LABEL_MAGIC = 0x00000801


class Split(NamedTuple):
    images: np.ndarray  # (N, C, H, W), values in [0, 1]
    labels: np.ndarray  # (N,) int64

    def __len__(self):
        return len(self.labels)


class Dataset(NamedTuple):
    train: Split
    val: Split
    test: Split


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "oriented-bars"
    classes: int = 2
    height: int = 8
    width: int = 8
    channels: int = 1
    train: int = 400
    val: int = 300
    test: int = 400
    noise: float = 0.2
    seed: int = 0
    augment: bool = False

    def __post_init__(self):
        if self.kind not in GENERATORS:
            raise ConfigError(f"kind must be one of {GENERATORS}", "dataset.kind")
        if self.classes < 2:
            raise ConfigError("need at least 2 classes", "dataset.classes")
        for name in ("height", "width", "channels"):
            if getattr(self, name) < 1:
                raise ConfigError("must be >= 1", f"dataset.{name}")
        for name in ("train", "val", "test"):
            n = getattr(self, name)
            if n < 0 or n % self.classes:
                raise ConfigError(f"must be a non-negative multiple of classes={self.classes}", f"dataset.{name}")
        if self.kind == "oriented-bars" and self.classes == 2 and self.height != self.width:
            raise ConfigError("two-class oriented bars need square images", "dataset.height")
        if self.noise < 0:
            raise ConfigError("must be >= 0", "dataset.noise")

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown field(s) {sorted(extra)}", "dataset")
        return cls(**d)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _quantize(img: np.ndarray) -> np.ndarray:
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def _grating(rng, spec: DatasetSpec, theta: float, period: float) -> np.ndarray:
    yy, xx = np.mgrid[0:spec.height, 0:spec.width].astype(np.float64)
    phase = rng.uniform(0, 2 * np.pi)
    proj = xx * np.cos(theta) + yy * np.sin(theta)
    base = 0.5 + 0.35 * np.sign(np.sin(2 * np.pi * proj / period + phase))
    return base


def _bars_sample(rng, spec: DatasetSpec, label: int) -> np.ndarray:
    if spec.classes == 2:
        # class 1 is the transpose of a class-0 draw
        base = _grating(rng, spec, np.pi / 2, 4.0)
        img = base[None] + rng.normal(0, spec.noise, size=(spec.channels, spec.height, spec.width))
        img = _quantize(img)
        return img.transpose(0, 2, 1) if label == 1 else img
    theta = np.pi * label / spec.classes
    base = _grating(rng, spec, theta, 4.0)
    img = base[None] + rng.normal(0, spec.noise, size=(spec.channels, spec.height, spec.width))
    return _quantize(img)


def _checker_sample(rng, spec: DatasetSpec, label: int) -> np.ndarray:
    size = label + 1
    yy, xx = np.mgrid[0:spec.height, 0:spec.width]
    oy, ox = rng.integers(0, 2 * size, size=2)
    base = 0.5 + 0.35 * np.where((((yy + oy) // size) + ((xx + ox) // size)) % 2 == 0, 1.0, -1.0)
    img = base[None] + rng.normal(0, spec.noise, size=(spec.channels, spec.height, spec.width))
    return _quantize(img)


def _make_split(rng, spec: DatasetSpec, n: int) -> Split:
    per = n // spec.classes
    labels = np.repeat(np.arange(spec.classes), per)
    labels = labels[rng.permutation(n)]
    sample = _bars_sample if spec.kind == "oriented-bars" else _checker_sample
    images = np.empty((n, spec.channels, spec.height, spec.width), dtype=np.float32)
    for i, lab in enumerate(labels):
        images[i] = sample(rng, spec, int(lab))
    return Split(images, labels.astype(np.int64))


def synth_generate(spec: DatasetSpec) -> Dataset:
    """Deterministic, class-balanced train/val/test splits for ``spec``.

    Every image is drawn fresh, so the splits share no samples.
    """
    rng = np.random.default_rng(spec.seed)
    return Dataset(
        train=_make_split(rng, spec, spec.train),
        val=_make_split(rng, spec, spec.val),
        test=_make_split(rng, spec, spec.test),
    )


def augment(images: np.ndarray, rng: np.random.Generator, pad: int = 1) -> np.ndarray:
    """Random crop with zero padding plus random horizontal flip."""
    n, c, h, w = images.shape
    padded = np.pad(images, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty_like(images)
    offs = rng.integers(0, 2 * pad + 1, size=(n, 2))
    flips = rng.random(n) < 0.5
    for i in range(n):
        dy, dx = offs[i]
        crop = padded[i, :, dy:dy + h, dx:dx + w]
        out[i] = crop[:, :, ::-1] if flips[i] else crop
    return out


# ------------------------------------------------------------------------ IDX


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"truncated {what}: expected {n} bytes, got {len(data)}")
    return data


def load_idx(path) -> np.ndarray:
    """Read an unsigned-byte IDX file.

    Image files (magic 0x00000803, or 0x00000804 with a channel axis) come
    back as float32 (N, C, H, W) scaled to [0, 1]; label files
    (0x00000801) as int64 (N,).
    """
    with open(path, "rb") as fh:
        head = _read_exact(fh, 4, "header")
        (magic,) = struct.unpack(">I", head)
        if magic == LABEL_MAGIC:
            ndim = 1
        elif magic in IMAGE_MAGIC.values():
            ndim = magic & 0xFF
        else:
            raise FormatError(f"unrecognized IDX magic 0x{magic:08x}")
        dims = struct.unpack(f">{ndim}I", _read_exact(fh, 4 * ndim, "dimension table"))
        count = int(np.prod(dims))
        payload = fh.read()
    if len(payload) != count:
        raise FormatError(f"truncated payload in {os.fspath(path)}: expected {count} bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8).reshape(dims)
    if ndim == 1:
        return arr.astype(np.int64)
    if ndim == 3:
        arr = arr[:, None]
    return arr.astype(np.float32) / 255.0


def write_idx(path, arr: np.ndarray) -> None:
    """Write labels (N,) or images (N, H, W) / (N, C, H, W) in [0, 1] as IDX."""
    arr = np.asarray(arr)
    if arr.ndim == 1:
        magic, data = LABEL_MAGIC, arr.astype(np.uint8)
    elif arr.ndim in (3, 4):
        if arr.ndim == 4 and arr.shape[1] == 1:
            arr = arr[:, 0]
        magic = IMAGE_MAGIC[arr.ndim]
        data = np.round(np.clip(arr, 0, 1) * 255).astype(np.uint8)
    else:
        raise FormatError(f"cannot store a rank-{arr.ndim} array as IDX")
    with open(path, "wb") as fh:
        fh.write(struct.pack(">I", magic))
        fh.write(struct.pack(f">{data.ndim}I", *data.shape))
        fh.write(data.tobytes())


def load_split(images_path, labels_path) -> Split:
    images = load_idx(images_path)
    labels = load_idx(labels_path)
    if images.ndim != 4 or labels.ndim != 1:
        raise FormatError("expected an image file and a label file")
    if len(images) != len(labels):
        raise FormatError(f"{len(images)} images but {len(labels)} labels")
    return Split(images, labels)


def save_split(split: Split, directory, name: str) -> tuple[str, str]:
    os.makedirs(directory, exist_ok=True)
    img = os.path.join(directory, f"{name}-images.idx")
    lab = os.path.join(directory, f"{name}-labels.idx")
    write_idx(img, split.images)
    write_idx(lab, split.labels)
    return img, lab
