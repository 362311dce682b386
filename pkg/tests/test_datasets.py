import struct

import numpy as np
import pytest

from isdarts.datasets import (DatasetSpec, augment, load_idx, load_split, save_split, synth_generate,
                              write_idx)
from isdarts.errors import ConfigError, FormatError


def global_mean_classifier_accuracy(data, classes):
    """Nearest-centroid readout of the per-channel global pixel mean."""
    feat = lambda split: split.images.mean(axis=(2, 3))
    centroids = np.stack([feat(data.train)[data.train.labels == k].mean(axis=0) for k in range(classes)])
    dist = ((feat(data.test)[:, None, :] - centroids[None]) ** 2).sum(axis=-1)
    return float((dist.argmin(axis=1) == data.test.labels).mean())


def test_split_sizes_and_exact_balance():
    data = synth_generate(DatasetSpec(train=300, val=100, test=100))
    for split, n in ((data.train, 300), (data.val, 100), (data.test, 100)):
        assert split.images.shape == (n, 1, 8, 8) and len(split.labels) == n
        assert np.bincount(split.labels).tolist() == [n // 2, n // 2]


def test_same_seed_bitwise_identical():
    a = synth_generate(DatasetSpec(kind="checker-frequency", classes=3, train=30, val=30, test=30))
    b = synth_generate(DatasetSpec(kind="checker-frequency", classes=3, train=30, val=30, test=30))
    assert all(x.images.tobytes() == y.images.tobytes() and x.labels.tobytes() == y.labels.tobytes()
               for x, y in zip(a, b))


def test_splits_share_no_samples():
    data = synth_generate(DatasetSpec(train=200, val=200, test=200, noise=0.7))
    keys = [{img.tobytes() for img in s.images} for s in data]
    assert not (keys[0] & keys[1]) and not (keys[0] & keys[2]) and not (keys[1] & keys[2])


@pytest.mark.parametrize("spec", [
    DatasetSpec(train=600, val=0, test=600, noise=0.7),
    DatasetSpec(classes=4, height=12, width=12, channels=3, train=600, val=0, test=600),
    DatasetSpec(kind="checker-frequency", classes=3, train=600, val=0, test=600),
])
def test_global_mean_readout_is_at_chance(spec):
    acc = global_mean_classifier_accuracy(synth_generate(spec), spec.classes)
    assert acc <= 1 / spec.classes + 0.05


def test_two_class_bars_are_exact_transposes_in_distribution():
    data = synth_generate(DatasetSpec(train=200, val=0, test=0))
    means = [data.train.images[data.train.labels == k].mean(axis=(1, 2, 3)) for k in (0, 1)]
    assert abs(means[0].mean() - means[1].mean()) < 0.01


def test_spec_validation():
    with pytest.raises(ConfigError) as exc:
        DatasetSpec(train=301)
    assert exc.value.path == "dataset.train"
    with pytest.raises(ConfigError):
        DatasetSpec(classes=1)


def test_augment_keeps_shape_and_values():
    images = synth_generate(DatasetSpec(train=8, val=0, test=0)).train.images
    out = augment(images, np.random.default_rng(0))
    assert out.shape == images.shape and out.min() >= 0 and out.max() <= 1


def _handcrafted_images():
    pixels = bytes([0, 255, 51, 102,
                    1, 2, 3, 4,
                    255, 255, 255, 255,
                    10, 20, 30, 40])
    return struct.pack(">IIII", 0x00000803, 4, 2, 2) + pixels


def test_handcrafted_idx_file(tmp_path):
    path = tmp_path / "img.idx"
    path.write_bytes(_handcrafted_images())
    arr = load_idx(path)
    assert arr.shape == (4, 1, 2, 2) and arr.dtype == np.float32
    assert arr[0, 0].tolist() == [[0.0, 1.0], [np.float32(0.2), np.float32(0.4)]]
    assert arr[1, 0, 1, 1] == np.float32(4 / 255)
    assert arr[2].min() == 1.0


def test_wrong_magic_names_it(tmp_path):
    path = tmp_path / "bad.idx"
    path.write_bytes(b"\x00\x00\x08\x09" + _handcrafted_images()[4:])
    with pytest.raises(FormatError, match="0x00000809"):
        load_idx(path)


def test_truncated_payload_reports_byte_counts(tmp_path):
    path = tmp_path / "short.idx"
    path.write_bytes(_handcrafted_images()[:-3])
    with pytest.raises(FormatError, match="expected 16 bytes, got 13"):
        load_idx(path)


def test_labels_and_split_round_trip(tmp_path):
    split = synth_generate(DatasetSpec(channels=3, train=20, val=0, test=0)).train
    img, lab = save_split(split, tmp_path, "train")
    again = load_split(img, lab)
    assert np.array_equal(again.images, split.images) and np.array_equal(again.labels, split.labels)
    write_idx(tmp_path / "l.idx", np.array([0, 1, 9]))
    assert load_idx(tmp_path / "l.idx").tolist() == [0, 1, 9]
