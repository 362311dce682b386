import json
import struct

import numpy as np
import pytest

from isdarts.checkpoint import load_checkpoint, save_checkpoint
from isdarts.errors import FormatError
from isdarts.network import build_supernet
from isdarts.search_space import preset


def test_round_trip_preserves_names_shapes_dtypes(tmp_path):
    arrays = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5, -2.0]),
              "c": np.array([7], dtype=np.int64)}
    save_checkpoint(tmp_path / "x.mnl", arrays)
    back = load_checkpoint(tmp_path / "x.mnl")
    assert list(back) == ["a", "b", "c"]
    for k in arrays:
        assert back[k].dtype == arrays[k].dtype and np.array_equal(back[k], arrays[k])


def test_layout_header(tmp_path):
    save_checkpoint(tmp_path / "x.mnl", {"w": np.ones(2, dtype=np.float32)})
    blob = (tmp_path / "x.mnl").read_bytes()
    assert blob[:4] == b"MNL1"
    version, mlen = struct.unpack("<II", blob[4:12])
    manifest = json.loads(blob[12:12 + mlen])
    assert version == 1
    assert manifest["arrays"] == [{"name": "w", "shape": [2], "dtype": "float32", "offset": 0, "nbytes": 8}]
    assert blob[12 + mlen:] == np.ones(2, dtype="<f4").tobytes()


def test_bad_magic_and_truncation(tmp_path):
    (tmp_path / "bad.mnl").write_bytes(b"NOPE" + bytes(8))
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "bad.mnl")
    save_checkpoint(tmp_path / "x.mnl", {"w": np.ones(4)})
    blob = (tmp_path / "x.mnl").read_bytes()
    (tmp_path / "short.mnl").write_bytes(blob[:-5])
    with pytest.raises(FormatError, match="expected 32 bytes"):
        load_checkpoint(tmp_path / "short.mnl")


def test_supernet_state_survives_checkpoint(tmp_path):
    net = build_supernet(preset("micro"), 2)
    save_checkpoint(tmp_path / "net.mnl", net.state_arrays())
    other = build_supernet(preset("micro"), 3)
    other.load_state_arrays(load_checkpoint(tmp_path / "net.mnl"))
    assert all(np.array_equal(a, b) for a, b in zip(net.state_arrays().values(), other.state_arrays().values()))
