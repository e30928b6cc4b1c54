import json

import numpy as np
import pytest

from avpretrain import tensorstore


def test_roundtrip_values_and_metadata(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "alpha": rng.standard_normal((3, 4)).astype(np.float32),
        "beta": rng.standard_normal((2, 2, 2)).astype(np.float32),
    }
    tensorstore.write_tensors(tmp_path / "store", tensors, extra={"note": "x", "n": 3})
    loaded, extra = tensorstore.read_tensors(tmp_path / "store")
    assert extra == {"note": "x", "n": 3}
    for name, array in tensors.items():
        assert loaded[name].dtype == np.float32
        assert np.array_equal(loaded[name], array)


def test_save_load_save_byte_identical(tmp_path):
    rng = np.random.default_rng(1)
    tensors = {"w": rng.standard_normal((5, 7)).astype(np.float32)}
    a_dir = tmp_path / "a"
    b_dir = tmp_path / "b"
    tensorstore.write_tensors(a_dir, tensors, extra={"k": 1})
    loaded, extra = tensorstore.read_tensors(a_dir)
    tensorstore.write_tensors(b_dir, loaded, extra=extra)
    assert (a_dir / "data.f32").read_bytes() == (b_dir / "data.f32").read_bytes()
    assert (a_dir / "manifest.json").read_bytes() == (b_dir / "manifest.json").read_bytes()


def test_blob_is_little_endian_float32(tmp_path):
    array = np.array([[1.0, -2.5]], dtype=np.float64)
    tensorstore.write_tensors(tmp_path / "s", {"x": array})
    blob = (tmp_path / "s" / "data.f32").read_bytes()
    assert np.array_equal(np.frombuffer(blob, dtype="<f4"), [1.0, -2.5])
    manifest = json.loads((tmp_path / "s" / "manifest.json").read_text())
    entry = manifest["tensors"][0]
    assert entry["dtype"] == "float32"
    assert entry["shape"] == [1, 2]
    assert entry["offset"] == 0


def test_offsets_partition_blob(tmp_path):
    tensors = {"a": np.zeros((2, 3), np.float32), "b": np.ones(5, np.float32)}
    tensorstore.write_tensors(tmp_path / "s", tensors)
    manifest = json.loads((tmp_path / "s" / "manifest.json").read_text())
    entries = manifest["tensors"]
    assert entries[0]["offset"] == 0
    assert entries[1]["offset"] == entries[0]["nbytes"] == 24
    blob_len = len((tmp_path / "s" / "data.f32").read_bytes())
    assert blob_len == entries[1]["offset"] + entries[1]["nbytes"]


def test_missing_store_raises(tmp_path):
    with pytest.raises(FileNotFoundError):
        tensorstore.read_tensors(tmp_path / "absent")


def test_no_temp_files_left(tmp_path):
    tensorstore.write_tensors(tmp_path / "s", {"x": np.zeros(3, np.float32)})
    leftovers = [p for p in (tmp_path / "s").iterdir() if p.suffix == ".tmp"]
    assert leftovers == []
