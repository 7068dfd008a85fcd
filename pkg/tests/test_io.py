import numpy as np
import pytest

from pcld import io
from pcld.errors import FormatError


def test_cloud_roundtrip_bits(tmp_path, rng):
    pts = rng.standard_normal((37, 3)).astype(np.float32)
    path = tmp_path / "c.pcld"
    io.save_cloud_array(pts, path)
    back = io.load_cloud_array(path)
    assert back.dtype == np.float32
    assert np.array_equal(back, pts)


def test_cloud_wrong_magic(tmp_path):
    path = tmp_path / "bad.pcld"
    path.write_bytes(b"NOPE" + b"\x00" * 28)
    with pytest.raises(FormatError, match="magic"):
        io.load_cloud_array(path)


def test_cloud_truncated_payload(tmp_path, rng):
    pts = rng.standard_normal((8, 3)).astype(np.float32)
    path = tmp_path / "c.pcld"
    io.save_cloud_array(pts, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(FormatError, match="byte offset 16"):
        io.load_cloud_array(path)


def test_cloud_inconsistent_header_count(tmp_path, rng):
    # header declares more points than the payload holds
    pts = rng.standard_normal((8, 3)).astype(np.float32)
    path = tmp_path / "c.pcld"
    io.save_cloud_array(pts, path)
    raw = bytearray(path.read_bytes())
    raw[8:12] = (100).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="payload length mismatch"):
        io.load_cloud_array(path)


def test_cloud_truncated_header(tmp_path):
    path = tmp_path / "c.pcld"
    path.write_bytes(b"PCLD\x01")
    with pytest.raises(FormatError, match="truncated header"):
        io.load_cloud_array(path)


def test_param_blob_roundtrip(tmp_path, rng):
    arrays = {
        "layer0.weight": rng.standard_normal((4, 3)).astype(np.float32),
        "layer0.bias": rng.standard_normal(4).astype(np.float32),
        "scalar": np.float32(3.5),
    }
    path = tmp_path / "p.bin"
    io.save_param_blob(arrays, path)
    back = io.load_param_blob(path)
    assert list(back) == list(arrays)  # declaration order preserved
    for name in arrays:
        assert np.array_equal(back[name], np.asarray(arrays[name], dtype=np.float32))


def test_param_blob_truncation(tmp_path, rng):
    path = tmp_path / "p.bin"
    io.save_param_blob({"w": rng.standard_normal((5, 5)).astype(np.float32)}, path)
    path.write_bytes(path.read_bytes()[:-9])
    with pytest.raises(FormatError, match="byte offset"):
        io.load_param_blob(path)
