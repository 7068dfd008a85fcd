"""On-disk formats: point cloud files, dataset manifests, parameter blobs.

Cloud file layout (all integers little-endian uint32):

    offset 0   magic b"PCLD"
    offset 4   format_version
    offset 8   n_points
    offset 12  n_dims
    offset 16  payload, n_points * n_dims little-endian float32

Checkpoints are directories holding ``meta.json`` (human-readable metadata)
and ``params.bin`` (named float32 arrays in declaration order, same integer
conventions as above).
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

CLOUD_MAGIC = b"PCLD"
CLOUD_FORMAT_VERSION = 1

BLOB_MAGIC = b"PCLB"

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT_VERSION = 1


def save_cloud_array(points: np.ndarray, path: str | Path) -> None:
    """Write an (N, D) float array to `path` in the cloud file format."""
    pts = np.ascontiguousarray(points, dtype="<f4")
    if pts.ndim != 2:
        raise FormatError(f"expected a 2-d point array, got shape {pts.shape}")
    header = CLOUD_MAGIC + struct.pack("<III", CLOUD_FORMAT_VERSION, pts.shape[0], pts.shape[1])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(pts.tobytes())


def load_cloud_array(path: str | Path) -> np.ndarray:
    """Read a cloud file back into an (N, D) float32 array (lossless)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise FormatError(f"{path}: truncated header, need 16 bytes, got {len(raw)} (byte offset 0)")
    if raw[:4] != CLOUD_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r} at byte offset 0, expected {CLOUD_MAGIC!r}")
    version, n_points, n_dims = struct.unpack("<III", raw[4:16])
    if version != CLOUD_FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported format_version {version} at byte offset 4")
    expected = 16 + 4 * n_points * n_dims
    if len(raw) != expected:
        raise FormatError(
            f"{path}: payload length mismatch at byte offset 16: "
            f"header declares {n_points}x{n_dims} floats ({expected - 16} bytes), file has {len(raw) - 16}"
        )
    pts = np.frombuffer(raw[16:], dtype="<f4").reshape(n_points, n_dims)
    return pts.copy()


def save_param_blob(arrays: dict[str, np.ndarray], path: str | Path) -> None:
    """Write named float32 arrays to a single binary blob, preserving order."""
    with open(path, "wb") as fh:
        fh.write(BLOB_MAGIC)
        fh.write(struct.pack("<I", len(arrays)))
        for name, arr in arrays.items():
            data = np.ascontiguousarray(arr, dtype="<f4")
            name_b = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<I", data.ndim))
            fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
            fh.write(data.tobytes())


def load_param_blob(path: str | Path) -> dict[str, np.ndarray]:
    """Read a parameter blob back into an ordered name -> float32 array dict."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 8 or raw[:4] != BLOB_MAGIC:
        raise FormatError(f"{path}: bad parameter blob magic at byte offset 0")
    (count,) = struct.unpack("<I", raw[4:8])
    offset = 8
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            (name_len,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            name = raw[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", raw, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}I", raw, offset)
            offset += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            data = np.frombuffer(raw, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
        except (struct.error, ValueError) as exc:
            raise FormatError(f"{path}: truncated parameter blob at byte offset {offset}") from exc
        arrays[name] = data.reshape(shape).copy()
    return arrays


def write_json(obj: object, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_json(path: str | Path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid JSON ({exc})") from exc
