"""Binary container formats for features and checkpoints.

PHR1 feature file (embeddings for one slide):
    magic  b"PHR1"
    n      u32 little-endian   number of tokens
    d      u32 little-endian   embedding dimension
    data   n*d float32 little-endian, row-major

PHC1 checkpoint (model weights plus config):
    magic  b"PHC1"
    hlen   u32 little-endian   byte length of the JSON header
    header UTF-8 JSON: {"config": {...}, "arrays": [{"name","shape","dtype"}]}
    data   arrays concatenated in header order, little-endian, row-major

Readers reject wrong magic, truncated payloads, and trailing garbage.
"""

from __future__ import annotations

import json
import struct
from typing import Dict, Tuple

import numpy as np

from .errors import FormatError

_PHR_MAGIC = b"PHR1"
_PHC_MAGIC = b"PHC1"

_DTYPES = {
    "float32": np.dtype("<f4"),
    "float64": np.dtype("<f8"),
    "int64": np.dtype("<i8"),
}


def write_features(path, features: np.ndarray) -> None:
    arr = np.asarray(features, dtype=np.float64)
    if arr.ndim != 2:
        raise FormatError(f"feature matrix must be 2-D, got shape {arr.shape}")
    n, d = arr.shape
    with open(path, "wb") as fh:
        fh.write(_PHR_MAGIC)
        fh.write(struct.pack("<II", n, d))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def read_features(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _PHR_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {_PHR_MAGIC!r}")
    if len(blob) < 12:
        raise FormatError("feature file truncated before header")
    n, d = struct.unpack("<II", blob[4:12])
    expect = 12 + 4 * n * d
    if len(blob) < expect:
        raise FormatError(f"feature payload truncated: {len(blob)} bytes, expected {expect}")
    if len(blob) > expect:
        raise FormatError(f"trailing bytes after feature payload: {len(blob) - expect}")
    data = np.frombuffer(blob, dtype="<f4", count=n * d, offset=12)
    return data.reshape(n, d).astype(np.float64)


def write_checkpoint(path, config: Dict, arrays: Dict[str, np.ndarray]) -> None:
    """Serialize named arrays plus a JSON-safe config dict."""
    entries = []
    payloads = []
    for name in arrays:  # insertion order is the on-disk order
        arr = np.asarray(arrays[name])
        if arr.dtype.name not in _DTYPES:
            arr = arr.astype(np.float64)
        entries.append({"name": name, "shape": list(arr.shape), "dtype": arr.dtype.name})
        payloads.append(arr.astype(_DTYPES[arr.dtype.name]).tobytes(order="C"))
    header = json.dumps({"config": config, "arrays": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_PHC_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        for chunk in payloads:
            fh.write(chunk)


def read_checkpoint(path) -> Tuple[Dict, Dict[str, np.ndarray]]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _PHC_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}, expected {_PHC_MAGIC!r}")
    if len(blob) < 8:
        raise FormatError("checkpoint truncated before header length")
    (hlen,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + hlen:
        raise FormatError("checkpoint truncated inside JSON header")
    try:
        header = json.loads(blob[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}") from exc
    if not isinstance(header, dict) or "config" not in header or "arrays" not in header:
        raise FormatError("checkpoint header missing config/arrays")
    offset = 8 + hlen
    arrays: Dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        name, shape, dtype = entry["name"], tuple(entry["shape"]), entry["dtype"]
        if dtype not in _DTYPES:
            raise FormatError(f"unsupported dtype {dtype!r} in checkpoint")
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        nbytes = count * _DTYPES[dtype].itemsize
        if len(blob) < offset + nbytes:
            raise FormatError(f"array {name!r} truncated")
        data = np.frombuffer(blob, dtype=_DTYPES[dtype], count=count, offset=offset)
        arrays[name] = data.reshape(shape).astype(dtype)
        offset += nbytes
    if offset != len(blob):
        raise FormatError(f"trailing bytes after checkpoint payload: {len(blob) - offset}")
    return header["config"], arrays
