"""THR1 bit-exact binary tensor interchange format.

Layout: magic "THR1" (4 bytes), u8 dtype code (0 = f32, 1 = f64), u8 rank,
6 reserved zero bytes, rank little-endian u64 dims, then the row-major
payload. Checkpoints are a directory of one .thr1 file per named parameter
plus a JSON manifest mapping name -> (file, shape).
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"THR1"
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}
MAX_RANK = 8


class FormatError(Exception):
    pass


def write_tensor(path, array: np.ndarray):
    arr = np.asarray(array, order="C")  # keeps rank-0 arrays rank 0
    if arr.dtype not in _CODES:
        arr = arr.astype(np.float64)
    code = _CODES[arr.dtype]
    if arr.ndim > MAX_RANK:
        raise FormatError(f"rank {arr.ndim} exceeds maximum {MAX_RANK}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BB6x", code, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes())


def read_tensor(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 12:
        raise FormatError(f"{path}: truncated header")
    code, rank = struct.unpack_from("<BB", blob, 4)
    if code not in _DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    if rank > MAX_RANK:
        raise FormatError(f"{path}: rank {rank} exceeds maximum {MAX_RANK}")
    if any(blob[6:12]):
        raise FormatError(f"{path}: reserved bytes not zero")
    offset = 12
    if len(blob) < offset + 8 * rank:
        raise FormatError(f"{path}: truncated dims")
    dims = struct.unpack_from(f"<{rank}Q", blob, offset)
    offset += 8 * rank
    dtype = _DTYPES[code]
    count = int(np.prod(dims)) if rank else 1
    expected = offset + count * dtype.itemsize
    if len(blob) != expected:
        raise FormatError(f"{path}: payload size {len(blob) - offset}, expected {expected - offset}")
    arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
    return arr.reshape(dims).copy()


def save_checkpoint(directory, named_arrays: dict, extra: dict | None = None) -> dict:
    """Write one .thr1 per entry plus manifest.json; returns the manifest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = {}
    hasher = hashlib.sha256()
    for name in named_arrays:
        arr = np.asarray(named_arrays[name])
        fname = name.replace("/", "_").replace(".", "_") + ".thr1"
        write_tensor(directory / fname, arr)
        entries[name] = {"file": fname, "shape": list(arr.shape)}
        hasher.update(name.encode("utf-8"))
        hasher.update((directory / fname).read_bytes())
    manifest = {
        "format": "THR1-manifest-v1",
        "tensors": entries,
        "content_hash": hasher.hexdigest(),
    }
    if extra:
        manifest.update(extra)
    with open(directory / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest


def load_checkpoint(directory) -> tuple[dict, dict]:
    """Returns (named arrays, manifest)."""
    directory = Path(directory)
    with open(directory / "manifest.json") as fh:
        manifest = json.load(fh)
    arrays = {}
    for name, entry in manifest["tensors"].items():
        arr = read_tensor(directory / entry["file"])
        if list(arr.shape) != entry["shape"]:
            raise FormatError(f"{name}: manifest shape {entry['shape']} != file shape {list(arr.shape)}")
        arrays[name] = arr
    return arrays, manifest
