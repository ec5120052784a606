"""Binary checkpoint serialization.

Layout (all integers little-endian):

    magic   4 bytes  b"REMD"
    version u32      currently 1
    count   u32      number of tensors
    then per tensor:
    name_len u32, name UTF-8 bytes,
    dtype    u8      0 = float64, 1 = float32
    rank     u32
    extents  rank * u64
    payload  row-major little-endian values

Round trips are bit-exact.  Unknown versions and malformed records are
rejected with :class:`CheckpointFormatError`.
"""

import os
import struct

import numpy as np

from ..errors import CheckpointFormatError

MAGIC = b"REMD"
VERSION = 1

_DTYPE_CODES = {np.dtype("<f8"): 0, np.dtype("<f4"): 1}
_CODE_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


def save_checkpoint(path, tensors):
    """Writes an ordered {name: ndarray} mapping atomically."""
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        if dtype not in _DTYPE_CODES:
            raise CheckpointFormatError(
                f"tensor {name!r}: unsupported dtype {arr.dtype}"
            )
        name_b = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<BI", _DTYPE_CODES[dtype], arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape) if arr.ndim else b"")
        chunks.append(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as f:
        f.write(b"".join(chunks))
    os.replace(tmp, path)


def load_checkpoint(path):
    """Reads a checkpoint back into an ordered {name: ndarray} mapping."""
    with open(path, "rb") as f:
        buf = f.read()
    view = memoryview(buf)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointFormatError(f"truncated checkpoint while reading {what}")
        out = view[pos : pos + n]
        pos += n
        return out

    if bytes(take(4, "magic")) != MAGIC:
        raise CheckpointFormatError("not a REMD checkpoint (bad magic)")
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise CheckpointFormatError(
            f"unsupported checkpoint version {version} (expected {VERSION})"
        )
    tensors = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<I", take(4, "name length"))
        name = bytes(take(name_len, "name")).decode("utf-8")
        code, rank = struct.unpack("<BI", take(5, "dtype/rank"))
        if code not in _CODE_DTYPES:
            raise CheckpointFormatError(f"tensor {name!r}: unknown dtype code {code}")
        shape = struct.unpack(f"<{rank}Q", take(8 * rank, "extents")) if rank else ()
        dtype = _CODE_DTYPES[code]
        n_bytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize if shape else dtype.itemsize * 1
        n_elems = int(np.prod(shape, dtype=np.int64)) if shape else 1
        n_bytes = n_elems * dtype.itemsize
        arr = np.frombuffer(take(n_bytes, f"payload of {name!r}"), dtype=dtype).reshape(shape)
        if name in tensors:
            raise CheckpointFormatError(f"duplicate tensor name {name!r}")
        tensors[name] = np.array(arr)  # own the memory
    if pos != len(view):
        raise CheckpointFormatError(f"{len(view) - pos} trailing bytes after last tensor")
    return tensors
