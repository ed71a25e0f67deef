"""Flat binary container for named arrays.

Layout (all integers little-endian)::

    magic   b"CMTCKPT\\0"
    version u32
    count   u32
    count x entry:
        name_len u32, name (utf-8)
        dtype_len u8, dtype descr (ascii, e.g. "<f4")
        ndim u8, shape u64 * ndim
        raw little-endian values
"""
import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

MAGIC = b"CMTCKPT\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: Union[str, Path], arrays: Dict[str, np.ndarray]) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        descr = le.dtype.str.encode("ascii")
        key = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(key)) + key)
        chunks.append(struct.pack("<B", len(descr)) + descr)
        chunks.append(struct.pack("<B", le.ndim) + struct.pack(f"<{le.ndim}Q", *le.shape))
        chunks.append(np.ascontiguousarray(le).tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    if buf[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, count = struct.unpack_from("<II", buf, 8)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 16
    out = {}
    try:
        for _ in range(count):
            (klen,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + klen].decode("utf-8")
            pos += klen
            (dlen,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            dtype = np.dtype(buf[pos:pos + dlen].decode("ascii"))
            pos += dlen
            (ndim,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos)
            pos += 8 * ndim
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            if pos + nbytes > len(buf):
                raise CheckpointError(f"{path}: entry {name!r} truncated at byte {pos}")
            arr = np.frombuffer(buf, dtype=dtype, count=nbytes // dtype.itemsize, offset=pos).reshape(shape)
            out[name] = arr.astype(dtype.newbyteorder("="))
            pos += nbytes
    except struct.error as exc:
        raise CheckpointError(f"{path}: truncated header near byte {pos}") from exc
    return out
