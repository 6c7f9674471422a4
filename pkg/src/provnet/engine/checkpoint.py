"""Binary checkpoint format: parameters, Adam state, and run metadata.

Layout (all integers little-endian):

    magic   8 bytes  b"PNETCKPT"
    version u32
    meta    u32 length + UTF-8 JSON (seed, epoch, hyper, fingerprint, ...)
    params  u32 count, then per entry:
              u16 name length + UTF-8 name
              u8 ndim, u32 per dim
              raw float32 little-endian values
    adam    u8 flag; if set: u64 step_count, then first- and second-moment
            tables in the same entry layout as params

Round-trips are bit-exact: values are stored and reloaded as float32.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from provnet.engine.adam import AdamHyper, AdamState
from provnet.errors import DataError

MAGIC = b"PNETCKPT"
VERSION = 1


def _write_table(out: bytearray, table: dict):
    out += struct.pack("<I", len(table))
    for name in table:
        arr = np.ascontiguousarray(table[name], dtype="<f4")
        encoded = name.encode("utf-8")
        out += struct.pack("<H", len(encoded))
        out += encoded
        out += struct.pack("<B", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()


def _read_table(buf: memoryview, pos: int) -> tuple[dict, int]:
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    table = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", buf, pos)
        pos += 2
        name = bytes(buf[pos : pos + nlen]).decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", buf, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", buf, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(shape)
        pos += 4 * size
        table[name] = np.array(arr)  # writable copy
    return table, pos


def save_checkpoint(path, params: dict, meta: dict, adam: AdamState | None = None):
    """Serialize named float32 parameter arrays plus optional Adam state."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<I", VERSION)
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    out += struct.pack("<I", len(meta_bytes))
    out += meta_bytes
    _write_table(out, params)
    if adam is None:
        out += struct.pack("<B", 0)
    else:
        out += struct.pack("<B", 1)
        out += struct.pack("<Q", adam.step_count)
        out += struct.pack(
            "<5d",
            adam.hyper.lr,
            adam.hyper.beta1,
            adam.hyper.beta2,
            adam.hyper.eps,
            adam.hyper.weight_decay,
        )
        _write_table(out, adam.first_moment)
        _write_table(out, adam.second_moment)
    Path(path).write_bytes(bytes(out))


def load_checkpoint(path) -> tuple[dict, dict, AdamState | None]:
    """Read back (params, meta, adam_state) from a checkpoint file."""
    raw = Path(path).read_bytes()
    buf = memoryview(raw)
    if raw[:8] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", buf, 8)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    pos = 12
    (mlen,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    meta = json.loads(bytes(buf[pos : pos + mlen]).decode("utf-8"))
    pos += mlen
    params, pos = _read_table(buf, pos)
    (flag,) = struct.unpack_from("<B", buf, pos)
    pos += 1
    adam = None
    if flag:
        (step_count,) = struct.unpack_from("<Q", buf, pos)
        pos += 8
        lr, b1, b2, eps, wd = struct.unpack_from("<5d", buf, pos)
        pos += 40
        m, pos = _read_table(buf, pos)
        v, pos = _read_table(buf, pos)
        adam = AdamState(
            hyper=AdamHyper(lr=lr, beta1=b1, beta2=b2, eps=eps, weight_decay=wd),
            step_count=step_count,
            first_moment=m,
            second_moment=v,
        )
    return params, meta, adam
