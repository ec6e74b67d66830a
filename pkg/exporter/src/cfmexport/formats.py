"""CFT1 tensor writing and PPM reading.

The CFT1 layout matches the detection toolkit's reader: magic b"CFT1",
version u32 = 1, dtype u32 (1 = float32), ndim u32, dims ndim x u32,
ratio u32, name length u32, UTF-8 name, then little-endian float32
payload in channel-major order.
"""

from __future__ import annotations

import struct

import numpy as np

MAGIC = b"CFT1"
VERSION = 1
DTYPE_F32 = 1


def write_tensor(values, dims, ratio: int, name: str, path) -> None:
    dims = tuple(int(d) for d in dims)
    if not dims or any(d < 1 for d in dims):
        raise ValueError("zero dimension")
    arr = np.ascontiguousarray(values, dtype="<f4").reshape(dims)
    name_bytes = name.encode("utf-8")
    header = struct.pack("<4sIII", MAGIC, VERSION, DTYPE_F32, len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    header += struct.pack("<II", int(ratio), len(name_bytes))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(name_bytes)
        fh.write(arr.tobytes())


def read_ppm(path) -> np.ndarray:
    """Binary PPM (P6, maxval 255) -> (H, W, 3) uint8."""
    with open(path, "rb") as fh:
        raw = fh.read()

    def token(pos):
        while pos < len(raw):
            if raw[pos : pos + 1].isspace():
                pos += 1
            elif raw[pos : pos + 1] == b"#":
                while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                    pos += 1
            else:
                break
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated PPM header")
        return raw[start:pos], pos

    magic, pos = token(0)
    if magic != b"P6":
        raise ValueError("not a binary PPM (P6) file")
    width, pos = token(pos)
    height, pos = token(pos)
    maxval, pos = token(pos)
    if int(maxval) != 255:
        raise ValueError("only maxval 255 is supported")
    pos += 1
    w, h = int(width), int(height)
    need = w * h * 3
    data = raw[pos : pos + need]
    if len(data) != need:
        raise ValueError("truncated PPM payload")
    return np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy()
