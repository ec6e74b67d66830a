"""Minimal binary PPM (P6, maxval 255) reader/writer for dataset images."""

from __future__ import annotations

import numpy as np

from .channels import Image


def write_ppm(img: Image, path) -> None:
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.width} {img.height}\n255\n".encode("ascii"))
        fh.write(img.data.tobytes())


def _read_token(raw: bytes, pos: int):
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


def read_ppm(path) -> Image:
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, pos = _read_token(raw, 0)
    if magic != b"P6":
        raise ValueError("not a binary PPM (P6) file")
    width, pos = _read_token(raw, pos)
    height, pos = _read_token(raw, pos)
    maxval, pos = _read_token(raw, pos)
    if int(maxval) != 255:
        raise ValueError("only maxval 255 is supported")
    pos += 1  # single whitespace after maxval
    w, h = int(width), int(height)
    need = w * h * 3
    data = raw[pos : pos + need]
    if len(data) != need:
        raise ValueError("truncated PPM payload")
    return Image(np.frombuffer(data, dtype=np.uint8).reshape(h, w, 3).copy())
