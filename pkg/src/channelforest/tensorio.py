"""Bit-exact file formats: CFT1 tensors, JSONL annotations, CSV detections,
and the forest model JSON.

CFT1 layout (all integers little-endian u32 unless noted):

    magic   4 bytes b"CFT1"
    version u32 = 1
    dtype   u32, 1 = 32-bit float
    ndim    u32
    dims    ndim x u32, (channels, height, width) or (height, width)
    ratio   u32, input pixels per cell (1 for score maps)
    namelen u32
    name    namelen UTF-8 bytes
    payload little-endian float32 in channel-major (c, y, x) order
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .boost import BoostedForest, Tree, TreeNode, validate_forest

MAGIC = b"CFT1"
VERSION = 1
DTYPE_F32 = 1
MAX_NDIM = 8
MAX_ELEMENTS = 1 << 31


class TensorFormatError(ValueError):
    pass


@dataclass
class GroundTruthBox:
    x: float
    y: float
    w: float
    h: float
    label: str = "person"
    ignore: bool = False
    occlusion: float = 0.0

    def __post_init__(self):
        self.x, self.y = float(self.x), float(self.y)
        self.w, self.h = float(self.w), float(self.h)
        self.occlusion = float(self.occlusion)
        if self.w <= 0 or self.h <= 0:
            raise ValueError("degenerate box")
        if not (0.0 <= self.occlusion <= 1.0):
            raise ValueError("occlusion must be in [0, 1]")

    @property
    def box(self):
        return (self.x, self.y, self.w, self.h)


@dataclass
class Detection:
    image_id: str
    x: float
    y: float
    w: float
    h: float
    score: float
    source: str = ""

    def __post_init__(self):
        self.x, self.y = float(self.x), float(self.y)
        self.w, self.h = float(self.w), float(self.h)
        self.score = float(self.score)
        if self.w <= 0 or self.h <= 0:
            raise ValueError("degenerate box")
        if not math.isfinite(self.score):
            raise ValueError("score must be finite")

    @property
    def box(self):
        return (self.x, self.y, self.w, self.h)


def write_tensor(values, dims, ratio: int, name: str, path) -> None:
    dims = tuple(int(d) for d in dims)
    if not dims or any(d < 1 for d in dims):
        raise TensorFormatError("zero dimension")
    if len(dims) > MAX_NDIM:
        raise TensorFormatError("too many dimensions")
    count = 1
    for d in dims:
        count *= d
    if count > MAX_ELEMENTS:
        raise TensorFormatError("dims overflow")
    arr = np.ascontiguousarray(values, dtype="<f4").reshape(dims)
    name_bytes = name.encode("utf-8")
    header = struct.pack("<4sIII", MAGIC, VERSION, DTYPE_F32, len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims)
    header += struct.pack("<II", int(ratio), len(name_bytes))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(name_bytes)
        fh.write(arr.tobytes())


def read_tensor(path):
    """Read a CFT1 file; returns (values, dims, ratio, name).

    Raises TensorFormatError with a distinct message for each defect class:
    bad magic, unsupported version/dtype, dims overflow, truncated data.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(raw):
            raise TensorFormatError(f"truncated {what}")
        out = raw[pos : pos + n]
        pos += n
        return out

    magic = take(4, "header")
    if magic != MAGIC:
        raise TensorFormatError("bad magic")
    version, dtype, ndim = struct.unpack("<III", take(12, "header"))
    if version != VERSION:
        raise TensorFormatError("unsupported version")
    if dtype != DTYPE_F32:
        raise TensorFormatError("unsupported dtype")
    if not (1 <= ndim <= MAX_NDIM):
        raise TensorFormatError("bad dimension count")
    dims = struct.unpack(f"<{ndim}I", take(4 * ndim, "header"))
    if any(d < 1 for d in dims):
        raise TensorFormatError("zero dimension")
    count = 1
    for d in dims:
        count *= d
        if count > MAX_ELEMENTS:
            raise TensorFormatError("dims overflow")
    ratio, name_len = struct.unpack("<II", take(8, "header"))
    if name_len > len(raw):
        raise TensorFormatError("truncated name")
    try:
        name = take(name_len, "name").decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TensorFormatError("bad name encoding") from exc
    payload = take(4 * count, "payload")
    if pos != len(raw):
        raise TensorFormatError("trailing data")
    values = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()
    return values, dims, int(ratio), name


def read_annotations(path):
    """Parse JSON-Lines annotations into {image_id: [GroundTruthBox, ...]}.

    One record per image: {"image", "width", "height", "boxes"}; each box
    holds x/y/w/h/label with optional "ignore" (false) and "occl" (0).
    Malformed input raises ValueError naming the 1-based line number.
    """
    out = {}
    with open(path, "rb") as fh:
        for lineno, raw in enumerate(fh, start=1):
            try:
                line = raw.decode("utf-8").strip()
            except UnicodeDecodeError as exc:
                raise ValueError(f"line {lineno}: invalid UTF-8") from exc
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            try:
                image_id = rec["image"]
                boxes = []
                for b in rec["boxes"]:
                    boxes.append(GroundTruthBox(
                        x=float(b["x"]), y=float(b["y"]),
                        w=float(b["w"]), h=float(b["h"]),
                        label=str(b["label"]),
                        ignore=bool(b.get("ignore", False)),
                        occlusion=float(b.get("occl", 0.0)),
                    ))
            except (KeyError, TypeError, ValueError) as exc:
                detail = exc.args[0] if exc.args else exc
                raise ValueError(f"line {lineno}: {detail}") from exc
            if image_id in out:
                raise ValueError(f"line {lineno}: duplicate image {image_id!r}")
            out[image_id] = boxes
    return out


def write_annotations(records, path) -> None:
    """Inverse of read_annotations; records is {image_id: (w, h, boxes)}."""
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, (width, height, boxes) in records.items():
            rec = {"image": image_id, "width": width, "height": height,
                   "boxes": [{"x": b.x, "y": b.y, "w": b.w, "h": b.h,
                              "label": b.label, "ignore": b.ignore,
                              "occl": b.occlusion} for b in boxes]}
            fh.write(json.dumps(rec) + "\n")


DETECTION_HEADER = "image_id,x,y,w,h,score"


def write_detections(dets, path) -> None:
    """CSV with full-precision decimal reals; order preserved."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(DETECTION_HEADER + "\n")
        for d in dets:
            if "," in d.image_id:
                raise ValueError("image_id must not contain commas")
            fh.write(f"{d.image_id},{d.x!r},{d.y!r},{d.w!r},{d.h!r},{d.score!r}\n")


def read_detections(path):
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != DETECTION_HEADER:
            raise ValueError("line 1: bad detection header")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 6:
                raise ValueError(f"line {lineno}: expected 6 fields")
            try:
                x, y, w, h, score = (float(v) for v in parts[1:])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: non-numeric field") from exc
            out.append(Detection(parts[0], x, y, w, h, score))
    return out


def write_forest(forest: BoostedForest, path) -> None:
    """Serialize a forest to the model JSON schema."""
    if forest.ratio < 1:
        raise ValueError("only grid-aligned forests are serializable")
    validate_forest(forest)
    trees = []
    for tree in forest.trees:
        nodes = []
        for n in tree.nodes:
            nodes.append({
                "feat": [n.channel, n.cell_row, n.cell_col],
                "thr": n.threshold,
                "left": n.left,
                "right": n.right,
                "leaf": n.leaf,
            })
        trees.append({"nodes": nodes})
    doc = {
        "window": list(forest.window),
        "ratio": forest.ratio,
        "channels": forest.channels,
        "shrinkage": forest.shrinkage,
        "core": list(forest.core),
        "trees": trees,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def read_forest(path) -> BoostedForest:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    window = tuple(int(v) for v in doc["window"])
    ratio = int(doc["ratio"])
    channels = int(doc["channels"])
    core = tuple(float(v) for v in doc["core"]) if "core" in doc else None
    if ratio < 1 or window[0] % ratio or window[1] % ratio:
        raise ValueError("window not divisible by ratio")
    trees = []
    for t in doc["trees"]:
        nodes = []
        for n in t["nodes"]:
            c, u, v = (int(q) for q in n["feat"])
            nodes.append(TreeNode(channel=c, cell_row=u, cell_col=v,
                                  threshold=float(n["thr"]),
                                  left=int(n["left"]), right=int(n["right"]),
                                  leaf=None if n["leaf"] is None else float(n["leaf"])))
        trees.append(Tree(nodes=nodes))
    forest = BoostedForest(trees=trees, shrinkage=float(doc["shrinkage"]),
                           window=window, ratio=ratio, channels=channels,
                           cell_rows=window[0] // ratio, cell_cols=window[1] // ratio,
                           core=core)
    validate_forest(forest)
    return forest
