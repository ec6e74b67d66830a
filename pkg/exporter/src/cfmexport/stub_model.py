"""Deterministic stand-in for a convolutional network.

Feature maps are fixed random projections of mean-pooled RGB, seeded per
layer name, so exports are reproducible without any network weights. The
layer table mirrors the VGG16 stacks the pipeline consumes: conv3-* at
down-sampling ratio 4 with 256 channels, conv4-* at 8/512, conv5-* at
16/512.
"""

from __future__ import annotations

import math
import zlib

import numpy as np

LAYER_TABLE = {
    "conv3-1": (4, 256), "conv3-2": (4, 256), "conv3-3": (4, 256),
    "conv4-1": (8, 512), "conv4-2": (8, 512), "conv4-3": (8, 512),
    "conv5-1": (16, 512), "conv5-2": (16, 512), "conv5-3": (16, 512),
}

MODELS = ("stub", "stub-features")  # stub-features has no person class

PREPROCESS_TAG = "pre=rgb01-bilinear-meanpool-randproj-relu"


def _bilinear_resize(plane: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = plane.shape
    ys = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    top = plane[np.ix_(y0, x0)] * (1 - fx) + plane[np.ix_(y0, x1)] * fx
    bot = plane[np.ix_(y1, x0)] * (1 - fx) + plane[np.ix_(y1, x1)] * fx
    return top * (1 - fy) + bot * fy


def _mean_pool(plane: np.ndarray, ratio: int) -> np.ndarray:
    h, w = plane.shape
    ph = (-h) % ratio
    pw = (-w) % ratio
    if ph or pw:
        plane = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    hh, ww = plane.shape
    return plane.reshape(hh // ratio, ratio, ww // ratio, ratio).mean(axis=(1, 3))


class StubModel:
    def __init__(self, identifier: str = "stub"):
        if identifier not in MODELS:
            raise ValueError(f"unknown model {identifier!r}; available: "
                             f"{', '.join(MODELS)}")
        self.identifier = identifier

    @property
    def layers(self):
        return tuple(LAYER_TABLE)

    def feature_map(self, image: np.ndarray, layer: str,
                    scale: float = 1.0) -> np.ndarray:
        """(channels, ceil(s*H/ratio), ceil(s*W/ratio)) float32 activations."""
        if layer not in LAYER_TABLE:
            raise ValueError(f"layer {layer!r} not in model; available: "
                             f"{', '.join(self.layers)}")
        ratio, channels = LAYER_TABLE[layer]
        h, w = image.shape[:2]
        sh = max(1, math.ceil(scale * h))
        sw = max(1, math.ceil(scale * w))
        rgb = image.astype(np.float64) / 255.0
        pooled = np.stack([
            _mean_pool(_bilinear_resize(rgb[:, :, c], sh, sw), ratio)
            for c in range(3)
        ])
        rng = np.random.default_rng(zlib.crc32(layer.encode("utf-8")))
        weights = rng.normal(size=(channels, 3))
        bias = rng.normal(size=channels) * 0.1
        flat = pooled.reshape(3, -1)
        out = weights @ flat + bias[:, None]
        np.maximum(out, 0.0, out=out)
        return out.reshape(channels, pooled.shape[1],
                           pooled.shape[2]).astype(np.float32)

    def person_scores(self, image: np.ndarray) -> np.ndarray:
        """Per-pixel person probability in [0, 1]; mid-gray and darker -> 0."""
        if self.identifier == "stub-features":
            raise ValueError("model lacks a person class")
        gray = image.astype(np.float64).mean(axis=2) / 255.0
        return np.clip(2.0 * gray - 1.0, 0.0, 1.0).astype(np.float32)
