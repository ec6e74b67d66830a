"""Pixel-label score fusion: learn a weighted mask from ground truth and
rescore proposals with weighted sums of per-pixel person scores.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .channels import bilinear_sample

MASK_HEIGHT = 100
MASK_WIDTH = 41


@dataclass
class ScoreMap:
    """Per-pixel person probability over one image, values in [0, 1]."""

    values: np.ndarray
    image_id: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("score map must be 2D")
        if self.values.size and (self.values.min() < 0.0 or self.values.max() > 1.0):
            raise ValueError("score map values must be in [0, 1]")


@dataclass
class WeightMask:
    values: np.ndarray
    sample_count: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (MASK_HEIGHT, MASK_WIDTH):
            raise ValueError(f"mask must be {MASK_HEIGHT}x{MASK_WIDTH}")


def crop_resize(values: np.ndarray, box, out_h: int = MASK_HEIGHT,
                out_w: int = MASK_WIDTH) -> np.ndarray:
    """Crop a real-valued box region and bilinearly resize it to out_h x out_w.

    Output pixel (i, j) samples the map at
    (box_y + (i + 0.5) * box_h / out_h - 0.5,
     box_x + (j + 0.5) * box_w / out_w - 0.5)
    with half-pixel centers and clamp-at-edge, so boxes reaching outside the
    image read the border pixels.
    """
    x, y, w, h = box
    ys = y + (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = x + (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    return bilinear_sample(values, yy, xx)


def learn_mask(score_maps: Mapping[str, ScoreMap], annotations) -> WeightMask:
    """Mean of crop-resized score-map regions over all usable ground truth.

    Ignore-flagged boxes and images without a score map contribute nothing.
    """
    acc = np.zeros((MASK_HEIGHT, MASK_WIDTH), dtype=np.float64)
    count = 0
    for image_id, boxes in annotations.items():
        smap = score_maps.get(image_id)
        if smap is None:
            continue
        for gt in boxes:
            if gt.ignore:
                continue
            acc += crop_resize(smap.values, gt.box)
            count += 1
    if count == 0:
        raise ValueError("no usable ground truth")
    return WeightMask(acc / count, sample_count=count)


def seg_score(mask: WeightMask, smap: ScoreMap, box) -> float:
    """Normalized weighted sum of pixel scores inside a proposal box."""
    x, y, w, h = box
    mh, mw = smap.values.shape
    if x + w <= 0 or y + h <= 0 or x >= mw or y >= mh:
        raise ValueError("box outside image")
    crop = crop_resize(smap.values, box)
    return float(np.sum(mask.values * crop)) / (MASK_HEIGHT * MASK_WIDTH)


def fuse_scores(det_scores: Sequence[float], seg_scores: Sequence[float],
                lam: float) -> list:
    """final_i = det_i + lam * seg_i."""
    if len(det_scores) != len(seg_scores):
        raise ValueError("score list length mismatch")
    return [d + lam * s for d, s in zip(det_scores, seg_scores)]


def tune_lambda(candidates: Sequence[float], miss_rate_fn) -> float:
    """Grid-search the fusion weight; ties prefer the smaller lambda."""
    if not candidates:
        raise ValueError("no candidates")
    best = None
    for lam in sorted(candidates):
        mr = miss_rate_fn(lam)
        if best is None or mr < best[1]:
            best = (lam, mr)
    return best[0]
