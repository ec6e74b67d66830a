"""Sliding-window detection over channel pyramids, greedy NMS, proposals.

Windows are enumerated row-major per pyramid level at a cell step of
stride/ratio; surviving scores are mapped back to input-image pixels by
dividing by the level scale, then inset from the padded model window to the
un-padded person core recorded on the forest.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .boost import BoostedForest, score_grid
from .channels import PyramidLevel
from .geometry import box_iou, core_box_of_window
from .tensorio import Detection


@dataclass
class DetectConfig:
    stride: int = 4
    score_threshold: float = 0.0
    nms_overlap: float = 0.5
    max_per_image: Optional[int] = None

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if not (0.0 < self.nms_overlap < 1.0):
            raise ValueError("nms_overlap must be in (0, 1)")


@dataclass
class CalibrationResult:
    threshold: float
    mean_per_image: float
    num_images: int


def nms(dets: Sequence[Detection], overlap: float):
    """Greedy non-maximum suppression.

    Repeatedly keeps the highest-scoring remaining box and discards boxes
    with IoU strictly greater than overlap against it. Ties are broken by
    input order. Output is sorted by descending score.
    """
    if not (0.0 < overlap < 1.0):
        raise ValueError("overlap must be in (0, 1)")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    kept = []
    for i in order:
        box = dets[i].box
        if all(box_iou(box, k.box) <= overlap for k in kept):
            kept.append(dets[i])
    return kept


def detect(forest: BoostedForest, pyramid: Sequence[PyramidLevel],
           cfg: DetectConfig, image_id: str = "") -> list:
    """Run the detector over a pyramid; returns NMS-filtered detections.

    Detections are ordered by descending score with ties broken by scan
    order (level, then row-major origin). Boxes are the un-padded person
    core of each window; boxes smaller than one pixel after scale mapping
    are dropped.
    """
    if forest.ratio < 1:
        raise ValueError("forest has no pixel ratio")
    if cfg.stride % forest.ratio:
        raise ValueError("stride must be a multiple of the forest ratio")
    step = cfg.stride // forest.ratio
    candidates = []
    seq = 0
    for level in pyramid:
        stack = level.stack
        if stack.ratio != forest.ratio:
            raise ValueError("ratio mismatch")
        origins, scores = score_grid(forest, stack, step_cells=step)
        keep = scores >= cfg.score_threshold
        scale = level.scale
        for (oy, ox), score in zip(origins[keep], scores[keep]):
            wx = ox * forest.ratio / scale
            wy = oy * forest.ratio / scale
            ww = forest.window[1] / scale
            wh = forest.window[0] / scale
            x, y, w, h = core_box_of_window((wx, wy, ww, wh), forest.window,
                                            forest.core)
            if w < 1.0 or h < 1.0:
                continue
            candidates.append((float(score), seq,
                               Detection(image_id, x, y, w, h, float(score),
                                         source=stack.source)))
            seq += 1
    candidates.sort(key=lambda e: (-e[0], e[1]))
    out = nms([c[2] for c in candidates], cfg.nms_overlap)
    if cfg.max_per_image is not None:
        out = out[: cfg.max_per_image]
    return out


def _mean_count(per_image_scores, threshold: float, cap) -> float:
    total = 0
    for scores in per_image_scores:
        n = int(np.sum(scores >= threshold))
        if cap is not None:
            n = min(n, cap)
        total += n
    return total / len(per_image_scores)


def calibrate_threshold(forest: BoostedForest, pyramids, cfg: DetectConfig,
                        target_per_image: float,
                        tolerance: float = 0.2) -> CalibrationResult:
    """Pick a score threshold hitting target proposals/image within +-tolerance.

    Runs the detector once per calibration image with no threshold, then
    binary-searches the post-NMS score distribution: survivors above any
    threshold are unaffected by lower-scored boxes, so the mean count is
    monotone in the threshold.
    """
    if not pyramids:
        raise ValueError("empty calibration set")
    open_cfg = DetectConfig(stride=cfg.stride, score_threshold=-math.inf,
                            nms_overlap=cfg.nms_overlap, max_per_image=None)
    per_image = [np.array([d.score for d in detect(forest, p, open_cfg)])
                 for p in pyramids]
    scores = np.sort(np.concatenate(per_image))[::-1]
    if scores.size == 0:
        raise ValueError("calibration produced no detections")

    lo, hi = 0, scores.size - 1  # index into descending scores
    best = None
    while lo <= hi:
        mid = (lo + hi) // 2
        thr = float(scores[mid])
        mean = _mean_count(per_image, thr, cfg.max_per_image)
        if best is None or abs(mean - target_per_image) < abs(best[1] - target_per_image):
            best = (thr, mean)
        if mean < target_per_image:
            lo = mid + 1  # admit more: lower the threshold
        elif mean > target_per_image:
            hi = mid - 1
        else:
            break
    threshold, mean = best
    if abs(mean - target_per_image) > tolerance * target_per_image:
        raise ValueError(
            f"cannot reach target {target_per_image}/image: best mean {mean:.2f}")
    return CalibrationResult(threshold=threshold, mean_per_image=mean,
                             num_images=len(pyramids))


def propose(forest: BoostedForest, pyramids, cfg: DetectConfig,
            image_ids=None, target_per_image: Optional[float] = None):
    """Generate per-image proposals, optionally calibrating the threshold.

    pyramids is one pyramid per image. When target_per_image is given the
    threshold is calibrated on this same set first. Returns
    (per-image detection lists, CalibrationResult or None).
    """
    if image_ids is None:
        image_ids = [f"img{i}" for i in range(len(pyramids))]
    calib = None
    threshold = cfg.score_threshold
    if target_per_image is not None:
        calib = calibrate_threshold(forest, pyramids, cfg, target_per_image)
        threshold = calib.threshold
    run_cfg = DetectConfig(stride=cfg.stride, score_threshold=threshold,
                           nms_overlap=cfg.nms_overlap,
                           max_per_image=cfg.max_per_image)
    per_image = [detect(forest, p, run_cfg, image_id=i)
                 for i, p in zip(image_ids, pyramids)]
    return per_image, calib
