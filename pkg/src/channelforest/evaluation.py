"""Caltech-style matching and log-average miss rate; interpolated AP.

Matching follows the standard greedy protocol: detections in descending
score order claim at most one unmatched evaluated ground truth each
(highest IoU, ties by ground-truth order); unmatched detections mostly
covering an ignore region are neither hits nor false positives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import box_iou, intersection_area

TP = "TP"
FP = "FP"
IGN = "IGN"

MR_CLAMP = 1e-4


def _default_fppi_refs():
    return tuple(float(v) for v in np.logspace(-2.0, 0.0, 9))


@dataclass
class EvalCriteria:
    iou_min: float = 0.5
    min_height: float = 50.0
    max_occlusion: float = 0.35
    ignore_cover_min: float = 0.5
    fppi_refs: tuple = field(default_factory=_default_fppi_refs)
    recall_points: int = 41

    def __post_init__(self):
        if not (0.0 < self.iou_min < 1.0):
            raise ValueError("iou_min must be in (0, 1)")
        if list(self.fppi_refs) != sorted(self.fppi_refs):
            raise ValueError("fppi_refs must be ascending")


@dataclass
class EvalCurve:
    points: list  # (x, y), x strictly increasing
    summary: float
    kind: str  # "roc-mr" or "pr"


@dataclass
class MatchResult:
    """Per-image matching outcome: canonically sorted detections + verdicts."""

    detections: list
    verdicts: list
    gt_matched: list
    num_evaluated: int


def filter_ground_truth(gts, criteria: EvalCriteria):
    """Split ground truth into (evaluated, ignored) per the Reasonable filter."""
    evaluated, ignored = [], []
    for gt in gts:
        if gt.ignore or gt.h < criteria.min_height or gt.occlusion > criteria.max_occlusion:
            ignored.append(gt)
        else:
            evaluated.append(gt)
    return evaluated, ignored


def _canonical_order(dets):
    return sorted(dets, key=lambda d: (-d.score, d.x, d.y, d.w, d.h))


def match_detections(dets, evaluated, ignored, criteria: EvalCriteria) -> MatchResult:
    """Greedy per-image matching; verdicts align with the sorted detections.

    Detections are canonicalized by (-score, x, y, w, h) so results do not
    depend on input order. A detection whose intersection over its own area
    with any ignored box exceeds ignore_cover_min is IGN.
    """
    ordered = _canonical_order(dets)
    matched = [False] * len(evaluated)
    verdicts = []
    for det in ordered:
        best_iou = 0.0
        best_gt = -1
        for gi, gt in enumerate(evaluated):
            if matched[gi]:
                continue
            iou = box_iou(det.box, gt.box)
            if iou >= criteria.iou_min and iou > best_iou:
                best_iou = iou
                best_gt = gi
        if best_gt >= 0:
            matched[best_gt] = True
            verdicts.append(TP)
            continue
        area = det.w * det.h
        covered = any(
            intersection_area(det.box, ig.box) / area > criteria.ignore_cover_min
            for ig in ignored)
        verdicts.append(IGN if covered else FP)
    return MatchResult(detections=ordered, verdicts=verdicts,
                       gt_matched=matched, num_evaluated=len(evaluated))


def _merged_verdicts(results: Sequence[MatchResult]):
    rows = []
    for res in results:
        for det, verdict in zip(res.detections, res.verdicts):
            rows.append((det.score, verdict))
    rows.sort(key=lambda r: -r[0])
    return rows


def mr_curve(results: Sequence[MatchResult],
             fppi_refs=None) -> EvalCurve:
    """FPPI vs miss rate swept over every distinct detection score.

    Points are deduplicated on FPPI keeping the lowest miss rate; the
    summary is the log-average miss rate over fppi_refs.
    """
    num_images = len(results)
    num_gt = sum(r.num_evaluated for r in results)
    if num_gt == 0:
        raise ValueError("no ground truth")
    rows = _merged_verdicts(results)

    raw_points = []
    tp = fp = 0
    i = 0
    while i < len(rows):
        score = rows[i][0]
        while i < len(rows) and rows[i][0] == score:
            if rows[i][1] == TP:
                tp += 1
            elif rows[i][1] == FP:
                fp += 1
            i += 1
        raw_points.append((fp / num_images, 1.0 - tp / num_gt))
    if not raw_points:
        raw_points = [(0.0, 1.0)]

    best = {}
    for x, y in raw_points:
        if x not in best or y < best[x]:
            best[x] = y
    points = sorted(best.items())
    refs = tuple(fppi_refs) if fppi_refs is not None else _default_fppi_refs()
    summary = log_avg_mr(EvalCurve(points, 0.0, "roc-mr"), refs)
    return EvalCurve(points=points, summary=summary, kind="roc-mr")


def log_avg_mr(curve: EvalCurve, fppi_refs) -> float:
    """Geometric mean of miss rates sampled at the FPPI reference points.

    Each reference takes the miss rate of the curve point with the largest
    FPPI <= ref (1.0 when there is none); rates clamp at 1e-4 before the log.
    """
    refs = list(fppi_refs)
    if not refs:
        raise ValueError("empty fppi references")
    total = 0.0
    for ref in refs:
        mr = 1.0
        for x, y in curve.points:
            if x <= ref:
                mr = y
            else:
                break
        total += math.log(max(mr, MR_CLAMP))
    return math.exp(total / len(refs))


def average_precision(results: Sequence[MatchResult],
                      recall_points: int = 41):
    """Interpolated average precision; returns (EvalCurve "pr", AP).

    Interpolated precision at recall r is the maximum precision among
    operating points with recall >= r; AP is its mean over recall_points
    levels evenly spaced in [0, 1] inclusive.
    """
    num_gt = sum(r.num_evaluated for r in results)
    if num_gt == 0:
        raise ValueError("no ground truth")
    rows = [(s, v) for s, v in _merged_verdicts(results) if v != IGN]

    ops = []
    tp = fp = 0
    for _, verdict in rows:
        if verdict == TP:
            tp += 1
        else:
            fp += 1
        ops.append((tp / num_gt, tp / (tp + fp)))

    levels = np.linspace(0.0, 1.0, recall_points)
    interp = []
    for r in levels:
        best = 0.0
        for rec, prec in ops:
            if rec >= r and prec > best:
                best = prec
        interp.append(best)
    ap = float(np.mean(interp))

    envelope = {}
    for rec, prec in ops:
        if rec not in envelope or prec > envelope[rec]:
            envelope[rec] = prec
    points = sorted(envelope.items())
    return EvalCurve(points=points, summary=ap, kind="pr"), ap


def evaluate_detections(dets, annotations, criteria: EvalCriteria,
                        kind: str = "mr"):
    """Group detections by image, match against annotations, build the curve.

    Every image in the annotation map counts toward FPPI even without
    detections. Returns the EvalCurve (summary holds log-average MR or AP).
    """
    by_image = {}
    for d in dets:
        by_image.setdefault(d.image_id, []).append(d)
    results = []
    for image_id, gts in annotations.items():
        evaluated, ignored = filter_ground_truth(gts, criteria)
        results.append(match_detections(by_image.get(image_id, []),
                                        evaluated, ignored, criteria))
    if kind == "mr":
        return mr_curve(results, criteria.fppi_refs)
    if kind == "ap":
        curve, _ = average_precision(results, criteria.recall_points)
        return curve
    raise ValueError("kind must be 'mr' or 'ap'")


def write_curve_csv(curve: EvalCurve, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("x,y\n")
        for x, y in curve.points:
            fh.write(f"{x!r},{y!r}\n")
        fh.write(f"summary,{curve.summary!r}\n")


def _svg_coords(points, kind, width, height, pad):
    xs = [p[0] for p in points]
    if kind == "roc-mr":
        floor = min([x for x in xs if x > 0.0], default=1e-2)
        xs = [math.log10(max(x, floor / 2.0)) for x in xs]
    lo, hi = min(xs), max(xs)
    span = (hi - lo) or 1.0
    out = []
    for xv, (_, y) in zip(xs, points):
        px = pad + (xv - lo) / span * (width - 2 * pad)
        py = height - pad - y * (height - 2 * pad)
        out.append((px, py))
    return out


def write_curves_svg(items, path, kind: str, width: int = 640,
                     height: int = 480) -> None:
    """Plot labelled curves; x is log-scaled for roc-mr, linear for pr."""
    pad = 48
    colors = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
    xlabel = "false positives per image" if kind == "roc-mr" else "recall"
    ylabel = "miss rate" if kind == "roc-mr" else "precision"
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" '
        f'y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width // 2}" y="{height - 12}" text-anchor="middle" '
        f'font-size="14">{xlabel}</text>',
        f'<text x="16" y="{height // 2}" text-anchor="middle" font-size="14" '
        f'transform="rotate(-90 16 {height // 2})">{ylabel}</text>',
    ]
    for i, (label, curve) in enumerate(items):
        if not curve.points:
            continue
        color = colors[i % len(colors)]
        pts = _svg_coords(curve.points, kind, width, height, pad)
        path_d = " ".join(f"{px:.2f},{py:.2f}" for px, py in pts)
        parts.append(f'<polyline points="{path_d}" fill="none" stroke="{color}" '
                     f'stroke-width="2"/>')
        parts.append(f'<text x="{width - pad - 4}" y="{pad + 18 * (i + 1)}" '
                     f'text-anchor="end" font-size="13" fill="{color}">'
                     f'{label} ({curve.summary:.4f})</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
