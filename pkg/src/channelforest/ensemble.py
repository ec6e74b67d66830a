"""Proposal rescoring across member forests and external score fusion.

A cheap detector emits proposals; deeper-layer forests at coarser ratios
rescore each proposal window on their own stacks, and the final score is
the unweighted mean over all member (and optional external) score lists.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .boost import score_origins
from .geometry import window_box_of_core


@dataclass
class EnsembleConfig:
    members: list  # (forest path, tensor source label) pairs
    external_scores: Optional[str] = None
    combine: str = "mean"
    normalize: str = "raw"  # or "znorm" for external scores

    def __post_init__(self):
        if not self.members:
            raise ValueError("ensemble needs at least one member")
        if self.combine != "mean":
            raise ValueError("only mean combination is supported")
        if self.normalize not in ("raw", "znorm"):
            raise ValueError("normalize must be 'raw' or 'znorm'")


def map_box_to_cells(box, ratio: int, stack_dims, window=(128, 64)):
    """Cell-window origin for a pixel box on a stack at the given ratio.

    origin = (round(y/ratio), round(x/ratio)) with half-up rounding, clamped
    so the fixed window/ratio cell window fits inside (height, width).
    """
    if ratio not in (4, 8, 16):
        raise ValueError("ratio must be one of 4, 8, 16")
    h, w = stack_dims
    ch, cw = window[0] // ratio, window[1] // ratio
    if h < ch or w < cw:
        raise ValueError("stack smaller than cell window")
    x, y = box[0], box[1]
    oy = int(math.floor(y / ratio + 0.5))
    ox = int(math.floor(x / ratio + 0.5))
    oy = min(max(oy, 0), h - ch)
    ox = min(max(ox, 0), w - cw)
    return oy, ox


def rescore_proposals(proposals: Sequence, members) -> list:
    """Score every proposal with every member forest on its stack.

    members is a list of (forest, stack) pairs for one image. Each proposal
    core box is outset to the member's full window frame before mapping to
    cells, so rescoring a stride-aligned proposal with its own generator
    reproduces the original score. Returns one score list per member, each
    aligned with the proposal order.
    """
    out = []
    for forest, stack in members:
        if forest.ratio < 1:
            raise ValueError("member forest has no pixel ratio")
        if stack.ratio != forest.ratio:
            raise ValueError("ratio mismatch")
        oys = np.empty(len(proposals), dtype=np.int64)
        oxs = np.empty(len(proposals), dtype=np.int64)
        for i, p in enumerate(proposals):
            wbox = window_box_of_core(p.box, forest.window, forest.core)
            oys[i], oxs[i] = map_box_to_cells(wbox, forest.ratio,
                                              (stack.height, stack.width),
                                              forest.window)
        scores = score_origins(forest, stack, oys, oxs)
        out.append([float(s) for s in scores])
    return out


def combine_scores(lists: Sequence[Sequence[float]],
                   external: Optional[Sequence[float]] = None) -> list:
    """Unweighted arithmetic mean over member (and external) score lists."""
    all_lists = [list(l) for l in lists]
    if external is not None:
        all_lists.append(list(external))
    if not all_lists:
        raise ValueError("no score lists")
    n = len(all_lists[0])
    if any(len(l) != n for l in all_lists):
        raise ValueError("score list length mismatch")
    k = len(all_lists)
    return [sum(l[i] for l in all_lists) / k for i in range(n)]


def fuse_external_scores(proposals: Sequence, path) -> list:
    """Align an external score CSV to proposals by (image_id, per-image index).

    The file is CSV "image_id,proposal_index,score" with a header row;
    proposal_index counts each image's proposals in order of appearance.
    """
    table = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "image_id,proposal_index,score":
            raise ValueError("line 1: bad external score header")
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 3 fields")
            try:
                key = (parts[0], int(parts[1]))
                score = float(parts[2])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: non-numeric field") from exc
            if key in table:
                raise ValueError(f"duplicate external score {key}")
            table[key] = score

    counters = {}
    out = []
    for p in proposals:
        idx = counters.get(p.image_id, 0)
        counters[p.image_id] = idx + 1
        key = (p.image_id, idx)
        if key not in table:
            raise ValueError(f"unscored proposal {key}")
        out.append(table[key])
    return out


def znorm(scores: Sequence[float]) -> list:
    """Z-normalization helper for external scores on a different scale."""
    arr = np.asarray(scores, dtype=np.float64)
    if arr.size == 0:
        return []
    std = float(arr.std())
    if std == 0.0:
        return [0.0] * arr.size
    mean = float(arr.mean())
    return [(s - mean) / std for s in arr]
