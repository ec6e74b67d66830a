"""Axis-aligned box arithmetic shared by sampling, detection, and evaluation.

Boxes are (x, y, w, h) tuples in input-image pixels, top-left origin,
treated as closed real rectangles.
"""

from __future__ import annotations


def intersection_area(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    return iw * ih


def box_iou(a, b) -> float:
    """Intersection over union: inter / (area_a + area_b - inter)."""
    inter = intersection_area(a, b)
    if inter <= 0.0:
        return 0.0
    union = a[2] * a[3] + b[2] * b[3] - inter
    return inter / union


def default_core(window):
    """The un-padded person region of a model window: 100x41 inside 128x64."""
    return (window[0] * (100.0 / 128.0), window[1] * (41.0 / 64.0))


def padded_window_box(gt_box, window=(128, 64), core=None):
    """Map a ground-truth box to its model-window equivalent.

    The window is a padded person: the ground truth is scaled so its height
    fills the core region, then centered inside the full window frame. Only
    the ground-truth height drives the scale (pedestrian widths are
    standardized by the core aspect).
    """
    if core is None:
        core = default_core(window)
    x, y, w, h = gt_box
    scale = h / core[0]
    wh = window[0] * scale
    ww = window[1] * scale
    cx = x + w / 2.0
    cy = y + h / 2.0
    return (cx - ww / 2.0, cy - wh / 2.0, ww, wh)


def core_box_of_window(window_box, window=(128, 64), core=None):
    """Inverse of padded_window_box: the un-padded person box inside a window."""
    if core is None:
        core = default_core(window)
    x, y, w, h = window_box
    ch = h * (core[0] / window[0])
    cw = w * (core[1] / window[1])
    return (x + (w - cw) / 2.0, y + (h - ch) / 2.0, cw, ch)


def window_box_of_core(core_box, window=(128, 64), core=None):
    """Outset a core person box back to the full model-window box."""
    if core is None:
        core = default_core(window)
    x, y, w, h = core_box
    wh = h * (window[0] / core[0])
    ww = w * (window[1] / core[1])
    return (x - (ww - w) / 2.0, y - (wh - h) / 2.0, ww, wh)
