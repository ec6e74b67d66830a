"""Synthetic benchmark fixtures: bright person-sized rectangles on noise.

Scenes carry one planted 100x41 target per image plus a few bright
distractor shapes (wrong aspect) that a weak seed detector confuses with
targets until a bootstrap round teaches it otherwise. Everything is driven
by a seeded generator, so datasets are reproducible byte-for-byte.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .channels import Image
from .imageio import write_ppm
from .tensorio import GroundTruthBox, write_annotations

PLANT_H = 100
PLANT_W = 41


@dataclass
class Scene:
    image: Image
    boxes: list


# Head / torso / leg spans inside the 100x41 target box, as (row0, row1,
# col0, col1). Part sizes are at least one feature cell so the silhouette
# survives ratio-8 aggregation; a shifted window misaligns the head notch
# and leg gap, which keeps the score surface peaked at the true center.
_PERSON_PARTS = ((0, 24, 8, 33), (24, 64, 0, 41), (64, 100, 0, 16),
                 (64, 100, 25, 41))

# Distractors are silhouette variants that differ from a person only in
# cells that carry no signal against plain background (bright where both
# person and noise are dark). A detector trained on random negatives has no
# reason to test those cells, so these variants score like real targets
# until a bootstrap round supplies them as centered hard negatives.
_DISTRACTOR_PARTS = (
    ((0, 24, 8, 33), (24, 64, 0, 41), (64, 100, 0, 41)),   # solid legs
    ((0, 24, 0, 41), (24, 64, 0, 41), (64, 100, 0, 16),
     (64, 100, 25, 41)),                                    # full-width head
)


def _draw_parts(data, x, y, parts, level, rng, noise):
    for r0, r1, c0, c1 in parts:
        block = np.clip(level + rng.integers(-noise, noise + 1,
                                             size=(r1 - r0, c1 - c0, 3)), 0, 255)
        data[y + r0 : y + r1, x + c0 : x + c1] = block.astype(np.uint8)


def _separated(a, b, hsep, vsep):
    """True when no single model window can contain parts of both boxes."""
    hgap = max(b[0] - (a[0] + a[2]), a[0] - (b[0] + b[2]))
    vgap = max(b[1] - (a[1] + a[3]), a[1] - (b[1] + b[3]))
    return hgap >= hsep or vgap >= vsep


def _try_place(rng, placed, w, h, img_w, img_h):
    """Random top-left for a w x h block whose padded window stays in-image."""
    pad_x = (64 - PLANT_W) / 2.0 + 2
    pad_y = (128 - PLANT_H) / 2.0 + 2
    x_lo, x_hi = int(pad_x) + 1, img_w - w - int(pad_x) - 1
    y_lo, y_hi = int(pad_y) + 1, img_h - h - int(pad_y) - 1
    if x_hi <= x_lo or y_hi <= y_lo:
        return None
    for _ in range(64):
        x = int(rng.integers(x_lo, x_hi))
        y = int(rng.integers(y_lo, y_hi))
        box = (x, y, w, h)
        if all(_separated(box, other, 70, 134) for other in placed):
            placed.append(box)
            return x, y
    return None


def make_scene(rng, width: int = 320, height: int = 240,
               num_distractors: int | None = None,
               distractor_rate: float = 1.0,
               background: int = 60, noise: int = 12,
               plant_brightness=(170, 220)) -> Scene:
    lo = max(0, background - noise)
    data = rng.integers(lo, background + noise + 1,
                        size=(height, width, 3)).astype(np.uint8)
    placed = []
    boxes = []

    spot = _try_place(rng, placed, PLANT_W, PLANT_H, width, height)
    if spot is not None:
        x, y = spot
        level = float(rng.uniform(*plant_brightness))
        _draw_parts(data, x, y, _PERSON_PARTS, level, rng, noise)
        boxes.append(GroundTruthBox(x=float(x), y=float(y),
                                    w=float(PLANT_W), h=float(PLANT_H)))

    if num_distractors is None:
        num_distractors = int(rng.integers(1, 3)) if rng.random() < distractor_rate else 0
    for _ in range(num_distractors):
        parts = _DISTRACTOR_PARTS[int(rng.integers(0, len(_DISTRACTOR_PARTS)))]
        spot = _try_place(rng, placed, PLANT_W, PLANT_H, width, height)
        if spot is None:
            continue
        x, y = spot
        level = float(rng.uniform(*plant_brightness))
        _draw_parts(data, x, y, parts, level, rng, noise)

    return Scene(image=Image(data), boxes=boxes)


def make_dataset(num_images: int, seed: int, prefix: str = "img",
                 **scene_kwargs):
    """Returns (image_ids, images, annotations) for num_images scenes."""
    rng = np.random.default_rng(seed)
    ids, images, annotations = [], [], {}
    for i in range(num_images):
        scene = make_scene(rng, **scene_kwargs)
        image_id = f"{prefix}_{i:04d}"
        ids.append(image_id)
        images.append(scene.image)
        annotations[image_id] = scene.boxes
    return ids, images, annotations


def write_dataset(out_dir, num_images: int, seed: int, prefix: str = "img",
                  **scene_kwargs):
    """Materialize a dataset as PPM files plus an annotations.jsonl."""
    os.makedirs(out_dir, exist_ok=True)
    ids, images, annotations = make_dataset(num_images, seed, prefix,
                                            **scene_kwargs)
    records = {}
    for image_id, img in zip(ids, images):
        write_ppm(img, os.path.join(out_dir, f"{image_id}.ppm"))
        records[image_id] = (img.width, img.height, annotations[image_id])
    write_annotations(records, os.path.join(out_dir, "annotations.jsonl"))
    return ids
