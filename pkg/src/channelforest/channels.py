"""Feature channel computation: ACF channels, checkerboard filtering, pyramids.

All channel data lives in ChannelStack objects: a (C, H, W) float32 grid of
cell values at a fixed input-pixels-per-cell ratio. Stacks from different
sources (hand-crafted or precomputed network activations loaded via tensorio)
are interchangeable as long as dims and ratio agree.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

VALID_RATIOS = (4, 8, 16)

# Orientation bins cover [0, pi) with centers at k*pi/6; gradient mass is
# soft-assigned to the two nearest centers (circular).
NUM_ORIENT_BINS = 6

# sRGB -> XYZ (D65), no gamma linearization: 8-bit inputs are treated as
# linear intensities, which keeps the channel recipe cheap and deterministic.
_RGB2XYZ = np.array(
    [
        [0.412453, 0.357580, 0.180423],
        [0.212671, 0.715160, 0.072169],
        [0.019334, 0.119193, 0.950227],
    ]
)
_UN = 0.197833
_VN = 0.468331


@dataclass(frozen=True)
class Image:
    """8-bit RGB image, shape (H, W, 3)."""

    data: np.ndarray

    def __post_init__(self):
        d = self.data
        if d.ndim != 3 or d.shape[2] != 3:
            raise ValueError("image data must have shape (H, W, 3)")
        if d.shape[0] < 1 or d.shape[1] < 1:
            raise ValueError("empty image")
        if d.dtype != np.uint8:
            raise ValueError("image data must be uint8")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class ChannelStack:
    """A (C, H, W) grid of feature cell values at a fixed down-sampling ratio."""

    values: np.ndarray
    ratio: int
    source: str = ""

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float32)
        if self.values.ndim != 3:
            raise ValueError("stack values must have shape (C, H, W)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("stack values must be finite")

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass
class FilterBank:
    """A list of 2x2 kernels applied per channel by apply_filter_bank."""

    kernels: np.ndarray

    def __post_init__(self):
        self.kernels = np.asarray(self.kernels, dtype=np.float32)
        if self.kernels.size == 0:
            raise ValueError("empty filter bank")
        if self.kernels.ndim != 3 or self.kernels.shape[1:] != (2, 2):
            raise ValueError("kernels must have shape (n, 2, 2)")

    @property
    def count(self) -> int:
        return self.kernels.shape[0]


@dataclass
class PyramidConfig:
    scales_per_octave: int = 8
    min_scale: float = 0.5
    max_scale: float = 1.0
    ratio: int = 4

    def __post_init__(self):
        if self.scales_per_octave < 1:
            raise ValueError("scales_per_octave must be >= 1")
        if not (0.0 < self.min_scale <= self.max_scale):
            raise ValueError("need 0 < min_scale <= max_scale")


@dataclass
class PyramidLevel:
    stack: ChannelStack
    scale: float


def default_checkerboard_bank() -> FilterBank:
    """The repo's default bank of 12 binary 2x2 filters.

    Constant, two horizontal differences, two vertical differences, two
    diagonal differences, four single-cell indicators, and one
    center-surround checker. Entries are in {-1, 0, +1}.
    """
    kernels = [
        [[1, 1], [1, 1]],
        [[1, -1], [0, 0]],
        [[0, 0], [1, -1]],
        [[1, 0], [-1, 0]],
        [[0, 1], [0, -1]],
        [[1, 0], [0, -1]],
        [[0, 1], [-1, 0]],
        [[1, 0], [0, 0]],
        [[0, 1], [0, 0]],
        [[0, 0], [1, 0]],
        [[0, 0], [0, 1]],
        [[1, -1], [-1, 1]],
    ]
    return FilterBank(np.array(kernels, dtype=np.float32))


def load_filter_bank(path) -> FilterBank:
    """Load a filter bank from a JSON list of 2x2 row-major kernel arrays."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    if not isinstance(raw, list) or not raw:
        raise ValueError("empty filter bank")
    return FilterBank(np.array(raw, dtype=np.float32))


def bilinear_sample(plane: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample a 2D plane at real coordinates with edge clamping.

    Coordinates are in pixel units where integer (y, x) addresses pixel
    centers. Out-of-range coordinates clamp to the border pixel.
    """
    h, w = plane.shape
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = ys - y0
    fx = xs - x0
    top = plane[y0, x0] * (1.0 - fx) + plane[y0, x1] * fx
    bot = plane[y1, x0] * (1.0 - fx) + plane[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


def resize_image(img: Image, out_h: int, out_w: int) -> Image:
    """Bilinear image resize with half-pixel-centered sampling."""
    if out_h < 1 or out_w < 1:
        raise ValueError("empty image")
    src = img.data.astype(np.float64)
    ys = (np.arange(out_h) + 0.5) * (img.height / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (img.width / out_w) - 0.5
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    out = np.empty((out_h, out_w, 3), dtype=np.float64)
    for c in range(3):
        out[:, :, c] = bilinear_sample(src[:, :, c], yy, xx)
    return Image(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def _rgb_to_luv(rgb01: np.ndarray) -> np.ndarray:
    """CIELUV from [0,1] RGB, affinely rescaled so each channel sits in ~[0,1]."""
    flat = rgb01.reshape(-1, 3)
    xyz = flat @ _RGB2XYZ.T
    x, y, z = xyz[:, 0], xyz[:, 1], xyz[:, 2]

    t = y
    cube = t > (6.0 / 29.0) ** 3
    fl = np.where(cube, 116.0 * np.cbrt(np.maximum(t, 0)) - 16.0,
                  t * (29.0 / 3.0) ** 3 / 27.0)
    denom = x + 15.0 * y + 3.0 * z
    safe = denom > 1e-12
    up = np.where(safe, 4.0 * x / np.where(safe, denom, 1.0), _UN)
    vp = np.where(safe, 9.0 * y / np.where(safe, denom, 1.0), _VN)
    u = 13.0 * fl * (up - _UN)
    v = 13.0 * fl * (vp - _VN)

    out = np.empty_like(flat)
    out[:, 0] = fl / 100.0
    out[:, 1] = (u + 134.0) / 354.0
    out[:, 2] = (v + 140.0) / 262.0
    return out.reshape(rgb01.shape)


def _gradients(gray: np.ndarray):
    """Central-difference gradients with replicate-edge handling."""
    left = gray[:, np.r_[0, 0 : gray.shape[1] - 1]]
    right = gray[:, np.r_[1 : gray.shape[1], gray.shape[1] - 1]]
    up = gray[np.r_[0, 0 : gray.shape[0] - 1], :]
    down = gray[np.r_[1 : gray.shape[0], gray.shape[0] - 1], :]
    dx = (right - left) / 2.0
    dy = (down - up) / 2.0
    return dx, dy


def _cell_average(plane: np.ndarray, ratio: int) -> np.ndarray:
    """Average over ratio x ratio cells, replicate-padding to divisibility."""
    h, w = plane.shape
    ph = (-h) % ratio
    pw = (-w) % ratio
    if ph or pw:
        plane = np.pad(plane, ((0, ph), (0, pw)), mode="edge")
    hh, ww = plane.shape
    return plane.reshape(hh // ratio, ratio, ww // ratio, ratio).mean(axis=(1, 3))


def compute_acf_channels(img: Image, ratio: int) -> ChannelStack:
    """Compute the 10 aggregate channels: LUV, gradient magnitude, 6 orientations.

    Gradients are taken on the mean-RGB intensity with central differences
    (replicate edges), so the 7 gradient-derived channels are invariant to a
    constant shift of all pixel values. Orientation is unsigned in [0, pi),
    soft-binned onto 6 bins with centers at k*pi/6, weighted by magnitude.
    Per-pixel responses are averaged over ratio x ratio cells.
    """
    if ratio not in VALID_RATIOS:
        raise ValueError(f"ratio must be one of {VALID_RATIOS}")
    if img.height < 1 or img.width < 1:
        raise ValueError("empty image")

    rgb = img.data.astype(np.float64) / 255.0
    luv = _rgb_to_luv(rgb)

    gray = rgb.mean(axis=2)
    dx, dy = _gradients(gray)
    mag = np.sqrt(dx * dx + dy * dy)
    theta = np.mod(np.arctan2(dy, dx), math.pi)

    bin_width = math.pi / NUM_ORIENT_BINS
    pos = theta / bin_width
    b0 = np.floor(pos).astype(np.int64)
    w1 = pos - b0
    lo = np.mod(b0, NUM_ORIENT_BINS)
    hi = np.mod(b0 + 1, NUM_ORIENT_BINS)

    h, w = gray.shape
    per_pixel = np.zeros((10, h, w), dtype=np.float64)
    per_pixel[0] = luv[:, :, 0]
    per_pixel[1] = luv[:, :, 1]
    per_pixel[2] = luv[:, :, 2]
    per_pixel[3] = mag
    flat_lo = lo.ravel()
    flat_hi = hi.ravel()
    flat_mag = mag.ravel()
    flat_w1 = w1.ravel()
    idx = np.arange(h * w)
    orient = per_pixel[4:].reshape(NUM_ORIENT_BINS, -1)
    np.add.at(orient, (flat_lo, idx), flat_mag * (1.0 - flat_w1))
    np.add.at(orient, (flat_hi, idx), flat_mag * flat_w1)

    cells = np.stack([_cell_average(per_pixel[c], ratio) for c in range(10)])
    return ChannelStack(cells.astype(np.float32), ratio=ratio, source="acf")


def apply_filter_bank(stack: ChannelStack, bank: FilterBank) -> ChannelStack:
    """Cross-correlate every channel with every kernel.

    Output channel c*count+k is the valid-region correlation of input
    channel c with kernel k, zero-padded back to the input dims (the last
    row and column are zero). Ratio is unchanged.
    """
    if bank.count == 0:
        raise ValueError("empty filter bank")
    if stack.height < 2 or stack.width < 2:
        raise ValueError("stack dims must be at least 2x2")
    c, h, w = stack.values.shape
    out = np.zeros((c * bank.count, h, w), dtype=np.float64)
    vals = stack.values.astype(np.float64)
    for ci in range(c):
        plane = vals[ci]
        for ki in range(bank.count):
            k = bank.kernels[ki].astype(np.float64)
            valid = (
                k[0, 0] * plane[:-1, :-1]
                + k[0, 1] * plane[:-1, 1:]
                + k[1, 0] * plane[1:, :-1]
                + k[1, 1] * plane[1:, 1:]
            )
            out[ci * bank.count + ki, : h - 1, : w - 1] = valid
    src = f"{stack.source}*bank{bank.count}" if stack.source else f"bank{bank.count}"
    return ChannelStack(out.astype(np.float32), ratio=stack.ratio, source=src)


def pyramid_scales(cfg: PyramidConfig) -> list[float]:
    """Geometric scale sequence from max_scale down to min_scale."""
    step = 2.0 ** (-1.0 / cfg.scales_per_octave)
    scales = []
    s = cfg.max_scale
    while s >= cfg.min_scale - 1e-9:
        scales.append(s)
        s *= step
    return scales


def build_pyramid(img: Image, cfg: PyramidConfig, channel_fn,
                  window: tuple[int, int] = (128, 64)) -> list[PyramidLevel]:
    """Compute channel stacks over a multi-scale image pyramid.

    channel_fn(img, ratio) -> ChannelStack is invoked per level on the
    bilinearly resized image; channels are always recomputed per level.
    Levels whose stack cannot hold one window (window px / ratio cells) are
    dropped.
    """
    win_ch = window[0] // cfg.ratio
    win_cw = window[1] // cfg.ratio
    levels = []
    for s in pyramid_scales(cfg):
        oh = max(1, int(round(img.height * s)))
        ow = max(1, int(round(img.width * s)))
        scaled = img if (oh == img.height and ow == img.width) else resize_image(img, oh, ow)
        stack = channel_fn(scaled, cfg.ratio)
        if stack.height < win_ch or stack.width < win_cw:
            continue
        levels.append(PyramidLevel(stack=stack, scale=s))
    return levels


def concat_stacks(stacks: list[ChannelStack]) -> ChannelStack:
    """Concatenate stacks along the channel axis; dims and ratio must agree."""
    if not stacks:
        raise ValueError("incompatible stacks")
    first = stacks[0]
    for s in stacks[1:]:
        if (s.height, s.width, s.ratio) != (first.height, first.width, first.ratio):
            raise ValueError("incompatible stacks")
    if len(stacks) == 1:
        return ChannelStack(first.values.copy(), ratio=first.ratio, source=first.source)
    values = np.concatenate([s.values for s in stacks], axis=0)
    source = "+".join(s.source for s in stacks if s.source)
    return ChannelStack(values, ratio=first.ratio, source=source)
