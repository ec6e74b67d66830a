import numpy as np
import pytest

from channelforest.segfuse import (MASK_HEIGHT, MASK_WIDTH, ScoreMap,
                                   WeightMask, crop_resize, fuse_scores,
                                   learn_mask, seg_score, tune_lambda)
from channelforest.tensorio import GroundTruthBox


def crop_resize_oracle(values, box, out_h=MASK_HEIGHT, out_w=MASK_WIDTH):
    """Scalar bilinear crop-resize: half-pixel centers, clamp-at-edge."""
    h, w = values.shape
    bx, by, bw, bh = box[0], box[1], box[2], box[3]
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            sy = by + (i + 0.5) * (bh / out_h) - 0.5
            sx = bx + (j + 0.5) * (bw / out_w) - 0.5
            sy = min(max(sy, 0.0), h - 1.0)
            sx = min(max(sx, 0.0), w - 1.0)
            y0, x0 = int(np.floor(sy)), int(np.floor(sx))
            y1, x1 = min(y0 + 1, h - 1), min(x0 + 1, w - 1)
            fy, fx = sy - y0, sx - x0
            top = values[y0, x0] * (1 - fx) + values[y0, x1] * fx
            bot = values[y1, x0] * (1 - fx) + values[y1, x1] * fx
            out[i, j] = top * (1 - fy) + bot * fy
    return out


def random_case(rng):
    """Random map and box; boxes may poke out of the image but always
    intersect it."""
    h = int(rng.integers(30, 120))
    w = int(rng.integers(30, 120))
    values = rng.uniform(0.0, 1.0, size=(h, w))
    x = float(rng.uniform(-10, w - 10))
    y = float(rng.uniform(-10, h - 10))
    bw = float(rng.uniform(12, w))
    bh = float(rng.uniform(12, h))
    return values, (x, y, bw, bh)


class TestLearnMask:
    def test_constant_map_gives_constant_mask(self):
        smap = ScoreMap(np.full((60, 50), 0.75), image_id="im1")
        gts = {"im1": [GroundTruthBox(x=5, y=5, w=20, h=40)]}
        mask = learn_mask({"im1": smap}, gts)
        assert mask.sample_count == 1
        np.testing.assert_allclose(mask.values, 0.75, atol=1e-12)

    def test_two_constants_average(self):
        maps = {"a": ScoreMap(np.full((50, 50), 0.2), image_id="a"),
                "b": ScoreMap(np.full((50, 50), 0.6), image_id="b")}
        gts = {"a": [GroundTruthBox(x=2, y=2, w=10, h=20)],
               "b": [GroundTruthBox(x=5, y=5, w=12, h=30)]}
        mask = learn_mask(maps, gts)
        assert mask.sample_count == 2
        np.testing.assert_allclose(mask.values, 0.4, atol=1e-12)

    def test_matches_crop_resize_oracle(self):
        rng = np.random.default_rng(100)
        for _ in range(20):
            values, box = random_case(rng)
            smap = ScoreMap(values, image_id="im")
            gt = GroundTruthBox(x=box[0], y=box[1], w=box[2], h=box[3])
            mask = learn_mask({"im": smap}, {"im": [gt]})
            np.testing.assert_allclose(mask.values, crop_resize_oracle(values, box),
                                       atol=1e-6)

    def test_values_stay_in_unit_interval(self):
        rng = np.random.default_rng(101)
        maps = {}
        gts = {}
        for i in range(5):
            img = f"im{i}"
            maps[img] = ScoreMap(rng.uniform(0, 1, size=(40, 40)), image_id=img)
            gts[img] = [GroundTruthBox(x=3, y=2, w=15, h=30)]
        mask = learn_mask(maps, gts)
        assert mask.values.min() >= 0.0
        assert mask.values.max() <= 1.0

    def test_ignore_boxes_excluded(self):
        smap = ScoreMap(np.full((40, 40), 0.5), image_id="im")
        gts = {"im": [GroundTruthBox(x=1, y=1, w=5, h=10, ignore=True)]}
        with pytest.raises(ValueError, match="no usable ground truth"):
            learn_mask({"im": smap}, gts)


class TestSegScore:
    def test_uniform_mask_and_map(self):
        mask = WeightMask(np.full((MASK_HEIGHT, MASK_WIDTH), 0.5))
        smap = ScoreMap(np.full((80, 80), 0.4))
        got = seg_score(mask, smap, (10, 10, 30, 60))
        assert got == pytest.approx(0.2, abs=1e-12)

    def test_zero_map_scores_zero(self):
        mask = WeightMask(np.random.default_rng(0).uniform(
            size=(MASK_HEIGHT, MASK_WIDTH)))
        smap = ScoreMap(np.zeros((60, 60)))
        assert seg_score(mask, smap, (5, 5, 20, 40)) == 0.0

    def test_matches_elementwise_oracle(self):
        rng = np.random.default_rng(102)
        for _ in range(20):
            values, box = random_case(rng)
            mask_vals = rng.uniform(0, 1, size=(MASK_HEIGHT, MASK_WIDTH))
            got = seg_score(WeightMask(mask_vals), ScoreMap(values), box)
            crop = crop_resize_oracle(values, box)
            want = float((mask_vals * crop).sum()) / (MASK_HEIGHT * MASK_WIDTH)
            assert got == pytest.approx(want, abs=1e-6)

    def test_monotone_in_map(self):
        rng = np.random.default_rng(103)
        values = rng.uniform(0, 0.9, size=(50, 50))
        mask = WeightMask(rng.uniform(0, 1, size=(MASK_HEIGHT, MASK_WIDTH)))
        box = (5.0, 5.0, 20.0, 40.0)
        base = seg_score(mask, ScoreMap(values), box)
        bumped = values.copy()
        bumped[20, 15] += 0.1
        assert seg_score(mask, ScoreMap(bumped), box) >= base - 1e-12

    def test_box_outside_image_rejected(self):
        mask = WeightMask(np.zeros((MASK_HEIGHT, MASK_WIDTH)))
        smap = ScoreMap(np.zeros((40, 40)))
        with pytest.raises(ValueError, match="box outside image"):
            seg_score(mask, smap, (100.0, 0.0, 10.0, 10.0))


class TestFuseScores:
    def test_lambda_zero_identity(self):
        dets = [0.3, -1.2, 4.5]
        assert fuse_scores(dets, [9.0, 9.0, 9.0], 0.0) == dets

    def test_zero_seg_scores_identity(self):
        dets = [0.3, -1.2, 4.5]
        assert fuse_scores(dets, [0.0, 0.0, 0.0], 1.0) == dets

    def test_arithmetic(self):
        assert fuse_scores([1.0, 2.0], [0.5, 0.0], 2.0) == [2.0, 2.0]

    def test_lambda_zero_preserves_argsort(self):
        rng = np.random.default_rng(104)
        dets = list(rng.normal(size=40))
        segs = list(rng.uniform(size=40))
        fused = fuse_scores(dets, segs, 0.0)
        assert np.array_equal(np.argsort(fused), np.argsort(dets))

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="length mismatch"):
            fuse_scores([1.0], [1.0, 2.0], 1.0)


def test_tune_lambda_picks_minimum():
    table = {0.25: 0.5, 0.5: 0.4, 1.0: 0.3, 2.0: 0.3, 4.0: 0.6}
    assert tune_lambda(list(table), lambda lam: table[lam]) == 1.0


def test_score_map_validation():
    with pytest.raises(ValueError, match="in \\[0, 1\\]"):
        ScoreMap(np.full((4, 4), 1.5))
    with pytest.raises(ValueError, match="100x41"):
        WeightMask(np.zeros((10, 10)))
