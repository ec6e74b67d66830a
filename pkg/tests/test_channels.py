import math

import numpy as np
import pytest

from channelforest.channels import (ChannelStack, FilterBank, Image,
                                    PyramidConfig, apply_filter_bank,
                                    build_pyramid, compute_acf_channels,
                                    concat_stacks, default_checkerboard_bank,
                                    load_filter_bank, pyramid_scales)


def gradient_channels_oracle(data):
    """Per-pixel brute-force gradient magnitude + 6 soft orientation bins."""
    h, w, _ = data.shape
    gray = [[(int(data[y][x][0]) + int(data[y][x][1]) + int(data[y][x][2]))
             / 3.0 / 255.0 for x in range(w)] for y in range(h)]
    out = [[[0.0] * w for _ in range(h)] for _ in range(7)]
    for y in range(h):
        for x in range(w):
            xl = gray[y][max(x - 1, 0)]
            xr = gray[y][min(x + 1, w - 1)]
            yu = gray[max(y - 1, 0)][x]
            yd = gray[min(y + 1, h - 1)][x]
            dx = (xr - xl) / 2.0
            dy = (yd - yu) / 2.0
            mag = math.sqrt(dx * dx + dy * dy)
            theta = math.atan2(dy, dx) % math.pi
            pos = theta / (math.pi / 6.0)
            b0 = math.floor(pos)
            w1 = pos - b0
            out[0][y][x] = mag
            out[1 + int(b0) % 6][y][x] += mag * (1.0 - w1)
            out[1 + int(b0 + 1) % 6][y][x] += mag * w1
    return out


def cell_mean_oracle(plane, ratio):
    h = len(plane)
    w = len(plane[0])
    oh = (h + ratio - 1) // ratio
    ow = (w + ratio - 1) // ratio
    out = [[0.0] * ow for _ in range(oh)]
    for cy in range(oh):
        for cx in range(ow):
            total = 0.0
            for dy in range(ratio):
                for dx in range(ratio):
                    y = min(cy * ratio + dy, h - 1)
                    x = min(cx * ratio + dx, w - 1)
                    total += plane[y][x]
            out[cy][cx] = total / (ratio * ratio)
    return out


class TestAcfChannels:
    def test_constant_image_has_zero_gradient_channels(self):
        img = Image(np.full((64, 64, 3), 128, dtype=np.uint8))
        stack = compute_acf_channels(img, 4)
        assert stack.values.shape == (10, 16, 16)
        assert np.all(stack.values[3:] == 0.0)
        for c in range(3):
            assert np.ptp(stack.values[c]) == 0.0

    def test_output_dims(self):
        img = Image(np.zeros((32, 32, 3), dtype=np.uint8))
        stack = compute_acf_channels(img, 4)
        assert stack.values.shape == (10, 8, 8)
        assert stack.ratio == 4

    def test_vertical_step_edge_matches_pixel_oracle(self):
        data = np.full((32, 32, 3), 60, dtype=np.uint8)
        data[:, 16:] = 200
        stack = compute_acf_channels(Image(data), 4)

        per_pixel = gradient_channels_oracle(data)
        for ci in range(7):
            expected = np.array(cell_mean_oracle(per_pixel[ci], 4))
            np.testing.assert_allclose(stack.values[3 + ci], expected, atol=1e-5)

        # horizontal gradient direction (theta = 0) lands entirely in bin 0
        orient_mass = stack.values[4:].sum(axis=(1, 2))
        assert orient_mass[0] > 0.0
        assert np.all(orient_mass[1:] < 1e-6)

    def test_gradient_channels_shift_invariant(self):
        rng = np.random.default_rng(5)
        data = rng.integers(40, 160, size=(24, 20, 3)).astype(np.uint8)
        a = compute_acf_channels(Image(data), 4)
        b = compute_acf_channels(Image(data + np.uint8(40)), 4)
        np.testing.assert_allclose(a.values[3:], b.values[3:], atol=1e-6)

    def test_empty_image_rejected(self):
        with pytest.raises(ValueError, match="empty image"):
            Image(np.zeros((0, 4, 3), dtype=np.uint8))

    def test_bad_ratio_rejected(self):
        img = Image(np.zeros((16, 16, 3), dtype=np.uint8))
        with pytest.raises(ValueError):
            compute_acf_channels(img, 3)


def conv2x2_oracle(plane, kernel):
    h = len(plane)
    w = len(plane[0])
    out = [[0.0] * w for _ in range(h)]
    for y in range(h - 1):
        for x in range(w - 1):
            acc = 0.0
            for i in range(2):
                for j in range(2):
                    acc += kernel[i][j] * plane[y + i][x + j]
            out[y][x] = acc
    return out


class TestFilterBank:
    def test_default_bank_is_12_binary_kernels(self):
        bank = default_checkerboard_bank()
        assert bank.count == 12
        assert set(np.unique(bank.kernels)) <= {-1.0, 0.0, 1.0}

    def test_zero_sum_kernel_annihilates_constants(self):
        stack = ChannelStack(np.full((1, 6, 6), 3.25, dtype=np.float32), ratio=4)
        bank = FilterBank(np.array([[[1, -1], [0, 0]]], dtype=np.float32))
        out = apply_filter_bank(stack, bank)
        assert np.all(out.values == 0.0)

    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        stack = ChannelStack(rng.uniform(size=(2, 5, 7)).astype(np.float32), ratio=4)
        bank = FilterBank(np.array([[[1, 0], [0, 0]]], dtype=np.float32))
        out = apply_filter_bank(stack, bank)
        np.testing.assert_array_equal(out.values[:, :-1, :-1],
                                      stack.values[:, :-1, :-1])
        assert np.all(out.values[:, -1, :] == 0.0)
        assert np.all(out.values[:, :, -1] == 0.0)

    def test_matches_nested_loop_oracle(self):
        rng = np.random.default_rng(1)
        stack = ChannelStack(rng.uniform(size=(1, 8, 8)).astype(np.float32), ratio=4)
        bank = default_checkerboard_bank()
        out = apply_filter_bank(stack, bank)
        assert out.channels == 12
        plane = stack.values[0].astype(np.float64).tolist()
        for k in range(12):
            expected = conv2x2_oracle(plane, bank.kernels[k].astype(np.float64).tolist())
            np.testing.assert_array_equal(out.values[k], np.array(expected,
                                                                  dtype=np.float32))

    def test_linearity(self):
        rng = np.random.default_rng(2)
        bank = default_checkerboard_bank()
        x = rng.normal(size=(2, 6, 5)).astype(np.float32)
        y = rng.normal(size=(2, 6, 5)).astype(np.float32)
        a, b = 1.5, -0.75
        lhs = apply_filter_bank(ChannelStack(a * x + b * y, ratio=4), bank)
        fx = apply_filter_bank(ChannelStack(x, ratio=4), bank)
        fy = apply_filter_bank(ChannelStack(y, ratio=4), bank)
        np.testing.assert_allclose(lhs.values, a * fx.values + b * fy.values,
                                   atol=1e-5)

    def test_empty_bank_rejected(self):
        with pytest.raises(ValueError, match="empty filter bank"):
            FilterBank(np.zeros((0, 2, 2), dtype=np.float32))

    def test_small_stack_rejected(self):
        stack = ChannelStack(np.zeros((1, 1, 4), dtype=np.float32), ratio=4)
        with pytest.raises(ValueError, match="2x2"):
            apply_filter_bank(stack, default_checkerboard_bank())

    def test_load_from_json(self, tmp_path):
        path = tmp_path / "bank.json"
        path.write_text("[[[1, 0], [0, -1]], [[0, 1], [-1, 0]]]")
        bank = load_filter_bank(path)
        assert bank.count == 2
        assert bank.kernels[0, 0, 0] == 1.0


class TestPyramid:
    def test_scale_sequence_ratio(self):
        img = Image(np.zeros((480, 640, 3), dtype=np.uint8))
        cfg = PyramidConfig(scales_per_octave=8, min_scale=0.5, max_scale=1.0, ratio=4)
        levels = build_pyramid(img, cfg, compute_acf_channels)
        step = 2.0 ** (-1.0 / 8.0)
        for a, b in zip(levels, levels[1:]):
            assert b.scale / a.scale == pytest.approx(step, rel=1e-12)

    def test_single_level(self):
        img = Image(np.zeros((128, 96, 3), dtype=np.uint8))
        cfg = PyramidConfig(scales_per_octave=8, min_scale=1.0, max_scale=1.0, ratio=4)
        levels = build_pyramid(img, cfg, compute_acf_channels)
        assert len(levels) == 1
        assert levels[0].scale == 1.0
        assert levels[0].stack.values.shape == (10, 32, 24)

    def test_window_fit_rule(self):
        img = Image(np.zeros((128, 64, 3), dtype=np.uint8))
        cfg = PyramidConfig(scales_per_octave=4, min_scale=0.25, max_scale=1.0, ratio=4)
        levels = build_pyramid(img, cfg, compute_acf_channels, window=(128, 64))
        assert len(levels) == 1
        assert levels[0].scale == 1.0

    def test_level_count_formula(self):
        cfg = PyramidConfig(scales_per_octave=8, min_scale=0.25, max_scale=1.0, ratio=4)
        expected = math.floor(8 * math.log2(1.0 / 0.25)) + 1
        assert len(pyramid_scales(cfg)) == expected

    def test_may_return_empty(self):
        img = Image(np.zeros((16, 16, 3), dtype=np.uint8))
        cfg = PyramidConfig(scales_per_octave=8, min_scale=1.0, max_scale=1.0, ratio=4)
        assert build_pyramid(img, cfg, compute_acf_channels) == []


class TestConcat:
    def test_conv3_plus_acf(self):
        rng = np.random.default_rng(3)
        conv3 = ChannelStack(rng.uniform(size=(256, 8, 6)).astype(np.float32),
                             ratio=4, source="conv3-3")
        acf = ChannelStack(rng.uniform(size=(10, 8, 6)).astype(np.float32),
                           ratio=4, source="acf")
        both = concat_stacks([conv3, acf])
        assert both.channels == 266
        assert both.ratio == 4
        assert both.source == "conv3-3+acf"
        np.testing.assert_array_equal(both.values[:256], conv3.values)
        np.testing.assert_array_equal(both.values[256:], acf.values)

    def test_single_stack_identity(self):
        stack = ChannelStack(np.ones((2, 3, 3), dtype=np.float32), ratio=8)
        out = concat_stacks([stack])
        np.testing.assert_array_equal(out.values, stack.values)

    def test_ratio_mismatch_rejected(self):
        a = ChannelStack(np.ones((1, 4, 4), dtype=np.float32), ratio=4)
        b = ChannelStack(np.ones((1, 4, 4), dtype=np.float32), ratio=8)
        with pytest.raises(ValueError, match="incompatible stacks"):
            concat_stacks([a, b])
