import json
import struct

import numpy as np
import pytest

from channelforest import boost
from channelforest.tensorio import (Detection, GroundTruthBox,
                                    TensorFormatError, read_annotations,
                                    read_detections, read_forest, read_tensor,
                                    write_detections, write_forest,
                                    write_tensor)
from conftest import random_forest, random_stack


class TestTensorRoundTrip:
    def test_conv3_roundtrip_bit_identical(self, tmp_path):
        rng = np.random.default_rng(0)
        values = rng.normal(size=(256, 32, 16)).astype(np.float32)
        path = tmp_path / "t.cft"
        write_tensor(values, values.shape, 4, "conv3-3", path)
        got, dims, ratio, name = read_tensor(path)
        assert dims == (256, 32, 16)
        assert ratio == 4
        assert name == "conv3-3"
        assert got.tobytes() == values.tobytes()

    def test_conv4_header_accepted(self, tmp_path):
        values = np.zeros((512, 16, 8), dtype=np.float32)
        path = tmp_path / "t.cft"
        write_tensor(values, values.shape, 8, "conv4-3", path)
        _, dims, ratio, name = read_tensor(path)
        assert dims == (512, 16, 8) and ratio == 8

    def test_small_dims_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        for _ in range(30):
            dims = (int(rng.integers(1, 5)), int(rng.integers(1, 65)),
                    int(rng.integers(1, 65)))
            values = rng.normal(size=dims).astype(np.float32)
            path = tmp_path / "t.cft"
            write_tensor(values, dims, 1, "x", path)
            got, rdims, _, _ = read_tensor(path)
            assert rdims == dims
            assert got.tobytes() == values.tobytes()

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "t.cft"
        write_tensor(np.ones((2, 3), dtype=np.float32), (2, 3), 1, "m", path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-4])
        with pytest.raises(TensorFormatError, match="truncated payload"):
            read_tensor(path)

    def test_bad_magic_big_endian(self, tmp_path):
        path = tmp_path / "t.cft"
        write_tensor(np.ones((2, 2), dtype=np.float32), (2, 2), 1, "m", path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"1TFC"  # byte-swapped magic as a big-endian writer would emit
        path.write_bytes(bytes(raw))
        with pytest.raises(TensorFormatError, match="bad magic"):
            read_tensor(path)

    def test_dims_overflow(self, tmp_path):
        path = tmp_path / "t.cft"
        header = struct.pack("<4sIII", b"CFT1", 1, 1, 3)
        header += struct.pack("<3I", 0xFFFFFFFF, 0xFFFFFFFF, 4)
        header += struct.pack("<II", 1, 0)
        path.write_bytes(header)
        with pytest.raises(TensorFormatError, match="dims overflow"):
            read_tensor(path)

    def test_bad_version_and_dtype(self, tmp_path):
        path = tmp_path / "t.cft"
        write_tensor(np.ones((2, 2), dtype=np.float32), (2, 2), 1, "m", path)
        raw = bytearray(path.read_bytes())
        good = bytes(raw)
        raw[4] = 9
        path.write_bytes(bytes(raw))
        with pytest.raises(TensorFormatError, match="unsupported version"):
            read_tensor(path)
        raw = bytearray(good)
        raw[8] = 7
        path.write_bytes(bytes(raw))
        with pytest.raises(TensorFormatError, match="unsupported dtype"):
            read_tensor(path)

    def test_fuzzed_headers_never_crash(self, tmp_path):
        rng = np.random.default_rng(7)
        path = tmp_path / "t.cft"
        write_tensor(np.ones((3, 4, 5), dtype=np.float32), (3, 4, 5), 4, "zz", path)
        good = path.read_bytes()
        for i in range(200):
            raw = bytearray(good)
            mode = i % 3
            if mode == 0:
                raw = raw[: int(rng.integers(0, len(raw)))]
            elif mode == 1:
                pos = int(rng.integers(0, len(raw)))
                raw[pos] = int(rng.integers(0, 256))
            else:
                raw += bytes(rng.integers(0, 256, size=int(rng.integers(1, 16)),
                                          dtype=np.uint8))
            path.write_bytes(bytes(raw))
            try:
                read_tensor(path)
            except TensorFormatError:
                pass


class TestAnnotations:
    def write(self, tmp_path, lines):
        path = tmp_path / "ann.jsonl"
        path.write_text("\n".join(lines) + "\n")
        return path

    def test_single_person_box(self, tmp_path):
        rec = {"image": "im1", "width": 640, "height": 480,
               "boxes": [{"x": 10, "y": 20, "w": 30, "h": 60, "label": "person"}]}
        out = read_annotations(self.write(tmp_path, [json.dumps(rec)]))
        assert len(out) == 1
        box = out["im1"][0]
        assert (box.x, box.y, box.w, box.h) == (10, 20, 30, 60)
        assert box.ignore is False
        assert box.occlusion == 0.0

    def test_degenerate_box_rejected(self, tmp_path):
        rec = {"image": "im1", "width": 640, "height": 480,
               "boxes": [{"x": 1, "y": 1, "w": 0, "h": 10, "label": "person"}]}
        with pytest.raises(ValueError, match="line 1.*degenerate box"):
            read_annotations(self.write(tmp_path, [json.dumps(rec)]))

    def test_ignore_flag(self, tmp_path):
        rec = {"image": "im1", "width": 64, "height": 48,
               "boxes": [{"x": 1, "y": 1, "w": 5, "h": 10, "label": "person",
                          "ignore": True, "occl": 0.5}]}
        out = read_annotations(self.write(tmp_path, [json.dumps(rec)]))
        assert out["im1"][0].ignore is True
        assert out["im1"][0].occlusion == 0.5

    def test_malformed_line_number(self, tmp_path):
        good = json.dumps({"image": "a", "width": 1, "height": 1, "boxes": []})
        with pytest.raises(ValueError, match="line 2"):
            read_annotations(self.write(tmp_path, [good, "{nope"]))

    def test_duplicate_image_rejected(self, tmp_path):
        rec = json.dumps({"image": "a", "width": 1, "height": 1, "boxes": []})
        with pytest.raises(ValueError, match="line 2.*duplicate"):
            read_annotations(self.write(tmp_path, [rec, rec]))

    def test_parser_total_on_arbitrary_bytes(self, tmp_path):
        rng = np.random.default_rng(17)
        path = tmp_path / "junk.jsonl"
        for _ in range(60):
            blob = bytes(rng.integers(0, 256, size=int(rng.integers(0, 200)),
                                      dtype=np.uint8))
            path.write_bytes(blob)
            try:
                read_annotations(path)
            except ValueError as exc:
                assert "line" in str(exc)


class TestDetections:
    def test_empty_list(self, tmp_path):
        path = tmp_path / "d.csv"
        write_detections([], path)
        assert path.read_text() == "image_id,x,y,w,h,score\n"
        assert read_detections(path) == []

    def test_single_detection(self, tmp_path):
        path = tmp_path / "d.csv"
        write_detections([Detection("im1", 1.5, 2.0, 10.0, 20.0, -0.25)], path)
        out = read_detections(path)
        assert len(out) == 1
        assert out[0] == Detection("im1", 1.5, 2.0, 10.0, 20.0, -0.25)

    def test_large_random_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        dets = [Detection(f"im{int(rng.integers(0, 50))}",
                          float(rng.uniform(-5, 600)), float(rng.uniform(-5, 400)),
                          float(rng.uniform(0.5, 100)), float(rng.uniform(0.5, 200)),
                          float(rng.normal() * 10))
                for _ in range(1000)]
        path = tmp_path / "d.csv"
        write_detections(dets, path)
        back = read_detections(path)
        assert len(back) == 1000
        for a, b in zip(dets, back):
            assert a.image_id == b.image_id
            for field in ("x", "y", "w", "h", "score"):
                assert abs(getattr(a, field) - getattr(b, field)) <= 1e-9

    def test_non_numeric_field(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("image_id,x,y,w,h,score\nim1,1,2,3,4,oops\n")
        with pytest.raises(ValueError, match="line 2.*non-numeric"):
            read_detections(path)


class TestForestJson:
    def test_roundtrip_scores_identical(self, tmp_path):
        rng = np.random.default_rng(11)
        forest = random_forest(rng, num_trees=12, channels=3, window=(32, 16),
                               ratio=4, depth=4)
        path = tmp_path / "forest.json"
        write_forest(forest, path)
        back = read_forest(path)
        assert back.window == (32, 16)
        assert back.ratio == 4
        assert back.shrinkage == forest.shrinkage
        stack = random_stack(rng, channels=3, height=14, width=10, ratio=4)
        for _ in range(100):
            oy = int(rng.integers(0, stack.height - forest.cell_rows + 1))
            ox = int(rng.integers(0, stack.width - forest.cell_cols + 1))
            assert (boost.score_window(forest, stack, (oy, ox))
                    == boost.score_window(back, stack, (oy, ox)))

    def test_schema_fields(self, tmp_path):
        rng = np.random.default_rng(12)
        forest = random_forest(rng, num_trees=2, channels=2, window=(32, 16), ratio=8,
                               depth=2)
        path = tmp_path / "forest.json"
        write_forest(forest, path)
        doc = json.loads(path.read_text())
        assert doc["window"] == [32, 16]
        assert doc["ratio"] == 8
        assert doc["core"] == [25.0, 10.25]
        node = doc["trees"][0]["nodes"][0]
        assert set(node) == {"feat", "thr", "left", "right", "leaf"}
        leaves = [n for t in doc["trees"] for n in t["nodes"] if n["leaf"] is not None]
        assert all(n["left"] == -1 and n["right"] == -1 for n in leaves)

    def test_bad_child_index_rejected(self, tmp_path):
        path = tmp_path / "forest.json"
        doc = {"window": [32, 16], "ratio": 4, "channels": 1, "shrinkage": 0.5,
               "trees": [{"nodes": [{"feat": [0, 0, 0], "thr": 0.5, "left": 0,
                                     "right": 0, "leaf": None}]}]}
        path.write_text(json.dumps(doc))
        with pytest.raises(ValueError, match="bad child index"):
            read_forest(path)
