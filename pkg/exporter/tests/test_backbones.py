"""Backbone wrappers: tap schedules, determinism, input loading."""

import numpy as np
import pytest
import torch
from PIL import Image

from featexport.backbones import (FEATURE_SCHEDULES, IMAGE_SIZE,
                                  NORMALIZE_MEAN, NORMALIZE_STD,
                                  build_backbone, check_schedule,
                                  extract_features, load_image, load_mask)
from featexport.errors import ExportError


def _batch(seed):
    rng = np.random.default_rng(seed)
    arr = rng.standard_normal((1, 3, IMAGE_SIZE, IMAGE_SIZE)).astype(np.float32)
    return torch.from_numpy(arr)


class TestSchedules:
    def test_layer_counts(self):
        assert len(FEATURE_SCHEDULES["vgg16"]) == 7
        assert len(FEATURE_SCHEDULES["resnet50"]) == 13
        assert len(FEATURE_SCHEDULES["resnet101"]) == 30

    def test_depth_progression(self):
        for tag, schedule in FEATURE_SCHEDULES.items():
            assert schedule[0] == (512, 50, 50)
            # Spatial size never grows with depth.
            sizes = [s[1] for s in schedule]
            assert sizes == sorted(sizes, reverse=True)
        assert FEATURE_SCHEDULES["vgg16"][-1] == (512, 12, 12)
        assert FEATURE_SCHEDULES["resnet50"][-1] == (2048, 13, 13)
        assert FEATURE_SCHEDULES["resnet101"][-1] == (2048, 13, 13)

    def test_check_schedule_flags_mismatch(self):
        arrays = [np.zeros(s, dtype=np.float32)
                  for s in FEATURE_SCHEDULES["vgg16"]]
        check_schedule("vgg16", arrays)
        with pytest.raises(ExportError, match="schedule"):
            check_schedule("vgg16", arrays[:-1])


class TestExtraction:
    def test_vgg16_shapes_and_determinism(self):
        x = _batch(11)
        first = extract_features(build_backbone("vgg16", seed=3), "vgg16", x)
        again = extract_features(build_backbone("vgg16", seed=3), "vgg16", x)
        check_schedule("vgg16", first)
        assert all(f.dtype == np.float32 for f in first)
        for a, b in zip(first, again):
            assert a.tobytes() == b.tobytes()

    def test_vgg16_seed_changes_features(self):
        x = _batch(11)
        a = extract_features(build_backbone("vgg16", seed=3), "vgg16", x)
        b = extract_features(build_backbone("vgg16", seed=4), "vgg16", x)
        assert not np.array_equal(a[0], b[0])

    def test_resnet50_shapes(self):
        model = build_backbone("resnet50", seed=0)
        assert model.training is False
        feats = extract_features(model, "resnet50", _batch(5))
        check_schedule("resnet50", feats)


class TestBuildErrors:
    def test_unknown_tag(self):
        with pytest.raises(ExportError, match="unknown backbone tag"):
            build_backbone("resnet34")

    def test_missing_weights_file(self, tmp_path):
        with pytest.raises(ExportError, match="not found"):
            build_backbone("vgg16", weights=str(tmp_path / "none.pt"))


class TestImageLoading:
    def test_solid_color_normalization(self, tmp_path):
        p = str(tmp_path / "img.png")
        Image.new("RGB", (30, 20), (128, 128, 128)).save(p)
        x = load_image(p)
        assert x.shape == (1, 3, IMAGE_SIZE, IMAGE_SIZE)
        assert x.dtype == torch.float32
        for c in range(3):
            want = (128.0 / 255.0 - NORMALIZE_MEAN[c]) / NORMALIZE_STD[c]
            assert np.allclose(x[0, c].numpy(), want, atol=1e-6)

    def test_unreadable_image(self, tmp_path):
        p = str(tmp_path / "junk.png")
        with open(p, "w") as fh:
            fh.write("not an image")
        with pytest.raises(ExportError, match="unreadable"):
            load_image(p)


class TestMaskLoading:
    def _mask_png(self, tmp_path):
        # Full-resolution source so no value moves during resize.
        v = np.zeros((IMAGE_SIZE, IMAGE_SIZE), dtype=np.uint8)
        v[:100] = 7
        v[100:200] = 255
        p = str(tmp_path / "mask.png")
        Image.fromarray(v, mode="L").save(p)
        return p

    def test_binarizes_by_default(self, tmp_path):
        m = load_mask(self._mask_png(tmp_path))
        assert m.shape == (IMAGE_SIZE, IMAGE_SIZE)
        assert m.dtype == np.float64
        assert set(np.unique(m)) == {0.0, 1.0}

    def test_ignore_label_preserved_on_request(self, tmp_path):
        m = load_mask(self._mask_png(tmp_path), allow_ignore=True)
        assert set(np.unique(m)) == {0.0, 1.0, 255.0}
        assert np.all(m[100:200] == 255.0)
        assert np.all(m[:100] == 1.0)

    def test_small_mask_resized_without_new_values(self, tmp_path):
        v = np.zeros((9, 13), dtype=np.uint8)
        v[:4, :6] = 200
        p = str(tmp_path / "small.png")
        Image.fromarray(v, mode="L").save(p)
        m = load_mask(p)
        assert m.shape == (IMAGE_SIZE, IMAGE_SIZE)
        assert set(np.unique(m)) == {0.0, 1.0}
