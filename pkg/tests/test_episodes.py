"""Synthetic episodes and the on-disk episode manifest.

Generation must be deterministic in the seed and plant an exact
foreground/background pattern when noise is off. Manifests must round-trip
every array bit-exactly and reject malformed listings with a diagnostic
naming the offending entry.
"""

import numpy as np
import pytest

from corrseg.arch import get_arch
from corrseg.episodes import (SyntheticEpisodeSpec, generate_synthetic_episode,
                              read_manifest, write_manifest)
from corrseg.errors import InvalidInputError
from corrseg.tensor_io import write_tensor


def _episode(seed=0, **kw):
    return generate_synthetic_episode(SyntheticEpisodeSpec(seed=seed, **kw))


class TestSyntheticGeneration:
    def test_same_seed_reproduces_everything(self):
        a = _episode(seed=3, shots=2)
        b = _episode(seed=3, shots=2)
        assert np.array_equal(a.query_gt, b.query_gt)
        for (_, fa), (_, fb) in zip(a.query_features.entries,
                                    b.query_features.entries):
            assert np.array_equal(fa, fb)
        for sa, sb in zip(a.supports, b.supports):
            assert np.array_equal(sa.mask, sb.mask)

    def test_different_seeds_differ(self):
        a = _episode(seed=0)
        b = _episode(seed=1)
        assert not all(np.array_equal(fa, fb) for (_, fa), (_, fb) in
                       zip(a.query_features.entries, b.query_features.entries))

    def test_feature_shapes_follow_the_preset(self):
        arch = get_arch("toy")
        ep = _episode()
        shapes = [f.shape for _, f in ep.query_features.entries]
        assert shapes == list(arch.feature_shapes)
        assert ep.query_features.groups == arch.groups

    def test_masks_are_binary_at_image_resolution(self):
        arch = get_arch("toy")
        ep = _episode(seed=5, shots=3)
        size = (arch.image_size, arch.image_size)
        assert ep.query_gt.shape == size
        assert set(np.unique(ep.query_gt)) <= {0.0, 1.0}
        assert 0.0 < ep.query_gt.mean() < 1.0
        assert len(ep.supports) == 3
        for shot in ep.supports:
            assert shot.mask.shape == size
            assert set(np.unique(shot.mask)) <= {0.0, 1.0}

    def test_noise_free_features_are_exact_blends(self):
        """At the finest level the planted pattern is exactly the foreground
        vector inside the mask and the background vector outside."""
        arch = get_arch("toy")
        ep = _episode(seed=2, noise=0.0)
        base = arch.levels[0].extent
        scale = arch.image_size // base
        cov = ep.query_gt[::scale, ::scale]
        first = arch.groups[0][0]
        feat = ep.query_features.entries[first][1]
        fg = feat[:, cov == 1.0]
        bg = feat[:, cov == 0.0]
        assert np.ptp(fg, axis=1) == pytest.approx(0.0, abs=1e-12)
        assert np.ptp(bg, axis=1) == pytest.approx(0.0, abs=1e-12)
        assert not np.allclose(fg[:, 0], bg[:, 0])

    def test_class_id_and_arch_tag_propagate(self):
        ep = _episode(seed=1, class_id=7)
        assert ep.class_id == 7
        assert ep.arch_name == "toy"


class TestManifestRoundTrip:
    def test_arrays_survive_bit_exactly(self, tmp_path):
        eps = [_episode(seed=0, shots=2), _episode(seed=1)]
        eps[1].prediction = eps[1].query_gt.copy()
        path = write_manifest(str(tmp_path), eps, "toy")
        tag, back = read_manifest(path)
        assert tag == "toy"
        assert len(back) == 2
        for orig, got in zip(eps, back):
            assert got.class_id == orig.class_id
            assert np.array_equal(got.query_gt, orig.query_gt)
            assert len(got.supports) == len(orig.supports)
            for (_, fa), (_, fb) in zip(orig.query_features.entries,
                                        got.query_features.entries):
                assert np.array_equal(fa, fb)
            for sa, sb in zip(orig.supports, got.supports):
                assert np.array_equal(sa.mask, sb.mask)
                for (_, fa), (_, fb) in zip(sa.features.entries,
                                            sb.features.entries):
                    assert np.array_equal(fa, fb)
        assert np.array_equal(back[1].prediction, eps[1].prediction)
        assert back[0].prediction is None

    def test_first_line_names_the_backbone(self, tmp_path):
        path = write_manifest(str(tmp_path), [_episode()], "toy")
        with open(path) as fh:
            assert fh.readline().strip() == "backbone=toy"

    def test_comments_and_blank_lines_are_skipped(self, tmp_path):
        path = write_manifest(str(tmp_path), [_episode()], "toy")
        with open(path) as fh:
            body = fh.read()
        with open(path, "w") as fh:
            fh.write("# free-form comment\n\n" + body.replace(
                "episode=0", "episode=0\n# interior note\n"))
        tag, back = read_manifest(path)
        assert tag == "toy" and len(back) == 1

    def test_mixed_backbones_rejected_at_write_time(self, tmp_path):
        ep = _episode()
        ep.arch_name = "resnet50"
        with pytest.raises(InvalidInputError):
            write_manifest(str(tmp_path), [_episode(), ep], "toy")


class TestManifestDiagnostics:
    def _write(self, tmp_path) -> str:
        return write_manifest(str(tmp_path), [_episode()], "toy")

    def _rewrite(self, path, transform):
        with open(path) as fh:
            lines = fh.read().splitlines()
        with open(path, "w") as fh:
            fh.write("\n".join(transform(lines)) + "\n")

    def test_missing_backbone_header(self, tmp_path):
        path = self._write(tmp_path)
        self._rewrite(path, lambda ls: ls[1:])
        with pytest.raises(InvalidInputError, match="backbone"):
            read_manifest(path)

    def test_unknown_backbone_tag(self, tmp_path):
        path = self._write(tmp_path)
        self._rewrite(path, lambda ls: ["backbone=mystery"] + ls[1:])
        with pytest.raises(InvalidInputError):
            read_manifest(path)

    def test_entry_before_first_episode(self, tmp_path):
        path = self._write(tmp_path)
        self._rewrite(path, lambda ls: [ls[0], "class=1"] + ls[1:])
        with pytest.raises(InvalidInputError, match="before any episode"):
            read_manifest(path)

    def test_unknown_key_rejected(self, tmp_path):
        path = self._write(tmp_path)
        self._rewrite(path, lambda ls: ls + ["mystery_key=1"])
        with pytest.raises(InvalidInputError, match="mystery_key"):
            read_manifest(path)

    def test_line_without_equals_rejected(self, tmp_path):
        path = self._write(tmp_path)
        self._rewrite(path, lambda ls: ls + ["garbage"])
        with pytest.raises(InvalidInputError, match="key=value"):
            read_manifest(path)

    def test_feature_count_mismatch(self, tmp_path):
        path = self._write(tmp_path)
        self._rewrite(path, lambda ls: [l for l in ls
                                        if not l.endswith("_query_f0.hstn")])
        with pytest.raises(InvalidInputError, match="feature files"):
            read_manifest(path)

    def test_wrong_feature_shape_names_the_file(self, tmp_path):
        path = self._write(tmp_path)
        write_tensor(np.zeros((2, 3, 3)), str(tmp_path / "ep0_query_f0.hstn"))
        with pytest.raises(InvalidInputError, match="must have shape"):
            read_manifest(path)

    def test_non_binary_mask_rejected(self, tmp_path):
        path = self._write(tmp_path)
        arch = get_arch("toy")
        bad = np.full((arch.image_size, arch.image_size), 0.5)
        write_tensor(bad, str(tmp_path / "ep0_s0_mask.hstn"))
        with pytest.raises(InvalidInputError, match="mask values"):
            read_manifest(path)

    def test_missing_query_gt_entry(self, tmp_path):
        path = self._write(tmp_path)
        self._rewrite(path, lambda ls: [l for l in ls
                                        if not l.startswith("query_gt=")])
        with pytest.raises(InvalidInputError, match="missing a mask"):
            read_manifest(path)

    def test_support_entry_before_support_header(self, tmp_path):
        path = self._write(tmp_path)

        def hoist(ls):
            mask_line = next(l for l in ls if l.startswith("support_mask="))
            rest = [l for l in ls if l != mask_line]
            at = rest.index("support=0")
            return rest[:at] + [mask_line] + rest[at:]

        self._rewrite(path, hoist)
        with pytest.raises(InvalidInputError, match="before any support"):
            read_manifest(path)

    def test_empty_manifest_rejected(self, tmp_path):
        path = self._write(tmp_path)
        self._rewrite(path, lambda ls: ls[:1])
        with pytest.raises(InvalidInputError, match="no episodes"):
            read_manifest(path)
