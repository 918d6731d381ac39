"""Synthetic data generation, crops, and the shared spatial augmentation."""

import numpy as np
import pytest

from signrec.dataio import load_dataset, read_tensor, save_dataset, write_tensor
from signrec.errors import ConfigError, CropError, DataError, ParseError
from signrec.heatmap import rasterize_coords
from signrec.synth import (
    Dataset,
    SynthSpec,
    bilinear_crop_resize,
    build_embeddings,
    class_trajectories,
    generate_dataset,
    sample_crop_rect,
    spatial_crop_pair,
    temporal_crop,
    three_crop_starts,
    trajectory_distance,
    transform_coordinate,
)


def small_spec(**kw):
    base = dict(
        n_classes=8,
        vs_s_pairs=1,
        vs_d_pairs=1,
        train_per_class=2,
        dev_per_class=1,
        test_per_class=1,
        t_raw=10,
        video_size=16,
        heatmap_size=8,
        keypoints=4,
        embed_dim=12,
        seed=7,
    )
    base.update(kw)
    return SynthSpec(**base)


class TestSpec:
    def test_pair_layout_partitions_classes(self):
        spec = small_spec()
        vs_s, vs_d, non = spec.pair_layout()
        flat = [c for p in vs_s + vs_d for c in p] + non
        assert sorted(flat) == list(range(spec.n_classes))

    def test_too_many_pairs(self):
        with pytest.raises(ConfigError):
            small_spec(n_classes=3, vs_s_pairs=1, vs_d_pairs=1)

    def test_infeasible_cosine(self):
        with pytest.raises(ConfigError):
            small_spec(vs_s_cosine=1.5)

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError):
            SynthSpec.from_dict({"n_classes": 4, "bogus": 1})

    def test_file_roundtrip(self, tmp_path):
        spec = small_spec()
        p = tmp_path / "spec.json"
        p.write_text(__import__("json").dumps(spec.to_dict()))
        assert SynthSpec.from_file(p) == spec


class TestEmbeddings:
    def test_targets_realized(self):
        spec = small_spec()
        emb = build_embeddings(spec, np.random.default_rng(0))
        unit = emb / np.linalg.norm(emb, axis=1, keepdims=True)
        cos = unit @ unit.T
        (a, b) = spec.pair_layout()[0][0]
        assert abs(cos[a, b] - spec.vs_s_cosine) < 0.05
        (c, d) = spec.pair_layout()[1][0]
        assert abs(cos[c, d] - spec.vs_d_cosine) < 0.05

    def test_default_spec_feasible(self):
        emb = build_embeddings(SynthSpec(), np.random.default_rng(1))
        assert emb.shape == (20, 32)
        assert np.all(np.isfinite(emb))

    def test_embed_dim_too_small(self):
        with pytest.raises(ConfigError):
            build_embeddings(small_spec(embed_dim=2), np.random.default_rng(0))


class TestGeneration:
    def test_deterministic_under_seed(self):
        spec = small_spec()
        a, b = generate_dataset(spec), generate_dataset(spec)
        np.testing.assert_array_equal(a.lexicon.embeddings, b.lexicon.embeddings)
        for split in ("train", "dev", "test"):
            for sa, sb in zip(a.splits[split], b.splits[split]):
                np.testing.assert_array_equal(sa.video, sb.video)
                np.testing.assert_array_equal(sa.keypoints, sb.keypoints)
                assert sa.label == sb.label

    def test_different_seed_differs(self):
        a = generate_dataset(small_spec(seed=1))
        b = generate_dataset(small_spec(seed=2))
        assert not np.array_equal(a.splits["train"][0].video, b.splits["train"][0].video)

    def test_split_sizes_and_labels(self):
        spec = small_spec()
        ds = generate_dataset(spec)
        assert len(ds.splits["train"]) == spec.n_classes * spec.train_per_class
        assert len(ds.splits["test"]) == spec.n_classes * spec.test_per_class
        labels = {s.label for s in ds.splits["train"]}
        assert labels == set(range(spec.n_classes))

    def test_tensor_ranges_and_shapes(self):
        spec = small_spec()
        ds = generate_dataset(spec)
        s = ds.splits["train"][0]
        assert s.video.shape == (spec.t_raw, spec.video_size, spec.video_size, 3)
        assert s.video.min() >= 0.0 and s.video.max() <= 1.0
        assert s.keypoints.shape == (spec.t_raw, spec.keypoints, 2)
        assert s.keypoints.min() >= 0.0
        assert s.keypoints.max() < spec.heatmap_size

    def test_pair_trajectories_close_nonpairs_distant(self):
        spec = small_spec()
        tracks = class_trajectories(spec)
        vs_s, vs_d, _ = spec.pair_layout()
        size = spec.heatmap_size
        for a, b in vs_s + vs_d:
            assert trajectory_distance(tracks[a], tracks[b], size) <= spec.confusability
        paired = {frozenset(p) for p in vs_s + vs_d}
        for i in range(spec.n_classes):
            for j in range(i + 1, spec.n_classes):
                if frozenset((i, j)) in paired:
                    continue
                d = trajectory_distance(tracks[i], tracks[j], size)
                assert d > spec.confusability, (i, j, d)

    def test_category_lookup(self):
        spec = small_spec()
        ds = generate_dataset(spec)
        vs_s, vs_d, non = spec.pair_layout()
        assert ds.class_category(vs_s[0][0]) == "vs_s"
        assert ds.class_category(vs_d[0][1]) == "vs_d"
        assert ds.class_category(non[0]) == "non_vs"


class TestDataIO:
    def test_tensor_file_roundtrip(self, tmp_path):
        arr = np.random.default_rng(0).normal(size=(3, 4, 5)).astype(np.float32)
        p = tmp_path / "t.bin"
        write_tensor(p, arr)
        np.testing.assert_array_equal(read_tensor(p), arr)

    def test_tensor_file_garbage(self, tmp_path):
        p = tmp_path / "bad.bin"
        p.write_bytes(b"nope")
        with pytest.raises(ParseError):
            read_tensor(p)

    def test_dataset_roundtrip(self, tmp_path):
        ds = generate_dataset(small_spec())
        save_dataset(ds, tmp_path / "data")
        back = load_dataset(tmp_path / "data")
        assert back.lexicon.glosses == ds.lexicon.glosses
        np.testing.assert_allclose(
            back.lexicon.embeddings, ds.lexicon.embeddings, atol=1e-12
        )
        assert back.categories["vs_s"] == ds.categories["vs_s"]
        assert back.meta["sigma"] == ds.meta["sigma"]
        for split in ("train", "dev", "test"):
            assert len(back.splits[split]) == len(ds.splits[split])
            for sa, sb in zip(back.splits[split], ds.splits[split]):
                np.testing.assert_array_equal(sa.video, sb.video)
                np.testing.assert_allclose(sa.keypoints, sb.keypoints, atol=1e-6)
                assert sa.label == sb.label

    def test_missing_manifest(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path)


class TestTemporalCrop:
    def sample(self, t_raw=10):
        return generate_dataset(small_spec(t_raw=t_raw)).splits["train"][0]

    def test_full_length_crop_is_whole_sample(self):
        s = self.sample()
        clip = temporal_crop(s, 10, rng=np.random.default_rng(0), mode="train")
        np.testing.assert_array_equal(clip.video, s.video)

    def test_eval_center_crop_arithmetic(self):
        s = self.sample(t_raw=24)
        clip = temporal_crop(s, 16, mode="eval")
        np.testing.assert_array_equal(clip.video, s.video[4:20])
        assert clip.short_offset == 4  # centered half-length window

    def test_odd_length_rejected(self):
        with pytest.raises(ConfigError):
            temporal_crop(self.sample(), 7, mode="eval")

    def test_too_short_raw(self):
        with pytest.raises(DataError):
            temporal_crop(self.sample(t_raw=10), 12, mode="eval")

    def test_train_windows_within_bounds(self):
        s = self.sample(t_raw=10)
        rng = np.random.default_rng(1)
        for _ in range(50):
            clip = temporal_crop(s, 6, rng=rng, mode="train")
            assert clip.video.shape[0] == 6
            assert 0 <= clip.short_offset <= 3

    def test_three_crop_starts(self):
        assert three_crop_starts(24, 16) == [0, 4, 8]
        assert three_crop_starts(16, 16) == [0, 0, 0]


class TestSpatialCrop:
    def test_identity_rect_is_identity(self):
        rng = np.random.default_rng(2)
        seq = rng.normal(size=(3, 8, 8, 2))
        out = bilinear_crop_resize(seq, (0.0, 0.0, 1.0, 1.0))
        np.testing.assert_allclose(out, seq, atol=1e-6)

    def test_scale_one_range_is_identity(self):
        rng = np.random.default_rng(3)
        video = rng.normal(size=(2, 16, 16, 3))
        heat = rng.normal(size=(2, 8, 8, 4))
        v2, h2 = spatial_crop_pair(video, heat, (1.0, 1.0), np.random.default_rng(0))
        np.testing.assert_allclose(v2, video, atol=1e-6)
        np.testing.assert_allclose(h2, heat, atol=1e-6)

    def test_sampled_area_within_range(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            rect = sample_crop_rect(rng, (0.7, 1.0))
            area = rect[2] * rect[3]
            assert 0.7 - 1e-9 <= area <= 1.0 + 1e-9
            assert 0.0 <= rect[0] <= 1.0 - rect[2] + 1e-9
            assert 0.0 <= rect[1] <= 1.0 - rect[3] + 1e-9

    def test_bad_scale_range(self):
        with pytest.raises(ConfigError):
            sample_crop_rect(np.random.default_rng(0), (0.0, 1.0))

    def test_degenerate_rectangle(self):
        video = np.zeros((1, 16, 16, 3))
        heat = np.zeros((1, 4, 4, 2))
        with pytest.raises(CropError):
            # 0.2 of 4 px = 0.8 px in heatmap space
            spatial_crop_pair(video, heat, (0.04, 0.05), np.random.default_rng(1))

    def test_argmax_tracks_coordinate_transform(self):
        """The heatmap argmax after cropping must match the crop transform
        applied to the keypoint coordinate, within 1 px."""
        rng = np.random.default_rng(5)
        size = 24
        hits = 0
        for trial in range(30):
            coord = rng.uniform(5, size - 5, size=2)
            heat = rasterize_coords(
                coord[None, None, :], np.ones((1, 1), bool), size, size, 2.0,
                dtype=np.float64,
            )
            rect = sample_crop_rect(rng, (0.7, 1.0))
            out = bilinear_crop_resize(heat, rect)
            flat = out[0, :, :, 0]
            y, x = np.unravel_index(flat.argmax(), flat.shape)
            expect = transform_coordinate(coord, rect, size)
            if 1 <= expect[0] <= size - 2 and 1 <= expect[1] <= size - 2:
                hits += 1
                assert abs(x - expect[0]) <= 1.0 and abs(y - expect[1]) <= 1.0
        assert hits >= 20  # most trials keep the peak inside the crop

    def test_same_rect_for_both_modalities(self):
        """A keypoint visible in both streams lands at proportional spots."""
        rng = np.random.default_rng(6)
        hm_size, vid_size = 16, 32
        coord_hm = np.array([7.0, 9.0])
        heat = rasterize_coords(
            coord_hm[None, None, :], np.ones((1, 1), bool), hm_size, hm_size, 1.5,
            dtype=np.float64,
        )
        video = rasterize_coords(
            (coord_hm * 2)[None, None, :], np.ones((1, 1), bool), vid_size, vid_size,
            3.0, dtype=np.float64,
        )
        v2, h2 = spatial_crop_pair(video, heat, (0.75, 0.85), rng)
        hy, hx = np.unravel_index(h2[0, :, :, 0].argmax(), (hm_size, hm_size))
        vy, vx = np.unravel_index(v2[0, :, :, 0].argmax(), (vid_size, vid_size))
        assert abs(vx / 2 - hx) <= 1.5 and abs(vy / 2 - hy) <= 1.5
