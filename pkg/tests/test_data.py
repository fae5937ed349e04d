import numpy as np
import pytest

from insinet.data import (AugmentationSpec, BiTemporalSample, DatasetManifest, apply_geometric,
                          augment, extract_samples, prepare_dataset, split_dataset, split_sizes)
from insinet.exceptions import InvalidInputError
from insinet.geometry import assemble_neighborhood, build_tile_grid, downsample_neighborhood


def scenes(h, w, seed=0):
    rng = np.random.default_rng(seed)
    t1 = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    t2 = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    label = (rng.random((h, w)) > 0.8).astype(np.uint8)
    return t1, t2, label


class TestPrepare:
    def test_three_by_three(self):
        samples = extract_samples(*scenes(96, 96), tile_size=32)
        assert len(samples) == 9
        assert all(samples[4].meta["validity"])

    def test_two_by_two(self):
        samples = extract_samples(*scenes(64, 64), tile_size=32)
        assert len(samples) == 4
        for s in samples:
            # a corner tile of a 2x2 grid has three real neighbours and five padded cells
            assert sum(s.meta["validity"]) == 4

    def test_neighborhood_recomputed(self):
        t1, t2, label = scenes(96, 128)
        samples = extract_samples(t1, t2, label, tile_size=32)
        grid = build_tile_grid(128, 96, 32)
        for s, tile in zip(samples, grid.tiles()):
            for scene, got in ((t1, s.neigh_t1), (t2, s.neigh_t2)):
                unit = scene.astype(np.float32) / np.float32(255)
                expected = downsample_neighborhood(assemble_neighborhood(unit, grid, tile))
                assert np.array_equal(got, expected)
            r, c = tile.origin
            assert np.array_equal(s.label, label[r:r + 32, c:c + 32])

    def test_dimension_mismatch(self):
        t1, t2, label = scenes(64, 64)
        with pytest.raises(InvalidInputError):
            extract_samples(t1, t2[:32], label, tile_size=32)

    def test_manifest_round_trip(self, tmp_path):
        t1, t2, label = scenes(64, 96)
        m = prepare_dataset(t1, t2, label, 32, out_dir=tmp_path / "ds")
        back = DatasetManifest.read(tmp_path / "ds" / "manifest.jsonl")
        assert back.sample_ids() == m.sample_ids()
        ref = extract_samples(t1, t2, label, 32)
        for a, b in zip(back, ref):
            assert np.array_equal(a.images(), b.images()) and np.array_equal(a.label, b.label)
        assert back.records[0]["validity"] == ref[0].meta["validity"]

    def test_bad_label(self):
        z = np.zeros((8, 8, 3), np.float32)
        with pytest.raises(InvalidInputError):
            BiTemporalSample(z, z, z, z, np.full((8, 8), 2, np.uint8))


class TestSplit:
    @pytest.mark.parametrize("n,sizes", [(10, (6, 2, 2)), (2693, (1616, 539, 538)), (1, (1, 0, 0)), (7, (4, 1, 2))])
    def test_sizes(self, n, sizes):
        assert split_sizes(n) == sizes

    def test_rule(self):
        for n in range(1, 500):
            tr, va, te = split_sizes(n)
            assert tr == int(np.floor(0.6 * n + 0.5)) and va == int(np.floor(0.2 * n + 0.5))
            assert tr + va + te == n and te >= 0

    def test_partition_and_determinism(self, tmp_path):
        m = prepare_dataset(*scenes(96, 160), 32, out_dir=tmp_path)
        a = split_dataset(m, seed=3)
        b = split_dataset(m, seed=3)
        assert [x.sample_ids() for x in a] == [x.sample_ids() for x in b]
        ids = [i for x in a for i in x.sample_ids()]
        assert sorted(ids) == sorted(m.sample_ids()) and len(set(ids)) == len(ids)
        assert [len(x) for x in a] == [9, 3, 3]
        assert [x.split for x in a] == ["train", "val", "test"]

    def test_saved_split_resolves(self, tmp_path):
        m = prepare_dataset(*scenes(64, 64), 32, out_dir=tmp_path / "ds")
        train, _, _ = split_dataset(m, seed=0)
        train.save(tmp_path / "splits" / "train.jsonl")
        back = DatasetManifest.read(tmp_path / "splits" / "train.jsonl")
        assert len(list(back)) == len(train)

    def test_empty(self):
        with pytest.raises(InvalidInputError):
            split_dataset(DatasetManifest([]))


def marked_sample(s=16, r=3, c=5):
    imgs = [np.zeros((s, s, 3), np.float32) for _ in range(4)]
    label = np.zeros((s, s), np.uint8)
    for img in imgs:
        img[r, c] = 1.0
    label[r, c] = 1
    return BiTemporalSample(*imgs, label=label)


class TestAugment:
    def test_hflip_moves_marker(self):
        out = apply_geometric(marked_sample(), hflip=True)
        assert out.label[3, 16 - 1 - 5] == 1 and out.center_t1[3, 10, 0] == 1.0
        assert out.label.sum() == 1

    def test_rot180_twice(self):
        s = marked_sample()
        twice = apply_geometric(apply_geometric(s, quarter_turns=2), quarter_turns=2)
        assert np.array_equal(twice.images(), s.images()) and np.array_equal(twice.label, s.label)

    @pytest.mark.parametrize("seed", range(20))
    def test_alignment(self, seed):
        rng = np.random.default_rng(seed)
        r, c = rng.integers(0, 16, 2)
        out = augment(marked_sample(r=r, c=c), AugmentationSpec(color_jitter=0.0), seed)
        pos = np.argwhere(out.label == 1)
        for key in ("center_t1", "center_t2", "neigh_t1", "neigh_t2"):
            assert np.array_equal(np.argwhere(getattr(out, key)[..., 0] > 0), pos)

    def test_jitter_leaves_label(self, rng):
        s = BiTemporalSample(*rng.random((4, 16, 16, 3)).astype(np.float32),
                             label=(rng.random((16, 16)) > 0.5).astype(np.uint8))
        spec = AugmentationSpec(hflip=False, vflip=False, rotations=(), color_jitter=0.1)
        out = augment(s, spec, 0)
        assert np.array_equal(out.label, s.label)
        assert not np.array_equal(out.center_t1, s.center_t1)
        assert out.center_t1.min() >= 0 and out.center_t1.max() <= 1

    def test_bad_spec(self):
        with pytest.raises(InvalidInputError):
            AugmentationSpec(rotations=(45,))
