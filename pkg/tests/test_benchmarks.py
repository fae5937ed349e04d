from collections import deque
from dataclasses import replace

import numpy as np
import pytest

from insinet.benchmarks import (BenchmarkSuite, corner_placements, degrade, generate_misregistered,
                                generate_neighborhood_benchmark, generate_scale_benchmark,
                                generate_target_size_benchmark, max_component_area, misregister_suite,
                                shift_image, stratify_by_target_size, verify_region_content)
from insinet.data import BiTemporalSample, as_unit_float
from insinet.exceptions import ContractError, InvalidGeometryError, InvalidInputError
from insinet.geometry import BAND_NAMES


def test_placements_256():
    assert corner_placements(256) == {
        "outer": [(0, 0), (0, 224), (224, 0), (224, 224)],
        "middle": [(32, 32), (32, 192), (192, 32), (192, 192)],
        "inner": [(64, 64), (64, 160), (160, 64), (160, 160)],
        "core": [(96, 96), (96, 128), (128, 96), (128, 128)],
    }


@pytest.fixture(scope="module")
def suite(desk_scene):
    return generate_neighborhood_benchmark(*desk_scene, tile_size=32, seed=2)


class TestNeighborhoodBenchmark:
    def test_structure(self, suite):
        assert list(suite.groups) == list(BAND_NAMES)
        assert all(len(sets) == 4 for sets in suite.groups.values())
        assert sum(1 for _ in suite.sets()) == 16

    def test_masks_and_origins(self, suite, desk_scene):
        placements = corner_placements(32)
        t1 = as_unit_float(desk_scene[0])
        for band, sets in suite.groups.items():
            for j, (name, data) in enumerate(sets.items()):
                p = placements[band][j]
                for sample, (r, c) in zip(data, suite.params["regions"]):
                    m = sample.region_mask
                    assert m.sum() == 16 and m[p[0]:p[0] + 4, p[1]:p[1] + 4].all()
                    r0, c0 = r - p[0], c - p[1]
                    assert np.array_equal(sample.center_t1, t1[r0:r0 + 32, c0:c0 + 32])

    def test_region_content_identical(self, suite):
        verify_region_content(suite)
        ref = None
        for _, _, data in suite.sets():
            content = [(s.center_t1[s.region_mask], s.center_t2[s.region_mask], s.label[s.region_mask])
                       for s in data]
            if ref is None:
                ref = content
            for a, b in zip(ref, content):
                assert all(np.array_equal(x, y) for x, y in zip(a, b))

    def test_regions_respect_margin(self, suite):
        for r, c in suite.params["regions"]:
            assert 64 <= r <= 320 - 64 - 4 and 64 <= c <= 320 - 64 - 4

    def test_tampering_detected(self, suite):
        bad = BenchmarkSuite(suite.kind, {g: {n: list(d) for n, d in sets.items()}
                                          for g, sets in suite.groups.items()})
        s = bad.groups["core"]["core_0"][0]
        tampered = s.center_t1.copy()
        tampered[s.region_mask] += 0.01
        bad.groups["core"]["core_0"][0] = replace(s, center_t1=tampered)
        with pytest.raises(ContractError):
            verify_region_content(bad)

    def test_save_read(self, suite, tmp_path):
        suite.save(tmp_path)
        back = BenchmarkSuite.read(tmp_path)
        verify_region_content(back)
        a = next(iter(back.groups["inner"]["inner_2"]))
        b = suite.groups["inner"]["inner_2"][0]
        assert np.array_equal(a.region_mask, b.region_mask) and np.array_equal(a.images(), b.images())

    def test_scene_too_small(self):
        z = np.zeros((100, 100, 3), np.uint8)
        with pytest.raises(InvalidGeometryError):
            generate_neighborhood_benchmark(z, z, np.zeros((100, 100)), tile_size=32)


class TestScale:
    def test_identity(self, rng):
        img = rng.random((32, 32, 3)).astype(np.float32)
        assert np.array_equal(degrade(img, 1), img)

    @pytest.mark.parametrize("f", [2, 4, 8, 16])
    def test_block_constancy(self, rng, f):
        img = rng.random((64, 64, 3)).astype(np.float32)
        out = degrade(img, f)
        blocks = out.reshape(64 // f, f, 64 // f, f, 3)
        assert (np.ptp(blocks, axis=(1, 3)) == 0).all()
        assert np.allclose(blocks[:, 0, :, 0], img.reshape(64 // f, f, 64 // f, f, 3).mean(axis=(1, 3)),
                           atol=1e-6)

    def test_checkerboard_gray(self):
        board = (np.indices((16, 16)).sum(0) % 2).astype(np.float32)
        assert np.array_equal(degrade(board, 2), np.full((16, 16), 0.5, np.float32))

    def test_suite(self, desk_samples):
        suite = generate_scale_benchmark(desk_samples[:5])
        assert list(suite.groups["scale"]) == ["1", "2", "4", "8", "16"]
        for f, data in suite.groups["scale"].items():
            for a, b in zip(data, desk_samples[:5]):
                assert np.array_equal(a.label, b.label)
                if f == "1":
                    assert np.array_equal(a.images(), b.images())

    def test_indivisible(self):
        s = BiTemporalSample(*np.zeros((4, 24, 24, 3), np.float32), label=np.zeros((24, 24), np.uint8))
        with pytest.raises(InvalidGeometryError):
            generate_scale_benchmark([s], factors=(16,))


class TestMisregistration:
    def test_zero_shift(self, desk_samples):
        for a, b in zip(generate_misregistered(desk_samples[:4], (0, 0)), desk_samples[:4]):
            assert np.array_equal(a.images(), b.images())

    def test_marker_moves(self):
        img = np.zeros((16, 16), np.float32)
        img[5, 6] = 1
        out = shift_image(img, (0, 3))
        assert out[5, 9] == 1 and out.sum() == 1

    def test_compose_identity(self, rng):
        img = rng.random((32, 32, 3))
        back = shift_image(shift_image(img, (0, 3)), (0, -3))
        assert np.array_equal(back[:, 3:-3], img[:, 3:-3])

    def test_only_t2_moves(self, desk_samples):
        src = desk_samples[12]
        out = generate_misregistered([src], (0, 4))[0]
        assert np.array_equal(out.center_t1, src.center_t1) and np.array_equal(out.label, src.label)
        assert np.array_equal(out.neigh_t1, src.neigh_t1)
        assert np.array_equal(out.center_t2[:, 4:], src.center_t2[:, :-4])

    def test_suite(self, desk_scene):
        reg = generate_neighborhood_benchmark(*desk_scene, tile_size=32, seed=0)
        mis = misregister_suite(reg, (0, 4))
        assert mis.kind == "misregistration" and mis.params["source_kind"] == "neighborhood_ring"
        assert sum(1 for _ in mis.sets()) == 16


def flood_fill_max_area(label):
    seen = np.zeros(label.shape, bool)
    best = 0
    for start in zip(*np.nonzero(label)):
        if seen[start]:
            continue
        seen[start] = True
        queue, size = deque([start]), 0
        while queue:
            r, c = queue.popleft()
            size += 1
            for dr, dc in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                nr, nc = r + dr, c + dc
                if 0 <= nr < label.shape[0] and 0 <= nc < label.shape[1] and label[nr, nc] and not seen[nr, nc]:
                    seen[nr, nc] = True
                    queue.append((nr, nc))
        best = max(best, size)
    return best


def label_sample(label):
    s = label.shape[0]
    return BiTemporalSample(*np.zeros((4, s, s, 3), np.float32), label=label.astype(np.uint8))


class TestTargetSize:
    def test_all_zero_small(self):
        strata, _ = stratify_by_target_size([label_sample(np.zeros((16, 16)))] * 3, (10, 20))
        assert len(strata["small"]) == 3

    def test_square_small(self):
        lab = np.zeros((32, 32))
        lab[5:15, 5:15] = 1
        strata, _ = stratify_by_target_size([label_sample(lab)], (200, 2000))
        assert len(strata["small"]) == 1

    def test_diagonal_is_not_connected(self):
        assert max_component_area(np.eye(8)) == 1

    def test_flood_fill_oracle(self, desk_samples):
        areas = [flood_fill_max_area(s.label) for s in desk_samples]
        assert areas == [max_component_area(s.label) for s in desk_samples]
        thresholds = (50.0, 300.0)
        strata, _ = stratify_by_target_size(desk_samples, thresholds)
        expected = {"small": sum(a < 50 for a in areas),
                    "medium": sum(50 <= a < 300 for a in areas),
                    "large": sum(a >= 300 for a in areas)}
        assert {k: len(v) for k, v in strata.items()} == expected

    def test_bad_thresholds(self):
        with pytest.raises(InvalidInputError):
            stratify_by_target_size([label_sample(np.zeros((8, 8)))], (5, 5))

    def test_suite_groups(self, desk_samples):
        suite = generate_target_size_benchmark(desk_samples[:20])
        assert set(suite.groups) == {"small", "medium", "large"}
        assert all(list(g) == ["1", "2", "4", "8", "16"] for g in suite.groups.values())
