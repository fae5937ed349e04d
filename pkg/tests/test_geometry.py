import numpy as np
import pytest

from insinet.exceptions import IncompleteInputError, InvalidGeometryError
from insinet.geometry import (BAND_NAMES, assemble_neighborhood, band_index_map, block_average,
                              build_tile_grid, crop_patch, downsample_neighborhood, neighborhood_window,
                              ring_masks, stitch)


def ramp(h, w):
    r, c = np.mgrid[0:h, 0:w]
    return (r * 1000 + c).astype(np.int64)


def enumerate_origins(dim, s, stride):
    # independent restatement of the edge-anchoring rule
    out, p = [], 0
    while p + s <= dim:
        out.append(p)
        p += stride
    if out[-1] + s < dim:
        out.append(dim - s)
    return out


class TestTileGrid:
    def test_exact_partition(self):
        g = build_tile_grid(512, 512, 256, 256)
        assert g.shape == (2, 2)
        assert g.origins == [(0, 0), (0, 256), (256, 0), (256, 256)]

    def test_single_tile(self):
        assert build_tile_grid(256, 256, 256, 256).origins == [(0, 0)]

    def test_edge_anchored(self):
        assert build_tile_grid(300, 300, 256, 256).origins == [(0, 0), (0, 44), (44, 0), (44, 44)]

    @pytest.mark.parametrize("w,h,s,stride", [(300, 500, 64, 64), (97, 130, 32, 20), (256, 300, 100, 1)])
    def test_matches_rule_and_covers(self, w, h, s, stride):
        g = build_tile_grid(w, h, s, stride)
        assert list(g.row_origins) == enumerate_origins(h, s, stride)
        assert list(g.col_origins) == enumerate_origins(w, s, stride)
        cover = np.zeros((h, w), int)
        for r, c in g.origins:
            assert r + s <= h and c + s <= w
            cover[r:r + s, c:c + s] += 1
        assert cover.min() >= 1
        assert g.origins == sorted(set(g.origins))

    def test_partition_covers_once(self):
        g = build_tile_grid(96, 64, 32)
        cover = np.zeros((64, 96), int)
        for r, c in g.origins:
            cover[r:r + 32, c:c + 32] += 1
        assert (cover == 1).all()

    def test_tile_refs_consistent(self):
        g = build_tile_grid(300, 300, 256)
        for t in g.tiles():
            assert t.origin == (g.row_origins[t.grid_row], g.col_origins[t.grid_col])

    @pytest.mark.parametrize("args", [(200, 300, 256, 256), (512, 512, 256, 0), (512, 512, 256, 300)])
    def test_invalid(self, args):
        with pytest.raises(InvalidGeometryError):
            build_tile_grid(*args)


class TestCrop:
    def test_constant(self):
        assert (crop_patch(np.full((64, 64), 7), (10, 20), 16) == 7).all()

    def test_ramp_offsets(self):
        scene = ramp(300, 300)
        patch = crop_patch(scene, (44, 0), 256)
        r, c = np.mgrid[0:256, 0:256]
        assert np.array_equal(patch, (r + 44) * 1000 + c)

    def test_reembed_round_trip(self):
        scene = ramp(80, 90)
        out = np.zeros_like(scene)
        out[5:37, 9:41] = crop_patch(scene, (5, 9), 32)
        assert np.array_equal(out[5:37, 9:41], scene[5:37, 9:41])

    def test_out_of_bounds(self):
        with pytest.raises(InvalidGeometryError):
            crop_patch(np.zeros((64, 64)), (40, 0), 32)


class TestNeighborhood:
    def test_interior_tile_is_scene(self):
        scene = ramp(96, 96)
        g = build_tile_grid(96, 96, 32)
        m = assemble_neighborhood(scene, g, g.tile(1, 1))
        assert np.array_equal(m.pixels, scene)
        assert m.validity.all()

    def test_corner_tile(self):
        scene = ramp(96, 96)
        g = build_tile_grid(96, 96, 32)
        m = assemble_neighborhood(scene, g, g.tile(0, 0))
        assert (~m.validity).sum() == 5
        assert m.validity[1, 1]
        # padded rows and columns replicate the scene edge
        assert np.array_equal(m.pixels[:32, 32:64], np.repeat(scene[:1, :32], 32, axis=0))
        assert np.array_equal(m.pixels[32:64, :32], np.repeat(scene[:32, :1], 32, axis=1))
        assert (m.pixels[:32, :32] == scene[0, 0]).all()

    def test_two_by_two_grid(self):
        g = build_tile_grid(64, 64, 32)
        for t in g.tiles():
            m = assemble_neighborhood(ramp(64, 64), g, t)
            assert m.validity.sum() == 4  # itself plus three real neighbours

    def test_center_identity_every_tile(self, rng):
        scene = rng.integers(0, 255, (160, 128, 3)).astype(np.uint8)
        g = build_tile_grid(128, 160, 32)
        for t in g.tiles():
            assert np.array_equal(assemble_neighborhood(scene, g, t).center(), crop_patch(scene, t, 32))

    def test_needs_abutting_grid(self):
        g = build_tile_grid(96, 96, 32, 16)
        with pytest.raises(InvalidGeometryError):
            assemble_neighborhood(ramp(96, 96), g, g.tile(0, 0))

    def test_window_validity(self):
        m = neighborhood_window(ramp(120, 120), (40, 40), 32)
        assert m.validity.all()
        m = neighborhood_window(ramp(120, 120), (10, 40), 32)
        assert not m.validity[0].any() and m.validity[1:].all()


class TestDownsample:
    def test_constant(self):
        out = downsample_neighborhood(np.full((48, 48, 3), 0.25, dtype=np.float32))
        assert out.shape == (16, 16, 3) and out.dtype == np.float32
        assert np.allclose(out, 0.25)

    def test_block_means(self):
        block = np.arange(9, dtype=float).reshape(3, 3)
        tiled = np.tile(block, (4, 4)) + np.kron(np.arange(16).reshape(4, 4), np.ones((3, 3)))
        out = downsample_neighborhood(tiled)
        expected = np.array([[tiled[3 * i:3 * i + 3, 3 * j:3 * j + 3].sum() / 9 for j in range(4)]
                             for i in range(4)])
        assert np.allclose(out, expected)
        assert np.allclose(out, 4 + np.arange(16).reshape(4, 4))

    def test_768_to_256(self):
        assert downsample_neighborhood(np.zeros((768, 768, 3), np.uint8)).shape == (256, 256, 3)

    def test_linearity(self, rng):
        x, y = rng.random((2, 30, 30, 3))
        lhs = downsample_neighborhood(2.5 * x - 0.75 * y)
        rhs = 2.5 * downsample_neighborhood(x) - 0.75 * downsample_neighborhood(y)
        assert np.abs(lhs - rhs).max() <= 1e-6

    def test_indivisible(self):
        with pytest.raises(InvalidGeometryError):
            downsample_neighborhood(np.zeros((31, 31)))

    def test_block_average_factor(self):
        assert block_average(np.ones((8, 8)), 4).shape == (2, 2)


def one_hot(label):
    return np.stack([1 - label, label], axis=-1).astype(float)


class TestStitch:
    def test_partition_concatenation(self, rng):
        g = build_tile_grid(64, 64, 32)
        maps = [rng.dirichlet([1, 1], (32, 32)) for _ in range(4)]
        out = stitch(g, maps)
        for (r, c), m in zip(g.origins, maps):
            assert np.array_equal(out[r:r + 32, c:c + 32], (m[..., 1] > m[..., 0]).astype(np.uint8))

    def test_tie_goes_to_unchanged(self):
        g = build_tile_grid(48, 32, 32, 16)
        a = np.broadcast_to([0.9, 0.1], (32, 32, 2))
        b = np.broadcast_to([0.1, 0.9], (32, 32, 2))
        out = stitch(g, [a, b])
        assert (out[:, :16] == 0).all()
        assert (out[:, 16:32] == 0).all()  # overlap averages to (0.5, 0.5)
        assert (out[:, 32:] == 1).all()

    @pytest.mark.parametrize("stride", [32, 20, 7])
    def test_round_trip(self, rng, stride):
        label = (rng.random((75, 90)) > 0.6).astype(np.uint8)
        g = build_tile_grid(90, 75, 32, stride)
        maps = [one_hot(crop_patch(label, t, 32)) for t in g.tiles()]
        assert np.array_equal(stitch(g, maps), label)

    def test_missing_map(self):
        g = build_tile_grid(64, 64, 32)
        with pytest.raises(IncompleteInputError):
            stitch(g, [np.full((32, 32, 2), 0.5)] * 3)
        with pytest.raises(IncompleteInputError):
            stitch(g, [np.full((32, 32, 2), 0.5)] * 3 + [None])

    def test_not_a_distribution(self):
        g = build_tile_grid(32, 32, 32)
        with pytest.raises(IncompleteInputError):
            stitch(g, [np.full((32, 32, 2), 0.6)])


class TestRings:
    def test_areas_256(self):
        areas = {b.name: int(b.mask.sum()) for b in ring_masks(256)}
        assert areas == {"outer": 28672, "middle": 20480, "inner": 12288, "core": 4096}

    def test_closed_form(self):
        for s in (8, 16, 64, 256):
            q = s // 8
            counts = [int(b.mask.sum()) for b in ring_masks(s)]
            sides = [s, s - 2 * q, s - 4 * q, s - 6 * q]
            assert counts == [sides[0] ** 2 - sides[1] ** 2, sides[1] ** 2 - sides[2] ** 2,
                              sides[2] ** 2 - sides[3] ** 2, sides[3] ** 2]

    def test_partition(self):
        masks = np.stack([b.mask for b in ring_masks(256)])
        assert (masks.sum(axis=0) == 1).all()

    def test_core_is_central_square(self):
        core = ring_masks(256)[3].mask
        rows, cols = np.nonzero(core)
        assert (rows.min(), rows.max(), cols.min(), cols.max()) == (96, 159, 96, 159)
        assert [b.name for b in ring_masks(16)] == list(BAND_NAMES)

    def test_pixel_oracle(self):
        s = 64
        idx = band_index_map(s)
        for r in range(s):
            for c in range(s):
                d = min(r, c, s - 1 - r, s - 1 - c)
                assert idx[r, c] == min(d // (s // 8), 3)

    def test_indivisible(self):
        with pytest.raises(InvalidGeometryError):
            ring_masks(100)
