"""Scene tiling, 8-neighborhood mosaics, stitching and ring-band masks.

Rasters are numpy arrays laid out ``(H, W)`` or ``(H, W, C)``.  Every
function here is pure.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .exceptions import IncompleteInputError, InvalidGeometryError

BAND_NAMES = ("outer", "middle", "inner", "core")
PAD_POLICIES = ("replicate_edge",)


def _axis_origins(dim: int, tile_size: int, stride: int) -> list[int]:
    origins = list(range(0, dim - tile_size + 1, stride))
    if origins[-1] + tile_size < dim:
        origins.append(dim - tile_size)
    return origins


@dataclass(frozen=True)
class TileRef:
    grid_row: int
    grid_col: int
    origin: tuple[int, int]


@dataclass(frozen=True)
class TileGrid:
    scene_width: int
    scene_height: int
    tile_size: int
    stride: int
    row_origins: tuple[int, ...]
    col_origins: tuple[int, ...]

    @property
    def shape(self) -> tuple[int, int]:
        """Number of tile rows and tile columns."""
        return len(self.row_origins), len(self.col_origins)

    @property
    def origins(self) -> list[tuple[int, int]]:
        return [(r, c) for r in self.row_origins for c in self.col_origins]

    def __len__(self) -> int:
        return len(self.row_origins) * len(self.col_origins)

    def tile(self, grid_row: int, grid_col: int) -> TileRef:
        n_rows, n_cols = self.shape
        if not (0 <= grid_row < n_rows and 0 <= grid_col < n_cols):
            raise InvalidGeometryError(
                f"tile ({grid_row}, {grid_col}) outside a {n_rows}x{n_cols} grid"
            )
        return TileRef(grid_row, grid_col, (self.row_origins[grid_row], self.col_origins[grid_col]))

    def tiles(self) -> Iterator[TileRef]:
        n_rows, n_cols = self.shape
        for i in range(n_rows):
            for j in range(n_cols):
                yield self.tile(i, j)

    def contains(self, grid_row: int, grid_col: int) -> bool:
        n_rows, n_cols = self.shape
        return 0 <= grid_row < n_rows and 0 <= grid_col < n_cols


def build_tile_grid(scene_width: int, scene_height: int, tile_size: int = 256,
                    stride: int | None = None) -> TileGrid:
    """Lay out stride-spaced tiles, anchoring a final tile to each far edge.

    >>> build_tile_grid(300, 300, 256, 256).origins
    [(0, 0), (0, 44), (44, 0), (44, 44)]
    """
    stride = tile_size if stride is None else stride
    if tile_size < 1 or tile_size > min(scene_width, scene_height):
        raise InvalidGeometryError(
            f"tile_size {tile_size} does not fit a {scene_height}x{scene_width} scene"
        )
    if not 1 <= stride <= tile_size:
        raise InvalidGeometryError(f"stride must lie in [1, {tile_size}], got {stride}")
    return TileGrid(
        scene_width=scene_width,
        scene_height=scene_height,
        tile_size=tile_size,
        stride=stride,
        row_origins=tuple(_axis_origins(scene_height, tile_size, stride)),
        col_origins=tuple(_axis_origins(scene_width, tile_size, stride)),
    )


def crop_patch(scene: np.ndarray, tile: TileRef | tuple[int, int], tile_size: int) -> np.ndarray:
    """Return a copy of the ``tile_size`` square at the tile origin."""
    r, c = tile.origin if isinstance(tile, TileRef) else tile
    h, w = scene.shape[:2]
    if r < 0 or c < 0 or r + tile_size > h or c + tile_size > w:
        raise InvalidGeometryError(
            f"tile at ({r}, {c}) of size {tile_size} leaves a {h}x{w} scene"
        )
    return scene[r:r + tile_size, c:c + tile_size].copy()


@dataclass
class NeighborhoodMosaic:
    pixels: np.ndarray
    validity: np.ndarray = field(default_factory=lambda: np.ones((3, 3), dtype=bool))
    pad_policy: str = "replicate_edge"

    @property
    def tile_size(self) -> int:
        return self.pixels.shape[0] // 3

    def center(self) -> np.ndarray:
        s = self.tile_size
        return self.pixels[s:2 * s, s:2 * s]


def neighborhood_window(scene: np.ndarray, origin: tuple[int, int], tile_size: int,
                        pad_policy: str = "replicate_edge") -> NeighborhoodMosaic:
    """Gather the 3s x 3s window centred on the tile at ``origin``.

    Pixels outside the scene replicate the nearest scene edge.  A validity
    cell is ``True`` only when its whole s x s block lies inside the scene.
    """
    if pad_policy not in PAD_POLICIES:
        raise InvalidGeometryError(f"unknown pad policy {pad_policy!r}")
    s = tile_size
    h, w = scene.shape[:2]
    r0, c0 = origin
    if r0 < 0 or c0 < 0 or r0 + s > h or c0 + s > w:
        raise InvalidGeometryError(f"tile at {origin} of size {s} leaves a {h}x{w} scene")
    rows = np.clip(np.arange(r0 - s, r0 + 2 * s), 0, h - 1)
    cols = np.clip(np.arange(c0 - s, c0 + 2 * s), 0, w - 1)
    pixels = scene[rows[:, None], cols[None, :]]
    validity = np.array([
        [0 <= r0 + di * s and r0 + (di + 1) * s <= h and 0 <= c0 + dj * s and c0 + (dj + 1) * s <= w
         for dj in (-1, 0, 1)]
        for di in (-1, 0, 1)
    ])
    return NeighborhoodMosaic(pixels=pixels, validity=validity, pad_policy=pad_policy)


def assemble_neighborhood(scene: np.ndarray, grid: TileGrid, tile: TileRef,
                          pad_policy: str = "replicate_edge") -> NeighborhoodMosaic:
    """8-neighborhood mosaic of a tile on an abutting grid.

    The validity grid is ``True`` exactly where the neighbouring tile exists.
    """
    if grid.stride != grid.tile_size:
        raise InvalidGeometryError("neighborhood mosaics need an abutting grid (stride == tile_size)")
    if grid.tile(tile.grid_row, tile.grid_col).origin != tuple(tile.origin):
        raise InvalidGeometryError(f"{tile} does not belong to the grid")
    if scene.shape[:2] != (grid.scene_height, grid.scene_width):
        raise InvalidGeometryError("scene dimensions disagree with the grid")
    mosaic = neighborhood_window(scene, tile.origin, grid.tile_size, pad_policy)
    mosaic.validity = np.array([
        [grid.contains(tile.grid_row + di, tile.grid_col + dj) for dj in (-1, 0, 1)]
        for di in (-1, 0, 1)
    ])
    return mosaic


def block_average(raster: np.ndarray, factor: int) -> np.ndarray:
    """Mean over non-overlapping ``factor`` x ``factor`` blocks."""
    h, w = raster.shape[:2]
    if h % factor or w % factor:
        raise InvalidGeometryError(f"{h}x{w} raster is not divisible by {factor}")
    blocks = raster.reshape(h // factor, factor, w // factor, factor, *raster.shape[2:])
    return blocks.mean(axis=(1, 3))


def downsample_neighborhood(mosaic: NeighborhoodMosaic | np.ndarray) -> np.ndarray:
    """Factor-3 block average of a 3s x 3s mosaic down to s x s.

    Floating inputs keep their dtype; integer imagery comes back as float32.
    """
    pixels = np.asarray(mosaic.pixels if isinstance(mosaic, NeighborhoodMosaic) else mosaic)
    out_dtype = pixels.dtype if np.issubdtype(pixels.dtype, np.floating) else np.float32
    return block_average(pixels.astype(np.float64), 3).astype(out_dtype)


def stitch(grid: TileGrid, patch_probability_maps: Sequence[np.ndarray],
           blend_policy: str = "mean") -> np.ndarray:
    """Merge per-tile ``(s, s, 2)`` probability maps into a scene label map.

    Overlapping probabilities are averaged; exact ties go to class 0.
    Maps are matched to tiles in ``grid.tiles()`` order.
    """
    if blend_policy != "mean":
        raise InvalidGeometryError(f"unknown blend policy {blend_policy!r}")
    if len(patch_probability_maps) != len(grid):
        raise IncompleteInputError(
            f"expected {len(grid)} tile maps, got {len(patch_probability_maps)}"
        )
    s = grid.tile_size
    acc = np.zeros((grid.scene_height, grid.scene_width, 2), dtype=np.float64)
    hits = np.zeros((grid.scene_height, grid.scene_width, 1), dtype=np.float64)
    for tile, probs in zip(grid.tiles(), patch_probability_maps):
        if probs is None:
            raise IncompleteInputError(f"missing map for tile {tile}")
        probs = np.asarray(probs, dtype=np.float64)
        if probs.shape != (s, s, 2):
            raise InvalidGeometryError(f"tile map has shape {probs.shape}, expected {(s, s, 2)}")
        if np.abs(probs.sum(axis=-1) - 1.0).max() > 1e-6:
            raise IncompleteInputError("tile map is not a per-pixel probability distribution")
        r, c = tile.origin
        acc[r:r + s, c:c + s] += probs
        hits[r:r + s, c:c + s] += 1
    mean = acc / hits
    return (mean[..., 1] > mean[..., 0]).astype(np.uint8)


@dataclass(frozen=True)
class RegionBand:
    name: str
    mask: np.ndarray


def band_index_map(patch_size: int) -> np.ndarray:
    """Per-pixel band index: 0 outer, 1 middle, 2 inner, 3 core."""
    if patch_size % 8 or patch_size <= 0:
        raise InvalidGeometryError(f"patch size {patch_size} is not divisible by 8")
    width = patch_size // 8
    idx = np.arange(patch_size)
    edge = np.minimum(idx, patch_size - 1 - idx)
    dist = np.minimum(edge[:, None], edge[None, :])
    return np.minimum(dist // width, 3)


def ring_masks(patch_size: int) -> list[RegionBand]:
    bands = band_index_map(patch_size)
    return [RegionBand(name, bands == k) for k, name in enumerate(BAND_NAMES)]
