"""Seeded synthetic bitemporal open-pit scenes.

T1 holds a textured vegetated background with a few bare-soil "mine"
polygons.  T2 grows, shrinks or adds polygons; the change label is the
symmetric difference of the two mine footprints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter
from skimage.draw import polygon as draw_polygon

Polygon = np.ndarray  # (n_vertices, 2) float (row, col)


@dataclass(frozen=True)
class SceneParams:
    n_mines: int = 6
    change_events: int = 6
    min_radius: float = 10.0
    max_radius: float = 40.0
    texture_sigma: float = 6.0
    noise: float = 0.02
    seasonal_shift: float = 0.08


def _random_polygon(rng: np.random.Generator, height: int, width: int,
                    params: SceneParams) -> Polygon:
    radius = rng.uniform(params.min_radius, params.max_radius)
    radius = min(radius, (min(height, width) - 1) / 2.0)  # keep small scenes valid
    cy = rng.uniform(radius, height - radius)
    cx = rng.uniform(radius, width - radius)
    n = int(rng.integers(7, 13))
    angles = np.sort(rng.uniform(0, 2 * np.pi, n))
    radii = radius * rng.uniform(0.6, 1.0, n)
    return np.column_stack([cy + radii * np.sin(angles), cx + radii * np.cos(angles)])


def _rescale(poly: Polygon, factor: float, height: int, width: int) -> Polygon:
    center = poly.mean(axis=0)
    out = center + (poly - center) * factor
    out[:, 0] = np.clip(out[:, 0], 0.0, height - 1.0)
    out[:, 1] = np.clip(out[:, 1], 0.0, width - 1.0)
    return out


def scene_polygons(seed: int, width: int, height: int,
                   params: SceneParams = SceneParams()) -> tuple[list[Polygon], list[Polygon]]:
    """Mine polygon lists for T1 and T2."""
    rng = np.random.default_rng([seed, 0])
    t1 = [_random_polygon(rng, height, width, params) for _ in range(params.n_mines)]
    t2 = [p.copy() for p in t1]
    for _ in range(params.change_events):
        kind = rng.choice(["grow", "shrink", "add"]) if t2 else "add"
        if kind == "add":
            t2.append(_random_polygon(rng, height, width, params))
            continue
        i = int(rng.integers(len(t2)))
        factor = rng.uniform(1.2, 1.6) if kind == "grow" else rng.uniform(0.4, 0.8)
        t2[i] = _rescale(t2[i], factor, height, width)
    return t1, t2


def rasterize(polygons: list[Polygon], height: int, width: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    for poly in polygons:
        rr, cc = draw_polygon(poly[:, 0], poly[:, 1], shape=(height, width))
        mask[rr, cc] = True
    return mask


def _smooth_field(rng: np.random.Generator, shape: tuple[int, int], sigma: float) -> np.ndarray:
    field = gaussian_filter(rng.standard_normal(shape), sigma)
    return field / (np.abs(field).max() + 1e-12)


def synthesize_scene(seed: int, width: int, height: int,
                     params: SceneParams = SceneParams()) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(scene_t1, scene_t2, label_scene)``; imagery uint8 RGB, label 0/1 uint8."""
    t1_polys, t2_polys = scene_polygons(seed, width, height, params)
    mine1 = rasterize(t1_polys, height, width)
    mine2 = rasterize(t2_polys, height, width)
    rng = np.random.default_rng([seed, 1])
    shape = (height, width)

    texture = _smooth_field(rng, shape, params.texture_sigma)
    coarse = _smooth_field(rng, shape, params.texture_sigma * 4)
    vegetation = np.array([0.28, 0.42, 0.22])
    background = vegetation + 0.10 * texture[..., None] + 0.06 * coarse[..., None] * np.array([1.0, 0.6, 0.8])

    soil = np.array([0.70, 0.64, 0.56])
    terraces = 0.05 * np.sin(_smooth_field(rng, shape, params.texture_sigma) * 12.0)

    def render(mine: np.ndarray, season: np.ndarray) -> np.ndarray:
        img = background * season
        img = np.where(mine[..., None], soil + terraces[..., None], img)
        img = img + params.noise * rng.standard_normal((*shape, 3))
        return np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)

    season1 = np.ones(3)
    season2 = 1.0 + rng.uniform(-params.seasonal_shift, params.seasonal_shift, 3)
    scene_t1 = render(mine1, season1)
    scene_t2 = render(mine2, season2)
    label = np.logical_xor(mine1, mine2).astype(np.uint8)
    return scene_t1, scene_t2, label
