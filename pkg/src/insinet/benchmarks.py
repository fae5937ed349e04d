"""Benchmark generators: neighborhood rings, scale, misregistration, target size.

A :class:`BenchmarkSuite` maps ``group -> set name -> dataset``; a dataset is
anything iterating :class:`~insinet.data.BiTemporalSample` (a list in memory
or a :class:`~insinet.data.DatasetManifest` on disk).  On disk a suite is
``<root>/<group>/<set>/manifest.jsonl`` plus ``<root>/suite.json``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import ndimage

from . import io
from .data import BiTemporalSample, DatasetManifest, as_unit_float, make_sample, write_samples
from .exceptions import ContractError, InvalidGeometryError, InvalidInputError
from .geometry import BAND_NAMES, block_average

SUITE_KINDS = ("neighborhood_ring", "scale", "misregistration", "target_size")
DEFAULT_FACTORS = (2, 4, 8, 16)
SIZE_CLASSES = ("small", "medium", "large")


@dataclass
class BenchmarkSuite:
    kind: str
    groups: dict[str, dict[str, object]]
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SUITE_KINDS:
            raise InvalidInputError(f"unknown suite kind {self.kind!r}")

    def sets(self) -> Iterable[tuple[str, str, object]]:
        for group, sets in self.groups.items():
            for name, data in sets.items():
                yield group, name, data

    def save(self, root: str | Path) -> "BenchmarkSuite":
        """Write every in-memory set under ``root``; returns the on-disk suite."""
        root = Path(root)
        groups: dict[str, dict[str, DatasetManifest]] = {}
        layout: dict[str, dict[str, str]] = {}
        for group, name, data in self.sets():
            set_dir = root / group / name
            if isinstance(data, DatasetManifest):
                data = list(data)
            manifest = write_samples(list(data), set_dir, split="test", seed=self.seed)
            groups.setdefault(group, {})[name] = manifest
            layout.setdefault(group, {})[name] = f"{group}/{name}/manifest.jsonl"
        io.write_json(root / "suite.json",
                      {"kind": self.kind, "params": self.params, "seed": self.seed, "groups": layout})
        return BenchmarkSuite(self.kind, groups, dict(self.params), self.seed)

    @classmethod
    def read(cls, root: str | Path) -> "BenchmarkSuite":
        root = Path(root)
        desc = io.read_json(root / "suite.json")
        groups = {
            g: {name: DatasetManifest.read(root / rel) for name, rel in sets.items()}
            for g, sets in desc["groups"].items()
        }
        return cls(desc["kind"], groups, desc.get("params", {}), desc.get("seed", 0))


def _materialize(data: Iterable[BiTemporalSample]) -> list[BiTemporalSample]:
    return list(data)


# -- neighborhood rings -------------------------------------------------------

def corner_placements(tile_size: int) -> dict[str, list[tuple[int, int]]]:
    """Top-left offsets of the four corner (s/8)^2 squares of every band."""
    if tile_size % 8:
        raise InvalidGeometryError(f"tile size {tile_size} is not divisible by 8")
    q = tile_size // 8
    out = {}
    for k, band in enumerate(BAND_NAMES):
        lo, hi = k * q, tile_size - (k + 1) * q
        out[band] = [(lo, lo), (lo, hi), (hi, lo), (hi, hi)]
    return out


def region_mask(tile_size: int, placement: tuple[int, int]) -> np.ndarray:
    q = tile_size // 8
    mask = np.zeros((tile_size, tile_size), dtype=bool)
    r, c = placement
    mask[r:r + q, c:c + q] = True
    return mask


def pick_detection_regions(label_scene: np.ndarray, tile_size: int, n_regions: int,
                           seed: int, min_change: float = 0.05,
                           max_draws: int = 500) -> list[tuple[int, int]]:
    """Random region origins at least ``2 * tile_size`` from every scene edge.

    Regions whose changed fraction reaches ``min_change`` are preferred so the
    masked scores are not degenerate; the rest are filled with plain draws.
    """
    s, q = tile_size, tile_size // 8
    h, w = label_scene.shape
    lo, hi_r, hi_c = 2 * s, h - 2 * s - q, w - 2 * s - q
    if hi_r < lo or hi_c < lo:
        raise InvalidGeometryError(
            f"a {h}x{w} scene is too small for detection regions with a {2 * s}px margin"
        )
    rng = np.random.default_rng(seed)
    chosen, fallback = [], []
    for _ in range(max_draws):
        r, c = int(rng.integers(lo, hi_r + 1)), int(rng.integers(lo, hi_c + 1))
        frac = label_scene[r:r + q, c:c + q].mean()
        (chosen if frac >= min_change else fallback).append((r, c))
        if len(chosen) >= n_regions:
            break
    return (chosen + fallback)[:n_regions]


def generate_neighborhood_benchmark(scene_t1: np.ndarray, scene_t2: np.ndarray,
                                    label_scene: np.ndarray, tile_size: int = 256,
                                    seed: int = 0, n_regions: int = 4,
                                    out_dir: str | Path | None = None) -> BenchmarkSuite:
    """Sixteen test sets re-cropping identical detection regions to band corners."""
    scene_t1, scene_t2 = as_unit_float(scene_t1), as_unit_float(scene_t2)
    label_scene = (np.asarray(label_scene) > 0).astype(np.uint8)
    regions = pick_detection_regions(label_scene, tile_size, n_regions, seed)
    placements = corner_placements(tile_size)
    groups: dict[str, dict[str, object]] = {}
    for band, corners in placements.items():
        for j, p in enumerate(corners):
            samples = []
            mask = region_mask(tile_size, p)
            for k, (r, c) in enumerate(regions):
                origin = (r - p[0], c - p[1])
                meta = {"sample_id": f"region{k:02d}", "region_origin": [r, c],
                        "placement": list(p), "band": band, "tile_size": tile_size}
                sample = make_sample(scene_t1, scene_t2, label_scene, origin, tile_size, meta)
                sample.region_mask = mask.copy()
                samples.append(sample)
            groups.setdefault(band, {})[f"{band}_{j}"] = samples
    suite = BenchmarkSuite("neighborhood_ring", groups,
                           {"tile_size": tile_size, "regions": regions,
                            "placements": placements}, seed)
    return suite.save(out_dir) if out_dir is not None else suite


def verify_region_content(suite: BenchmarkSuite) -> None:
    """Raise unless every set shows bit-identical detection-region content."""
    reference: dict[str, tuple] = {}
    for _, name, data in suite.sets():
        for sample in data:
            m = sample.region_mask
            if m is None:
                raise ContractError(f"set {name} sample lacks a region mask")
            content = tuple(np.asarray(getattr(sample, k))[m].tobytes()
                            for k in ("center_t1", "center_t2", "label"))
            sid = sample.meta.get("sample_id")
            if reference.setdefault(sid, content) != content:
                raise ContractError(f"detection region {sid} differs in set {name}")


# -- scale ----------------------------------------------------------------------

def degrade(image: np.ndarray, factor: int) -> np.ndarray:
    """Block-average down by ``factor`` then nearest-neighbour back up."""
    if factor == 1:
        return image.copy()
    small = block_average(np.asarray(image, dtype=np.float64), factor)
    up = np.repeat(np.repeat(small, factor, axis=0), factor, axis=1)
    return up.astype(image.dtype)


def degrade_sample(sample: BiTemporalSample, factor: int) -> BiTemporalSample:
    return replace(
        sample,
        center_t1=degrade(sample.center_t1, factor),
        center_t2=degrade(sample.center_t2, factor),
        neigh_t1=degrade(sample.neigh_t1, factor),
        neigh_t2=degrade(sample.neigh_t2, factor),
        meta={**sample.meta, "scale_factor": factor},
    )


def generate_scale_benchmark(test: Iterable[BiTemporalSample],
                             factors: Sequence[int] = DEFAULT_FACTORS,
                             out_dir: str | Path | None = None) -> BenchmarkSuite:
    samples = _materialize(test)
    if not samples:
        raise InvalidInputError("empty test set")
    s = samples[0].size
    all_factors = [1, *[f for f in factors if f != 1]]
    for f in all_factors:
        if s % f:
            raise InvalidGeometryError(f"tile size {s} is not divisible by factor {f}")
    sets = {str(f): [degrade_sample(x, f) for x in samples] for f in all_factors}
    suite = BenchmarkSuite("scale", {"scale": sets}, {"factors": all_factors})
    return suite.save(out_dir) if out_dir is not None else suite


# -- misregistration ---------------------------------------------------------------

def shift_image(image: np.ndarray, shift: tuple[float, float]) -> np.ndarray:
    """Translate by ``shift`` = (rows, cols) pixels with replicate-edge fill.

    Integer shifts move pixels exactly; fractional shifts interpolate bilinearly.
    """
    dr, dc = shift
    if float(dr).is_integer() and float(dc).is_integer():
        h, w = image.shape[:2]
        rows = np.clip(np.arange(h) - int(dr), 0, h - 1)
        cols = np.clip(np.arange(w) - int(dc), 0, w - 1)
        return image[rows[:, None], cols[None, :]]
    per_axis = (dr, dc) + (0,) * (image.ndim - 2)
    return ndimage.shift(image, per_axis, order=1, mode="nearest").astype(image.dtype)


def misregister_sample(sample: BiTemporalSample, shift: tuple[int, int]) -> BiTemporalSample:
    # neighborhood images are 3x coarser, so the same ground offset is a third as many pixels
    neigh_shift = (shift[0] / 3.0, shift[1] / 3.0)
    return replace(
        sample,
        center_t2=shift_image(sample.center_t2, shift),
        neigh_t2=shift_image(sample.neigh_t2, neigh_shift),
        meta={**sample.meta, "shift": list(shift)},
    )


def generate_misregistered(test: Iterable[BiTemporalSample], shift: tuple[int, int] = (0, 4),
                           out_dir: str | Path | None = None):
    """T2 translated by ``shift``; T1 and labels untouched."""
    samples = [misregister_sample(x, shift) for x in test]
    if out_dir is None:
        return samples
    return write_samples(samples, out_dir, split="test")


def misregister_suite(suite: BenchmarkSuite, shift: tuple[int, int] = (0, 4),
                      out_dir: str | Path | None = None) -> BenchmarkSuite:
    """Apply :func:`generate_misregistered` to every set of ``suite``."""
    groups = {
        g: {name: generate_misregistered(data, shift) for name, data in sets.items()}
        for g, sets in suite.groups.items()
    }
    out = BenchmarkSuite("misregistration", groups,
                         {**suite.params, "shift": list(shift), "source_kind": suite.kind}, suite.seed)
    return out.save(out_dir) if out_dir is not None else out


# -- target size ------------------------------------------------------------------

def max_component_area(label: np.ndarray) -> int:
    """Largest 4-connected changed region, in pixels."""
    labeled, n = ndimage.label(np.asarray(label) > 0)
    if n == 0:
        return 0
    return int(np.bincount(labeled.ravel())[1:].max())


def default_size_thresholds(areas: Sequence[int]) -> tuple[float, float]:
    """Terciles of the non-zero max-component areas."""
    positive = np.asarray([a for a in areas if a > 0], dtype=float)
    if positive.size == 0:
        return (1.0, 2.0)
    a1, a2 = np.quantile(positive, [1 / 3, 2 / 3])
    return float(a1), float(max(a2, a1 + 1))


def size_class(area: int, thresholds: tuple[float, float]) -> str:
    a1, a2 = thresholds
    if area < a1:
        return "small"
    return "medium" if area < a2 else "large"


def stratify_by_target_size(test: Iterable[BiTemporalSample],
                            thresholds: tuple[float, float] | None = None
                            ) -> tuple[dict[str, list[BiTemporalSample]], tuple[float, float]]:
    """Split samples into small/medium/large by their largest change component."""
    samples = _materialize(test)
    areas = [max_component_area(x.label) for x in samples]
    if thresholds is None:
        thresholds = default_size_thresholds(areas)
    if not thresholds[0] < thresholds[1]:
        raise InvalidInputError(f"thresholds must increase, got {thresholds}")
    out: dict[str, list[BiTemporalSample]] = {k: [] for k in SIZE_CLASSES}
    for sample, area in zip(samples, areas):
        out[size_class(area, thresholds)].append(replace(sample, meta={**sample.meta, "max_area": area}))
    return out, tuple(thresholds)


def generate_target_size_benchmark(test: Iterable[BiTemporalSample],
                                   thresholds: tuple[float, float] | None = None,
                                   factors: Sequence[int] = DEFAULT_FACTORS,
                                   out_dir: str | Path | None = None) -> BenchmarkSuite:
    """Per size class, the five scale-degraded versions of that subset."""
    strata, thresholds = stratify_by_target_size(test, thresholds)
    all_factors = [1, *[f for f in factors if f != 1]]
    groups = {
        cls: {str(f): [degrade_sample(x, f) for x in subset] for f in all_factors}
        for cls, subset in strata.items()
    }
    suite = BenchmarkSuite("target_size", groups,
                           {"thresholds": list(thresholds), "factors": all_factors})
    return suite.save(out_dir) if out_dir is not None else suite
