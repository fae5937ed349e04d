"""Bitemporal samples, dataset manifests, splitting and augmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from . import io
from .exceptions import InvalidInputError
from .geometry import (
    assemble_neighborhood,
    build_tile_grid,
    crop_patch,
    downsample_neighborhood,
    neighborhood_window,
)

SPLITS = ("train", "val", "test", "none")
IMAGE_KEYS = ("center_t1", "center_t2", "neigh_t1", "neigh_t2")


@dataclass
class BiTemporalSample:
    """Centre patches, downsampled neighborhoods and label of one tile.

    Imagery is float32 ``(s, s, 3)`` in [0, 1]; ``label`` is uint8 ``(s, s)``.
    ``region_mask`` is only set on neighborhood-benchmark samples.
    """

    center_t1: np.ndarray
    center_t2: np.ndarray
    neigh_t1: np.ndarray
    neigh_t2: np.ndarray
    label: np.ndarray
    meta: dict = field(default_factory=dict)
    region_mask: np.ndarray | None = None

    def __post_init__(self):
        s = self.label.shape[0]
        for key in IMAGE_KEYS:
            arr = getattr(self, key)
            if arr.shape[:2] != (s, s):
                raise InvalidInputError(f"{key} has shape {arr.shape}, expected side {s}")
        if self.label.shape != (s, s):
            raise InvalidInputError(f"label must be square, got {self.label.shape}")
        if not np.isin(self.label, (0, 1)).all():
            raise InvalidInputError("label values must be 0 or 1")

    @property
    def size(self) -> int:
        return self.label.shape[0]

    def images(self) -> np.ndarray:
        """The four images stacked as ``(4, s, s, 3)``: c1, c2, n1, n2."""
        return np.stack([getattr(self, k) for k in IMAGE_KEYS])

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        arrays = {k: np.asarray(getattr(self, k), dtype=np.float32) for k in IMAGE_KEYS}
        arrays["label"] = self.label.astype(np.uint8)
        if self.region_mask is not None:
            arrays["region_mask"] = self.region_mask.astype(bool)
        with io.atomic_write(path) as fh:
            np.savez(fh, **arrays)
        return path

    @classmethod
    def load(cls, path: str | Path, meta: dict | None = None) -> "BiTemporalSample":
        with np.load(path, allow_pickle=False) as npz:
            mask = npz["region_mask"] if "region_mask" in npz.files else None
            return cls(*(npz[k] for k in IMAGE_KEYS), label=npz["label"],
                       meta=dict(meta or {}), region_mask=mask)


@dataclass
class DatasetManifest:
    """A list of sample records plus the split they belong to.

    Record paths are relative to ``root``.  On disk a manifest is a JSON-lines
    file whose first line is a header ``{"kind": "manifest", ...}``.
    """

    records: list[dict]
    split: str = "none"
    seed: int = 0
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        if self.split not in SPLITS:
            raise InvalidInputError(f"unknown split {self.split!r}")
        self.root = Path(self.root)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[BiTemporalSample]:
        for i in range(len(self)):
            yield self.load(i)

    def load(self, index: int) -> BiTemporalSample:
        rec = self.records[index]
        return BiTemporalSample.load(self.root / rec["path"], meta=rec)

    def sample_ids(self) -> list[str]:
        return [r["sample_id"] for r in self.records]

    @property
    def tile_size(self) -> int | None:
        return self.records[0].get("tile_size") if self.records else None

    def subset(self, indices: Sequence[int], split: str | None = None) -> "DatasetManifest":
        recs = [dict(self.records[i]) for i in indices]
        split = self.split if split is None else split
        for r in recs:
            r["split"] = split
        return DatasetManifest(recs, split=split, seed=self.seed, root=self.root)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        rel_root = Path(_relpath(self.root, path.parent))
        header = {"kind": "manifest", "split": self.split, "seed": self.seed, "count": len(self)}
        recs = []
        for r in self.records:
            r = dict(r)
            r["path"] = str(rel_root / r["path"])
            recs.append(r)
        return io.write_jsonl(path, [header, *recs])

    @classmethod
    def read(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        lines = list(io.read_jsonl(path))
        if not lines or lines[0].get("kind") != "manifest":
            raise InvalidInputError(f"{path} is not a manifest")
        header, recs = lines[0], lines[1:]
        return cls(recs, split=header["split"], seed=header["seed"], root=path.parent)

    def load_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """All samples as ``X`` ``(n, 4, s, s, 3)`` and ``y`` ``(n, s, s)``."""
        samples = list(self)
        return (np.stack([s.images() for s in samples]),
                np.stack([s.label for s in samples]))


def _relpath(target: Path, start: Path) -> str:
    import os

    return os.path.relpath(Path(target).resolve(), Path(start).resolve())


def as_unit_float(image: np.ndarray) -> np.ndarray:
    """uint8 imagery to float32 in [0, 1]; float imagery passes through."""
    image = np.asarray(image)
    if image.dtype == np.uint8:
        return image.astype(np.float32) / np.float32(255.0)
    return image.astype(np.float32, copy=False)


def make_sample(scene_t1: np.ndarray, scene_t2: np.ndarray, label_scene: np.ndarray,
                origin: tuple[int, int], tile_size: int, meta: dict | None = None) -> BiTemporalSample:
    """Cut one sample whose centre tile sits at ``origin`` (any position)."""
    s = tile_size
    m1 = neighborhood_window(scene_t1, origin, s)
    m2 = neighborhood_window(scene_t2, origin, s)
    meta = dict(meta or {})
    meta.setdefault("origin", list(origin))
    meta["validity"] = m1.validity.astype(int).ravel().tolist()
    return BiTemporalSample(
        center_t1=crop_patch(scene_t1, origin, s),
        center_t2=crop_patch(scene_t2, origin, s),
        neigh_t1=downsample_neighborhood(m1),
        neigh_t2=downsample_neighborhood(m2),
        label=crop_patch(label_scene, origin, s).astype(np.uint8),
        meta=meta,
    )


def extract_samples(scene_t1: np.ndarray, scene_t2: np.ndarray, label_scene: np.ndarray,
                    tile_size: int = 256, stride: int | None = None,
                    scene_id: str = "scene") -> list[BiTemporalSample]:
    """Tile the scene pair and build one sample per tile, in grid order."""
    scene_t1, scene_t2 = as_unit_float(scene_t1), as_unit_float(scene_t2)
    label_scene = (np.asarray(label_scene) > 0).astype(np.uint8)
    if not (scene_t1.shape == scene_t2.shape and scene_t1.shape[:2] == label_scene.shape):
        raise InvalidInputError(
            f"scene shapes differ: {scene_t1.shape}, {scene_t2.shape}, {label_scene.shape}"
        )
    h, w = label_scene.shape
    stride = tile_size if stride is None else stride
    grid = build_tile_grid(w, h, tile_size, stride)
    samples = []
    for tile in grid.tiles():
        meta = {
            "sample_id": f"{scene_id}_r{tile.grid_row:03d}_c{tile.grid_col:03d}",
            "scene_id": scene_id,
            "grid_row": tile.grid_row,
            "grid_col": tile.grid_col,
            "origin": list(tile.origin),
            "tile_size": tile_size,
            "stride": stride,
            "scene_height": h,
            "scene_width": w,
        }
        sample = make_sample(scene_t1, scene_t2, label_scene, tile.origin, tile_size, meta)
        if stride == tile_size:
            # grid-based validity: marks the cell invalid only when no neighbour tile exists
            mosaic = assemble_neighborhood(scene_t1, grid, tile)
            sample.meta["validity"] = mosaic.validity.astype(int).ravel().tolist()
        samples.append(sample)
    return samples


def write_samples(samples: Sequence[BiTemporalSample], out_dir: str | Path,
                  split: str = "none", seed: int = 0,
                  manifest_name: str = "manifest.jsonl") -> DatasetManifest:
    out_dir = Path(out_dir)
    records = []
    for i, sample in enumerate(samples):
        sid = sample.meta.get("sample_id", f"sample_{i:05d}")
        rel = Path("samples") / f"{sid}.npz"
        sample.save(out_dir / rel)
        rec = {k: v for k, v in sample.meta.items() if k != "path"}
        rec.update(sample_id=sid, path=str(rel), split=split, tile_size=sample.size)
        records.append(rec)
    manifest = DatasetManifest(records, split=split, seed=seed, root=out_dir)
    manifest.save(out_dir / manifest_name)
    return manifest


def prepare_dataset(scene_t1: np.ndarray, scene_t2: np.ndarray, label_scene: np.ndarray,
                    tile_size: int = 256, stride: int | None = None,
                    out_dir: str | Path = "dataset", scene_id: str = "scene",
                    seed: int = 0) -> DatasetManifest:
    """Pre-crop every tile with its neighborhood and write a manifest."""
    samples = extract_samples(scene_t1, scene_t2, label_scene, tile_size, stride, scene_id)
    return write_samples(samples, out_dir, seed=seed)


def split_sizes(n: int, ratios: Sequence[float] = (6, 2, 2)) -> tuple[int, int, int]:
    """Round train and val to the nearest integer (halves up); test takes the rest."""
    total = float(sum(ratios))
    n_train = math.floor(n * ratios[0] / total + 0.5)
    n_val = math.floor(n * ratios[1] / total + 0.5)
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def split_dataset(manifest: DatasetManifest, ratios: Sequence[float] = (6, 2, 2),
                  seed: int = 0) -> tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    if len(manifest) == 0:
        raise InvalidInputError("cannot split an empty manifest")
    if len(ratios) != 3 or min(ratios) <= 0:
        raise InvalidInputError(f"ratios must be three positive numbers, got {ratios}")
    n_train, n_val, _ = split_sizes(len(manifest), ratios)
    order = np.random.default_rng(seed).permutation(len(manifest))
    parts = (order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:])
    out = []
    for idx, name in zip(parts, ("train", "val", "test")):
        m = manifest.subset(sorted(idx.tolist()), split=name)
        m.seed = seed
        out.append(m)
    return tuple(out)


@dataclass(frozen=True)
class AugmentationSpec:
    """Which augmentations to sample and how strongly.

    Each enabled flip fires with ``probability``; the rotation is drawn
    uniformly from ``rotations`` plus the identity.  ``color_jitter`` is the
    relative brightness/contrast amplitude.  ``extra_overlap_stride`` is the
    stride used to re-tile training scenes (``None`` disables it).
    """

    hflip: bool = True
    vflip: bool = True
    rotations: tuple[int, ...] = (90, 180, 270)
    color_jitter: float = 0.1
    extra_overlap_stride: int | None = None
    probability: float = 0.5

    def __post_init__(self):
        if not set(self.rotations) <= {90, 180, 270}:
            raise InvalidInputError(f"rotations must be multiples of 90 in (0, 360): {self.rotations}")
        if self.color_jitter < 0 or not 0 <= self.probability <= 1:
            raise InvalidInputError("jitter must be >= 0 and probability in [0, 1]")


def apply_geometric(sample: BiTemporalSample, hflip: bool = False, vflip: bool = False,
                    quarter_turns: int = 0) -> BiTemporalSample:
    """Flip then rotate counter-clockwise, identically on every raster."""

    def op(a: np.ndarray | None) -> np.ndarray | None:
        if a is None:
            return None
        if hflip:
            a = a[:, ::-1]
        if vflip:
            a = a[::-1, :]
        return np.ascontiguousarray(np.rot90(a, quarter_turns % 4, axes=(0, 1)))

    return replace(
        sample,
        **{k: op(getattr(sample, k)) for k in IMAGE_KEYS},
        label=op(sample.label),
        region_mask=op(sample.region_mask),
        meta=dict(sample.meta),
    )


def jitter_color(image: np.ndarray, brightness: float, contrast: float) -> np.ndarray:
    mean = image.mean(dtype=np.float64)
    out = (image - mean) * (1.0 + contrast) + mean * (1.0 + brightness)
    return np.clip(out, 0.0, 1.0).astype(image.dtype)


def augment(sample: BiTemporalSample, spec: AugmentationSpec = AugmentationSpec(),
            seed: int | np.random.Generator = 0) -> BiTemporalSample:
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    hflip = spec.hflip and rng.random() < spec.probability
    vflip = spec.vflip and rng.random() < spec.probability
    turns = int(rng.choice([0, *spec.rotations])) // 90
    out = apply_geometric(sample, hflip, vflip, turns)
    if spec.color_jitter > 0:
        a = spec.color_jitter
        # one draw per acquisition date, shared by its centre and neighborhood images
        for center, neigh in (("center_t1", "neigh_t1"), ("center_t2", "neigh_t2")):
            b, c = rng.uniform(-a, a, size=2)
            setattr(out, center, jitter_color(getattr(out, center), b, c))
            setattr(out, neigh, jitter_color(getattr(out, neigh), b, c))
    return out
