"""Raster and record serialization.

Imagery is written as 8-bit PNG, labels as single-channel 0/1 PNG, and
arrays that are not 8-bit (downsampled neighborhoods, probability maps) as
``.npy`` files, whose header carries dims and dtype.  Structured records are
JSON lines.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Iterator

import numpy as np
from PIL import Image


def write_png(path: str | os.PathLike, raster: np.ndarray) -> None:
    raster = np.asarray(raster)
    if raster.dtype != np.uint8:
        raise ValueError(f"PNG rasters must be uint8, got {raster.dtype}")
    if raster.ndim == 3 and raster.shape[2] == 1:
        raster = raster[..., 0]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(raster).save(path, format="PNG")


def read_png(path: str | os.PathLike) -> np.ndarray:
    with Image.open(path) as img:
        return np.array(img)


def write_label_png(path: str | os.PathLike, label: np.ndarray) -> None:
    write_png(path, (np.asarray(label) > 0).astype(np.uint8))


def to_uint8(image: np.ndarray) -> np.ndarray:
    """Map unit-range float imagery onto 0..255."""
    return np.clip(np.rint(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_raster(path: str | os.PathLike, raster: np.ndarray) -> Path:
    """Write ``raster`` losslessly; the suffix of ``path`` picks the format."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix == ".png":
        write_png(path, raster)
    else:
        np.save(path, np.asarray(raster), allow_pickle=False)
    return path


def read_raster(path: str | os.PathLike) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".png":
        return read_png(path)
    return np.load(path, allow_pickle=False)


def _default(obj: Any) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(record: Any) -> str:
    return json.dumps(record, default=_default, sort_keys=True)


def write_jsonl(path: str | os.PathLike, records: Iterable[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with atomic_write(path, "w") as fh:
        for rec in records:
            fh.write(dumps(rec) + "\n")
    return path


def append_jsonl(path: str | os.PathLike, record: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a") as fh:
        fh.write(dumps(record) + "\n")


def read_jsonl(path: str | os.PathLike) -> Iterator[dict]:
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def write_json(path: str | os.PathLike, obj: Any) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with atomic_write(path, "w") as fh:
        json.dump(obj, fh, default=_default, indent=2)
        fh.write("\n")
    return path


def read_json(path: str | os.PathLike) -> Any:
    with open(path) as fh:
        return json.load(fh)


class atomic_write:
    """Context manager writing to a temp file renamed into place on success."""

    def __init__(self, path: str | os.PathLike, mode: str = "wb"):
        self.path = Path(path)
        self.mode = mode

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        fd, self._tmp = tempfile.mkstemp(dir=self.path.parent, prefix=f".{self.path.name}.")
        self._fh = os.fdopen(fd, self.mode)
        return self._fh

    def __exit__(self, exc_type, exc, tb):
        self._fh.close()
        if exc_type is None:
            os.replace(self._tmp, self.path)
        else:
            os.unlink(self._tmp)
        return False


def grid_records(grid, scene_id: str, validity: dict | None = None) -> list[dict]:
    """One record per tile of a :class:`~insinet.geometry.TileGrid`."""
    validity = validity or {}
    out = []
    for tile in grid.tiles():
        v = validity.get((tile.grid_row, tile.grid_col))
        out.append({
            "scene_id": scene_id,
            "grid_row": tile.grid_row,
            "grid_col": tile.grid_col,
            "origin": list(tile.origin),
            "validity": None if v is None else np.asarray(v, dtype=int).ravel().tolist(),
        })
    return out
