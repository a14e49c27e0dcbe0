"""Shared plumbing for multi-group runs: worker pools, grids and masks."""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .errors import PipespaceError
from .resample import TargetGrid, intersect_masks, resample_nearest
from .volume import Volume, read_volume


def parallel_map(fn, items, jobs: int = 1) -> list:
    """``[fn(x) for x in items]`` on up to ``jobs`` threads; result order is input order."""
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def group_seed(seed: int, group_id: str) -> int:
    """Per-group seed; independent of which other groups exist."""
    return (int(seed) ^ zlib.crc32(group_id.encode("utf-8"))) & 0xFFFFFFFF


def default_grid(index) -> TargetGrid:
    """Grid of the first volume in canonical (contrast, group, pipeline) order."""
    first = min(index.entries, key=lambda e: (e.contrast, e.group_id, str(e.pipeline)))
    return TargetGrid.like(read_volume(first.path))


def _support(path: str, grid: TargetGrid) -> Volume:
    try:
        v = read_volume(path)
    except PipespaceError as exc:
        raise type(exc)(f"{path}: {exc}") from exc
    support = Volume(v.dims, v.affine, (v.data != 0).astype(np.float64))
    return resample_nearest(support, grid)


def auto_mask(index, grid: TargetGrid, contrasts=None, jobs: int = 1) -> Volume:
    """Intersection of the non-zero supports of every map, on ``grid``.

    NaN voxels read as 0, so they fall outside the mask.
    """
    wanted = set(contrasts) if contrasts else None
    paths = sorted(e.path for e in index.entries if wanted is None or e.contrast in wanted)
    supports = parallel_map(lambda p: _support(p, grid), paths, jobs)
    return intersect_masks(supports)


def load_mask(path: str, grid: TargetGrid) -> Volume:
    m = read_volume(path, nan_policy="reject")
    return intersect_masks([resample_nearest(m, grid)])
