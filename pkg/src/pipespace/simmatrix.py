"""Pearson similarity between pipeline maps, per group and averaged."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass

import numpy as np

from .dataset import canonical_order, parse_pipeline_id
from .errors import (EmptyList, LengthTooSmall, MaskMismatch, OrderMismatch, PipespaceError,
                     ValidationError, ZeroVariance)
from .resample import Mask, MaskedVector, TargetGrid, resample_continuous
from .volume import read_volume


def _centered(x: np.ndarray) -> np.ndarray:
    # mean accumulated in extended precision, then a second pass on the residuals
    mean = np.mean(x, dtype=np.longdouble)
    return (x - mean).astype(np.float64)


def _r(cx: np.ndarray, cy: np.ndarray) -> float:
    sxx = float(np.dot(cx, cx))
    syy = float(np.dot(cy, cy))
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVariance("constant vector has zero variance")
    r = float(np.dot(cx, cy)) / np.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def pearson(x, y) -> float:
    """Pearson correlation of two masked vectors (or plain arrays), clamped to [-1, 1]."""
    if isinstance(x, MaskedVector) and isinstance(y, MaskedVector) and x.mask_hash != y.mask_hash:
        raise MaskMismatch(f"vectors come from different masks ({x.mask_hash} vs {y.mask_hash})")
    xv = x.values if isinstance(x, MaskedVector) else np.asarray(x, dtype=np.float64)
    yv = y.values if isinstance(y, MaskedVector) else np.asarray(y, dtype=np.float64)
    if xv.shape != yv.shape:
        raise MaskMismatch(f"length mismatch: {xv.size} vs {yv.size}")
    if xv.size < 2:
        raise LengthTooSmall(f"need at least 2 values, got {xv.size}")
    return _r(_centered(xv), _centered(yv))


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    pipelines: tuple
    r: np.ndarray
    contrast: str
    group_id: str
    n_voxels: int = 0

    def __post_init__(self):
        pipelines = tuple(parse_pipeline_id(p) for p in self.pipelines)
        if list(pipelines) != canonical_order(pipelines):
            raise OrderMismatch("pipelines must be in canonical sorted order")
        r = np.array(self.r, dtype=np.float64)
        p = len(pipelines)
        if r.shape != (p, p):
            raise ValidationError(f"matrix shape {r.shape} does not match {p} pipelines")
        if not np.array_equal(r, r.T):
            raise ValidationError("similarity matrix is not symmetric")
        if np.any(np.abs(r) > 1.0) or not np.all(np.diag(r) == 1.0):
            raise ValidationError("similarity entries must lie in [-1, 1] with unit diagonal")
        r.flags.writeable = False
        object.__setattr__(self, "pipelines", pipelines)
        object.__setattr__(self, "r", r)

    @property
    def labels(self) -> list:
        return [str(p) for p in self.pipelines]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(["pipeline"] + self.labels)
        for label, row in zip(self.labels, self.r):
            w.writerow([label] + [f"{v:.9g}" for v in row])
        return buf.getvalue()


def similarity_from_vectors(vectors: dict, contrast: str, group_id: str) -> SimilarityMatrix:
    """All pairwise correlations between ``{pipeline: MaskedVector}``."""
    pipelines = canonical_order(vectors)
    hashes = {vectors[p].mask_hash for p in pipelines}
    if len(hashes) > 1:
        raise MaskMismatch(f"{contrast}/{group_id}: vectors come from {len(hashes)} different masks")
    n = vectors[pipelines[0]].n_voxels if pipelines else 0
    if n < 2:
        raise LengthTooSmall(f"{contrast}/{group_id}: need at least 2 voxels, got {n}")
    centered = [_centered(vectors[p].values) for p in pipelines]
    r = np.eye(len(pipelines))
    for a, b in itertools.combinations(range(len(pipelines)), 2):
        try:
            r[a, b] = r[b, a] = _r(centered[a], centered[b])
        except ZeroVariance:
            bad = pipelines[a] if not centered[a].any() else pipelines[b]
            raise ZeroVariance(
                f"{contrast}/{group_id}: pair ({pipelines[a]}) x ({pipelines[b]}): "
                f"map of pipeline {bad} is constant") from None
    return SimilarityMatrix(tuple(pipelines), r, contrast, group_id, n)


def load_group_vectors(index, contrast: str, group_id: str, grid: TargetGrid, mask) -> dict:
    """Read, resample and mask every pipeline map of one (contrast, group)."""
    if not isinstance(mask, Mask):
        mask = Mask(mask)
    out = {}
    for pipeline, path in sorted(index.paths(contrast, group_id).items(), key=lambda kv: str(kv[0])):
        try:
            vol = resample_continuous(read_volume(path), grid)
            out[pipeline] = mask.apply(vol)
        except PipespaceError as exc:
            raise type(exc)(f"({contrast}, {group_id}, {pipeline}): {exc}") from exc
    return out


def group_similarity(index, contrast: str, group_id: str, grid: TargetGrid, mask) -> SimilarityMatrix:
    vectors = load_group_vectors(index, contrast, group_id, grid, mask)
    return similarity_from_vectors(vectors, contrast, group_id)


def mean_similarity(mats) -> SimilarityMatrix:
    """Elementwise mean of per-group matrices of one contrast."""
    mats = list(mats)
    if not mats:
        raise EmptyList("no similarity matrices to average")
    first = mats[0]
    for m in mats[1:]:
        if m.pipelines != first.pipelines:
            raise OrderMismatch("matrices have different pipeline lists")
        if m.contrast != first.contrast:
            raise OrderMismatch(f"cannot average contrasts {first.contrast!r} and {m.contrast!r}")
    # summing in input order keeps the result independent of how groups were scheduled
    total = np.zeros_like(first.r)
    for m in mats:
        total += m.r
    mean = total / len(mats)
    np.fill_diagonal(mean, 1.0)
    mean = np.clip((mean + mean.T) / 2, -1.0, 1.0)
    return SimilarityMatrix(first.pipelines, mean, first.contrast, "mean", first.n_voxels)
