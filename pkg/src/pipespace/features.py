"""Community characterisation: mean maps, FDR-thresholded activation counts."""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from statistics import NormalDist

import numpy as np

from .errors import BadAtlasRange, BadP, BadQ, EmptyList, GridMismatch, MaskMismatch, NonFinite
from .resample import Mask, MaskedVector, TargetGrid, resample_nearest
from .volume import Volume

logger = logging.getLogger(__name__)

DEFAULT_Q = 0.05
DEFAULT_ROI_THRESHOLD = 0.5

_SQRT2 = math.sqrt(2.0)


def mean_map(maps) -> MaskedVector:
    """Voxelwise mean of masked vectors sharing one mask."""
    maps = list(maps)
    if not maps:
        raise EmptyList("no maps to average")
    h = maps[0].mask_hash
    total = np.zeros(maps[0].n_voxels)
    for m in maps:
        if m.mask_hash != h or m.n_voxels != total.size:
            raise MaskMismatch("maps to average come from different masks")
        total += m.values
    return MaskedVector(total / len(maps), h)


def z_to_p(z) -> float:
    """One-sided upper-tail p-value of a standard normal z, ``1 - Phi(z)``."""
    z = float(z)
    if not math.isfinite(z):
        raise NonFinite(f"z must be finite, got {z}")
    return 0.5 * math.erfc(z / _SQRT2)


def p_to_z(p: float) -> float:
    """Inverse of :func:`z_to_p`."""
    if p <= 0.0:
        return math.inf
    if p >= 1.0:
        return -math.inf
    return -NormalDist().inv_cdf(p)


@dataclass(frozen=True)
class ThresholdResult:
    z_threshold: float
    n_rejected: int
    q: float
    n_tests: int
    p_threshold: float = 0.0
    rejected: np.ndarray = field(default=None, repr=False, compare=False)


def fdr_bh(pvals, q: float = DEFAULT_Q) -> ThresholdResult:
    """Benjamini-Hochberg step-up.

    With p sorted ascending, reject the k* smallest where
    k* = max{k : p_(k) <= k q / m}.
    """
    p = np.asarray(pvals, dtype=np.float64).ravel()
    if not 0.0 < q < 1.0:
        raise BadQ(f"q must lie in (0, 1), got {q}")
    if p.size and (np.any(~np.isfinite(p)) or p.min() < 0.0 or p.max() > 1.0):
        raise BadP("p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    below = np.nonzero(p[order] <= q * np.arange(1, m + 1) / m)[0]
    k = int(below[-1]) + 1 if below.size else 0
    rejected = np.zeros(m, dtype=bool)
    rejected[order[:k]] = True
    p_thr = float(p[order[k - 1]]) if k else 0.0
    z_thr = p_to_z(p_thr) if k else math.inf
    return ThresholdResult(z_thr, k, q, m, p_thr, rejected)


def threshold_map(mean: MaskedVector, q: float = DEFAULT_Q) -> tuple:
    """FDR-threshold a z map; returns (binary MaskedVector, ThresholdResult).

    ``z_threshold`` of the result is the smallest z among active voxels.
    """
    z = mean.values
    p = _upper_tail(z)
    res = fdr_bh(p, q)
    active = res.rejected
    if res.n_rejected:
        res = ThresholdResult(float(z[active].min()), res.n_rejected, q, res.n_tests, res.p_threshold, active)
    return MaskedVector(active.astype(np.float64), mean.mask_hash), res


_erfc = np.frompyfunc(math.erfc, 1, 1)


def _upper_tail(z: np.ndarray) -> np.ndarray:
    return 0.5 * _erfc(z / _SQRT2).astype(np.float64)


def roi_mask(atlas: Volume, grid: TargetGrid, prob_threshold: float = DEFAULT_ROI_THRESHOLD) -> Volume:
    """Binary ROI from a probabilistic atlas (values in [0, 1] or percentages)."""
    lo, hi = float(atlas.data.min()), float(atlas.data.max())
    if lo < 0.0 or hi > 100.0:
        raise BadAtlasRange(f"atlas values must lie in [0, 1] or [0, 100], got [{lo}, {hi}]")
    data = atlas.data / 100.0 if hi > 1.0 else atlas.data
    on_grid = resample_nearest(Volume(atlas.dims, atlas.affine, data), grid)
    roi = (on_grid.data >= prob_threshold).astype(np.float64)
    if not roi.any():
        logger.warning("ROI is empty at probability threshold %g", prob_threshold)
    return Volume(on_grid.dims, on_grid.affine, roi)


def count_active(active: MaskedVector, roi: Volume = None, mask: Mask = None) -> tuple:
    """(whole-map, in-ROI) active voxel counts; the ROI is restricted to ``mask``.

    Without an ROI the second count is None.
    """
    on = active.values > 0.5
    whole = int(on.sum())
    if roi is None:
        return whole, None
    if mask is None:
        raise GridMismatch("an ROI count needs the mask the active map was built with")
    if mask.hash != active.mask_hash:
        raise MaskMismatch("active map was not produced with this mask")
    if not roi.same_grid(mask.volume):
        raise GridMismatch(f"ROI grid {roi.dims} does not match mask grid {mask.volume.dims}")
    in_roi = roi.flat[mask.select] > 0.5
    return whole, int(np.sum(on & in_roi))


@dataclass(frozen=True)
class FeatureRow:
    contrast: str
    pipeline: str
    community: int
    n_active_whole: int
    n_active_roi: int  # None when no ROI was given
    z_threshold: float
    q: float


FEATURES_HEADER = ["contrast", "pipeline", "community", "n_active_whole", "n_active_roi", "z_threshold", "q"]


def features_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(FEATURES_HEADER)
    for r in rows:
        roi = "" if r.n_active_roi is None else r.n_active_roi
        w.writerow([r.contrast, r.pipeline, r.community, r.n_active_whole, roi,
                    f"{r.z_threshold:.9g}", f"{r.q:g}"])
    return buf.getvalue()


def community_summary(rows) -> dict:
    """Mean whole-map and ROI counts per community, the shape of a two-row table."""
    out = {}
    for r in rows:
        out.setdefault(r.community, []).append(r)
    return {c: {"n_pipelines": len(rs),
                "whole": float(np.mean([r.n_active_whole for r in rs])),
                "roi": None if rs[0].n_active_roi is None
                else float(np.mean([r.n_active_roi for r in rs]))}
            for c, rs in sorted(out.items())}
