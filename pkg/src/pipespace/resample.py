"""Common-grid resampling, mask intersection and mask application."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass

import numpy as np

from .errors import EmptyIntersection, EmptyMaskList, GridMismatch, SingularAffine, ValidationError
from .volume import Volume

logger = logging.getLogger(__name__)

# slack for voxel coordinates that land on the grid boundary after composing affines
_EDGE_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class TargetGrid:
    dims: tuple
    affine: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValidationError(f"grid dims must be three positive integers, got {self.dims!r}")
        affine = np.array(self.affine, dtype=np.float64)
        if affine.shape != (4, 4):
            raise ValidationError(f"grid affine must be 4x4, got shape {affine.shape}")
        if not np.array_equal(affine[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValidationError("grid affine last row must be (0, 0, 0, 1)")
        _check_invertible(affine)
        affine.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "affine", affine)

    @classmethod
    def like(cls, v: Volume) -> "TargetGrid":
        return cls(v.dims, v.affine)

    @classmethod
    def from_flags(cls, dims: str, affine: str) -> "TargetGrid":
        """Build a grid from ``"nx,ny,nz"`` and 16 comma-separated row-major affine values."""
        try:
            d = [int(x) for x in dims.split(",")]
            a = [float(x) for x in affine.split(",")]
        except ValueError:
            raise ValidationError(f"cannot parse grid flags dims={dims!r} affine={affine!r}") from None
        if len(d) != 3 or len(a) != 16:
            raise ValidationError("grid needs 3 dims and 16 affine values")
        return cls(tuple(d), np.array(a).reshape(4, 4))

    def same_as(self, v) -> bool:
        return self.dims == tuple(v.dims) and np.array_equal(self.affine, v.affine)


def _check_invertible(affine):
    block = affine[:3, :3]
    if not np.all(np.isfinite(block)) or abs(np.linalg.det(block)) < 1e-12:
        raise SingularAffine(f"affine upper-left 3x3 is singular:\n{block}")


def _source_coords(v: Volume, g: TargetGrid) -> np.ndarray:
    """Target voxel centres expressed as (3, N) source voxel coordinates, x-fastest."""
    _check_invertible(v.affine)
    vox = np.linalg.inv(v.affine) @ g.affine
    i, j, k = np.meshgrid(*(np.arange(n, dtype=np.float64) for n in g.dims), indexing="ij")
    idx = np.stack([i.ravel(order="F"), j.ravel(order="F"), k.ravel(order="F")])
    return vox[:3, :3] @ idx + vox[:3, 3:4]


def resample_continuous(v: Volume, g: TargetGrid) -> Volume:
    """Trilinear resampling of ``v`` onto ``g``.

    Samples outside the hull of source voxel centres are 0.
    """
    if g.same_as(v):
        return v
    coords = _source_coords(v, g)
    n_out = coords.shape[1]
    inside = np.ones(n_out, dtype=bool)
    lo, frac = [], []
    for axis, n in enumerate(v.dims):
        x = coords[axis]
        inside &= (x >= -_EDGE_TOL) & (x <= n - 1 + _EDGE_TOL)
        if n == 1:
            lo.append(np.zeros(n_out, dtype=np.intp))
            frac.append(np.zeros(n_out))
            continue
        x = np.clip(x, 0.0, n - 1.0)
        i0 = np.minimum(np.floor(x).astype(np.intp), n - 2)
        lo.append(i0)
        frac.append(x - i0)

    src = v.data
    out = np.zeros(n_out)
    sel = np.nonzero(inside)[0]
    for dx in (0, 1):
        wx = frac[0][sel] if dx else 1.0 - frac[0][sel]
        ix = np.minimum(lo[0][sel] + dx, v.dims[0] - 1)
        for dy in (0, 1):
            wy = frac[1][sel] if dy else 1.0 - frac[1][sel]
            iy = np.minimum(lo[1][sel] + dy, v.dims[1] - 1)
            for dz in (0, 1):
                wz = frac[2][sel] if dz else 1.0 - frac[2][sel]
                iz = np.minimum(lo[2][sel] + dz, v.dims[2] - 1)
                out[sel] += wx * wy * wz * src[ix, iy, iz]
    return Volume(g.dims, g.affine, out.reshape(g.dims, order="F"))


def resample_nearest(v: Volume, g: TargetGrid) -> Volume:
    """Nearest-neighbour resampling; exact halfway ties go to the lower index."""
    if g.same_as(v):
        return v
    coords = _source_coords(v, g)
    n_out = coords.shape[1]
    inside = np.ones(n_out, dtype=bool)
    idx = []
    for axis, n in enumerate(v.dims):
        i = np.ceil(coords[axis] - 0.5 - _EDGE_TOL).astype(np.intp)
        inside &= (i >= 0) & (i <= n - 1)
        idx.append(np.clip(i, 0, n - 1))
    out = np.where(inside, v.data[idx[0], idx[1], idx[2]], 0.0)
    return Volume(g.dims, g.affine, out.reshape(g.dims, order="F"))


def binarize(m: Volume) -> Volume:
    return Volume(m.dims, m.affine, (m.data > 0.5).astype(np.float64))


def intersect_masks(masks) -> Volume:
    """Voxelwise AND of masks binarised at > 0.5."""
    masks = list(masks)
    if not masks:
        raise EmptyMaskList("no masks to intersect")
    first = masks[0]
    keep = np.ones(first.dims, dtype=bool)
    for m in masks:
        if not m.same_grid(first):
            raise GridMismatch("masks to intersect must share dims and affine")
        keep &= m.data > 0.5
    if not keep.any():
        logger.warning("mask intersection is empty")
    return Volume(first.dims, first.affine, keep.astype(np.float64))


def mask_digest(mask: Volume) -> str:
    h = hashlib.sha256()
    h.update(np.asarray(mask.dims, dtype="<i8").tobytes())
    h.update(np.asarray(mask.affine, dtype="<f8").tobytes())
    h.update(np.packbits(mask.flat > 0.5).tobytes())
    return h.hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class MaskedVector:
    values: np.ndarray
    mask_hash: str

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if not np.all(np.isfinite(values)):
            raise ValidationError("masked vector contains non-finite values")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    @property
    def n_voxels(self) -> int:
        return self.values.size

    def __len__(self):
        return self.values.size


class Mask:
    """A binarised mask with its in-mask voxel positions and digest precomputed."""

    def __init__(self, volume: Volume):
        self.volume = volume
        self.select = volume.flat > 0.5
        self.n_voxels = int(self.select.sum())
        self.hash = mask_digest(volume)

    def apply(self, v: Volume) -> MaskedVector:
        if not v.same_grid(self.volume):
            raise GridMismatch(f"volume grid {v.dims} does not match mask grid {self.volume.dims}")
        if self.n_voxels == 0:
            raise EmptyIntersection("mask selects no voxels")
        return MaskedVector(v.flat[self.select], self.hash)

    def unmask(self, vec: MaskedVector) -> Volume:
        """Scatter a masked vector back onto the mask grid (0 outside)."""
        if vec.mask_hash != self.hash:
            raise GridMismatch("vector was not produced by this mask")
        out = np.zeros(self.select.size)
        out[self.select] = vec.values
        return Volume(self.volume.dims, self.volume.affine, out)


def apply_mask(v: Volume, mask) -> MaskedVector:
    """In-mask values of ``v`` in x-fastest voxel order."""
    if not isinstance(mask, Mask):
        mask = Mask(mask)
    return mask.apply(v)
