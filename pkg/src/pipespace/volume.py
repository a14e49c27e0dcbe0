"""Minimal single-file NIfTI-1 reader and writer.

Only the subset needed for resampled 3-D statistic maps is supported:
``n+1`` magic, ``dim[0] == 3``, int16/float32/float64 voxels and an sform
affine.  Anything else is rejected with :class:`UnsupportedFormat` rather
than guessed at.
"""

from __future__ import annotations

import logging
import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import DataIOError, NonFiniteData, TruncatedFile, UnsupportedFormat, ValidationError

logger = logging.getLogger(__name__)

HEADER_SIZE = 348
DATA_OFFSET = 352

# datatype code -> numpy base type
_DTYPES = {4: "i2", 16: "f4", 64: "f8"}

# byte offsets inside the 348-byte header
_OFF_DIM = 40
_OFF_DATATYPE = 70
_OFF_BITPIX = 72
_OFF_PIXDIM = 76
_OFF_VOX_OFFSET = 108
_OFF_SCL_SLOPE = 112
_OFF_SCL_INTER = 116
_OFF_XYZT_UNITS = 123
_OFF_DESCRIP = 148
_OFF_QFORM_CODE = 252
_OFF_SFORM_CODE = 254
_OFF_SROW = 280
_OFF_MAGIC = 344


@dataclass(frozen=True, eq=False)
class Volume:
    """A 3-D scalar grid with its voxel-to-world affine.

    ``data`` has shape ``dims``; flattening in Fortran order gives the
    x-fastest voxel order used on disk and for masking.  Arrays are stored
    read-only so a Volume can be shared freely between workers.
    """

    dims: tuple
    affine: np.ndarray
    data: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) != 3 or any(d < 1 for d in dims):
            raise ValidationError(f"dims must be three positive integers, got {self.dims!r}")
        affine = np.array(self.affine, dtype=np.float64)
        if affine.shape != (4, 4):
            raise ValidationError(f"affine must be 4x4, got shape {affine.shape}")
        if not np.array_equal(affine[3], [0.0, 0.0, 0.0, 1.0]):
            raise ValidationError(f"affine last row must be (0, 0, 0, 1), got {affine[3].tolist()}")
        data = np.array(self.data, dtype=np.float64)
        if data.size != dims[0] * dims[1] * dims[2]:
            raise ValidationError(f"data has {data.size} values, dims {dims} need {np.prod(dims)}")
        if data.ndim == 1:
            data = data.reshape(dims, order="F")
        elif data.shape != dims:
            raise ValidationError(f"data shape {data.shape} does not match dims {dims}")
        if not np.all(np.isfinite(data)):
            raise NonFiniteData(f"volume contains {int(np.sum(~np.isfinite(data)))} non-finite values")
        affine.flags.writeable = False
        data.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "affine", affine)
        object.__setattr__(self, "data", data)

    @property
    def flat(self) -> np.ndarray:
        """Voxel values in x-fastest order."""
        return self.data.ravel(order="F")

    def same_grid(self, other) -> bool:
        return self.dims == tuple(other.dims) and np.array_equal(self.affine, other.affine)

    def __eq__(self, other):
        if not isinstance(other, Volume):
            return NotImplemented
        return self.same_grid(other) and np.array_equal(self.data, other.data)

    __hash__ = None


def _read_bytes(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except OSError as exc:
        raise DataIOError(f"cannot read volume {os.fspath(path)!r}: {exc.strerror or exc}") from exc


def read_volume(path, nan_policy: str = "zero") -> Volume:
    """Read a single-file NIfTI-1 volume.

    Byte order is detected from the header-size field.  ``nan_policy``
    decides what happens to NaN voxels: ``"zero"`` replaces them by 0 and
    logs how many there were (statistic maps often carry NaN outside the
    brain), ``"reject"`` raises :class:`NonFiniteData` (use for masks and
    atlases).  Infinite values are always rejected.
    """
    if nan_policy not in ("zero", "reject"):
        raise ValueError(f"unknown nan_policy {nan_policy!r}")
    name = os.fspath(path)
    raw = _read_bytes(path)
    if len(raw) < HEADER_SIZE:
        raise TruncatedFile(f"{name}: {len(raw)} bytes, shorter than a NIfTI-1 header")

    if struct.unpack_from("<i", raw, 0)[0] == HEADER_SIZE:
        bo = "<"
    elif struct.unpack_from(">i", raw, 0)[0] == HEADER_SIZE:
        bo = ">"
    else:
        raise UnsupportedFormat(f"{name}: header size field is not 348 in either byte order")

    magic = raw[_OFF_MAGIC:_OFF_MAGIC + 4]
    if magic != b"n+1\x00":
        raise UnsupportedFormat(f"{name}: magic {magic!r} is not single-file NIfTI-1 (n+1)")

    dim = struct.unpack_from(bo + "8h", raw, _OFF_DIM)
    if dim[0] != 3:
        raise UnsupportedFormat(f"{name}: only 3-D volumes are supported, dim[0] = {dim[0]}")
    dims = dim[1:4]
    if any(d < 1 for d in dims):
        raise UnsupportedFormat(f"{name}: non-positive dimension in {dims}")

    datatype = struct.unpack_from(bo + "h", raw, _OFF_DATATYPE)[0]
    if datatype not in _DTYPES:
        raise UnsupportedFormat(f"{name}: datatype {datatype} not in int16/float32/float64")

    sform_code = struct.unpack_from(bo + "h", raw, _OFF_SFORM_CODE)[0]
    if sform_code <= 0:
        raise UnsupportedFormat(f"{name}: no sform affine (sform_code = {sform_code})")
    srow = struct.unpack_from(bo + "12f", raw, _OFF_SROW)
    affine = np.eye(4)
    affine[:3, :] = np.asarray(srow, dtype=np.float64).reshape(3, 4)

    vox_offset = int(struct.unpack_from(bo + "f", raw, _OFF_VOX_OFFSET)[0])
    if vox_offset < DATA_OFFSET:
        raise UnsupportedFormat(f"{name}: vox_offset {vox_offset} < {DATA_OFFSET}")
    dtype = np.dtype(bo + _DTYPES[datatype])
    n = dims[0] * dims[1] * dims[2]
    end = vox_offset + n * dtype.itemsize
    if len(raw) < end:
        raise TruncatedFile(f"{name}: expected {end} bytes of header+data, found {len(raw)}")
    data = np.frombuffer(raw, dtype=dtype, count=n, offset=vox_offset).astype(np.float64)

    slope, inter = struct.unpack_from(bo + "2f", raw, _OFF_SCL_SLOPE)
    # identity scaling is skipped so values (including -0.0) survive bit-exactly
    if slope != 0 and np.isfinite(slope) and (slope, inter) != (1.0, 0.0):
        data = data * slope + (inter if np.isfinite(inter) else 0.0)

    nans = np.isnan(data)
    if nans.any():
        if nan_policy == "reject":
            raise NonFiniteData(f"{name}: {int(nans.sum())} NaN voxels")
        logger.warning("%s: replaced %d NaN voxels by 0", name, int(nans.sum()))
        data = np.where(nans, 0.0, data)
    if np.isinf(data).any():
        raise NonFiniteData(f"{name}: {int(np.isinf(data).sum())} infinite voxels")

    return Volume(dims, affine, data.reshape(dims, order="F"))


def encode_volume(v: Volume) -> bytes:
    """Serialise ``v`` as little-endian float32 single-file NIfTI-1 bytes."""
    if not np.all(np.isfinite(v.data)):
        raise NonFiniteData("refusing to write a volume with non-finite data")
    hdr = bytearray(DATA_OFFSET)
    struct.pack_into("<i", hdr, 0, HEADER_SIZE)
    struct.pack_into("<8h", hdr, _OFF_DIM, 3, *v.dims, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, _OFF_DATATYPE, 16, 32)
    zooms = np.sqrt(np.sum(v.affine[:3, :3] ** 2, axis=0))
    struct.pack_into("<8f", hdr, _OFF_PIXDIM, 1.0, *zooms, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<3f", hdr, _OFF_VOX_OFFSET, float(DATA_OFFSET), 1.0, 0.0)
    hdr[_OFF_XYZT_UNITS] = 2  # mm
    hdr[_OFF_DESCRIP:_OFF_DESCRIP + 9] = b"pipespace"
    struct.pack_into("<2h", hdr, _OFF_QFORM_CODE, 0, 2)
    struct.pack_into("<12f", hdr, _OFF_SROW, *v.affine[:3, :].ravel())
    hdr[_OFF_MAGIC:_OFF_MAGIC + 4] = b"n+1\x00"
    body = np.asarray(v.data, dtype="<f4").tobytes(order="F")
    return bytes(hdr) + body


def write_volume(v: Volume, path) -> None:
    blob = encode_volume(v)
    try:
        with open(path, "wb") as fh:
            fh.write(blob)
    except OSError as exc:
        raise DataIOError(f"cannot write volume {os.fspath(path)!r}: {exc.strerror or exc}") from exc
