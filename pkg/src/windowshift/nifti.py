"""Minimal NIfTI-1 reader (.nii and .nii.gz).

Parses the fixed 348-byte header directly, applies the scale slope and
intercept, and reorients the voxel grid so the array axes are ordered
(x, y, z) in the positive world direction. Only the dominant axis of each
affine column is used for reorientation; oblique volumes are accepted with
a warning and are not resampled.
"""

from __future__ import annotations

import gzip
import struct
import warnings
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, MalformedHeaderError, UnsupportedDatatypeError

HEADER_SIZE = 348

# NIfTI-1 datatype codes we accept.
_DTYPES = {
    2: np.uint8,
    4: np.int16,
    8: np.int32,
    16: np.float32,
    64: np.float64,
    256: np.int8,
    512: np.uint16,
    768: np.uint32,
}

# Cosine below which a voxel axis is reported as oblique to its world axis.
_OBLIQUE_COS = 0.99


def _open_maybe_gzip(path: Path):
    with open(path, "rb") as fh:
        head = fh.read(2)
    if head == b"\x1f\x8b":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _quaternion_rotation(b: float, c: float, d: float) -> np.ndarray:
    a_sq = 1.0 - (b * b + c * c + d * d)
    a = np.sqrt(a_sq) if a_sq > 0 else 0.0
    return np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )


def _parse_header(raw: bytes, path: Path) -> dict:
    if len(raw) < HEADER_SIZE:
        raise MalformedHeaderError("sizeof_hdr", f"file shorter than {HEADER_SIZE} bytes: {path}")

    for order in ("<", ">"):
        (sizeof_hdr,) = struct.unpack_from(order + "i", raw, 0)
        if sizeof_hdr == HEADER_SIZE:
            break
    else:
        raise MalformedHeaderError("sizeof_hdr", f"expected {HEADER_SIZE}, not a NIfTI-1 file: {path}")

    magic = struct.unpack_from("4s", raw, 344)[0]
    if magic not in (b"n+1\x00", b"ni1\x00"):
        raise MalformedHeaderError("magic", repr(magic))

    dim = struct.unpack_from(order + "8h", raw, 40)
    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise MalformedHeaderError("dim[0]", str(ndim))
    shape = dim[1 : 1 + ndim]
    if any(n < 1 for n in shape):
        raise MalformedHeaderError("dim", str(shape))
    # Accept trailing singleton dims (e.g. a 4th time axis of length 1).
    if ndim > 3 and any(n != 1 for n in shape[3:]):
        raise MalformedHeaderError("dim", f"expected a 3D volume, got shape {shape}")
    if ndim < 3:
        raise MalformedHeaderError("dim", f"expected a 3D volume, got shape {shape}")

    (datatype,) = struct.unpack_from(order + "h", raw, 70)
    if datatype not in _DTYPES:
        raise UnsupportedDatatypeError("datatype", datatype)

    pixdim = struct.unpack_from(order + "8f", raw, 76)
    (vox_offset,) = struct.unpack_from(order + "f", raw, 108)
    scl_slope, scl_inter = struct.unpack_from(order + "2f", raw, 112)
    qform_code, sform_code = struct.unpack_from(order + "2h", raw, 252)
    quat = struct.unpack_from(order + "6f", raw, 256)
    srow = np.array(struct.unpack_from(order + "12f", raw, 280)).reshape(3, 4)

    return {
        "order": order,
        "shape": tuple(shape[:3]),
        "datatype": datatype,
        "pixdim": pixdim,
        "vox_offset": int(vox_offset) if magic == b"n+1\x00" else 0,
        "scl_slope": scl_slope,
        "scl_inter": scl_inter,
        "qform_code": qform_code,
        "sform_code": sform_code,
        "quat": quat,
        "srow": srow,
        "magic": magic,
    }


def _rotation_matrix(hdr: dict) -> np.ndarray:
    """3x3 voxel-to-world matrix (columns scaled by voxel size)."""
    if hdr["sform_code"] > 0:
        return hdr["srow"][:, :3].astype(float)
    if hdr["qform_code"] > 0:
        b, c, d = hdr["quat"][:3]
        rot = _quaternion_rotation(b, c, d)
        qfac = -1.0 if hdr["pixdim"][0] == -1.0 else 1.0
        scales = np.array([hdr["pixdim"][1], hdr["pixdim"][2], hdr["pixdim"][3] * qfac])
        return rot * scales
    return np.diag([hdr["pixdim"][1], hdr["pixdim"][2], hdr["pixdim"][3]])


def _reorient(data: np.ndarray, matrix: np.ndarray, path: Path):
    """Permute/flip voxel axes so axis k runs along +world axis k."""
    norms = np.linalg.norm(matrix, axis=0)
    if np.any(norms == 0):
        raise MalformedHeaderError("pixdim/affine", "zero-length voxel axis")

    dominant = np.argmax(np.abs(matrix), axis=0)
    if sorted(dominant) != [0, 1, 2]:
        warnings.warn(f"{path}: affine axes are not a permutation; keeping file axis order")
        return data, tuple(float(n) for n in norms)

    cosines = np.abs(matrix[dominant, (0, 1, 2)]) / norms
    if np.any(cosines < _OBLIQUE_COS):
        warnings.warn(f"{path}: oblique acquisition (axis cosines {np.round(cosines, 3)}); "
                      "reorienting by dominant axes without resampling")

    perm = [int(np.where(dominant == axis)[0][0]) for axis in range(3)]
    data = np.transpose(data, perm)
    spacing = tuple(float(norms[p]) for p in perm)
    for axis in range(3):
        if matrix[axis, perm[axis]] < 0:
            data = np.flip(data, axis=axis)
    return data, spacing


def read_nifti(path) -> tuple[np.ndarray, tuple[float, float, float]]:
    """Read a NIfTI-1 volume.

    Returns (voxels, spacing): float32 array indexed [x, y, z] with the
    scale slope/intercept applied, and the voxel spacing in mm.
    """
    path = Path(path)
    with _open_maybe_gzip(path) as fh:
        raw = fh.read()

    hdr = _parse_header(raw, path)
    if hdr["magic"] == b"ni1\x00":
        raise UnsupportedDatatypeError("magic", "detached .hdr/.img pairs are not supported")

    dtype = np.dtype(_DTYPES[hdr["datatype"]]).newbyteorder(hdr["order"])
    nx, ny, nz = hdr["shape"]
    count = nx * ny * nz
    offset = max(hdr["vox_offset"], HEADER_SIZE)
    payload = raw[offset : offset + count * dtype.itemsize]
    if len(payload) < count * dtype.itemsize:
        raise DimensionMismatchError("vox_offset/dim", count * dtype.itemsize, len(payload))

    # NIfTI stores the first index fastest.
    data = np.frombuffer(payload, dtype=dtype).reshape((nx, ny, nz), order="F")
    data = data.astype(np.float32)

    slope, inter = hdr["scl_slope"], hdr["scl_inter"]
    if slope != 0.0 and (slope != 1.0 or inter != 0.0):
        data = data * np.float32(slope) + np.float32(inter)

    data, spacing = _reorient(data, _rotation_matrix(hdr), path)
    return np.ascontiguousarray(data, dtype=np.float32), spacing
