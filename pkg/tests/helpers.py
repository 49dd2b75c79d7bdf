"""Shared test fixtures: tiny volumes and a from-scratch NIfTI-1 builder.

The NIfTI builder below writes headers with struct directly and shares no
code with the parser under test, so round-trip tests are a genuine check.
"""

from __future__ import annotations

import gzip
import struct

import numpy as np

from windowshift.volume_io import HuVolume, SegmentationMask

_NIFTI_DTYPE_CODES = {
    np.dtype(np.uint8): (2, 8),
    np.dtype(np.int16): (4, 16),
    np.dtype(np.int32): (8, 32),
    np.dtype(np.float32): (16, 32),
    np.dtype(np.float64): (64, 64),
}


def build_nifti(
    data: np.ndarray,
    scl_slope: float = 0.0,
    scl_inter: float = 0.0,
    pixdim: tuple = (1.0, 1.0, 1.0),
    srow: np.ndarray | None = None,
    byte_order: str = "<",
    magic: bytes = b"n+1\x00",
    sizeof_hdr: int = 348,
    datatype: int | None = None,
    gzipped: bool = False,
) -> bytes:
    """Serialize a 3D array as a single-file NIfTI-1 blob."""
    data = np.asarray(data)
    code, bitpix = _NIFTI_DTYPE_CODES[data.dtype]
    if datatype is not None:
        code = datatype

    hdr = bytearray(348)
    struct.pack_into(byte_order + "i", hdr, 0, sizeof_hdr)
    dim = (3, *data.shape, 1, 1, 1, 1)
    struct.pack_into(byte_order + "8h", hdr, 40, *dim)
    struct.pack_into(byte_order + "h", hdr, 70, code)
    struct.pack_into(byte_order + "h", hdr, 72, bitpix)
    pd = (1.0, *pixdim, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into(byte_order + "8f", hdr, 76, *pd)
    struct.pack_into(byte_order + "f", hdr, 108, 352.0)  # vox_offset
    struct.pack_into(byte_order + "2f", hdr, 112, scl_slope, scl_inter)
    if srow is not None:
        struct.pack_into(byte_order + "2h", hdr, 252, 0, 1)  # qform=0, sform=1
        struct.pack_into(byte_order + "12f", hdr, 280, *np.asarray(srow, dtype=float).ravel())
    struct.pack_into("4s", hdr, 344, magic)

    payload = np.asarray(data, dtype=data.dtype.newbyteorder(byte_order)).tobytes(order="F")
    blob = bytes(hdr) + b"\x00" * 4 + payload
    return gzip.compress(blob) if gzipped else blob


def make_volume(values, source_id="test", spacing=(1.0, 1.0, 1.0)) -> HuVolume:
    values = np.asarray(values, dtype=np.float32)
    return HuVolume(dims=values.shape, spacing=spacing, voxels=values, source_id=source_id)


def make_mask(labels) -> SegmentationMask:
    labels = np.asarray(labels, dtype=np.uint8)
    return SegmentationMask(dims=labels.shape, labels=labels)


def random_volume(rng: np.random.Generator, dims=(6, 5, 4), source_id="rand") -> HuVolume:
    voxels = rng.uniform(-1000, 1500, size=dims).astype(np.float32)
    return HuVolume(dims=dims, spacing=(0.8, 0.8, 1.5), voxels=voxels, source_id=source_id)


def volume_with_classes(liver_values, tumor_values, background=-100.0, source_id="vol"):
    """1D arrangement: [liver..., tumor..., one background voxel]."""
    liver_values = np.asarray(liver_values, dtype=np.float32)
    tumor_values = np.asarray(tumor_values, dtype=np.float32)
    n = liver_values.size + tumor_values.size + 1
    voxels = np.full((n, 1, 1), background, dtype=np.float32)
    labels = np.zeros((n, 1, 1), dtype=np.uint8)
    voxels[: liver_values.size, 0, 0] = liver_values
    labels[: liver_values.size, 0, 0] = 1
    voxels[liver_values.size : liver_values.size + tumor_values.size, 0, 0] = tumor_values
    labels[liver_values.size : liver_values.size + tumor_values.size, 0, 0] = 2
    vol = HuVolume(dims=(n, 1, 1), spacing=(1, 1, 1), voxels=voxels, source_id=source_id)
    mask = SegmentationMask(dims=(n, 1, 1), labels=labels)
    return vol, mask
