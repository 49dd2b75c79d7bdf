"""Calibrated CT volumes, aligned label masks, and their file formats.

Reads NIfTI-1 images (rescaled to HU via the header slope/intercept) and a
raw sidecar format, writes the sidecar losslessly, and exports axial slices
as NPY files with a JSON manifest. All voxel data is float32 HU internally.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nifti
from .errors import (
    CalibrationError,
    DimensionMismatchError,
    MalformedHeaderError,
    UnsupportedDatatypeError,
    VolumeIOError,
)
from .npyio import write_npy

DEFAULT_CLASS_NAMES = {1: "liver", 2: "tumor"}

# Raw sidecar container: fixed 64-byte header, then the voxel payload.
SIDECAR_MAGIC = b"HUVOLUME"
SIDECAR_VERSION = 1
_SIDECAR_FMT = "<8sI3I3dI12x"  # magic, version, dims, spacing, dtype code
_SIDECAR_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}
assert struct.calcsize(_SIDECAR_FMT) == 64


@dataclass(frozen=True)
class AttenuationCalibration:
    """Linear attenuation coefficients (1/cm) anchoring the HU scale."""

    mu_water: float
    mu_air: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.mu_water) and np.isfinite(self.mu_air)):
            raise CalibrationError("calibration coefficients must be finite")
        if not self.mu_water > self.mu_air >= 0:
            raise CalibrationError(
                f"require mu_water > mu_air >= 0, got mu_water={self.mu_water}, mu_air={self.mu_air}"
            )


def hu_from_attenuation(mu, cal: AttenuationCalibration):
    """Convert linear attenuation (1/cm) to Hounsfield units.

    HU = 1000 * (mu - mu_water) / (mu_water - mu_air), so water maps to 0
    and air maps to -1000. Accepts scalars or arrays and is exactly linear.
    """
    mu = np.asarray(mu, dtype=float)
    if not np.all(np.isfinite(mu)):
        raise CalibrationError("attenuation values must be finite")
    # Divide before scaling so mu == mu_air lands on exactly -1000.
    out = 1000.0 * ((mu - cal.mu_water) / (cal.mu_water - cal.mu_air))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class HuVolume:
    """3D grid of calibrated HU voxels with spatial metadata.

    Immutable after construction; the voxel array is stored float32,
    C-contiguous, and marked read-only.
    """

    dims: tuple[int, int, int]
    spacing: tuple[float, float, float]
    voxels: np.ndarray
    source_id: str = ""

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or any(n < 1 for n in dims):
            raise ValueError(f"dims must be three counts >= 1, got {self.dims}")
        if len(spacing) != 3 or any(not (s > 0) for s in spacing):
            raise ValueError(f"spacing must be three positive lengths, got {self.spacing}")
        voxels = np.ascontiguousarray(self.voxels, dtype=np.float32)
        if voxels.shape != dims:
            raise ValueError(f"voxel array shape {voxels.shape} does not match dims {dims}")
        if not np.all(np.isfinite(voxels)):
            raise ValueError("voxels must be finite (no NaN/Inf after calibration)")
        voxels.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "voxels", voxels)

    @property
    def n_voxels(self) -> int:
        return self.dims[0] * self.dims[1] * self.dims[2]

    def axial_slice(self, index: int) -> np.ndarray:
        return self.voxels[:, :, index]


@dataclass(frozen=True)
class SegmentationMask:
    """Integer label volume aligned to a HuVolume (0 = background)."""

    dims: tuple[int, int, int]
    labels: np.ndarray
    class_names: dict[int, str] = field(default_factory=lambda: dict(DEFAULT_CLASS_NAMES))

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        labels = np.ascontiguousarray(self.labels)
        if labels.dtype.kind not in "iu":
            raise ValueError(f"labels must be integers, got dtype {labels.dtype}")
        if labels.dtype != np.uint8:
            if labels.size and (labels.min() < 0 or labels.max() > 255):
                raise ValueError("labels must be small non-negative integers (fit in uint8)")
            labels = labels.astype(np.uint8)
        if labels.shape != dims:
            raise ValueError(f"label array shape {labels.shape} does not match dims {dims}")
        present = set(np.unique(labels).tolist()) - {0}
        unknown = present - set(self.class_names)
        if unknown:
            raise ValueError(f"labels {sorted(unknown)} missing from class_names {self.class_names}")
        labels.flags.writeable = False
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "class_names", dict(self.class_names))

    def label_for(self, name: str, default: int) -> int:
        for value, class_name in self.class_names.items():
            if class_name == name:
                return value
        return default

    def axial_slice(self, index: int) -> np.ndarray:
        return self.labels[:, :, index]


def check_aligned(vol: HuVolume, mask: SegmentationMask) -> None:
    if mask.dims != vol.dims:
        raise DimensionMismatchError("mask dims", vol.dims, mask.dims)


# ---------------------------------------------------------------------------
# Raw sidecar format
# ---------------------------------------------------------------------------

def _write_sidecar(path, array: np.ndarray, spacing, dtype_code: int) -> None:
    dtype = _SIDECAR_DTYPES[dtype_code]
    header = struct.pack(
        _SIDECAR_FMT,
        SIDECAR_MAGIC,
        SIDECAR_VERSION,
        *array.shape,
        *(float(s) for s in spacing),
        dtype_code,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(array, dtype=dtype).tobytes(order="C"))


def _read_sidecar(path) -> tuple[np.ndarray, tuple, int]:
    with open(path, "rb") as fh:
        header = fh.read(64)
        if len(header) < 64:
            raise MalformedHeaderError("header", f"file shorter than 64 bytes: {path}")
        magic, version, nx, ny, nz, sx, sy, sz, dtype_code = struct.unpack(_SIDECAR_FMT, header)
        if magic != SIDECAR_MAGIC:
            raise MalformedHeaderError("magic", repr(magic))
        if version != SIDECAR_VERSION:
            raise MalformedHeaderError("version", str(version))
        if dtype_code not in _SIDECAR_DTYPES:
            raise UnsupportedDatatypeError("dtype_code", dtype_code)
        dtype = _SIDECAR_DTYPES[dtype_code]
        expected = nx * ny * nz * dtype.itemsize
        payload = fh.read(expected)
        if len(payload) != expected:
            raise DimensionMismatchError("payload bytes", expected, len(payload))
    data = np.frombuffer(payload, dtype=dtype).reshape((nx, ny, nz)).copy()
    return data, (sx, sy, sz), dtype_code


def write_volume(vol: HuVolume, path) -> None:
    """Write a volume in the raw sidecar format (lossless float32)."""
    _write_sidecar(path, vol.voxels, vol.spacing, dtype_code=0)


def write_mask(mask: SegmentationMask, path, spacing=(1.0, 1.0, 1.0)) -> None:
    """Write a label mask in the raw sidecar format (uint8 payload)."""
    _write_sidecar(path, mask.labels, spacing, dtype_code=1)


# ---------------------------------------------------------------------------
# Reading
# ---------------------------------------------------------------------------

def _strip_extensions(path: Path) -> str:
    name = path.name
    for ext in (".nii.gz", ".nii", ".hvol"):
        if name.endswith(ext):
            return name[: -len(ext)]
    return path.stem


def _is_nifti(path: Path) -> bool:
    return path.name.endswith(".nii") or path.name.endswith(".nii.gz")


def _read_image(path: Path) -> tuple[np.ndarray, tuple]:
    if _is_nifti(path):
        return nifti.read_nifti(path)
    data, spacing, dtype_code = _read_sidecar(path)
    if dtype_code != 0:
        raise UnsupportedDatatypeError("dtype_code", f"{dtype_code} (file holds labels, not an image)")
    return data, spacing


def _read_labels(path: Path) -> np.ndarray:
    if _is_nifti(path):
        data, _ = nifti.read_nifti(path)
        rounded = np.rint(data)
        if np.any(np.abs(data - rounded) > 1e-3) or rounded.min() < 0 or rounded.max() > 255:
            raise UnsupportedDatatypeError("labels", "mask voxels are not small non-negative integers")
        return rounded.astype(np.uint8)
    data, _, dtype_code = _read_sidecar(path)
    if dtype_code != 1:
        raise UnsupportedDatatypeError("dtype_code", f"{dtype_code} (file holds an image, not labels)")
    return data


def read_mask_labels(path) -> np.ndarray:
    """Read just the label array of a mask file (sidecar or NIfTI)."""
    return _read_labels(Path(path))


def read_volume(path, mask_path=None, class_names=None):
    """Read a volume and, when supplied, its aligned label mask.

    Accepts NIfTI-1 (.nii, .nii.gz) or the raw sidecar format. NIfTI voxels
    are rescaled to HU via scl_slope/scl_inter and reoriented to (x, y, z).

    Returns (HuVolume, SegmentationMask | None).
    """
    path = Path(path)
    data, spacing = _read_image(path)
    if not np.all(np.isfinite(data)):
        raise VolumeIOError(f"{path}: voxels are not finite after calibration")
    vol = HuVolume(dims=data.shape, spacing=spacing, voxels=data, source_id=_strip_extensions(path))

    mask = None
    if mask_path is not None:
        labels = _read_labels(Path(mask_path))
        if labels.shape != vol.dims:
            raise DimensionMismatchError("mask dims", vol.dims, labels.shape)
        mask = SegmentationMask(
            dims=labels.shape,
            labels=labels,
            class_names=class_names or DEFAULT_CLASS_NAMES,
        )
    return vol, mask


# ---------------------------------------------------------------------------
# Slice export
# ---------------------------------------------------------------------------

def export_slices(vol: HuVolume, mask: SegmentationMask | None, out_dir) -> dict:
    """Write each axial slice as an NPY file plus a JSON manifest.

    The manifest records, per slice, the index, whether liver/tumor labels
    are present (False when no mask is given), and the file names. Returns
    the manifest dict; it is also written to <source_id>_manifest.json.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if mask is not None:
        check_aligned(vol, mask)
        liver = mask.label_for("liver", 1)
        tumor = mask.label_for("tumor", 2)

    entries = []
    for k in range(vol.dims[2]):
        name = f"{vol.source_id}_z{k:04d}.npy"
        write_npy(out_dir / name, vol.axial_slice(k))
        entry = {"index": k, "liver_present": False, "tumor_present": False, "file": name}
        if mask is not None:
            mask_name = f"{vol.source_id}_z{k:04d}_mask.npy"
            labels = mask.axial_slice(k)
            write_npy(out_dir / mask_name, labels)
            entry["mask_file"] = mask_name
            entry["liver_present"] = bool(np.any(labels == liver))
            entry["tumor_present"] = bool(np.any(labels == tumor))
        entries.append(entry)

    manifest = {"schema_version": 1, "source_id": vol.source_id, "slices": entries}
    manifest_path = out_dir / f"{vol.source_id}_manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
