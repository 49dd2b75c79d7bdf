"""Synthetic contrast-enhanced abdominal CT phantoms with known statistics.

A phantom is an ellipsoidal liver containing a spherical tumor, embedded in
a uniform background, with optional seeded Gaussian noise. Class means are
known exactly in the noise-free construction, which makes phantom cohorts
the ground truth for the statistics, windowing, and metrics code.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import rng as rngmod
from .errors import GeometryError
from .volume_io import HuVolume, SegmentationMask, write_mask, write_volume

# Liver ellipsoid semi-axes as fractions of the half-dimensions.
_LIVER_AXES_FRAC = (0.72, 0.62, 0.80)


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple[int, int, int] = (48, 48, 24)
    background_hu: float = -80.0
    liver_hu: float = 90.0
    tumor_hu: float = 50.0
    contrast_boost: float = 0.0  # portal-venous style uptake added to liver
    noise_std: float = 0.0
    tumor_radius: float = 5.0
    seed: int = 0
    source_id: str = "phantom"

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.tumor_radius <= 0:
            raise ValueError(f"tumor_radius must be positive, got {self.tumor_radius}")


@dataclass(frozen=True)
class PhantomTruth:
    """Exact noise-free class statistics of a generated phantom."""

    mean_liver_hu: float
    mean_tumor_hu: float
    abs_diff_hu: float
    n_liver: int
    n_tumor: int
    contrast_boost: float


def _geometry(spec: PhantomSpec):
    nx, ny, nz = spec.dims
    cx, cy, cz = (nx - 1) / 2.0, (ny - 1) / 2.0, (nz - 1) / 2.0
    axes = (
        _LIVER_AXES_FRAC[0] * nx / 2.0,
        _LIVER_AXES_FRAC[1] * ny / 2.0,
        _LIVER_AXES_FRAC[2] * nz / 2.0,
    )
    if spec.tumor_radius >= min(axes):
        raise GeometryError(
            f"tumor radius {spec.tumor_radius} does not fit inside liver semi-axes {np.round(axes, 2)}"
        )
    x = np.arange(nx)[:, None, None]
    y = np.arange(ny)[None, :, None]
    z = np.arange(nz)[None, None, :]
    ellipsoid = (
        ((x - cx) / axes[0]) ** 2 + ((y - cy) / axes[1]) ** 2 + ((z - cz) / axes[2]) ** 2
    ) <= 1.0
    sphere = ((x - cx) ** 2 + (y - cy) ** 2 + (z - cz) ** 2) <= spec.tumor_radius**2
    labels = np.zeros(spec.dims, dtype=np.uint8)
    labels[ellipsoid] = 1
    labels[sphere] = 2
    if not np.any(labels == 1) or not np.any(labels == 2):
        raise GeometryError(f"dims {spec.dims} too small to hold liver and tumor voxels")
    return labels


def generate(spec: PhantomSpec):
    """Build one phantom. Returns (HuVolume, SegmentationMask, PhantomTruth)."""
    labels = _geometry(spec)
    liver_value = spec.liver_hu + spec.contrast_boost
    voxels = np.full(spec.dims, spec.background_hu, dtype=np.float64)
    voxels[labels == 1] = liver_value
    voxels[labels == 2] = spec.tumor_hu
    if spec.noise_std > 0:
        gen = rngmod.stream(spec.seed, "phantom-noise", spec.source_id)
        voxels = voxels + gen.standard_normal(spec.dims) * spec.noise_std

    vol = HuVolume(dims=spec.dims, spacing=(1.0, 1.0, 1.0),
                   voxels=voxels.astype(np.float32), source_id=spec.source_id)
    mask = SegmentationMask(dims=spec.dims, labels=labels)
    truth = PhantomTruth(
        mean_liver_hu=float(liver_value),
        mean_tumor_hu=float(spec.tumor_hu),
        abs_diff_hu=abs(float(liver_value) - float(spec.tumor_hu)),
        n_liver=int(np.count_nonzero(labels == 1)),
        n_tumor=int(np.count_nonzero(labels == 2)),
        contrast_boost=float(spec.contrast_boost),
    )
    return vol, mask, truth


def sample_boost(distribution, gen: np.random.Generator) -> float:
    """Draw one contrast boost: ("constant", v), ("uniform", lo, hi), or a callable."""
    if callable(distribution):
        return float(distribution(gen))
    kind = distribution[0]
    if kind == "constant":
        return float(distribution[1])
    if kind == "uniform":
        lo, hi = distribution[1], distribution[2]
        return float(lo + gen.random() * (hi - lo))
    raise ValueError(f"unknown boost distribution {distribution!r}")


def generate_cohort(n: int, boost_distribution, seed: int, base_spec: PhantomSpec | None = None):
    """Generate n phantoms whose liver boosts follow the given distribution.

    Each phantom gets its own derived seed and source_id, so the cohort is
    reproducible and order-independent.
    """
    if n < 1:
        raise ValueError(f"cohort size must be >= 1, got {n}")
    base = base_spec or PhantomSpec()
    cohort = []
    for i in range(n):
        gen = rngmod.stream(seed, "cohort-boost", i)
        boost = sample_boost(boost_distribution, gen)
        spec = replace(
            base,
            contrast_boost=boost,
            seed=rngmod.derive_seed(seed, "cohort-phantom", i),
            source_id=f"phantom-{i:03d}",
        )
        cohort.append(generate(spec))
    return cohort


def write_cohort(cohort, out_dir) -> dict:
    """Write a cohort as sidecar files: images/, masks/, and a manifest."""
    out_dir = Path(out_dir)
    images = out_dir / "images"
    masks = out_dir / "masks"
    images.mkdir(parents=True, exist_ok=True)
    masks.mkdir(parents=True, exist_ok=True)
    entries = []
    for vol, mask, truth in cohort:
        name = f"{vol.source_id}.hvol"
        write_volume(vol, images / name)
        write_mask(mask, masks / name, spacing=vol.spacing)
        entries.append({
            "source_id": vol.source_id,
            "file": name,
            "mean_liver_hu": truth.mean_liver_hu,
            "mean_tumor_hu": truth.mean_tumor_hu,
            "abs_diff_hu": truth.abs_diff_hu,
            "contrast_boost": truth.contrast_boost,
        })
    manifest = {"schema_version": 1, "phantoms": entries}
    (out_dir / "cohort.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
