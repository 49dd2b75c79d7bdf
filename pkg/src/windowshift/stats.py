"""Dataset foreground intensity statistics and window derivation.

A ForegroundStats accumulates, volume by volume, a fixed 1-HU-bin histogram
of foreground voxels, exact running moments, and exact per-volume per-class
medians. From it the base viewing window (0.5/99.5 percentiles of the
foreground distribution) and the window-shift level bounds (0.5/99.5
percentiles of the pooled per-volume medians) are derived.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BinningMismatchError,
    DegenerateWindowError,
    EmptyStatsError,
    MissingClassError,
    SchemaError,
)
from .volume_io import HuVolume, SegmentationMask, check_aligned

# Histogram bins are centered on integer HU values, 1 HU wide.
HIST_LO = -1024
HIST_HI = 3071
N_BINS = HIST_HI - HIST_LO + 1

DEFAULT_FOREGROUND_LABELS = frozenset({1, 2})

STATS_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ViewingWindow:
    """Clipping range for HU preprocessing: center level L and width W."""

    level: float
    width: float
    # Exact bounds recorded when built via from_bounds, so deriving a window
    # from percentiles and reading its bounds back is lossless.
    bounds: tuple[float, float] | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not self.width > 0:
            raise DegenerateWindowError(f"window width must be positive, got {self.width}")

    @classmethod
    def from_bounds(cls, lower: float, upper: float) -> "ViewingWindow":
        if not lower < upper:
            raise DegenerateWindowError(f"window bounds must satisfy lower < upper, got [{lower}, {upper}]")
        return cls(level=(lower + upper) / 2.0, width=upper - lower, bounds=(float(lower), float(upper)))

    @property
    def lower(self) -> float:
        return self.bounds[0] if self.bounds is not None else self.level - self.width / 2.0

    @property
    def upper(self) -> float:
        return self.bounds[1] if self.bounds is not None else self.level + self.width / 2.0

    def shifted_to(self, level: float) -> "ViewingWindow":
        """Same width, new center level."""
        return ViewingWindow(level=float(level), width=self.width)


@dataclass(frozen=True)
class WindowShiftPolicy:
    """Uniform window-level sampling range and its gate probability."""

    level_low: float
    level_high: float
    probability: float

    def __post_init__(self):
        if not self.level_low <= self.level_high:
            raise ValueError(f"require level_low <= level_high, got [{self.level_low}, {self.level_high}]")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"probability must be in [0, 1], got {self.probability}")


class ForegroundStats:
    """Mergeable single-pass summary of foreground HU intensities."""

    def __init__(self, hist_lo: int = HIST_LO, hist_hi: int = HIST_HI):
        self.hist_lo = int(hist_lo)
        self.hist_hi = int(hist_hi)
        self.n_bins = self.hist_hi - self.hist_lo + 1
        self.histogram = np.zeros(self.n_bins, dtype=np.int64)
        self.n_foreground = 0
        self._mean = 0.0
        self._m2 = 0.0
        # (source_id, class_label) -> exact median HU of that volume's class voxels
        self.per_volume_medians: dict[tuple[str, int], float] = {}
        self.percentile_cache: dict[float, float] = {}

    # -- properties ---------------------------------------------------------

    @property
    def global_mean(self) -> float:
        if self.n_foreground == 0:
            raise EmptyStatsError("no foreground voxels accumulated")
        return self._mean

    @property
    def global_std(self) -> float:
        if self.n_foreground == 0:
            raise EmptyStatsError("no foreground voxels accumulated")
        return float(np.sqrt(self._m2 / self.n_foreground))

    def binning(self) -> tuple[int, int]:
        return (self.hist_lo, self.hist_hi)

    # -- accumulation -------------------------------------------------------

    def accumulate(self, vol: HuVolume, mask: SegmentationMask, foreground_labels=DEFAULT_FOREGROUND_LABELS):
        """Fold one volume's foreground voxels into the summary.

        Values are binned to the nearest integer HU (clamped to the histogram
        range); moments use the raw values. Returns self.
        """
        check_aligned(vol, mask)
        labels = sorted(int(l) for l in foreground_labels)
        selector = np.isin(mask.labels, labels)
        values = vol.voxels[selector]
        if values.size == 0:
            warnings.warn(f"{vol.source_id}: no foreground voxels; volume recorded without medians")
            return self

        idx = np.clip(np.rint(values), self.hist_lo, self.hist_hi).astype(np.int64) - self.hist_lo
        self.histogram += np.bincount(idx, minlength=self.n_bins)

        n_b = int(values.size)
        mean_b = float(values.mean(dtype=np.float64))
        m2_b = float(np.sum((values.astype(np.float64) - mean_b) ** 2))
        self._merge_moments(n_b, mean_b, m2_b)
        self.n_foreground += n_b

        for label in labels:
            class_values = vol.voxels[mask.labels == label]
            if class_values.size == 0:
                continue
            key = (vol.source_id, label)
            if key in self.per_volume_medians:
                raise ValueError(f"duplicate per-volume median entry for {key}")
            self.per_volume_medians[key] = float(np.median(class_values))

        self.percentile_cache.clear()
        return self

    def _merge_moments(self, n_b: int, mean_b: float, m2_b: float) -> None:
        n_a = self.n_foreground
        if n_a == 0:
            self._mean, self._m2 = mean_b, m2_b
            return
        n = n_a + n_b
        delta = mean_b - self._mean
        self._mean += delta * n_b / n
        self._m2 += m2_b + delta * delta * n_a * n_b / n

    def merge(self, other: "ForegroundStats") -> "ForegroundStats":
        """Combine two summaries; equivalent to sequential accumulation."""
        if self.binning() != other.binning():
            raise BinningMismatchError(f"histogram binning differs: {self.binning()} vs {other.binning()}")
        dup = set(self.per_volume_medians) & set(other.per_volume_medians)
        if dup:
            raise ValueError(f"duplicate per-volume median entries in merge: {sorted(dup)}")
        out = ForegroundStats(self.hist_lo, self.hist_hi)
        out.histogram = self.histogram + other.histogram
        out.n_foreground = self.n_foreground
        out._mean, out._m2 = self._mean, self._m2
        out._merge_moments(other.n_foreground, other._mean, other._m2)
        out.n_foreground += other.n_foreground
        out.per_volume_medians = {**self.per_volume_medians, **other.per_volume_medians}
        return out

    # -- quantiles ----------------------------------------------------------

    def percentile(self, q: float) -> float:
        """q-quantile of the accumulated foreground distribution.

        Histogram mass sits at integer HU bin values; fractional order
        statistics interpolate linearly between them, so the result is
        within one bin width of the exact sample quantile.
        """
        if not 0.0 <= q <= 1.0:
            raise ValueError(f"quantile fraction must be in [0, 1], got {q}")
        if self.n_foreground == 0:
            raise EmptyStatsError("cannot take a percentile of empty stats")
        q = float(q)
        cached = self.percentile_cache.get(q)
        if cached is not None:
            return cached

        cum = np.cumsum(self.histogram)
        h = q * (self.n_foreground - 1)
        j0 = int(np.floor(h))
        j1 = min(j0 + 1, self.n_foreground - 1)
        v0 = self.hist_lo + int(np.searchsorted(cum, j0, side="right"))
        v1 = self.hist_lo + int(np.searchsorted(cum, j1, side="right"))
        value = float(v0 + (h - j0) * (v1 - v0))
        self.percentile_cache[q] = value
        return value


# ---------------------------------------------------------------------------
# Module-level operation surface
# ---------------------------------------------------------------------------

def accumulate(stats, vol, mask, foreground_labels=DEFAULT_FOREGROUND_LABELS) -> ForegroundStats:
    return stats.accumulate(vol, mask, foreground_labels)


def merge(a: ForegroundStats, b: ForegroundStats) -> ForegroundStats:
    return a.merge(b)


def percentile(stats: ForegroundStats, q: float) -> float:
    return stats.percentile(q)


def derive_base_window(stats: ForegroundStats) -> ViewingWindow:
    """Base window covering the 0.5..99.5 percentile span of the foreground."""
    lower = stats.percentile(0.005)
    upper = stats.percentile(0.995)
    if not lower < upper:
        raise DegenerateWindowError(
            f"0.5/99.5 percentiles give an empty window ([{lower}, {upper}]); distribution is degenerate"
        )
    return ViewingWindow.from_bounds(lower, upper)


def derive_shift_bounds(stats: ForegroundStats, classes=DEFAULT_FOREGROUND_LABELS, p: float = 0.3) -> WindowShiftPolicy:
    """Level-sampling bounds: 0.5/99.5 percentiles of pooled per-volume medians."""
    classes = sorted(int(c) for c in classes)
    pooled = []
    for label in classes:
        values = [m for (sid, cls), m in stats.per_volume_medians.items() if cls == label]
        if not values:
            raise MissingClassError(f"no per-volume medians recorded for class {label}")
        pooled.extend(values)
    if len(pooled) < 2:
        raise EmptyStatsError(f"need at least 2 per-volume medians, have {len(pooled)}")
    low, high = np.quantile(np.asarray(pooled, dtype=np.float64), [0.005, 0.995])
    return WindowShiftPolicy(level_low=float(low), level_high=float(high), probability=float(p))


def normalization_params(stats: ForegroundStats, window: ViewingWindow) -> tuple[float, float]:
    """Mean/std of the foreground after clipping to `window` and rescaling to [0, 1].

    Computed from the histogram (bin values clipped and rescaled, weighted by
    counts), which matches a per-voxel computation to within the bin width.
    """
    if stats.n_foreground == 0:
        raise EmptyStatsError("no foreground voxels accumulated")
    values = np.arange(stats.hist_lo, stats.hist_hi + 1, dtype=np.float64)
    scaled = (np.clip(values, window.lower, window.upper) - window.lower) / window.width
    weights = stats.histogram.astype(np.float64)
    n = float(stats.n_foreground)
    mean = float(np.dot(weights, scaled) / n)
    var = float(np.dot(weights, (scaled - mean) ** 2) / n)
    std = float(np.sqrt(var))
    if std == 0.0:
        raise DegenerateWindowError("foreground is constant after clipping; z-score std would be 0")
    return mean, std


# ---------------------------------------------------------------------------
# Serialization (stats.json)
# ---------------------------------------------------------------------------

def stats_document(
    stats: ForegroundStats,
    base_window: ViewingWindow | None = None,
    shift_policy: WindowShiftPolicy | None = None,
    normalization: tuple[float, float] | None = None,
    foreground_labels=DEFAULT_FOREGROUND_LABELS,
    shift_classes=DEFAULT_FOREGROUND_LABELS,
) -> dict:
    doc = {
        "schema_version": STATS_SCHEMA_VERSION,
        "histogram": {
            "lo": stats.hist_lo,
            "hi": stats.hist_hi,
            "bin_width": 1,
            "counts": stats.histogram.tolist(),
        },
        "n_foreground": stats.n_foreground,
        "global_mean": stats.global_mean if stats.n_foreground else None,
        "global_std": stats.global_std if stats.n_foreground else None,
        "per_volume_medians": [
            {"source_id": sid, "class_label": cls, "median_hu": median}
            for (sid, cls), median in stats.per_volume_medians.items()
        ],
        "percentiles": {str(q): v for q, v in sorted(stats.percentile_cache.items())},
        "foreground_labels": sorted(int(l) for l in foreground_labels),
        "shift_classes": sorted(int(c) for c in shift_classes),
    }
    if base_window is not None:
        doc["base_window"] = {"level": base_window.level, "width": base_window.width}
    if shift_policy is not None:
        doc["shift_bounds"] = {
            "level_low": shift_policy.level_low,
            "level_high": shift_policy.level_high,
            "probability": shift_policy.probability,
        }
    if normalization is not None:
        doc["normalization"] = {"mean": normalization[0], "std": normalization[1]}
    return doc


def save_stats(path, stats: ForegroundStats, **kwargs) -> dict:
    doc = stats_document(stats, **kwargs)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return doc


def _require(doc: dict, key: str, parent: str = ""):
    if key not in doc:
        raise SchemaError(f"{parent}{key}", "missing")
    return doc[key]


def load_stats_document(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise SchemaError("(document)", f"not valid JSON: {exc}") from exc
    version = _require(doc, "schema_version")
    if version != STATS_SCHEMA_VERSION:
        raise SchemaError("schema_version", f"expected {STATS_SCHEMA_VERSION}, got {version}")
    hist = _require(doc, "histogram")
    for key in ("lo", "hi", "counts"):
        _require(hist, key, "histogram.")
    _require(doc, "n_foreground")
    return doc


def stats_from_document(doc: dict) -> ForegroundStats:
    hist = doc["histogram"]
    stats = ForegroundStats(hist["lo"], hist["hi"])
    counts = np.asarray(hist["counts"], dtype=np.int64)
    if counts.shape != (stats.n_bins,):
        raise SchemaError("histogram.counts", f"expected {stats.n_bins} bins, got {counts.shape}")
    stats.histogram = counts
    stats.n_foreground = int(doc["n_foreground"])
    if stats.n_foreground:
        stats._mean = float(_require(doc, "global_mean"))
        std = float(_require(doc, "global_std"))
        stats._m2 = std * std * stats.n_foreground
    for entry in doc.get("per_volume_medians", []):
        key = (entry["source_id"], int(entry["class_label"]))
        stats.per_volume_medians[key] = float(entry["median_hu"])
    for q, v in doc.get("percentiles", {}).items():
        stats.percentile_cache[float(q)] = float(v)
    return stats


def window_from_document(doc: dict) -> ViewingWindow:
    window = _require(doc, "base_window")
    return ViewingWindow(level=float(_require(window, "level", "base_window.")),
                         width=float(_require(window, "width", "base_window.")))


def shift_policy_from_document(doc: dict, probability: float | None = None) -> WindowShiftPolicy:
    bounds = _require(doc, "shift_bounds")
    return WindowShiftPolicy(
        level_low=float(_require(bounds, "level_low", "shift_bounds.")),
        level_high=float(_require(bounds, "level_high", "shift_bounds.")),
        probability=float(bounds.get("probability", 0.3)) if probability is None else float(probability),
    )


def normalization_from_document(doc: dict) -> tuple[float, float]:
    norm = _require(doc, "normalization")
    return float(_require(norm, "mean", "normalization.")), float(_require(norm, "std", "normalization."))
