"""Segmentation overlap and liver/tumor contrast metrics.

Dice is 2TP / (2TP + FP + FN) over voxels. The contrast metric is the
absolute difference of mean raw HU between healthy-liver and tumor voxels;
volumes under the difficulty threshold (default 20 HU, strict) are flagged
as hard cases.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatchError, MissingClassError
from .volume_io import HuVolume, SegmentationMask

DIFFICULT_THRESHOLD_HU = 20.0


@dataclass(frozen=True)
class DiceReport:
    tp: int
    fp: int
    fn: int
    dice: float
    per_volume: tuple = ()

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn) < 0:
            raise ValueError("counts must be non-negative")


@dataclass(frozen=True)
class ContrastEntry:
    source_id: str
    mean_liver_hu: float
    mean_tumor_hu: float
    abs_diff_hu: float
    difficult: bool


@dataclass(frozen=True)
class ContrastReport:
    threshold_hu: float
    per_volume: tuple[ContrastEntry, ...] = ()
    skipped: tuple[str, ...] = ()

    def difficult_ids(self) -> list[str]:
        return [e.source_id for e in self.per_volume if e.difficult]


def _dice_value(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    if denom == 0:
        # Both masks empty: perfect agreement by convention.
        return 1.0
    return 2.0 * tp / denom


def dice(pred, truth) -> DiceReport:
    """Overlap between two binary masks of identical dims."""
    pred = np.asarray(pred) != 0
    truth = np.asarray(truth) != 0
    if pred.shape != truth.shape:
        raise DimensionMismatchError("mask dims", truth.shape, pred.shape)
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return DiceReport(tp=tp, fp=fp, fn=fn, dice=_dice_value(tp, fp, fn))


def evaluate_dice(pairs, aggregate: str = "mean_per_volume") -> DiceReport:
    """Dice over a dataset of (source_id, pred, truth) mask triples.

    aggregate="mean_per_volume" averages per-volume dice (each case weighted
    equally); "pooled" computes one dice from the summed counts.
    """
    if aggregate not in ("mean_per_volume", "pooled"):
        raise ValueError(f"unknown aggregate {aggregate!r}")
    per_volume = []
    tp = fp = fn = 0
    for source_id, pred, truth in pairs:
        report = dice(pred, truth)
        per_volume.append((source_id, report.dice))
        tp += report.tp
        fp += report.fp
        fn += report.fn
    if not per_volume:
        raise ValueError("no mask pairs to evaluate")
    if aggregate == "mean_per_volume":
        value = float(np.mean([d for _, d in per_volume]))
    else:
        value = _dice_value(tp, fp, fn)
    return DiceReport(tp=tp, fp=fp, fn=fn, dice=value, per_volume=tuple(per_volume))


def mean_hu_difference(vol: HuVolume, mask: SegmentationMask,
                       liver_label: int = 1, tumor_label: int = 2):
    """Mean raw HU of healthy liver and of tumor, and their absolute difference.

    Healthy liver means voxels labeled `liver_label` only; tumor voxels are
    not part of the liver mean.
    """
    if mask.dims != vol.dims:
        raise DimensionMismatchError("mask dims", vol.dims, mask.dims)
    liver = vol.voxels[mask.labels == liver_label]
    tumor = vol.voxels[mask.labels == tumor_label]
    if liver.size == 0:
        raise MissingClassError(f"{vol.source_id}: no voxels with liver label {liver_label}")
    if tumor.size == 0:
        raise MissingClassError(f"{vol.source_id}: no voxels with tumor label {tumor_label}")
    mean_liver = float(liver.mean(dtype=np.float64))
    mean_tumor = float(tumor.mean(dtype=np.float64))
    return mean_liver, mean_tumor, abs(mean_liver - mean_tumor)


def identify_difficult(dataset, threshold_hu: float = DIFFICULT_THRESHOLD_HU,
                       liver_label: int = 1, tumor_label: int = 2) -> ContrastReport:
    """Flag volumes whose liver/tumor mean-HU difference is below threshold.

    `dataset` yields (HuVolume, SegmentationMask) pairs. Volumes missing a
    class are skipped with a warning. Entries are sorted hardest first
    (ascending difference).
    """
    entries = []
    skipped = []
    for vol, mask in dataset:
        try:
            mean_liver, mean_tumor, diff = mean_hu_difference(vol, mask, liver_label, tumor_label)
        except MissingClassError as exc:
            warnings.warn(f"not evaluable, excluded from contrast report: {exc}")
            skipped.append(vol.source_id)
            continue
        entries.append(ContrastEntry(
            source_id=vol.source_id,
            mean_liver_hu=mean_liver,
            mean_tumor_hu=mean_tumor,
            abs_diff_hu=diff,
            difficult=diff < threshold_hu,
        ))
    entries.sort(key=lambda e: (e.abs_diff_hu, e.source_id))
    return ContrastReport(threshold_hu=float(threshold_hu), per_volume=tuple(entries),
                          skipped=tuple(skipped))


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------

def save_dice_report(path, report: DiceReport) -> None:
    doc = {
        "schema_version": 1,
        "tp": report.tp,
        "fp": report.fp,
        "fn": report.fn,
        "dice": report.dice,
        "per_volume": [{"source_id": sid, "dice": d} for sid, d in report.per_volume],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def save_contrast_report(path, report: ContrastReport) -> None:
    doc = {
        "schema_version": 1,
        "threshold_hu": report.threshold_hu,
        "skipped": list(report.skipped),
        "per_volume": [
            {
                "source_id": e.source_id,
                "mean_liver_hu": e.mean_liver_hu,
                "mean_tumor_hu": e.mean_tumor_hu,
                "abs_diff_hu": e.abs_diff_hu,
                "difficult": e.difficult,
            }
            for e in report.per_volume
        ],
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def write_dice_csv(path, report: DiceReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_id", "dice"])
        for sid, d in report.per_volume:
            writer.writerow([sid, repr(d)])


def write_contrast_csv(path, report: ContrastReport) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_id", "mean_liver_hu", "mean_tumor_hu", "abs_diff_hu", "difficult"])
        for e in report.per_volume:
            writer.writerow([e.source_id, repr(e.mean_liver_hu), repr(e.mean_tumor_hu),
                             repr(e.abs_diff_hu), int(e.difficult)])
