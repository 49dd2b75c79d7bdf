"""Viewing-window preprocessing: clip, rescale, normalize, and shift.

The training-time augmentation replaces the base window level, with a gate
probability, by a level drawn uniformly from [level_low, level_high]; the
window width never changes. Inference uses the base window alone, so a
policy with probability 0 reproduces the inference path bit-for-bit.

All pixel operations run in float32. Rescaling uses float32 window bounds
and a float32 span so the clipped range maps exactly onto [0, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StageContractError
from .stats import ViewingWindow, WindowShiftPolicy

STAGE_HU = "hu"
STAGE_CLIPPED = "clipped_hu"
STAGE_UNIT = "unit"
STAGE_ZSCORE = "zscore"


def _as_f32(pixels) -> np.ndarray:
    return np.asarray(pixels, dtype=np.float32)


def apply_window(pixels, window: ViewingWindow) -> np.ndarray:
    """Clamp HU pixels to [L - W/2, L + W/2]. Shape-preserving and total."""
    pixels = _as_f32(pixels)
    return np.clip(pixels, np.float32(window.lower), np.float32(window.upper))


def rescale_unit(pixels, window: ViewingWindow) -> np.ndarray:
    """Map clipped HU onto [0, 1]: lower bound to 0, upper bound to 1."""
    pixels = _as_f32(pixels)
    lo = np.float32(window.lower)
    span = np.float32(window.upper) - lo
    if __debug__ and pixels.size:
        if pixels.min() < lo or pixels.max() > np.float32(window.upper):
            raise StageContractError(
                f"rescale_unit expects pixels clipped to [{window.lower}, {window.upper}]"
            )
    return (pixels - lo) / span


def z_normalize(pixels, mean: float, std: float) -> np.ndarray:
    """Standardize unit-scaled pixels with the dataset foreground moments."""
    if not std > 0:
        raise ValueError(f"std must be positive, got {std}")
    pixels = _as_f32(pixels)
    return (pixels - np.float32(mean)) / np.float32(std)


def sample_window_level(policy: WindowShiftPolicy, base: ViewingWindow,
                        rng: np.random.Generator) -> ViewingWindow:
    """Sample the training window for one slice.

    Consumes exactly two draws (gate, level) whether or not the gate fires,
    so downstream draws stay aligned across probability settings. With
    probability p the returned window keeps the base width and takes a level
    uniform in [level_low, level_high]; otherwise the base window returns
    unchanged.
    """
    gate = rng.random()
    u = rng.random()
    if gate < policy.probability:
        level = policy.level_low + u * (policy.level_high - policy.level_low)
        return base.shifted_to(level)
    return base


def preprocess_inference(pixels, base: ViewingWindow, norm: tuple[float, float]) -> np.ndarray:
    """Inference-time preprocessing: clip to the base window, rescale, z-score."""
    mean, std = norm
    return z_normalize(rescale_unit(apply_window(pixels, base), base), mean, std)


@dataclass(frozen=True)
class PreprocessedSlice:
    """A 2D slice tagged with its preprocessing stage and the window applied."""

    pixels: np.ndarray
    stage: str
    window_used: ViewingWindow | None = None

    @classmethod
    def from_hu(cls, pixels) -> "PreprocessedSlice":
        return cls(pixels=_as_f32(pixels), stage=STAGE_HU)

    def clip(self, window: ViewingWindow) -> "PreprocessedSlice":
        if self.stage != STAGE_HU:
            raise StageContractError(f"clip expects stage {STAGE_HU!r}, got {self.stage!r}")
        return PreprocessedSlice(apply_window(self.pixels, window), STAGE_CLIPPED, window)

    def to_unit(self) -> "PreprocessedSlice":
        if self.stage != STAGE_CLIPPED or self.window_used is None:
            raise StageContractError(f"to_unit expects stage {STAGE_CLIPPED!r}, got {self.stage!r}")
        return PreprocessedSlice(rescale_unit(self.pixels, self.window_used), STAGE_UNIT, self.window_used)

    def z_score(self, mean: float, std: float) -> "PreprocessedSlice":
        if self.stage != STAGE_UNIT:
            raise StageContractError(f"z_score expects stage {STAGE_UNIT!r}, got {self.stage!r}")
        return PreprocessedSlice(z_normalize(self.pixels, mean, std), STAGE_ZSCORE, self.window_used)

    def check_invariants(self) -> None:
        """Raise unless the pixel range matches the declared stage."""
        if self.pixels.size == 0:
            return
        lo, hi = float(self.pixels.min()), float(self.pixels.max())
        if self.stage == STAGE_CLIPPED:
            w = self.window_used
            if w is None or lo < np.float32(w.lower) or hi > np.float32(w.upper):
                raise StageContractError(f"clipped pixels outside window: [{lo}, {hi}]")
        elif self.stage == STAGE_UNIT:
            if lo < 0.0 or hi > 1.0:
                raise StageContractError(f"unit-scaled pixels outside [0, 1]: [{lo}, {hi}]")
