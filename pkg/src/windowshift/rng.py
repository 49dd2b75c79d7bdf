"""Deterministic counter-based random streams.

Every stochastic operation in the toolkit draws from a numpy Generator
backed by the Philox counter-based bit generator. Streams are derived by
hashing the identifying coordinates of the work item, so results do not
depend on processing order and are reproducible across runs and platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np


def _philox_key(*parts) -> int:
    """Hash arbitrary coordinates into a 128-bit Philox key."""
    text = "\x1f".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:16], "little")


def stream(seed: int, *coords) -> np.random.Generator:
    """Generator for an arbitrary (seed, coordinates...) tuple."""
    return np.random.Generator(np.random.Philox(key=_philox_key(seed, *coords)))


def slice_stream(seed: int, source_id: str, slice_index: int, epoch: int) -> np.random.Generator:
    """Per-slice augmentation stream.

    The stream depends only on (seed, source_id, slice_index, epoch), so a
    slice is augmented identically whether processed alone, in a batch, or
    in parallel.
    """
    return stream(seed, "slice", source_id, slice_index, epoch)


def derive_seed(seed: int, label: str, index: int = 0) -> int:
    """Derive a sub-seed for a named child task (fits in 64 bits)."""
    return _philox_key(seed, "derive", label, index) & 0xFFFFFFFFFFFFFFFF
