"""NPY version-1.0 read/write helpers.

Slices are exchanged as plain NPY files: little-endian payload, C order,
format version pinned to 1.0 so files are byte-stable across runs.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import numpy.lib.format


def write_npy(path, array: np.ndarray) -> None:
    """Write an array as NPY 1.0, little-endian, C-order.

    Float arrays are stored as 4-byte floats; integer label arrays keep
    their integer dtype. Object arrays are rejected.
    """
    array = np.asarray(array)
    if array.dtype.kind == "f":
        array = np.ascontiguousarray(array, dtype="<f4")
    elif array.dtype.kind in "iub":
        array = np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<"))
    else:
        raise TypeError(f"refusing to write dtype {array.dtype}")
    with open(path, "wb") as fh:
        np.lib.format.write_array(fh, array, version=(1, 0), allow_pickle=False)


def read_npy(path) -> np.ndarray:
    return np.load(Path(path), allow_pickle=False)
