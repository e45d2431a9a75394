"""Input validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def check_raster(img) -> np.ndarray:
    """Validate an 8-bit raster and return it as (h, w) or (h, w, 3) uint8.

    Accepts a 2-D grayscale array, a (h, w, 1) array (squeezed to 2-D),
    or a (h, w, 3) RGB array.
    """
    arr = np.asarray(img)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim not in (2, 3):
        raise ValueError(f"raster must be 2-D or 3-D, got shape {arr.shape}")
    if arr.ndim == 3 and arr.shape[2] != 3:
        raise ValueError(f"color raster must have 3 channels, got {arr.shape[2]}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"raster must be at least 1x1, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"raster samples must be 8-bit integers, got dtype {arr.dtype}")
        if arr.min() < 0 or arr.max() > 255:
            raise ValueError("raster samples must be in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def check_luma_plane(plane) -> np.ndarray:
    """Validate a real-valued luminance plane and return it as 2-D float64."""
    arr = np.asarray(plane, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"luma plane must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"luma plane must be at least 1x1, got shape {arr.shape}")
    return arr


def check_hash64(value) -> int:
    """Validate a 64-bit unsigned hash value and return it as a Python int."""
    h = int(value)
    if not 0 <= h <= 0xFFFFFFFFFFFFFFFF:
        raise ValueError(f"hash must fit in 64 bits, got {value!r}")
    return h


def check_feature_matrix(X, dim: int | None = None) -> np.ndarray:
    """Validate a feature matrix: 2-D, finite, float64. 1-D input becomes one row."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"feature matrix must be 2-D, got shape {arr.shape}")
    if dim is not None and arr.shape[1] != dim:
        raise ValueError(f"expected {dim} features, got {arr.shape[1]}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("feature matrix contains non-finite values")
    return arr


def check_labels(y, classes) -> list:
    """Validate that every label is a member of `classes`; returns y as a list."""
    allowed = set(classes)
    out = list(y)
    for label in out:
        if label not in allowed:
            raise ValueError(f"label {label!r} not in class list {list(classes)}")
    return out
