"""64-bit DCT perceptual hashes and Hamming distances.

The hash chain is luma -> 7x7 box blur -> 32x32 area resize -> orthonormal
2-D DCT. The 8x8 coefficient block at rows/cols 1..8 (DC row and column
excluded) is compared against its median: bit k of the hash (k = 8*r + c,
with bit 0 the least significant) is 1 iff coefficient (r+1, c+1) is
strictly greater than the median. Visually similar images land within a
small Hamming distance of each other; distinct content lands far apart.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .imagecore import box_blur7, dct2_32, resize_area, to_luma
from .validation import check_hash64, check_raster

__all__ = [
    "HASH_BITS",
    "phash",
    "hash_block",
    "hamming",
    "hash_to_hex",
    "hash_from_hex",
    "popcount64",
    "PerceptualHasher",
]

HASH_BITS = 64

_BIT_VALUES = np.uint64(1) << np.arange(64, dtype=np.uint64)


def hash_block(img) -> np.ndarray:
    """Return the 64 low-frequency DCT coefficients the hash bits come from.

    These are the pre-binarization values of block (1,1)..(8,8) of the
    32x32 DCT, flattened row-major.
    """
    plane = to_luma(check_raster(img))
    plane = box_blur7(plane)
    plane = resize_area(plane, 32, 32)
    coeffs = dct2_32(plane)
    return coeffs[1:9, 1:9].ravel()


def phash(img) -> int:
    """Compute the 64-bit perceptual hash of a raster.

    The median split uses the mean of the 32nd and 33rd order statistics,
    and the comparison is strict, so a constant image hashes to 0.
    """
    block = hash_block(img)
    median = float(np.median(block))
    bits = block > median
    return int(bits.astype(np.uint64) @ _BIT_VALUES)


def hamming(a: int, b: int) -> int:
    """Number of differing bits between two 64-bit hashes (0..64)."""
    return (check_hash64(a) ^ check_hash64(b)).bit_count()


def hash_to_hex(h: int) -> str:
    """Render a hash as 16 zero-padded lowercase hex digits."""
    return format(check_hash64(h), "016x")


def hash_from_hex(text: str) -> int:
    """Parse the 16-hex-digit text form back into a hash value."""
    s = text.strip()
    if len(s) != 16:
        raise ValueError(f"hash text must be 16 hex digits, got {text!r}")
    return check_hash64(int(s, 16))


def popcount64(values: np.ndarray) -> np.ndarray:
    """Per-element popcount of a uint64 array."""
    return np.bitwise_count(np.asarray(values, dtype=np.uint64))


class PerceptualHasher(TransformerMixin, BaseEstimator):
    """Stateless transformer turning rasters into uint64 perceptual hashes.

    Exists so hashing composes with estimator pipelines; `fit` is a no-op.
    """

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> np.ndarray:
        return np.array([phash(img) for img in X], dtype=np.uint64)
