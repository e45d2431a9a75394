"""Deterministic raster transforms feeding the hashing and feature stages.

All operations are pure functions over numpy arrays: rasters are 8-bit
uint8 arrays of shape (h, w) or (h, w, 3); luminance planes are 2-D
float64 arrays whose values stay in [0, 255]. Nothing here re-quantizes
between stages, so a given raster always produces the same bits.
"""

from __future__ import annotations

import io
from functools import lru_cache
from pathlib import Path

import numpy as np

from .validation import check_luma_plane, check_raster

__all__ = [
    "DecodeError",
    "to_luma",
    "box_blur7",
    "resize_area",
    "dct2_32",
    "decode_netpbm",
    "encode_netpbm",
    "read_image",
    "decode_image",
    "write_netpbm",
]

# ITU-R BT.601 luma weights
_LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])

_BLUR_RADIUS = 3  # 7x7 window


class DecodeError(ValueError):
    """Raised when image bytes cannot be decoded."""


def to_luma(img) -> np.ndarray:
    """Convert a raster to a real-valued luminance plane (BT.601 weights).

    Single-channel input passes through unchanged (identity on luma).
    """
    arr = check_raster(img)
    if arr.ndim == 2:
        return arr.astype(np.float64)
    return arr.astype(np.float64) @ _LUMA_WEIGHTS


def box_blur7(plane) -> np.ndarray:
    """7x7 box blur with the window clamped to image bounds at edges.

    Each output sample is the mean of the in-bounds samples of its 7x7
    neighborhood, so borders average over fewer than 49 values instead of
    being darkened by zero padding.
    """
    p = check_luma_plane(plane)
    h, w = p.shape
    if p.min() == p.max():  # mean of constants is exact; skip float accumulation
        return np.full((h, w), p[0, 0])
    # prefix sums padded with a zero row/column: window sum = 4 lookups
    s = np.zeros((h + 1, w + 1))
    np.cumsum(np.cumsum(p, axis=0), axis=1, out=s[1:, 1:])
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.maximum(ys - _BLUR_RADIUS, 0)
    y1 = np.minimum(ys + _BLUR_RADIUS + 1, h)
    x0 = np.maximum(xs - _BLUR_RADIUS, 0)
    x1 = np.minimum(xs + _BLUR_RADIUS + 1, w)
    sums = s[np.ix_(y1, x1)] - s[np.ix_(y0, x1)] - s[np.ix_(y1, x0)] + s[np.ix_(y0, x0)]
    counts = np.outer(y1 - y0, x1 - x0)
    return sums / counts


@lru_cache(maxsize=256)
def _area_weights(n_in: int, n_out: int) -> np.ndarray:
    """Row-normalized area-overlap weights mapping n_in samples to n_out."""
    scale = n_in / n_out
    weights = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = i * scale
        hi = (i + 1) * scale
        j0 = int(np.floor(lo))
        j1 = min(int(np.ceil(hi)), n_in)
        for j in range(j0, j1):
            weights[i, j] = min(hi, j + 1) - max(lo, j)
        weights[i] /= scale
    return weights


def resize_area(plane, out_w: int, out_h: int) -> np.ndarray:
    """Exact area-average (pixel mixing) resample to out_w x out_h.

    Every output pixel is the area-weighted mean of the input pixels its
    back-projected rectangle overlaps, which is deterministic and
    alias-resistant for any size ratio, up or down.
    """
    p = check_luma_plane(plane)
    if out_w < 1 or out_h < 1:
        raise ValueError("output size must be at least 1x1")
    h, w = p.shape
    if p.min() == p.max():  # area average of a constant is exact
        return np.full((out_h, out_w), p[0, 0])
    row_w = _area_weights(h, out_h)
    col_w = _area_weights(w, out_w)
    return row_w @ p @ col_w.T


_DCT32_BASIS: np.ndarray | None = None


def _dct32_basis() -> np.ndarray:
    """Orthonormal 1-D DCT-II basis matrix for n=32 (cached)."""
    global _DCT32_BASIS
    if _DCT32_BASIS is None:
        n = 32
        u = np.arange(n)[:, None]
        x = np.arange(n)[None, :]
        basis = np.cos((2 * x + 1) * u * np.pi / (2 * n))
        basis[0, :] *= np.sqrt(1.0 / n)
        basis[1:, :] *= np.sqrt(2.0 / n)
        _DCT32_BASIS = basis
    return _DCT32_BASIS


def dct2_32(plane) -> np.ndarray:
    """Orthonormal 2-D DCT-II of a 32x32 plane, returned as 32x32 coefficients."""
    p = check_luma_plane(plane)
    if p.shape != (32, 32):
        raise ValueError(f"dct2_32 requires a 32x32 plane, got {p.shape}")
    d = _dct32_basis()
    # Evaluate shifted by the first sample and restore the DC term:
    # mathematically identical, but a constant plane yields exact zeros
    # off the DC coefficient instead of float residue (the hash relies
    # on that). The shift must be a stored sample, not the mean, so the
    # subtraction cancels exactly.
    shift = float(p[0, 0])
    coeffs = d @ (p - shift) @ d.T
    coeffs[0, 0] += 32.0 * shift
    return coeffs


# --------------------------------------------------------------------------
# netpbm (PGM P5 / PPM P6) binary codecs; maxval is pinned to 255 so decoding
# is bit-exact everywhere
# --------------------------------------------------------------------------

_WHITESPACE = b" \t\n\r\x0b\x0c"


def _next_token(data: bytes, pos: int) -> tuple[bytes, int]:
    n = len(data)
    while pos < n:
        c = data[pos]
        if c in _WHITESPACE:
            pos += 1
        elif c == 0x23:  # '#' comment runs to end of line
            nl = data.find(b"\n", pos)
            pos = n if nl < 0 else nl + 1
        else:
            break
    start = pos
    while pos < n and data[pos] not in _WHITESPACE and data[pos] != 0x23:
        pos += 1
    if start == pos:
        raise DecodeError(f"unexpected end of netpbm header at byte {start}")
    return data[start:pos], pos


def decode_netpbm(data: bytes) -> np.ndarray:
    """Decode binary PGM (P5) or PPM (P6) bytes into a uint8 raster."""
    if data[:2] == b"P5":
        channels = 1
    elif data[:2] == b"P6":
        channels = 3
    else:
        raise DecodeError(f"unsupported netpbm magic {data[:2]!r}")
    pos = 2
    fields = []
    for _ in range(3):
        token, pos = _next_token(data, pos)
        try:
            fields.append(int(token))
        except ValueError:
            raise DecodeError(f"non-numeric netpbm header field {token!r}") from None
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise DecodeError(f"invalid netpbm dimensions {width}x{height}")
    if maxval != 255:
        raise DecodeError(f"unsupported netpbm maxval {maxval} (only 255)")
    if pos >= len(data) or data[pos] not in _WHITESPACE:
        raise DecodeError(f"missing whitespace after maxval at byte {pos}")
    pos += 1
    expected = width * height * channels
    payload = data[pos : pos + expected]
    if len(payload) < expected:
        raise DecodeError(
            f"truncated netpbm payload: expected {expected} bytes, got {len(payload)}"
        )
    arr = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        return arr.reshape(height, width).copy()
    return arr.reshape(height, width, 3).copy()


def encode_netpbm(img) -> bytes:
    """Encode a raster as binary PGM (gray) or PPM (RGB) with maxval 255."""
    arr = check_raster(img)
    magic = b"P5" if arr.ndim == 2 else b"P6"
    h, w = arr.shape[:2]
    header = magic + b"\n%d %d\n255\n" % (w, h)
    return header + arr.tobytes()


def write_netpbm(path, img) -> None:
    Path(path).write_bytes(encode_netpbm(img))


def decode_image(data: bytes) -> np.ndarray:
    """Decode image bytes. netpbm is built in; PNG/JPEG go through Pillow."""
    if data[:2] in (b"P5", b"P6"):
        return decode_netpbm(data)
    try:
        from PIL import Image
    except ImportError:
        raise DecodeError(
            "only PGM/PPM are decoded natively; install Pillow for other formats"
        ) from None
    try:
        with Image.open(io.BytesIO(data)) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            return np.asarray(im, dtype=np.uint8)
    except Exception as exc:
        raise DecodeError(f"image decode failed: {exc}") from exc


def read_image(path) -> np.ndarray:
    """Read an image file from disk and decode it into a raster."""
    return decode_image(Path(path).read_bytes())
