"""Dense-array primitives: addressing, bilinear resampling, pooling, softmax.

Everything here is a pure function over numpy arrays (row-major, C order).
Sampling for bilinear interpolation uses half-pixel centers: output pixel i
reads source coordinate (i + 0.5) * n_in / n_out - 0.5, with edge clamping.
This is exact for constant inputs and is the identity when sizes match.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def row_major_offset(dims, index) -> int:
    """Flat offset of a multi-index under row-major layout (last dim fastest)."""
    if len(index) != len(dims):
        raise ShapeError(f"index rank {len(index)} != tensor rank {len(dims)}")
    off = 0
    for extent, i in zip(dims, index):
        if not 0 <= i < extent:
            raise ShapeError(f"index {tuple(index)} out of bounds for dims {tuple(dims)}")
        off = off * extent + i
    return off


def _axis_taps(n_in: int, n_out: int):
    """Half-pixel source taps for one axis: (lo, hi, frac) per output pixel."""
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    lo = np.floor(pos).astype(np.intp)
    frac = pos - lo
    lo_c = np.clip(lo, 0, n_in - 1)
    hi_c = np.clip(lo + 1, 0, n_in - 1)
    return lo_c, hi_c, frac


def resize_last2(arr: np.ndarray, target) -> np.ndarray:
    """Bilinearly resample the last two axes of ``arr`` to ``target`` extents."""
    h_out, w_out = int(target[0]), int(target[1])
    if arr.ndim < 2:
        raise ShapeError(f"need rank >= 2 to resize last two axes, got {arr.shape}")
    h_in, w_in = arr.shape[-2], arr.shape[-1]
    if min(h_in, w_in, h_out, w_out) < 1:
        raise ShapeError("resize extents must be positive")
    if (h_in, w_in) == (h_out, w_out):
        return arr.copy()
    y0, y1, fy = _axis_taps(h_in, h_out)
    x0, x1, fx = _axis_taps(w_in, w_out)
    fy = fy.astype(arr.dtype)
    fx = fx.astype(arr.dtype)
    top = arr[..., y0, :]
    bot = arr[..., y1, :]
    rows = top + fy[:, None] * (bot - top)
    left = rows[..., :, x0]
    right = rows[..., :, x1]
    return left + fx * (right - left)


def resize_last2_vjp(grad_out: np.ndarray, in_shape) -> np.ndarray:
    """Adjoint of :func:`resize_last2`: scatter output gradients back to taps."""
    h_in, w_in = int(in_shape[-2]), int(in_shape[-1])
    h_out, w_out = grad_out.shape[-2], grad_out.shape[-1]
    if (h_in, w_in) == (h_out, w_out):
        return grad_out.copy()
    y0, y1, fy = _axis_taps(h_in, h_out)
    x0, x1, fx = _axis_taps(w_in, w_out)
    fy = fy.astype(grad_out.dtype)[:, None]
    fx = fx.astype(grad_out.dtype)
    grad_in = np.zeros(grad_out.shape[:-2] + (h_in, w_in), dtype=grad_out.dtype)
    # Split along x first, then scatter both row taps.
    g_left = grad_out * (1.0 - fx)
    g_right = grad_out * fx
    g_cols = np.zeros(grad_out.shape[:-1] + (w_in,), dtype=grad_out.dtype)
    np.add.at(g_cols, (..., x0), g_left)
    np.add.at(g_cols, (..., x1), g_right)
    g_cols = np.moveaxis(g_cols, -2, -1)  # (..., w_in, h_out) so rows are last
    g_rows = np.zeros(g_cols.shape[:-1] + (h_in,), dtype=grad_out.dtype)
    np.add.at(g_rows, (..., y0), g_cols * (1.0 - fy[:, 0]))
    np.add.at(g_rows, (..., y1), g_cols * fy[:, 0])
    grad_in[...] = np.moveaxis(g_rows, -1, -2)
    return grad_in


def bilinear_resize(src: np.ndarray, target) -> np.ndarray:
    """Resample a (C, H, W) tensor to (C, H', W') with half-pixel bilinear taps."""
    if src.ndim != 3:
        raise ShapeError(f"bilinear_resize expects rank 3 (C, H, W), got {src.shape}")
    return resize_last2(src, target)


def avg_pool_support_dims(t: np.ndarray) -> np.ndarray:
    """Mean over the trailing two (support) axes of a rank-5 tensor."""
    if t.ndim != 5:
        raise ShapeError(f"avg_pool_support_dims expects rank 5, got {t.shape}")
    return t.mean(axis=(3, 4))


def softmax_channel(t: np.ndarray) -> np.ndarray:
    """Per-pixel softmax over channel axis 0 of a (C, H, W) tensor."""
    if t.ndim != 3 or t.shape[0] < 2:
        raise ShapeError(f"softmax_channel expects (C>=2, H, W), got {t.shape}")
    shifted = t - t.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=0, keepdims=True)
