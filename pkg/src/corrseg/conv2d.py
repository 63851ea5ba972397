"""Strided, zero-padded 2D convolution with explicit backward helpers.

Layout is (batch, channels, height, width). Forward lowers each padded input
to patch columns (im2col) and contracts with a reshaped weight matrix; the
input backward scatters one vectorized add per kernel tap, so cost grows with
kernel area, not output area.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError


def out_extent(n: int, k: int, stride: int, pad: int) -> int:
    ext = (n + 2 * pad - k) // stride + 1
    if ext < 1:
        raise ShapeError(f"extent {n} too small for kernel {k} stride {stride} pad {pad}")
    return ext


def _windows(x: np.ndarray, k: int, stride, pad: int) -> np.ndarray:
    """All kernel windows of a padded (B, C, H, W) input: (B, C, Ho, Wo, k, k)."""
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))
    return win[:, :, :: stride[0], :: stride[1]]


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride, pad: int) -> np.ndarray:
    """Convolve (B, Cin, H, W) with (Cout, Cin, k, k), stride (s1, s2)."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects rank-4 input and weight, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ShapeError(f"input channels {x.shape[1]} != weight channels {w.shape[1]}")
    if w.shape[2] != w.shape[3]:
        raise ShapeError(f"kernel must be square, got {w.shape[2:]}")
    b = x.shape[0]
    cout, cin, k, _ = w.shape
    win = _windows(x, k, stride, pad)
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, cin * k * k)
    out = cols @ w.reshape(cout, cin * k * k).T
    return out.reshape(b, ho, wo, cout).transpose(0, 3, 1, 2)


def conv2d_backward_input(grad_out: np.ndarray, x_shape, w: np.ndarray,
                          stride, pad: int) -> np.ndarray:
    """Adjoint of conv2d_forward with respect to the input."""
    b, cin, h, wd = x_shape
    cout, _, k, _ = w.shape
    ho, wo = grad_out.shape[2], grad_out.shape[3]
    gp = np.zeros((b, cin, h + 2 * pad, wd + 2 * pad), dtype=grad_out.dtype)
    # One scatter-add per kernel tap over the strided output lattice.
    g_flat = np.tensordot(grad_out, w, axes=([1], [0]))  # (B, Ho, Wo, Cin, k, k)
    for i in range(k):
        rows = slice(i, i + stride[0] * (ho - 1) + 1, stride[0])
        for j in range(k):
            cols = slice(j, j + stride[1] * (wo - 1) + 1, stride[1])
            gp[:, :, rows, cols] += g_flat[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        return gp[:, :, pad:-pad, pad:-pad]
    return gp


def conv2d_backward_weight(grad_out: np.ndarray, x: np.ndarray, k: int,
                           stride, pad: int) -> np.ndarray:
    """Adjoint of conv2d_forward with respect to the weight."""
    b = x.shape[0]
    cin = x.shape[1]
    cout, ho, wo = grad_out.shape[1], grad_out.shape[2], grad_out.shape[3]
    win = _windows(x, k, stride, pad)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * ho * wo, cin * k * k)
    gm = grad_out.transpose(0, 2, 3, 1).reshape(b * ho * wo, cout)
    return (gm.T @ cols).reshape(cout, cin, k, k)
