"""4D convolution over correlation tensors, in three kernel variants.

Input layout is (Cin, Hq, Wq, Hs, Ws): channel, two query axes, two support
axes. The dense variant slides a full (k, k, k, k) window and is the oracle.
The center-pivot variant keeps only kernel positions whose query-side or
support-side 2D offset is the center, which makes it the exact sum of two 2D
convolutions: one over the support axes at each (strided) query position, one
over the query axes at each (strided) support position. The center tap is in
both halves, so its effective weight is the sum of the two center entries.
The separable variant is a sequential approximation (support-axis conv, then
channel standardization, then query-axis conv) kept only for comparison.

Padding is always floor(k/2) per axis, so a stride-s axis of extent n yields
floor((n - 1)/s) + 1 outputs and the pivot positions never leave the input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from .conv2d import (conv2d_backward_input, conv2d_backward_weight,
                     conv2d_forward, out_extent)
from .errors import InvalidInputError, ShapeError

ORIGINAL = "original"
CENTER_PIVOT = "center-pivot"
SEPARABLE = "separable"
_VARIANTS = (ORIGINAL, CENTER_PIVOT, SEPARABLE)

_NORM_EPS = 1e-5


@dataclass(frozen=True)
class Conv4dConfig:
    in_channels: int
    out_channels: int
    kernel: int
    strides: Tuple[int, int, int, int]
    variant: str = CENTER_PIVOT
    bias: bool = True

    def __post_init__(self):
        if self.variant not in _VARIANTS:
            raise InvalidInputError(f"unknown variant {self.variant!r}")
        if self.in_channels < 1 or self.out_channels < 1:
            raise InvalidInputError("channel counts must be positive")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise InvalidInputError(f"kernel size must be odd, got {self.kernel}")
        if len(self.strides) != 4 or any(s < 1 for s in self.strides):
            raise InvalidInputError(f"need 4 positive strides, got {self.strides}")

    @property
    def padding(self) -> int:
        return self.kernel // 2

    def out_extents(self, in_extents) -> Tuple[int, int, int, int]:
        if len(in_extents) != 4:
            raise ShapeError(f"need 4 spatial extents, got {in_extents}")
        return tuple(out_extent(n, self.kernel, s, self.padding)
                     for n, s in zip(in_extents, self.strides))


class Kernel4d:
    """Weight container for one 4D conv layer; contents depend on variant.

    center-pivot: w_support and w_query (out, in, k, k) convolve the support
    and query axis pairs respectively, each with its own bias (out,).
    original: w (out, in, k, k, k, k) with bias (out,).
    separable: stage weights w_support (out, in, k, k) and w_query
    (out, out, k, k) with biases, plus standardization affine gamma/beta.
    """

    def __init__(self, variant: str, **arrays):
        self.variant = variant
        for name, value in arrays.items():
            setattr(self, name, value)

    @classmethod
    def center_pivot(cls, w_support, w_query, b_support=None, b_query=None):
        w_support = np.asarray(w_support)
        w_query = np.asarray(w_query, dtype=w_support.dtype)
        if w_support.shape != w_query.shape or w_support.ndim != 4:
            raise ShapeError("center-pivot needs two (out, in, k, k) kernels of equal shape")
        cout = w_support.shape[0]
        dt = w_support.dtype
        b_support = np.zeros(cout, dt) if b_support is None else np.asarray(b_support, dt)
        b_query = np.zeros(cout, dt) if b_query is None else np.asarray(b_query, dt)
        return cls(CENTER_PIVOT, w_support=w_support, w_query=w_query,
                   b_support=b_support, b_query=b_query)

    @classmethod
    def original(cls, w, b=None):
        w = np.asarray(w)
        if w.ndim != 6:
            raise ShapeError(f"original kernel must be (out, in, k, k, k, k), got {w.shape}")
        b = np.zeros(w.shape[0], w.dtype) if b is None else np.asarray(b, w.dtype)
        return cls(ORIGINAL, w=w, b=b)

    @classmethod
    def separable(cls, w_support, w_query, b_support=None, b_query=None,
                  gamma=None, beta=None, normalize: bool = True):
        w_support = np.asarray(w_support)
        w_query = np.asarray(w_query, dtype=w_support.dtype)
        cout = w_support.shape[0]
        dt = w_support.dtype
        if w_query.shape[1] != cout:
            raise ShapeError("separable stage-2 kernel must map out-channels to out-channels")
        return cls(SEPARABLE, w_support=w_support, w_query=w_query,
                   b_support=np.zeros(cout, dt) if b_support is None else np.asarray(b_support, dt),
                   b_query=np.zeros(cout, dt) if b_query is None else np.asarray(b_query, dt),
                   gamma=np.ones(cout, dt) if gamma is None else np.asarray(gamma, dt),
                   beta=np.zeros(cout, dt) if beta is None else np.asarray(beta, dt),
                   normalize=normalize)


def init_kernel(cfg: Conv4dConfig, rng: np.random.Generator) -> Kernel4d:
    """He-style random initialization matching the layer's fan-in."""
    k, cin, cout = cfg.kernel, cfg.in_channels, cfg.out_channels
    if cfg.variant == CENTER_PIVOT:
        scale = np.sqrt(2.0 / (cin * k * k * 2))
        return Kernel4d.center_pivot(rng.normal(0.0, scale, (cout, cin, k, k)),
                                     rng.normal(0.0, scale, (cout, cin, k, k)))
    if cfg.variant == ORIGINAL:
        scale = np.sqrt(2.0 / (cin * k ** 4))
        return Kernel4d.original(rng.normal(0.0, scale, (cout, cin, k, k, k, k)))
    s1 = np.sqrt(2.0 / (cin * k * k))
    s2 = np.sqrt(2.0 / (cout * k * k))
    return Kernel4d.separable(rng.normal(0.0, s1, (cout, cin, k, k)),
                              rng.normal(0.0, s2, (cout, cout, k, k)))


def _check(c: np.ndarray, kern: Kernel4d, cfg: Conv4dConfig, variant: str) -> None:
    if kern.variant != variant or cfg.variant != variant:
        raise InvalidInputError(f"kernel/config variant mismatch, expected {variant}")
    if c.ndim != 5:
        raise ShapeError(f"input must be (Cin, Hq, Wq, Hs, Ws), got {c.shape}")
    if c.shape[0] != cfg.in_channels:
        raise ShapeError(f"input channels {c.shape[0]} != config {cfg.in_channels}")


def _f64(a: np.ndarray) -> np.ndarray:
    # Accumulate in double regardless of storage dtype; rounded on return.
    return a.astype(np.float64, copy=False)


def conv4d_original(c: np.ndarray, kern: Kernel4d, cfg: Conv4dConfig) -> np.ndarray:
    """Dense 4D convolution: slide the full window over every output position."""
    _check(c, kern, cfg, ORIGINAL)
    if kern.w.shape != (cfg.out_channels, cfg.in_channels) + (cfg.kernel,) * 4:
        raise ShapeError(f"kernel shape {kern.w.shape} does not match config")
    k, p = cfg.kernel, cfg.padding
    sq1, sq2, ss1, ss2 = cfg.strides
    o1, o2, o3, o4 = cfg.out_extents(c.shape[1:])
    cp = np.pad(_f64(c), ((0, 0),) + ((p, p),) * 4)
    out = np.empty((cfg.out_channels, o1, o2, o3, o4))
    wmat = _f64(kern.w).reshape(cfg.out_channels, -1)
    for a in range(o1):
        for b in range(o2):
            for u in range(o3):
                for v in range(o4):
                    win = cp[:, a * sq1:a * sq1 + k, b * sq2:b * sq2 + k,
                             u * ss1:u * ss1 + k, v * ss2:v * ss2 + k]
                    out[:, a, b, u, v] = wmat @ win.reshape(-1)
    if cfg.bias:
        out += _f64(kern.b)[:, None, None, None, None]
    return out.astype(c.dtype, copy=False)


def conv4d_original_backward(grad_out: np.ndarray, c: np.ndarray, kern: Kernel4d,
                             cfg: Conv4dConfig):
    """Gradients of conv4d_original for (input, weight, bias)."""
    k, p = cfg.kernel, cfg.padding
    sq1, sq2, ss1, ss2 = cfg.strides
    o1, o2, o3, o4 = grad_out.shape[1:]
    cp = np.pad(c, ((0, 0),) + ((p, p),) * 4)
    gp = np.zeros_like(cp)
    gw = np.zeros_like(kern.w)
    for a in range(o1):
        for b in range(o2):
            for u in range(o3):
                for v in range(o4):
                    sl = (slice(None), slice(a * sq1, a * sq1 + k), slice(b * sq2, b * sq2 + k),
                          slice(u * ss1, u * ss1 + k), slice(v * ss2, v * ss2 + k))
                    g = grad_out[:, a, b, u, v]
                    gp[sl] += np.tensordot(g, kern.w, axes=([0], [0]))
                    gw += np.multiply.outer(g, cp[sl])
    dx = gp[:, p:p + c.shape[1], p:p + c.shape[2], p:p + c.shape[3], p:p + c.shape[4]]
    db = grad_out.sum(axis=(1, 2, 3, 4)) if cfg.bias else None
    return dx, gw, db


def _query_batch(t: np.ndarray) -> np.ndarray:
    """(C, Hq, Wq, Hs, Ws) -> (Hq*Wq, C, Hs, Ws)."""
    c, hq, wq, hs, ws = t.shape
    return t.transpose(1, 2, 0, 3, 4).reshape(hq * wq, c, hs, ws)


def _query_unbatch(t: np.ndarray, hq: int, wq: int) -> np.ndarray:
    b, c, hs, ws = t.shape
    return t.reshape(hq, wq, c, hs, ws).transpose(2, 0, 1, 3, 4)


def _support_batch(t: np.ndarray) -> np.ndarray:
    """(C, Hq, Wq, Hs, Ws) -> (Hs*Ws, C, Hq, Wq)."""
    c, hq, wq, hs, ws = t.shape
    return t.transpose(3, 4, 0, 1, 2).reshape(hs * ws, c, hq, wq)


def _support_unbatch(t: np.ndarray, hs: int, ws: int) -> np.ndarray:
    b, c, hq, wq = t.shape
    return t.reshape(hs, ws, c, hq, wq).transpose(2, 3, 4, 0, 1)


def conv4d_center_pivot(c: np.ndarray, kern: Kernel4d, cfg: Conv4dConfig) -> np.ndarray:
    """Sum of two 2D convolutions, one per axis pair, sharing the center tap.

    Term one fixes each strided query position and convolves the support
    plane with w_support; term two fixes each strided support position and
    convolves the query plane with w_query. Padding floor(k/2) keeps every
    pivot inside the input, so the fixed positions are plain subsamples.
    """
    _check(c, kern, cfg, CENTER_PIVOT)
    expect = (cfg.out_channels, cfg.in_channels, cfg.kernel, cfg.kernel)
    if kern.w_support.shape != expect:
        raise ShapeError(f"kernel shape {kern.w_support.shape} != {expect}")
    sq1, sq2, ss1, ss2 = cfg.strides
    p = cfg.padding
    o1, o2, o3, o4 = cfg.out_extents(c.shape[1:])
    c64 = _f64(c)

    sub_q = c64[:, ::sq1, ::sq2]
    y1 = conv2d_forward(_query_batch(sub_q), _f64(kern.w_support), (ss1, ss2), p)
    term1 = _query_unbatch(y1, o1, o2)

    sub_s = c64[:, :, :, ::ss1, ::ss2]
    y2 = conv2d_forward(_support_batch(sub_s), _f64(kern.w_query), (sq1, sq2), p)
    term2 = _support_unbatch(y2, o3, o4)

    out = term1 + term2
    if cfg.bias:
        out += (_f64(kern.b_support) + _f64(kern.b_query))[:, None, None, None, None]
    return out.astype(c.dtype, copy=False)


def conv4d_center_pivot_backward(grad_out: np.ndarray, c: np.ndarray, kern: Kernel4d,
                                 cfg: Conv4dConfig):
    """Gradients for (input, w_support, w_query, b_support, b_query)."""
    sq1, sq2, ss1, ss2 = cfg.strides
    p = cfg.padding
    cin, hq, wq, hs, ws = c.shape
    o1, o2, o3, o4 = grad_out.shape[1:]

    sub_q = c[:, ::sq1, ::sq2]
    x1 = _query_batch(sub_q)
    g1 = grad_out.transpose(1, 2, 0, 3, 4).reshape(o1 * o2, cfg.out_channels, o3, o4)
    dws = conv2d_backward_weight(g1, x1, cfg.kernel, (ss1, ss2), p)
    dx1 = conv2d_backward_input(g1, x1.shape, kern.w_support, (ss1, ss2), p)
    dx = np.zeros_like(c)
    dx[:, ::sq1, ::sq2] += _query_unbatch(dx1, o1, o2)

    sub_s = c[:, :, :, ::ss1, ::ss2]
    x2 = _support_batch(sub_s)
    g2 = grad_out.transpose(3, 4, 0, 1, 2).reshape(o3 * o4, cfg.out_channels, o1, o2)
    dwq = conv2d_backward_weight(g2, x2, cfg.kernel, (sq1, sq2), p)
    dx2 = conv2d_backward_input(g2, x2.shape, kern.w_query, (sq1, sq2), p)
    dx[:, :, :, ::ss1, ::ss2] += _support_unbatch(dx2, o3, o4)

    if cfg.bias:
        dsum = grad_out.sum(axis=(1, 2, 3, 4))
        return dx, dws, dwq, dsum, dsum.copy()
    return dx, dws, dwq, None, None


def _standardize(mid: np.ndarray):
    mu = mid.mean(axis=(1, 2, 3, 4), keepdims=True)
    var = mid.var(axis=(1, 2, 3, 4), keepdims=True)
    inv = 1.0 / np.sqrt(var + _NORM_EPS)
    return (mid - mu) * inv, inv


def conv4d_separable(c: np.ndarray, kern: Kernel4d, cfg: Conv4dConfig) -> np.ndarray:
    """Sequential approximation: support-axis conv, standardize, query-axis conv."""
    _check(c, kern, cfg, SEPARABLE)
    sq1, sq2, ss1, ss2 = cfg.strides
    p = cfg.padding
    o1, o2, o3, o4 = cfg.out_extents(c.shape[1:])
    hq, wq = c.shape[1], c.shape[2]

    y1 = conv2d_forward(_query_batch(_f64(c)), _f64(kern.w_support), (ss1, ss2), p)
    mid = _query_unbatch(y1, hq, wq)
    if cfg.bias:
        mid = mid + _f64(kern.b_support)[:, None, None, None, None]
    if kern.normalize:
        z, _ = _standardize(mid)
        mid = _f64(kern.gamma)[:, None, None, None, None] * z \
            + _f64(kern.beta)[:, None, None, None, None]
    y2 = conv2d_forward(_support_batch(mid), _f64(kern.w_query), (sq1, sq2), p)
    out = _support_unbatch(y2, o3, o4)
    if cfg.bias:
        out = out + _f64(kern.b_query)[:, None, None, None, None]
    return out.astype(c.dtype, copy=False)


def conv4d_separable_backward(grad_out: np.ndarray, c: np.ndarray, kern: Kernel4d,
                              cfg: Conv4dConfig):
    """Gradients for (input, w_support, w_query, b_support, b_query, gamma, beta)."""
    sq1, sq2, ss1, ss2 = cfg.strides
    p = cfg.padding
    hq, wq = c.shape[1], c.shape[2]
    o1, o2, o3, o4 = grad_out.shape[1:]

    # Rebuild the forward intermediates.
    x1 = _query_batch(c)
    y1 = conv2d_forward(x1, kern.w_support, (ss1, ss2), p)
    mid = _query_unbatch(y1, hq, wq)
    if cfg.bias:
        mid = mid + kern.b_support[:, None, None, None, None]
    if kern.normalize:
        z, inv = _standardize(mid)
        normed = kern.gamma[:, None, None, None, None] * z + kern.beta[:, None, None, None, None]
    else:
        normed = mid
    x2 = _support_batch(normed)

    g2 = grad_out.transpose(3, 4, 0, 1, 2).reshape(o3 * o4, grad_out.shape[0], o1, o2)
    dwq = conv2d_backward_weight(g2, x2, cfg.kernel, (sq1, sq2), p)
    dbq = grad_out.sum(axis=(1, 2, 3, 4)) if cfg.bias else None
    dnormed = _support_unbatch(conv2d_backward_input(g2, x2.shape, kern.w_query,
                                                     (sq1, sq2), p), mid.shape[3], mid.shape[4])

    if kern.normalize:
        dgamma = (dnormed * z).sum(axis=(1, 2, 3, 4))
        dbeta = dnormed.sum(axis=(1, 2, 3, 4))
        gz = dnormed * kern.gamma[:, None, None, None, None]
        mean_g = gz.mean(axis=(1, 2, 3, 4), keepdims=True)
        mean_gz = (gz * z).mean(axis=(1, 2, 3, 4), keepdims=True)
        dmid = inv * (gz - mean_g - z * mean_gz)
    else:
        dgamma = dbeta = None
        dmid = dnormed

    dbs = dmid.sum(axis=(1, 2, 3, 4)) if cfg.bias else None
    g1 = dmid.transpose(1, 2, 0, 3, 4).reshape(hq * wq, dmid.shape[0],
                                               dmid.shape[3], dmid.shape[4])
    dws = conv2d_backward_weight(g1, x1, cfg.kernel, (ss1, ss2), p)
    dx = _query_unbatch(conv2d_backward_input(g1, x1.shape, kern.w_support,
                                              (ss1, ss2), p), hq, wq)
    return dx, dws, dwq, dbs, dbq, dgamma, dbeta


def dense_from_center_pivot(kern: Kernel4d, cfg: Conv4dConfig) -> Kernel4d:
    """Embed a center-pivot kernel as the equivalent sparse dense 4D kernel.

    Off-pivot entries are zero; the shared center position carries the sum of
    the two 2D center weights, and the dense bias is the sum of both biases.
    The embedding is built in double so those sums are exact for any input
    precision.
    """
    if kern.variant != CENTER_PIVOT:
        raise InvalidInputError("dense embedding is defined for center-pivot kernels")
    k, r = cfg.kernel, cfg.padding
    cout, cin = kern.w_support.shape[0], kern.w_support.shape[1]
    w = np.zeros((cout, cin, k, k, k, k))
    w[:, :, r, r, :, :] += kern.w_support
    w[:, :, :, :, r, r] += kern.w_query
    return Kernel4d.original(w, _f64(kern.b_support) + _f64(kern.b_query))


def decomposition_max_error(trials: int, seed: int = 0, dtype=np.float64) -> float:
    """Worst |center-pivot - dense-embedded| over randomized configurations.

    Random channel counts up to 2, extents up to 6, strides in {1, 2},
    kernel size 3: the two code paths must agree to floating-point noise.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        cin = int(rng.integers(1, 3))
        cout = int(rng.integers(1, 3))
        extents = tuple(int(rng.integers(3, 7)) for _ in range(4))
        strides = tuple(int(rng.integers(1, 3)) for _ in range(4))
        cfg = Conv4dConfig(cin, cout, 3, strides, variant=CENTER_PIVOT)
        x = rng.standard_normal((cin,) + extents).astype(dtype)
        kern = Kernel4d.center_pivot(
            rng.standard_normal((cout, cin, 3, 3)).astype(dtype),
            rng.standard_normal((cout, cin, 3, 3)).astype(dtype),
            rng.standard_normal(cout).astype(dtype),
            rng.standard_normal(cout).astype(dtype))
        got = conv4d_center_pivot(x, kern, cfg)
        dense_cfg = Conv4dConfig(cin, cout, 3, strides, variant=ORIGINAL)
        ref = conv4d_original(x, dense_from_center_pivot(kern, cfg), dense_cfg)
        worst = max(worst, float(np.abs(got - ref).max()))
    return worst


def conv4d_param_count(cfg: Conv4dConfig) -> int:
    """Learnable scalars in one layer, including biases and affine terms."""
    k2 = cfg.kernel ** 2
    cin, cout = cfg.in_channels, cfg.out_channels
    if cfg.variant == CENTER_PIVOT:
        return 2 * (k2 * cin * cout + (cout if cfg.bias else 0))
    if cfg.variant == ORIGINAL:
        return k2 * k2 * cin * cout + (cout if cfg.bias else 0)
    stage = k2 * cin * cout + k2 * cout * cout
    return stage + (2 * cout if cfg.bias else 0) + 2 * cout


def conv2d_param_count(cin: int, cout: int, k: int, bias: bool = True) -> int:
    return k * k * cin * cout + (cout if bias else 0)


def norm_param_count(channels: int) -> int:
    return 2 * channels


def count_params(cfgs: Sequence[Conv4dConfig], norm_channels: Sequence[int] = ()) -> int:
    """Total learnable parameters of a stack of 4D convs plus norm layers."""
    total = sum(conv4d_param_count(cfg) for cfg in cfgs)
    total += sum(norm_param_count(ch) for ch in norm_channels)
    return total


def conv4d_weight_taps(cfg: Conv4dConfig) -> int:
    """Weights applied per output scalar (the FLOPs kernel factor)."""
    k2 = cfg.kernel ** 2
    if cfg.variant == CENTER_PIVOT:
        return cfg.in_channels * 2 * k2
    if cfg.variant == ORIGINAL:
        return cfg.in_channels * k2 * k2
    raise InvalidInputError("separable cost is staged; use conv4d_flop_count")


def conv4d_flop_count(cfg: Conv4dConfig, in_extents) -> int:
    """FLOPs for one layer at the given spatial extents, two per multiply-add."""
    o1, o2, o3, o4 = cfg.out_extents(in_extents)
    k2 = cfg.kernel ** 2
    if cfg.variant == SEPARABLE:
        hq, wq = in_extents[0], in_extents[1]
        n1 = cfg.out_channels * hq * wq * o3 * o4
        n2 = cfg.out_channels * o1 * o2 * o3 * o4
        return 2 * (n1 * cfg.in_channels * k2 + n2 * cfg.out_channels * k2)
    n_out = cfg.out_channels * o1 * o2 * o3 * o4
    return 2 * n_out * conv4d_weight_taps(cfg)


def count_flops(cfgs: Sequence[Conv4dConfig], extents: Sequence) -> int:
    """Total FLOPs of a stack; extents holds one 4-tuple per layer."""
    if len(cfgs) != len(extents):
        raise ShapeError("need one spatial-extent tuple per layer")
    return sum(conv4d_flop_count(cfg, ext) for cfg, ext in zip(cfgs, extents))
