"""Tape-recorded layer operations: forward plus vector-Jacobian product.

Every function takes the tape as its first argument; passing None runs the
forward only, which is how finite-difference probes re-evaluate a function
without recording. Inputs that do not require gradients are treated as
constants and receive no adjoint.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from . import conv4d as c4
from .autodiff import Node, Tape, record_op
from .conv2d import (conv2d_backward_input, conv2d_backward_weight,
                     conv2d_forward)
from .correlation import ZERO_NORM_EPS
from .errors import InvalidInputError, ShapeError, UndefinedLossError
from .ops import resize_last2, resize_last2_vjp

GROUP_NORM_EPS = 1e-5


def constant(value: np.ndarray) -> Node:
    return Node(np.asarray(value, dtype=np.float64), requires_grad=False)


def t_add(tape: Optional[Tape], a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add shapes differ: {a.value.shape} vs {b.value.shape}")
    return record_op(tape, a.value + b.value, (a, b), lambda g: (g, g))


def t_scale(tape: Optional[Tape], x: Node, alpha: float) -> Node:
    return record_op(tape, alpha * x.value, (x,), lambda g: (alpha * g,))


def t_mul(tape: Optional[Tape], a: Node, b: Node) -> Node:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mul shapes differ: {a.value.shape} vs {b.value.shape}")
    return record_op(tape, a.value * b.value, (a, b),
                     lambda g: (g * b.value, g * a.value))


def t_sum(tape: Optional[Tape], x: Node) -> Node:
    return record_op(tape, np.asarray(x.value.sum()), (x,),
                     lambda g: (np.broadcast_to(g, x.value.shape).copy(),))


def t_relu(tape: Optional[Tape], x: Node) -> Node:
    keep = x.value > 0.0
    return record_op(tape, np.where(keep, x.value, 0.0), (x,),
                     lambda g: (g * keep,))


def t_conv2d(tape: Optional[Tape], x: Node, w: Node, b: Optional[Node],
             stride=(1, 1), pad: Optional[int] = None) -> Node:
    """2D convolution of a single (C, H, W) map; pad defaults to floor(k/2)."""
    k = w.value.shape[2]
    p = k // 2 if pad is None else pad
    xb = x.value[None]
    out = conv2d_forward(xb, w.value, stride, p)[0]
    if b is not None:
        out = out + b.value[:, None, None]
    inputs = (x, w) if b is None else (x, w, b)

    def backward(g):
        gb = g[None]
        dx = conv2d_backward_input(gb, xb.shape, w.value, stride, p)[0]
        dw = conv2d_backward_weight(gb, xb, k, stride, p)
        if b is None:
            return dx, dw
        return dx, dw, g.sum(axis=(1, 2))

    return record_op(tape, out, inputs, backward)


def t_conv4d_center_pivot(tape: Optional[Tape], x: Node, w_support: Node, w_query: Node,
                          b_support: Optional[Node], b_query: Optional[Node],
                          cfg: c4.Conv4dConfig) -> Node:
    kern = c4.Kernel4d.center_pivot(
        w_support.value, w_query.value,
        None if b_support is None else b_support.value,
        None if b_query is None else b_query.value)
    out = c4.conv4d_center_pivot(x.value, kern, cfg)
    inputs = [x, w_support, w_query]
    if cfg.bias:
        inputs += [b_support, b_query]

    def backward(g):
        dx, dws, dwq, dbs, dbq = c4.conv4d_center_pivot_backward(g, x.value, kern, cfg)
        if cfg.bias:
            return dx, dws, dwq, dbs, dbq
        return dx, dws, dwq

    return record_op(tape, out, inputs, backward)


def t_conv4d_original(tape: Optional[Tape], x: Node, w: Node, b: Optional[Node],
                      cfg: c4.Conv4dConfig) -> Node:
    kern = c4.Kernel4d.original(w.value, None if b is None else b.value)
    out = c4.conv4d_original(x.value, kern, cfg)
    inputs = [x, w] + ([b] if cfg.bias else [])

    def backward(g):
        dx, dw, db = c4.conv4d_original_backward(g, x.value, kern, cfg)
        return (dx, dw, db) if cfg.bias else (dx, dw)

    return record_op(tape, out, inputs, backward)


def t_conv4d_separable(tape: Optional[Tape], x: Node, w_support: Node, w_query: Node,
                       b_support: Node, b_query: Node, gamma: Node, beta: Node,
                       cfg: c4.Conv4dConfig, normalize: bool = True) -> Node:
    kern = c4.Kernel4d.separable(w_support.value, w_query.value, b_support.value,
                                 b_query.value, gamma.value, beta.value, normalize)
    out = c4.conv4d_separable(x.value, kern, cfg)
    inputs = (x, w_support, w_query, b_support, b_query, gamma, beta)

    def backward(g):
        dx, dws, dwq, dbs, dbq, dgamma, dbeta = c4.conv4d_separable_backward(
            g, x.value, kern, cfg)
        return dx, dws, dwq, dbs, dbq, dgamma, dbeta

    return record_op(tape, out, inputs, backward)


def t_group_norm(tape: Optional[Tape], x: Node, gamma: Node, beta: Node,
                 groups: int, eps: float = GROUP_NORM_EPS) -> Node:
    """Group normalization over (channels-in-group, all spatial dims)."""
    c = x.value.shape[0]
    if c % groups:
        raise ShapeError(f"channels {c} not divisible by {groups} groups")
    spatial = x.value.shape[1:]
    xg = x.value.reshape(groups, c // groups, *spatial)
    axes = tuple(range(1, xg.ndim))
    mu = xg.mean(axis=axes, keepdims=True)
    var = xg.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(x.value.shape)
    shape1 = (c,) + (1,) * len(spatial)
    out = gamma.value.reshape(shape1) * xhat + beta.value.reshape(shape1)

    def backward(g):
        dgamma = (g * xhat).sum(axis=tuple(range(1, g.ndim)))
        dbeta = g.sum(axis=tuple(range(1, g.ndim)))
        gx = (g * gamma.value.reshape(shape1)).reshape(groups, c // groups, *spatial)
        hg = xhat.reshape(groups, c // groups, *spatial)
        mean_g = gx.mean(axis=axes, keepdims=True)
        mean_gx = (gx * hg).mean(axis=axes, keepdims=True)
        dx = (inv * (gx - mean_g - hg * mean_gx)).reshape(x.value.shape)
        return dx, dgamma, dbeta

    return record_op(tape, out, (x, gamma, beta), backward)


def t_resize_last2(tape: Optional[Tape], x: Node, target) -> Node:
    out = resize_last2(x.value, target)
    in_shape = x.value.shape
    return record_op(tape, out, (x,),
                     lambda g: (resize_last2_vjp(g, in_shape),))


def t_resize_query(tape: Optional[Tape], x: Node, target) -> Node:
    """Bilinearly resize the query axes (1, 2) of a (C, Hq, Wq, Hs, Ws) tensor."""
    if x.value.ndim != 5:
        raise ShapeError(f"expected rank 5, got {x.value.shape}")
    moved = np.moveaxis(x.value, (1, 2), (3, 4))
    out = np.moveaxis(resize_last2(moved, target), (3, 4), (1, 2))
    in_shape = moved.shape

    def backward(g):
        gm = np.moveaxis(g, (1, 2), (3, 4))
        return (np.moveaxis(resize_last2_vjp(gm, in_shape), (3, 4), (1, 2)),)

    return record_op(tape, out, (x,), backward)


def t_avg_pool_support(tape: Optional[Tape], x: Node) -> Node:
    """Mean over the support axes of a (C, Hq, Wq, Hs, Ws) tensor."""
    if x.value.ndim != 5:
        raise ShapeError(f"expected rank 5, got {x.value.shape}")
    hs, ws = x.value.shape[3], x.value.shape[4]
    out = x.value.mean(axis=(3, 4))

    def backward(g):
        return (np.broadcast_to(g[..., None, None] / (hs * ws), x.value.shape).copy(),)

    return record_op(tape, out, (x,), backward)


def t_correlation(tape: Optional[Tape], fq: Node, fs: Node) -> Node:
    """Differentiable clamped cosine correlation of two (C, H, W) maps."""
    if fq.value.shape != fs.value.shape:
        raise ShapeError(f"query {fq.value.shape} and support {fs.value.shape} must match")
    c, h, w = fq.value.shape
    q = fq.value.reshape(c, h * w)
    s = fs.value.reshape(c, h * w)
    qn = np.linalg.norm(q, axis=0)
    sn = np.linalg.norm(s, axis=0)
    dots = q.T @ s
    denom = np.outer(qn, sn)
    valid = (qn[:, None] >= ZERO_NORM_EPS) & (sn[None, :] >= ZERO_NORM_EPS)
    raw = np.zeros_like(dots)
    np.divide(dots, denom, out=raw, where=valid)
    out = np.maximum(raw, 0.0).reshape(h, w, h, w)

    def backward(g):
        gm = g.reshape(h * w, h * w) * (valid & (raw > 0.0))
        inv_sn = np.where(sn >= ZERO_NORM_EPS, 1.0 / np.maximum(sn, ZERO_NORM_EPS), 0.0)
        inv_qn = np.where(qn >= ZERO_NORM_EPS, 1.0 / np.maximum(qn, ZERO_NORM_EPS), 0.0)
        coef_q = (gm * raw).sum(axis=1)
        coef_s = (gm * raw).sum(axis=0)
        dq = (s @ (gm * inv_sn[None, :]).T) * inv_qn[None, :]
        dq -= q * (coef_q * inv_qn ** 2)[None, :]
        ds = (q @ (gm * inv_qn[:, None])) * inv_sn[None, :]
        ds -= s * (coef_s * inv_sn ** 2)[None, :]
        return dq.reshape(c, h, w), ds.reshape(c, h, w)

    return record_op(tape, out, (fq, fs), backward)


def t_softmax_channel(tape: Optional[Tape], x: Node) -> Node:
    """Per-pixel softmax over channel axis 0."""
    shifted = x.value - x.value.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=0, keepdims=True)

    def backward(g):
        inner = (g * p).sum(axis=0, keepdims=True)
        return (p * (g - inner),)

    return record_op(tape, p, (x,), backward)


def cross_entropy_logits(tape: Optional[Tape], logits: Node, gt: np.ndarray,
                         ignore_value: float = 255.0) -> Node:
    """Mean negative log-likelihood over non-ignored pixels of a (2, H, W) map.

    Computed from logits in logsumexp form so probabilities near 0 or 1 stay
    finite. Ground-truth labels are 0, 1, or the ignore sentinel.
    """
    lv = logits.value
    if lv.ndim != 3 or lv.shape[0] != 2:
        raise ShapeError(f"logits must be (2, H, W), got {lv.shape}")
    if gt.shape != lv.shape[1:]:
        raise ShapeError(f"labels {gt.shape} do not match logits {lv.shape[1:]}")
    keep = gt != ignore_value
    n = int(keep.sum())
    if n == 0:
        raise UndefinedLossError("every pixel carries the ignore label")
    labels = gt[keep]
    if not np.isin(labels, (0.0, 1.0)).all():
        raise InvalidInputError("labels must be 0, 1, or the ignore value")
    cls = labels.astype(np.intp)
    m = lv.max(axis=0)
    lse = m + np.log(np.exp(lv - m).sum(axis=0))
    idx = np.nonzero(keep)
    picked = lv[(cls,) + idx]
    loss = (lse[keep] - picked).mean()

    def backward(g):
        p = np.exp(lv - lse[None])
        dl = np.zeros_like(lv)
        dl[:, keep] = p[:, keep]
        dl[(cls,) + idx] -= 1.0
        return (dl * (float(g) / n),)

    return record_op(tape, np.asarray(loss), (logits,), backward)
