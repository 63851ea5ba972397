"""Named gradient checks over every differentiable op, for CLI and tests.

Each check probes one op (or a composite) against central finite differences
and reports the max relative error. Inputs are drawn positive-leaning where
an op has a kink (ReLU, clamped cosine) so the probe does not straddle it;
the kink branches themselves are covered by exact unit tests elsewhere.
"""

from __future__ import annotations

from typing import Callable, Dict

import numpy as np

from . import layers as L
from .arch import ArchSpec, LevelSpec
from .autodiff import Node, Tape, grad_check
from .conv4d import CENTER_PIVOT, ORIGINAL, SEPARABLE, Conv4dConfig
from .correlation import FeatureSet, build_hypercorrelation_pyramid
from .decoder import cross_entropy, decode, init_decoder_params
from .encoder import encode, init_encoder_params
from .model import Model

GRAD_TOL = 1e-4

# Full block channel schedule at shrunken extents, for composite checks.
TINY_ARCH = ArchSpec(
    name="tiny",
    levels=(LevelSpec(2, 8, (3, 3, 3), (2, 2, 1)),
            LevelSpec(2, 6, (3, 3, 3), (2, 2, 1)),
            LevelSpec(2, 4, (3, 3, 3), (2, 1, 1))),
    block_channels=(16, 64, 128),
    image_size=32,
    feature_shapes=((3, 8, 8), (3, 8, 8), (3, 6, 6), (3, 6, 6), (3, 4, 4), (3, 4, 4)))


def _weighted_sum(tape, node: Node, w: np.ndarray) -> Node:
    """Scalar readout with fixed random weights, so every output matters."""
    return L.t_sum(tape, L.t_mul(tape, node, L.constant(w)))


def gradient_checks(seed: int = 0) -> Dict[str, float]:
    """Run every named check; returns max relative error per check."""
    rng = np.random.default_rng(seed)
    out: Dict[str, float] = {}

    cp_cfg = Conv4dConfig(2, 3, 3, (1, 2, 2, 1), variant=CENTER_PIVOT)
    x4 = rng.standard_normal((2, 4, 4, 4, 4))
    ws = rng.standard_normal((3, 2, 3, 3))
    wq = rng.standard_normal((3, 2, 3, 3))
    bs = rng.standard_normal(3)
    bq = rng.standard_normal(3)
    readout = rng.standard_normal(cp_cfg.out_extents(x4.shape[1:]))
    r4 = rng.standard_normal((3,) + tuple(cp_cfg.out_extents(x4.shape[1:])))

    def cp(tape, x, w_s, w_q, b_s, b_q):
        y = L.t_conv4d_center_pivot(tape, x, w_s, w_q, b_s, b_q, cp_cfg)
        return _weighted_sum(tape, y, r4)

    const = lambda a: L.constant(a)
    out["cp_conv_input"] = grad_check(
        lambda t, n: cp(t, n, const(ws), const(wq), const(bs), const(bq)), x4)
    out["cp_conv_w_support"] = grad_check(
        lambda t, n: cp(t, const(x4), n, const(wq), const(bs), const(bq)), ws)
    out["cp_conv_w_query"] = grad_check(
        lambda t, n: cp(t, const(x4), const(ws), n, const(bs), const(bq)), wq)
    out["cp_conv_bias"] = grad_check(
        lambda t, n: cp(t, const(x4), const(ws), const(wq), n, const(bq)), bs)

    o_cfg = Conv4dConfig(1, 2, 3, (1, 1, 2, 2), variant=ORIGINAL)
    xo = rng.standard_normal((1, 3, 3, 4, 4))
    wo = rng.standard_normal((2, 1, 3, 3, 3, 3))
    bo = rng.standard_normal(2)
    ro = rng.standard_normal((2,) + tuple(o_cfg.out_extents(xo.shape[1:])))

    def orig(tape, x, w, b):
        return _weighted_sum(tape, L.t_conv4d_original(tape, x, w, b, o_cfg), ro)

    out["original_conv_input"] = grad_check(
        lambda t, n: orig(t, n, const(wo), const(bo)), xo)
    out["original_conv_weight"] = grad_check(
        lambda t, n: orig(t, const(xo), n, const(bo)), wo)

    s_cfg = Conv4dConfig(2, 2, 3, (1, 1, 2, 1), variant=SEPARABLE)
    xs = rng.standard_normal((2, 3, 3, 4, 3))
    sw1 = rng.standard_normal((2, 2, 3, 3))
    sw2 = rng.standard_normal((2, 2, 3, 3))
    sb1, sb2 = rng.standard_normal(2), rng.standard_normal(2)
    sg = 1.0 + 0.2 * rng.standard_normal(2)
    sbeta = rng.standard_normal(2)
    rs = rng.standard_normal((2,) + tuple(s_cfg.out_extents(xs.shape[1:])))

    def sep(tape, x, w1, w2, b1, b2, g, bt):
        y = L.t_conv4d_separable(tape, x, w1, w2, b1, b2, g, bt, s_cfg)
        return _weighted_sum(tape, y, rs)

    out["separable_conv_input"] = grad_check(
        lambda t, n: sep(t, n, const(sw1), const(sw2), const(sb1), const(sb2),
                         const(sg), const(sbeta)), xs)
    out["separable_conv_weight"] = grad_check(
        lambda t, n: sep(t, const(xs), const(sw1), n, const(sb1), const(sb2),
                         const(sg), const(sbeta)), sw2)
    out["separable_conv_affine"] = grad_check(
        lambda t, n: sep(t, const(xs), const(sw1), const(sw2), const(sb1), const(sb2),
                         n, const(sbeta)), sg)

    xg = rng.standard_normal((8, 3, 4))
    gg = 1.0 + 0.3 * rng.standard_normal(8)
    gb = rng.standard_normal(8)
    rg = rng.standard_normal((8, 3, 4))
    gn = lambda t, x, g, b: _weighted_sum(t, L.t_group_norm(t, x, g, b, 4), rg)
    out["group_norm_input"] = grad_check(lambda t, n: gn(t, n, const(gg), const(gb)), xg)
    out["group_norm_gamma"] = grad_check(lambda t, n: gn(t, const(xg), n, const(gb)), gg)
    out["group_norm_beta"] = grad_check(lambda t, n: gn(t, const(xg), const(gg), n), gb)

    xb = rng.standard_normal((2, 5, 4))
    rb_up = rng.standard_normal((2, 9, 7))
    rb_dn = rng.standard_normal((2, 3, 2))
    out["bilinear_upsample"] = grad_check(
        lambda t, n: _weighted_sum(t, L.t_resize_last2(t, n, (9, 7)), rb_up), xb)
    out["bilinear_downsample"] = grad_check(
        lambda t, n: _weighted_sum(t, L.t_resize_last2(t, n, (3, 2)), rb_dn), xb)

    x5 = rng.standard_normal((2, 3, 3, 2, 2))
    r5 = rng.standard_normal((2, 5, 5, 2, 2))
    out["bilinear_query_axes"] = grad_check(
        lambda t, n: _weighted_sum(t, L.t_resize_query(t, n, (5, 5)), r5), x5)

    rp = rng.standard_normal((2, 3, 3))
    out["avg_pool_support"] = grad_check(
        lambda t, n: _weighted_sum(t, L.t_avg_pool_support(t, n), rp), x5)

    # Positive features keep every cosine away from the ReLU kink.
    fq = rng.uniform(0.5, 1.5, (3, 3, 3))
    fs = rng.uniform(0.5, 1.5, (3, 3, 3))
    rc = rng.standard_normal((3, 3, 3, 3))
    out["correlation_query"] = grad_check(
        lambda t, n: _weighted_sum(t, L.t_correlation(t, n, const(fs)), rc), fq)
    out["correlation_support"] = grad_check(
        lambda t, n: _weighted_sum(t, L.t_correlation(t, const(fq), n), rc), fs)

    xc = rng.standard_normal((3, 5, 5))
    wc = rng.standard_normal((4, 3, 3, 3))
    bc = rng.standard_normal(4)
    rc2 = rng.standard_normal((4, 3, 3))
    c2 = lambda t, x, w, b: _weighted_sum(
        t, L.t_conv2d(t, x, w, b, stride=(2, 2)), rc2)
    out["conv2d_input"] = grad_check(lambda t, n: c2(t, n, const(wc), const(bc)), xc)
    out["conv2d_weight"] = grad_check(lambda t, n: c2(t, const(xc), n, const(bc)), wc)
    out["conv2d_bias"] = grad_check(lambda t, n: c2(t, const(xc), const(wc), n), bc)

    logits = rng.standard_normal((2, 4, 4))
    gt = rng.integers(0, 2, (4, 4)).astype(np.float64)
    gt[0, 0] = 255.0
    out["softmax_cross_entropy"] = grad_check(
        lambda t, n: L.cross_entropy_logits(t, n, gt), logits)
    rsm = rng.standard_normal((2, 4, 4))
    out["softmax_channel"] = grad_check(
        lambda t, n: _weighted_sum(t, L.t_softmax_channel(t, n), rsm), logits)

    return out


def composite_checks(seed: int = 0, samples: int = 20) -> Dict[str, float]:
    """Sampled-coordinate checks through whole encoder/decoder stacks.

    Composites thread many ReLUs, so the probe step is smaller than in the
    per-op checks: a wide step straddles activation kinks and reports probe
    truncation, not gradient error.
    """
    rng = np.random.default_rng(seed)
    eps = 1e-5
    out: Dict[str, float] = {}

    enc_params = init_encoder_params(TINY_ARCH, rng)
    pyramids = [0.1 + 0.9 * rng.random((2, e, e, e, e)) for e in (8, 6, 4)]
    re = rng.standard_normal((128, 8, 8))

    def enc(tape, n0):
        nodes = [n0, L.constant(pyramids[1]), L.constant(pyramids[2])]
        z = encode(tape, nodes, enc_params, TINY_ARCH)
        return _weighted_sum(tape, z, re)

    out["encoder_full"] = grad_check(enc, pyramids[0], eps=eps, samples=samples, rng=rng)

    dec_params = init_decoder_params(TINY_ARCH, rng)
    z0 = rng.standard_normal((128, 6, 6))
    gt = rng.integers(0, 2, (TINY_ARCH.image_size, TINY_ARCH.image_size)).astype(np.float64)

    def dec(tape, n):
        pred = decode(tape, n, dec_params, TINY_ARCH)
        return cross_entropy(tape, pred, gt)

    out["decoder_full"] = grad_check(dec, z0, eps=eps, samples=samples, rng=rng)
    return out
