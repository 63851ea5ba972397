"""4D convolution variants: oracle equivalence, algebra, and accounting.

The ground truth is a pure-Python six-nested-loop evaluation of the dense 4D
convolution, written independently of the library's vectorized paths. The
center-pivot variant is checked two ways: against that loop oracle with its
sparsity pattern embedded in a dense kernel, and through the randomized
equivalence sweep the command-line tool exposes. Parameter and FLOPs
accounting are asserted as exact integers.
"""

import numpy as np
import pytest

from corrseg.arch import get_arch
from corrseg.conv4d import (CENTER_PIVOT, ORIGINAL, SEPARABLE, Conv4dConfig,
                            Kernel4d, conv2d_param_count, conv4d_center_pivot,
                            conv4d_center_pivot_backward, conv4d_flop_count,
                            conv4d_original, conv4d_original_backward,
                            conv4d_param_count, conv4d_separable,
                            conv4d_separable_backward, conv4d_weight_taps,
                            count_flops, count_params, decomposition_max_error,
                            dense_from_center_pivot, init_kernel,
                            norm_param_count)
from corrseg.errors import InvalidInputError, ShapeError


def _conv4d_scalar(x, w, b, strides, pad):
    """Six nested loops over output position and kernel offsets, zero padded."""
    cin = x.shape[0]
    cout, k = w.shape[0], w.shape[2]
    ins = x.shape[1:]
    outs = [(n + 2 * pad - k) // s + 1 for n, s in zip(ins, strides)]
    y = np.zeros([cout] + outs)
    for o in range(cout):
        for a in range(outs[0]):
            for bq in range(outs[1]):
                for u in range(outs[2]):
                    for v in range(outs[3]):
                        acc = 0.0
                        for c in range(cin):
                            for da in range(k):
                                for db in range(k):
                                    for du in range(k):
                                        for dv in range(k):
                                            ia = a * strides[0] + da - pad
                                            ib = bq * strides[1] + db - pad
                                            iu = u * strides[2] + du - pad
                                            iv = v * strides[3] + dv - pad
                                            if (0 <= ia < ins[0] and 0 <= ib < ins[1]
                                                    and 0 <= iu < ins[2] and 0 <= iv < ins[3]):
                                                acc += x[c, ia, ib, iu, iv] * w[o, c, da, db, du, dv]
                        y[o, a, bq, u, v] = acc + b[o]
    return y


def _cp_kernel(rng, cout, cin, k, dtype=np.float64):
    return Kernel4d.center_pivot(
        rng.standard_normal((cout, cin, k, k)).astype(dtype),
        rng.standard_normal((cout, cin, k, k)).astype(dtype),
        rng.standard_normal(cout).astype(dtype),
        rng.standard_normal(cout).astype(dtype))


class TestConfig:
    def test_padding_is_half_kernel(self):
        assert Conv4dConfig(1, 1, 3, (1, 1, 1, 1)).padding == 1
        assert Conv4dConfig(1, 1, 5, (1, 1, 1, 1)).padding == 2

    def test_out_extents_follow_floor_rule(self):
        """Extent n with stride s yields floor((n - 1)/s) + 1 outputs."""
        cfg = Conv4dConfig(1, 1, 3, (1, 1, 2, 2))
        assert cfg.out_extents((13, 13, 13, 13)) == (13, 13, 7, 7)
        cfg = Conv4dConfig(1, 1, 5, (1, 1, 4, 4))
        assert cfg.out_extents((50, 50, 50, 50)) == (50, 50, 13, 13)

    def test_even_kernel_rejected(self):
        with pytest.raises(InvalidInputError):
            Conv4dConfig(1, 1, 2, (1, 1, 1, 1))

    def test_bad_strides_rejected(self):
        with pytest.raises(InvalidInputError):
            Conv4dConfig(1, 1, 3, (1, 1, 0, 1))

    def test_unknown_variant_rejected(self):
        with pytest.raises(InvalidInputError):
            Conv4dConfig(1, 1, 3, (1, 1, 1, 1), variant="diagonal")


class TestOriginalAgainstLoopOracle:
    def test_all_ones_center_and_corner(self):
        """Ones kernel on a ones (1,3,3,3,3) input: 81 at the center output
        (full 3^4 window in bounds) and 16 at the corner (2^4 valid taps)."""
        x = np.ones((1, 3, 3, 3, 3))
        kern = Kernel4d.original(np.ones((1, 1, 3, 3, 3, 3)))
        cfg = Conv4dConfig(1, 1, 3, (1, 1, 1, 1), variant=ORIGINAL)
        out = conv4d_original(x, kern, cfg)
        assert out[0, 1, 1, 1, 1] == pytest.approx(81.0)
        assert out[0, 0, 0, 0, 0] == pytest.approx(16.0)

    def test_one_hot_center_kernel_is_identity(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 3, 3, 3, 3))
        w = np.zeros((1, 1, 3, 3, 3, 3))
        w[0, 0, 1, 1, 1, 1] = 1.0
        cfg = Conv4dConfig(1, 1, 3, (1, 1, 1, 1), variant=ORIGINAL)
        np.testing.assert_allclose(conv4d_original(x, Kernel4d.original(w), cfg),
                                   x, atol=1e-12)

    @pytest.mark.parametrize("strides", [(1, 1, 1, 1), (2, 1, 2, 1), (1, 2, 1, 2),
                                         (2, 2, 2, 2)])
    def test_matches_scalar_loops(self, strides):
        rng = np.random.default_rng(sum(strides))
        x = rng.standard_normal((2, 4, 3, 4, 3))
        w = rng.standard_normal((2, 2, 3, 3, 3, 3))
        b = rng.standard_normal(2)
        cfg = Conv4dConfig(2, 2, 3, strides, variant=ORIGINAL)
        got = conv4d_original(x, Kernel4d.original(w, b), cfg)
        np.testing.assert_allclose(got, _conv4d_scalar(x, w, b, strides, 1),
                                   atol=1e-10)

    def test_linearity_in_input(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 3, 3, 3, 3))
        y = rng.standard_normal((1, 3, 3, 3, 3))
        kern = Kernel4d.original(rng.standard_normal((1, 1, 3, 3, 3, 3)))
        cfg = Conv4dConfig(1, 1, 3, (1, 1, 1, 1), variant=ORIGINAL, bias=False)
        lhs = conv4d_original(3.0 * x - 2.0 * y, kern, cfg)
        rhs = 3.0 * conv4d_original(x, kern, cfg) - 2.0 * conv4d_original(y, kern, cfg)
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)

    def test_translation_covariance_on_interior(self):
        """Stride 1: shifting the input one cell along a query axis shifts the
        output identically wherever both windows stay inside the input."""
        rng = np.random.default_rng(4)
        x = rng.standard_normal((1, 6, 4, 4, 4))
        kern = Kernel4d.original(rng.standard_normal((1, 1, 3, 3, 3, 3)), np.zeros(1))
        cfg = Conv4dConfig(1, 1, 3, (1, 1, 1, 1), variant=ORIGINAL)
        shifted = np.roll(x, 1, axis=1)
        base = conv4d_original(x, kern, cfg)
        moved = conv4d_original(shifted, kern, cfg)
        np.testing.assert_allclose(moved[0, 2:5], base[0, 1:4], atol=1e-10)


class TestCenterPivot:
    def test_zero_input_zero_bias_gives_zero(self):
        cfg = Conv4dConfig(2, 3, 3, (1, 1, 1, 1))
        kern = Kernel4d.center_pivot(np.random.default_rng(0).standard_normal((3, 2, 3, 3)),
                                     np.random.default_rng(1).standard_normal((3, 2, 3, 3)))
        out = conv4d_center_pivot(np.zeros((2, 4, 4, 4, 4)), kern, cfg)
        np.testing.assert_array_equal(out, np.zeros((3, 4, 4, 4, 4)))

    def test_one_hot_support_center_is_identity(self):
        """Support kernel one-hot at center, query kernel zero: identity map."""
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 4, 4, 4, 4))
        ws = np.zeros((1, 1, 3, 3))
        ws[0, 0, 1, 1] = 1.0
        kern = Kernel4d.center_pivot(ws, np.zeros((1, 1, 3, 3)))
        cfg = Conv4dConfig(1, 1, 3, (1, 1, 1, 1))
        np.testing.assert_allclose(conv4d_center_pivot(x, kern, cfg), x, atol=1e-12)

    def test_center_tap_contributes_through_both_kernels(self):
        """With both 2D kernels one-hot at center the map doubles the input:
        the shared center position carries the sum of the two center weights."""
        rng = np.random.default_rng(5)
        x = rng.standard_normal((1, 4, 4, 4, 4))
        hot = np.zeros((1, 1, 3, 3))
        hot[0, 0, 1, 1] = 1.0
        kern = Kernel4d.center_pivot(hot, hot.copy())
        cfg = Conv4dConfig(1, 1, 3, (1, 1, 1, 1))
        np.testing.assert_allclose(conv4d_center_pivot(x, kern, cfg), 2.0 * x,
                                   atol=1e-12)

    def test_matches_loop_oracle_through_dense_embedding(self):
        """Random (1,4,4,4,4) input, stride 1: the center-pivot path equals the
        dense loop oracle run with the kernel zeroed off the pivot pattern."""
        rng = np.random.default_rng(6)
        x = rng.standard_normal((1, 4, 4, 4, 4))
        kern = _cp_kernel(rng, 1, 1, 3)
        cfg = Conv4dConfig(1, 1, 3, (1, 1, 1, 1))
        dense = dense_from_center_pivot(kern, cfg)
        ref = _conv4d_scalar(x, dense.w, dense.b, (1, 1, 1, 1), 1)
        got = conv4d_center_pivot(x, kern, cfg)
        assert np.abs(got - ref).max() < 1e-6

    @pytest.mark.parametrize("strides", [(1, 1, 2, 2), (2, 2, 1, 1), (2, 1, 1, 2)])
    def test_strided_cases_match_loop_oracle(self, strides):
        rng = np.random.default_rng(sum(strides) + 10)
        x = rng.standard_normal((2, 5, 4, 4, 5))
        kern = _cp_kernel(rng, 3, 2, 3)
        cfg = Conv4dConfig(2, 3, 3, strides)
        dense = dense_from_center_pivot(kern, cfg)
        ref = _conv4d_scalar(x, dense.w, dense.b, strides, 1)
        got = conv4d_center_pivot(x, kern, cfg)
        np.testing.assert_allclose(got, ref, atol=1e-10)

    def test_dense_embedding_structure(self):
        """The embedded kernel is zero off the two pivot planes and sums the
        center weights where they overlap."""
        rng = np.random.default_rng(7)
        kern = _cp_kernel(rng, 2, 2, 3)
        cfg = Conv4dConfig(2, 2, 3, (1, 1, 1, 1))
        w = dense_from_center_pivot(kern, cfg).w
        assert w[0, 0, 1, 1, 1, 1] == pytest.approx(
            kern.w_support[0, 0, 1, 1] + kern.w_query[0, 0, 1, 1])
        np.testing.assert_allclose(w[:, :, 1, 1, 0, 2], kern.w_support[:, :, 0, 2])
        np.testing.assert_allclose(w[:, :, 2, 0, 1, 1], kern.w_query[:, :, 2, 0])
        w[:, :, 1, 1, :, :] = 0.0
        w[:, :, :, :, 1, 1] = 0.0
        np.testing.assert_array_equal(w, np.zeros_like(w))

    def test_randomized_equivalence_double(self):
        assert decomposition_max_error(50, seed=0, dtype=np.float64) < 1e-12

    def test_randomized_equivalence_single(self):
        assert decomposition_max_error(50, seed=1, dtype=np.float32) < 1e-6

    def test_channel_mismatch_rejected(self):
        kern = _cp_kernel(np.random.default_rng(0), 1, 1, 3)
        cfg = Conv4dConfig(1, 1, 3, (1, 1, 1, 1))
        with pytest.raises(ShapeError):
            conv4d_center_pivot(np.zeros((2, 4, 4, 4, 4)), kern, cfg)


class TestSeparable:
    def test_one_hot_kernels_identity_normalization_is_identity(self):
        """Both stage kernels one-hot at center with normalization off."""
        rng = np.random.default_rng(8)
        x = rng.standard_normal((1, 4, 4, 4, 4))
        hot = np.zeros((1, 1, 3, 3))
        hot[0, 0, 1, 1] = 1.0
        kern = Kernel4d.separable(hot, hot.copy(), normalize=False)
        cfg = Conv4dConfig(1, 1, 3, (1, 1, 1, 1), variant=SEPARABLE)
        np.testing.assert_allclose(conv4d_separable(x, kern, cfg), x, atol=1e-12)

    def test_zero_input_zero_affine_gives_zero(self):
        """Zero input with zero affine parameters and zero biases maps to zero."""
        rng = np.random.default_rng(9)
        kern = Kernel4d.separable(rng.standard_normal((2, 2, 3, 3)),
                                  rng.standard_normal((2, 2, 3, 3)),
                                  gamma=np.zeros(2), beta=np.zeros(2))
        cfg = Conv4dConfig(2, 2, 3, (1, 1, 1, 1), variant=SEPARABLE)
        out = conv4d_separable(np.zeros((2, 4, 4, 4, 4)), kern, cfg)
        np.testing.assert_array_equal(out, np.zeros((2, 4, 4, 4, 4)))

    def test_matches_sequential_loop_oracle(self):
        """Stage-by-stage scalar recomputation of the sequential design."""
        rng = np.random.default_rng(10)
        x = rng.standard_normal((2, 3, 3, 4, 4))
        kern = Kernel4d.separable(rng.standard_normal((3, 2, 3, 3)),
                                  rng.standard_normal((3, 3, 3, 3)),
                                  rng.standard_normal(3), rng.standard_normal(3),
                                  rng.standard_normal(3), rng.standard_normal(3))
        cfg = Conv4dConfig(2, 3, 3, (1, 1, 2, 2), variant=SEPARABLE)

        def conv2d_scalar(img, w, stride, pad):
            cin, h, wd = img.shape
            cout, _, k, _ = w.shape
            ho = (h + 2 * pad - k) // stride[0] + 1
            wo = (wd + 2 * pad - k) // stride[1] + 1
            out = np.zeros((cout, ho, wo))
            for o in range(cout):
                for i in range(ho):
                    for j in range(wo):
                        for c in range(cin):
                            for di in range(k):
                                for dj in range(k):
                                    r, q = i * stride[0] + di - pad, j * stride[1] + dj - pad
                                    if 0 <= r < h and 0 <= q < wd:
                                        out[o, i, j] += img[c, r, q] * w[o, c, di, dj]
            return out

        hq, wq = x.shape[1], x.shape[2]
        mid = np.stack([np.stack([conv2d_scalar(x[:, i, j], kern.w_support, (2, 2), 1)
                                  for j in range(wq)], axis=1)
                        for i in range(hq)], axis=1)
        mid = mid + kern.b_support[:, None, None, None, None]
        mu = mid.mean(axis=(1, 2, 3, 4), keepdims=True)
        sd = np.sqrt(mid.var(axis=(1, 2, 3, 4), keepdims=True) + 1e-5)
        mid = kern.gamma[:, None, None, None, None] * (mid - mu) / sd \
            + kern.beta[:, None, None, None, None]
        hs, ws = mid.shape[3], mid.shape[4]
        ref = np.stack([np.stack([conv2d_scalar(mid[:, :, :, u, v], kern.w_query, (1, 1), 1)
                                  for v in range(ws)], axis=-1)
                        for u in range(hs)], axis=-2)
        ref = ref + kern.b_query[:, None, None, None, None]
        got = conv4d_separable(x, kern, cfg)
        np.testing.assert_allclose(got, ref, atol=1e-8)


class TestBackwardAdjoints:
    def test_original_adjoint_identities(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((2, 3, 3, 4, 4))
        w = rng.standard_normal((2, 2, 3, 3, 3, 3))
        b = rng.standard_normal(2)
        cfg = Conv4dConfig(2, 2, 3, (1, 1, 2, 2), variant=ORIGINAL)
        kern = Kernel4d.original(w, b)
        y = conv4d_original(x, kern, cfg)
        g = rng.standard_normal(y.shape)
        dx, dw, db = conv4d_original_backward(g, x, kern, cfg)
        lin = float((conv4d_original(x, Kernel4d.original(w, np.zeros(2)), cfg) * g).sum())
        assert lin == pytest.approx(float((x * dx).sum()), rel=1e-9)
        assert lin == pytest.approx(float((w * dw).sum()), rel=1e-9)
        np.testing.assert_allclose(db, g.sum(axis=(1, 2, 3, 4)), atol=1e-12)

    def test_center_pivot_adjoint_identities(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((2, 4, 4, 5, 5))
        kern = _cp_kernel(rng, 3, 2, 3)
        cfg = Conv4dConfig(2, 3, 3, (1, 1, 2, 2))
        y = conv4d_center_pivot(x, kern, cfg)
        g = rng.standard_normal(y.shape)
        dx, dws, dwq, dbs, dbq = conv4d_center_pivot_backward(g, x, kern, cfg)
        zero_bias = Kernel4d.center_pivot(kern.w_support, kern.w_query)
        lin = float((conv4d_center_pivot(x, zero_bias, cfg) * g).sum())
        assert lin == pytest.approx(float((x * dx).sum()), rel=1e-9)
        assert lin == pytest.approx(
            float((kern.w_support * dws).sum() + (kern.w_query * dwq).sum()), rel=1e-9)
        np.testing.assert_allclose(dbs, g.sum(axis=(1, 2, 3, 4)), atol=1e-12)
        np.testing.assert_allclose(dbq, g.sum(axis=(1, 2, 3, 4)), atol=1e-12)

    def test_separable_input_adjoint_identity(self):
        """With normalization off the map is linear in the input."""
        rng = np.random.default_rng(13)
        x = rng.standard_normal((2, 4, 4, 4, 4))
        kern = Kernel4d.separable(rng.standard_normal((2, 2, 3, 3)),
                                  rng.standard_normal((2, 2, 3, 3)),
                                  normalize=False)
        cfg = Conv4dConfig(2, 2, 3, (1, 1, 1, 1), variant=SEPARABLE, bias=False)
        y = conv4d_separable(x, kern, cfg)
        g = rng.standard_normal(y.shape)
        dx = conv4d_separable_backward(g, x, kern, cfg)[0]
        assert float((y * g).sum()) == pytest.approx(float((x * dx).sum()), rel=1e-9)


class TestParamCounts:
    def test_center_pivot_formula(self):
        """2 * (k^2 * in * out + out) with biases on."""
        assert conv4d_param_count(Conv4dConfig(128, 128, 3, (1, 1, 1, 1))) == \
            2 * (9 * 128 * 128 + 128)

    def test_original_formula(self):
        """k^4 * in * out + out."""
        cfg = Conv4dConfig(128, 128, 3, (1, 1, 1, 1), variant=ORIGINAL)
        assert conv4d_param_count(cfg) == 81 * 128 * 128 + 128

    def test_mixing_block_center_pivot(self):
        """Three 128->128 center-pivot convs plus group-norm affine: 886,272."""
        cfgs = [Conv4dConfig(128, 128, 3, (1, 1, 1, 1)) for _ in range(3)]
        assert count_params(cfgs, norm_channels=[128] * 3) == 886272

    def test_mixing_block_original(self):
        """Same block with dense kernels: 3*(81*128*128 + 128) + 3*2*128."""
        cfgs = [Conv4dConfig(128, 128, 3, (1, 1, 1, 1), variant=ORIGINAL)
                for _ in range(3)]
        assert count_params(cfgs, norm_channels=[128] * 3) == 3982464

    def test_decoder_conv_stack(self):
        """Biased 3x3 2D convs 128->128->64, 64->64->2 total 259,458."""
        convs = [(128, 128), (128, 64), (64, 64), (64, 2)]
        assert sum(conv2d_param_count(ci, co, 3) for ci, co in convs) == 259458

    def test_norm_affine_count(self):
        assert norm_param_count(128) == 256

    def test_full_architecture_totals(self):
        arch = get_arch("resnet101")
        assert arch.total_params(CENTER_PIVOT) == 2587394
        assert arch.total_params(ORIGINAL) == 11296690


class TestFlopCounts:
    def test_single_center_pivot_conv(self):
        """1->1 channels, kernel 3, input (1,4,4,4,4), stride 1: 2*256*18."""
        cfg = Conv4dConfig(1, 1, 3, (1, 1, 1, 1))
        assert conv4d_flop_count(cfg, (4, 4, 4, 4)) == 9216

    def test_weight_tap_ratio_is_4_5(self):
        """Dense vs center-pivot taps at kernel 3: 81 / 18 = 4.5 exactly."""
        cp = Conv4dConfig(16, 32, 3, (1, 1, 1, 1))
        orig = Conv4dConfig(16, 32, 3, (1, 1, 1, 1), variant=ORIGINAL)
        assert conv4d_weight_taps(orig) / conv4d_weight_taps(cp) == 4.5

    def test_full_stack_ordering(self):
        """Center-pivot < separable < original on the deepest full-scale stack."""
        arch = get_arch("resnet101")
        flops = {v: arch.total_conv4d_flops(v)
                 for v in (CENTER_PIVOT, SEPARABLE, ORIGINAL)}
        assert flops[CENTER_PIVOT] < flops[SEPARABLE] < flops[ORIGINAL]

    def test_count_flops_sums_layers(self):
        cfg = Conv4dConfig(1, 1, 3, (1, 1, 1, 1))
        ext = (4, 4, 4, 4)
        assert count_flops([cfg, cfg], [ext, ext]) == 2 * 9216

    def test_layer_count_mismatch_rejected(self):
        cfg = Conv4dConfig(1, 1, 3, (1, 1, 1, 1))
        with pytest.raises(ShapeError):
            count_flops([cfg, cfg], [(4, 4, 4, 4)])


class TestInitKernel:
    @pytest.mark.parametrize("variant", [CENTER_PIVOT, ORIGINAL, SEPARABLE])
    def test_shapes_match_variant(self, variant):
        cfg = Conv4dConfig(3, 5, 3, (1, 1, 1, 1), variant=variant)
        kern = init_kernel(cfg, np.random.default_rng(0))
        assert kern.variant == variant
        if variant == ORIGINAL:
            assert kern.w.shape == (5, 3, 3, 3, 3, 3)
        else:
            assert kern.w_support.shape == (5, 3, 3, 3)

    def test_deterministic_by_seed(self):
        cfg = Conv4dConfig(2, 2, 3, (1, 1, 1, 1))
        a = init_kernel(cfg, np.random.default_rng(42))
        b = init_kernel(cfg, np.random.default_rng(42))
        np.testing.assert_array_equal(a.w_support, b.w_support)
