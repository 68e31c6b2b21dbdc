from dataclasses import replace
from unittest import mock

import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from dtop.config import ElmConfig, EncoderConfig, FusionConfig, HeadConfig, ModelConfig
from encoder.transformer import EncoderOutputs
from encoder.weights import ConvWeights, normal_draw, zeros_draw
from kernels.ops import ShapeError, fc, gap

from . import elm as elm_module
from .elm import aspp, elm, irb, waveblock
from .fusion import fast_normalized_weights, fuse, orthogonal_residual
from .head import collect_multilayer, global_branch, local_branch, output_head, reduce_channels
from .model import DToPModel
from .weights import AsppWeights, BatchNormStats, HeadWeights, init_elm_weights


def tagged_outputs(depth, w=2, h=3, dim=4):
    """Encoder outputs whose layer l is filled with the value l."""
    layers = [np.full((w * h + 1, dim), layer, dtype=np.float32) for layer in range(depth + 1)]
    return EncoderOutputs(layers=layers, attention=[None] * depth, w=w, h=h)


def random_map(seed, h=4, w=5, c=6):
    return np.random.default_rng(seed).standard_normal((h, w, c)).astype(np.float32)


class FixedDraw:
    """Stand-in generator that always draws the same block."""

    def __init__(self, value):
        self.value = value

    def integers(self, high):
        return self.value


def small_config(**head):
    encoder = EncoderConfig(dim=16, depth=3, heads=2, use_stem=False, patch_size=8, pos_grid=(2, 2))
    head_cfg = HeadConfig(k=2, out_dim=12, elm=ElmConfig(dilation_rates=(1, 2)), **head)
    return ModelConfig(encoder=encoder, head=head_cfg)


class MultiLayerTests(SimpleTestCase):

    def test_last_layer_only(self):
        outputs = tagged_outputs(3)
        features = collect_multilayer(outputs, 1)
        np.testing.assert_array_equal(features.f_c, outputs.layers[3][:1])
        self.assertEqual(features.f_p.shape, (1, 3, 2, 4))

    def test_stacking_order(self):
        features = collect_multilayer(tagged_outputs(2), 2)
        np.testing.assert_array_equal(features.f_c[:, 0], [1, 2])
        np.testing.assert_array_equal(features.f_p[0], 1)
        np.testing.assert_array_equal(features.f_p[1], 2)

    def test_default_k(self):
        features = collect_multilayer(tagged_outputs(12, dim=8), 6)
        self.assertEqual(features.f_c.shape, (6, 8))
        np.testing.assert_array_equal(features.f_c[:, 0], np.arange(7, 13))

    def test_k_out_of_range(self):
        with self.assertRaises(ValueError):
            collect_multilayer(tagged_outputs(2), 3)
        with self.assertRaises(ValueError):
            collect_multilayer(tagged_outputs(2), 0)


class BranchTests(SimpleTestCase):

    def test_global_zero(self):
        out = global_branch(np.zeros((3, 4)), np.ones((12, 5)), np.zeros(5))
        np.testing.assert_array_equal(out, 0)

    def test_global_identity(self):
        z = np.arange(4, dtype=np.float32)
        np.testing.assert_array_equal(global_branch(z[None], np.eye(4)), z)

    def test_global_default_dims(self):
        out = global_branch(np.ones((6, 768)), np.zeros((6 * 768, 1536), dtype=np.float32))
        self.assertEqual(out.shape, (1536,))
        with self.assertRaises(ShapeError):
            global_branch(np.ones((5, 768)), np.zeros((6 * 768, 1536), dtype=np.float32))

    def test_reduce_identity_and_zero(self):
        f_p = random_map(0)[None]
        np.testing.assert_array_equal(reduce_channels(f_p, np.eye(6)), f_p[0])
        np.testing.assert_array_equal(reduce_channels(f_p, np.zeros((6, 6))), 0)

    def test_reduce_per_position(self):
        rng = np.random.default_rng(1)
        f_p = rng.standard_normal((3, 2, 4, 5)).astype(np.float32)
        weights = rng.standard_normal((15, 5)).astype(np.float32)
        out = reduce_channels(f_p, weights)
        for y in range(2):
            for x in range(4):
                stacked = np.concatenate([f_p[j, y, x] for j in range(3)])
                np.testing.assert_allclose(out[y, x], fc(stacked, weights), rtol=1e-5, atol=1e-5)

    def test_local_branch(self):
        constant = np.full((3, 3, 4), 2.0, dtype=np.float32)
        weights = np.random.default_rng(2).standard_normal((4, 3)).astype(np.float32)
        np.testing.assert_allclose(local_branch(constant, weights), fc(np.full(4, 2.0), weights))
        np.testing.assert_array_equal(local_branch(np.zeros((2, 2, 4)), weights, [1, 2, 3]), [1, 2, 3])
        y = random_map(3, c=4)
        mean = y.astype(np.float64).reshape(-1, 4).mean(axis=0)
        np.testing.assert_allclose(local_branch(y, weights), mean @ weights, rtol=1e-5, atol=1e-6)


class WaveBlockTests(SimpleTestCase):

    def test_identity_at_inference(self):
        y = random_map(0)
        out = waveblock(y, ElmConfig(mode='infer'), None)
        self.assertEqual(out.tobytes(), y.tobytes())

    def test_single_block_is_identity(self):
        y = random_map(1)
        out = waveblock(y, ElmConfig(mode='train', wb_blocks=1), np.random.default_rng(0))
        np.testing.assert_array_equal(out, y)

    def test_keeps_drawn_block(self):
        y = random_map(2, h=4)
        out = waveblock(y, ElmConfig(mode='train', wb_blocks=2, wb_scale=0.5), FixedDraw(0))
        np.testing.assert_array_equal(out[:2], y[:2])
        np.testing.assert_allclose(out[2:], y[2:] * 0.5)

    def test_too_many_blocks(self):
        with self.assertRaises(ValueError):
            waveblock(random_map(3, h=2), ElmConfig(mode='train', wb_blocks=3), FixedDraw(0))


class ElmTests(SimpleTestCase):

    def setUp(self):
        self.cfg = ElmConfig(dilation_rates=(6, 12, 18))
        self.weights = init_elm_weights(6, self.cfg, normal_draw(np.random.default_rng(0), 0.2))

    def test_zero_irb_is_identity(self):
        zero = init_elm_weights(6, self.cfg, zeros_draw).irb
        y = random_map(1)
        np.testing.assert_array_equal(irb(y, zero), y)

    def test_irb_shapes(self):
        self.assertEqual(init_elm_weights(64, ElmConfig(), zeros_draw).irb.hidden, 256)
        for h, w in ((1, 1), (3, 7), (6, 2)):
            self.assertEqual(irb(random_map(2, h, w), self.weights.irb).shape, (h, w, 6))

    def test_aspp_defaults_and_zero(self):
        self.assertEqual(ElmConfig().dilation_rates, (6, 12, 18))
        zero = init_elm_weights(6, self.cfg, zeros_draw).aspp
        np.testing.assert_array_equal(aspp(random_map(3), zero, self.cfg), 0)

    def test_aspp_delta_identity(self):
        kernel = np.zeros((3, 3, 4, 4), dtype=np.float32)
        kernel[1, 1] = np.eye(4)
        weights = AsppWeights(
            branches=[ConvWeights(weight=kernel, bias=np.zeros(4, dtype=np.float32))],
            reduce_w=np.eye(4, dtype=np.float32),
            reduce_b=np.zeros(4, dtype=np.float32),
        )
        y = random_map(4, c=4)
        np.testing.assert_array_equal(aspp(y, weights, ElmConfig(dilation_rates=(1,))), y)

    def test_small_maps_keep_shape(self):
        out = elm(random_map(5, 7, 7), self.weights, self.cfg)
        self.assertEqual(out.shape, (7, 7, 6))

    def test_inference_skips_waveblocks(self):
        y = random_map(6)
        expected = aspp(irb(y, self.weights.irb), self.weights.aspp, self.cfg)
        np.testing.assert_array_equal(elm(y, self.weights, self.cfg), expected)

    def test_zero_reduce(self):
        weights = init_elm_weights(6, self.cfg, normal_draw(np.random.default_rng(1), 0.2))
        weights.aspp.reduce_w[...] = 0
        np.testing.assert_array_equal(elm(random_map(7), weights, self.cfg), 0)

    def test_component_order(self):
        calls = []

        def record(name, real):
            def wrapper(*args, **kwargs):
                calls.append(name)
                return real(*args, **kwargs)
            return wrapper

        with mock.patch.object(elm_module, 'waveblock', record('wb', waveblock)), \
                mock.patch.object(elm_module, 'irb', record('irb', irb)), \
                mock.patch.object(elm_module, 'aspp', record('aspp', aspp)):
            elm_module.elm(random_map(8), self.weights, replace(self.cfg, mode='train'),
                           np.random.default_rng(0))
        self.assertEqual(calls, ['wb', 'irb', 'wb', 'aspp'])

    def test_deterministic_inference(self):
        y = random_map(9)
        first = elm(y, self.weights, self.cfg)
        second = elm(y, self.weights, self.cfg)
        self.assertEqual(first.tobytes(), second.tobytes())


class FusionTests(SimpleTestCase):

    def test_default_method(self):
        self.assertEqual(FusionConfig().method, 'orthogonal')

    def test_no_fusion(self):
        y, u = random_map(0), random_map(1)
        np.testing.assert_array_equal(fuse(y, u, FusionConfig(method='none_without_elm')), y)
        np.testing.assert_array_equal(fuse(y, u, FusionConfig(method='none_with_elm')), u)

    def test_hadamard_identity(self):
        y = random_map(2)
        np.testing.assert_array_equal(fuse(y, np.ones_like(y), FusionConfig(method='hadamard')), y)

    def test_commutative(self):
        y, u = random_map(3), random_map(4)
        for method in ('sum', 'hadamard'):
            cfg = FusionConfig(method=method)
            np.testing.assert_array_equal(fuse(y, u, cfg), fuse(u, y, cfg))

    def test_concat_width(self):
        y, u = random_map(5), random_map(6)
        out = fuse(y, u, FusionConfig(method='concat'))
        self.assertEqual(out.shape, (4, 5, 12))
        np.testing.assert_array_equal(out[..., 6:], u)

    def test_orthogonal_hand_case(self):
        y = np.array([[[1.0, 1.0]]], dtype=np.float32)
        u = np.array([[[2.0, 0.0]]], dtype=np.float32)
        out = fuse(y, u, FusionConfig(method='orthogonal'))
        np.testing.assert_allclose(out[0, 0], [0, 1, 2, 0], atol=1e-7)

    def test_orthogonal_residual_is_orthogonal(self):
        y, u = random_map(7), random_map(8)
        residual = orthogonal_residual(y, u).astype(np.float64)
        dots = np.abs((residual * u).sum(axis=-1))
        bound = 1e-5 * np.linalg.norm(y, axis=-1) * np.linalg.norm(u, axis=-1)
        self.assertTrue(np.all(dots <= bound))

    def test_orthogonal_degenerate_direction(self):
        y = random_map(9)
        np.testing.assert_array_equal(orthogonal_residual(y, np.zeros_like(y)), y)

    def test_fast_normalized_closed_form(self):
        y, u = random_map(10), random_map(11)
        v, eps = 0.7, 1e-4
        out = fuse(y, u, FusionConfig(method='fast_normalized', v1=v, v2=v, eps=eps))
        expected = v * (y.astype(np.float64) + u) / (2 * v + eps)
        np.testing.assert_allclose(out, expected, atol=1e-6)

    def test_fast_normalized_bounds(self):
        y, u = np.abs(random_map(12)), np.abs(random_map(13))
        cfg = FusionConfig(method='fast_normalized', v1=0.3, v2=1.9, eps=1e-3)
        out = fuse(y, u, cfg).astype(np.float64)
        w_sum = 0.3 + 1.9
        low = np.minimum(y, u) * w_sum / (w_sum + cfg.eps)
        self.assertTrue(np.all(out >= low - 1e-6))
        self.assertTrue(np.all(out <= np.maximum(y, u) + 1e-6))

    def test_fast_normalized_rejects_dead_weights(self):
        with self.assertRaises(ValueError):
            fast_normalized_weights(0.0, -1.0, 0.0)
        self.assertEqual(fast_normalized_weights(-2.0, 3.0, 0.0), (0.0, 3.0))

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            fuse(random_map(0), random_map(1, h=3), FusionConfig())

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**31 - 1))
    def test_orthogonality_property(self, seed):
        rng = np.random.default_rng(seed)
        y = rng.standard_normal((3, 3, 5)).astype(np.float32)
        u = rng.standard_normal((3, 3, 5)).astype(np.float32)
        residual = orthogonal_residual(y, u).astype(np.float64)
        dots = np.abs((residual * u).sum(axis=-1))
        bound = 1e-5 * np.linalg.norm(y, axis=-1) * np.linalg.norm(u, axis=-1)
        self.assertTrue(np.all(dots <= bound + 1e-12))


class OutputHeadTests(SimpleTestCase):

    def head_weights(self, n=3, seed=0):
        rng = np.random.default_rng(seed)
        return HeadWeights(
            out_w=rng.standard_normal((2 * n, n)).astype(np.float32),
            out_b=np.arange(n, dtype=np.float32),
            bn=BatchNormStats(
                mean=np.full(n, 0.5, dtype=np.float32),
                var=np.full(n, 4.0, dtype=np.float32),
                gamma=np.full(n, 2.0, dtype=np.float32),
                beta=np.full(n, -1.0, dtype=np.float32),
            ),
        )

    def test_zero_input_gives_bias(self):
        weights = self.head_weights()
        np.testing.assert_array_equal(output_head(np.zeros(3), np.zeros(3), weights), [0, 1, 2])

    def test_inference_is_deterministic(self):
        weights = self.head_weights()
        rng = np.random.default_rng(1)
        u_c, u_p = rng.standard_normal(3), rng.standard_normal(3)
        self.assertEqual(
            output_head(u_c, u_p, weights).tobytes(), output_head(u_c, u_p, weights).tobytes()
        )

    def test_concatenation_order(self):
        weights = self.head_weights()
        weights.out_w = np.vstack([np.eye(3), np.zeros((3, 3))]).astype(np.float32)
        weights.out_b[...] = 0
        u_c, u_p = np.array([1.0, 2.0, 3.0]), np.array([7.0, 8.0, 9.0])
        np.testing.assert_array_equal(output_head(u_c, u_p, weights), u_c)
        weights.out_w = np.vstack([np.zeros((3, 3)), np.eye(3)]).astype(np.float32)
        np.testing.assert_array_equal(output_head(u_c, u_p, weights), u_p)

    def test_batchnorm_only_in_training(self):
        weights = self.head_weights()
        rng = np.random.default_rng(2)
        u_c, u_p = rng.standard_normal(3), rng.standard_normal(3)
        infer = output_head(u_c, u_p, weights, 'infer')
        hand = np.concatenate([u_c, u_p]) @ weights.out_w.astype(np.float64) + weights.out_b
        np.testing.assert_allclose(infer, hand, rtol=1e-5, atol=1e-6)
        train = output_head(u_c, u_p, weights, 'train', np.random.default_rng(0), rate=0.0, bn_eps=0.0)
        np.testing.assert_allclose(train, 2 * (infer - 0.5) / 2 - 1, rtol=1e-5, atol=1e-6)
        self.assertFalse(np.allclose(train, infer))

    def test_width_mismatch(self):
        with self.assertRaises(ShapeError):
            output_head(np.zeros(3), None, self.head_weights())


class ModelTests(SimpleTestCase):

    def image(self, seed=0, size=(32, 48)):
        return np.random.default_rng(seed).random((3, *size)).astype(np.float32)

    def test_descriptor_shape(self):
        model = DToPModel.initialize(small_config())
        u = model.describe(self.image())
        self.assertEqual(u.shape, (12,))
        self.assertTrue(np.all(np.isfinite(u)))

    def test_single_branch_variants(self):
        for head in ({'use_local': False}, {'use_global': False}):
            model = DToPModel.initialize(small_config(**head))
            self.assertEqual(model.head_weights.out_w.shape, (12, 12))
            self.assertEqual(model.describe(self.image()).shape, (12,))
        self.assertIsNone(DToPModel.initialize(small_config(use_local=False)).head_weights.elm)

    def test_every_fusion_runs(self):
        for method in ('none_without_elm', 'none_with_elm', 'sum', 'hadamard',
                       'concat', 'fast_normalized', 'orthogonal'):
            config = small_config(fusion=FusionConfig(method=method))
            model = DToPModel.initialize(config)
            self.assertEqual(model.describe(self.image(1)).shape, (12,), method)

    def test_no_elm_means_plain_reduction(self):
        model = DToPModel.initialize(small_config(use_elm=False, fusion=FusionConfig(method='sum')))
        self.assertEqual(model.config.head.fusion_method, 'none_without_elm')
        self.assertEqual(model.head_weights.local_w.shape, (16, 12))

    def test_train_and_infer_differ_with_batchnorm_stats(self):
        config = small_config(dropout=0.0)
        model = DToPModel.initialize(config)
        model.head_weights.bn.mean[...] = 0.3
        model.head_weights.bn.var[...] = 2.0
        outputs = model.encode_image(self.image(2))
        infer = model.pool(outputs)
        train = model.pool(outputs, 'train', np.random.default_rng(0))
        self.assertFalse(np.allclose(infer, train))

    def test_state_round_trip(self):
        model = DToPModel.initialize(small_config(), seed=4)
        clone = DToPModel.skeleton(model.config).load_state(dict(model.state()))
        image = self.image(3)
        self.assertEqual(model.describe(image).tobytes(), clone.describe(image).tobytes())

    def test_same_seed_same_weights(self):
        first = DToPModel.initialize(small_config(), seed=9).state()
        second = DToPModel.initialize(small_config(), seed=9).state()
        self.assertEqual([name for name, _ in first], [name for name, _ in second])
        for (_, a), (_, b) in zip(first, second):
            self.assertEqual(a.tobytes(), b.tobytes())
