import numpy as np
from django.test import SimpleTestCase

from dtop.config import EncoderConfig
from kernels.ops import ShapeError

from .positions import PositionEmbedding, fold, position_sequence, resample_positions, unfold
from .transformer import (
    TokenSequence,
    cls_attention_map,
    encode,
    image_tokens,
    patchify,
    stem_forward,
)
from .weights import init_encoder_weights, normal_draw, zeros_draw


def random_weights(seed, dim=32, depth=4, heads=4, std=0.1, use_stem=False, patch_size=16):
    cfg = EncoderConfig(dim=dim, depth=depth, heads=heads, use_stem=use_stem,
                        patch_size=patch_size, pos_grid=(3, 2))
    return cfg, init_encoder_weights(cfg, normal_draw(np.random.default_rng(seed), std))


def random_sequence(rng, w, h, dim):
    tokens = rng.standard_normal((w * h + 1, dim)).astype(np.float32)
    return TokenSequence(tokens, w, h)


class PositionEmbeddingTests(SimpleTestCase):

    def setUp(self):
        rng = np.random.default_rng(7)
        self.pe = PositionEmbedding(
            cls_pos=rng.standard_normal(8).astype(np.float32),
            grid=rng.standard_normal((4, 6, 8)).astype(np.float32),
        )

    def test_identity_at_stored_size(self):
        pos = resample_positions(self.pe, 6, 4)
        self.assertEqual(pos[1:].tobytes(), fold(self.pe.grid).tobytes())

    def test_cls_row_untouched(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            w, h = (int(v) for v in rng.integers(1, 40, size=2))
            mode = 'bilinear' if rng.random() < 0.5 else 'bicubic'
            pos = resample_positions(self.pe, w, h, mode)
            self.assertEqual(pos.shape, (w * h + 1, 8))
            self.assertEqual(pos[0].tobytes(), self.pe.cls_pos.tobytes())

    def test_two_to_three(self):
        pe = PositionEmbedding(cls_pos=np.zeros(1), grid=np.array([[[2.0], [4.0]]]))
        pos = resample_positions(pe, 3, 1)
        np.testing.assert_array_equal(pos[1:, 0], [2, 3, 4])

    def test_fold_unfold_round_trip(self):
        self.assertEqual(fold(unfold(fold(self.pe.grid), 6, 4)).tobytes(), fold(self.pe.grid).tobytes())
        np.testing.assert_array_equal(unfold(fold(self.pe.grid), 6, 4), self.pe.grid)

    def test_bilinear_stays_within_source_range(self):
        pos = resample_positions(self.pe, 13, 9)[1:]
        self.assertTrue(np.all(pos >= self.pe.grid.min(axis=(0, 1)) - 1e-6))
        self.assertTrue(np.all(pos <= self.pe.grid.max(axis=(0, 1)) + 1e-6))

    def test_modes(self):
        np.testing.assert_array_equal(position_sequence(self.pe, 3, 2, 'none'), 0)
        with self.assertRaisesMessage(NotImplementedError, 'not implemented'):
            position_sequence(self.pe, 3, 2, 'cpe')
        with self.assertRaises(ShapeError):
            resample_positions(self.pe, 0, 3)


class TokenFormationTests(SimpleTestCase):

    def test_single_patch(self):
        projection = np.ones((3 * 16 * 16, 4), dtype=np.float32)
        seq = patchify(np.ones((3, 16, 16)), 16, projection)
        self.assertEqual(seq.tokens.shape, (1, 4))
        self.assertEqual((seq.w, seq.h), (1, 1))

    def test_zero_image(self):
        rng = np.random.default_rng(0)
        projection = rng.standard_normal((3 * 16 * 16, 4)).astype(np.float32)
        seq = patchify(np.zeros((3, 32, 16)), 16, projection, np.zeros(4))
        np.testing.assert_array_equal(seq.tokens, 0)

    def test_row_major_patch_order(self):
        rng = np.random.default_rng(1)
        image = rng.random((3, 32, 32)).astype(np.float32)
        projection = rng.standard_normal((3 * 16 * 16, 5)).astype(np.float32)
        seq = patchify(image, 16, projection)
        self.assertEqual(seq.tokens.shape[0], 4)
        for index, (row, col) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
            patch = image[:, row * 16:(row + 1) * 16, col * 16:(col + 1) * 16].reshape(-1)
            expected = patch.astype(np.float64) @ projection.astype(np.float64)
            np.testing.assert_allclose(seq.tokens[index], expected, rtol=1e-5, atol=1e-5)

    def test_non_divisible(self):
        with self.assertRaises(ShapeError):
            patchify(np.zeros((3, 20, 16)), 16, np.zeros((768, 4)))

    def test_stem_output_shape(self):
        cfg = EncoderConfig()
        weights = init_encoder_weights(cfg, normal_draw(np.random.default_rng(0), 0.02))
        grid = stem_forward(np.random.default_rng(1).random((3, 64, 96)), weights.stem)
        self.assertEqual(grid.shape, (64 // 16, 96 // 16, cfg.dim))
        seq = image_tokens(np.zeros((3, 64, 96)), weights, cfg)
        self.assertEqual((seq.w, seq.h, seq.tokens.shape[0]), (6, 4, 24))

    def test_stem_zero_image(self):
        cfg = EncoderConfig(dim=32)
        weights = init_encoder_weights(cfg, normal_draw(np.random.default_rng(0), 0.5))
        np.testing.assert_array_equal(stem_forward(np.zeros((3, 32, 48)), weights.stem), 0)

    def test_stem_constant_image_interior(self):
        cfg = EncoderConfig(dim=32)
        rng = np.random.default_rng(2)
        weights = init_encoder_weights(cfg, normal_draw(rng, 0.5))
        for block in weights.stem:
            block.bias[...] = rng.standard_normal(block.bias.shape)
        grid = stem_forward(np.full((3, 96, 96), 0.5), weights.stem)
        # only the first row / column ever reads padding
        interior = grid[1:, 1:]
        np.testing.assert_allclose(interior, np.broadcast_to(interior[0, 0], interior.shape), atol=1e-6)

    def test_stem_non_divisible(self):
        cfg = EncoderConfig(dim=32)
        weights = init_encoder_weights(cfg, zeros_draw)
        with self.assertRaises(ShapeError):
            stem_forward(np.zeros((3, 40, 32)), weights.stem)


class EncodeTests(SimpleTestCase):

    def test_empty_encoder(self):
        _, weights = random_weights(0, depth=0)
        seq = random_sequence(np.random.default_rng(0), 3, 2, 32)
        pos = np.random.default_rng(1).standard_normal((7, 32)).astype(np.float32)
        out = encode(seq, pos, weights, heads=4)
        self.assertEqual(len(out.layers), 1)
        np.testing.assert_allclose(out.layers[0], seq.tokens + pos, atol=1e-6)

    def test_zero_positions(self):
        _, weights = random_weights(0, depth=2)
        seq = random_sequence(np.random.default_rng(0), 3, 2, 32)
        out = encode(seq, np.zeros((7, 32)), weights, heads=4)
        np.testing.assert_array_equal(out.layers[0], seq.tokens)
        self.assertEqual(len(out.layers), 3)

    def test_permutation_equivariance(self):
        _, weights = random_weights(3, dim=32, depth=4, heads=4)
        rng = np.random.default_rng(4)
        seq = random_sequence(rng, 3, 2, 32)
        perm = rng.permutation(6)
        permuted = TokenSequence(np.concatenate([seq.tokens[:1], seq.tokens[1:][perm]]), 3, 2)
        zeros = np.zeros((7, 32))
        base = encode(seq, zeros, weights, heads=4)
        moved = encode(permuted, zeros, weights, heads=4)
        for z, z_perm in zip(base.layers, moved.layers):
            self.assertLess(np.abs(z[1:][perm] - z_perm[1:]).max(), 1e-5)
            self.assertLess(np.abs(z[0] - z_perm[0]).max(), 1e-5)

    def test_attention_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        for trial in range(10):
            heads = int(rng.choice([1, 2, 4]))
            w, h = (int(v) for v in rng.integers(1, 5, size=2))
            _, weights = random_weights(trial, dim=16, depth=3, heads=heads, std=0.5)
            seq = random_sequence(rng, w, h, 16)
            out = encode(seq, rng.standard_normal((w * h + 1, 16)), weights, heads=heads)
            for attn in out.attention:
                self.assertEqual(attn.shape, (heads, w * h + 1, w * h + 1))
                np.testing.assert_allclose(attn.astype(np.float64).sum(axis=-1), 1.0, atol=1e-5)

    def test_zero_branches_keep_residual_stream(self):
        _, weights = random_weights(6, depth=3)
        for layer in weights.layers:
            layer.zero_residual_branches()
        seq = random_sequence(np.random.default_rng(6), 2, 2, 32)
        out = encode(seq, np.zeros((5, 32)), weights, heads=4)
        for z in out.layers:
            np.testing.assert_array_equal(z, out.layers[0])

    def test_deterministic(self):
        _, weights = random_weights(7, depth=2)
        seq = random_sequence(np.random.default_rng(7), 3, 2, 32)
        first = encode(seq, np.zeros((7, 32)), weights, heads=4)
        second = encode(seq, np.zeros((7, 32)), weights, heads=4)
        for a, b in zip(first.layers + first.attention, second.layers + second.attention):
            self.assertEqual(a.tobytes(), b.tobytes())

    def test_shape_mismatch(self):
        _, weights = random_weights(0, depth=1)
        seq = random_sequence(np.random.default_rng(0), 3, 2, 32)
        with self.assertRaises(ShapeError):
            encode(seq, np.zeros((6, 32)), weights, heads=4)


class ClsAttentionTests(SimpleTestCase):

    def test_uniform_when_queries_and_keys_vanish(self):
        _, weights = random_weights(0, depth=2)
        for layer in weights.layers:
            layer.wq[...] = 0
            layer.wk[...] = 0
        seq = random_sequence(np.random.default_rng(0), 3, 2, 32)
        out = encode(seq, np.zeros((7, 32)), weights, heads=4)
        attn = cls_attention_map(out, 2)
        self.assertEqual(attn.shape, (2, 3))
        np.testing.assert_allclose(attn, 1 / 7, atol=1e-7)

    def test_single_patch(self):
        _, weights = random_weights(1, depth=1)
        out = encode(random_sequence(np.random.default_rng(1), 1, 1, 32), np.zeros((2, 32)), weights, heads=4)
        self.assertEqual(cls_attention_map(out, 1).shape, (1, 1))

    def test_sums_to_one_minus_self_weight(self):
        _, weights = random_weights(2, depth=3, std=0.5)
        out = encode(random_sequence(np.random.default_rng(2), 3, 2, 32), np.zeros((7, 32)), weights, heads=4)
        for layer in (1, 2, 3):
            self_weight = out.attention[layer - 1].astype(np.float64).mean(axis=0)[0, 0]
            self.assertAlmostEqual(float(cls_attention_map(out, layer).sum()), 1 - self_weight, delta=1e-5)

    def test_layer_range(self):
        _, weights = random_weights(3, depth=2)
        out = encode(random_sequence(np.random.default_rng(3), 2, 2, 32), np.zeros((5, 32)), weights, heads=4)
        with self.assertRaises(ValueError):
            cls_attention_map(out, 0)
        with self.assertRaises(ValueError):
            cls_attention_map(out, 3)
