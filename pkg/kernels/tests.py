import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from . import ops
from .ops import ShapeError


def random_map(rng, *shape):
    return rng.standard_normal(shape).astype(np.float32)


class Conv2dTests(SimpleTestCase):

    def test_identity_1x1(self):
        rng = np.random.default_rng(0)
        x = random_map(rng, 4, 5, 3)
        weights = np.eye(3, dtype=np.float32).reshape(1, 1, 3, 3)
        out = ops.conv2d(x, weights, np.zeros(3))
        np.testing.assert_array_equal(out, x)

    def test_depthwise_all_ones(self):
        x = np.ones((3, 3, 1), dtype=np.float32)
        weights = np.ones((3, 3, 1, 1), dtype=np.float32)
        out = ops.conv2d(x, weights, groups=1)[..., 0]
        np.testing.assert_array_equal(out, [[4, 6, 4], [6, 9, 6], [4, 6, 4]])

    def test_dilated_receptive_field(self):
        x = np.zeros((5, 5, 1), dtype=np.float32)
        x[2, 2, 0] = 1
        weights = np.ones((3, 3, 1, 1), dtype=np.float32)
        out = ops.conv2d(x, weights, dilation=2)[..., 0]
        expected = np.zeros((5, 5))
        for dy in (-2, 0, 2):
            for dx in (-2, 0, 2):
                expected[2 + dy, 2 + dx] = 1
        np.testing.assert_array_equal(out, expected)

    def test_grouped_delta_kernels_are_identity(self):
        rng = np.random.default_rng(1)
        x = random_map(rng, 5, 4, 6)
        weights = np.zeros((3, 3, 1, 6), dtype=np.float32)
        weights[1, 1, 0, :] = 1
        np.testing.assert_array_equal(ops.conv2d(x, weights, groups=6), x)

    def test_grouped_matches_per_group_convolution(self):
        rng = np.random.default_rng(2)
        x = random_map(rng, 4, 4, 4)
        weights = random_map(rng, 3, 3, 2, 6)
        out = ops.conv2d(x, weights, groups=2)
        first = ops.conv2d(x[..., :2], weights[..., :3])
        second = ops.conv2d(x[..., 2:], weights[..., 3:])
        np.testing.assert_allclose(out, np.concatenate([first, second], axis=-1), atol=1e-5)

    def test_large_dilation_preserves_shape(self):
        rng = np.random.default_rng(3)
        x = random_map(rng, 7, 7, 2)
        weights = random_map(rng, 3, 3, 2, 2)
        for rate in (6, 12, 18):
            self.assertEqual(ops.conv2d(x, weights, dilation=rate).shape, (7, 7, 2))

    def test_linearity(self):
        rng = np.random.default_rng(4)
        x, y = random_map(rng, 5, 5, 2), random_map(rng, 5, 5, 2)
        weights = random_map(rng, 3, 3, 2, 3)
        a, b = 0.7, -1.3
        left = ops.conv2d(a * x + b * y, weights)
        right = a * ops.conv2d(x, weights) + b * ops.conv2d(y, weights)
        np.testing.assert_allclose(left, right, rtol=1e-5, atol=1e-5)

    def test_errors(self):
        x = np.zeros((3, 3, 4), dtype=np.float32)
        with self.assertRaises(ShapeError):
            ops.conv2d(x, np.zeros((3, 3, 4, 2)), groups=3)
        with self.assertRaises(ShapeError):
            ops.conv2d(x, np.zeros((2, 2, 4, 2)))
        with self.assertRaises(ShapeError):
            ops.conv2d(x, np.zeros((3, 3, 3, 2)))

    def test_pure(self):
        rng = np.random.default_rng(5)
        x = random_map(rng, 6, 5, 3)
        weights = random_map(rng, 3, 3, 3, 4)
        first = ops.conv2d(x, weights, dilation=2)
        second = ops.conv2d(x, weights, dilation=2)
        self.assertEqual(first.tobytes(), second.tobytes())


class ResampleTests(SimpleTestCase):

    def test_identity_at_source_size(self):
        rng = np.random.default_rng(0)
        grid = random_map(rng, 3, 4, 5)
        for mode in ('bilinear', 'bicubic'):
            np.testing.assert_array_equal(ops.resample(grid, 4, 3, mode), grid)

    def test_single_cell_is_constant(self):
        grid = np.array([[[2.5, -1.0]]], dtype=np.float32)
        out = ops.bilinear_resample(grid, 5, 3)
        self.assertEqual(out.shape, (3, 5, 2))
        np.testing.assert_array_equal(out[..., 0], 2.5)
        np.testing.assert_array_equal(out[..., 1], -1.0)

    def test_two_to_three(self):
        grid = np.array([[[2.0], [4.0]]], dtype=np.float32)
        out = ops.bilinear_resample(grid, 3, 1)
        np.testing.assert_array_equal(out[0, :, 0], [2, 3, 4])

    def test_up_then_down_keeps_corners(self):
        rng = np.random.default_rng(1)
        grid = random_map(rng, 3, 4, 2)
        back = ops.bilinear_resample(ops.bilinear_resample(grid, 9, 7), 4, 3)
        for y, x in ((0, 0), (0, -1), (-1, 0), (-1, -1)):
            np.testing.assert_array_equal(back[y, x], grid[y, x])

    def test_bilinear_is_convex(self):
        rng = np.random.default_rng(2)
        grid = random_map(rng, 4, 4, 3)
        out = ops.bilinear_resample(grid, 11, 6)
        self.assertTrue(np.all(out >= grid.min(axis=(0, 1)) - 1e-6))
        self.assertTrue(np.all(out <= grid.max(axis=(0, 1)) + 1e-6))

    def test_bicubic_reproduces_linear_ramp(self):
        ramp = np.arange(5, dtype=np.float32).reshape(1, 5, 1)
        out = ops.bicubic_resample(ramp, 9, 1)
        # border taps are clamped, so only the interior is exactly linear
        np.testing.assert_allclose(out[0, 2:7, 0], np.linspace(0, 4, 9)[2:7], atol=1e-6)
        self.assertEqual(out[0, 0, 0], 0)
        self.assertEqual(out[0, -1, 0], 4)

    def test_rejects_non_positive_target(self):
        with self.assertRaises(ShapeError):
            ops.bilinear_resample(np.zeros((2, 2, 1)), 0, 2)


class PoolingAndLinearTests(SimpleTestCase):

    def test_gap(self):
        np.testing.assert_array_equal(ops.gap(np.full((3, 2, 4), 1.5)), np.full(4, 1.5))
        self.assertEqual(ops.gap(np.array([[[1], [2]], [[3], [4]]]))[0], 2.5)

    def test_gap_linearity(self):
        rng = np.random.default_rng(0)
        y1, y2 = random_map(rng, 3, 3, 2), random_map(rng, 3, 3, 2)
        np.testing.assert_allclose(
            ops.gap(2 * y1 - 3 * y2), 2 * ops.gap(y1) - 3 * ops.gap(y2), atol=1e-6
        )

    def test_fc(self):
        x = np.array([1.0, 2.0])
        np.testing.assert_array_equal(ops.fc(x, np.eye(2)), x)
        np.testing.assert_array_equal(ops.fc(x, np.eye(2), np.ones(2)), [2, 3])
        np.testing.assert_array_equal(ops.fc(np.zeros(3), np.ones((3, 2)), [4, 5]), [4, 5])
        with self.assertRaises(ShapeError):
            ops.fc(np.zeros(3), np.ones((2, 2)))

    def test_batchnorm(self):
        x = np.array([0.3, -2.0])
        np.testing.assert_allclose(
            ops.batchnorm_inference(x, [0, 0], [1, 1], [1, 1], [0, 0], eps=0), x, atol=1e-7
        )
        self.assertEqual(ops.batchnorm_inference([2.0], [1.0], [1.0], [3.0], [1.0], eps=0)[0], 4)
        self.assertEqual(ops.batchnorm_inference([1.5], [1.5], [4.0], [2.0], [0.25])[0], 0.25)
        with self.assertRaises(ValueError):
            ops.batchnorm_inference([1.0], [0.0], [0.0], [1.0], [0.0], eps=0)

    def test_layernorm(self):
        np.testing.assert_array_equal(ops.layernorm(np.full(4, 3.0), np.ones(4), np.zeros(4)), 0)
        np.testing.assert_allclose(
            ops.layernorm([1.0, -1.0], np.ones(2), np.zeros(2), eps=0), [1, -1]
        )
        rng = np.random.default_rng(0)
        out = ops.layernorm(rng.standard_normal(64) * 5 + 2, np.ones(64), np.zeros(64))
        self.assertAlmostEqual(float(out.mean()), 0.0, places=5)
        self.assertAlmostEqual(float(out.var()), 1.0, places=4)

    def test_softmax(self):
        np.testing.assert_allclose(ops.softmax(np.full(4, 7.0)), np.full(4, 0.25))
        np.testing.assert_allclose(ops.softmax([0.0, np.log(3.0)]), [0.25, 0.75], atol=1e-7)
        big = np.array([1000.0, 999.0, -5.0])
        out = ops.softmax(big)
        self.assertTrue(np.all(np.isfinite(out)))
        self.assertAlmostEqual(float(out.sum()), 1.0, places=6)
        np.testing.assert_allclose(ops.softmax(big - 1000), out, atol=1e-7)

    def test_l2_normalize(self):
        np.testing.assert_array_equal(ops.l2_normalize([0.0, 1.0]), [0, 1])
        np.testing.assert_allclose(ops.l2_normalize([3.0, 4.0]), [0.6, 0.8])
        with self.assertRaises(ValueError):
            ops.l2_normalize([0.0, 0.0])


class KernelProperties(SimpleTestCase):

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=2**31 - 1), st.integers(1, 3))
    def test_conv2d_linearity(self, seed, dilation):
        rng = np.random.default_rng(seed)
        x, y = random_map(rng, 5, 5, 2), random_map(rng, 5, 5, 2)
        weights = random_map(rng, 3, 3, 2, 2)
        left = ops.conv2d(x + 2 * y, weights, dilation=dilation)
        right = ops.conv2d(x, weights, dilation=dilation) + 2 * ops.conv2d(y, weights, dilation=dilation)
        np.testing.assert_allclose(left, right, rtol=1e-5, atol=1e-5)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=1, max_size=16))
    def test_softmax_sums_to_one(self, values):
        out = ops.softmax(values)
        self.assertTrue(np.all(out > 0))
        self.assertAlmostEqual(float(out.astype(np.float64).sum()), 1.0, delta=1e-6)
