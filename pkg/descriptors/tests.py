import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from dtop.config import ElmConfig, EncoderConfig, HeadConfig, ModelConfig
from kernels.ops import ShapeError
from pooling.model import DToPModel

from .pipeline import (
    Descriptor,
    extract_descriptor,
    extract_many,
    resize_image,
    round_to_multiple,
    scaled_size,
)
from .whitening import (
    WhiteningTransform,
    apply_whitening,
    learn_whitening,
    matching_pairs,
    whiten_rows,
)


def small_model(seed=0):
    encoder = EncoderConfig(dim=16, depth=3, heads=2, use_stem=False, patch_size=8, pos_grid=(2, 2))
    head = HeadConfig(k=2, out_dim=12, elm=ElmConfig(dilation_rates=(1, 2)))
    return DToPModel.initialize(ModelConfig(encoder=encoder, head=head), seed=seed)


def random_image(seed, h=32, w=40):
    return np.random.default_rng(seed).random((3, h, w)).astype(np.float32)


class ResizeTests(SimpleTestCase):

    def test_round_half_up(self):
        self.assertEqual(round_to_multiple(100, 16), 96)
        self.assertEqual(round_to_multiple(104, 16), 112)
        self.assertEqual(round_to_multiple(8, 16), 16)
        self.assertEqual(round_to_multiple(7, 16), 16)
        self.assertEqual(round_to_multiple(0.5, 16), 16)
        with self.assertRaises(ValueError):
            round_to_multiple(0, 16)

    def test_small_sizes_floor_at_one_multiple(self):
        self.assertEqual(scaled_size(12, 12, 0.5, 16), (16, 16))
        self.assertEqual(scaled_size(20, 20, 0.25, 16), (16, 16))
        self.assertEqual(scaled_size(100, 12, 0.5, 16), (48, 16))

    def test_same_size_is_untouched(self):
        image = random_image(0)
        np.testing.assert_array_equal(resize_image(image, 40, 32), image)

    def test_constant_image_stays_constant(self):
        image = np.full((3, 30, 50), 0.25, dtype=np.float32)
        resized = resize_image(image, 24, 16)
        self.assertEqual(resized.shape, (3, 16, 24))
        np.testing.assert_allclose(resized, 0.25, atol=1e-5)


class ExtractTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.model = small_model()

    def test_unit_norm(self):
        descriptor = extract_descriptor(random_image(1), self.model, image_id='a')
        self.assertEqual(descriptor.dim, 12)
        self.assertEqual(descriptor.image_id, 'a')
        self.assertAlmostEqual(float(np.linalg.norm(descriptor.values)), 1.0, places=5)

    def test_scale_order_does_not_matter(self):
        image = random_image(2)
        first = extract_descriptor(image, self.model, (1.0, 0.5, 0.75))
        second = extract_descriptor(image, self.model, (0.5, 0.75, 1.0))
        np.testing.assert_array_equal(first.values, second.values)

    def test_single_scale_is_normalized_network_output(self):
        image = random_image(3)
        u = self.model.describe(image).astype(np.float64)
        descriptor = extract_descriptor(image, self.model, (1.0,))
        np.testing.assert_allclose(descriptor.values, u / np.linalg.norm(u), atol=1e-6)

    def test_tiny_scale_uses_one_token_grid(self):
        image = random_image(4, h=16, w=16)
        tiny = extract_descriptor(image, self.model, (0.2,))
        u = self.model.describe(resize_image(image, 8, 8)).astype(np.float64)
        np.testing.assert_allclose(tiny.values, u / np.linalg.norm(u), atol=1e-6)

    def test_image_smaller_than_a_token(self):
        descriptor = extract_descriptor(random_image(5, h=3, w=3), self.model, (1.0, 0.5))
        self.assertAlmostEqual(float(np.linalg.norm(descriptor.values)), 1.0, places=5)

    def test_rejects_bad_scales(self):
        with self.assertRaises(ValueError):
            extract_descriptor(random_image(6), self.model, ())
        with self.assertRaises(ValueError):
            extract_descriptor(random_image(6), self.model, (1.0, -0.5))

    def test_threads_keep_order_and_values(self):
        items = [(f'img{i}', random_image(10 + i, h=24, w=16 + 8 * (i % 3))) for i in range(6)]
        serial = extract_many(items, self.model, (1.0, 0.5), threads=1)
        parallel = extract_many(items, self.model, (1.0, 0.5), threads=3)
        self.assertEqual([d.image_id for d in parallel], [name for name, _ in items])
        for a, b in zip(serial, parallel):
            np.testing.assert_array_equal(a.values, b.values)

    def test_lazy_loading(self):
        image = random_image(7)
        eager, = extract_many([('x', image)], self.model, (1.0,))
        lazy, = extract_many([('x', lambda: image)], self.model, (1.0,))
        np.testing.assert_array_equal(eager.values, lazy.values)


class DefaultShapeTests(SimpleTestCase):

    def test_full_width_descriptor(self):
        config = ModelConfig(
            encoder=EncoderConfig(dim=768, depth=6, heads=12),
            head=HeadConfig(k=6, out_dim=1536),
        )
        model = DToPModel.initialize(config, seed=0)
        descriptor = extract_descriptor(random_image(0, h=32, w=48), model, (1.0,))
        self.assertEqual(descriptor.values.shape, (1536,))
        self.assertTrue(np.all(np.isfinite(descriptor.values)))
        self.assertAlmostEqual(float(np.linalg.norm(descriptor.values)), 1.0, places=5)


def clustered(seed, classes=40, per_class=25, dim=16):
    rng = np.random.default_rng(seed)
    centers = rng.standard_normal((classes, dim)) * 3.0
    spread = rng.standard_normal((dim, dim)) * 0.3
    points = centers.repeat(per_class, axis=0) + rng.standard_normal((classes * per_class, dim)) @ spread
    labels = np.arange(classes).repeat(per_class)
    return points, labels


class WhiteningTests(SimpleTestCase):

    def test_one_dimensional(self):
        transform = learn_whitening([[0.0], [2.0], [10.0], [12.0]], [(0, 1), (2, 3)])
        np.testing.assert_allclose(transform.projection, [[0.5]], rtol=1e-6)
        np.testing.assert_allclose(transform.mean, [6.0])

    def test_pair_covariance_becomes_identity(self):
        points, labels = clustered(0)
        pairs = matching_pairs(labels)
        transform = learn_whitening(points, pairs)

        pairs = np.asarray(pairs)
        diffs = points[pairs[:, 0]] - points[pairs[:, 1]]
        whitened = diffs @ transform.projection.astype(np.float64).T
        covariance = whitened.T @ whitened / len(pairs)
        error = np.linalg.norm(covariance - np.eye(16)) / np.linalg.norm(np.eye(16))
        self.assertLess(error, 0.05)

    def test_total_covariance_is_diagonal_and_sorted(self):
        points, labels = clustered(1, dim=6)
        transform = learn_whitening(points, matching_pairs(labels))
        projected = transform.project(points).astype(np.float64)
        covariance = np.cov(projected, rowvar=False, bias=True)
        off_diagonal = covariance - np.diag(np.diag(covariance))
        self.assertLess(np.abs(off_diagonal).max(), 1e-3 * np.abs(covariance).max())
        variances = np.diag(covariance)
        self.assertTrue(np.all(np.diff(variances) <= 1e-4 * variances.max()))

    def test_learning_is_deterministic(self):
        points, labels = clustered(2, dim=8)
        first = learn_whitening(points, matching_pairs(labels))
        second = learn_whitening(points, matching_pairs(labels))
        np.testing.assert_array_equal(first.projection, second.projection)

    def test_identical_pairs_fail(self):
        points = np.ones((4, 3))
        with self.assertRaises(ValueError):
            learn_whitening(points, [(0, 1), (2, 3)])

    def test_needs_pairs(self):
        with self.assertRaises(ValueError):
            learn_whitening(np.eye(3), [])
        with self.assertRaises(ValueError):
            learn_whitening(np.eye(3), [(0, 5)])

    def test_matching_pairs(self):
        self.assertEqual(matching_pairs(['a', 'b', 'a', 'a', 'c']), [(0, 2), (0, 3), (2, 3)])
        self.assertEqual(matching_pairs(['x', 'y']), [])

    def test_tensor_layout(self):
        transform = WhiteningTransform(projection=2 * np.eye(3), mean=np.arange(3.0))
        tensor = transform.to_tensor()
        self.assertEqual(tensor.shape, (4, 3))
        np.testing.assert_array_equal(tensor[0], [0, 1, 2])
        restored = WhiteningTransform.from_tensor(tensor)
        np.testing.assert_array_equal(restored.projection, transform.projection)

    def test_bad_tensor_shape(self):
        with self.assertRaises(ShapeError):
            WhiteningTransform.from_tensor(np.zeros((3, 3)))

    def test_apply_normalizes(self):
        transform = WhiteningTransform(projection=np.diag([1.0, 2.0]), mean=np.zeros(2))
        whitened = apply_whitening(Descriptor(np.array([0.6, 0.8], dtype=np.float32), 'q'), transform)
        self.assertEqual(whitened.image_id, 'q')
        np.testing.assert_allclose(whitened.values, np.array([0.6, 1.6]) / np.hypot(0.6, 1.6), rtol=1e-6)

    def test_width_mismatch(self):
        transform = WhiteningTransform(projection=np.eye(2), mean=np.zeros(2))
        with self.assertRaises(ShapeError):
            transform.project(np.ones(3))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=2**16))
    def test_rows_match_single_application(self, seed):
        points, labels = clustered(seed, classes=5, per_class=4, dim=4)
        transform = learn_whitening(points, matching_pairs(labels))
        rows = whiten_rows(points[:3], transform)
        for row, point in zip(rows, points[:3]):
            single = apply_whitening(Descriptor(point.astype(np.float32)), transform)
            np.testing.assert_allclose(row, single.values, atol=1e-5)
