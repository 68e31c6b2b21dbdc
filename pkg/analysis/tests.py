import numpy as np
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from dtop.config import EncoderConfig, HeadConfig, ModelConfig
from pooling.model import DToPModel

from .cka import cka_heatmap, cka_matrix, layer_features, linear_cka


def gaussian(seed, n=50, d=8):
    return np.random.default_rng(seed).standard_normal((n, d))


class LinearCkaTests(SimpleTestCase):

    def test_self_similarity(self):
        x = gaussian(0)
        self.assertAlmostEqual(linear_cka(x, x), 1.0, places=9)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**16), st.floats(0.01, 100), st.booleans())
    def test_orthogonal_and_scale_invariance(self, seed, scale, negate):
        x = gaussian(seed, n=30, d=6)
        q, _ = np.linalg.qr(np.random.default_rng(seed + 1).standard_normal((6, 6)))
        c = -scale if negate else scale
        self.assertAlmostEqual(linear_cka(x, x @ q), 1.0, delta=1e-6)
        self.assertAlmostEqual(linear_cka(x, c * x), 1.0, delta=1e-6)

    def test_symmetry(self):
        a, b = gaussian(1, d=5), gaussian(2, d=9)
        self.assertAlmostEqual(linear_cka(a, b), linear_cka(b, a), places=12)

    def test_independent_features_are_dissimilar(self):
        for seed in range(5):
            a = gaussian(10 + seed, n=500, d=10)
            b = gaussian(100 + seed, n=500, d=10)
            self.assertLess(linear_cka(a, b), 0.1)

    def test_duplicating_samples(self):
        a, b = gaussian(3, n=20), gaussian(4, n=20)
        doubled = linear_cka(np.vstack([a, a]), np.vstack([b, b]))
        self.assertAlmostEqual(doubled, linear_cka(a, b), delta=1e-6)

    def test_zero_variance(self):
        with self.assertRaises(ValueError):
            linear_cka(np.ones((5, 3)), gaussian(5, n=5, d=3))

    def test_sample_count_mismatch(self):
        with self.assertRaises(ValueError):
            linear_cka(gaussian(0, n=5), gaussian(1, n=6))


class CkaMatrixTests(SimpleTestCase):

    def test_identical_layers(self):
        x = gaussian(0, n=12)
        matrix = cka_matrix([x, x.copy()])
        np.testing.assert_allclose(matrix, np.ones((2, 2)), atol=1e-9)

    def test_minibatch_average(self):
        a, b = gaussian(1, n=10), gaussian(2, n=10)
        expected = (linear_cka(a[:4], b[:4]) + linear_cka(a[4:8], b[4:8]) + linear_cka(a[8:], b[8:])) / 3
        self.assertAlmostEqual(cka_matrix([a, b], batch_size=4)[0, 1], expected, places=12)

    def test_trailing_singleton_is_folded(self):
        a, b = gaussian(1, n=9), gaussian(2, n=9)
        expected = (linear_cka(a[:4], b[:4]) + linear_cka(a[4:], b[4:])) / 2
        self.assertAlmostEqual(cka_matrix([a, b], batch_size=4)[0, 1], expected, places=12)


class HeatmapTests(SimpleTestCase):

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        encoder = EncoderConfig(dim=16, depth=3, heads=2, use_stem=False, patch_size=8, pos_grid=(2, 2))
        config = ModelConfig(encoder=encoder, head=HeadConfig(k=2, out_dim=8))
        cls.model = DToPModel.initialize(config, seed=0)
        rng = np.random.default_rng(0)
        cls.images = [rng.random((3, 16 + 8 * (i % 2), 24)).astype(np.float32) for i in range(6)]

    def test_shape_symmetry_and_diagonal(self):
        heatmap = cka_heatmap(self.model, self.images)
        self.assertEqual(heatmap.matrix.shape, (3, 3))
        self.assertEqual(heatmap.labels, ('layer 1', 'layer 2', 'layer 3'))
        np.testing.assert_allclose(heatmap.matrix, heatmap.matrix.T, atol=1e-6)
        np.testing.assert_allclose(np.diag(heatmap.matrix), 1.0, atol=1e-6)
        self.assertTrue(np.all(heatmap.matrix <= 1 + 1e-6))

    def test_patch_only_excludes_cls(self):
        everything = layer_features(self.model, self.images[:1])
        patches = layer_features(self.model, self.images[:1], patch_only=True)
        outputs = self.model.encode_image(self.images[0])
        np.testing.assert_allclose(patches[0, 0], outputs.layers[1][1:].astype(np.float64).mean(axis=0))
        np.testing.assert_allclose(everything[0, 0], outputs.layers[1].astype(np.float64).mean(axis=0))

    def test_threads_do_not_change_features(self):
        serial = layer_features(self.model, self.images, threads=1)
        parallel = layer_features(self.model, self.images, threads=3)
        np.testing.assert_array_equal(serial, parallel)

    def test_needs_two_images(self):
        with self.assertRaises(ValueError):
            cka_heatmap(self.model, self.images[:1])
