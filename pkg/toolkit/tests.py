import io
import json
import tempfile
from pathlib import Path

import numpy as np
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from dtop.config import ConfigError, ModelConfig
from pooling.model import DToPModel
from retrieval.serializers import GroundTruthSerializer

from .fileio import read_config, read_descriptor_db, write_config, write_descriptor_db, write_json
from .images import ImageFormatError, decode_ppm, encode_ppm, read_ppm_size, write_ppm
from .modelstore import decode_model, encode_model
from .oracles import synthetic_retrieval
from .serializers import ModelConfigSerializer
from .synthetic import make_corpus
from .tensorio import TensorFormatError, decode_tensor, encode_tensor, read_tensor_file, write_tensor_file

SMALL_CONFIG = {
    'encoder': {'dim': 16, 'depth': 2, 'heads': 2, 'use_stem': False, 'patch_size': 8, 'pos_grid': [4, 4]},
    'head': {'k': 2, 'out_dim': 12, 'elm': {'dilation_rates': [1, 2]}},
    'pipeline': {'scales': [1.0, 0.5]},
    'seed': 3,
}


def small_config():
    serializer = ModelConfigSerializer(data=SMALL_CONFIG)
    assert serializer.is_valid(), serializer.errors
    return serializer.to_config()


class TempDirMixin:

    def setUp(self):
        super().setUp()
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()
        super().tearDown()


class TensorFileTests(TempDirMixin, SimpleTestCase):

    def test_round_trip_is_bitwise(self):
        array = np.random.default_rng(0).standard_normal((3, 4, 5)).astype(np.float32)
        path = self.tmp / 't.dtt'
        write_tensor_file(path, array)
        restored = read_tensor_file(path)
        self.assertEqual(restored.shape, (3, 4, 5))
        self.assertEqual(restored.tobytes(), array.tobytes())

    def test_layout(self):
        data = encode_tensor(np.array([[1.0, 2.0]]))
        self.assertEqual(data[:5], b'DTT1\x02')
        self.assertEqual(data[5:13], b'\x01\x00\x00\x00\x02\x00\x00\x00')
        self.assertEqual(data[13:], np.array([1.0, 2.0], dtype='<f4').tobytes())

    def test_bad_magic_names_offset(self):
        data = b'DTX1' + encode_tensor(np.zeros(2))[4:]
        with self.assertRaisesMessage(TensorFormatError, 'offset 0'):
            decode_tensor(data)

    def test_empty_file(self):
        path = self.tmp / 'empty.dtt'
        path.write_bytes(b'')
        with self.assertRaisesMessage(TensorFormatError, 'truncated'):
            read_tensor_file(path)

    def test_truncated_payload(self):
        data = encode_tensor(np.zeros((2, 3)))
        with self.assertRaisesMessage(TensorFormatError, 'offset 13: truncated payload'):
            decode_tensor(data[:-1])

    def test_rank_limits(self):
        with self.assertRaises(TensorFormatError):
            encode_tensor(np.zeros((1, 1, 1, 1, 1)))
        data = bytearray(encode_tensor(np.zeros(1)))
        data[4] = 5
        with self.assertRaisesMessage(TensorFormatError, 'offset 4'):
            decode_tensor(bytes(data))

    def test_trailing_bytes(self):
        path = self.tmp / 'long.dtt'
        path.write_bytes(encode_tensor(np.zeros(2)) + b'\x00')
        with self.assertRaises(TensorFormatError):
            read_tensor_file(path)


class PpmTests(SimpleTestCase):

    def test_white_pixel(self):
        image = decode_ppm(b'P6\n1 1\n255\n\xff\xff\xff')
        self.assertEqual(image.shape, (3, 1, 1))
        np.testing.assert_array_equal(image, 1.0)

    def test_black_then_white(self):
        image = decode_ppm(b'P6 2 1 255\n\x00\x00\x00\xff\xff\xff')
        np.testing.assert_array_equal(image[:, 0, 0], 0.0)
        np.testing.assert_array_equal(image[:, 0, 1], 1.0)

    def test_channel_order(self):
        image = decode_ppm(b'P6\n# a comment\n1 1\n255\n\x33\x66\x99')
        np.testing.assert_allclose(image[:, 0, 0], np.array([0x33, 0x66, 0x99]) / 255)

    def test_grayscale_is_rejected(self):
        with self.assertRaisesMessage(ImageFormatError, 'P6'):
            decode_ppm(b'P5\n1 1\n255\n\x00')

    def test_maxval(self):
        with self.assertRaisesMessage(ImageFormatError, 'maxval'):
            decode_ppm(b'P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00')

    def test_short_pixel_data(self):
        with self.assertRaisesMessage(ImageFormatError, 'short'):
            decode_ppm(b'P6\n2 2\n255\n\x00\x00\x00')

    def test_encode_decode(self):
        image = np.random.default_rng(0).integers(0, 256, size=(3, 5, 7)) / 255.0
        np.testing.assert_allclose(decode_ppm(encode_ppm(image)), image, atol=1e-6)

    def test_size_from_header(self):
        with tempfile.NamedTemporaryFile(suffix='.ppm') as handle:
            handle.write(encode_ppm(np.zeros((3, 9, 4))))
            handle.flush()
            self.assertEqual(read_ppm_size(handle.name), (4, 9))


class ConfigTests(TempDirMixin, SimpleTestCase):

    def test_empty_document_gives_defaults(self):
        serializer = ModelConfigSerializer(data={})
        self.assertTrue(serializer.is_valid(), serializer.errors)
        config = serializer.to_config()
        self.assertEqual(config, ModelConfig())
        self.assertEqual((config.head.k, config.head.out_dim), (6, 1536))
        self.assertEqual(config.head.elm.dilation_rates, (6, 12, 18))
        self.assertEqual(config.head.fusion.method, 'orthogonal')

    def test_unknown_keys(self):
        for document in ({'colour': 1}, {'head': {'kk': 2}}, {'head': {'elm': {'rates': [1]}}}):
            serializer = ModelConfigSerializer(data=document)
            self.assertFalse(serializer.is_valid(), document)

    def test_cross_field_rules(self):
        bad = [
            {'encoder': {'dim': 30, 'heads': 4}},
            {'encoder': {'depth': 4}, 'head': {'k': 5}},
            {'head': {'elm': {'dilation_rates': [12, 6]}}},
            {'head': {'fusion': {'method': 'fast_normalized', 'eps': 0}}},
            {'sampler': {'fixed_size': [100, 384]}},
        ]
        for document in bad:
            serializer = ModelConfigSerializer(data=document)
            self.assertFalse(serializer.is_valid(), document)

    def test_round_trip_is_fixed_point(self):
        first = self.tmp / 'a.json'
        second = self.tmp / 'b.json'
        write_config(first, small_config())
        loaded = read_config(first)
        self.assertEqual(loaded, small_config())
        write_config(second, loaded)
        self.assertEqual(first.read_bytes(), second.read_bytes())

    def test_overrides_are_validated(self):
        config = small_config()
        self.assertEqual(config.with_overrides(k=1, fusion='sum').head.fusion.method, 'sum')
        with self.assertRaises(ConfigError):
            config.with_overrides(k=3)


class ModelFileTests(SimpleTestCase):

    def test_round_trip_keeps_outputs(self):
        model = DToPModel.initialize(small_config())
        restored = decode_model(encode_model(model))
        self.assertEqual(restored.config, model.config)
        image = np.random.default_rng(0).random((3, 16, 24)).astype(np.float32)
        self.assertEqual(restored.describe(image).tobytes(), model.describe(image).tobytes())

    def test_same_seed_same_bytes(self):
        first = encode_model(DToPModel.initialize(small_config()))
        second = encode_model(DToPModel.initialize(small_config()))
        self.assertEqual(first, second)
        self.assertNotEqual(first, encode_model(DToPModel.initialize(small_config(), seed=4)))

    def test_bad_magic(self):
        with self.assertRaisesMessage(TensorFormatError, 'offset 0'):
            decode_model(b'DTM0' + b'\x00' * 8)


class DescriptorDatabaseTests(TempDirMixin, SimpleTestCase):

    def test_round_trip(self):
        matrix = np.eye(3, dtype=np.float32)
        write_descriptor_db(self.tmp / 'db', ['a', 'b', 'c'], matrix)
        index = read_descriptor_db(self.tmp / 'db')
        self.assertEqual(index.ids, ('a', 'b', 'c'))
        np.testing.assert_array_equal(index.matrix, matrix)
        self.assertEqual(json.loads((self.tmp / 'db.json').read_text()), ['a', 'b', 'c'])


class SyntheticRetrievalTests(SimpleTestCase):

    def test_corpus_shape(self):
        corpus = make_corpus()
        self.assertEqual(len(corpus.images), 60)
        self.assertEqual(len(set(corpus.labels.values())), 12)
        truth = corpus.ground_truth()
        self.assertEqual(len(truth), 12)
        self.assertTrue(all(len(q.easy) == 4 for q in truth))

    def test_beats_chance(self):
        found, chance = synthetic_retrieval(seed=0)
        self.assertGreaterEqual(found, 2 * chance)


class CommandTests(TempDirMixin, SimpleTestCase):

    def setUp(self):
        super().setUp()
        corpus = make_corpus(classes=3, views=3, seed=1)
        self.images = self.tmp / 'images'
        self.images.mkdir()
        for image_id, image in corpus.images.items():
            write_ppm(self.images / f'{image_id}.ppm', image)
        self.config = self.tmp / 'config.json'
        write_json(self.config, SMALL_CONFIG)
        self.truth = self.tmp / 'truth.json'
        write_json(self.truth, GroundTruthSerializer.dump(corpus.ground_truth()))
        self.labels = self.tmp / 'labels.json'
        write_json(self.labels, corpus.labels)
        self.model = self.tmp / 'model.dtm'
        self.call('init-model', config=self.config, out=self.model)

    def call(self, name, *args, **options):
        out = io.StringIO()
        options = {key: str(value) if isinstance(value, Path) else value for key, value in options.items()}
        call_command(name, *args, stdout=out, **options)
        return out.getvalue()

    def extract(self, base, threads):
        self.call('extract', model=self.model, images=self.images, out=self.tmp / base, threads=threads)

    def test_pipeline_is_deterministic_across_threads(self):
        self.extract('one', 1)
        self.extract('four', 4)
        for suffix in ('.dtt', '.json'):
            self.assertEqual(
                (self.tmp / f'one{suffix}').read_bytes(), (self.tmp / f'four{suffix}').read_bytes()
            )

        reports = []
        for base, threads in (('one', 1), ('four', 4)):
            self.call('index', descriptors=self.tmp / base, out=self.tmp / f'{base}-index',
                      labels=self.labels, whitening_out=self.tmp / f'{base}-w.dtt')
            self.call('evaluate', index=self.tmp / f'{base}-index', queries=self.tmp / f'{base}-index',
                      ground_truth=self.truth, protocol='medium', out=self.tmp / f'{base}.csv',
                      threads=threads)
            reports.append((self.tmp / f'{base}.csv').read_bytes())
        self.assertEqual(reports[0], reports[1])
        self.assertEqual(read_tensor_file(self.tmp / 'one-w.dtt').shape, (13, 12))

        lines = reports[0].decode().splitlines()
        self.assertEqual(lines[0], 'query_id,ap')
        self.assertTrue(lines[-2].startswith('mAP,'))
        self.assertTrue(lines[-1].startswith('mP@10,'))

    def test_search_report(self):
        self.extract('db', 1)
        self.call('search', index=self.tmp / 'db', queries=self.tmp / 'db', out=self.tmp / 's.csv', top=2)
        lines = (self.tmp / 's.csv').read_text().splitlines()
        self.assertEqual(lines[0], 'query_id,rank,db_id,similarity')
        self.assertEqual(len(lines), 1 + 9 * 2)
        query_id, rank, db_id, similarity = lines[1].split(',')
        self.assertEqual((rank, db_id), ('0', query_id))
        self.assertAlmostEqual(float(similarity), 1.0, places=5)

    def test_evaluate_from_query_images(self):
        self.extract('db', 1)
        self.call('index', descriptors=self.tmp / 'db', out=self.tmp / 'index')
        output = self.call('evaluate', '--no-crop', index=self.tmp / 'index', query_images=self.images,
                           model=self.model, ground_truth=self.truth, protocol='medium',
                           out=self.tmp / 'medium.csv')
        self.assertIn('medium: mAP', output)

    def test_scales_override(self):
        self.call('extract', model=self.model, images=self.images, out=self.tmp / 'single', scales=[1.0])
        self.extract('multi', 1)
        single = read_descriptor_db(self.tmp / 'single').matrix
        multi = read_descriptor_db(self.tmp / 'multi').matrix
        self.assertEqual(single.shape, multi.shape)
        self.assertFalse(np.array_equal(single, multi))

    def test_analysis_outputs(self):
        self.call('cka', model=self.model, images=self.images, out=self.tmp / 'cka', patch_only=True)
        self.assertEqual(read_tensor_file(self.tmp / 'cka.dtt').shape, (2, 2))
        self.assertEqual((self.tmp / 'cka.txt').read_text(), 'layer 1\nlayer 2\n')
        image = sorted(self.images.iterdir())[0]
        self.call('attention', model=self.model, image=image, out=self.tmp / 'attn')
        attention = read_tensor_file(self.tmp / 'attn.dtt')
        self.assertAlmostEqual(float(attention.astype(np.float64).sum()), 1.0, delta=0.5)

    def test_attention_layer_out_of_range(self):
        image = sorted(self.images.iterdir())[0]
        for layer in (0, 3):
            with self.assertRaisesMessage(CommandError, 'data error:'):
                self.call('attention', model=self.model, image=image, layer=layer, out=self.tmp / 'attn')
        self.call('attention', model=self.model, image=image, layer=1, out=self.tmp / 'first')
        self.assertTrue((self.tmp / 'first.dtt').exists())

    def test_plan_batches(self):
        self.call('plan-batches', images=self.images, config=self.config, out=self.tmp / 'plan.json')
        plan = json.loads((self.tmp / 'plan.json').read_text())
        ids = sorted(i for batch in plan for i in batch['ids'])
        self.assertEqual(ids, sorted(p.stem for p in self.images.iterdir()))
        self.assertTrue(all(batch['target_w'] % 16 == 0 and batch['target_h'] % 16 == 0 for batch in plan))

    def test_error_prefixes(self):
        with self.assertRaisesMessage(CommandError, 'missing file:'):
            self.call('extract', model=self.tmp / 'nope.dtm', images=self.images, out=self.tmp / 'x')
        broken = self.tmp / 'broken.json'
        write_json(broken, {'encoder': {'dim': 30, 'heads': 4}})
        with self.assertRaisesMessage(CommandError, 'config error:'):
            self.call('init-model', config=broken, out=self.tmp / 'm.dtm')
        bogus = self.tmp / 'bogus.dtm'
        bogus.write_bytes(b'not a model')
        with self.assertRaisesMessage(CommandError, 'format error:'):
            self.call('extract', model=bogus, images=self.images, out=self.tmp / 'x')
        with self.assertRaisesMessage(CommandError, 'config error:'):
            self.call('init-model', config=self.config, k=5, out=self.tmp / 'm.dtm')


class SelftestCommandTests(SimpleTestCase):

    def test_all_checks_pass(self):
        out = io.StringIO()
        call_command('selftest', stdout=out)
        self.assertIn('10 passed, 0 failed', out.getvalue())
