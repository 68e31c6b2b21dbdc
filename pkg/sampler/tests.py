from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from dtop.config import SamplerConfig

from .batching import BatchGroup, fixed_batches, group_batches, plan_batches, target_size


def metas_from(sizes):
    return [(f'img{i:03d}', w, h) for i, (w, h) in enumerate(sizes)]


sizes_strategy = st.lists(
    st.tuples(st.integers(16, 2000), st.integers(16, 2000)), min_size=1, max_size=60
)


class TargetSizeTests(SimpleTestCase):

    def test_square(self):
        self.assertEqual(target_size(1.0, 384 * 384), (384, 384))

    def test_two_to_one(self):
        self.assertEqual(target_size(2.0, 294912), (768, 384))

    def test_floor_at_one_multiple(self):
        self.assertEqual(target_size(100.0, 16 * 16), (160, 16))


class GroupBatchTests(SimpleTestCase):

    def test_square_images_match_fixed_size(self):
        batches = group_batches(metas_from([(500, 500)] * 10), 4, 384 * 384, 8, seed=1)
        self.assertTrue(all((b.target_w, b.target_h) == (384, 384) for b in batches))

    def test_one_image_per_bucket(self):
        sizes = [(100 + 50 * i, 100) for i in range(8)]
        batches = group_batches(metas_from(sizes), 4, 384 * 384, 8)
        self.assertEqual(len(batches), 8)
        self.assertTrue(all(len(b) == 1 for b in batches))

    def test_wide_bucket_target(self):
        batches = group_batches(metas_from([(400, 200)] * 3), 8, 294912, 2)
        self.assertEqual({(b.target_w, b.target_h) for b in batches}, {(768, 384)})

    def test_batches_stay_within_one_aspect_band(self):
        sizes = [(300, 100)] * 6 + [(100, 300)] * 6
        batches = group_batches(metas_from(sizes), 6, 384 * 384, 2, seed=3)
        ratios = {f'img{i:03d}': w / h for i, (w, h) in enumerate(sizes)}
        for batch in batches:
            self.assertEqual(len({ratios[i] for i in batch.ids}), 1)

    def test_empty(self):
        with self.assertRaises(ValueError):
            group_batches([], 4, 384 * 384, 8)

    def test_zero_extent(self):
        with self.assertRaises(ValueError):
            group_batches([('a', 0, 10)], 4, 384 * 384, 8)

    @settings(max_examples=50, deadline=None)
    @given(sizes_strategy, st.integers(1, 9), st.integers(1, 10), st.integers(0, 1000))
    def test_every_image_exactly_once(self, sizes, batch_size, bins, seed):
        metas = metas_from(sizes)
        batches = group_batches(metas, batch_size, 384 * 384, bins, seed)
        planned = [image_id for batch in batches for image_id in batch.ids]
        self.assertCountEqual(planned, [m[0] for m in metas])
        self.assertTrue(all(1 <= len(b) <= batch_size for b in batches))

    @settings(max_examples=50, deadline=None)
    @given(sizes_strategy, st.integers(2, 10), st.integers(0, 1000))
    def test_batch_spread_within_global_spread(self, sizes, bins, seed):
        metas = metas_from(sizes)
        ratios = {m[0]: m[1] / m[2] for m in metas}
        spread = max(ratios.values()) - min(ratios.values())
        for batch in group_batches(metas, 4, 384 * 384, bins, seed):
            values = [ratios[i] for i in batch.ids]
            self.assertLessEqual(max(values) - min(values), spread)

    @settings(max_examples=25, deadline=None)
    @given(sizes_strategy, st.integers(0, 1000))
    def test_seed_determinism(self, sizes, seed):
        metas = metas_from(sizes)
        self.assertEqual(group_batches(metas, 3, 256 * 256, 4, seed), group_batches(metas, 3, 256 * 256, 4, seed))


class FixedBatchTests(SimpleTestCase):

    def test_single_batch(self):
        batches = fixed_batches(metas_from([(50, 80)] * 5), 8)
        self.assertEqual(len(batches), 1)
        self.assertEqual((batches[0].target_w, batches[0].target_h), (384, 384))

    def test_same_seed_same_order(self):
        metas = metas_from([(50, 80)] * 20)
        self.assertEqual(fixed_batches(metas, 3, seed=9), fixed_batches(metas, 3, seed=9))

    def test_size_must_be_multiple_of_16(self):
        with self.assertRaises(ValueError):
            fixed_batches(metas_from([(50, 80)]), 2, size=(100, 384))

    def test_config_dispatch(self):
        metas = metas_from([(50, 80)] * 4)
        batches = plan_batches(metas, SamplerConfig(mode='fixed', batch_size=2, fixed_size=(64, 32)))
        self.assertEqual([(b.target_w, b.target_h) for b in batches], [(64, 32), (64, 32)])


class BatchGroupTests(SimpleTestCase):

    def test_document(self):
        group = BatchGroup(['a', 'b'], 32, 48, 2)
        self.assertEqual(group.to_dict(), {'ids': ['a', 'b'], 'target_w': 32, 'target_h': 48, 'bucket': 2})

    def test_rejects_bad_target(self):
        with self.assertRaises(ValueError):
            BatchGroup(['a'], 30, 48)
