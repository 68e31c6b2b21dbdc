import numpy as np
from django.conf import settings as django_settings
from django.test import SimpleTestCase
from hypothesis import given, settings, strategies as st

from kernels.ops import ShapeError, l2_normalize_rows

from .metrics import (
    GroundTruth,
    QueryTruth,
    compute_ap,
    crop_query,
    evaluate,
    evaluate_rankings,
    precision_at,
)
from .search import DescriptorIndex, search
from .serializers import GroundTruthSerializer


def oracle_ap(ranking, positives, junk):
    """Trapezoidal area under the precision/recall steps of the cleaned ranking."""
    cleaned = np.array([item for item in ranking if item not in junk], dtype=object)
    hit_ranks = np.flatnonzero(np.isin(cleaned, list(positives)))
    area = 0.0
    for j, rank in enumerate(hit_ranks):
        precision_before = 1.0 if rank == 0 else j / rank
        precision_after = (j + 1) / (rank + 1)
        area += (precision_before + precision_after) / 2 / len(positives)
    return area


def unit_rows(seed, n, dim):
    return l2_normalize_rows(np.random.default_rng(seed).standard_normal((n, dim)))


class SearchTests(SimpleTestCase):

    def test_self_match_first(self):
        matrix = unit_rows(0, 8, 5)
        ranked = search(matrix, matrix[3], ids=list('abcdefgh'))
        self.assertEqual(ranked.ids[0], 'd')
        self.assertAlmostEqual(float(ranked.similarities[0]), 1.0, places=6)

    def test_orthogonal_entries(self):
        ranked = search(np.eye(4), np.array([0, 0, 1, 0]), ids=['w', 'x', 'y', 'z'])
        self.assertEqual(ranked.ids, ('y', 'w', 'x', 'z'))
        np.testing.assert_array_equal(ranked.similarities, [1, 0, 0, 0])

    def test_matches_brute_force_sort(self):
        matrix = unit_rows(1, 20, 6)
        query = unit_rows(2, 1, 6)[0]
        ranked = search(matrix, query)
        scores = matrix.astype(np.float64) @ query.astype(np.float64)
        expected = sorted(range(20), key=lambda i: (-scores[i], i))
        self.assertEqual([int(i) for i in ranked.ids], expected)
        self.assertTrue(np.all(np.diff(ranked.similarities) <= 0))

    def test_ties_go_to_smaller_id(self):
        matrix = np.array([[1.0, 0.0]] * 3)
        ranked = search(matrix, np.array([1.0, 0.0]), ids=['c', 'a', 'b'])
        self.assertEqual(ranked.ids, ('a', 'b', 'c'))

    def test_default_ids_sort_numerically(self):
        matrix = np.tile([1.0, 0.0], (11, 1))
        ranked = search(matrix, np.array([1.0, 0.0]))
        self.assertEqual(ranked.ids[:3], ('00', '01', '02'))
        self.assertEqual(ranked.ids[-1], '10')

    def test_dimension_mismatch(self):
        with self.assertRaises(ShapeError):
            search(np.eye(3), np.ones(4) / 2)

    def test_empty_database(self):
        with self.assertRaises(ValueError):
            search(np.zeros((0, 3)), np.array([1.0, 0.0, 0.0]))

    def test_duplicate_ids(self):
        with self.assertRaises(ValueError):
            DescriptorIndex(['a', 'a'], np.eye(2))


class AveragePrecisionTests(SimpleTestCase):

    def test_perfect_ranking(self):
        self.assertEqual(compute_ap(['a', 'b', 'c', 'x'], {'a', 'b', 'c'}), 1.0)

    def test_gap_in_ranking(self):
        ap = compute_ap(['a', 'x', 'b', 'y'], {'a', 'b'})
        self.assertAlmostEqual(ap, (1 + (0.5 + 2 / 3) / 2) / 2, places=12)

    def test_junk_closes_the_gap(self):
        self.assertEqual(compute_ap(['j', 'a', 'x'], {'a'}, {'j'}), compute_ap(['a', 'x'], {'a'}))

    def test_missing_positive_counts_zero(self):
        self.assertAlmostEqual(compute_ap(['a', 'x'], {'a', 'b'}), 0.5, places=12)

    def test_errors(self):
        with self.assertRaises(ValueError):
            compute_ap(['a'], set())
        with self.assertRaises(ValueError):
            compute_ap(['a'], {'a'}, {'a'})

    def test_precision_denominator(self):
        self.assertEqual(precision_at(['a', 'b', 'c'], {'a', 'b', 'c'}), 1.0)
        ranking = [str(i) for i in range(30)]
        self.assertEqual(precision_at(ranking, {str(i) for i in range(0, 30, 2)}), 0.5)

    def test_matches_oracle(self):
        rng = np.random.default_rng(7)
        for _ in range(django_settings.DTOP['SELFTEST_AP_TRIALS']):
            n = int(rng.integers(1, 21))
            ranking = [f'i{v}' for v in rng.permutation(n)]
            labels = rng.integers(0, 3, size=n)
            positives = {item for item, label in zip(ranking, labels) if label == 0}
            junk = {item for item, label in zip(ranking, labels) if label == 1}
            if not positives:
                positives = {ranking[-1]}
                junk.discard(ranking[-1])
            self.assertAlmostEqual(
                compute_ap(ranking, positives, junk), oracle_ap(ranking, positives, junk), delta=1e-12
            )

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(-1000, 1000), min_size=2, max_size=15, unique=True),
           st.integers(1, 10))
    def test_depends_only_on_order(self, steps, scale):
        scores = [step / 1000 for step in steps]
        ids = [f'd{i:02d}' for i in range(len(scores))]
        positives = set(ids[::2])
        plain = search(np.array(scores)[:, None], np.array([1.0]), ids=ids)
        stretched = search(np.array(scores)[:, None] * scale, np.array([1.0]), ids=ids)
        self.assertEqual(compute_ap(plain, positives), compute_ap(stretched, positives))


def toy_ground_truth():
    return GroundTruth(queries=(
        QueryTruth(id='q1', easy={'d00', 'd05'}, hard={'d03'}, junk={'d01'}),
        QueryTruth(id='q2', easy={'d11'}),
    ))


class ProtocolTests(SimpleTestCase):

    def setUp(self):
        ranking = tuple(f'd{i:02d}' for i in range(12))
        self.rankings = {'q1': ranking, 'q2': ranking}

    def test_medium(self):
        result = evaluate_rankings(self.rankings, toy_ground_truth(), 'medium')
        q1 = (1 + 7 / 12 + 0.55) / 3
        q2 = 1 / 24
        self.assertEqual(result.evaluated, 2)
        self.assertAlmostEqual(result.per_query[0][1], q1, places=12)
        self.assertAlmostEqual(result.mean_ap, (q1 + q2) / 2, places=12)
        self.assertAlmostEqual(result.mean_precision, 0.5, places=12)

    def test_hard_skips_easy_only_queries(self):
        result = evaluate_rankings(self.rankings, toy_ground_truth(), 'hard')
        self.assertEqual([qid for qid, _ in result.per_query], ['q1'])
        self.assertAlmostEqual(result.mean_ap, 0.25, places=12)
        self.assertEqual(result.mean_precision, 1.0)

    def test_medium_positives_contain_hard(self):
        for query in toy_ground_truth():
            medium, _ = query.protocol_sets('medium')
            hard, hard_junk = query.protocol_sets('hard')
            self.assertTrue(hard <= medium)
            self.assertTrue(query.easy <= hard_junk)

    def test_all_skipped(self):
        truth = GroundTruth(queries=(QueryTruth(id='q', easy={'a'}),))
        with self.assertRaises(ValueError):
            evaluate_rankings({'q': ('a',)}, truth, 'hard')

    def test_overlapping_sets(self):
        with self.assertRaises(ValueError):
            QueryTruth(id='q', easy={'a'}, junk={'a'})

    def test_unknown_protocol(self):
        with self.assertRaises(ValueError):
            evaluate_rankings(self.rankings, toy_ground_truth(), 'easy')


class EvaluateTests(SimpleTestCase):

    def setUp(self):
        ids = [f'd{i}' for i in range(6)]
        self.index = DescriptorIndex(ids, np.eye(6))
        self.truth = GroundTruth(queries=(
            QueryTruth(id='qa', easy={'d0', 'd1'}, hard={'d2'}),
            QueryTruth(id='qb', hard={'d4'}, junk={'d5'}),
        ))
        self.queries = {
            'qa': np.array([0.6, 0.5, 0.4, 0.3, 0.3, 0.2]),
            'qb': np.array([0.1, 0.0, 0.0, 0.2, 0.5, 0.8]),
        }

    def test_perfect_rankings(self):
        result = evaluate(self.index, self.queries, self.truth, 'medium')
        self.assertEqual(result.mean_ap, 1.0)
        self.assertEqual(result.mean_precision, 1.0)

    def test_threads_do_not_change_results(self):
        serial = evaluate(self.index, self.queries, self.truth, 'hard', threads=1)
        parallel = evaluate(self.index, self.queries, self.truth, 'hard', threads=4)
        self.assertEqual(serial, parallel)

    def test_unknown_database_id(self):
        truth = GroundTruth(queries=(QueryTruth(id='qa', easy={'nope'}),))
        with self.assertRaises(ValueError):
            evaluate(self.index, self.queries, truth, 'medium')

    def test_missing_query_descriptor(self):
        with self.assertRaises(ValueError):
            evaluate(self.index, {'qa': self.queries['qa']}, self.truth, 'medium')


class CropTests(SimpleTestCase):

    def setUp(self):
        self.image = np.arange(48, dtype=np.float32).reshape(3, 4, 4)

    def test_full_box_is_identity(self):
        np.testing.assert_array_equal(crop_query(self.image, (0, 0, 4, 4)), self.image)

    def test_inner_box(self):
        np.testing.assert_array_equal(crop_query(self.image, (1, 1, 3, 3)), self.image[:, 1:3, 1:3])

    def test_absent_box(self):
        np.testing.assert_array_equal(crop_query(self.image, None), self.image)

    def test_bad_boxes(self):
        for bbox in [(2, 0, 2, 4), (0, 0, 5, 4), (-1, 0, 2, 2), (3, 3, 1, 1)]:
            with self.assertRaises(ValueError):
                crop_query(self.image, bbox)


class GroundTruthSerializerTests(SimpleTestCase):

    def document(self, **query):
        entry = {'id': 'q1', 'easy': ['a'], 'hard': ['b'], 'junk': []}
        entry.update(query)
        return {'queries': [entry]}

    def test_parses(self):
        serializer = GroundTruthSerializer(data=self.document(bbox=[0, 1, 5, 6]))
        self.assertTrue(serializer.is_valid(), serializer.errors)
        truth = serializer.to_ground_truth()
        self.assertEqual(truth.queries[0].bbox, (0.0, 1.0, 5.0, 6.0))
        self.assertEqual(truth.queries[0].easy, frozenset({'a'}))

    def test_unknown_field(self):
        serializer = GroundTruthSerializer(data=self.document(positives=['a']))
        self.assertFalse(serializer.is_valid())

    def test_overlap_is_rejected(self):
        serializer = GroundTruthSerializer(data=self.document(junk=['a']))
        self.assertFalse(serializer.is_valid())

    def test_degenerate_bbox(self):
        serializer = GroundTruthSerializer(data=self.document(bbox=[3, 0, 3, 4]))
        self.assertFalse(serializer.is_valid())

    def test_dump_round_trip(self):
        serializer = GroundTruthSerializer(data=GroundTruthSerializer.dump(toy_ground_truth()))
        self.assertTrue(serializer.is_valid(), serializer.errors)
        self.assertEqual(serializer.to_ground_truth(), toy_ground_truth())
