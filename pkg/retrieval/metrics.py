"""
Retrieval evaluation: average precision, mAP and mP@10 under the Medium and
Hard protocols, plus query cropping.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from kernels.ops import ShapeError, as_tensor

from .search import DescriptorIndex, RankedList

logger = logging.getLogger(__name__)

PROTOCOLS = ('medium', 'hard')

PRECISION_DEPTH = 10


@dataclass(frozen=True)
class QueryTruth:
    id: str
    easy: frozenset = frozenset()
    hard: frozenset = frozenset()
    junk: frozenset = frozenset()
    bbox: tuple = None

    def __post_init__(self):
        for name in ('easy', 'hard', 'junk'):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        overlap = (self.easy & self.hard) | (self.easy & self.junk) | (self.hard & self.junk)
        if overlap:
            raise ValueError(
                f'query {self.id}: easy, hard and junk must be disjoint '
                f'(shared: {", ".join(sorted(overlap)[:5])})'
            )
        if self.bbox is not None:
            object.__setattr__(self, 'bbox', tuple(self.bbox))

    def protocol_sets(self, protocol):
        """(positives, junk) for a protocol."""
        if protocol == 'medium':
            return self.easy | self.hard, self.junk
        if protocol == 'hard':
            return self.hard, self.junk | self.easy
        raise ValueError(f"protocol must be one of {', '.join(PROTOCOLS)}, got {protocol!r}")

    @property
    def referenced_ids(self):
        return self.easy | self.hard | self.junk


@dataclass(frozen=True)
class GroundTruth:
    queries: tuple

    def __post_init__(self):
        queries = tuple(self.queries)
        ids = [q.id for q in queries]
        if len(set(ids)) != len(ids):
            raise ValueError('ground truth query ids must be unique')
        object.__setattr__(self, 'queries', queries)

    def __iter__(self):
        return iter(self.queries)

    def __len__(self):
        return len(self.queries)

    def check_database(self, database_ids):
        database_ids = set(database_ids)
        for query in self.queries:
            unknown = query.referenced_ids - database_ids
            if unknown:
                raise ValueError(
                    f'query {query.id} references unknown database ids: {", ".join(sorted(unknown)[:5])}'
                )


@dataclass(frozen=True)
class EvaluationResult:
    mean_ap: float
    mean_precision: float
    per_query: tuple = field(default_factory=tuple)

    @property
    def evaluated(self):
        return len(self.per_query)


def _ranked_ids(ranked):
    return ranked.ids if isinstance(ranked, RankedList) else tuple(ranked)


def _cleaned(ranked, junk):
    return [item for item in _ranked_ids(ranked) if item not in junk]


def compute_ap(ranked, positives, junk=()):
    """
    Average precision of a ranking, junk removed.

    The j-th positive (0-based) at cleaned rank r adds the mean of the
    precision just before and just after it; positives that never appear
    add nothing.
    """
    positives = frozenset(positives)
    junk = frozenset(junk)
    if not positives:
        raise ValueError('average precision needs at least one positive')
    if positives & junk:
        raise ValueError('positives and junk must be disjoint')

    total = 0.0
    found = 0
    for rank, item in enumerate(_cleaned(ranked, junk)):
        if item not in positives:
            continue
        before = found / rank if rank > 0 else 1.0
        after = (found + 1) / (rank + 1)
        total += (before + after) / 2
        found += 1
    return total / len(positives)


def precision_at(ranked, positives, junk=(), depth=PRECISION_DEPTH):
    """Hits in the cleaned top `depth`, over min(depth, |positives|)."""
    positives = frozenset(positives)
    if not positives:
        raise ValueError('precision needs at least one positive')
    top = _cleaned(ranked, frozenset(junk))[:depth]
    hits = sum(1 for item in top if item in positives)
    return hits / min(depth, len(positives))


def evaluate_rankings(rankings, ground_truth, protocol):
    """
    mAP and mP@10 of precomputed rankings.

    `rankings` maps query id -> RankedList (or id sequence). Queries whose
    positive set is empty under `protocol` are skipped.
    """
    per_query = []
    precisions = []
    for query in ground_truth:
        positives, junk = query.protocol_sets(protocol)
        if not positives:
            logger.debug('query %s has no %s positives; skipped', query.id, protocol)
            continue
        if query.id not in rankings:
            raise ValueError(f'no ranking for query {query.id}')
        ranked = rankings[query.id]
        per_query.append((query.id, compute_ap(ranked, positives, junk)))
        precisions.append(precision_at(ranked, positives, junk))

    if not per_query:
        raise ValueError(f'every query was skipped under the {protocol} protocol')
    mean_ap = math.fsum(ap for _, ap in per_query) / len(per_query)
    mean_precision = math.fsum(precisions) / len(precisions)
    logger.info('%s: mAP %.4f, mP@10 %.4f over %d queries (%d skipped)', protocol, mean_ap,
                mean_precision, len(per_query), len(ground_truth) - len(per_query))
    return EvaluationResult(mean_ap=mean_ap, mean_precision=mean_precision, per_query=tuple(per_query))


def evaluate(database, queries, ground_truth, protocol, threads=1):
    """
    Search every ground-truth query and score the rankings.

    `database` is a `DescriptorIndex`; `queries` maps query id -> unit
    descriptor values.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {', '.join(PROTOCOLS)}, got {protocol!r}")
    if not isinstance(database, DescriptorIndex):
        raise TypeError('database must be a DescriptorIndex')
    ground_truth.check_database(database.ids)
    missing = [q.id for q in ground_truth if q.id not in queries]
    if missing:
        raise ValueError(f'no descriptor for queries: {", ".join(missing[:5])}')

    ordered = [q.id for q in ground_truth]
    if threads <= 1:
        ranked = [database.search(queries[qid]) for qid in ordered]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            ranked = list(pool.map(lambda qid: database.search(queries[qid]), ordered))
    return evaluate_rankings(dict(zip(ordered, ranked)), ground_truth, protocol)


def crop_box(bbox, width, height):
    """Integer pixel box (x0, y0, x1, y1), outward-rounded and bounds-checked."""
    if bbox is None or len(bbox) != 4:
        raise ValueError('bounding box must be [x0, y0, x1, y1]')
    x0, y0 = math.floor(bbox[0]), math.floor(bbox[1])
    x1, y1 = math.ceil(bbox[2]), math.ceil(bbox[3])
    if not (0 <= x0 < x1 <= width and 0 <= y0 < y1 <= height):
        raise ValueError(f'bounding box {tuple(bbox)} is degenerate or outside the {width}x{height} image')
    return x0, y0, x1, y1


def crop_query(image, bbox):
    """The bbox sub-image of a (C, H, W) image; no bbox means no crop."""
    image = as_tensor(image, 3, 'query image')
    if bbox is None:
        return image
    _, height, width = image.shape
    if height == 0 or width == 0:
        raise ShapeError('cannot crop an empty image')
    x0, y0, x1, y1 = crop_box(bbox, width, height)
    return image[:, y0:y1, x0:x1]
