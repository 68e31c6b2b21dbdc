"""Exhaustive cosine search over a descriptor database."""
from dataclasses import dataclass

import numpy as np

from kernels.ops import ACC, ShapeError, as_tensor


@dataclass(frozen=True)
class RankedList:
    """Database ids by descending similarity; ties go to the smaller id."""

    ids: tuple
    similarities: np.ndarray

    def __len__(self):
        return len(self.ids)

    def top(self, count):
        return RankedList(ids=self.ids[:count], similarities=self.similarities[:count])


class DescriptorIndex:
    """An (n, N) unit-descriptor matrix together with its image ids."""

    def __init__(self, ids, matrix):
        matrix = as_tensor(matrix, 2, 'descriptor database')
        ids = tuple(str(i) for i in ids)
        if len(ids) != matrix.shape[0]:
            raise ShapeError(f'{len(ids)} ids for {matrix.shape[0]} descriptors')
        if len(set(ids)) != len(ids):
            raise ValueError('database ids must be unique')
        self.ids = ids
        self.matrix = matrix
        self._id_set = frozenset(ids)
        # rank of each id in ascending order, used as the tie-break key
        self._id_rank = np.empty(len(ids), dtype=np.int64)
        self._id_rank[np.argsort(np.array(ids, dtype=object), kind='stable')] = np.arange(len(ids))

    def __len__(self):
        return len(self.ids)

    def __contains__(self, image_id):
        return image_id in self._id_set

    @property
    def dim(self):
        return self.matrix.shape[1]

    def search(self, query):
        query = as_tensor(query, 1, 'query descriptor')
        if len(self.ids) == 0:
            raise ValueError('cannot search an empty database')
        if query.shape[0] != self.dim:
            raise ShapeError(f'query has {query.shape[0]} dimensions, database has {self.dim}')
        similarities = self.matrix.astype(ACC) @ query.astype(ACC)
        order = np.lexsort((self._id_rank, -similarities))
        return RankedList(
            ids=tuple(self.ids[i] for i in order),
            similarities=similarities[order],
        )


def search(database, query, ids=None):
    """
    Rank every database entry against `query`.

    `database` is a `DescriptorIndex` or an (n, N) matrix; a bare matrix uses
    its row numbers (as strings, zero-padded to sort numerically) unless
    `ids` are given.
    """
    if not isinstance(database, DescriptorIndex):
        matrix = as_tensor(database, 2, 'descriptor database')
        if ids is None:
            width = len(str(max(matrix.shape[0] - 1, 0)))
            ids = [str(i).zfill(width) for i in range(matrix.shape[0])]
        database = DescriptorIndex(ids, matrix)
    return database.search(query)
