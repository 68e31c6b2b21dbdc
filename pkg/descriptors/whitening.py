"""
Supervised (learned discriminative) whitening.

The matching-pair difference covariance C_S is whitened first; the
descriptors projected by C_S^(-1/2) are then rotated onto the eigenbasis of
their own covariance, strongest direction first.
"""
import logging
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from kernels.ops import ACC, DTYPE, ShapeError, as_tensor, l2_normalize, l2_normalize_rows

from .pipeline import Descriptor

logger = logging.getLogger(__name__)

# eigenvalues of C_S are floored at this fraction of trace / N
EIGEN_FLOOR = 1e-6


@dataclass(frozen=True)
class WhiteningTransform:
    projection: np.ndarray
    mean: np.ndarray

    def __post_init__(self):
        projection = as_tensor(self.projection, 2, 'whitening projection')
        mean = as_tensor(self.mean, 1, 'whitening mean')
        if projection.shape != (mean.shape[0], mean.shape[0]):
            raise ShapeError(f'projection {projection.shape} does not match mean {mean.shape}')
        if not np.all(np.isfinite(projection)):
            raise ValueError('whitening projection is not finite')
        object.__setattr__(self, 'projection', projection)
        object.__setattr__(self, 'mean', mean)

    @property
    def dim(self):
        return self.mean.shape[0]

    def project(self, values):
        """projection @ (x - mean) for a vector or for each row of a matrix."""
        values = as_tensor(values, name='descriptor values').astype(ACC)
        if values.shape[-1] != self.dim:
            raise ShapeError(f'descriptor width {values.shape[-1]} does not match whitening {self.dim}')
        return ((values - self.mean) @ self.projection.astype(ACC).T).astype(DTYPE)

    def to_tensor(self):
        """(N+1, N) tensor: row 0 is the mean, the rest the projection."""
        return np.vstack([self.mean[None, :], self.projection]).astype(DTYPE)

    @classmethod
    def from_tensor(cls, tensor):
        tensor = as_tensor(tensor, 2, 'whitening tensor')
        if tensor.shape[0] != tensor.shape[1] + 1:
            raise ShapeError(f'whitening tensor must be (N+1)xN, got {tensor.shape}')
        return cls(projection=tensor[1:], mean=tensor[0])


def matching_pairs(labels):
    """All index pairs (i, j), i < j, that share a label."""
    groups = {}
    for index, label in enumerate(labels):
        groups.setdefault(label, []).append(index)
    return [pair for members in groups.values() for pair in combinations(members, 2)]


def _symmetric_eigh(matrix):
    values, vectors = np.linalg.eigh(matrix)
    order = np.argsort(values)[::-1]
    values, vectors = values[order], vectors[:, order]
    # sign convention: the largest-magnitude entry of each eigenvector is positive
    pivots = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1
    return values, vectors * signs


def learn_whitening(descriptors, pairs):
    """Learn a `WhiteningTransform` from an (n, N) matrix and matching index pairs."""
    x = as_tensor(descriptors, 2, 'descriptors').astype(ACC)
    n, dim = x.shape
    if n < 2:
        raise ValueError('whitening needs at least 2 descriptors')
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    if len(pairs) == 0:
        raise ValueError('whitening needs at least one matching pair')
    if pairs.min() < 0 or pairs.max() >= n:
        raise ValueError('matching pair index out of range')

    diffs = x[pairs[:, 0]] - x[pairs[:, 1]]
    c_s = diffs.T @ diffs / len(pairs)
    trace = np.trace(c_s)
    if not trace > 0:
        raise ValueError('matching pairs are all identical (rank 0); cannot whiten')

    values, vectors = _symmetric_eigh(c_s)
    floored = np.maximum(values, EIGEN_FLOOR * trace / dim)
    if np.any(values < floored):
        logger.info('whitening: %d of %d pair-covariance eigenvalues floored',
                    int(np.sum(values < floored)), dim)
    inv_sqrt = (vectors / np.sqrt(floored)) @ vectors.T

    mean = x.mean(axis=0)
    projected = (x - mean) @ inv_sqrt.T
    _, rotation = _symmetric_eigh(projected.T @ projected / n)
    projection = rotation.T @ inv_sqrt
    logger.debug('learned %dx%d whitening from %d descriptors, %d pairs', dim, dim, n, len(pairs))
    return WhiteningTransform(projection=projection, mean=mean)


def apply_whitening(descriptor, transform):
    """Whitened, re-normalized copy of a `Descriptor`."""
    values = transform.project(descriptor.values)
    return Descriptor(values=l2_normalize(values), image_id=descriptor.image_id)


def whiten_rows(matrix, transform):
    """`apply_whitening` for every row of an (n, N) descriptor matrix."""
    return l2_normalize_rows(transform.project(matrix))
