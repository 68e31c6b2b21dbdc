"""
Linear centered kernel alignment between encoder layers.

Each image contributes one feature vector per layer: the mean of that
layer's token embeddings (patch tokens only with `patch_only`).
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from descriptors.pipeline import resize_image, scaled_size
from kernels.ops import ACC, ShapeError, as_tensor

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CkaHeatmap:
    matrix: np.ndarray
    labels: tuple

    @property
    def depth(self):
        return self.matrix.shape[0]


def _centered(features, name):
    x = np.asarray(features, dtype=ACC)
    if x.ndim != 2:
        raise ShapeError(f'{name} must be an (n, d) matrix, got shape {x.shape}')
    return x - x.mean(axis=0)


def linear_cka(a, b):
    """||A_c^T B_c||_F^2 / (||A_c^T A_c||_F ||B_c^T B_c||_F)."""
    a_c = _centered(a, 'a')
    b_c = _centered(b, 'b')
    if a_c.shape[0] != b_c.shape[0]:
        raise ShapeError(f'feature matrices disagree on n: {a_c.shape[0]} vs {b_c.shape[0]}')
    if a_c.shape[0] < 2:
        raise ValueError('CKA needs at least 2 samples')
    norm_a = np.linalg.norm(a_c.T @ a_c)
    norm_b = np.linalg.norm(b_c.T @ b_c)
    if norm_a == 0 or norm_b == 0:
        raise ValueError('CKA is undefined for zero-variance features (all rows identical)')
    cross = np.linalg.norm(a_c.T @ b_c)
    return float(cross * cross / (norm_a * norm_b))


def cka_matrix(features, batch_size=None):
    """
    L x L linear CKA over per-layer (n, d) feature matrices.

    With `batch_size`, CKA is computed per consecutive minibatch and the
    results averaged; a trailing batch of one sample is folded into the
    previous batch.
    """
    features = [np.asarray(f, dtype=ACC) for f in features]
    if not features:
        raise ValueError('no layers to compare')
    n = features[0].shape[0]
    if n < 2:
        raise ValueError('CKA needs at least 2 images')

    if batch_size is None or batch_size >= n:
        bounds = [(0, n)]
    else:
        if batch_size < 2:
            raise ValueError('CKA minibatches need at least 2 images')
        starts = list(range(0, n, batch_size))
        if n - starts[-1] < 2:
            starts.pop()
        bounds = list(zip(starts, starts[1:] + [n]))

    depth = len(features)
    matrix = np.zeros((depth, depth), dtype=ACC)
    for start, stop in bounds:
        chunk = [f[start:stop] for f in features]
        for i in range(depth):
            for j in range(i, depth):
                matrix[i, j] += linear_cka(chunk[i], chunk[j])
    matrix /= len(bounds)
    return np.triu(matrix) + np.triu(matrix, 1).T


def layer_features(model, images, patch_only=False, threads=1):
    """(L, n, D) mean-pooled token features of layers 1..L."""
    def work(image):
        image = as_tensor(image, 3, 'image')
        _, height, width = image.shape
        target_w, target_h = scaled_size(width, height, 1.0, model.ratio)
        outputs = model.encode_image(resize_image(image, target_w, target_h))
        start = 1 if patch_only else 0
        return np.stack([
            outputs.layers[layer][start:].astype(ACC).mean(axis=0)
            for layer in range(1, outputs.depth + 1)
        ])

    if threads <= 1:
        per_image = [work(image) for image in images]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_image = list(pool.map(work, images))
    if not per_image:
        raise ValueError('CKA needs at least 2 images')
    return np.stack(per_image, axis=1)


def cka_heatmap(model, images, patch_only=False, batch_size=None, threads=1):
    """L x L CKA heatmap between every pair of encoder layers."""
    images = list(images)
    if len(images) < 2:
        raise ValueError('CKA needs at least 2 images')
    features = layer_features(model, images, patch_only, threads)
    matrix = cka_matrix(features, batch_size)
    logger.info('CKA heatmap over %d layers, %d images', matrix.shape[0], len(images))
    labels = tuple(f'layer {layer}' for layer in range(1, matrix.shape[0] + 1))
    return CkaHeatmap(matrix=matrix, labels=labels)
