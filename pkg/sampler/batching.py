"""
Mini-batch planning.

Group-size sampling puts images of similar aspect ratio in the same batch
and gives every batch one target size whose area is close to a base area;
the fixed-size plan resizes everything to one square.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from dtop.config import SIZE_MULTIPLE

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class BatchGroup:
    ids: tuple
    target_w: int
    target_h: int
    bucket: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'ids', tuple(self.ids))
        for extent in (self.target_w, self.target_h):
            if extent <= 0 or extent % SIZE_MULTIPLE:
                raise ValueError(f'batch target extents must be positive multiples of {SIZE_MULTIPLE}')

    def __len__(self):
        return len(self.ids)

    def to_dict(self):
        return {
            'ids': list(self.ids),
            'target_w': self.target_w,
            'target_h': self.target_h,
            'bucket': self.bucket,
        }


def _check_metas(metas):
    metas = [(str(image_id), int(width), int(height)) for image_id, width, height in metas]
    if not metas:
        raise ValueError('cannot plan batches for an empty image list')
    for image_id, width, height in metas:
        if width <= 0 or height <= 0:
            raise ValueError(f'image {image_id} has extent 0')
    return metas


def _chunks(items, size):
    return [items[start:start + size] for start in range(0, len(items), size)]


def target_size(ratio, base_area, multiple=SIZE_MULTIPLE):
    """(w, h) with w/h = ratio and w*h = base_area, snapped to `multiple` (at least one)."""
    def snap(extent):
        return max(multiple, int(math.floor(extent / multiple + 0.5)) * multiple)
    return snap(math.sqrt(base_area * ratio)), snap(math.sqrt(base_area / ratio))


def group_batches(metas, batch_size, base_area, ratio_bins, seed=0):
    """Equal-population aspect buckets, batched and shuffled under `seed`."""
    if batch_size < 1 or ratio_bins < 1:
        raise ValueError('batch_size and ratio_bins must be at least 1')
    metas = _check_metas(metas)
    rng = np.random.default_rng(seed)

    ordered = sorted(metas, key=lambda meta: (meta[1] / meta[2], meta[0]))
    buckets = np.array_split(np.arange(len(ordered)), min(ratio_bins, len(ordered)))

    batches = []
    for bucket, members in enumerate(buckets):
        ratios = [ordered[i][1] / ordered[i][2] for i in members]
        width, height = target_size(float(np.median(ratios)), base_area)
        ids = [ordered[i][0] for i in rng.permutation(members)]
        batches.extend(BatchGroup(chunk, width, height, bucket) for chunk in _chunks(ids, batch_size))

    order = rng.permutation(len(batches))
    logger.debug('planned %d group-size batches over %d buckets', len(batches), len(buckets))
    return [batches[i] for i in order]


def fixed_batches(metas, batch_size, size=(384, 384), seed=0):
    """Shuffled batches that all share one target size."""
    if batch_size < 1:
        raise ValueError('batch_size must be at least 1')
    width, height = size
    if width <= 0 or height <= 0 or width % SIZE_MULTIPLE or height % SIZE_MULTIPLE:
        raise ValueError(f'fixed size extents must be positive multiples of {SIZE_MULTIPLE}')
    metas = _check_metas(metas)
    rng = np.random.default_rng(seed)
    ids = [metas[i][0] for i in rng.permutation(len(metas))]
    return [BatchGroup(chunk, width, height, 0) for chunk in _chunks(ids, batch_size)]


def plan_batches(metas, sampler_config, seed=0):
    """Dispatch on `SamplerConfig.mode`."""
    if sampler_config.mode == 'fixed':
        return fixed_batches(metas, sampler_config.batch_size, sampler_config.fixed_size, seed)
    return group_batches(
        metas, sampler_config.batch_size, sampler_config.base_area, sampler_config.ratio_bins, seed
    )
