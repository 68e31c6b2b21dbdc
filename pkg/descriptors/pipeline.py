"""
Image -> retrieval descriptor.

Each scale resizes the image (Pillow, bilinear) so that both extents are
multiples of the model's token ratio, runs the network in inference mode
and L2-normalizes the output. Per-scale vectors are averaged and
re-normalized.
"""
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from PIL import Image

from kernels.ops import ACC, DTYPE, as_tensor, l2_normalize

DEFAULT_SCALES = (1.0, 1 / math.sqrt(2), 0.5)


@dataclass(frozen=True)
class Descriptor:
    values: np.ndarray
    image_id: str = None

    @property
    def dim(self):
        return self.values.shape[0]


def round_to_multiple(extent, multiple):
    """Round half up to a multiple, never below one multiple."""
    if extent <= 0:
        raise ValueError(f'extent must be positive, got {extent}')
    return max(multiple, int(math.floor(extent / multiple + 0.5)) * multiple)


def scaled_size(width, height, scale, ratio):
    return round_to_multiple(width * scale, ratio), round_to_multiple(height * scale, ratio)


def resize_image(image, width, height):
    """Bilinear resize of a channel-planar (C, H, W) image."""
    image = as_tensor(image, 3, 'image')
    if image.shape[1:] == (height, width):
        return image
    planes = [
        np.asarray(
            Image.fromarray(np.ascontiguousarray(plane)).resize(
                (width, height), Image.Resampling.BILINEAR
            ),
            dtype=DTYPE,
        )
        for plane in image
    ]
    return np.stack(planes)


def extract_descriptor(image, model, scales=DEFAULT_SCALES, image_id=None):
    """Multi-scale, unit-norm descriptor of one (3, H, W) image."""
    image = as_tensor(image, 3, 'image')
    scales = sorted(float(s) for s in scales)
    if not scales or min(scales) <= 0:
        raise ValueError('scales must be a non-empty list of positive numbers')

    _, height, width = image.shape
    per_scale = []
    for scale in scales:
        target_w, target_h = scaled_size(width, height, scale, model.ratio)
        u = model.describe(resize_image(image, target_w, target_h))
        per_scale.append(l2_normalize(u).astype(ACC))
    mean = np.mean(per_scale, axis=0)
    return Descriptor(values=l2_normalize(mean), image_id=image_id)


def extract_many(images, model, scales=DEFAULT_SCALES, threads=1):
    """
    Descriptors for `(image_id, image)` pairs, in input order.

    `images` may be lazy; each worker loads and describes one image.
    """
    def work(item):
        image_id, image = item
        if callable(image):
            image = image()
        return extract_descriptor(image, model, scales, image_id)

    if threads <= 1:
        return [work(item) for item in images]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(work, images))
