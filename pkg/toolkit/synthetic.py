"""
Procedural pattern corpus for end-to-end checks.

Every class is a coloured stripe pattern with its own hue, orientation and
frequency; views are random crops of the class canvas, rescaled to random
sizes and lightly noised.
"""
import colorsys
import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from retrieval.metrics import GroundTruth, QueryTruth

CANVAS = 128


@dataclass(frozen=True)
class SyntheticCorpus:
    images: dict
    labels: dict

    @property
    def ids(self):
        return sorted(self.images)

    def ground_truth(self):
        """The first view of each class queries the rest; the query itself is junk."""
        by_class = {}
        for image_id in self.ids:
            by_class.setdefault(self.labels[image_id], []).append(image_id)
        queries = []
        for members in by_class.values():
            query, *others = members
            queries.append(QueryTruth(id=query, easy=others, junk={query}))
        return GroundTruth(queries=tuple(queries))


def class_canvas(index, classes, size=CANVAS):
    hue = index / classes
    primary = np.array(colorsys.hsv_to_rgb(hue, 0.8, 0.9))
    secondary = np.array(colorsys.hsv_to_rgb((hue + 0.5) % 1.0, 0.5, 0.3))
    angle = math.pi * ((5 * index) % classes) / classes
    frequency = 2 + index % 4

    ys, xs = np.mgrid[0:size, 0:size] / size
    phase = xs * math.cos(angle) + ys * math.sin(angle)
    stripes = 0.5 + 0.5 * np.sin(2 * math.pi * frequency * phase)
    canvas = stripes[None] * primary[:, None, None] + (1 - stripes[None]) * secondary[:, None, None]
    return canvas.astype(np.float32)


def random_view(canvas, rng, min_size=40, max_size=80, noise=0.03):
    _, height, width = canvas.shape
    crop_w = int(rng.integers(width // 2, width + 1))
    crop_h = int(rng.integers(height // 2, height + 1))
    x0 = int(rng.integers(0, width - crop_w + 1))
    y0 = int(rng.integers(0, height - crop_h + 1))
    out_w = int(rng.integers(min_size, max_size + 1))
    out_h = int(rng.integers(min_size, max_size + 1))
    planes = [
        np.asarray(
            Image.fromarray(np.ascontiguousarray(plane[y0:y0 + crop_h, x0:x0 + crop_w])).resize(
                (out_w, out_h), Image.Resampling.BILINEAR
            ),
            dtype=np.float32,
        )
        for plane in canvas
    ]
    view = np.stack(planes) + rng.normal(0, noise, size=(3, out_h, out_w))
    return np.clip(view, 0, 1).astype(np.float32)


def make_corpus(classes=12, views=5, seed=0):
    rng = np.random.default_rng(seed)
    images = {}
    labels = {}
    for index in range(classes):
        canvas = class_canvas(index, classes)
        for view in range(views):
            image_id = f'c{index:02d}_v{view}'
            images[image_id] = random_view(canvas, rng)
            labels[image_id] = f'c{index:02d}'
    return SyntheticCorpus(images=images, labels=labels)
