"""Head parameter containers and their seeded initialization."""
from dataclasses import dataclass

import numpy as np

from dtop.config import WIDE_FUSIONS
from encoder.weights import ConvWeights, zeros_draw


@dataclass
class IrbWeights:
    expand_w: np.ndarray
    expand_b: np.ndarray
    depthwise_w: np.ndarray
    depthwise_b: np.ndarray
    squeeze_w: np.ndarray
    squeeze_b: np.ndarray

    @property
    def hidden(self):
        return self.expand_w.shape[1]


@dataclass
class AsppWeights:
    branches: list
    reduce_w: np.ndarray
    reduce_b: np.ndarray


@dataclass
class ElmWeights:
    irb: IrbWeights
    aspp: AsppWeights


@dataclass
class BatchNormStats:
    mean: np.ndarray
    var: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray

    @classmethod
    def identity(cls, dim):
        return cls(
            mean=np.zeros(dim, dtype=np.float32),
            var=np.ones(dim, dtype=np.float32),
            gamma=np.ones(dim, dtype=np.float32),
            beta=np.zeros(dim, dtype=np.float32),
        )


@dataclass
class HeadWeights:
    out_w: np.ndarray
    out_b: np.ndarray
    bn: BatchNormStats
    # global branch (absent when the branch is switched off)
    global_w: np.ndarray = None
    global_b: np.ndarray = None
    # local branch
    reduce_w: np.ndarray = None
    reduce_b: np.ndarray = None
    elm: ElmWeights = None
    local_w: np.ndarray = None
    local_b: np.ndarray = None


def init_elm_weights(dim, cfg, draw):
    hidden = dim * cfg.expansion
    irb = IrbWeights(
        expand_w=draw(dim, hidden), expand_b=zeros_draw(hidden),
        depthwise_w=draw(3, 3, 1, hidden), depthwise_b=zeros_draw(hidden),
        squeeze_w=draw(hidden, dim), squeeze_b=zeros_draw(dim),
    )
    branches = [
        ConvWeights(weight=draw(3, 3, dim, dim), bias=zeros_draw(dim))
        for _ in cfg.dilation_rates
    ]
    aspp = AsppWeights(
        branches=branches,
        reduce_w=draw(len(branches) * dim, dim),
        reduce_b=zeros_draw(dim),
    )
    return ElmWeights(irb=irb, aspp=aspp)


def init_head_weights(dim, head, draw):
    """
    Build head weights for a `HeadConfig` on top of a `dim`-wide encoder.

    The local-branch FC reads D channels, or 2D when the fusion method
    concatenates; the output FC reads 2N with both branches and N with one.
    """
    n_out = head.out_dim
    weights = HeadWeights(out_w=None, out_b=None, bn=BatchNormStats.identity(n_out))
    branches = 0

    if head.use_global:
        weights.global_w = draw(head.k * dim, n_out)
        weights.global_b = zeros_draw(n_out)
        branches += 1

    if head.use_local:
        weights.reduce_w = draw(head.k * dim, dim)
        weights.reduce_b = zeros_draw(dim)
        if head.runs_elm:
            weights.elm = init_elm_weights(dim, head.elm, draw)
        fused = 2 * dim if head.fusion_method in WIDE_FUSIONS else dim
        weights.local_w = draw(fused, n_out)
        weights.local_b = zeros_draw(n_out)
        branches += 1

    weights.out_w = draw(branches * n_out, n_out)
    weights.out_b = zeros_draw(n_out)
    return weights
