"""Encoder parameter containers and their seeded initialization."""
from dataclasses import dataclass, field

import numpy as np

from .positions import PositionEmbedding


@dataclass
class LayerWeights:
    """One pre-norm transformer layer: LN -> MSA -> +, LN -> MLP -> +."""
    ln1_gamma: np.ndarray
    ln1_beta: np.ndarray
    wq: np.ndarray
    bq: np.ndarray
    wk: np.ndarray
    bk: np.ndarray
    wv: np.ndarray
    bv: np.ndarray
    wo: np.ndarray
    bo: np.ndarray
    ln2_gamma: np.ndarray
    ln2_beta: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray

    def zero_residual_branches(self):
        """Zero every MSA and MLP weight so the layer maps Z to Z."""
        for name in ('wq', 'bq', 'wk', 'bk', 'wv', 'bv', 'wo', 'bo', 'w1', 'b1', 'w2', 'b2'):
            getattr(self, name)[...] = 0


@dataclass
class ConvWeights:
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class EncoderWeights:
    cls_token: np.ndarray
    pos: PositionEmbedding
    layers: list = field(default_factory=list)
    # conv stem blocks (hybrid) or a raw patch projection
    stem: list = field(default_factory=list)
    patch_proj: np.ndarray = None
    patch_bias: np.ndarray = None

    @property
    def depth(self):
        return len(self.layers)


def normal_draw(rng, std):
    """Seeded Gaussian sampler used for every learnable matrix."""
    def draw(*shape):
        return (rng.standard_normal(shape, dtype=np.float32) * np.float32(std)).astype(np.float32)
    return draw


def zeros_draw(*shape):
    return np.zeros(shape, dtype=np.float32)


def stem_widths(cfg):
    """Channel widths of the stride-2 stem: 3 -> ... -> D, doubling per block."""
    blocks = cfg.stem_blocks
    return [3] + [cfg.dim // 2 ** (blocks - 1 - i) for i in range(blocks)]


def init_layer(dim, draw):
    hidden = 4 * dim
    return LayerWeights(
        ln1_gamma=np.ones(dim, dtype=np.float32),
        ln1_beta=np.zeros(dim, dtype=np.float32),
        wq=draw(dim, dim), bq=zeros_draw(dim),
        wk=draw(dim, dim), bk=zeros_draw(dim),
        wv=draw(dim, dim), bv=zeros_draw(dim),
        wo=draw(dim, dim), bo=zeros_draw(dim),
        ln2_gamma=np.ones(dim, dtype=np.float32),
        ln2_beta=np.zeros(dim, dtype=np.float32),
        w1=draw(dim, hidden), b1=zeros_draw(hidden),
        w2=draw(hidden, dim), b2=zeros_draw(dim),
    )


def init_encoder_weights(cfg, draw):
    """
    Build encoder weights for an `EncoderConfig`.

    `draw(*shape)` supplies every random matrix in a fixed order, so a seeded
    `normal_draw` gives reproducible weights and `zeros_draw` gives a
    skeleton to load a model file into. Biases start at zero and layer-norm
    gains at one.
    """
    dim = cfg.dim
    grid_w, grid_h = cfg.pos_grid
    cls_token = draw(dim)
    pos = PositionEmbedding(cls_pos=draw(dim), grid=draw(grid_h, grid_w, dim))

    stem, patch_proj, patch_bias = [], None, None
    if cfg.use_stem:
        widths = stem_widths(cfg)
        for c_in, c_out in zip(widths, widths[1:]):
            stem.append(ConvWeights(weight=draw(3, 3, c_in, c_out), bias=zeros_draw(c_out)))
    else:
        patch_proj = draw(3 * cfg.patch_size * cfg.patch_size, dim)
        patch_bias = zeros_draw(dim)

    layers = [init_layer(dim, draw) for _ in range(cfg.depth)]
    return EncoderWeights(
        cls_token=cls_token,
        pos=pos,
        layers=layers,
        stem=stem,
        patch_proj=patch_proj,
        patch_bias=patch_bias,
    )
