"""
Hybrid vision-transformer encoder.

Images are channel-planar (C, H, W) float arrays. Patch tokens come either
from a raw patch projection or from a convolutional stem whose w x h x D
output is folded row-major into the token sequence. Every layer output
Z^0..Z^L is kept, together with the attention weights, for multi-layer
pooling and attention analysis.
"""
import logging
from dataclasses import dataclass

import numpy as np

from kernels.ops import ACC, DTYPE, ShapeError, as_tensor, conv2d, fc, gelu, layernorm, relu, softmax

from .positions import fold

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TokenSequence:
    """Token rows for a w x h grid, optionally led by the [CLS] row."""
    tokens: np.ndarray
    w: int
    h: int

    def __post_init__(self):
        tokens = as_tensor(self.tokens, 2, 'tokens')
        if tokens.shape[0] not in (self.w * self.h, self.w * self.h + 1):
            raise ShapeError(
                f'{tokens.shape[0]} tokens do not match a {self.w}x{self.h} grid'
            )
        object.__setattr__(self, 'tokens', tokens)

    @property
    def has_cls(self):
        return self.tokens.shape[0] == self.w * self.h + 1

    @property
    def dim(self):
        return self.tokens.shape[1]

    def with_cls(self, cls_token):
        if self.has_cls:
            return self
        cls_token = as_tensor(cls_token, 1, 'cls token')
        return TokenSequence(np.concatenate([cls_token[None, :], self.tokens]), self.w, self.h)


@dataclass(frozen=True)
class EncoderOutputs:
    layers: list
    attention: list
    w: int
    h: int

    @property
    def depth(self):
        return len(self.layers) - 1

    def patch_map(self, layer):
        """Patch tokens of Z^layer unfolded to (h, w, D)."""
        z = self.layers[layer]
        return z[1:].reshape(self.h, self.w, z.shape[1])


# ---------------------------------------------------------------------
# Token formation
# ---------------------------------------------------------------------

def _check_image(image, ratio):
    image = as_tensor(image, 3, 'image')
    _, height, width = image.shape
    if height % ratio or width % ratio:
        raise ShapeError(f'image {width}x{height} is not divisible by {ratio}')
    return image


def patchify(image, patch, projection, bias=None):
    """Raw non-overlapping patches, flattened (C, p, p) and projected to D."""
    image = _check_image(image, patch)
    channels, height, width = image.shape
    h, w = height // patch, width // patch
    patches = (
        image.reshape(channels, h, patch, w, patch)
        .transpose(1, 3, 0, 2, 4)
        .reshape(h * w, channels * patch * patch)
    )
    return TokenSequence(fc(patches, projection, bias), w, h)


def stem_forward(image, stem):
    """
    Convolutional stem: stride-2 3x3 conv + ReLU blocks.

    Each block is a same-padded convolution sampled at even positions, so
    `len(stem)` blocks downsample by 2**len(stem).
    """
    ratio = 2 ** len(stem)
    image = _check_image(image, ratio)
    x = image.transpose(1, 2, 0)
    for block in stem:
        x = relu(conv2d(x, block.weight, block.bias))[::2, ::2]
    return np.ascontiguousarray(x, dtype=DTYPE)


def image_tokens(image, weights, cfg):
    """Patch tokens of an image through the stem or the patch projection."""
    if cfg.use_stem:
        grid = stem_forward(image, weights.stem)
        return TokenSequence(fold(grid), grid.shape[1], grid.shape[0])
    return patchify(image, cfg.patch_size, weights.patch_proj, weights.patch_bias)


# ---------------------------------------------------------------------
# Transformer layers
# ---------------------------------------------------------------------

def multi_head_attention(z, layer, heads):
    """Returns the MSA output (n, D) and attention weights (heads, n, n)."""
    n, dim = z.shape
    head_dim = dim // heads

    def split(x):
        return x.astype(ACC).reshape(n, heads, head_dim).transpose(1, 0, 2)

    q = split(fc(z, layer.wq, layer.bq))
    k = split(fc(z, layer.wk, layer.bk))
    v = split(fc(z, layer.wv, layer.bv))
    scores = q @ k.transpose(0, 2, 1) / np.sqrt(head_dim)
    weights = softmax(scores, axis=-1)
    context = (weights.astype(ACC) @ v).transpose(1, 0, 2).reshape(n, dim)
    return fc(context, layer.wo, layer.bo), weights


def layer_forward(z, layer, heads, eps):
    attended, weights = multi_head_attention(layernorm(z, layer.ln1_gamma, layer.ln1_beta, eps), layer, heads)
    z = (z.astype(ACC) + attended).astype(DTYPE)
    hidden = gelu(fc(layernorm(z, layer.ln2_gamma, layer.ln2_beta, eps), layer.w1, layer.b1))
    z = (z.astype(ACC) + fc(hidden, layer.w2, layer.b2)).astype(DTYPE)
    return z, weights


def encode(tokens, pos, weights, heads, eps=1e-6):
    """Z^0 = X + P, Z^l = f^l(Z^(l-1)); all L+1 sequences are returned."""
    if not tokens.has_cls:
        raise ShapeError('encode expects a token sequence with a [CLS] row')
    pos = as_tensor(pos, 2, 'position sequence')
    if pos.shape != tokens.tokens.shape:
        raise ShapeError(
            f'position sequence {pos.shape} does not match tokens {tokens.tokens.shape}'
        )
    if tokens.dim % heads:
        raise ShapeError(f'dimension {tokens.dim} is not divisible by {heads} heads')

    z = (tokens.tokens.astype(ACC) + pos).astype(DTYPE)
    layers, attention = [z], []
    for layer in weights.layers:
        z, attn = layer_forward(z, layer, heads, eps)
        layers.append(z)
        attention.append(attn)
    logger.debug('encoded %d tokens through %d layers', z.shape[0], len(attention))
    return EncoderOutputs(layers=layers, attention=attention, w=tokens.w, h=tokens.h)


def cls_attention_map(outputs, layer):
    """Head-averaged attention of the [CLS] query over the patch keys, as (h, w)."""
    if not 1 <= layer <= outputs.depth:
        raise ValueError(f'layer must lie in 1..{outputs.depth}, got {layer}')
    weights = outputs.attention[layer - 1].astype(ACC).mean(axis=0)
    return weights[0, 1:].reshape(outputs.h, outputs.w).astype(DTYPE)
