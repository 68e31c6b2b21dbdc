"""
Deep token pooling head.

Multi-layer [CLS] and patch features from the last k encoder layers feed a
global branch (FC over the stacked [CLS] embeddings) and a local branch
(1x1 reduction, ELM, fusion, GAP, FC). The output head concatenates the
branch vectors and maps them to the final N-dimensional representation.
"""
from dataclasses import dataclass

import numpy as np

from kernels.ops import ACC, DTYPE, ShapeError, as_tensor, batchnorm_inference, fc, gap

from .elm import elm
from .fusion import fuse


@dataclass(frozen=True)
class MultiLayerFeatures:
    f_c: np.ndarray
    f_p: np.ndarray

    @property
    def k(self):
        return self.f_c.shape[0]


def collect_multilayer(outputs, k):
    """Stack z_[CLS] and the unfolded patch maps of layers L-k+1..L, in order."""
    depth = outputs.depth
    if not 1 <= k <= depth:
        raise ValueError(f'k must lie in 1..{depth}, got {k}')
    layers = range(depth - k + 1, depth + 1)
    f_c = np.stack([outputs.layers[layer][0] for layer in layers])
    f_p = np.stack([outputs.patch_map(layer) for layer in layers])
    return MultiLayerFeatures(f_c=f_c, f_p=f_p)


def global_branch(f_c, weights, bias=None):
    """u_c = FC(flatten(F_c))."""
    f_c = as_tensor(f_c, 2, 'F_c')
    return fc(f_c.reshape(-1), weights, bias)


def reduce_channels(f_p, weights, bias=None):
    """1x1 convolution from the kD channel concatenation of F_p down to D."""
    f_p = as_tensor(f_p, 4, 'F_p')
    k, h, w, dim = f_p.shape
    stacked = f_p.transpose(1, 2, 0, 3).reshape(h, w, k * dim)
    return fc(stacked, weights, bias)


def local_branch(y_fused, weights, bias=None):
    """u_p = FC(GAP(Y'))."""
    return fc(gap(y_fused), weights, bias)


def local_features(f_p, head_weights, head_cfg, rng=None):
    """Y' for the configured fusion; the ELM only runs when the fusion reads it."""
    y = reduce_channels(f_p, head_weights.reduce_w, head_weights.reduce_b)
    method = head_cfg.fusion_method
    if method == 'none_without_elm':
        return y
    u = elm(y, head_weights.elm, head_cfg.elm, rng)
    return fuse(y, u, head_cfg.fusion)


def dropout(x, rate, rng):
    """Inverted dropout; the identity when `rate` is 0."""
    if rate == 0:
        return x
    keep = rng.random(x.shape) >= rate
    return (x.astype(ACC) * keep / (1.0 - rate)).astype(DTYPE)


def output_head(u_c, u_p, weights, mode='infer', rng=None, rate=0.0, bn_eps=1e-5):
    """
    u = BN(FC(dropout([u_c; u_p]))) in training, FC([u_c; u_p]) at inference.

    Either branch vector may be None when that branch is switched off.
    """
    parts = [as_tensor(part, 1, 'branch vector') for part in (u_c, u_p) if part is not None]
    if not parts:
        raise ValueError('output head needs at least one branch vector')
    x = np.concatenate(parts)
    if x.shape[0] != weights.out_w.shape[0]:
        raise ShapeError(
            f'output FC expects {weights.out_w.shape[0]} inputs, branches give {x.shape[0]}'
        )
    if mode == 'infer':
        return fc(x, weights.out_w, weights.out_b)
    if mode != 'train':
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    x = fc(dropout(x, rate, rng), weights.out_w, weights.out_b)
    bn = weights.bn
    return batchnorm_inference(x, bn.mean, bn.var, bn.gamma, bn.beta, bn_eps)
