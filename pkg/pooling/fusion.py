"""
Fusion of the local branch's map Y with its ELM output U.

All methods work position-wise on (h, w, C) maps. `concat` and
`orthogonal` return 2C channels; every other method keeps C.
"""
import numpy as np

from kernels.ops import ACC, DTYPE, ShapeError, as_tensor

# below this squared norm a direction is treated as absent
PROJECTION_FLOOR = 1e-12


def orthogonal_residual(y, u):
    """y - proj_u(y) at every position, with proj := 0 where <u, u> < floor."""
    y = as_tensor(y, 3, 'y').astype(ACC)
    u = as_tensor(u, 3, 'u').astype(ACC)
    dot = (y * u).sum(axis=-1, keepdims=True)
    norm2 = (u * u).sum(axis=-1, keepdims=True)
    coeff = np.divide(dot, norm2, out=np.zeros_like(dot), where=norm2 >= PROJECTION_FLOOR)
    return (y - coeff * u).astype(DTYPE)


def fast_normalized_weights(v1, v2, eps):
    w1, w2 = max(v1, 0.0), max(v2, 0.0)
    if w1 + w2 + eps == 0:
        raise ValueError('fast_normalized fusion needs a positive weight or eps > 0')
    return w1, w2


def fuse(y, u, cfg):
    """Y' = FUSE(Y, U) for the method named in a `FusionConfig`."""
    y = as_tensor(y, 3, 'y')
    u = as_tensor(u, 3, 'u')
    if y.shape != u.shape:
        raise ShapeError(f'cannot fuse maps of shapes {y.shape} and {u.shape}')

    method = cfg.method
    if method == 'none_without_elm':
        return y
    if method == 'none_with_elm':
        return u
    if method == 'sum':
        return (y.astype(ACC) + u).astype(DTYPE)
    if method == 'hadamard':
        return (y.astype(ACC) * u).astype(DTYPE)
    if method == 'concat':
        return np.concatenate([y, u], axis=-1)
    if method == 'fast_normalized':
        w1, w2 = fast_normalized_weights(cfg.v1, cfg.v2, cfg.eps)
        return ((w1 * y.astype(ACC) + w2 * u.astype(ACC)) / (w1 + w2 + cfg.eps)).astype(DTYPE)
    if method == 'orthogonal':
        return np.concatenate([orthogonal_residual(y, u), u], axis=-1)
    raise ValueError(f'unknown fusion method {method!r}')
