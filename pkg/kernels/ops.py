"""
Dense tensor kernels.

Tensors are numpy arrays of float32. Spatial maps are laid out as
(h, w, C): `h` rows of `w` cells, row-major, which is also the order in
which token sequences are folded and unfolded. Reductions accumulate in
float64 and results are stored back as float32.

All functions are pure: they never modify their inputs and give
bitwise-identical results for identical inputs.
"""
import numpy as np


DTYPE = np.float32
ACC = np.float64


class ShapeError(ValueError):
    """Raised when tensor extents do not agree with an operation."""


def as_tensor(x, rank=None, name='tensor'):
    """Return `x` as a float32 array, checking rank 1-4 (or an exact rank)."""
    arr = np.asarray(x, dtype=DTYPE)
    if rank is not None and arr.ndim != rank:
        raise ShapeError(f'{name} must have rank {rank}, got shape {arr.shape}')
    if not 1 <= arr.ndim <= 4:
        raise ShapeError(f'{name} rank must be 1-4, got {arr.ndim}')
    return arr


# ---------------------------------------------------------------------
# Convolution
# ---------------------------------------------------------------------

def conv2d(x, weights, bias=None, dilation=1, groups=1):
    """
    Zero "same"-padded 2-D convolution of an (h, w, C_in) map.

    `weights` is (kH, kW, C_in/groups, C_out); output channel `o` belongs to
    group `o // (C_out/groups)`. Padding is (k-1)/2 * dilation per side so
    the spatial extent is preserved.
    """
    x = as_tensor(x, 3, 'conv2d input')
    weights = as_tensor(weights, 4, 'conv2d weights')
    h, w, c_in = x.shape
    k_h, k_w, c_group, c_out = weights.shape

    if groups < 1 or c_in % groups:
        raise ShapeError(f'groups={groups} does not divide {c_in} input channels')
    if c_group * groups != c_in:
        raise ShapeError(
            f'weights expect {c_group * groups} input channels, input has {c_in}'
        )
    if c_out % groups:
        raise ShapeError(f'groups={groups} does not divide {c_out} output channels')
    if k_h % 2 == 0 or k_w % 2 == 0:
        raise ShapeError(f'kernel extent must be odd, got {k_h}x{k_w}')
    if dilation < 1:
        raise ShapeError(f'dilation must be positive, got {dilation}')

    pad_h = (k_h - 1) // 2 * dilation
    pad_w = (k_w - 1) // 2 * dilation
    padded = np.pad(x.astype(ACC), ((pad_h, pad_h), (pad_w, pad_w), (0, 0)))
    taps = weights.astype(ACC)
    c_out_group = c_out // groups
    depthwise = groups == c_in and c_out == c_in

    out = np.zeros((h, w, c_out), dtype=ACC)
    for i in range(k_h):
        shift_h = i * dilation - pad_h
        if abs(shift_h) >= h:
            # the whole tap row reads padding
            continue
        for j in range(k_w):
            shift_w = j * dilation - pad_w
            if abs(shift_w) >= w:
                continue
            window = padded[i * dilation:i * dilation + h, j * dilation:j * dilation + w]
            if groups == 1:
                out += window @ taps[i, j]
            elif depthwise:
                out += window * taps[i, j, 0]
            else:
                grouped = window.reshape(h, w, groups, c_group)
                kernel = taps[i, j].reshape(c_group, groups, c_out_group)
                out += np.einsum('hwgc,cgo->hwgo', grouped, kernel).reshape(h, w, c_out)

    if bias is not None:
        bias = as_tensor(bias, 1, 'conv2d bias')
        if bias.shape[0] != c_out:
            raise ShapeError(f'bias has {bias.shape[0]} entries, expected {c_out}')
        out += bias
    return out.astype(DTYPE)


# ---------------------------------------------------------------------
# Resampling
# ---------------------------------------------------------------------

def _source_coords(src, dst):
    # align-corners: corners map onto corners; a single target cell reads index 0
    if dst == 1:
        return np.zeros(1, dtype=ACC)
    return np.arange(dst, dtype=ACC) * (src - 1) / (dst - 1)


def _linear_matrix(src, dst):
    coords = _source_coords(src, dst)
    lower = np.floor(coords).astype(int)
    upper = np.minimum(lower + 1, src - 1)
    frac = coords - lower
    matrix = np.zeros((dst, src), dtype=ACC)
    rows = np.arange(dst)
    np.add.at(matrix, (rows, lower), 1.0 - frac)
    np.add.at(matrix, (rows, upper), frac)
    return matrix


def _catmull_rom(t):
    # cubic convolution kernel with a = -0.5
    t = np.abs(t)
    near = (1.5 * t - 2.5) * t * t + 1.0
    far = ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    return np.where(t <= 1.0, near, np.where(t < 2.0, far, 0.0))


def _cubic_matrix(src, dst):
    coords = _source_coords(src, dst)
    base = np.floor(coords).astype(int)
    frac = coords - base
    matrix = np.zeros((dst, src), dtype=ACC)
    rows = np.arange(dst)
    for offset in (-1, 0, 1, 2):
        index = np.clip(base + offset, 0, src - 1)
        np.add.at(matrix, (rows, index), _catmull_rom(frac - offset))
    return matrix


_RESAMPLERS = {
    'bilinear': _linear_matrix,
    'bicubic': _cubic_matrix,
}


def resample(grid, target_w, target_h, mode='bilinear'):
    """
    Resample an (h', w', D) grid to (target_h, target_w, D).

    Interpolation is separable and align-corners: target index t reads the
    source coordinate t * (src - 1) / (dst - 1).
    """
    grid = as_tensor(grid, 3, 'resample grid')
    if target_w < 1 or target_h < 1:
        raise ShapeError(f'target extents must be positive, got {target_w}x{target_h}')
    try:
        build = _RESAMPLERS[mode]
    except KeyError:
        raise ValueError(f"unknown interpolation mode {mode!r}") from None

    src_h, src_w, _ = grid.shape
    rows = build(src_h, target_h)
    cols = build(src_w, target_w)
    out = np.einsum('ys,sxd->yxd', rows, grid.astype(ACC))
    out = np.einsum('xs,ysd->yxd', cols, out)
    return out.astype(DTYPE)


def bilinear_resample(grid, target_w, target_h):
    return resample(grid, target_w, target_h, 'bilinear')


def bicubic_resample(grid, target_w, target_h):
    return resample(grid, target_w, target_h, 'bicubic')


# ---------------------------------------------------------------------
# Pooling, linear maps, normalization
# ---------------------------------------------------------------------

def gap(y):
    """Global average pooling of an (h, w, D) map to a D vector."""
    y = as_tensor(y, 3, 'gap input')
    return y.astype(ACC).mean(axis=(0, 1)).astype(DTYPE)


def fc(x, weights, bias=None):
    """`x @ weights + bias` over the last axis of `x`."""
    x = as_tensor(x, name='fc input')
    weights = as_tensor(weights, 2, 'fc weights')
    if x.shape[-1] != weights.shape[0]:
        raise ShapeError(
            f'fc input width {x.shape[-1]} does not match weights {weights.shape}'
        )
    out = x.astype(ACC) @ weights.astype(ACC)
    if bias is not None:
        bias = as_tensor(bias, 1, 'fc bias')
        if bias.shape[0] != weights.shape[1]:
            raise ShapeError(f'fc bias has {bias.shape[0]} entries, expected {weights.shape[1]}')
        out += bias
    return out.astype(DTYPE)


def batchnorm_inference(x, mean, var, gamma, beta, eps=1e-5):
    """Batch normalization with stored statistics, elementwise over the last axis."""
    x = as_tensor(x, name='batchnorm input')
    var = np.asarray(var, dtype=ACC)
    if np.any(var < 0):
        raise ValueError('batchnorm variance must be non-negative')
    denom = var + eps
    if np.any(denom == 0):
        raise ValueError('batchnorm var + eps is zero for some channel')
    out = (x.astype(ACC) - np.asarray(mean, dtype=ACC)) / np.sqrt(denom)
    out = out * np.asarray(gamma, dtype=ACC) + np.asarray(beta, dtype=ACC)
    return out.astype(DTYPE)


def layernorm(x, gamma, beta, eps=1e-6):
    """Normalize over the last axis to zero mean / unit variance, then affine."""
    x = as_tensor(x, name='layernorm input').astype(ACC)
    mean = x.mean(axis=-1, keepdims=True)
    var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
    denom = np.sqrt(var + eps)
    # a constant row with eps = 0 has nothing to normalize
    normed = np.divide(x - mean, denom, out=np.zeros_like(x), where=denom > 0)
    out = normed * np.asarray(gamma, dtype=ACC) + np.asarray(beta, dtype=ACC)
    return out.astype(DTYPE)


def softmax(x, axis=-1):
    """Max-shifted softmax."""
    x = as_tensor(x, name='softmax input').astype(ACC)
    shifted = x - x.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    return (exp / exp.sum(axis=axis, keepdims=True)).astype(DTYPE)


def l2_normalize(x):
    """Scale a vector to unit L2 norm."""
    x = as_tensor(x, 1, 'l2_normalize input').astype(ACC)
    norm = np.sqrt(np.dot(x, x))
    if not norm > 0:
        raise ValueError('cannot L2-normalize a zero vector')
    return (x / norm).astype(DTYPE)


def l2_normalize_rows(x):
    """Row-wise `l2_normalize` of an (n, d) matrix."""
    x = as_tensor(x, 2, 'l2_normalize_rows input').astype(ACC)
    norms = np.sqrt((x * x).sum(axis=1, keepdims=True))
    if np.any(norms == 0):
        raise ValueError('cannot L2-normalize a zero row')
    return (x / norms).astype(DTYPE)


# ---------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------

def relu(x):
    x = np.asarray(x, dtype=DTYPE)
    return np.maximum(x, 0).astype(DTYPE)


def gelu(x):
    # tanh approximation
    x = np.asarray(x, dtype=ACC)
    inner = np.sqrt(2.0 / np.pi) * (x + 0.044715 * x ** 3)
    return (0.5 * x * (1.0 + np.tanh(inner))).astype(DTYPE)
