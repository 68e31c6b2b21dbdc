"""
Dynamic position embedding (DPE).

A learned position embedding is stored at one fixed token-grid resolution
w' x h'. For every batch the patch part is unfolded to a w' x h' x D grid,
resampled to the batch's w x h grid and folded back; the [CLS] position is
prepended untouched.
"""
import logging
from dataclasses import dataclass

import numpy as np

from kernels.ops import ShapeError, as_tensor, resample

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PositionEmbedding:
    cls_pos: np.ndarray
    grid: np.ndarray

    def __post_init__(self):
        cls_pos = as_tensor(self.cls_pos, 1, 'cls_pos')
        grid = as_tensor(self.grid, 3, 'position grid')
        if grid.shape[2] != cls_pos.shape[0]:
            raise ShapeError(
                f'position grid width {grid.shape[2]} does not match cls_pos {cls_pos.shape[0]}'
            )
        object.__setattr__(self, 'cls_pos', cls_pos)
        object.__setattr__(self, 'grid', grid)

    @property
    def w(self):
        return self.grid.shape[1]

    @property
    def h(self):
        return self.grid.shape[0]

    @property
    def dim(self):
        return self.cls_pos.shape[0]


def unfold(sequence, w, h):
    """(w*h, D) token rows to an (h, w, D) grid; row-major."""
    sequence = as_tensor(sequence, 2, 'token rows')
    if sequence.shape[0] != w * h:
        raise ShapeError(f'{sequence.shape[0]} rows cannot unfold to {w}x{h}')
    return sequence.reshape(h, w, sequence.shape[1])


def fold(grid):
    """(h, w, D) grid to (w*h, D) token rows; inverse of `unfold`."""
    grid = as_tensor(grid, 3, 'grid')
    return grid.reshape(grid.shape[0] * grid.shape[1], grid.shape[2])


def resample_positions(pe, w, h, mode='bilinear'):
    """Position sequence P of shape (w*h + 1, D) for a w x h token grid."""
    if w < 1 or h < 1:
        raise ShapeError(f'target resolution must be positive, got {w}x{h}')
    if (w, h) == (pe.w, pe.h) and mode == 'bilinear':
        patches = pe.grid
    else:
        patches = resample(pe.grid, w, h, mode)
    return np.concatenate([pe.cls_pos[None, :], fold(patches)], axis=0)


def position_sequence(pe, w, h, pos_mode):
    """
    Position sequence for any configured `pos_mode`.

    `none` yields zeros (no position information); `cpe` is accepted by the
    configuration but has no implementation.
    """
    if pos_mode == 'none':
        return np.zeros((w * h + 1, pe.dim), dtype=np.float32)
    if pos_mode == 'cpe':
        raise NotImplementedError('conditional position embedding (cpe) is not implemented')
    logger.debug('resampling positions %dx%d -> %dx%d (%s)', pe.w, pe.h, w, h, pos_mode)
    return resample_positions(pe, w, h, pos_mode)
