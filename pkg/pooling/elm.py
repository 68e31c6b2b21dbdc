"""
Enhanced locality module: ELM(Y) = ASPP(WB(IRB(WB(Y)))).

Maps are (h, w, D). Each component can be switched off in `ElmConfig`,
in which case it is skipped (identity).
"""
import logging

import numpy as np

from kernels.ops import ACC, DTYPE, as_tensor, conv2d, fc, relu

logger = logging.getLogger(__name__)


def waveblock(y, cfg, rng):
    """
    WaveBlock feature augmentation.

    At inference it is the identity. In training the rows are split into
    `wb_blocks` contiguous blocks, one block drawn from `rng` is kept and
    every other row is scaled by `wb_scale`.
    """
    if cfg.mode == 'infer':
        return y
    y = as_tensor(y, 3, 'waveblock input')
    rows = y.shape[0]
    if cfg.wb_blocks > rows:
        raise ValueError(f'wb_blocks={cfg.wb_blocks} exceeds the {rows} rows of the map')
    blocks = np.array_split(np.arange(rows), cfg.wb_blocks)
    keep = blocks[int(rng.integers(cfg.wb_blocks))]
    out = y.astype(ACC) * cfg.wb_scale
    out[keep] = y[keep]
    return out.astype(DTYPE)


def irb(y, weights):
    """Inverted residual block: y + squeeze(relu(depthwise(relu(expand(y)))))."""
    y = as_tensor(y, 3, 'irb input')
    hidden = relu(fc(y, weights.expand_w, weights.expand_b))
    hidden = relu(conv2d(hidden, weights.depthwise_w, weights.depthwise_b, groups=hidden.shape[-1]))
    return (y.astype(ACC) + fc(hidden, weights.squeeze_w, weights.squeeze_b)).astype(DTYPE)


def aspp(y, weights, cfg):
    """One dilated 3x3 conv per rate, concatenated and reduced back to D by a 1x1 conv."""
    y = as_tensor(y, 3, 'aspp input')
    if len(weights.branches) != len(cfg.dilation_rates):
        raise ValueError(
            f'{len(weights.branches)} ASPP branches for {len(cfg.dilation_rates)} dilation rates'
        )
    outputs = [
        conv2d(y, branch.weight, branch.bias, dilation=rate)
        for branch, rate in zip(weights.branches, cfg.dilation_rates)
    ]
    return fc(np.concatenate(outputs, axis=-1), weights.reduce_w, weights.reduce_b)


def elm(y, weights, cfg, rng=None):
    x = y
    if cfg.use_wb:
        x = waveblock(x, cfg, rng)
    if cfg.use_irb:
        x = irb(x, weights.irb)
    if cfg.use_wb:
        x = waveblock(x, cfg, rng)
    if cfg.use_aspp:
        x = aspp(x, weights.aspp, cfg)
    logger.debug('elm on %s map (%s mode)', 'x'.join(map(str, np.shape(y))), cfg.mode)
    return x
