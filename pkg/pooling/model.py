"""The assembled DToP network: encoder plus pooling head."""
import logging
from dataclasses import fields, is_dataclass, replace

import numpy as np

from encoder.positions import position_sequence
from encoder.transformer import encode, image_tokens
from encoder.weights import init_encoder_weights, normal_draw, zeros_draw

from .head import collect_multilayer, global_branch, local_branch, local_features, output_head
from .weights import init_head_weights

logger = logging.getLogger(__name__)


class DToPModel:
    """
    Inference wrapper holding a `ModelConfig` and its weights.

    Weights are treated as read-only once built, so one model can serve any
    number of threads.
    """

    def __init__(self, config, encoder_weights, head_weights):
        self.config = config
        self.encoder_weights = encoder_weights
        self.head_weights = head_weights

    @classmethod
    def initialize(cls, config, seed=None):
        """Seeded Gaussian initialization (std `encoder.init_std`)."""
        seed = config.seed if seed is None else seed
        draw = normal_draw(np.random.default_rng(seed), config.encoder.init_std)
        return cls._build(config, draw)

    @classmethod
    def skeleton(cls, config):
        """Zero weights of the right shapes, ready for `load_state`."""
        return cls._build(config, zeros_draw)

    @classmethod
    def _build(cls, config, draw):
        encoder_weights = init_encoder_weights(config.encoder, draw)
        head_weights = init_head_weights(config.encoder.dim, config.head, draw)
        return cls(config, encoder_weights, head_weights)

    @property
    def ratio(self):
        return self.config.encoder.ratio

    @property
    def out_dim(self):
        return self.config.head.out_dim

    # -----------------------------------------------------------------
    # Forward
    # -----------------------------------------------------------------

    def encode_image(self, image):
        """EncoderOutputs for one (3, H, W) image with H, W multiples of the ratio."""
        cfg = self.config.encoder
        weights = self.encoder_weights
        tokens = image_tokens(image, weights, cfg).with_cls(weights.cls_token)
        pos = position_sequence(weights.pos, tokens.w, tokens.h, cfg.pos_mode)
        return encode(tokens, pos, weights, cfg.heads, cfg.ln_eps)

    def pool(self, outputs, mode='infer', rng=None):
        """Head forward over encoder outputs; returns the N-dimensional u."""
        head = self.config.head
        weights = self.head_weights
        if head.elm.mode != mode:
            head = replace(head, elm=replace(head.elm, mode=mode))
        if mode == 'train' and rng is None:
            raise ValueError('train mode needs a seeded random generator')

        features = collect_multilayer(outputs, head.k)
        u_c = u_p = None
        if head.use_global:
            u_c = global_branch(features.f_c, weights.global_w, weights.global_b)
        if head.use_local:
            fused = local_features(features.f_p, weights, head, rng)
            u_p = local_branch(fused, weights.local_w, weights.local_b)
        return output_head(u_c, u_p, weights, mode, rng, head.dropout, head.bn_eps)

    def describe(self, image, mode='infer', rng=None):
        return self.pool(self.encode_image(image), mode, rng)

    # -----------------------------------------------------------------
    # State
    # -----------------------------------------------------------------

    def state(self):
        """Ordered (name, array) pairs of every weight."""
        return list(_walk('encoder', self.encoder_weights)) + list(_walk('head', self.head_weights))

    def load_state(self, state):
        """Copy arrays into the skeleton; names and shapes must match exactly."""
        targets = dict(self.state())
        missing = set(targets) - set(state)
        unknown = set(state) - set(targets)
        if missing or unknown:
            raise ValueError(
                f'weight names do not match the config (missing {sorted(missing)[:3]}, '
                f'unexpected {sorted(unknown)[:3]})'
            )
        for name, target in targets.items():
            value = np.asarray(state[name], dtype=np.float32)
            if value.shape != target.shape:
                raise ValueError(f'weight {name} has shape {value.shape}, expected {target.shape}')
            target[...] = value
        logger.debug('loaded %d weight tensors', len(targets))
        return self


def _walk(prefix, node):
    if node is None:
        return
    if isinstance(node, np.ndarray):
        yield prefix, node
    elif isinstance(node, (list, tuple)):
        for index, item in enumerate(node):
            yield from _walk(f'{prefix}.{index}', item)
    elif is_dataclass(node):
        for member in fields(node):
            yield from _walk(f'{prefix}.{member.name}', getattr(node, member.name))
    else:
        raise TypeError(f'cannot serialize {type(node).__name__} at {prefix}')
