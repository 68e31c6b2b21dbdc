"""
Model, pipeline and sampler configuration.

The dataclasses here are the validated, immutable form of the JSON config
document; `toolkit.serializers.ModelConfigSerializer` parses the document
and builds them. Semantic checks live in `__post_init__` so that configs
built directly from Python are held to the same rules.
"""
import math
from dataclasses import asdict, dataclass, field, replace


POS_MODES = ('bilinear', 'bicubic', 'none', 'cpe')

FUSION_METHODS = (
    'none_without_elm',
    'none_with_elm',
    'sum',
    'hadamard',
    'concat',
    'fast_normalized',
    'orthogonal',
)

# fusion methods whose output carries both maps side by side (2D channels)
WIDE_FUSIONS = ('concat', 'orthogonal')

MODES = ('train', 'infer')

SAMPLING_MODES = ('group', 'fixed')

SIZE_MULTIPLE = 16


class ConfigError(ValueError):
    """Raised when a configuration value breaks a structural rule."""


def _check(condition, message):
    if not condition:
        raise ConfigError(message)


@dataclass(frozen=True)
class EncoderConfig:
    dim: int = 64
    depth: int = 12
    heads: int = 4
    use_stem: bool = True
    stem_ratio: int = 16
    patch_size: int = 16
    pos_grid: tuple = (24, 24)
    pos_mode: str = 'bilinear'
    ln_eps: float = 1e-6
    init_std: float = 0.02

    def __post_init__(self):
        object.__setattr__(self, 'pos_grid', tuple(self.pos_grid))
        _check(self.dim >= 1, 'encoder.dim must be positive')
        _check(self.depth >= 0, 'encoder.depth must be non-negative')
        _check(self.heads >= 1, 'encoder.heads must be positive')
        _check(self.dim % self.heads == 0,
               f'encoder.dim ({self.dim}) must be divisible by encoder.heads ({self.heads})')
        _check(self.patch_size >= 1, 'encoder.patch_size must be positive')
        ratio = self.stem_ratio
        _check(ratio >= 2 and ratio & (ratio - 1) == 0,
               f'encoder.stem_ratio must be a power of two >= 2, got {ratio}')
        _check(self.dim % (ratio // 2) == 0,
               f'encoder.dim ({self.dim}) must be divisible by stem_ratio/2 ({ratio // 2})')
        _check(len(self.pos_grid) == 2 and min(self.pos_grid) >= 1,
               'encoder.pos_grid must be two positive extents [w, h]')
        _check(self.pos_mode in POS_MODES,
               f"encoder.pos_mode must be one of {', '.join(POS_MODES)}")
        _check(self.ln_eps >= 0, 'encoder.ln_eps must be non-negative')
        _check(self.init_std >= 0, 'encoder.init_std must be non-negative')

    @property
    def ratio(self):
        """Pixels per token along each axis."""
        return self.stem_ratio if self.use_stem else self.patch_size

    @property
    def stem_blocks(self):
        return int(math.log2(self.stem_ratio))


@dataclass(frozen=True)
class ElmConfig:
    dilation_rates: tuple = (6, 12, 18)
    expansion: int = 4
    wb_blocks: int = 3
    wb_scale: float = 0.5
    use_irb: bool = True
    use_aspp: bool = True
    use_wb: bool = True
    mode: str = 'infer'

    def __post_init__(self):
        rates = tuple(int(r) for r in self.dilation_rates)
        object.__setattr__(self, 'dilation_rates', rates)
        _check(len(rates) >= 1 and min(rates) >= 1, 'elm.dilation_rates must be positive')
        _check(all(a < b for a, b in zip(rates, rates[1:])),
               'elm.dilation_rates must be strictly increasing')
        _check(self.expansion >= 1, 'elm.expansion must be at least 1')
        _check(self.wb_blocks >= 1, 'elm.wb_blocks must be at least 1')
        _check(0 < self.wb_scale <= 1, 'elm.wb_scale must lie in (0, 1]')
        _check(self.mode in MODES, f"elm.mode must be one of {', '.join(MODES)}")


@dataclass(frozen=True)
class FusionConfig:
    method: str = 'orthogonal'
    v1: float = 1.0
    v2: float = 1.0
    eps: float = 1e-4

    def __post_init__(self):
        _check(self.method in FUSION_METHODS,
               f"fusion.method must be one of {', '.join(FUSION_METHODS)}")
        _check(self.eps >= 0, 'fusion.eps must be non-negative')
        if self.method == 'fast_normalized':
            _check(self.eps > 0, 'fusion.eps must be positive for fast_normalized')

    @property
    def widens(self):
        return self.method in WIDE_FUSIONS


@dataclass(frozen=True)
class HeadConfig:
    k: int = 6
    out_dim: int = 1536
    use_global: bool = True
    use_local: bool = True
    use_elm: bool = True
    dropout: float = 0.2
    bn_eps: float = 1e-5
    elm: ElmConfig = field(default_factory=ElmConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)

    def __post_init__(self):
        _check(self.k >= 1, 'head.k must be at least 1')
        _check(self.out_dim >= 1, 'head.out_dim must be positive')
        _check(self.use_global or self.use_local,
               'head needs at least one of use_global / use_local')
        _check(0 <= self.dropout < 1, 'head.dropout must lie in [0, 1)')
        _check(self.bn_eps >= 0, 'head.bn_eps must be non-negative')

    @property
    def fusion_method(self):
        """Effective fusion: a disabled ELM means Y' = Y."""
        return self.fusion.method if self.use_elm else 'none_without_elm'

    @property
    def runs_elm(self):
        return self.fusion_method != 'none_without_elm'


@dataclass(frozen=True)
class PipelineConfig:
    scales: tuple = (1.0, 1 / math.sqrt(2), 0.5)
    whitening: bool = True

    def __post_init__(self):
        scales = tuple(float(s) for s in self.scales)
        object.__setattr__(self, 'scales', scales)
        _check(len(scales) >= 1, 'pipeline.scales must not be empty')
        _check(all(s > 0 for s in scales), 'pipeline.scales must be positive')


@dataclass(frozen=True)
class SamplerConfig:
    mode: str = 'group'
    batch_size: int = 32
    base_area: int = 384 * 384
    ratio_bins: int = 8
    fixed_size: tuple = (384, 384)

    def __post_init__(self):
        object.__setattr__(self, 'fixed_size', tuple(self.fixed_size))
        _check(self.mode in SAMPLING_MODES,
               f"sampler.mode must be one of {', '.join(SAMPLING_MODES)}")
        _check(self.batch_size >= 1, 'sampler.batch_size must be at least 1')
        _check(self.base_area >= SIZE_MULTIPLE * SIZE_MULTIPLE,
               'sampler.base_area must be at least 16*16')
        _check(self.ratio_bins >= 1, 'sampler.ratio_bins must be at least 1')
        _check(len(self.fixed_size) == 2
               and all(s > 0 and s % SIZE_MULTIPLE == 0 for s in self.fixed_size),
               'sampler.fixed_size extents must be positive multiples of 16')


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    head: HeadConfig = field(default_factory=HeadConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    seed: int = 0

    def __post_init__(self):
        _check(self.head.k <= self.encoder.depth,
               f'head.k ({self.head.k}) must not exceed encoder.depth ({self.encoder.depth})')

    def to_dict(self):
        """Plain JSON-ready form; every key is emitted."""
        def plain(value):
            if isinstance(value, dict):
                return {key: plain(item) for key, item in value.items()}
            if isinstance(value, (list, tuple)):
                return [plain(item) for item in value]
            return value
        return plain(asdict(self))

    def with_overrides(self, seed=None, k=None, fusion=None, scales=None):
        """Apply command-line overrides; re-runs every validation."""
        head = self.head
        if k is not None:
            head = replace(head, k=k)
        if fusion is not None:
            head = replace(head, fusion=replace(head.fusion, method=fusion))
        pipeline = self.pipeline if scales is None else replace(self.pipeline, scales=tuple(scales))
        return replace(
            self,
            head=head,
            pipeline=pipeline,
            seed=self.seed if seed is None else seed,
        )
