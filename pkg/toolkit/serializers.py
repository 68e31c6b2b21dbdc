from rest_framework import serializers

from dtop.config import (
    FUSION_METHODS,
    MODES,
    POS_MODES,
    SAMPLING_MODES,
    ConfigError,
    ElmConfig,
    EncoderConfig,
    FusionConfig,
    HeadConfig,
    ModelConfig,
    PipelineConfig,
    SamplerConfig,
)
from dtop.serializers import StrictSerializer


# Every field is optional; keys left out take the dataclass defaults.

def _pair(**kwargs):
    return serializers.ListField(
        child=serializers.IntegerField(**kwargs), min_length=2, max_length=2, required=False
    )


class EncoderSerializer(StrictSerializer):
    dim = serializers.IntegerField(min_value=1, required=False)
    depth = serializers.IntegerField(min_value=0, required=False)
    heads = serializers.IntegerField(min_value=1, required=False)
    use_stem = serializers.BooleanField(required=False)
    stem_ratio = serializers.IntegerField(min_value=2, required=False)
    patch_size = serializers.IntegerField(min_value=1, required=False)
    pos_grid = _pair(min_value=1)
    pos_mode = serializers.ChoiceField(choices=POS_MODES, required=False)
    ln_eps = serializers.FloatField(min_value=0, required=False)
    init_std = serializers.FloatField(min_value=0, required=False)


class ElmSerializer(StrictSerializer):
    dilation_rates = serializers.ListField(
        child=serializers.IntegerField(min_value=1), min_length=1, required=False
    )
    expansion = serializers.IntegerField(min_value=1, required=False)
    wb_blocks = serializers.IntegerField(min_value=1, required=False)
    wb_scale = serializers.FloatField(required=False)
    use_irb = serializers.BooleanField(required=False)
    use_aspp = serializers.BooleanField(required=False)
    use_wb = serializers.BooleanField(required=False)
    mode = serializers.ChoiceField(choices=MODES, required=False)


class FusionSerializer(StrictSerializer):
    method = serializers.ChoiceField(choices=FUSION_METHODS, required=False)
    v1 = serializers.FloatField(required=False)
    v2 = serializers.FloatField(required=False)
    eps = serializers.FloatField(min_value=0, required=False)


class HeadSerializer(StrictSerializer):
    k = serializers.IntegerField(min_value=1, required=False)
    out_dim = serializers.IntegerField(min_value=1, required=False)
    use_global = serializers.BooleanField(required=False)
    use_local = serializers.BooleanField(required=False)
    use_elm = serializers.BooleanField(required=False)
    dropout = serializers.FloatField(min_value=0, required=False)
    bn_eps = serializers.FloatField(min_value=0, required=False)
    elm = ElmSerializer(required=False)
    fusion = FusionSerializer(required=False)


class PipelineSerializer(StrictSerializer):
    scales = serializers.ListField(child=serializers.FloatField(), min_length=1, required=False)
    whitening = serializers.BooleanField(required=False)


class SamplerSerializer(StrictSerializer):
    mode = serializers.ChoiceField(choices=SAMPLING_MODES, required=False)
    batch_size = serializers.IntegerField(min_value=1, required=False)
    base_area = serializers.IntegerField(min_value=1, required=False)
    ratio_bins = serializers.IntegerField(min_value=1, required=False)
    fixed_size = _pair(min_value=1)


class ModelConfigSerializer(StrictSerializer):
    """
    Validates a configuration document and builds the `ModelConfig`.

    Structural checks (types, ranges, unknown keys) come from the fields;
    cross-field rules are enforced by the dataclasses and reported here.
    """
    encoder = EncoderSerializer(required=False)
    head = HeadSerializer(required=False)
    pipeline = PipelineSerializer(required=False)
    sampler = SamplerSerializer(required=False)
    seed = serializers.IntegerField(min_value=0, required=False)

    def validate(self, attrs):
        try:
            build_config(attrs)
        except ConfigError as exc:
            raise serializers.ValidationError(str(exc))
        return attrs

    def to_config(self):
        return build_config(self.validated_data)


def build_config(data):
    """`ModelConfig` from validated (possibly partial) data."""
    head = dict(data.get('head', {}))
    if 'elm' in head:
        head['elm'] = ElmConfig(**head['elm'])
    if 'fusion' in head:
        head['fusion'] = FusionConfig(**head['fusion'])
    return ModelConfig(
        encoder=EncoderConfig(**data.get('encoder', {})),
        head=HeadConfig(**head),
        pipeline=PipelineConfig(**data.get('pipeline', {})),
        sampler=SamplerConfig(**data.get('sampler', {})),
        **({'seed': data['seed']} if 'seed' in data else {}),
    )
