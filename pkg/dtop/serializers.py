from rest_framework import serializers


class StrictSerializer(serializers.Serializer):
    """Serializer that rejects keys it does not declare."""

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError(
                    {key: ['Unknown field.'] for key in unknown}
                )
        return super().to_internal_value(data)


def flatten_errors(errors, prefix=''):
    """'a.b: message' strings from a nested DRF error structure."""
    if isinstance(errors, dict):
        for key, value in errors.items():
            name = key if key != 'non_field_errors' else ''
            yield from flatten_errors(value, f'{prefix}.{name}'.strip('.') if name else prefix)
    elif isinstance(errors, list):
        if all(isinstance(item, str) for item in errors):
            for item in errors:
                yield f'{prefix}: {item}' if prefix else str(item)
        else:
            for index, item in enumerate(errors):
                yield from flatten_errors(item, f'{prefix}[{index}]')
    else:
        yield f'{prefix}: {errors}' if prefix else str(errors)
