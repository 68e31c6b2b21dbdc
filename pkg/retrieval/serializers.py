from rest_framework import serializers

from dtop.serializers import StrictSerializer

from .metrics import GroundTruth, QueryTruth


# Ground-truth document: {"queries": [{"id", "bbox"?, "easy", "hard", "junk"}]}

class QueryTruthSerializer(StrictSerializer):
    id = serializers.CharField()
    bbox = serializers.ListField(
        child=serializers.FloatField(), min_length=4, max_length=4, required=False, allow_null=True
    )
    easy = serializers.ListField(child=serializers.CharField(), allow_empty=True)
    hard = serializers.ListField(child=serializers.CharField(), allow_empty=True)
    junk = serializers.ListField(child=serializers.CharField(), allow_empty=True)

    def validate_bbox(self, value):
        if value is not None and not (value[0] < value[2] and value[1] < value[3]):
            raise serializers.ValidationError('Expected x0 < x1 and y0 < y1.')
        return value

    def validate(self, attrs):
        easy, hard, junk = (set(attrs[name]) for name in ('easy', 'hard', 'junk'))
        shared = (easy & hard) | (easy & junk) | (hard & junk)
        if shared:
            raise serializers.ValidationError(
                f'easy, hard and junk must be disjoint (shared: {", ".join(sorted(shared)[:5])})'
            )
        return attrs


class GroundTruthSerializer(StrictSerializer):
    queries = QueryTruthSerializer(many=True)

    def validate_queries(self, value):
        ids = [query['id'] for query in value]
        if len(set(ids)) != len(ids):
            raise serializers.ValidationError('Query ids must be unique.')
        return value

    def to_ground_truth(self):
        return GroundTruth(queries=tuple(
            QueryTruth(
                id=query['id'],
                easy=query['easy'],
                hard=query['hard'],
                junk=query['junk'],
                bbox=query.get('bbox'),
            )
            for query in self.validated_data['queries']
        ))

    @classmethod
    def dump(cls, ground_truth):
        """Plain document for a `GroundTruth`."""
        queries = []
        for query in ground_truth:
            entry = {'id': query.id}
            if query.bbox is not None:
                entry['bbox'] = list(query.bbox)
            entry.update({name: sorted(getattr(query, name)) for name in ('easy', 'hard', 'junk')})
            queries.append(entry)
        return {'queries': queries}
