# apps/harness/serializers.py
from django.conf import settings
from rest_framework import serializers

from .models import ExperimentRun, IterationMetric
from .scenarios import (
    ADDITION_CHOICES,
    KIND_CHOICES,
    RECOVERY_CHOICES,
    ROUTING_CHOICES,
    Distribution,
    ScenarioConfig,
)


# ============================================================
# 1. SCENARIO FILES
# ============================================================

class DistributionField(serializers.Field):
    """
    Accepts a constant (`4`), a floor-uniform range (`[1, 20]`) or a mapping
    (`{low: 50, high: 100, phi: true}`).
    """

    default_error_messages = {
        'invalid': 'Expected a number, a [low, high] pair or a {low, high, phi} mapping.',
        'order': 'low ({low}) must not exceed high ({high}).',
        'minimum': 'low must be at least {minimum}, got {low}.',
    }

    def __init__(self, minimum=0, strict=False, **kwargs):
        self.minimum = minimum
        self.strict = strict
        super().__init__(**kwargs)

    def to_internal_value(self, data):
        if isinstance(data, bool):
            self.fail('invalid')
        if isinstance(data, (int, float)):
            low = high = float(data)
            phi = False
        elif isinstance(data, (list, tuple)) and len(data) == 2:
            low, high = (float(x) for x in data)
            phi = False
        elif isinstance(data, dict) and 'low' in data:
            low = float(data['low'])
            high = float(data.get('high', data['low']))
            phi = bool(data.get('phi', False))
        else:
            self.fail('invalid')
        if low > high:
            self.fail('order', low=low, high=high)
        if low < self.minimum or (self.strict and low <= self.minimum):
            self.fail('minimum', minimum=self.minimum, low=low)
        return Distribution(low, high, phi)

    def to_representation(self, value):
        return value.as_dict()


def _default(key):
    return lambda: settings.GWTF[key]


class ScenarioConfigSerializer(serializers.Serializer):
    """Validates a parsed scenario file into a frozen ScenarioConfig"""

    name = serializers.CharField(max_length=100)
    kind = serializers.ChoiceField(choices=KIND_CHOICES, default='training')
    description = serializers.CharField(required=False, allow_blank=True, default='')

    stages = serializers.IntegerField(min_value=1)
    relays = serializers.IntegerField(min_value=1)
    relays_per_stage = serializers.ListField(child=serializers.IntegerField(min_value=1), required=False, default=list)
    random_stage_sizes = serializers.BooleanField(default=False)

    data_nodes = serializers.IntegerField(min_value=1, default=1)
    data_capacity = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)
    microbatches = serializers.IntegerField(min_value=1, default=4)

    capacity = DistributionField(minimum=1, default=Distribution.constant(1))
    interlayer = DistributionField(minimum=0, default=Distribution.constant(1))
    intralayer = DistributionField(minimum=0, required=False, allow_null=True, default=None)
    bandwidth = DistributionField(minimum=0, strict=True, required=False, allow_null=True, default=None)
    activation_size = serializers.FloatField(min_value=0, default=0.0)
    compute_cost = DistributionField(minimum=0, default=Distribution.constant(0))

    candidates = serializers.IntegerField(min_value=0, default=0)
    candidate_capacity = DistributionField(minimum=1, required=False, allow_null=True, default=None)

    churn = serializers.FloatField(min_value=0, max_value=1, default=0.0)
    iterations = serializers.IntegerField(min_value=1, default=1)
    routing = serializers.ChoiceField(choices=ROUTING_CHOICES, default='gwtf')
    recovery = serializers.ChoiceField(choices=RECOVERY_CHOICES, default='gwtf')
    addition = serializers.ChoiceField(choices=ADDITION_CHOICES, default='gwtf')

    t0 = serializers.FloatField(min_value=0, default=_default('T0'))
    alpha = serializers.FloatField(min_value=0, max_value=1, default=_default('ALPHA'))
    window = serializers.IntegerField(min_value=1, default=_default('WINDOW'))
    k = serializers.FloatField(default=_default('K'))
    gamma = serializers.FloatField(min_value=0, max_value=1, default=_default('GAMMA'))
    eta = serializers.FloatField(min_value=0, default=_default('ETA'))
    dim = serializers.IntegerField(min_value=1, default=_default('PARAMS_DIM'))
    max_rounds = serializers.IntegerField(min_value=1, default=_default('MAX_ROUNDS'))
    max_queue = serializers.IntegerField(min_value=1, default=_default('MAX_QUEUE'))
    permutation_cap = serializers.IntegerField(min_value=1, default=_default('PERMUTATION_CAP'))

    seed = serializers.IntegerField(min_value=0, default=0)
    jitter = serializers.FloatField(min_value=0, default=0.0)
    latency_bound = serializers.FloatField(min_value=0, required=False, allow_null=True, default=None)
    congestion = serializers.BooleanField(default=False)
    round_interval = serializers.FloatField(min_value=0, required=False, allow_null=True, default=None)
    deadline_rounds = serializers.IntegerField(min_value=1, default=60)
    registry_ttl_rounds = serializers.IntegerField(min_value=1, default=3)
    time_scale = serializers.CharField(required=False, allow_blank=True, default='')

    def validate_k(self, value):
        if value <= 1:
            raise serializers.ValidationError('Timeout multiplier k must exceed 1.')
        return value

    def validate(self, attrs):
        stages = attrs['stages']
        per_stage = attrs.get('relays_per_stage') or []
        if per_stage:
            if len(per_stage) != stages:
                raise serializers.ValidationError(
                    {'relays_per_stage': f'Expected {stages} entries, got {len(per_stage)}.'}
                )
            if sum(per_stage) != attrs['relays']:
                raise serializers.ValidationError(
                    {'relays_per_stage': f'Entries sum to {sum(per_stage)}, not relays={attrs["relays"]}.'}
                )
        elif attrs['relays'] < stages:
            raise serializers.ValidationError({'relays': 'Every stage needs at least one relay.'})
        if attrs['interlayer'].phi:
            raise serializers.ValidationError({'interlayer': 'The phi offset only applies to intralayer costs.'})
        return attrs

    def create(self, validated_data):
        data = dict(validated_data)
        data['relays_per_stage'] = tuple(data.get('relays_per_stage') or ())
        return ScenarioConfig(**data)


# ============================================================
# 2. RUN RECORDS
# ============================================================

class IterationMetricSerializer(serializers.ModelSerializer):

    class Meta:
        model = IterationMetric
        fields = [
            "iteration",
            "duration",
            "time_per_microbatch",
            "throughput",
            "wasted_compute_time",
            "communication_time",
            "protocol_messages",
            "recovery",
        ]


class ExperimentRunSerializer(serializers.ModelSerializer):
    iteration_count = serializers.IntegerField(source='iterations.count', read_only=True)

    class Meta:
        model = ExperimentRun
        fields = [
            "id",
            "scenario",
            "kind",
            "seed",

            "routing",
            "recovery",
            "addition",

            "status",
            "error",
            "trace_hash",
            "summary",
            "iteration_count",

            "created_at",
            "finished_at",
        ]
        read_only_fields = fields


class ExperimentRunDetailSerializer(ExperimentRunSerializer):

    class Meta(ExperimentRunSerializer.Meta):
        fields = ExperimentRunSerializer.Meta.fields + ["config"]
        read_only_fields = fields
