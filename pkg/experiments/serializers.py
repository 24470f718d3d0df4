import os
from typing import Any, Dict

from rest_framework import serializers

from sampling.coefficients import FamilyKind
from sampling.services import InitKind
from sampling.targets import TargetKind

DEFAULT_GRID_FACTORS = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0, 4.0 / 3.0, 5.0 / 3.0, 2.0]

PERTURBATIONS = [
    ('none', 'Exact score'),
    ('constant_shift', 'Constant shift'),
    ('linear_field', 'Diagonal linear field'),
]

MODES = [('analytic', 'Exact law propagation'), ('ensemble', 'Particle ensemble')]


class CommaListField(serializers.ListField):
    """List field that also accepts ``a,b,c`` strings from config files and flags."""

    def to_internal_value(self, data):
        if isinstance(data, str):
            data = [item.strip() for item in data.split(',') if item.strip()]
        return super().to_internal_value(data)


class StrictSerializer(serializers.Serializer):
    """
    Base serializer for config blocks.
    Rejects keys it does not declare so typos cannot silently fall back to defaults.
    """

    def to_internal_value(self, data):
        if isinstance(data, dict):
            unknown = sorted(set(data) - set(self.fields))
            if unknown:
                raise serializers.ValidationError({key: ["unknown key"] for key in unknown})
        return super().to_internal_value(data)


def _existing_file(value: str) -> str:
    if not os.path.isfile(value):
        raise serializers.ValidationError(f"file does not exist: {value}")
    return value


class TargetSerializer(StrictSerializer):
    kind = serializers.ChoiceField(choices=TargetKind.choices, default=TargetKind.LOW_RANK_GAUSSIAN)
    d = serializers.IntegerField(min_value=1, default=2)
    k = serializers.IntegerField(min_value=1, required=False)
    variances = CommaListField(child=serializers.FloatField(min_value=0.0), required=False)
    atoms_file = serializers.CharField(required=False)
    weights = CommaListField(child=serializers.FloatField(min_value=0.0), required=False)
    declared_k = serializers.IntegerField(min_value=0, required=False)
    radius = serializers.FloatField(min_value=0.0, required=False)

    def validate_atoms_file(self, value: str) -> str:
        return _existing_file(value)

    def validate(self, attrs: Dict[str, Any]) -> Dict[str, Any]:
        kind = attrs['kind']
        if kind == TargetKind.LOW_RANK_GAUSSIAN:
            attrs.setdefault('k', 1)
            if attrs['k'] > attrs['d']:
                raise serializers.ValidationError({'k': ["must not exceed d"]})
        elif kind == TargetKind.DIAG_GAUSSIAN:
            if not attrs.get('variances'):
                raise serializers.ValidationError({'variances': ["required for diag_gaussian"]})
        elif 'atoms_file' not in attrs:
            raise serializers.ValidationError({'atoms_file': ["required for atom_mixture"]})
        return attrs


class ScheduleSerializer(StrictSerializer):
    T = serializers.IntegerField(min_value=2, default=64)
    T_grid = CommaListField(child=serializers.IntegerField(min_value=2), required=False)
    c0 = serializers.FloatField(required=False)
    c1 = serializers.FloatField(required=False)
    t = serializers.IntegerField(min_value=2, required=False)
    alpha = serializers.FloatField(required=False)
    alpha_bar = serializers.FloatField(required=False)

    def validate(self, attrs: Dict[str, Any]) -> Dict[str, Any]:
        if ('alpha' in attrs) != ('alpha_bar' in attrs):
            raise serializers.ValidationError("alpha and alpha_bar must be given together")
        if 'alpha' in attrs:
            if not 0.0 < attrs['alpha_bar'] < attrs['alpha'] < 1.0:
                raise serializers.ValidationError("need 0 < alpha_bar < alpha < 1")
        # an explicit (alpha, alpha_bar) pair resolves to a two-step schedule
        length = 2 if 'alpha' in attrs else attrs['T']
        if 't' in attrs and attrs['t'] > length:
            raise serializers.ValidationError(
                {'t': [f"must not exceed {length}, the resolved schedule length"]}
            )
        return attrs


class SamplerSerializer(StrictSerializer):
    family = serializers.ChoiceField(choices=FamilyKind.choices, default=FamilyKind.DDPM_ORIGINAL)
    families = CommaListField(child=serializers.ChoiceField(choices=FamilyKind.choices), required=False)
    xi = CommaListField(child=serializers.FloatField(min_value=0.0), required=False)
    varsigma_file = serializers.CharField(required=False)
    eta_file = serializers.CharField(required=False)
    sigma_file = serializers.CharField(required=False)
    mode = serializers.ChoiceField(choices=MODES, default='analytic')
    init = serializers.ChoiceField(choices=InitKind.choices, default=InitKind.STANDARD)

    def validate_varsigma_file(self, value: str) -> str:
        return _existing_file(value)

    def validate_eta_file(self, value: str) -> str:
        return _existing_file(value)

    def validate_sigma_file(self, value: str) -> str:
        return _existing_file(value)

    def validate(self, attrs: Dict[str, Any]) -> Dict[str, Any]:
        family = attrs['family']
        if family == FamilyKind.VARSIGMA and 'varsigma_file' not in attrs:
            raise serializers.ValidationError({'varsigma_file': ["required for the varsigma family"]})
        if family == FamilyKind.CUSTOM and not {'eta_file', 'sigma_file'} <= set(attrs):
            raise serializers.ValidationError({'eta_file': ["custom family needs eta_file and sigma_file"]})
        if family == FamilyKind.GENERALIZED_XI and not attrs.get('xi'):
            raise serializers.ValidationError({'xi': ["required for generalized_xi"]})
        return attrs


class McSerializer(StrictSerializer):
    n_samples = serializers.IntegerField(min_value=1, default=10000)
    master_seed = serializers.IntegerField(min_value=0, max_value=2 ** 64 - 1, default=0)


class ScoreSerializer(StrictSerializer):
    perturbation = serializers.ChoiceField(choices=PERTURBATIONS, default='none')
    epsilon = serializers.FloatField(min_value=0.0, default=0.0)
    epsilons = CommaListField(child=serializers.FloatField(min_value=0.0), required=False)
    direction = CommaListField(child=serializers.FloatField(), required=False)


class GridSerializer(StrictSerializer):
    factors = CommaListField(child=serializers.FloatField(min_value=0.0), default=DEFAULT_GRID_FACTORS)
    eta = serializers.FloatField(required=False)
    sigma = serializers.FloatField(min_value=0.0, required=False)

    def validate(self, attrs: Dict[str, Any]) -> Dict[str, Any]:
        if ('eta' in attrs) != ('sigma' in attrs):
            raise serializers.ValidationError("eta and sigma must be given together")
        return attrs


class AuditSerializer(StrictSerializer):
    C1 = serializers.FloatField(min_value=0.5, default=1.0)
    C2 = serializers.FloatField(min_value=0.0, default=4.0)


class RunConfigSerializer(StrictSerializer):
    """
    Whole run configuration. Missing blocks are validated as empty so their
    field defaults apply.
    """
    BLOCKS = ('target', 'schedule', 'sampler', 'mc', 'score', 'grid', 'audit')

    experiment = serializers.CharField(required=False)
    output = serializers.CharField(required=False)
    trajectory_output = serializers.CharField(required=False)
    target = TargetSerializer()
    schedule = ScheduleSerializer()
    sampler = SamplerSerializer()
    mc = McSerializer()
    score = ScoreSerializer()
    grid = GridSerializer()
    audit = AuditSerializer()

    def to_internal_value(self, data):
        if isinstance(data, dict):
            data = {**{block: {} for block in self.BLOCKS}, **data}
        return super().to_internal_value(data)
