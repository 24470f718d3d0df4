"""
Run-config files: flat ``key=value`` lines (dotenv syntax) whose dotted keys
nest into blocks, e.g.

    target.kind=low_rank_gaussian
    target.d=32
    schedule.T=512
    mc.master_seed=7
"""
import logging
import os
from typing import Any, Dict, List, Mapping, Optional

from dotenv import dotenv_values
from rest_framework import serializers

logger = logging.getLogger(__name__)


def fold(flat: Mapping[str, Optional[str]]) -> Dict[str, Any]:
    """Fold dotted keys into nested dictionaries."""
    nested: Dict[str, Any] = {}
    for key, value in flat.items():
        if value is None:
            raise serializers.ValidationError({key: ["missing value"]})
        parts = key.split('.')
        node = nested
        for depth, part in enumerate(parts[:-1]):
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise serializers.ValidationError({'.'.join(parts[: depth + 1]): ["is a value, not a block"]})
            node = child
        if isinstance(node.get(parts[-1]), dict):
            raise serializers.ValidationError({key: ["is a block, not a value"]})
        node[parts[-1]] = value
    return nested


def load_config(path: Optional[str]) -> Dict[str, Any]:
    if path is None:
        return {}
    if not os.path.isfile(path):
        raise serializers.ValidationError({'config': [f"no such file: {path}"]})
    logger.info(f"Reading run config {path}")
    return fold(dotenv_values(path, interpolate=False))


def apply_overrides(config: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Set dotted keys whose override value is not None (CLI flags win)."""
    flat = {key: value for key, value in overrides.items() if value is not None}
    for key, value in fold(flat).items():
        if isinstance(value, dict) and isinstance(config.get(key), dict):
            config[key] = {**config[key], **value}
        else:
            config[key] = value
    return config


def error_paths(detail, prefix: str = '') -> List[str]:
    """Flatten DRF error detail into ``key.path: message`` lines."""
    if isinstance(detail, dict):
        lines = []
        for key, value in detail.items():
            path = key if not prefix else f"{prefix}.{key}"
            if key == 'non_field_errors' and prefix:
                path = prefix
            lines.extend(error_paths(value, path))
        return lines
    if isinstance(detail, list):
        lines = []
        for item in detail:
            lines.extend(error_paths(item, prefix))
        return lines
    return [f"{prefix}: {detail}" if prefix else str(detail)]
