"""
Shared plumbing for the experiment commands: config loading and validation,
flag overrides, exit codes and atomic CSV output.

Exit codes: 0 success, 2 config error, 3 numeric or admissibility error.
"""
import logging
from typing import Any, Dict

from django.conf import settings
from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError
from rest_framework import serializers

from experiments.config import apply_overrides, error_paths, load_config
from experiments.csvout import CsvTable, write_output
from experiments.serializers import RunConfigSerializer

logger = logging.getLogger(__name__)

CONFIG_ERROR = 2
NUMERIC_ERROR = 3


class LabCommand(BaseCommand):
    """
    Base class for experiment commands.
    Subclasses declare ``overrides`` (option dest -> dotted config key) and
    implement ``run_experiment``.
    """
    overrides: Dict[str, str] = {}

    def add_arguments(self, parser):
        parser.add_argument('--config', help='key=value run config file')
        parser.add_argument('--seed', type=int, help='master seed (overrides mc.master_seed)')
        parser.add_argument('--out', help='CSV output path (default: stdout)')
        parser.add_argument('--threads', type=int, help='worker threads')
        self.add_experiment_arguments(parser)

    def add_experiment_arguments(self, parser):
        pass

    def flag_overrides(self, options) -> Dict[str, Any]:
        """Dotted-key overrides derived from flags that do not map one to one."""
        return {}

    def run_experiment(self, config: Dict[str, Any], threads: int) -> CsvTable:
        raise NotImplementedError

    def load(self, options) -> Dict[str, Any]:
        try:
            raw = load_config(options.get('config'))
            flags = {'mc.master_seed': options.get('seed'), 'output': options.get('out')}
            flags.update({key: options.get(dest) for dest, key in self.overrides.items()})
            flags.update(self.flag_overrides(options))
            serializer = RunConfigSerializer(data=apply_overrides(raw, flags))
            serializer.is_valid(raise_exception=True)
        except serializers.ValidationError as exc:
            raise CommandError(
                "invalid config: " + "; ".join(error_paths(exc.detail)), returncode=CONFIG_ERROR
            )
        return serializer.validated_data

    def handle(self, *args, **options):
        config = self.load(options)
        threads = options.get('threads')
        if threads is None:
            threads = settings.DIFFLAB_THREADS
        if threads < 1:
            raise CommandError("invalid config: threads: must be at least 1", returncode=CONFIG_ERROR)
        try:
            table = self.run_experiment(config, threads)
        except ValidationError as exc:
            code = getattr(exc, 'code', None) or 'invalid'
            raise CommandError(f"{code}: {'; '.join(exc.messages)}", returncode=NUMERIC_ERROR)

        text = table.render(config, config['mc']['master_seed'])
        write_output(text, config.get('output'), self.stdout)
        logger.info(f"{self.__class__.__module__.rsplit('.', 1)[-1]}: {len(table.rows)} rows")
