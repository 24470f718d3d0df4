"""
Plot-ready CSV output: header row, 17 significant digits, LF line endings,
and a trailing ``# tool_version=...,config_hash=...,master_seed=...`` line.
"""
import csv
import hashlib
import io
import json
import logging
import os
import tempfile
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, TextIO

import numpy as np
from django.conf import settings

logger = logging.getLogger(__name__)


def format_value(value: Any) -> str:
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return '%.17g' % float(value)
    return str(value)


OUTPUT_KEYS = ('output', 'trajectory_output')


def config_hash(config: Dict[str, Any]) -> str:
    """sha256 over the canonical JSON of the validated config, output paths excluded."""
    hashed = {key: value for key, value in config.items() if key not in OUTPUT_KEYS}
    canonical = json.dumps(hashed, sort_keys=True, separators=(',', ':'), default=str)
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


@dataclass
class CsvTable:
    fieldnames: List[str]
    rows: List[Dict[str, Any]] = field(default_factory=list)

    def add(self, **row):
        self.rows.append(row)

    def render(self, config: Dict[str, Any], master_seed: int) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=self.fieldnames, extrasaction='ignore', lineterminator='\n')
        writer.writeheader()
        for row in self.rows:
            writer.writerow({key: format_value(row.get(key)) for key in self.fieldnames})
        buf.write(
            f"# tool_version={settings.DIFFLAB_TOOL_VERSION},"
            f"config_hash={config_hash(config)},master_seed={master_seed}\n"
        )
        return buf.getvalue()


def write_output(text: str, path: Optional[str], stdout: Optional[TextIO]):
    """
    Write to ``path`` through a temporary sibling renamed on success, or to
    stdout when no path is given.
    """
    if not path:
        stdout.write(text)
        return
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix='.difflab-', suffix='.tmp', dir=directory)
    try:
        with os.fdopen(fd, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    logger.info(f"Wrote {path}")
