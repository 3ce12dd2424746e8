"""
Sweep records and their CSV / JSON export.
"""

import csv
import io
import json
import logging
import os
from dataclasses import asdict, dataclass, fields
from typing import Optional

from errors import DomainError

logger = logging.getLogger(__name__)

FORMAT_CSV = 'csv'
FORMAT_JSON = 'json'
OUTPUT_FORMATS = (FORMAT_CSV, FORMAT_JSON)


@dataclass(frozen=True)
class SweepRecord:
    """
    One point of a figure sweep: theory value, MC estimate and the config actually run.

    loss_theory is None when no theory formula covers the config (a manual
    step outside every regime); it is written as an empty CSV cell and as
    JSON null.
    """
    sweep_var: str
    value: float
    loss_theory: Optional[float]
    loss_mc_mean: float
    loss_mc_stderr: float
    init: str
    n: int
    d: int
    k: int
    sigma: float
    seed: int

    def __post_init__(self):
        for name in ('loss_theory', 'loss_mc_mean', 'loss_mc_stderr'):
            if name == 'loss_theory' and self.loss_theory is None:
                continue
            if not getattr(self, name) >= 0:
                raise DomainError(f"{name} must be >= 0, got {getattr(self, name)!r}")


SWEEP_FIELDS = [f.name for f in fields(SweepRecord)]


def _format_cell(value):
    if value is None:
        return ''
    if isinstance(value, float):
        return format(value, '.17g')
    return str(value)


def check_writable(out_path):
    """
    Fail early when out_path cannot be created or overwritten.

    Raises:
        OSError: If the parent directory is missing or read-only
    """
    if out_path is None:
        return
    parent = os.path.dirname(os.path.abspath(out_path))
    if not os.path.isdir(parent):
        raise OSError(f"Output directory does not exist: {parent}")
    if os.path.exists(out_path) and not os.access(out_path, os.W_OK):
        raise OSError(f"Output file is not writable: {out_path}")
    if not os.access(parent, os.W_OK):
        raise OSError(f"Output directory is not writable: {parent}")


def records_to_csv(records):
    output = io.StringIO()
    writer = csv.DictWriter(output, fieldnames=SWEEP_FIELDS, lineterminator='\n')
    writer.writeheader()
    for record in records:
        writer.writerow({name: _format_cell(v) for name, v in asdict(record).items()})
    return output.getvalue()


def records_to_json(records):
    return json.dumps([asdict(r) for r in records], indent=2) + '\n'


def write_records(records, out_path, fmt=FORMAT_CSV):
    """
    Write records to out_path (or return the text when out_path is None).

    Args:
        records: Iterable of SweepRecord
        out_path: Destination file path, or None
        fmt: 'csv' or 'json'

    Returns:
        The serialised text

    Raises:
        OSError: If the destination is not writable
    """
    if fmt not in OUTPUT_FORMATS:
        raise ValueError(f"Unknown output format '{fmt}'")
    records = list(records)
    text = records_to_csv(records) if fmt == FORMAT_CSV else records_to_json(records)
    if out_path is not None:
        with open(out_path, 'w', encoding='utf-8', newline='') as f:
            f.write(text)
        logger.info("Wrote %d record(s) to %s", len(records), out_path)
    return text
