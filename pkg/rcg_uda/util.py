import csv
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import Any

import numpy as np


def format_float(value: float) -> str:
    """Locale-independent, round-trippable float text.

    Examples:
        >>> format_float(0.1)
        '0.10000000000000001'
        >>> format_float(2.0)
        '2'
    """
    return f"{value:.17g}"


def format_cell(value: Any) -> str:
    """CSV text of one cell; booleans are written ``true``/``false``.

    Examples:
        >>> format_cell(np.float64(1.0) < 2.0)
        'true'
    """
    if isinstance(value, bool | np.bool_):
        return str(bool(value)).lower()
    if isinstance(value, float):
        return format_float(value)
    if value is None:
        return ""
    return str(value)


def write_rows(
    path: str | Path, header: Sequence[str], rows: Iterable[Mapping[str, Any]]
) -> Path:
    """Write dict rows as CSV with ``header`` order and full float precision."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(row.get(column)) for column in header])
    return path


def read_rows(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))

