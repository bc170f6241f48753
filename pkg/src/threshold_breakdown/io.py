"""CSV ingestion and deterministic CSV/JSON serialization."""

from __future__ import annotations

import csv
import io as _io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, DomainError

MAD_CONSTANT = 1.4826
SIG_DIGITS = 12
_MISSING = {"", "na", "nan", "null", "none"}


@dataclass(frozen=True)
class Ingested:
    """Parsed samples with bookkeeping on rejected rows."""

    samples: tuple
    labels: tuple
    dropped: int
    scales: tuple = ()

    @property
    def two_sample(self) -> bool:
        return len(self.samples) == 2


def mad_scale(x: np.ndarray) -> float:
    """Median absolute deviation scaled for consistency at the normal model."""
    x = np.asarray(x, float)
    return MAD_CONSTANT * float(np.median(np.abs(x - np.median(x))))


def _parse_float(cell: str, where: str) -> float | None:
    s = cell.strip()
    if s.lower() in _MISSING:
        return None
    try:
        v = float(s)
    except ValueError:
        raise DataError(f"{where}: cannot parse {cell!r} as a number") from None
    if math.isnan(v):
        return None
    return v


def _looks_numeric(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return cell.strip().lower() in _MISSING


def _read_rows(path):
    p = Path(path)
    if not p.is_file():
        raise DataError(f"{path}: no such file")
    text = p.read_text()
    sample = text[:4096]
    try:
        dialect = csv.Sniffer().sniff(sample, delimiters=",;\t ")
    except csv.Error:
        dialect = csv.excel
    rows = [r for r in csv.reader(_io.StringIO(text), dialect) if any(c.strip() for c in r)]
    if not rows:
        raise DataError(f"{path}: file is empty")
    header = None
    if not all(_looks_numeric(c) for c in rows[0]):
        header = [c.strip() for c in rows[0]]
    return header, rows, p


def _column_index(header, column, path, default=0):
    if column is None:
        return default
    if isinstance(column, int) or str(column).isdigit():
        return int(column)
    if header is None or column not in header:
        raise DataError(f"{path}: column {column!r} not found")
    return header.index(column)


def _read_column(path, column=None):
    header, rows, p = _read_rows(path)
    j = _column_index(header, column, p)
    start = 1 if header else 0
    vals, dropped = [], 0
    for line, row in enumerate(rows[start:], start=start + 1):
        if j >= len(row):
            raise DataError(f"{p}:{line}: missing column {j}")
        v = _parse_float(row[j], f"{p}:{line}")
        if v is None:
            dropped += 1
            continue
        vals.append(v)
    return np.array(vals, float), dropped


def ingest_csv(path, column=None, input2=None, group_col=None, mad_normalize: bool = False
               ) -> Ingested:
    """Read one sample, or two samples from two files or a group column.

    Blank and NaN cells are dropped and counted; any other unparseable cell
    raises :class:`DataError` naming the file and line.  With
    ``mad_normalize`` each sample is divided by its own normal-consistent MAD.
    """
    if input2 is not None and group_col is not None:
        raise DomainError("use either a second input file or a group column, not both")
    if group_col is not None:
        header, rows, p = _read_rows(path)
        g = _column_index(header, group_col, p)
        j = _column_index(header, column, p, default=1 if g == 0 else 0)
        start = 1 if header else 0
        groups: dict[str, list] = {}
        dropped = 0
        for line, row in enumerate(rows[start:], start=start + 1):
            if max(g, j) >= len(row):
                raise DataError(f"{p}:{line}: missing column")
            v = _parse_float(row[j], f"{p}:{line}")
            if v is None:
                dropped += 1
                continue
            groups.setdefault(row[g].strip(), []).append(v)
        if len(groups) != 2:
            raise DataError(f"{p}: group column must hold exactly two groups, found {len(groups)}")
        labels = tuple(groups)
        samples = tuple(np.array(groups[k], float) for k in labels)
    else:
        x, d1 = _read_column(path, column)
        samples, labels, dropped = (x,), (str(path),), d1
        if input2 is not None:
            y, d2 = _read_column(input2, column)
            samples, labels, dropped = (x, y), (str(path), str(input2)), d1 + d2
    for s, lab in zip(samples, labels):
        if s.size == 0:
            raise DomainError(f"sample {lab!r} is empty")
    scales = ()
    if mad_normalize:
        scales = tuple(mad_scale(s) for s in samples)
        if any(not sc > 0 for sc in scales):
            raise DomainError("MAD is zero; cannot normalize")
        samples = tuple(s / sc for s, sc in zip(samples, scales))
    return Ingested(samples, labels, dropped, scales)


# ---------------------------------------------------------------- output

def fmt(v) -> str:
    """Render a value for CSV: floats with 12 significant digits, +/-inf as text."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if v is None:
        return ""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        if math.isnan(v):
            return "nan"
        if v == 0:
            return "0"
        return format(v, f".{SIG_DIGITS}g")
    return str(v)


def to_csv(columns, rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([fmt(v) for v in r])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not math.isfinite(v):
            return fmt(v)
        return float(format(v, f".{SIG_DIGITS}g"))
    return v


def to_json(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2) + "\n"
