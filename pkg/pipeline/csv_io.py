"""Comma-separated numeric tables.

A first row that does not parse as numbers is taken as a header. Cells are
read as text by pandas and converted with numpy's float cast, which always
uses '.' as the decimal point and reproduces repr-written floats exactly.
"""
import csv
import logging
import sys
from contextlib import contextmanager

import numpy as np
import pandas as pd

from pipeline.preprocess import check_finite
from utils.errors import DataError

logger = logging.getLogger(__name__)

CHUNK_ROWS = 10000

# Spellings the float cast accepts as non-finite; check_finite reports them
NON_FINITE_TOKENS = {"nan", "+nan", "-nan", "inf", "+inf", "-inf", "infinity", "+infinity", "-infinity"}

_READ_OPTIONS = dict(dtype=str, na_filter=False, skipinitialspace=True, skip_blank_lines=True, encoding="utf-8")


def _undecodable_line(path):
    with open(path, "rb") as handle:
        for line, raw in enumerate(handle, start=1):
            try:
                raw.decode("utf-8")
            except UnicodeDecodeError:
                return line
    return None


def _read_error(path, e):
    if isinstance(e, OSError):
        return DataError(f"Cannot read {path}: {e}")
    line = _undecodable_line(path)
    if line is not None:
        return DataError(f"{path} is not UTF-8 text (line {line})")
    return DataError(f"Malformed table {path}: {str(e).strip()}")


def _is_numeric(cells):
    numeric = pd.to_numeric(pd.Series(cells), errors="coerce").notna()
    return bool((numeric | pd.Series(cells).str.strip().str.lower().isin(NON_FINITE_TOKENS)).all())


def _first_row(path):
    try:
        head = pd.read_csv(path, header=None, nrows=1, **_READ_OPTIONS)
    except pd.errors.EmptyDataError:
        return None
    except (OSError, ValueError) as e:
        raise _read_error(path, e) from e
    return [str(cell).strip() for cell in head.iloc[0]]


def _to_float(frame, first_line, names):
    """Float matrix of a text chunk; rows are numbered as lines of the file."""
    missing = frame.isna().any(axis=1).to_numpy()
    if missing.any():
        row = int(np.flatnonzero(missing)[0])
        raise DataError(f"Row {first_line + row} has fewer than {frame.shape[1]} cells")
    try:
        return frame.to_numpy(dtype=np.float64)
    except ValueError:
        pass
    for j in range(frame.shape[1]):
        cells = frame.iloc[:, j].str.strip()
        bad = pd.to_numeric(cells, errors="coerce").isna() & ~cells.str.lower().isin(NON_FINITE_TOKENS)
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            name = names[j] if names else f"column {j + 1}"
            raise DataError(f"{name} has a non-numeric cell {cells.iloc[row]!r} at row {first_line + row}")
    raise DataError(f"Table has a cell that does not parse as a number near row {first_line}")


def _header_lines(path):
    """Physical lines up to and including the header row."""
    with open(path, "rb") as handle:
        for line, raw in enumerate(handle, start=1):
            if raw.strip():
                return line
    return 0


def iter_table(path, chunk_rows=CHUNK_ROWS):
    """Yield (names, chunk) pairs of at most `chunk_rows` rows; names is None without a header."""
    first = _first_row(path)
    if first is None:
        return
    names = None if _is_numeric(first) else first
    skip = _header_lines(path) if names else 0
    line = skip + 1
    try:
        reader = pd.read_csv(path, header=None, skiprows=skip, chunksize=chunk_rows, **_READ_OPTIONS)
        with reader:
            for frame in reader:
                if frame.empty:
                    continue
                if names and frame.shape[1] != len(names):
                    raise DataError(f"Row {line} has {frame.shape[1]} cells, the header has {len(names)}")
                chunk = _to_float(frame, line, names)
                line += frame.shape[0]
                yield names, check_finite(chunk, names)
    except pd.errors.EmptyDataError:
        return
    except (OSError, ValueError) as e:
        if isinstance(e, DataError):
            raise
        raise _read_error(path, e) from e


def read_table(path):
    """Read a whole table into memory; returns (data, names)."""
    names, chunks = None, []
    for names, chunk in iter_table(path):
        chunks.append(chunk)
    if not chunks:
        raise DataError(f"{path} holds no data rows")
    data = np.concatenate(chunks)
    logger.info(f"Read {data.shape[0]} rows x {data.shape[1]} columns from {path}")
    return data, names


@contextmanager
def open_output(path):
    """Writable text stream for `path`, or stdout when path is None or '-'."""
    if path in (None, "-"):
        yield sys.stdout
        return
    with open(path, "w", newline="", encoding="utf-8") as handle:
        yield handle


def write_rows(stream, header, rows):
    writer = csv.writer(stream, lineterminator="\n")
    if header:
        writer.writerow(header)
    for row in rows:
        writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_table(path, header, rows):
    with open_output(path) as stream:
        write_rows(stream, header, rows)
    if path not in (None, "-"):
        logger.info(f"Wrote {path}")
