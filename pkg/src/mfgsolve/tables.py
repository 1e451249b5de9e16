"""Deterministic CSV reading/writing.

Floats are rendered with Python's shortest round-trip repr, so re-running
a seeded scenario rewrites byte-identical files.
"""

import csv
import io

import numpy as np


def fmt_value(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    x = float(v)
    if x != x:  # NaN
        return "nan"
    return repr(x)


def write_csv(path, header, rows):
    """Write rows (iterables of numbers/strings) under a header line."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([v if isinstance(v, str) else fmt_value(v) for v in row])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_csv(path):
    """Read a CSV written by :func:`write_csv`; returns (header, float ndarray)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader if row]
    return header, np.asarray(rows, dtype=float)
