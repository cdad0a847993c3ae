"""CSV and PGM emission plus the matching readers.

Numbers are written with 17 significant digits so every file re-reads to the
same doubles.  Files use ``,`` separators, ``.`` decimals and LF endings.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from ..series import COLUMNS, TimeSeries
from ..sliding import SlidingCertificate

__all__ = [
    "format_number",
    "write_timeseries",
    "read_timeseries",
    "write_field_csv",
    "read_field_csv",
    "write_pgm",
    "read_pgm",
    "write_certificate",
    "read_certificate",
    "snapshot_paths",
]


def format_number(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return f"{v:.17g}"


def _parse_number(s):
    return float(s)


def write_timeseries(series, path):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for row in series:
            w.writerow([format_number(v) for v in row])
    return path


def read_timeseries(path):
    with Path(path).open(newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header) != COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = [[_parse_number(s) for s in line] for line in r if line]
    return TimeSeries(rows)


def write_field_csv(grid, values, path):
    """1D: ``x,value`` rows.  2D: the nodal matrix, one row per first-axis index."""
    values = np.asarray(values, dtype=float).reshape(grid.shape)
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if grid.dim == 1:
            w.writerow(("x", "value"))
            for x, v in zip(grid.axes()[0], values):
                w.writerow((format_number(x), format_number(v)))
        else:
            for row in values:
                w.writerow([format_number(v) for v in row])
    return path


def read_field_csv(path, grid=None):
    """Inverse of :func:`write_field_csv`; 1D files return the value column.

    With ``grid`` given, the shape (and for 1D the node coordinates) are checked.
    """
    with Path(path).open(newline="") as fh:
        lines = [line for line in csv.reader(fh) if line]
    if lines and lines[0] == ["x", "value"]:
        data = np.array([[_parse_number(s) for s in line] for line in lines[1:]])
        x, values = data[:, 0], data[:, 1]
        if grid is not None:
            if grid.dim != 1 or values.size != grid.n_nodes:
                raise ValueError(f"{path}: {values.size} values do not fit grid shape {grid.shape}")
            if not np.allclose(x, grid.axes()[0], rtol=0, atol=1e-9 * grid.extent[0]):
                raise ValueError(f"{path}: node coordinates do not match the grid")
        return values
    values = np.array([[_parse_number(s) for s in line] for line in lines])
    if grid is not None and values.shape != grid.shape:
        raise ValueError(f"{path}: matrix shape {values.shape} does not match grid {grid.shape}")
    return values


def write_pgm(values, path):
    """8-bit P2 image mapping [min, max] linearly onto [0, 255].

    A constant field maps to 0.  Rows are the first array axis; a 1D field
    becomes a one-row image.
    """
    a = np.atleast_2d(np.asarray(values, dtype=float))
    lo, hi = float(np.min(a)), float(np.max(a))
    if hi > lo:
        pix = np.rint((a - lo) / (hi - lo) * 255.0).astype(int)
    else:
        pix = np.zeros(a.shape, dtype=int)
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write("P2\n")
        fh.write(f"# min={format_number(lo)} max={format_number(hi)}\n")
        fh.write(f"{a.shape[1]} {a.shape[0]}\n255\n")
        for row in pix:
            fh.write(" ".join(map(str, row)) + "\n")
    return path


def read_pgm(path):
    """Returns ``(pixels, min, max)`` from a file written by :func:`write_pgm`."""
    lo = hi = None
    tokens = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            for part in line[1:].split():
                k, _, v = part.partition("=")
                if k == "min":
                    lo = float(v)
                elif k == "max":
                    hi = float(v)
            continue
        tokens.extend(line.split())
    if not tokens or tokens[0] != "P2":
        raise ValueError(f"{path}: not an ASCII PGM file")
    width, height, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    pix = np.array(tokens[4:], dtype=int)
    if pix.size != width * height or np.any(pix > maxval):
        raise ValueError(f"{path}: corrupt pixel data")
    return pix.reshape(height, width), lo, hi


def write_certificate(cert, path):
    path = Path(path)
    path.write_text(cert.to_text())
    return path


def read_certificate(path):
    return SlidingCertificate.from_text(Path(path).read_text())


def snapshot_paths(directory, name, step):
    base = Path(directory) / f"{name}_{step:06d}"
    return base.with_suffix(".csv"), base.with_suffix(".pgm")
