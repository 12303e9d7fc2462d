"""CSV and binary column export."""
from __future__ import annotations

import csv
import io
import struct

import numpy as np

from .errors import ContractError

MAGIC = b"GMCF"
VERSION = 1
KIND = {"field": 0, "bm": 1, "bes3": 2}
_HEADER = struct.Struct("<4sBBHQ")  # magic, version, kind, d, count -> 16 bytes


def write_csv(path, header, rows):
    """RFC-4180 CSV (CRLF line ends, minimal quoting, UTF-8, '.' decimals)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def field_csv(path, samples):
    """One row per replica; columns ``replica`` then one per grid point."""
    m = samples[0].grid.n_points
    write_csv(path, ["replica"] + [f"x{i}" for i in range(m)],
              ([s.replica, *s.values] for s in samples))


def write_columns(path, columns, kind="field", d=1):
    """
    Binary column file: 16-byte header then the columns as little-endian float64.

    ``columns`` is a 2-D array of shape (rows, count); ``count`` (number of
    columns, i.e. grid points or path nodes) goes in the header and the rows
    are appended in C order.
    """
    arr = np.atleast_2d(np.asarray(columns, dtype="<f8"))
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, KIND[kind], int(d), arr.shape[1]))
        fh.write(arr.tobytes(order="C"))


def read_columns(path):
    """Inverse of :func:`write_columns`; returns ``(kind, d, array)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ContractError("file too short for a header")
    magic, version, kind, d, count = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ContractError("bad magic; not a GMCF file")
    if version != VERSION:
        raise ContractError(f"unsupported GMCF version {version}")
    body = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size)
    if count == 0 or body.size % count:
        raise ContractError("payload size is not a multiple of the column count")
    names = {v: k for k, v in KIND.items()}
    return names[kind], d, body.reshape(-1, count)


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()
