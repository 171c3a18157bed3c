"""CSV and JSON file helpers used by the command line front end.

Data files carry a mandatory header. Each row holds the predictors followed by
the lower triangle of the response in row-major order
(``y11, y21, y22, y31, ...``).
"""

import csv
import json
import os
import tempfile
from contextlib import contextmanager

import numpy as np

from . import spd
from .errors import NotPositiveDefinite, NotSymmetric


class DataFormatError(ValueError):
    """Malformed data file; ``row`` is the 1-based data row when known."""

    def __init__(self, message, row=None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


def tri_size(m):
    return m * (m + 1) // 2


def tri_dim(d):
    """Matrix size ``m`` with ``m(m+1)/2 == d``."""
    m = int(round((np.sqrt(8 * d + 1) - 1) / 2))
    if tri_size(m) != d:
        raise ValueError(f"{d} is not a triangular number")
    return m


def tri_names(m):
    return [f"y{i + 1}{j + 1}" for i in range(m) for j in range(i + 1)]


def pack_lower(a):
    """Row-major lower triangle of ``(..., m, m)`` as ``(..., m(m+1)/2)``."""
    a = np.asarray(a)
    i, j = np.tril_indices(a.shape[-1])
    return a[..., i, j]


def unpack_lower(v, m):
    v = np.asarray(v, dtype=float)
    out = np.zeros(v.shape[:-1] + (m, m))
    i, j = np.tril_indices(m)
    out[..., i, j] = v
    out[..., j, i] = v
    return out


def fmt(v):
    # repr round-trips doubles exactly
    return repr(float(v))


@contextmanager
def atomic_writer(path, mode="w"):
    """Write to a temporary file next to ``path`` and rename on success."""
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode, newline="" if "b" not in mode else None) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows):
    with atomic_writer(path) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])


def write_json(path, text):
    with atomic_writer(path) as fh:
        fh.write(text if isinstance(text, str) else json.dumps(text, indent=2, sort_keys=True))
        fh.write("\n")


def read_numeric_csv(path, ncols=None):
    """Header plus ``(rows, cols)`` float array; rejects ragged or non-numeric rows."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError("empty file (header required)") from None
        if ncols is not None and len(header) < ncols:
            raise DataFormatError(f"header has {len(header)} columns, expected at least {ncols}")
        width = len(header)
        rows = []
        for r, rec in enumerate(reader, start=1):
            if not rec or all(not f.strip() for f in rec):
                continue
            if len(rec) != width:
                raise DataFormatError(f"{len(rec)} fields, header has {width}", r)
            try:
                vals = [float(f) for f in rec]
            except ValueError:
                raise DataFormatError("non-numeric field", r) from None
            if not np.all(np.isfinite(vals)):
                raise DataFormatError("non-finite value", r)
            rows.append(vals)
    if not rows:
        raise DataFormatError("no data rows")
    return header, np.array(rows)


def infer_shape(header):
    """Guess ``(q, m)`` from ``x*`` / ``y*`` header names."""
    q = sum(h.lower().startswith("x") for h in header)
    d = sum(h.lower().startswith("y") for h in header)
    return q, (tri_dim(d) if d else 0)


def read_design(path, q):
    """Predictor columns (the first ``q``) of a data file."""
    header, data = read_numeric_csv(path, q)
    return header, data[:, :q]


def read_labeled(path, q, m):
    """Predictors ``(n, q)`` and SPD responses ``(n, m, m)``; row index reported on failure."""
    d = tri_size(m)
    header, data = read_numeric_csv(path, q + d)
    if data.shape[1] != q + d:
        raise DataFormatError(f"expected {q} predictor and {d} response columns, found {data.shape[1]}")
    x = data[:, :q]
    y = unpack_lower(data[:, q:], m)
    for r, p in enumerate(y, start=1):
        try:
            spd.cholesky(p)
        except NotPositiveDefinite:
            raise DataFormatError("response is not positive definite", r) from None
    try:
        y = spd.as_spd(y)
    except (NotSymmetric, NotPositiveDefinite) as exc:
        raise DataFormatError(str(exc)) from None
    return header, x, y
