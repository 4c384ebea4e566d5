"""CSV and key-value text helpers shared by all file formats.

CSV files start with ``# key=value`` metadata lines, then one header row, then
data rows.  Floats are written with ``repr`` so a write/read cycle is exact.
"""

from __future__ import annotations

import csv
import hashlib
import io as _io
from pathlib import Path

import numpy as np


class CsvFormatError(ValueError):
    pass


def format_value(x):
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _meta_items(meta):
    if meta is None:
        return []
    return list(meta.items()) if isinstance(meta, dict) else list(meta)


def csv_text(header, rows, meta=None):
    buf = _io.StringIO()
    for key, value in _meta_items(meta):
        buf.write(f"# {key}={format_value(value)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_value(x) for x in row])
    return buf.getvalue()


def write_csv(path, header, rows, meta=None):
    """Write a table; returns the text written."""
    text = csv_text(header, rows, meta)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return text


def read_csv(path):
    """Return ``(meta, header, rows)``; ``rows`` are lists of strings with their 1-based line numbers."""
    meta, header, rows = {}, None, []
    with open(path, newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for lineno, line in enumerate(lines, start=1):
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
        elif line.strip():
            body.append((lineno, line))
    for lineno, parsed in zip((n for n, _ in body), csv.reader(line for _, line in body)):
        if header is None:
            header = parsed
        else:
            rows.append((lineno, parsed))
    if header is None:
        raise CsvFormatError(f"{path}: no header row")
    return meta, header, rows


def write_kv(path, items):
    Path(path).write_text("".join(f"{k} = {format_value(v)}\n" for k, v in _meta_items(items)))


def read_kv(path):
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CsvFormatError(f"{path}:{lineno}: expected 'key = value'")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k] = v
    return out


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()
