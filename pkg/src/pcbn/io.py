"""Reading and writing samples on the copula scale."""
from __future__ import annotations

import csv
import io as _io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .exceptions import InputFormatError


@dataclass
class Sample:
    """Observations with named columns.

    Parameters
    ----------
    columns : tuple of str
    values : ndarray of shape (n, d)
    """

    columns: tuple
    values: np.ndarray

    def __post_init__(self):
        self.columns = tuple(str(c) for c in self.columns)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.columns):
            raise InputFormatError("values must be an (n, d) array matching the columns")
        if len(set(self.columns)) != len(self.columns):
            raise InputFormatError("duplicate column names")

    def __len__(self):
        return self.values.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.columns.index(str(name))]

    def as_dict(self) -> dict:
        return {c: self.values[:, i] for i, c in enumerate(self.columns)}

    def select(self, names: Iterable[str]) -> "Sample":
        names = [str(n) for n in names]
        return Sample(tuple(names), np.column_stack([self.column(n) for n in names]))


def as_sample(data, columns: Iterable[str] | None = None) -> Sample:
    """Coerce a :class:`Sample`, mapping or array into a :class:`Sample`."""
    if isinstance(data, Sample):
        return data
    if isinstance(data, Mapping):
        cols = tuple(str(c) for c in data)
        return Sample(cols, np.column_stack([np.asarray(data[c], dtype=float) for c in data]))
    arr = np.asarray(data, dtype=float)
    if columns is None:
        columns = tuple(str(i + 1) for i in range(arr.shape[1]))
    return Sample(tuple(columns), arr)


def check_uniform(sample: Sample) -> None:
    """Raise if some value is not finite or lies outside [0, 1]."""
    v = sample.values
    bad = ~np.isfinite(v) | (v < 0) | (v > 1)
    if bad.any():
        rows = sorted(set(np.nonzero(bad)[0].tolist()))
        raise InputFormatError(f"values outside [0, 1] or non-finite in rows {rows[:10]}")


def read_sample_csv(path, uniform: bool = True) -> Sample:
    """Read a CSV file with a header row of column names."""
    text = Path(path).read_text()
    return parse_sample_csv(text, uniform)


def parse_sample_csv(text: str, uniform: bool = True) -> Sample:
    rows = list(csv.reader(_io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        raise InputFormatError("empty CSV input")
    header = [h.strip() for h in rows[0]]
    data = []
    for k, r in enumerate(rows[1:], start=2):
        if len(r) != len(header):
            raise InputFormatError(f"line {k}: expected {len(header)} fields, got {len(r)}")
        try:
            data.append([float(x) for x in r])
        except ValueError:
            raise InputFormatError(f"line {k}: non-numeric field") from None
    values = np.array(data, dtype=float).reshape(-1, len(header))
    s = Sample(tuple(header), values)
    if uniform:
        check_uniform(s)
    return s


def format_sample_csv(sample: Sample) -> str:
    """CSV text with 17 significant digits, enough for an exact round trip."""
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(sample.columns)
    for row in sample.values:
        w.writerow([format(float(x), ".17g") for x in row])
    return buf.getvalue()


def write_sample_csv(sample: Sample, path) -> None:
    Path(path).write_text(format_sample_csv(sample))


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise InputFormatError(f"{path}: invalid JSON ({exc})") from None
