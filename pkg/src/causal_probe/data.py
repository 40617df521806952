"""Feature tables: ingestion, standardisation and normality screening.

A :class:`FeatureTable` is an immutable, fully numeric, column-named matrix.
Rows are either whole coaching sessions (macro analysis) or single
conversational turns (micro analysis).
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import (
    DegenerateSample,
    DuplicateHeader,
    EmptyTable,
    MissingColumn,
    NonNumericCell,
    SampleTooLarge,
    SampleTooSmall,
    ValidationError,
    ZeroVarianceColumn,
)

# (name, description, modality, macro, micro)
FEATURE_SCHEMA = (
    ("AU1", "inner brow raiser", "visual", True, True),
    ("AU2", "outer brow raiser", "visual", True, True),
    ("AU4", "brow lowerer", "visual", True, True),
    ("AU5", "upper lid raiser", "visual", True, True),
    ("AU6", "cheek raiser", "visual", True, True),
    ("AU7", "lid tightener", "visual", True, True),
    ("AU9", "nose wrinkler", "visual", True, True),
    ("AU10", "upper lip raiser", "visual", True, True),
    ("AU12", "lip corner puller", "visual", True, True),
    ("AU14", "dimpler", "visual", True, True),
    ("AU15", "lip corner depressor", "visual", True, True),
    ("AU17", "chin raiser", "visual", True, True),
    ("AU20", "lip stretcher", "visual", True, True),
    ("AU23", "lip tightener", "visual", True, True),
    ("AU25", "lips part", "visual", True, True),
    ("AU26", "jaw drop", "visual", True, True),
    ("AU28", "lip suck", "visual", True, True),
    ("AU45", "blink", "visual", True, True),
    ("Pitch", "", "audio", False, True),
    ("Loudness", "", "audio", True, True),
    ("AlphaRatio", "", "audio", True, True),
    ("HammerbergIndex", "", "audio", True, True),
    ("SpectralFlux", "", "audio", True, True),
    ("SpeechDuration", "", "audio", False, True),
    ("SilenceDuration", "", "audio", False, True),
)

QUESTIONNAIRE_COLUMNS = (
    "PANAS_positive",
    "PANAS_negative",
    "ROSAS_warmth",
    "ROSAS_competence",
    "ROSAS_discomfort",
    "WAI_task",
    "WAI_goal",
    "WAI_bond",
)


def schema_columns(level=None, modality=None):
    """Column names of the behavioural feature schema.

    Parameters
    ----------
    level : {"macro", "micro"}, optional
        Keep only features used at that analysis level.
    modality : {"visual", "audio"}, optional
        Keep only features of that modality.
    """
    if level not in (None, "macro", "micro"):
        raise ValueError(f"unknown level {level!r}")
    out = []
    for name, _, mod, macro, micro in FEATURE_SCHEMA:
        if modality is not None and mod != modality:
            continue
        if level == "macro" and not macro:
            continue
        if level == "micro" and not micro:
            continue
        out.append(name)
    return out


@dataclass(frozen=True)
class FeatureTable:
    column_names: tuple
    values: np.ndarray
    row_granularity: str = "session"
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        names = tuple(str(c) for c in self.column_names)
        values = np.array(self.values, dtype=float, copy=True)
        if values.ndim == 1:
            values = values.reshape(-1, 1) if len(names) == 1 else values.reshape(1, -1)
        if values.ndim != 2 or values.shape[1] != len(names):
            raise ValidationError(
                f"values of shape {values.shape} do not match {len(names)} columns")
        if any(not c for c in names):
            raise ValidationError("column names must be nonempty")
        if len(set(names)) != len(names):
            dup = sorted({c for c in names if names.count(c) > 1})
            raise DuplicateHeader(f"duplicate column names: {dup}")
        if not np.all(np.isfinite(values)):
            r, c = np.argwhere(~np.isfinite(values))[0]
            raise NonNumericCell(int(r), names[c], values[r, c])
        if self.row_granularity not in ("session", "turn"):
            raise ValidationError(f"row_granularity must be 'session' or 'turn'")
        values.setflags(write=False)
        object.__setattr__(self, "column_names", names)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(names)})

    @property
    def n_rows(self):
        return self.values.shape[0]

    @property
    def n_cols(self):
        return self.values.shape[1]

    def index_of(self, name):
        try:
            return self._index[name]
        except KeyError:
            raise MissingColumn(name) from None

    def column(self, name):
        return self.values[:, self.index_of(name)]

    def columns(self, names):
        idx = [self.index_of(n) for n in names]
        return self.values[:, idx]

    def select(self, names):
        return FeatureTable(tuple(names), self.columns(names), self.row_granularity)

    def take_rows(self, rows):
        return FeatureTable(self.column_names, self.values[np.asarray(rows, dtype=int)],
                            self.row_granularity)

    def __eq__(self, other):
        if not isinstance(other, FeatureTable):
            return NotImplemented
        return (self.column_names == other.column_names
                and self.row_granularity == other.row_granularity
                and self.values.shape == other.values.shape
                and bool(np.array_equal(self.values, other.values)))

    __hash__ = None


def _read_text(source):
    if isinstance(source, (bytes, bytearray)):
        return bytes(source).decode("utf-8-sig")
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            return fh.read().decode("utf-8-sig")
    data = source.read()
    if isinstance(data, bytes):
        data = data.decode("utf-8-sig")
    return data


def load_table(source, schema=None, row_granularity="session"):
    """Parse comma-separated text with a header row into a :class:`FeatureTable`.

    ``source`` may be raw bytes, a path or a readable (binary or text) stream.
    When ``schema`` is given, every listed column must be present; order does
    not matter and extra columns are kept.
    """
    text = _read_text(source)
    records = [r for r in csv.reader(io.StringIO(text), delimiter=",", quotechar='"')
               if r and any(cell.strip() for cell in r)]
    if not records:
        raise EmptyTable("no header row")
    header = [h.strip() for h in records[0]]
    if any(not h for h in header):
        raise ValidationError("empty column name in header")
    seen = set()
    for h in header:
        if h in seen:
            raise DuplicateHeader(f"duplicate column {h!r}")
        seen.add(h)
    if schema is not None:
        for name in schema:
            if name not in seen:
                raise MissingColumn(name)
    rows = records[1:]
    if not rows:
        raise EmptyTable("header present but no data rows")
    values = np.empty((len(rows), len(header)))
    for i, rec in enumerate(rows):
        if len(rec) != len(header):
            raise ValidationError(
                f"row {i} has {len(rec)} cells, expected {len(header)}")
        for j, cell in enumerate(rec):
            try:
                v = float(cell)
            except ValueError:
                raise NonNumericCell(i, header[j], cell) from None
            if not math.isfinite(v):
                raise NonNumericCell(i, header[j], cell)
            values[i, j] = v
    return FeatureTable(tuple(header), values, row_granularity)


def save_table(table, dest=None):
    """Serialise ``table`` as CSV. Floats use ``repr`` so a reload is exact.

    Returns the encoded bytes; also writes them to ``dest`` (path or binary
    stream) when given.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(table.column_names)
    for row in table.values:
        writer.writerow([repr(float(v)) for v in row])
    data = buf.getvalue().encode("utf-8")
    if dest is not None:
        if isinstance(dest, (str, os.PathLike)):
            with open(dest, "wb") as fh:
                fh.write(data)
        else:
            dest.write(data)
    return data


def standardize(table):
    """Z-score every column using the sample (n - 1) standard deviation."""
    x = table.values
    if x.shape[0] < 2:
        raise ValidationError("need at least 2 rows to standardize")
    mean = x.mean(axis=0)
    centered = x - mean
    sd = np.sqrt((centered ** 2).sum(axis=0) / (x.shape[0] - 1))
    scale = np.maximum(np.abs(mean), 1.0)
    for j, name in enumerate(table.column_names):
        if sd[j] <= 1e-12 * scale[j]:
            raise ZeroVarianceColumn(name)
    z = centered / sd
    # second pass removes the O(eps) residual mean left by the first division
    z = z - z.mean(axis=0)
    z = z / np.sqrt((z ** 2).sum(axis=0) / (x.shape[0] - 1))
    return FeatureTable(table.column_names, z, table.row_granularity)


# Royston (1995) AS R94 polynomial coefficients, lowest order first.
_C1 = (0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056)
_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
_C3 = (0.5440, -0.39978, 0.025054, -6.714e-4)
_C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
_C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
_C6 = (-0.4803, -0.082676, 0.0030302)
_G = (-2.273, 0.459)


def _poly(coefs, x):
    return float(np.polynomial.polynomial.polyval(x, coefs))


def _swilk_coefficients(n):
    """Half vector of Shapiro-Wilk weights for the largest order statistics."""
    nn2 = n // 2
    if n == 3:
        return np.array([math.sqrt(0.5)])
    m = -ndtri((np.arange(1, nn2 + 1) - 0.375) / (n + 0.25))
    summ2 = 2.0 * np.sum(m ** 2)
    ssumm2 = math.sqrt(summ2)
    rsn = 1.0 / math.sqrt(n)
    a = np.empty(nn2)
    a1 = _poly(_C1, rsn) + m[0] / ssumm2
    if n > 5:
        a2 = m[1] / ssumm2 + _poly(_C2, rsn)
        fac = math.sqrt((summ2 - 2 * m[0] ** 2 - 2 * m[1] ** 2)
                        / (1 - 2 * a1 ** 2 - 2 * a2 ** 2))
        a[1] = a2
        first = 2
    else:
        fac = math.sqrt((summ2 - 2 * m[0] ** 2) / (1 - 2 * a1 ** 2))
        first = 1
    a[0] = a1
    a[first:] = m[first:] / fac
    return a


def shapiro_wilk(column):
    """Shapiro-Wilk W statistic and p-value (Royston's AS R94 approximation).

    Parameters
    ----------
    column : array_like
        Sample of 3 to 5000 finite values.

    Returns
    -------
    W : float
    p : float
    """
    x = np.sort(np.asarray(column, dtype=float).ravel())
    n = x.size
    if n < 3:
        raise SampleTooSmall(f"Shapiro-Wilk needs n >= 3, got {n}")
    if n > 5000:
        raise SampleTooLarge(f"Shapiro-Wilk supports n <= 5000, got {n}")
    if not np.all(np.isfinite(x)):
        raise DegenerateSample("sample contains NaN or Inf")
    rng = x[-1] - x[0]
    if rng <= 1e-19 * max(1.0, abs(x[0])):
        raise DegenerateSample("all values are identical")

    half = _swilk_coefficients(n)
    nn2 = n // 2
    xs = (x - x.mean()) / rng
    num = float(np.dot(half, xs[::-1][:nn2] - xs[:nn2]))
    ssq = float(np.dot(xs, xs))
    w = min(num * num / ssq, 1.0)

    if n == 3:
        p = 1.909859317102744 * (math.asin(math.sqrt(w)) - 1.0471975511965979)
        return w, min(max(p, 0.0), 1.0)

    w1 = 1.0 - w
    if w1 <= 0.0:
        return w, 1.0
    y = math.log(w1)
    if n <= 11:
        gamma = _poly(_G, n)
        if y >= gamma:
            return w, 1e-99
        y = -math.log(gamma - y)
        mean = _poly(_C3, n)
        sd = math.exp(_poly(_C4, n))
    else:
        ln_n = math.log(n)
        mean = _poly(_C5, ln_n)
        sd = math.exp(_poly(_C6, ln_n))
    p = float(ndtr(-(y - mean) / sd))
    return w, p


@dataclass(frozen=True)
class NormalityRecord:
    column: str
    W: float
    p: float
    normal: bool

    def to_dict(self):
        return {"column": self.column, "W": self.W, "p": self.p, "normal": self.normal}


@dataclass(frozen=True)
class NormalityReport:
    records: tuple
    alpha: float

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)

    def non_normal(self):
        return [r.column for r in self.records if not r.normal]

    def to_json(self):
        return json.dumps([r.to_dict() for r in self.records], indent=2) + "\n"


def normality_report(table, alpha=0.05, columns: Sequence[str] | None = None):
    """Run :func:`shapiro_wilk` on each column; ``normal`` means ``p > alpha``."""
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    names: Iterable[str] = table.column_names if columns is None else columns
    records = []
    for name in names:
        w, p = shapiro_wilk(table.column(name))
        records.append(NormalityRecord(name, w, p, bool(p > alpha)))
    return NormalityReport(tuple(records), alpha)
