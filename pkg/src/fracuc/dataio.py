"""CSV ingestion, calendar handling, and output documents."""
from __future__ import annotations

import datetime as dt
import json
import re
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

__all__ = [
    "Dataset",
    "ValidationError",
    "ingest",
    "parse_period",
    "period_label",
    "make_quarterly_dates",
    "provenance",
]


class ValidationError(ValueError):
    """Input data fails the schema; message names the offending rows."""


@dataclass
class Dataset:
    """A validated regular time series plus its transform provenance."""

    dates: list[dt.date]
    values: np.ndarray
    freq: str  # "Q" or "M"
    column: str
    log: bool
    scale: float
    source: str

    @property
    def n(self) -> int:
        return len(self.values)

    def index_of(self, date: dt.date) -> int:
        """1-based observation index of a calendar date."""
        try:
            return self.dates.index(date) + 1
        except ValueError:
            raise ValidationError(f"date {date.isoformat()} not in the sample") from None


def _month_step(freq: str) -> int:
    return {"Q": 3, "M": 1}[freq]


def _add_months(d: dt.date, k: int) -> dt.date:
    m = d.month - 1 + k
    return dt.date(d.year + m // 12, m % 12 + 1, 1)


def _infer_freq(dates, path):
    steps = set()
    for a, b in zip(dates[:-1], dates[1:]):
        steps.add((b.year - a.year) * 12 + (b.month - a.month))
    if steps == {3}:
        return "Q"
    if steps == {1}:
        return "M"
    # report the first offending gap with its row number
    for i, (a, b) in enumerate(zip(dates[:-1], dates[1:])):
        step = (b.year - a.year) * 12 + (b.month - a.month)
        if step <= 0:
            raise ValidationError(
                f"{path}: dates not strictly increasing at row {i + 3} ({b})"
            )
    target = 3 if 3 in steps else min(steps)
    for i, (a, b) in enumerate(zip(dates[:-1], dates[1:])):
        step = (b.year - a.year) * 12 + (b.month - a.month)
        if step != target:
            missing = _add_months(a, target)
            raise ValidationError(
                f"{path}: gap after row {i + 2}: expected {missing} next, got {b}"
            )
    raise ValidationError(f"{path}: cannot infer a monthly or quarterly frequency")


def ingest(path, column: str, log: bool = False, scale: float = 1.0) -> Dataset:
    """Read a two-plus-column CSV (date column + named value column).

    Validates a complete regular calendar (quarterly or monthly), numeric
    values and no duplicates; every violation is reported with its CSV row
    number (header = row 1). Applies the optional natural log and scale, in
    that order.
    """
    df = pd.read_csv(path)
    if df.shape[1] < 2:
        raise ValidationError(f"{path}: need a date column and a value column")
    date_col = None
    for cand in df.columns:
        if str(cand).strip().lower() in ("date", "observation_date"):
            date_col = cand
            break
    if date_col is None:
        date_col = df.columns[0]
    if column not in df.columns:
        raise ValidationError(
            f"{path}: column {column!r} not found (have {list(df.columns)})"
        )

    dates = []
    for i, raw in enumerate(df[date_col]):
        try:
            dates.append(dt.date.fromisoformat(str(raw).strip()[:10]))
        except ValueError:
            raise ValidationError(
                f"{path}: unparseable date {raw!r} at row {i + 2}"
            ) from None

    seen = {}
    for i, d in enumerate(dates):
        if d in seen:
            raise ValidationError(
                f"{path}: duplicate date {d} at rows {seen[d] + 2} and {i + 2}"
            )
        seen[d] = i

    vals = pd.to_numeric(df[column], errors="coerce").to_numpy(dtype=float)
    bad = np.nonzero(~np.isfinite(vals))[0]
    if bad.size:
        raise ValidationError(
            f"{path}: non-numeric or missing values in {column!r} at rows "
            f"{[int(b) + 2 for b in bad[:10]]}"
        )

    freq = _infer_freq(dates, str(path))
    if log:
        if np.any(vals <= 0):
            row = int(np.nonzero(vals <= 0)[0][0]) + 2
            raise ValidationError(f"{path}: log transform needs positive values (row {row})")
        vals = np.log(vals)
    vals = vals * scale
    return Dataset(dates=dates, values=vals, freq=freq, column=column,
                   log=log, scale=scale, source=str(path))


_PERIOD_RE = re.compile(r"^(\d{4})Q([1-4])$", re.IGNORECASE)


def parse_period(label: str) -> dt.date:
    """'1973Q1' -> first day of that quarter; ISO dates pass through."""
    m = _PERIOD_RE.match(label.strip())
    if m:
        year, q = int(m.group(1)), int(m.group(2))
        return dt.date(year, 3 * (q - 1) + 1, 1)
    try:
        return dt.date.fromisoformat(label)
    except ValueError:
        raise ValidationError(f"cannot parse period {label!r} (use YYYYQn or ISO)") from None


def period_label(date: dt.date, freq: str) -> str:
    if freq == "Q":
        return f"{date.year}Q{(date.month - 1) // 3 + 1}"
    return date.isoformat()


def make_quarterly_dates(n: int, start: dt.date = dt.date(1947, 1, 1)) -> list[dt.date]:
    return [_add_months(start, 3 * i) for i in range(n)]


def provenance(seed=None, **extra) -> dict:
    """Reproducibility block embedded into every output document."""
    from . import __version__

    doc = {"software": "fracuc", "version": __version__, "seed": seed}
    doc.update(extra)
    return doc
