"""Incidence CSV ingestion and small file helpers."""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
from pathlib import Path

from .errors import ConfigError, ParseError
from .renewal import IncidenceSeries

DATE_HEADER = ("date", "cases")
DAY_HEADER = ("t", "cases")


def _count(text: str, line: int) -> int:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"case count {text!r} is not a number", line) from None
    if value != value or value in (float("inf"), float("-inf")):
        raise ParseError(f"case count {text!r} is not finite", line)
    if value != int(value):
        raise ParseError(f"case count {text!r} is not an integer", line)
    if value < 0:
        raise ParseError(f"case count {text!r} is negative", line)
    return int(value)


def parse_incidence_csv(path) -> IncidenceSeries:
    """Read ``date,cases`` (consecutive ISO dates) or ``t,cases`` (consecutive days).

    Date files are indexed from day 1.  Errors name the offending line.
    """
    counts, _ = read_incidence_csv(path)
    return counts


def read_incidence_csv(path) -> tuple[IncidenceSeries, dt.date | None]:
    """Like :func:`parse_incidence_csv` but also returns the first date, if any."""
    p = Path(path)
    with open(p, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ParseError("file is empty", 1)
    header = tuple(c.strip().lower() for c in rows[0])
    if header not in (DATE_HEADER, DAY_HEADER):
        raise ParseError(f"header must be 'date,cases' or 't,cases', got {','.join(rows[0])!r}", 1)
    dated = header == DATE_HEADER
    counts: list[int] = []
    first_date = None
    start = None
    prev = None
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 2:
            raise ParseError(f"expected 2 fields, found {len(row)}", lineno)
        key, cases = row[0].strip(), row[1].strip()
        if dated:
            try:
                day = dt.date.fromisoformat(key)
            except ValueError:
                raise ParseError(f"{key!r} is not an ISO date", lineno) from None
            if prev is None:
                first_date, start = day, 1
            elif (day - prev).days != 1:
                raise ParseError(f"date {key} does not follow {prev.isoformat()} (gap or disorder)", lineno)
        else:
            try:
                day = int(key)
            except ValueError:
                raise ParseError(f"day index {key!r} is not an integer", lineno) from None
            if prev is None:
                start = day
            elif day != prev + 1:
                raise ParseError(f"day {day} does not follow day {prev} (gap or disorder)", lineno)
        prev = day
        counts.append(_count(cases, lineno))
    if not counts:
        raise ParseError("no data rows", 2)
    return IncidenceSeries(counts, start), first_date


def write_incidence_csv(series: IncidenceSeries, path, first_date: dt.date | None = None) -> None:
    """Inverse of :func:`read_incidence_csv`."""
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if first_date is None:
            w.writerow(DAY_HEADER)
            for day, c in zip(series.days, series.counts):
                w.writerow([int(day), int(c)])
        else:
            w.writerow(DATE_HEADER)
            for i, c in enumerate(series.counts):
                w.writerow([(first_date + dt.timedelta(days=i)).isoformat(), int(c)])


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(Path(path), "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def load_json(path) -> dict:
    try:
        with open(Path(path)) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return data


def dump_json(data, path) -> None:
    with open(Path(path), "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
