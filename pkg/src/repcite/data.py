"""CSV schemas, loading and validation of citation datasets.

Science files carry one row per (paper, citation source); ML files carry one
row per paper with its feature columns. Per-year counts live in columns
``c0 .. c{T-1}``; an empty cell marks a year that has not yet elapsed.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from repcite.model import FIELDS, ML, ML_FEATURE_NAMES, SCIENCE, PaperRecord

SOURCES = ("GS", "SC")
SCIENCE_COLUMNS = ("paper_id", "field", "reproduced", "pub_year", "source")
ML_COLUMNS = ("paper_id", *ML_FEATURE_NAMES, "pub_year")
VENUE_COLUMNS = tuple(c for c in ML_FEATURE_NAMES if c.startswith("venue_"))
_COUNT_COL = re.compile(r"^c(\d+)$")


class DatasetError(ValueError):
    """Raised with every row-level problem found in a file."""

    def __init__(self, path, problems: Sequence[str]):
        self.path = str(path)
        self.problems = list(problems)
        shown = "\n  ".join(self.problems[:20])
        more = f"\n  ... and {len(self.problems) - 20} more" if len(self.problems) > 20 else ""
        super().__init__(f"{path}: {len(self.problems)} problem(s)\n  {shown}{more}")


@dataclass
class Dataset:
    """Validated records plus the per-row source and original line number."""

    variant: str
    T: int
    records: list[PaperRecord]
    sources: list[str]
    lines: list[int]

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, source: str | None = None, fields: Sequence[str] | None = None) -> list[PaperRecord]:
        out = []
        for rec, src in zip(self.records, self.sources):
            if source is not None and src != source:
                continue
            if fields is not None and rec.group not in fields:
                continue
            out.append(rec)
        return out

    def available_sources(self) -> list[str]:
        return sorted(set(self.sources))

    def paired_counts(self, a: str = "GS", b: str = "SC") -> tuple[np.ndarray, np.ndarray, list[str]]:
        """Aligned papers x years arrays (NaN where unobserved) for papers
        present in both sources."""
        by = {src: {r.id: r for r, s in zip(self.records, self.sources) if s == src} for src in (a, b)}
        ids = sorted(set(by[a]) & set(by[b]))

        def grid(src):
            out = np.full((len(ids), self.T), np.nan)
            for i, pid in enumerate(ids):
                rec = by[src][pid]
                out[i, rec.observed] = rec.counts[rec.observed]
            return out

        return grid(a), grid(b), ids


def _count_columns(header: Sequence[str]) -> list[str]:
    idx = sorted(int(m.group(1)) for c in header if (m := _COUNT_COL.match(c)))
    if not idx or idx != list(range(len(idx))):
        raise ValueError("count columns must be c0..c{T-1} with no gaps")
    return [f"c{j}" for j in idx]


def _parse_int(text: str, what: str) -> int:
    try:
        value = float(text)
    except ValueError:
        raise ValueError(f"{what} {text!r} is not a number") from None
    if not math.isfinite(value) or value != int(value):
        raise ValueError(f"{what} {text!r} is not an integer")
    return int(value)


def _parse_counts(row: dict, cols: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
    raw = [(row.get(c) or "").strip() for c in cols]
    observed = np.array([v != "" for v in raw])
    if observed.size and np.any(observed[1:] & ~observed[:-1]):
        raise ValueError("non-prefix observation mask")
    counts = np.zeros(len(cols), dtype=np.int64)
    for j, v in enumerate(raw):
        if v:
            n = _parse_int(v, cols[j])
            if n < 0:
                raise ValueError(f"negative count in {cols[j]}")
            counts[j] = n
    return counts, observed


def _parse_flag(text: str, what: str) -> bool:
    v = _parse_int(text.strip(), what)
    if v not in (0, 1):
        raise ValueError(f"{what} must be 0 or 1, got {text!r}")
    return bool(v)


def _science_row(row: dict, cols) -> tuple[PaperRecord, str]:
    fld = row["field"].strip()
    if fld not in FIELDS:
        raise ValueError(f"unknown field label {fld!r} (expected one of {', '.join(FIELDS)})")
    src = row["source"].strip().upper()
    if src not in SOURCES:
        raise ValueError(f"unknown source {row['source']!r} (expected GS or SC)")
    counts, observed = _parse_counts(row, cols)
    rec = PaperRecord(
        row["paper_id"].strip(), fld, _parse_flag(row["reproduced"], "reproduced"),
        _parse_int(row["pub_year"], "pub_year"), counts, observed,
    )
    return rec, src


def _ml_row(row: dict, cols) -> tuple[PaperRecord, str]:
    venues = [c for c in VENUE_COLUMNS if (row.get(c) or "").strip() not in ("", "0", "0.0")]
    if len(venues) > 1:
        raise ValueError(f"more than one venue flag set: {', '.join(venues)}")
    x = []
    for name in ML_FEATURE_NAMES:
        text = (row.get(name) or "").strip()
        try:
            v = float(text)
        except ValueError:
            raise ValueError(f"feature {name} {text!r} is not a number") from None
        if not math.isfinite(v):
            raise ValueError(f"feature {name} is not finite")
        x.append(v)
    reproduced = _parse_flag(row["reproduced"], "reproduced")
    counts, observed = _parse_counts(row, cols)
    rec = PaperRecord(
        row["paper_id"].strip(), np.array(x), reproduced,
        _parse_int(row["pub_year"], "pub_year"), counts, observed,
    )
    return rec, "ML"


def load_dataset(path, variant: str) -> Dataset:
    """Read and validate a dataset CSV. All row problems are collected and
    reported together with their line numbers; any problem aborts the load."""
    path = Path(path)
    if variant not in (SCIENCE, ML):
        raise ValueError(f"unknown variant {variant!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        required = SCIENCE_COLUMNS if variant == SCIENCE else ML_COLUMNS
        missing = [c for c in required if c not in header]
        try:
            cols = _count_columns(header)
        except ValueError as exc:
            raise DatasetError(path, [f"header: {exc}"]) from None
        if missing:
            raise DatasetError(path, [f"header: missing column(s) {', '.join(missing)}"])
        parse = _science_row if variant == SCIENCE else _ml_row
        records, sources, lines, problems = [], [], [], []
        seen = {}
        for row in reader:
            line = reader.line_num
            try:
                rec, src = parse(row, cols)
            except (ValueError, KeyError, TypeError) as exc:
                problems.append(f"{exc} at line {line}")
                continue
            key = (rec.id, src)
            if key in seen:
                problems.append(f"duplicate paper {rec.id!r} for source {src} at line {line} (first at line {seen[key]})")
                continue
            seen[key] = line
            records.append(rec)
            sources.append(src)
            lines.append(line)
    if problems:
        raise DatasetError(path, problems)
    if not records:
        raise DatasetError(path, ["no data rows"])
    return Dataset(variant, len(cols), records, sources, lines)


def save_dataset(ds: Dataset, path) -> None:
    """Write ``ds`` in the schema :func:`load_dataset` reads."""
    cols = [f"c{j}" for j in range(ds.T)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if ds.variant == SCIENCE:
            w.writerow([*SCIENCE_COLUMNS, *cols])
        else:
            w.writerow([*ML_COLUMNS, *cols])
        for rec, src in zip(ds.records, ds.sources):
            cells = [str(int(c)) if o else "" for c, o in zip(rec.counts, rec.observed)]
            if ds.variant == SCIENCE:
                w.writerow([rec.id, rec.group, int(rec.reproduced), rec.pub_year, src, *cells])
            else:
                feats = [_fmt(v) for v in np.asarray(rec.group, dtype=float)]
                feats[0] = str(int(rec.reproduced))
                w.writerow([rec.id, *feats, rec.pub_year, *cells])


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def records_to_dataset(records: Iterable[PaperRecord], variant: str, T: int, source: str = "SC") -> Dataset:
    records = list(records)
    src = source if variant == SCIENCE else "ML"
    return Dataset(variant, T, records, [src] * len(records), list(range(2, len(records) + 2)))


@dataclass
class RelativeYears:
    counts: np.ndarray
    observed: np.ndarray
    dropped_before: int = 0
    dropped_after: int = 0
    notes: list[str] = field(default_factory=list)


def to_relative_years(year_counts: dict, pub_year: int, T: int, current_year: int) -> RelativeYears:
    """Map calendar-year counts to relative years t = year - pub_year.

    Years before publication and years at or beyond ``T`` are dropped and
    counted. Year t is observed iff ``pub_year + t <= current_year``.
    """
    counts = np.zeros(T, dtype=np.int64)
    before = after = 0
    for year, n in year_counts.items():
        t = int(year) - pub_year
        if t < 0:
            before += int(n)
        elif t >= T:
            after += int(n)
        else:
            counts[t] += int(n)
    observed = np.arange(T) <= current_year - pub_year
    counts[~observed] = 0
    out = RelativeYears(counts, observed, before, after)
    if before:
        out.notes.append(f"{before} citation(s) dated before publication dropped")
    if after:
        out.notes.append(f"{after} citation(s) beyond year T-1 dropped")
    return out
